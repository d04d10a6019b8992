//! Time-domain MSE and MFCC NMSE of a clip against noisy and scaled
//! copies of itself.
//!
//! cargo run --release --example mfcc_distortion

use dsst::corpus::frame_clip;
use dsst::mfcc::{Mfcc, MfccConfig};
use dsst::objective::distortion;
use dsst::synth::speech_like_clip;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> dsst::Result<()> {
    let batch = frame_clip(&speech_like_clip("ref", 2.0, 5), 512)?;
    let (b, _, l) = batch.frames.dim();
    let x = batch.frames.to_shape((b, l)).unwrap().to_owned();
    let m = Mfcc::new(&MfccConfig::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    println!("variant            mse         mfcc_nmse");
    for sigma in [0.001, 0.01, 0.05, 0.2] {
        let noisy = &x + &Array2::from_shape_simple_fn((b, l), || sigma * rng.gen_range(-1.7..1.7));
        let (dt, dm) = distortion(&x, &noisy, &m)?;
        println!("noise {sigma:<10}  {dt:.4e}  {dm:.4}");
    }
    for g in [0.5, 0.9] {
        let (dt, dm) = distortion(&x, &x.mapv(|v| g * v), &m)?;
        println!("gain {g:<11}  {dt:.4e}  {dm:.4}");
    }
    Ok(())
}
