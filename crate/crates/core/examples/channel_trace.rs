//! Builds a slowly rotating CSI trace, saves it in both formats, replays
//! it against random unit-power frames and reports per-frame error after
//! zero-forcing equalisation. Deep fades show up as erasures.
//!
//! cargo run --release --example channel_trace -- [snr_db]

use dsst::channel::{equalize, transmit, ChannelState, CsiTrace};
use dsst::jscc::ChannelFrame;
use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> dsst::Result<()> {
    let snr: f64 = std::env::args().nth(1).map_or(10.0, |s| s.parse().expect("snr"));
    let gains: Vec<Complex64> = (0..12)
        .map(|i| Complex64::from_polar(0.2 + (0.15 * i as f64) % 1.4, 0.5 * i as f64))
        .collect();
    let mut trace = CsiTrace::new(gains)?;
    trace.scenario = "synthetic".into();
    let dir = std::env::temp_dir();
    trace.save_csv(&dir.join("dsst_trace.csv"))?;
    trace.save_binary(&dir.join("dsst_trace.csi"))?;
    let trace = CsiTrace::load(&dir.join("dsst_trace.csi"))?;

    let (frames, width) = (8, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let s = Array2::from_shape_fn((frames, width), |_| {
        Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * scale * 3f64.sqrt()
    });
    let f = ChannelFrame::new(s, vec![width; frames])?;
    let state = ChannelState::from_trace(snr, &trace, frames, 2);
    let (e, stats) = equalize(&transmit(&f, &state, 1)?, &state)?;
    println!("frame  |h|     mse after ZF");
    for b in 0..frames {
        let mse: f64 = (0..width).map(|j| (e.symbols[[b, j]] - f.symbols[[b, j]]).norm_sqr()).sum::<f64>() / width as f64;
        println!("{b:5}  {:.3}  {mse:.4}", state.h[b].norm());
    }
    println!("erased frames: {}", stats.erased_frames);
    Ok(())
}
