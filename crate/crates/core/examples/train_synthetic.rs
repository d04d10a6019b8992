//! Trains the tiny configuration on generated speech-like clips and prints
//! the smoothed loss curve.
//!
//! cargo run --release --example train_synthetic -- [steps] [lambda]

use dsst::config::TrainConfig;
use dsst::synth::speech_like_clip;
use dsst::train::{smooth, Trainer};

fn main() -> dsst::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().map_or(300, |s| s.parse().expect("steps"));
    let lambda: f64 = args.next().map_or(100.0, |s| s.parse().expect("lambda"));
    let clips: Vec<_> = (0..10).map(|i| speech_like_clip(format!("clip{i}"), 1.0, i)).collect();
    let cfg = TrainConfig {
        lambda,
        snr_range_db: [6.0, 6.0],
        ..TrainConfig::tiny()
    };
    let mut trainer = Trainer::new(cfg)?;
    let start = std::time::Instant::now();
    let records = trainer.run(&clips, steps, None)?;
    let totals: Vec<f64> = records.iter().map(|r| r.loss.total).collect();
    let smoothed = smooth(&totals, 50);
    for (r, s) in records.iter().zip(&smoothed).step_by((steps as usize / 15).max(1)) {
        println!(
            "step {:5}  loss {:9.4}  smoothed {:9.4}  bits_y {:7.1}  bits_z {:6.1}  mse {:.2e}  mfcc {:.4}  K_y {}",
            r.step, r.loss.total, s, r.loss.rate_y_raw, r.loss.rate_z_raw, r.loss.dist_time, r.loss.dist_mfcc, r.k_y
        );
    }
    println!("{steps} steps in {:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}
