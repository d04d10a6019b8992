//! One λ-conditioned model trained over a λ range, then evaluated at
//! several operating points, next to the frontier a per-λ sweep would give.
//!
//! cargo run --release --example lambda_conditioning -- [steps]

use dsst::config::TrainConfig;
use dsst::eval::EvalOptions;
use dsst::sweep::{rd_sweep, SweepOptions};
use dsst::synth::speech_like_clip;

fn main() -> dsst::Result<()> {
    let steps: u64 = std::env::args().nth(1).map_or(3000, |s| s.parse().expect("steps"));
    let train: Vec<_> = (0..10).map(|i| speech_like_clip(format!("train{i}"), 1.0, i)).collect();
    let val: Vec<_> = (0..3).map(|i| speech_like_clip(format!("val{i}"), 1.0, 100 + i)).collect();
    let mut template = TrainConfig {
        steps,
        snr_range_db: [6.0, 6.0],
        lambda_range: Some([100.0, 10000.0]),
        ..TrainConfig::tiny()
    };
    template.model.lambda_conditioning = true;
    let opts = SweepOptions {
        snr_db: 6.0,
        early_steps: 50,
        eval: EvalOptions {
            batches: 10,
            ..EvalOptions::new(6.0, true)
        },
    };
    let table = rd_sweep(&template, &[100.0, 1000.0, 10000.0], &train, &val, &opts, None)?;
    print!("{}", table.to_csv());
    Ok(())
}
