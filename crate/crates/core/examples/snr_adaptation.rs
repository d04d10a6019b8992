//! One SNR-adaptive model against three single-SNR models with the same
//! step budget, evaluated at 0, 6 and 12 dB AWGN.
//!
//! cargo run --release --example snr_adaptation -- [steps]

use dsst::config::TrainConfig;
use dsst::eval::{evaluate, EvalOptions};
use dsst::synth::speech_like_clip;
use dsst::train::Trainer;

fn main() -> dsst::Result<()> {
    let steps: u64 = std::env::args().nth(1).map_or(2000, |s| s.parse().expect("steps"));
    let train: Vec<_> = (0..10).map(|i| speech_like_clip(format!("train{i}"), 1.0, i)).collect();
    let val: Vec<_> = (0..3).map(|i| speech_like_clip(format!("val{i}"), 1.0, 100 + i)).collect();
    let base = TrainConfig {
        steps,
        lambda: 3000.0,
        ..TrainConfig::tiny()
    };
    let snrs = [0.0, 6.0, 12.0];
    let eval_at = |t: &Trainer, cfg: &TrainConfig, snr: f64| {
        let opts = EvalOptions {
            batches: 10,
            ..EvalOptions::new(snr, true)
        };
        evaluate(&t.model, &t.params, cfg, &val, &opts).map(|s| s.aggregate)
    };

    let adaptive_cfg = TrainConfig {
        snr_range_db: [0.0, 12.0],
        ..base.clone()
    };
    let mut adaptive = Trainer::new(adaptive_cfg.clone())?;
    adaptive.run(&train, steps, None)?;
    println!("snr_db  adaptive_mfcc  matched_mfcc  adaptive_Hz  matched_Hz");
    for snr in snrs {
        let a = eval_at(&adaptive, &adaptive_cfg, snr)?;
        let cfg = TrainConfig {
            snr_range_db: [snr, snr],
            ..base.clone()
        };
        let mut matched = Trainer::new(cfg.clone())?;
        matched.run(&train, steps, None)?;
        let m = eval_at(&matched, &cfg, snr)?;
        println!(
            "{snr:6.1}  {:13.4}  {:12.4}  {:11.1}  {:10.1}",
            a.dist_mfcc, m.dist_mfcc, a.bandwidth_hz, m.bandwidth_hz
        );
    }
    Ok(())
}
