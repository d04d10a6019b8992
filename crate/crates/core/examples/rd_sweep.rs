//! λ sweep on generated clips: trains one tiny model per λ, evaluates each
//! at 6 dB AWGN and writes `rd_curve.csv` / `rd_curve.svg`.
//!
//! cargo run --release --example rd_sweep -- [steps] [out_dir] [lambda...]

use std::path::PathBuf;

use dsst::config::TrainConfig;
use dsst::eval::EvalOptions;
use dsst::sweep::{rd_sweep, SweepOptions};
use dsst::synth::speech_like_clip;

fn main() -> dsst::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().map_or(1500, |s| s.parse().expect("steps"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "rd_sweep_out".into()));
    let mut lambdas: Vec<f64> = args.map(|s| s.parse().expect("lambda")).collect();
    if lambdas.is_empty() {
        lambdas = vec![100.0, 1000.0, 10000.0];
    }
    let train: Vec<_> = (0..10).map(|i| speech_like_clip(format!("train{i}"), 1.0, i)).collect();
    let val: Vec<_> = (0..3).map(|i| speech_like_clip(format!("val{i}"), 1.0, 100 + i)).collect();
    let template = TrainConfig {
        steps,
        snr_range_db: [6.0, 6.0],
        ..TrainConfig::tiny()
    };
    let opts = SweepOptions {
        snr_db: 6.0,
        early_steps: 50,
        eval: EvalOptions {
            batches: 10,
            batch: 16,
            ..EvalOptions::new(6.0, true)
        },
    };
    let table = rd_sweep(&template, &lambdas, &train, &val, &opts, Some(&out))?;
    print!("{}", table.to_csv());
    match &table.violations {
        Some(v) if v.is_empty() => println!("frontier is monotone"),
        Some(v) => println!("frontier violations between rows {v:?}"),
        None => println!("fewer than two converged points, no frontier check"),
    }
    println!("wrote {}", out.display());
    Ok(())
}
