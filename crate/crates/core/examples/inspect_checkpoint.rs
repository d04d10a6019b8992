//! Trains a few steps, saves a checkpoint, reloads it and prints its
//! parameter blocks and config.
//!
//! cargo run --release --example inspect_checkpoint -- [path]

use std::path::PathBuf;

use dsst::checkpoint::Checkpoint;
use dsst::config::TrainConfig;
use dsst::synth::speech_like_clip;
use dsst::train::Trainer;

fn main() -> dsst::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("dsst_example.ckpt"), PathBuf::from);
    let clips: Vec<_> = (0..4).map(|i| speech_like_clip(format!("c{i}"), 0.5, i)).collect();
    let mut t = Trainer::new(TrainConfig::tiny())?;
    t.run(&clips, 5, None)?;
    t.checkpoint().save(&path)?;

    let ck = Checkpoint::load(&path)?;
    println!("{} at step {}", path.display(), ck.step);
    let mut total = 0;
    for (name, shape) in ck.summary() {
        total += shape.iter().product::<usize>();
        println!("  {name:36} {shape:?}");
    }
    println!("{total} parameters\n\n{}", ck.config.to_toml());
    Ok(())
}
