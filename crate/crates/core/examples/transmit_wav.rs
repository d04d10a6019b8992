//! Sends a WAV file through a trained model over a block-fading link and
//! writes the reconstruction. Without a checkpoint a tiny model is trained
//! first on generated speech.
//!
//! cargo run --release --example transmit_wav -- input.wav output.wav [model.ckpt]

use std::path::PathBuf;

use dsst::channel::ChannelState;
use dsst::checkpoint::Checkpoint;
use dsst::config::TrainConfig;
use dsst::corpus::{frame_clip, read_audio, write_audio};
use dsst::eval::bandwidth_hz;
use dsst::model::InferOptions;
use dsst::synth::speech_like_clip;
use dsst::train::Trainer;

fn main() -> dsst::Result<()> {
    let mut args = std::env::args().skip(1).map(PathBuf::from);
    let input = args.next().unwrap_or_else(|| std::env::temp_dir().join("dsst_in.wav"));
    let output = args.next().unwrap_or_else(|| std::env::temp_dir().join("dsst_out.wav"));
    if !input.exists() {
        write_audio(&speech_like_clip("demo", 2.0, 42).samples, &input)?;
    }
    let trainer = match args.next() {
        Some(ck) => Trainer::from_checkpoint(Checkpoint::load(&ck)?)?,
        None => {
            let clips: Vec<_> = (0..10).map(|i| speech_like_clip(format!("c{i}"), 1.0, i)).collect();
            let mut t = Trainer::new(TrainConfig { steps: 600, ..TrainConfig::tiny() })?;
            t.run(&clips, 600, None)?;
            t
        }
    };

    let mut clip = read_audio(&input)?;
    clip.peak_normalize();
    let l = trainer.cfg.model.frame_length;
    let batch = frame_clip(&clip, l)?;
    let frames = batch.batch_frames();
    let inf = trainer.model.infer(
        &trainer.params,
        &batch,
        &InferOptions {
            channel: ChannelState::block_fading(8.0, frames, 4, 0)?,
            snr_token: None,
            lambda: Some(trainer.cfg.lambda),
            eta_y: trainer.cfg.eta_y,
            seed: 0,
            alloc: None,
        },
    )?;
    let mut samples: Vec<f64> = inf.x_hat.iter().copied().collect();
    samples.truncate(clip.len());
    write_audio(&samples, &output)?;
    let r = inf.bandwidth;
    println!(
        "{} -> {}: {frames} frames, K_total {} ({} + {}), {:.1} Hz, {} erased frames",
        input.display(),
        output.display(),
        r.k_total,
        r.k_y,
        r.k_z,
        bandwidth_hz(r.k_total, frames, l),
        inf.equalize.erased_frames
    );
    Ok(())
}
