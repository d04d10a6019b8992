//! Writes a directory of generated speech-like WAV clips, loads it back
//! through the corpus loader and prints the split and a few frame batches.
//!
//! cargo run --release --example synthetic_corpus -- [dir] [clips] [seconds]

use std::path::PathBuf;

use dsst::corpus::{frame_batch, load_corpus, SplitFractions};
use dsst::synth::write_synthetic_corpus;

fn main() -> dsst::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "synthetic_corpus".into()));
    let clips: usize = args.next().map_or(12, |s| s.parse().expect("clip count"));
    let seconds: f64 = args.next().map_or(2.0, |s| s.parse().expect("seconds"));
    let written = write_synthetic_corpus(&dir, clips, seconds, 7)?;
    println!("wrote {} clips to {}", written.len(), dir.display());

    let corpus = load_corpus(&dir, SplitFractions::default(), 0)?;
    println!(
        "split: {} train / {} val / {} test",
        corpus.train.len(),
        corpus.val.len(),
        corpus.test.len()
    );
    let batch = frame_batch(&corpus.train, 4, 512, 1)?;
    for (src, padded) in batch.source.iter().zip(&batch.padded) {
        println!("frame from {src}{}", if *padded { " (padded)" } else { "" });
    }
    Ok(())
}
