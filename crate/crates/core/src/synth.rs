//! Synthetic speech-like signals for tests, examples and smoke training.
//!
//! Clips alternate voiced segments (a gliding pitch with harmonics shaped
//! by a few formant bumps), noisy fricative bursts and pauses. They are not
//! speech, but they share its rough statistics: strong low-frequency
//! harmonic structure, wide-band noise, and silent gaps.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{write_audio, AudioClip, SAMPLE_RATE};
use crate::error::{io_err, Result};

const VOWEL_FORMANTS: [[f64; 3]; 5] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [300.0, 870.0, 2240.0],
];

fn formant_gain(freq: f64, formants: &[f64; 3]) -> f64 {
    formants
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let bw = 90.0 + 60.0 * i as f64;
            (1.0 / (1.0 + i as f64)) * (-(freq - f).powi(2) / (2.0 * bw * bw)).exp()
        })
        .sum::<f64>()
        + 0.02
}

/// Generates `seconds` of speech-like audio at 16 kHz, peak-normalised.
pub fn speech_like(seconds: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = (seconds * SAMPLE_RATE as f64) as usize;
    let sr = SAMPLE_RATE as f64;
    let mut out = Vec::with_capacity(total);
    while out.len() < total {
        let seg_len = ((rng.gen_range(0.08..0.25)) * sr) as usize;
        let kind: f64 = rng.gen();
        let start = out.len();
        if kind < 0.6 {
            let formants = VOWEL_FORMANTS[rng.gen_range(0..VOWEL_FORMANTS.len())];
            let f0_start = rng.gen_range(95.0..220.0);
            let f0_end = f0_start * rng.gen_range(0.8..1.25);
            let mut phase = 0.0f64;
            for n in 0..seg_len {
                let frac = n as f64 / seg_len as f64;
                let f0 = f0_start + (f0_end - f0_start) * frac;
                phase += 2.0 * PI * f0 / sr;
                let mut v = 0.0;
                let mut k = 1.0;
                while k * f0 < 4000.0 {
                    v += formant_gain(k * f0, &formants) * (k * phase).sin();
                    k += 1.0;
                }
                let env = (PI * frac).sin().powf(0.6);
                out.push(env * v);
            }
        } else if kind < 0.8 {
            let mut prev = 0.0;
            let level = rng.gen_range(0.05..0.25);
            for n in 0..seg_len {
                let w: f64 = StandardNormal.sample(&mut rng);
                let env = (PI * n as f64 / seg_len as f64).sin();
                out.push(level * env * (w - 0.85 * prev));
                prev = w;
            }
        } else {
            for _ in 0..seg_len / 2 {
                let w: f64 = StandardNormal.sample(&mut rng);
                out.push(1e-3 * w);
            }
        }
        debug_assert!(out.len() > start);
    }
    out.truncate(total);
    let peak = out.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|x| *x /= peak);
    }
    out
}

pub fn speech_like_clip(name: impl Into<String>, seconds: f64, seed: u64) -> AudioClip {
    AudioClip::new(name, speech_like(seconds, seed))
}

/// Writes `count` synthetic clips of `seconds` each into `dir` as 16-bit
/// WAV files and returns their paths.
pub fn write_synthetic_corpus(
    dir: &Path,
    count: usize,
    seconds: f64,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    (0..count)
        .map(|i| {
            let path = dir.join(format!("synth_{i:03}.wav"));
            write_audio(&speech_like(seconds, seed.wrapping_add(i as u64 * 7919)), &path)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let a = speech_like(0.5, 4);
        let b = speech_like(0.5, 4);
        assert_eq!(a, b);
        assert_eq!(a.len(), 8000);
        assert!(a.iter().all(|x| x.abs() <= 1.0));
        assert!(a.iter().any(|x| x.abs() > 0.5));
    }
}
