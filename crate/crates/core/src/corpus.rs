//! Speech corpus ingestion, framing into training batches, and WAV export.
//!
//! Every clip is converted to 16 kHz mono and peak-normalised when a corpus
//! is loaded. Batches are drawn as random contiguous frames; clips shorter
//! than a frame are zero-padded and the frame is flagged so it can be left
//! out of distortion averages.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;
use ndarray::{s, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rubato::{
    Resampler, SincFixedIn, SincInterpolationParameters, SincInterpolationType, WindowFunction,
};

use crate::error::{io_err, Error, Result};

/// Operating sample rate of the whole system.
pub const SAMPLE_RATE: u32 = 16_000;

/// Temporal length of a frame must be divisible by this (two stride-2 stages
/// in the transform and two more in the hyperprior).
pub const FRAME_ALIGNMENT: usize = 16;

/// A mono clip at [`SAMPLE_RATE`].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub name: String,
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(name: impl Into<String>, samples: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Scales so the largest magnitude is exactly 1 (silent clips untouched).
    pub fn peak_normalize(&mut self) {
        let peak = self.samples.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        if peak > 0.0 {
            for x in &mut self.samples {
                *x /= peak;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Train/validation/test fractions; must sum to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitFractions {
    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Config(format!("split fractions out of range: {self:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must sum to 1: {self:?}")));
        }
        Ok(())
    }

    /// Clip counts per split for `n` clips. Rounds train and validation,
    /// test takes the remainder.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let train = ((self.train * n as f64).round() as usize).min(n);
        let val = ((self.val * n as f64).round() as usize).min(n - train);
        (train, val, n - train - val)
    }
}

/// A loaded, partitioned corpus.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: Vec<AudioClip>,
    pub val: Vec<AudioClip>,
    pub test: Vec<AudioClip>,
    /// `(file name, split)` for every clip that was loaded.
    pub manifest: Vec<(String, Split)>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[AudioClip] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Writes one `file<TAB>split` line per clip.
    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (name, split) in &self.manifest {
            out.push_str(&format!("{name}\t{split}\n"));
        }
        fs::write(path, out).map_err(io_err(path))
    }
}

/// Loads every `.wav` file in `dir`, resamples to 16 kHz mono,
/// peak-normalises, and partitions deterministically under `seed`.
///
/// Unreadable files are skipped with a warning; a directory without any
/// usable clip is an error.
pub fn load_corpus(dir: &Path, fractions: SplitFractions, seed: u64) -> Result<Corpus> {
    fractions.validate()?;
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
        })
        .collect();
    paths.sort();

    let mut clips = Vec::with_capacity(paths.len());
    for path in &paths {
        match read_audio(path) {
            Ok(mut clip) if !clip.is_empty() => {
                clip.peak_normalize();
                clips.push(clip);
            }
            Ok(_) => warn!("skipping empty file {}", path.display()),
            Err(e) => warn!("skipping unreadable file {}: {e}", path.display()),
        }
    }
    if clips.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "no readable WAV files in {}",
            dir.display()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    clips.shuffle(&mut rng);
    let (n_train, n_val, _) = fractions.counts(clips.len());
    let mut rest = clips;
    let tail = rest.split_off(n_train);
    let train = rest;
    let mut val = tail;
    let test = val.split_off(n_val);

    let mut manifest: Vec<(String, Split)> = train
        .iter()
        .map(|c| (c.name.clone(), Split::Train))
        .chain(val.iter().map(|c| (c.name.clone(), Split::Val)))
        .chain(test.iter().map(|c| (c.name.clone(), Split::Test)))
        .collect();
    manifest.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(Corpus {
        train,
        val,
        test,
        manifest,
    })
}

/// Reads a WAV file (8/16/24/32-bit PCM or float), mixes to mono and
/// resamples to 16 kHz. No amplitude normalisation is applied.
pub fn read_audio(path: &Path) -> Result<AudioClip> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        hound::SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err)?
        }
    };
    let mono: Vec<f64> = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    if let Some(bad) = mono.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!(
            "{} sample {bad}",
            path.display()
        )));
    }
    let samples = resample(&mono, spec.sample_rate, SAMPLE_RATE)?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(AudioClip::new(name, samples))
}

/// Band-limited sinc resampling. The output has `round(len * to / from)`
/// samples and is aligned with the input (resampler delay removed).
pub fn resample(input: &[f64], from: u32, to: u32) -> Result<Vec<f64>> {
    if from == to || input.is_empty() {
        return Ok(input.to_vec());
    }
    let ratio = to as f64 / from as f64;
    let target = (input.len() as f64 * ratio).round() as usize;
    let params = SincInterpolationParameters {
        sinc_len: 128,
        f_cutoff: 0.95,
        interpolation: SincInterpolationType::Linear,
        oversampling_factor: 128,
        window: WindowFunction::BlackmanHarris2,
    };
    let mut resampler = SincFixedIn::<f64>::new(ratio, 1.0, params, input.len(), 1)
        .map_err(|e| Error::Config(format!("resampler: {e}")))?;
    let delay = resampler.output_delay();
    let mut out = resampler
        .process(&[input], None)
        .map_err(|e| Error::Config(format!("resampler: {e}")))?
        .remove(0);
    while out.len() < target + delay {
        let tail = resampler
            .process_partial::<&[f64]>(None, None)
            .map_err(|e| Error::Config(format!("resampler: {e}")))?
            .remove(0);
        if tail.is_empty() {
            break;
        }
        out.extend(tail);
    }
    let mut aligned: Vec<f64> = out.into_iter().skip(delay).take(target).collect();
    aligned.resize(target, 0.0);
    Ok(aligned)
}

/// A batch of frames `x` with shape `B x 1 x L`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeechBatch {
    pub frames: Array3<f64>,
    /// Frames that were zero-padded from a clip shorter than `L`.
    pub padded: Vec<bool>,
    /// `clip@offset` for every frame.
    pub source: Vec<String>,
}

impl SpeechBatch {
    pub fn from_frames(frames: Array3<f64>) -> Self {
        let b = frames.shape()[0];
        Self {
            frames,
            padded: vec![false; b],
            source: (0..b).map(|i| format!("frame{i}")).collect(),
        }
    }

    pub fn batch_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn frame_length(&self) -> usize {
        self.frames.shape()[2]
    }

    /// Frames concatenated in batch order.
    pub fn to_samples(&self) -> Vec<f64> {
        self.frames.iter().copied().collect()
    }
}

/// Draws `batch` frames of `frame_length` samples at random offsets.
///
/// A pure function of `(clips, batch, frame_length, seed)`.
pub fn frame_batch(
    clips: &[AudioClip],
    batch: usize,
    frame_length: usize,
    seed: u64,
) -> Result<SpeechBatch> {
    if frame_length == 0 || !frame_length.is_multiple_of(FRAME_ALIGNMENT) {
        return Err(Error::Config(format!(
            "frame length {frame_length} must be a positive multiple of {FRAME_ALIGNMENT}"
        )));
    }
    if batch == 0 {
        return Err(Error::Config("batch must hold at least one frame".into()));
    }
    if clips.is_empty() {
        return Err(Error::EmptyCorpus("no clips to frame".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames = Array3::<f64>::zeros((batch, 1, frame_length));
    let mut padded = Vec::with_capacity(batch);
    let mut source = Vec::with_capacity(batch);
    for b in 0..batch {
        let clip = &clips[rng.gen_range(0..clips.len())];
        let mut row = frames.slice_mut(s![b, 0, ..]);
        if clip.len() >= frame_length {
            let offset = rng.gen_range(0..=clip.len() - frame_length);
            for (dst, &src) in row.iter_mut().zip(&clip.samples[offset..offset + frame_length]) {
                *dst = src;
            }
            padded.push(false);
            source.push(format!("{}@{offset}", clip.name));
        } else {
            for (dst, &src) in row.iter_mut().zip(&clip.samples) {
                *dst = src;
            }
            padded.push(true);
            source.push(format!("{}@0+pad", clip.name));
        }
    }
    Ok(SpeechBatch {
        frames,
        padded,
        source,
    })
}

/// Cuts a clip into consecutive frames, zero-padding the last one.
pub fn frame_clip(clip: &AudioClip, frame_length: usize) -> Result<SpeechBatch> {
    if frame_length == 0 || !frame_length.is_multiple_of(FRAME_ALIGNMENT) {
        return Err(Error::Config(format!(
            "frame length {frame_length} must be a positive multiple of {FRAME_ALIGNMENT}"
        )));
    }
    if clip.is_empty() {
        return Err(Error::EmptyCorpus(format!("clip {} has no samples", clip.name)));
    }
    let count = clip.len().div_ceil(frame_length);
    let mut frames = Array3::<f64>::zeros((count, 1, frame_length));
    for (i, &x) in clip.samples.iter().enumerate() {
        frames[[i / frame_length, 0, i % frame_length]] = x;
    }
    Ok(SpeechBatch {
        frames,
        padded: (0..count).map(|b| (b + 1) * frame_length > clip.len()).collect(),
        source: (0..count).map(|b| format!("{}@{}", clip.name, b * frame_length)).collect(),
    })
}

/// Writes 16-bit PCM mono WAV at 16 kHz. Samples are clipped to `[-1, 1]`
/// and quantised with a step of `2^-15`.
pub fn write_audio(samples: &[f64], path: &Path) -> Result<()> {
    if let Some(bad) = samples.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("audio sample {bad}")));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &x in samples {
        writer.write_sample(quantize_pcm16(x)).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

pub(crate) fn quantize_pcm16(x: f64) -> i16 {
    let v = (x.clamp(-1.0, 1.0) * 32768.0).round();
    v.clamp(-32768.0, 32767.0) as i16
}

/// Writes a plain-text table of `(name, value)` rows; used for manifests and
/// small reports.
pub(crate) fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    for l in lines {
        writeln!(f, "{l}").map_err(io_err(path))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn consecutive_frames_keep_the_samples() {
        let clip = AudioClip::new("c", (0..40).map(|i| i as f64).collect());
        let b = frame_clip(&clip, 16).unwrap();
        assert_eq!(b.frames.dim(), (3, 1, 16));
        assert_eq!(b.padded, vec![false, false, true]);
        assert_eq!(&b.to_samples()[..40], &clip.samples[..]);
        assert!(b.to_samples()[40..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn split_counts_for_ten_clips() {
        assert_eq!(SplitFractions::default().counts(10), (8, 1, 1));
    }

    #[test]
    fn fractions_must_sum_to_one() {
        let bad = SplitFractions {
            train: 0.5,
            val: 0.1,
            test: 0.1,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn frame_length_must_align() {
        let clips = vec![AudioClip::new("a", vec![0.0; 1000])];
        assert!(matches!(
            frame_batch(&clips, 4, 500, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn short_clip_is_padded_and_flagged() {
        let clips = vec![AudioClip::new("short", vec![0.5; 300])];
        let batch = frame_batch(&clips, 2, 512, 9).unwrap();
        assert_eq!(batch.frames.shape(), &[2, 1, 512]);
        assert!(batch.padded.iter().all(|&p| p));
        let row = batch.frames.slice(s![0, 0, ..]);
        assert!(row.iter().take(300).all(|&x| x == 0.5));
        assert_eq!(row.iter().skip(300).filter(|&&x| x == 0.0).count(), 212);
    }

    #[test]
    fn frames_are_contiguous_slices() {
        let samples: Vec<f64> = (0..5000).map(|i| i as f64).collect();
        let clips = vec![AudioClip::new("ramp", samples)];
        let batch = frame_batch(&clips, 8, 64, 3).unwrap();
        for b in 0..8usize {
            let row = batch.frames.slice(s![b, 0, ..]);
            let start = row.iter().next().copied().unwrap();
            assert!(row.iter().enumerate().all(|(i, &x)| x == start + i as f64));
        }
    }

    #[test]
    fn pcm_quantisation_clips() {
        assert_eq!(quantize_pcm16(1.5), 32767);
        assert_eq!(quantize_pcm16(-3.0), -32768);
        assert_eq!(quantize_pcm16(0.0), 0);
    }
}
