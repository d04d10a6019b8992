//! Evaluation over a clip set: bandwidth accounting and distortion per
//! batch, plus an aggregate record.

use std::path::{Path, PathBuf};
use std::process::Command;

use autograd::{ParamStore, Tape};
use log::warn;
use serde::Serialize;

use crate::channel::{ChannelKind, ChannelState, CsiTrace};
use crate::config::TrainConfig;
use crate::corpus::{frame_batch, write_audio, AudioClip, SpeechBatch, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::model::{InferOptions, Inference, Model};
use crate::objective::distortion_var;
use crate::rate::control_bits_per_frame;
use crate::tensor::to_tensor;

/// Names an external PESQ binary, called as `<bin> <reference.wav> <degraded.wav>`.
/// The last number it prints is taken as the score.
pub const PESQ_ENV: &str = "DSST_PESQ";

/// SNRs further than this outside the training range draw a warning.
pub const SNR_MARGIN_DB: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    /// Batch index, or `None` for the aggregate.
    pub batch: Option<usize>,
    pub frames: usize,
    pub frame_length: usize,
    pub snr_db: f64,
    pub channel: ChannelKind,
    pub side_info: bool,
    pub k_y: usize,
    pub k_z: usize,
    pub k_total: usize,
    /// Bits that signal the per-frame budgets; reported, not in `k_total`.
    pub control_bits: usize,
    pub bandwidth_hz: f64,
    pub dist_time: f64,
    pub dist_mfcc: f64,
    pub pesq: Option<f64>,
    pub erased_frames: usize,
}

pub const EVAL_CSV_HEADER: &str = "batch,frames,snr_db,channel,side_info,k_y,k_z,k_total,control_bits,bandwidth_hz,dist_time,dist_mfcc,pesq,erased_frames";

impl EvalRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.batch.map_or("all".to_string(), |b| b.to_string()),
            self.frames,
            self.snr_db,
            self.channel,
            self.side_info,
            self.k_y,
            self.k_z,
            self.k_total,
            self.control_bits,
            self.bandwidth_hz,
            self.dist_time,
            self.dist_mfcc,
            self.pesq.map_or(String::new(), |p| p.to_string()),
            self.erased_frames
        )
    }
}

/// Symbols per second of source audio: `K * 16000 / (B * L)`.
pub fn bandwidth_hz(k_total: usize, frames: usize, frame_length: usize) -> f64 {
    k_total as f64 * SAMPLE_RATE as f64 / (frames * frame_length) as f64
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub snr_db: f64,
    pub channel: ChannelKind,
    pub coherence: usize,
    /// Required for `ChannelKind::Trace`.
    pub trace: Option<CsiTrace>,
    /// Must match how the model was built.
    pub side_info: bool,
    pub batches: usize,
    pub batch: usize,
    pub seed: u64,
    /// Defaults to the training `eta_y`.
    pub eta_y: Option<f64>,
    /// SNR token; defaults to `snr_db`, which must then be finite.
    pub snr_token: Option<f64>,
    /// Operating λ of a lambda-conditioned model; defaults to the
    /// training `lambda`.
    pub lambda: Option<f64>,
    /// Writes `ref_<b>.wav` and `rec_<b>.wav` per batch.
    pub export_dir: Option<PathBuf>,
}

impl EvalOptions {
    pub fn new(snr_db: f64, side_info: bool) -> Self {
        Self {
            snr_db,
            channel: ChannelKind::Awgn,
            coherence: 1,
            trace: None,
            side_info,
            batches: 10,
            batch: 16,
            seed: 0,
            eta_y: None,
            snr_token: None,
            lambda: None,
            export_dir: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub records: Vec<EvalRecord>,
    pub aggregate: EvalRecord,
}

fn channel_state(opts: &EvalOptions, frames: usize, batch_index: usize) -> Result<ChannelState> {
    let seed = opts.seed.wrapping_mul(1_000_003).wrapping_add(batch_index as u64);
    match opts.channel {
        ChannelKind::Awgn => Ok(ChannelState::awgn(opts.snr_db, frames)),
        ChannelKind::BlockFading => ChannelState::block_fading(opts.snr_db, frames, opts.coherence, seed),
        ChannelKind::Trace => {
            let trace = opts
                .trace
                .as_ref()
                .ok_or_else(|| Error::Config("trace channel needs a CSI trace".into()))?;
            Ok(ChannelState::from_trace(opts.snr_db, trace, frames, batch_index * frames))
        }
    }
}

/// Distortion over the frames that are not padding.
pub fn batch_distortion(model: &Model, x: &SpeechBatch, x_hat: &ndarray::Array3<f64>) -> Result<(f64, f64)> {
    let (b, _, l) = x_hat.dim();
    let mut weights: Vec<f64> = x.padded.iter().map(|&p| if p { 0.0 } else { 1.0 }).collect();
    if weights.iter().all(|&w| w == 0.0) {
        weights = vec![1.0; b];
    }
    let tape = Tape::new();
    let a = tape.constant(to_tensor(&x.frames)).reshape(&[b, l]);
    let c = tape.constant(to_tensor(x_hat)).reshape(&[b, l]);
    let (t, m) = distortion_var(a, c, &weights, &model.mfcc)?;
    Ok((t.item(), m.item()))
}

fn run_pesq(dir: &Path, reference: &[f64], degraded: &[f64]) -> Option<f64> {
    let bin = std::env::var_os(PESQ_ENV)?;
    let r = dir.join("pesq_ref.wav");
    let d = dir.join("pesq_deg.wav");
    if write_audio(reference, &r).is_err() || write_audio(degraded, &d).is_err() {
        warn!("could not write PESQ inputs");
        return None;
    }
    match Command::new(&bin).arg(&r).arg(&d).output() {
        Ok(out) if out.status.success() => String::from_utf8_lossy(&out.stdout)
            .split(|c: char| c.is_whitespace() || c == '=' || c == ',')
            .filter_map(|t| t.parse::<f64>().ok())
            .next_back(),
        Ok(out) => {
            warn!("PESQ exited with {}", out.status);
            None
        }
        Err(e) => {
            warn!("could not run PESQ binary {bin:?}: {e}");
            None
        }
    }
}

/// Evaluates `batches` deterministic batches drawn from `clips`.
pub fn evaluate(
    model: &Model,
    params: &ParamStore,
    train_cfg: &TrainConfig,
    clips: &[AudioClip],
    opts: &EvalOptions,
) -> Result<EvalSummary> {
    if opts.side_info != model.side_info() {
        return Err(Error::Config(format!(
            "model was built with side_info = {}, evaluation asked for {}",
            model.side_info(),
            opts.side_info
        )));
    }
    if opts.batches == 0 {
        return Err(Error::Config("evaluate needs at least one batch".into()));
    }
    let [lo, hi] = train_cfg.snr_range_db;
    if opts.snr_db < lo - SNR_MARGIN_DB || opts.snr_db > hi + SNR_MARGIN_DB {
        warn!(
            "evaluating at {} dB, outside the training range [{lo}, {hi}] dB",
            opts.snr_db
        );
    }
    if let Some(dir) = &opts.export_dir {
        std::fs::create_dir_all(dir).map_err(crate::error::io_err(dir))?;
    }
    let l = model.cfg.frame_length;
    let ctrl = control_bits_per_frame(&model.cfg.codec.values);
    let mut records = Vec::with_capacity(opts.batches);
    for i in 0..opts.batches {
        let x = frame_batch(clips, opts.batch, l, opts.seed.wrapping_add(i as u64))?;
        let infer_opts = InferOptions {
            channel: channel_state(opts, opts.batch, i)?,
            snr_token: opts.snr_token,
            lambda: opts.lambda.or(Some(train_cfg.lambda)),
            eta_y: opts.eta_y.unwrap_or(train_cfg.eta_y),
            seed: opts.seed ^ (0x9E37_79B9 + i as u64),
            alloc: None,
        };
        let inf: Inference = model.infer(params, &x, &infer_opts)?;
        let (dist_time, dist_mfcc) = batch_distortion(model, &x, &inf.x_hat)?;
        let rec_audio: Vec<f64> = inf.x_hat.iter().copied().collect();
        let mut pesq = None;
        if let Some(dir) = &opts.export_dir {
            write_audio(&x.to_samples(), &dir.join(format!("ref_{i}.wav")))?;
            write_audio(&rec_audio, &dir.join(format!("rec_{i}.wav")))?;
            pesq = run_pesq(dir, &x.to_samples(), &rec_audio);
        }
        let bw = inf.bandwidth;
        records.push(EvalRecord {
            batch: Some(i),
            frames: opts.batch,
            frame_length: l,
            snr_db: opts.snr_db,
            channel: opts.channel,
            side_info: opts.side_info,
            k_y: bw.k_y,
            k_z: bw.k_z,
            k_total: bw.k_total,
            control_bits: ctrl * opts.batch,
            bandwidth_hz: bandwidth_hz(bw.k_total, opts.batch, l),
            dist_time,
            dist_mfcc,
            pesq,
            erased_frames: inf.equalize.erased_frames,
        });
    }
    let n = records.len() as f64;
    let frames = opts.batch * records.len();
    let k_total = records.iter().map(|r| r.k_total).sum();
    let pesq: Vec<f64> = records.iter().filter_map(|r| r.pesq).collect();
    let aggregate = EvalRecord {
        batch: None,
        frames,
        frame_length: l,
        snr_db: opts.snr_db,
        channel: opts.channel,
        side_info: opts.side_info,
        k_y: records.iter().map(|r| r.k_y).sum(),
        k_z: records.iter().map(|r| r.k_z).sum(),
        k_total,
        control_bits: records.iter().map(|r| r.control_bits).sum(),
        bandwidth_hz: bandwidth_hz(k_total, frames, l),
        dist_time: records.iter().map(|r| r.dist_time).sum::<f64>() / n,
        dist_mfcc: records.iter().map(|r| r.dist_mfcc).sum::<f64>() / n,
        pesq: (pesq.len() == records.len()).then(|| pesq.iter().sum::<f64>() / n),
        erased_frames: records.iter().map(|r| r.erased_frames).sum(),
    };
    Ok(EvalSummary { records, aggregate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::speech_like_clip;

    #[test]
    fn hz_identity_at_the_4khz_point() {
        assert_eq!(bandwidth_hz(12800, 100, 512), 4000.0);
    }

    #[test]
    fn records_satisfy_identities() {
        let cfg = TrainConfig::tiny();
        let (model, params) = Model::new(&cfg.model, 0).unwrap();
        let clips: Vec<_> = (0..2).map(|i| speech_like_clip(format!("c{i}"), 0.3, i)).collect();
        let opts = EvalOptions {
            batches: 2,
            batch: 4,
            ..EvalOptions::new(6.0, true)
        };
        let s = evaluate(&model, &params, &cfg, &clips, &opts).unwrap();
        for r in s.records.iter().chain([&s.aggregate]) {
            assert_eq!(r.k_total, r.k_y + r.k_z);
            assert_eq!(r.bandwidth_hz, bandwidth_hz(r.k_total, r.frames, r.frame_length));
            assert!(r.pesq.is_none() || std::env::var_os(PESQ_ENV).is_some());
        }
        assert!(evaluate(&model, &params, &cfg, &clips, &EvalOptions::new(6.0, false)).is_err());
    }
}
