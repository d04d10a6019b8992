//! Training loop: random-SNR Adam updates with exact resume.
//!
//! All randomness of step `k` (SNR, batch draw, latent and channel noise,
//! fading gains) comes from a generator seeded with `(seed, k)`, so a run
//! resumed from a checkpoint at step `k` continues exactly as the
//! uninterrupted run would.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use autograd::{Adam, ParamStore};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{ChannelKind, ChannelState};
use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::corpus::{frame_batch, AudioClip};
use crate::error::{io_err, Error, Result};
use crate::model::{Model, TrainContext};
use crate::objective::{rd_loss, RdLossBreakdown, CSV_HEADER};

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    /// λ used by the step (drawn per step for a lambda-conditioned model).
    pub lambda: f64,
    pub snr_db: f64,
    pub loss: RdLossBreakdown,
    pub k_y: usize,
}

impl StepRecord {
    pub fn csv_line(&self) -> String {
        self.loss.csv_line(self.step, self.lambda, self.snr_db)
    }
}

/// Log-uniform draw from `[lo, hi]`.
pub fn draw_lambda(range: [f64; 2], rng: &mut ChaCha8Rng) -> f64 {
    let [lo, hi] = range;
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo.ln()..=hi.ln()).exp()
    }
}

/// Generator for everything random in step `step`.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

pub fn draw_snr(range: [f64; 2], rng: &mut ChaCha8Rng) -> f64 {
    let [lo, hi] = range;
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Model,
    pub params: ParamStore,
    pub adam: Adam,
    /// Steps completed so far.
    pub step: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let (model, params) = Model::new(&cfg.model, cfg.seed)?;
        let adam = Adam::new(cfg.lr);
        Ok(Self {
            cfg,
            model,
            params,
            adam,
            step: 0,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let model = ck.model()?;
        let mut adam = Adam::new(ck.config.lr);
        if let Some(o) = ck.optimizer {
            adam.restore(o.step, o.m, o.v);
        }
        Ok(Self {
            cfg: ck.config,
            model,
            params: ck.params,
            adam,
            step: ck.step,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.cfg.clone(), self.step, self.params.clone(), Some(&self.adam))
    }

    /// Runs one update on a batch drawn from `clips`.
    pub fn train_step(&mut self, clips: &[AudioClip]) -> Result<StepRecord> {
        let k = self.step + 1;
        let mut rng = step_rng(self.cfg.seed, k);
        let snr_db = draw_snr(self.cfg.snr_range_db, &mut rng);
        let batch = frame_batch(clips, self.cfg.batch, self.cfg.model.frame_length, rng.gen())?;
        let channel = match self.cfg.channel {
            ChannelKind::Awgn => ChannelState::awgn(snr_db, self.cfg.batch),
            ChannelKind::BlockFading => {
                ChannelState::block_fading(snr_db, self.cfg.batch, self.cfg.coherence, rng.gen())?
            }
            ChannelKind::Trace => return Err(Error::Config("trace channel cannot be trained on".into())),
        };
        let noise_seed = rng.gen();
        let mut weights = self.cfg.weights();
        if let Some([lo, hi]) = self.cfg.lambda_range.filter(|_| self.cfg.model.lambda_conditioning) {
            weights.lambda = draw_lambda([lo, hi], &mut rng);
        }
        let ctx = TrainContext {
            snr_db,
            channel,
            noise_seed,
            weights,
            alloc: None,
        };
        let (v, grads) = self.model.loss_and_gradients(&self.params, &batch, &ctx)?;
        let loss = rd_loss(v.bits_y, v.bits_z, v.dist_time, v.dist_mfcc, ctx.weights)
            .map_err(|e| Error::NonFinite(format!("step {k}: {e}")))?;
        if let Some(name) = loss.first_non_finite() {
            return Err(Error::NonFinite(format!("step {k}: {name}")));
        }
        for ((_, name, _), g) in self.params.iter().zip(&grads) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("step {k}: gradient of {name}")));
            }
        }
        self.adam.step(&mut self.params, &grads);
        self.step = k;
        Ok(StepRecord {
            step: k,
            lambda: ctx.weights.lambda,
            snr_db,
            loss,
            k_y: v.alloc.k_y(),
        })
    }

    /// Trains until `self.step == until`. With `out_dir`, appends the CSV
    /// log there and writes `step_<k>.ckpt` every `checkpoint_every` steps
    /// plus `final.ckpt`.
    pub fn run(
        &mut self,
        clips: &[AudioClip],
        until: u64,
        out_dir: Option<&Path>,
    ) -> Result<Vec<StepRecord>> {
        let mut log = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(io_err(dir))?;
                Some(CsvLog::open(&dir.join("train_log.csv"))?)
            }
            None => None,
        };
        let mut records = Vec::new();
        while self.step < until {
            let rec = self.train_step(clips)?;
            if let Some(log) = log.as_mut() {
                log.write(&rec.csv_line())?;
            }
            if self.cfg.log_every > 0 && rec.step % self.cfg.log_every == 0 {
                info!(
                    "step {} snr {:.2} dB loss {:.5} (bits_y {:.1}, bits_z {:.1}, mse {:.3e}, mfcc {:.4}, K_y {})",
                    rec.step,
                    rec.snr_db,
                    rec.loss.total,
                    rec.loss.rate_y_raw,
                    rec.loss.rate_z_raw,
                    rec.loss.dist_time,
                    rec.loss.dist_mfcc,
                    rec.k_y
                );
            }
            if let Some(dir) = out_dir {
                let every = self.cfg.checkpoint_every;
                if every > 0 && rec.step % every == 0 {
                    self.checkpoint().save(&dir.join(format!("step_{}.ckpt", rec.step)))?;
                }
            }
            records.push(rec);
        }
        if let Some(dir) = out_dir {
            self.checkpoint().save(&dir.join("final.ckpt"))?;
        }
        Ok(records)
    }
}

/// Append-only CSV with the header written once.
pub struct CsvLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvLog {
    pub fn open(path: &Path) -> Result<Self> {
        let fresh = !path.exists();
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        let mut log = Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        if fresh {
            log.write(CSV_HEADER)?;
        }
        Ok(log)
    }

    pub fn write(&mut self, line: &str) -> Result<()> {
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(io_err(&self.path))
    }
}

/// Trailing moving average with window `w` (shorter at the start).
pub fn smooth(values: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (i, &v) in values.iter().enumerate() {
        acc += v;
        if i >= w {
            acc -= values[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::speech_like_clip;

    fn clips() -> Vec<AudioClip> {
        (0..3).map(|i| speech_like_clip(format!("c{i}"), 0.2, i)).collect()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            batch: 2,
            ..TrainConfig::tiny()
        }
    }

    #[test]
    fn degenerate_snr_range() {
        let cfg = TrainConfig {
            snr_range_db: [6.0, 6.0],
            ..small_cfg()
        };
        let mut t = Trainer::new(cfg).unwrap();
        let recs = t.run(&clips(), 3, None).unwrap();
        assert!(recs.iter().all(|r| r.snr_db == 6.0));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let c = clips();
        let mut full = Trainer::new(small_cfg()).unwrap();
        let a = full.run(&c, 4, None).unwrap();
        let mut first = Trainer::new(small_cfg()).unwrap();
        first.run(&c, 2, None).unwrap();
        let bytes = first.checkpoint().to_bytes();
        let mut resumed = Trainer::from_checkpoint(Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        let b = resumed.run(&c, 4, None).unwrap();
        assert_eq!(&a[2..], &b[..]);
        assert_eq!(full.params.values(), resumed.params.values());
    }

    #[test]
    fn smoothing() {
        assert_eq!(smooth(&[2.0, 4.0, 6.0, 8.0], 2), vec![2.0, 3.0, 5.0, 7.0]);
    }
}
