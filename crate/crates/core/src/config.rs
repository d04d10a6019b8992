//! Model and training configuration, read from a single TOML file.
//!
//! Every field has a default, so a file only needs the keys it changes.
//! Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelKind;
use crate::corpus::FRAME_ALIGNMENT;
use crate::entropy::EntropyConfig;
use crate::error::{io_err, Error, Result};
use crate::jscc::CodecConfig;
use crate::mfcc::MfccConfig;
use crate::objective::RdWeights;
use crate::transform::TransformConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Samples per frame `L`.
    pub frame_length: usize,
    pub transform: TransformConfig,
    pub entropy: EntropyConfig,
    pub codec: CodecConfig,
    pub mfcc: MfccConfig,
    /// Train on `y + U(-1/2, 1/2)` and evaluate on `round(y)`, so the scale
    /// of `y` is tied to its estimated rate.
    pub latent_noise: bool,
    /// Scales `y` by a per-channel gain learned as a function of `log10 λ`
    /// (and divides it back out before `g_s`), so one model can serve a
    /// range of λ. Off by default; the baseline is one model per λ.
    pub lambda_conditioning: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            frame_length: 512,
            transform: TransformConfig::default(),
            entropy: EntropyConfig::default(),
            codec: CodecConfig::default(),
            mfcc: MfccConfig::default(),
            latent_noise: true,
            lambda_conditioning: false,
        }
    }
}

impl ModelConfig {
    /// Temporal length of `y`.
    pub fn latent_length(&self) -> usize {
        self.frame_length / 4
    }

    /// Temporal length of `z`.
    pub fn hyper_length(&self) -> usize {
        self.frame_length / 16
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_length == 0 || !self.frame_length.is_multiple_of(FRAME_ALIGNMENT) {
            return Err(Error::Config(format!(
                "frame_length {} must be a positive multiple of {FRAME_ALIGNMENT}",
                self.frame_length
            )));
        }
        if self.frame_length < self.mfcc.window {
            return Err(Error::Config(format!(
                "frame_length {} is shorter than the MFCC window {}",
                self.frame_length, self.mfcc.window
            )));
        }
        self.transform.validate()?;
        self.entropy.validate()?;
        self.codec.validate()?;
        self.mfcc.validate()?;
        self.codec.tokens(self.latent_length())?;
        Ok(())
    }

    /// A small configuration that trains in seconds on a CPU.
    pub fn tiny() -> Self {
        Self {
            frame_length: 128,
            transform: TransformConfig {
                channels: 8,
                residual_blocks: 1,
                ..TransformConfig::default()
            },
            entropy: EntropyConfig {
                hyper_channels: 4,
                ..EntropyConfig::default()
            },
            codec: CodecConfig {
                blocks: 1,
                d_model: 32,
                heads: 2,
                patch_len: 8,
                cond_width: 8,
                values: vec![4, 8, 12, 16],
                ..CodecConfig::default()
            },
            mfcc: MfccConfig {
                window: 128,
                hop: 64,
                fft_size: 128,
                mel_bands: 24,
                coefficients: 13,
            },
            latent_noise: true,
            lambda_conditioning: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    /// With `model.lambda_conditioning`, each step draws λ log-uniformly
    /// from this range instead of using `lambda`.
    pub lambda_range: Option<[f64; 2]>,
    pub eta_y: f64,
    pub eta_z: f64,
    pub beta: f64,
    /// Per-step SNR is drawn uniformly from `[lo, hi]` dB.
    pub snr_range_db: [f64; 2],
    pub channel: ChannelKind,
    /// Frames per fading block when `channel = "block_fading"`.
    pub coherence: usize,
    pub steps: u64,
    pub lr: f64,
    pub seed: u64,
    pub batch: usize,
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            lambda_range: None,
            eta_y: 0.2,
            eta_z: 1.0,
            beta: 1.0,
            snr_range_db: [0.0, 12.0],
            channel: ChannelKind::Awgn,
            coherence: 1,
            steps: 5000,
            lr: 1e-4,
            seed: 0,
            batch: 16,
            checkpoint_every: 1000,
            log_every: 10,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> RdWeights {
        RdWeights {
            eta_y: self.eta_y,
            eta_z: self.eta_z,
            lambda: self.lambda,
            beta: self.beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.weights().validate()?;
        if !(self.eta_y > 0.0 && self.eta_z > 0.0) {
            return Err(Error::Config("eta_y and eta_z must be > 0".into()));
        }
        let [lo, hi] = self.snr_range_db;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Config(format!("snr_range_db [{lo}, {hi}] needs finite lo <= hi")));
        }
        if self.steps == 0 || self.batch == 0 || self.coherence == 0 {
            return Err(Error::Config("steps, batch and coherence must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be > 0", self.lr)));
        }
        match (self.model.lambda_conditioning, self.lambda_range) {
            (true, Some([lo, hi])) if lo > 0.0 && lo <= hi && hi.is_finite() => {}
            (true, _) => {
                return Err(Error::Config(
                    "lambda_conditioning needs lambda_range = [lo, hi] with 0 < lo <= hi".into(),
                ))
            }
            (false, Some(_)) => {
                return Err(Error::Config("lambda_range needs model.lambda_conditioning".into()))
            }
            (false, None) => {}
        }
        if self.channel == ChannelKind::Trace {
            return Err(Error::Config("training draws channels; trace replay is eval-only".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// The tiny model with weights suited to it.
    pub fn tiny() -> Self {
        Self {
            eta_y: 0.05,
            batch: 8,
            lr: 2e-3,
            steps: 400,
            checkpoint_every: 0,
            model: ModelConfig::tiny(),
            ..Self::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip() {
        let cfg = TrainConfig::tiny();
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = TrainConfig::from_toml("lambda = 3.0\n[model.codec]\nvalues = [8, 16]\n").unwrap();
        assert_eq!(cfg.lambda, 3.0);
        assert_eq!(cfg.model.codec.values, vec![8, 16]);
        assert_eq!(cfg.model.codec.d_model, CodecConfig::default().d_model);
    }

    #[test]
    fn unknown_keys_and_bad_ranges_fail() {
        assert!(TrainConfig::from_toml("lamda = 3.0\n").is_err());
        assert!(TrainConfig::from_toml("[model]\nwidth = 3\n").is_err());
        assert!(TrainConfig::from_toml("snr_range_db = [12.0, 0.0]\n").is_err());
        assert!(TrainConfig::from_toml("eta_y = 0.0\n").is_err());
        assert!(TrainConfig::from_toml("steps = 0\n").is_err());
        assert!(TrainConfig::from_toml("lambda_range = [1.0, 10.0]\n").is_err());
        let ok = "lambda_range = [1.0, 10.0]\n[model]\nlambda_conditioning = true\n";
        assert!(TrainConfig::from_toml(ok).is_ok());
    }
}
