//! Differentiable MFCC front end.
//!
//! Framing, Hann window, a real DFT written as two matrix products, power
//! spectrum, triangular mel filterbank (HTK mel scale), log with an energy
//! floor, then an orthonormal DCT-II. Every stage is a tape op, so the
//! cepstral distortion passes gradients back to the waveform.

use std::f64::consts::PI;

use autograd::{Tape, Tensor, Var};
use ndarray::{Array2, Array3, IxDyn};
use serde::{Deserialize, Serialize};

use crate::corpus::SAMPLE_RATE;
use crate::error::{Error, Result};
use crate::tensor::{to_array3, to_tensor};

/// Mel energies are floored here before the log.
pub const ENERGY_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfccConfig {
    pub window: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub mel_bands: usize,
    pub coefficients: usize,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            window: 400,
            hop: 160,
            fft_size: 512,
            mel_bands: 80,
            coefficients: 20,
        }
    }
}

impl MfccConfig {
    pub fn validate(&self) -> Result<()> {
        if self.coefficients == 0 || self.coefficients > self.mel_bands {
            return Err(Error::Config(format!(
                "need 1 <= coefficients ({}) <= mel_bands ({})",
                self.coefficients, self.mel_bands
            )));
        }
        if self.window == 0 || self.window > self.fft_size || self.hop == 0 {
            return Err(Error::Config(format!(
                "need 0 < window ({}) <= fft_size ({}) and hop > 0",
                self.window, self.fft_size
            )));
        }
        Ok(())
    }

    /// Analysis windows in a frame of `len` samples (no padding).
    pub fn windows(&self, len: usize) -> usize {
        if len < self.window {
            0
        } else {
            1 + (len - self.window) / self.hop
        }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// `(fft_size / 2 + 1, bands)` triangular weights, evaluated at the bin
/// centre frequencies.
pub fn mel_filterbank(fft_size: usize, bands: usize, sample_rate: f64) -> Array2<f64> {
    let bins = fft_size / 2 + 1;
    let top = hz_to_mel(sample_rate / 2.0);
    let edges: Vec<f64> = (0..bands + 2)
        .map(|i| mel_to_hz(top * i as f64 / (bands + 1) as f64))
        .collect();
    Array2::from_shape_fn((bins, bands), |(k, m)| {
        let f = k as f64 * sample_rate / fft_size as f64;
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        if f <= lo || f >= hi {
            0.0
        } else if f <= mid {
            (f - lo) / (mid - lo)
        } else {
            (hi - f) / (hi - mid)
        }
    })
}

/// Orthonormal DCT-II as a `(bands, coefficients)` matrix.
pub fn dct_matrix(bands: usize, coefficients: usize) -> Array2<f64> {
    let m = bands as f64;
    Array2::from_shape_fn((bands, coefficients), |(n, k)| {
        let scale = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
        scale * (PI * k as f64 * (n as f64 + 0.5) / m).cos()
    })
}

/// Precomputed constant matrices for one configuration.
#[derive(Debug, Clone)]
pub struct Mfcc {
    cfg: MfccConfig,
    hann: Tensor,
    cos: Tensor,
    sin: Tensor,
    mel: Tensor,
    dct: Tensor,
}

impl Mfcc {
    pub fn new(cfg: &MfccConfig) -> Result<Self> {
        cfg.validate()?;
        let w = cfg.window;
        let bins = cfg.fft_size / 2 + 1;
        let hann = Tensor::from_shape_fn(IxDyn(&[w]), |i| {
            0.5 - 0.5 * (2.0 * PI * i[0] as f64 / w as f64).cos()
        });
        let angle = |n: usize, k: usize| 2.0 * PI * (n * k % cfg.fft_size) as f64 / cfg.fft_size as f64;
        let cos = Tensor::from_shape_fn(IxDyn(&[w, bins]), |i| angle(i[0], i[1]).cos());
        let sin = Tensor::from_shape_fn(IxDyn(&[w, bins]), |i| angle(i[0], i[1]).sin());
        Ok(Self {
            cfg: cfg.clone(),
            hann,
            cos,
            sin,
            mel: to_tensor(&mel_filterbank(cfg.fft_size, cfg.mel_bands, SAMPLE_RATE as f64)),
            dct: to_tensor(&dct_matrix(cfg.mel_bands, cfg.coefficients)),
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.cfg
    }

    /// `(B, L)` waveform to `(B, windows, coefficients)`.
    pub fn forward<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        let s = x.shape();
        if s.len() != 2 || s[1] < self.cfg.window {
            return Err(Error::Shape(format!(
                "mfcc needs (B, L) with L >= {}, got {s:?}",
                self.cfg.window
            )));
        }
        let tape = x.tape();
        let frames = x.unfold(self.cfg.window, self.cfg.hop) * tape.constant(self.hann.clone());
        let re = frames.matmul(tape.constant(self.cos.clone()));
        let im = frames.matmul(tape.constant(self.sin.clone()));
        let power = re.square() + im.square();
        let mel = power.matmul(tape.constant(self.mel.clone()));
        Ok(mel
            .clamp_min(ENERGY_FLOOR)
            .ln()
            .matmul(tape.constant(self.dct.clone())))
    }
}

/// MFCCs of `(B, L)` frames, `(B, windows, coefficients)`.
pub fn mfcc(frames: &Array2<f64>, cfg: &MfccConfig) -> Result<Array3<f64>> {
    let m = Mfcc::new(cfg)?;
    let tape = Tape::new();
    let c = m.forward(tape.constant(to_tensor(frames)))?;
    Ok(to_array3(&c.value()))
}
