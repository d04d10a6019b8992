//! Wireless link simulation: `ŝ = h ⊙ s + n`.
//!
//! Gains are per frame. AWGN uses `h = 1`, block fading draws Rayleigh
//! gains shared by `coherence` consecutive frames, and trace mode replays
//! recorded gains with frame `i` taking entry `i mod len`. SNR is measured
//! against unit signal power, so the noise variance alone sets it.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::jscc::ChannelFrame;

/// Gains below this magnitude are treated as deep fades and erased.
pub const ERASURE_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    #[default]
    Awgn,
    BlockFading,
    Trace,
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelKind::Awgn => "awgn",
            ChannelKind::BlockFading => "block_fading",
            ChannelKind::Trace => "trace",
        })
    }
}

impl std::str::FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "awgn" => Ok(ChannelKind::Awgn),
            "block_fading" | "fading" | "rayleigh" => Ok(ChannelKind::BlockFading),
            "trace" => Ok(ChannelKind::Trace),
            other => Err(Error::Config(format!("unknown channel kind '{other}'"))),
        }
    }
}

/// Noise variance for unit signal power.
pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    pub snr_db: f64,
    /// One complex gain per frame.
    pub h: Array1<Complex64>,
    pub kind: ChannelKind,
}

impl ChannelState {
    pub fn awgn(snr_db: f64, frames: usize) -> Self {
        Self {
            snr_db,
            h: Array1::from_elem(frames, Complex64::new(1.0, 0.0)),
            kind: ChannelKind::Awgn,
        }
    }

    pub fn block_fading(snr_db: f64, frames: usize, coherence: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            snr_db,
            h: sample_block_fading(frames, coherence, seed)?,
            kind: ChannelKind::BlockFading,
        })
    }

    /// Frame `i` of the batch uses trace entry `(first_frame + i) mod len`.
    pub fn from_trace(snr_db: f64, trace: &CsiTrace, frames: usize, first_frame: usize) -> Self {
        let n = trace.gains.len();
        Self {
            snr_db,
            h: (0..frames).map(|i| trace.gains[(first_frame + i) % n]).collect(),
            kind: ChannelKind::Trace,
        }
    }

    pub fn noise_variance(&self) -> f64 {
        noise_variance(self.snr_db)
    }

    fn check(&self, frames: usize) -> Result<()> {
        if self.h.len() != frames {
            return Err(Error::Channel(format!(
                "{} gains for {frames} frames",
                self.h.len()
            )));
        }
        // +inf is the noiseless channel; anything else must be finite.
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::Channel(format!("SNR {} dB is not usable", self.snr_db)));
        }
        if let Some(g) = self.h.iter().find(|g| !(g.re.is_finite() && g.im.is_finite())) {
            return Err(Error::Channel(format!("non-finite channel gain {g}")));
        }
        Ok(())
    }
}

/// Rayleigh gains `h ~ CN(0, 1)`, constant over blocks of `coherence`
/// frames.
pub fn sample_block_fading(frames: usize, coherence: usize, seed: u64) -> Result<Array1<Complex64>> {
    if coherence == 0 {
        return Err(Error::Config("coherence must be >= 1 frame".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let mut current = Complex64::new(0.0, 0.0);
    Ok((0..frames)
        .map(|i| {
            if i % coherence == 0 {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                current = Complex64::new(scale * re, scale * im);
            }
            current
        })
        .collect())
}

/// Draws `CN(0, variance)` samples.
pub fn complex_noise(rows: usize, cols: usize, variance: f64, rng: &mut ChaCha8Rng) -> Array2<Complex64> {
    let sd = (variance / 2.0).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(sd * re, sd * im)
    })
}

/// Passes the frame through the channel. Masked-out positions stay zero.
pub fn transmit(s: &ChannelFrame, state: &ChannelState, seed: u64) -> Result<ChannelFrame> {
    state.check(s.frames())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let variance = state.noise_variance();
    let noise = complex_noise(s.frames(), s.width(), variance, &mut rng);
    let mut out = s.clone();
    for ((b, j), v) in out.symbols.indexed_iter_mut() {
        if s.mask[[b, j]] {
            *v = state.h[b] * *v + if variance > 0.0 { noise[[b, j]] } else { Complex64::default() };
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EqualizeStats {
    /// Valid symbols zeroed because their gain fell below the threshold.
    pub erased_symbols: usize,
    pub erased_frames: usize,
}

/// Zero-forcing equalisation; identity for AWGN.
pub fn equalize(r: &ChannelFrame, state: &ChannelState) -> Result<(ChannelFrame, EqualizeStats)> {
    state.check(r.frames())?;
    let mut out = r.clone();
    let mut stats = EqualizeStats::default();
    if state.kind == ChannelKind::Awgn {
        return Ok((out, stats));
    }
    for (b, mut row) in out.symbols.outer_iter_mut().enumerate() {
        let h = state.h[b];
        if h.norm() < ERASURE_THRESHOLD {
            stats.erased_frames += 1;
            stats.erased_symbols += r.k_bar[b];
            row.fill(Complex64::default());
        } else {
            row.mapv_inplace(|v| v / h);
        }
    }
    Ok((out, stats))
}

/// Effective channel seen by the decoder after equalisation, in the real
/// interleaved layout used during training: `ŝ = s ⊙ keep + noise`.
/// Both arrays are `(B, 2 * width)` and zero outside the mask.
pub fn effective_channel(
    state: &ChannelState,
    mask: &Array2<bool>,
    rng: &mut ChaCha8Rng,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let (frames, width) = mask.dim();
    state.check(frames)?;
    let noise = complex_noise(frames, width, state.noise_variance(), rng);
    let mut keep = Array2::zeros((frames, 2 * width));
    let mut n_eff = Array2::zeros((frames, 2 * width));
    for b in 0..frames {
        let h = match state.kind {
            ChannelKind::Awgn => Complex64::new(1.0, 0.0),
            _ => state.h[b],
        };
        if h.norm() < ERASURE_THRESHOLD {
            continue;
        }
        for j in 0..width {
            if mask[[b, j]] {
                let n = noise[[b, j]] / h;
                keep[[b, 2 * j]] = 1.0;
                keep[[b, 2 * j + 1]] = 1.0;
                n_eff[[b, 2 * j]] = n.re;
                n_eff[[b, 2 * j + 1]] = n.im;
            }
        }
    }
    Ok((keep, n_eff))
}

/// Recorded complex gains with free-form tags.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiTrace {
    pub gains: Vec<Complex64>,
    pub carrier: String,
    pub scenario: String,
}

const CSI_MAGIC: &[u8; 4] = b"CSI1";

impl CsiTrace {
    pub fn new(gains: Vec<Complex64>) -> Result<Self> {
        let trace = Self {
            gains,
            carrier: String::new(),
            scenario: String::new(),
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gains.is_empty() {
            return Err(Error::Channel("CSI trace is empty".into()));
        }
        if let Some(g) = self.gains.iter().find(|g| !(g.re.is_finite() && g.im.is_finite())) {
            return Err(Error::Channel(format!("non-finite gain {g} in CSI trace")));
        }
        Ok(())
    }

    /// Loads the binary `CSI1` format or, failing the magic, a two-column
    /// CSV (`re,im`). CSV comment lines `# carrier=...` and
    /// `# scenario=...` fill the tags.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        let trace = if bytes.starts_with(CSI_MAGIC) {
            Self::parse_binary(&bytes)?
        } else {
            let text = String::from_utf8(bytes)
                .map_err(|_| Error::Channel(format!("{} is neither CSI1 nor text", path.display())))?;
            Self::parse_csv(&text)?
        };
        trace.validate()?;
        Ok(trace)
    }

    fn parse_binary(bytes: &[u8]) -> Result<Self> {
        let count_bytes: [u8; 4] = bytes
            .get(4..8)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| Error::Channel("truncated CSI1 header".into()))?;
        let count = u32::from_le_bytes(count_bytes) as usize;
        let body = &bytes[8..];
        if body.len() != count * 8 {
            return Err(Error::Channel(format!(
                "CSI1 header announces {count} gains but carries {} bytes",
                body.len()
            )));
        }
        let gains = body
            .chunks_exact(8)
            .map(|c| {
                let re = f32::from_le_bytes(c[0..4].try_into().expect("4 bytes"));
                let im = f32::from_le_bytes(c[4..8].try_into().expect("4 bytes"));
                Complex64::new(re as f64, im as f64)
            })
            .collect();
        Ok(Self {
            gains,
            carrier: String::new(),
            scenario: String::new(),
        })
    }

    fn parse_csv(text: &str) -> Result<Self> {
        let mut trace = Self {
            gains: Vec::new(),
            carrier: String::new(),
            scenario: String::new(),
        };
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((k, v)) = comment.trim().split_once('=') {
                    match k.trim() {
                        "carrier" => trace.carrier = v.trim().to_string(),
                        "scenario" => trace.scenario = v.trim().to_string(),
                        _ => {}
                    }
                }
                continue;
            }
            let mut cols = line.split(',').map(str::trim);
            let parse = |c: Option<&str>| c.and_then(|c| c.parse::<f64>().ok());
            match (parse(cols.next()), parse(cols.next())) {
                (Some(re), Some(im)) => trace.gains.push(Complex64::new(re, im)),
                // Tolerate a header row.
                _ if lineno == 0 || trace.gains.is_empty() => {}
                _ => {
                    return Err(Error::Channel(format!(
                        "CSI csv line {}: expected 're,im'",
                        lineno + 1
                    )))
                }
            }
        }
        Ok(trace)
    }

    /// Writes the binary `CSI1` format (tags are not stored).
    pub fn save_binary(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut out = Vec::with_capacity(8 + 8 * self.gains.len());
        out.extend_from_slice(CSI_MAGIC);
        out.extend_from_slice(&(self.gains.len() as u32).to_le_bytes());
        for g in &self.gains {
            out.extend_from_slice(&(g.re as f32).to_le_bytes());
            out.extend_from_slice(&(g.im as f32).to_le_bytes());
        }
        fs::write(path, out).map_err(io_err(path))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut f = fs::File::create(path).map_err(io_err(path))?;
        let mut text = String::new();
        if !self.carrier.is_empty() {
            text.push_str(&format!("# carrier={}\n", self.carrier));
        }
        if !self.scenario.is_empty() {
            text.push_str(&format!("# scenario={}\n", self.scenario));
        }
        for g in &self.gains {
            text.push_str(&format!("{},{}\n", g.re, g.im));
        }
        f.write_all(text.as_bytes()).map_err(io_err(path))
    }
}
