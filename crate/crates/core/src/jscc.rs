//! Variable-rate joint source-channel codec.
//!
//! Each frame's latent `(M, T)` is cut into `T / patch_len` temporal
//! patches, embedded to `d_model`, conditioned on a learned rate token and
//! the channel SNR, and run through pre-norm Transformer blocks. A bank of
//! output heads, one per budget in `V`, maps the flattened tokens to `2v`
//! reals that are read as `v` interleaved I/Q symbols. The decoder mirrors
//! this with a bank of input heads.
//!
//! Every head runs on every frame and a constant one-hot selection picks
//! the allocated one, so unselected heads and masked positions receive
//! exactly zero gradient.

use autograd::{Bound, ParamId, Tape, Tensor, Var};
use ndarray::{Array2, IxDyn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::entropy::GaussianParams;
use crate::error::{Error, Result};
use crate::layers::{Linear, ParamBuilder, TransformerBlock};
use crate::rate::{validate_values, RateAllocation};
use crate::tensor::{to_array2, to_array3, to_tensor};
use crate::transform::LatentFeatures;

/// How a conditioning vector joins the patch tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Merge {
    Add,
    Concat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    /// Transformer blocks `N_e` (each side).
    pub blocks: usize,
    pub d_model: usize,
    pub heads: usize,
    /// Latent time steps per token.
    pub patch_len: usize,
    /// Width of concatenated conditioning features.
    pub cond_width: usize,
    /// Symbol budgets `V`, strictly ascending.
    pub values: Vec<usize>,
    pub rate_merge: Merge,
    pub snr_merge: Merge,
    /// Decoder consumes the hyperprior's `(mu, ln sigma)`.
    pub side_info: bool,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            blocks: 4,
            d_model: 256,
            heads: 4,
            patch_len: 8,
            cond_width: 16,
            values: vec![8, 16, 24, 32, 48, 64],
            rate_merge: Merge::Add,
            snr_merge: Merge::Concat,
            side_info: true,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        validate_values(&self.values)?;
        let vn = *self.values.last().expect("validated");
        if 2 * vn > self.d_model {
            return Err(Error::Config(format!(
                "largest budget {vn} exceeds d_model / 2 = {}",
                self.d_model / 2
            )));
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config("d_model must split evenly into heads".into()));
        }
        if self.patch_len == 0 || self.cond_width == 0 {
            return Err(Error::Config("patch_len and cond_width must be positive".into()));
        }
        Ok(())
    }

    pub fn max_budget(&self) -> usize {
        *self.values.last().expect("validated value set")
    }

    pub fn tokens(&self, temporal_len: usize) -> Result<usize> {
        if temporal_len == 0 || !temporal_len.is_multiple_of(self.patch_len) {
            return Err(Error::Shape(format!(
                "latent length {temporal_len} is not a multiple of patch_len {}",
                self.patch_len
            )));
        }
        Ok(temporal_len / self.patch_len)
    }
}

/// Channel-input symbols `(B, v_n)` with the first `k_bar[i]` entries of
/// row `i` valid and the rest exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelFrame {
    pub symbols: Array2<Complex64>,
    pub mask: Array2<bool>,
    pub k_bar: Vec<usize>,
}

pub fn validity_mask(k_bar: &[usize], width: usize) -> Array2<bool> {
    Array2::from_shape_fn((k_bar.len(), width), |(b, j)| j < k_bar[b])
}

impl ChannelFrame {
    /// Wraps symbols, zeroing everything past each frame's budget.
    pub fn new(mut symbols: Array2<Complex64>, k_bar: Vec<usize>) -> Result<Self> {
        let (frames, width) = symbols.dim();
        if k_bar.len() != frames || k_bar.iter().any(|&k| k > width) {
            return Err(Error::Allocation(format!(
                "budgets {k_bar:?} do not fit a {frames} x {width} symbol block"
            )));
        }
        let mask = validity_mask(&k_bar, width);
        symbols.zip_mut_with(&mask, |s, &m| {
            if !m {
                *s = Complex64::default();
            }
        });
        Ok(Self {
            symbols,
            mask,
            k_bar,
        })
    }

    /// From `(B, 2 v_n)` interleaved reals.
    pub fn from_interleaved(reals: &Array2<f64>, k_bar: Vec<usize>) -> Result<Self> {
        let (frames, width2) = reals.dim();
        if width2 % 2 != 0 {
            return Err(Error::Shape(format!("odd real width {width2}")));
        }
        let symbols = Array2::from_shape_fn((frames, width2 / 2), |(b, j)| {
            Complex64::new(reals[[b, 2 * j]], reals[[b, 2 * j + 1]])
        });
        Self::new(symbols, k_bar)
    }

    pub fn to_interleaved(&self) -> Array2<f64> {
        let (frames, width) = self.symbols.dim();
        Array2::from_shape_fn((frames, 2 * width), |(b, j)| {
            let s = self.symbols[[b, j / 2]];
            if j % 2 == 0 {
                s.re
            } else {
                s.im
            }
        })
    }

    pub fn frames(&self) -> usize {
        self.symbols.nrows()
    }

    pub fn width(&self) -> usize {
        self.symbols.ncols()
    }

    pub fn valid_symbols(&self) -> usize {
        self.k_bar.iter().sum()
    }

    /// Mean `|s|^2` over valid entries.
    pub fn mean_power(&self) -> f64 {
        let total: f64 = self
            .symbols
            .iter()
            .zip(self.mask.iter())
            .filter(|(_, &m)| m)
            .map(|(s, _)| s.norm_sqr())
            .sum();
        total / self.valid_symbols().max(1) as f64
    }

    /// `u32 B, u32 v_n, B x u16 k_bar`, then `(re, im)` f32 pairs, row-major,
    /// all little-endian.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(8 + 2 * self.frames() + 8 * self.symbols.len());
        out.extend_from_slice(&(self.frames() as u32).to_le_bytes());
        out.extend_from_slice(&(self.width() as u32).to_le_bytes());
        for &k in &self.k_bar {
            let k = u16::try_from(k)
                .map_err(|_| Error::Allocation(format!("budget {k} does not fit in u16")))?;
            out.extend_from_slice(&k.to_le_bytes());
        }
        for s in &self.symbols {
            out.extend_from_slice(&(s.re as f32).to_le_bytes());
            out.extend_from_slice(&(s.im as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let word = |at: usize| -> Result<u32> {
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
                .ok_or_else(|| Error::Bitstream("truncated channel frame header".into()))
        };
        let frames = word(0)? as usize;
        let width = word(4)? as usize;
        let body = 8 + 2 * frames;
        let expected = body + 8 * frames * width;
        if bytes.len() != expected {
            return Err(Error::Bitstream(format!(
                "channel frame of {frames} x {width} needs {expected} bytes, got {}",
                bytes.len()
            )));
        }
        let k_bar = bytes[8..body]
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as usize)
            .collect();
        let mut pairs = bytes[body..].chunks_exact(4).map(|c| {
            f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64
        });
        let symbols = Array2::from_shape_simple_fn((frames, width), || {
            let re = pairs.next().expect("length checked");
            let im = pairs.next().expect("length checked");
            Complex64::new(re, im)
        });
        Self::new(symbols, k_bar)
    }
}

fn one_hot(alloc: &RateAllocation, n: usize) -> Tensor {
    Tensor::from_shape_fn(IxDyn(&[alloc.frames(), n]), |i| {
        (alloc.token_index[i[0]] == i[1]) as u8 as f64
    })
}

fn real_mask(k_bar: &[usize], width: usize) -> Tensor {
    Tensor::from_shape_fn(IxDyn(&[k_bar.len(), 2 * width]), |i| {
        (i[1] < 2 * k_bar[i[0]]) as u8 as f64
    })
}

/// `(B, C, T)` to `(B, T / pl, C * pl)`.
fn patchify<'t>(x: Var<'t>, patch_len: usize) -> Var<'t> {
    let s = x.shape();
    let (b, c, t) = (s[0], s[1], s[2]);
    let p = t / patch_len;
    x.reshape(&[b, c, p, patch_len])
        .permute(&[0, 2, 1, 3])
        .reshape(&[b, p, c * patch_len])
}

fn unpatchify<'t>(x: Var<'t>, channels: usize, patch_len: usize) -> Var<'t> {
    let s = x.shape();
    let (b, p) = (s[0], s[1]);
    x.reshape(&[b, p, channels, patch_len])
        .permute(&[0, 2, 1, 3])
        .reshape(&[b, channels, p * patch_len])
}

/// Rate-token and SNR-token conditioning of a token sequence.
#[derive(Debug, Clone)]
struct Conditioning {
    rate_table: ParamId,
    snr_proj: Linear,
    fuse: Option<Linear>,
    rate_merge: Merge,
    snr_merge: Merge,
}

impl Conditioning {
    fn new(pb: &mut ParamBuilder, name: &str, cfg: &CodecConfig) -> Self {
        let d = cfg.d_model;
        let width = |m: Merge| if m == Merge::Add { d } else { cfg.cond_width };
        let extra = [cfg.rate_merge, cfg.snr_merge]
            .iter()
            .filter(|&&m| m == Merge::Concat)
            .count()
            * cfg.cond_width;
        Self {
            rate_table: pb.uniform(
                &format!("{name}.rate_tokens"),
                &[cfg.values.len(), width(cfg.rate_merge)],
                0.1,
            ),
            snr_proj: Linear::new(pb, &format!("{name}.snr_token"), 1, width(cfg.snr_merge)),
            fuse: (extra > 0).then(|| Linear::new(pb, &format!("{name}.fuse"), d + extra, d)),
            rate_merge: cfg.rate_merge,
            snr_merge: cfg.snr_merge,
        }
    }

    fn apply<'t>(
        &self,
        p: &Bound<'t>,
        tokens: Var<'t>,
        alloc: &RateAllocation,
        values: usize,
        snr_db: f64,
    ) -> Var<'t> {
        let tape = tokens.tape();
        let s = tokens.shape();
        let (b, n) = (s[0], s[1]);
        let rate = tape
            .constant(one_hot(alloc, values))
            .matmul(p.get(self.rate_table));
        let rate = rate.reshape(&[b, 1, rate.shape()[1]]);
        let snr_in = tape.constant(Tensor::from_elem(IxDyn(&[b, 1]), snr_db / 10.0));
        let snr = self.snr_proj.forward(p, snr_in);
        let snr = snr.reshape(&[b, 1, snr.shape()[1]]);
        let spread = tape.constant(Tensor::ones(IxDyn(&[1, n, 1])));
        let mut h = tokens;
        let mut extras = Vec::new();
        for (feature, merge) in [(rate, self.rate_merge), (snr, self.snr_merge)] {
            match merge {
                Merge::Add => h = h + feature,
                Merge::Concat => extras.push(feature * spread),
            }
        }
        match &self.fuse {
            Some(fuse) => {
                let mut parts = vec![h];
                parts.extend(extras);
                fuse.forward(p, Var::concat(&parts, 2))
            }
            None => h,
        }
    }
}

/// Encoder output during training: interleaved reals, power-normalised.
pub struct EncodedSymbols<'t> {
    /// `(B, 2 v_n)`.
    pub reals: Var<'t>,
    pub mask: Array2<bool>,
}

#[derive(Debug, Clone)]
pub struct JsccEncoder {
    cfg: CodecConfig,
    latent_channels: usize,
    embed: Linear,
    position: ParamId,
    cond: Conditioning,
    blocks: Vec<TransformerBlock>,
    heads: Vec<Linear>,
}

impl JsccEncoder {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        cfg: &CodecConfig,
        latent_channels: usize,
        temporal_len: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        let tokens = cfg.tokens(temporal_len)?;
        let d = cfg.d_model;
        Ok(Self {
            cfg: cfg.clone(),
            latent_channels,
            embed: Linear::new(pb, &format!("{name}.embed"), latent_channels * cfg.patch_len, d),
            position: pb.uniform(&format!("{name}.position"), &[tokens, d], 0.02),
            cond: Conditioning::new(pb, &format!("{name}.cond"), cfg),
            blocks: (0..cfg.blocks)
                .map(|i| TransformerBlock::new(pb, &format!("{name}.block{i}"), d, cfg.heads))
                .collect(),
            heads: cfg
                .values
                .iter()
                .map(|&v| Linear::new(pb, &format!("{name}.head{v}"), tokens * d, 2 * v))
                .collect(),
        })
    }

    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        y: Var<'t>,
        alloc: &RateAllocation,
        snr_db: f64,
    ) -> Result<EncodedSymbols<'t>> {
        let s = y.shape();
        if s.len() != 3 || s[1] != self.latent_channels {
            return Err(Error::Shape(format!(
                "encoder expects (B, {}, T), got {s:?}",
                self.latent_channels
            )));
        }
        if alloc.frames() != s[0] {
            return Err(Error::Allocation(format!(
                "{} budgets for {} frames",
                alloc.frames(),
                s[0]
            )));
        }
        if !snr_db.is_finite() {
            return Err(Error::Config(format!("SNR token {snr_db} dB is not finite")));
        }
        alloc.check(&self.cfg.values)?;
        let tape = y.tape();
        let b = s[0];
        let tokens = self.cfg.tokens(s[2])?;
        let mut h = self.embed.forward(p, patchify(y, self.cfg.patch_len)) + p.get(self.position);
        h = self.cond.apply(p, h, alloc, self.cfg.values.len(), snr_db);
        for block in &self.blocks {
            h = block.forward(p, h);
        }
        let flat = h.reshape(&[b, tokens * self.cfg.d_model]);
        let vn = self.cfg.max_budget();
        let select = tape.constant(one_hot(alloc, self.cfg.values.len()));
        let mut out: Option<Var<'t>> = None;
        for (j, (head, &v)) in self.heads.iter().zip(&self.cfg.values).enumerate() {
            if !alloc.token_index.contains(&j) {
                continue;
            }
            let mut r = head.forward(p, flat);
            if v < vn {
                let pad = tape.constant(Tensor::zeros(IxDyn(&[b, 2 * (vn - v)])));
                r = Var::concat(&[r, pad], 1);
            }
            let picked = r * select.narrow(1, j, 1);
            out = Some(match out {
                Some(acc) => acc + picked,
                None => picked,
            });
        }
        let raw = out.expect("allocation selects at least one head");
        let masked = raw * tape.constant(real_mask(&alloc.k_bar, vn));
        let symbols = alloc.k_y().max(1) as f64;
        let power = masked.square().sum().mul_scalar(1.0 / symbols).add_scalar(1e-12);
        Ok(EncodedSymbols {
            reals: masked / power.sqrt(),
            mask: validity_mask(&alloc.k_bar, vn),
        })
    }
}

#[derive(Debug, Clone)]
pub struct JsccDecoder {
    cfg: CodecConfig,
    latent_channels: usize,
    inputs: Vec<Linear>,
    position: ParamId,
    side: Option<Linear>,
    cond: Conditioning,
    blocks: Vec<TransformerBlock>,
    unembed: Linear,
}

impl JsccDecoder {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        cfg: &CodecConfig,
        latent_channels: usize,
        temporal_len: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        let tokens = cfg.tokens(temporal_len)?;
        let d = cfg.d_model;
        let patch = latent_channels * cfg.patch_len;
        Ok(Self {
            cfg: cfg.clone(),
            latent_channels,
            inputs: cfg
                .values
                .iter()
                .map(|&v| Linear::new(pb, &format!("{name}.input{v}"), 2 * v, tokens * d))
                .collect(),
            position: pb.uniform(&format!("{name}.position"), &[tokens, d], 0.02),
            side: cfg
                .side_info
                .then(|| Linear::new(pb, &format!("{name}.side"), 2 * patch, d)),
            cond: Conditioning::new(pb, &format!("{name}.cond"), cfg),
            blocks: (0..cfg.blocks)
                .map(|i| TransformerBlock::new(pb, &format!("{name}.block{i}"), d, cfg.heads))
                .collect(),
            unembed: Linear::new(pb, &format!("{name}.unembed"), d, patch),
        })
    }

    pub fn uses_side_info(&self) -> bool {
        self.side.is_some()
    }

    /// `received` is `(B, 2 v_n)` equalised reals; `side` is `(mu, sigma)`.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        received: Var<'t>,
        alloc: &RateAllocation,
        snr_db: f64,
        side: Option<(Var<'t>, Var<'t>)>,
        temporal_len: usize,
    ) -> Result<Var<'t>> {
        let vn = self.cfg.max_budget();
        let s = received.shape();
        if s.len() != 2 || s[1] != 2 * vn || s[0] != alloc.frames() {
            return Err(Error::Allocation(format!(
                "received block {s:?} does not match {} frames of width {}",
                alloc.frames(),
                2 * vn
            )));
        }
        alloc.check(&self.cfg.values)?;
        let tape = received.tape();
        let b = s[0];
        let tokens = self.cfg.tokens(temporal_len)?;
        let d = self.cfg.d_model;
        let received = received * tape.constant(real_mask(&alloc.k_bar, vn));
        let select = tape.constant(one_hot(alloc, self.cfg.values.len()));
        let mut acc: Option<Var<'t>> = None;
        for (j, (input, &v)) in self.inputs.iter().zip(&self.cfg.values).enumerate() {
            if !alloc.token_index.contains(&j) {
                continue;
            }
            let picked = input.forward(p, received.narrow(1, 0, 2 * v)) * select.narrow(1, j, 1);
            acc = Some(match acc {
                Some(a) => a + picked,
                None => picked,
            });
        }
        let mut h = acc.expect("allocation selects at least one head").reshape(&[b, tokens, d])
            + p.get(self.position);
        match (&self.side, side) {
            (Some(proj), Some((mu, sigma))) => {
                let stats = Var::concat(&[mu, sigma.ln()], 1);
                h = h + proj.forward(p, patchify(stats, self.cfg.patch_len));
            }
            (None, None) => {}
            (Some(_), None) => {
                return Err(Error::Config("decoder was built for side information".into()))
            }
            (None, Some(_)) => {
                return Err(Error::Config("decoder was built without side information".into()))
            }
        }
        h = self.cond.apply(p, h, alloc, self.cfg.values.len(), snr_db);
        for block in &self.blocks {
            h = block.forward(p, h);
        }
        Ok(unpatchify(
            self.unembed.forward(p, h),
            self.latent_channels,
            self.cfg.patch_len,
        ))
    }
}

/// Encodes without recording gradients.
pub fn encode(
    y: &LatentFeatures,
    alloc: &RateAllocation,
    snr_db: f64,
    encoder: &JsccEncoder,
    params: &autograd::ParamStore,
) -> Result<ChannelFrame> {
    let tape = Tape::new();
    let p = params.bind_frozen(&tape);
    let out = encoder.forward(&p, tape.constant(to_tensor(&y.values)), alloc, snr_db)?;
    ChannelFrame::from_interleaved(&to_array2(&out.reals.value()), alloc.k_bar.clone())
}

/// Decodes without recording gradients.
pub fn decode(
    received: &ChannelFrame,
    alloc: &RateAllocation,
    snr_db: f64,
    side_info: Option<&GaussianParams>,
    decoder: &JsccDecoder,
    params: &autograd::ParamStore,
    temporal_len: usize,
) -> Result<LatentFeatures> {
    if received.k_bar != alloc.k_bar {
        return Err(Error::Allocation(
            "received frame mask disagrees with the allocation".into(),
        ));
    }
    let tape = Tape::new();
    let p = params.bind_frozen(&tape);
    let side = side_info.map(|g| (tape.constant(to_tensor(&g.mu)), tape.constant(to_tensor(&g.sigma))));
    let y = decoder.forward(
        &p,
        tape.constant(to_tensor(&received.to_interleaved())),
        alloc,
        snr_db,
        side,
        temporal_len,
    )?;
    Ok(LatentFeatures {
        values: to_array3(&y.value()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rate::allocate_rate;
    use ndarray::Array3;

    fn tiny() -> CodecConfig {
        CodecConfig {
            blocks: 1,
            d_model: 16,
            heads: 2,
            patch_len: 4,
            cond_width: 4,
            values: vec![2, 4, 6, 8],
            ..CodecConfig::default()
        }
    }

    fn latent(b: usize, m: usize, t: usize) -> LatentFeatures {
        LatentFeatures {
            values: Array3::from_shape_fn((b, m, t), |(i, c, k)| ((i * 7 + c * 3 + k) as f64 * 0.3).sin()),
        }
    }

    #[test]
    fn shapes_masks_and_power() {
        let cfg = tiny();
        let mut pb = ParamBuilder::new(1);
        let enc = JsccEncoder::new(&mut pb, "enc", &cfg, 3, 8).unwrap();
        let dec = JsccDecoder::new(&mut pb, "dec", &cfg, 3, 8).unwrap();
        let params = pb.finish();
        let alloc = allocate_rate(&[1.0, 4.0, 6.0, 100.0], 1.0, &cfg.values).unwrap();
        let y = latent(4, 3, 8);
        let frame = encode(&y, &alloc, 6.0, &enc, &params).unwrap();
        assert_eq!(frame.symbols.dim(), (4, 8));
        assert_eq!(frame.k_bar, vec![2, 4, 6, 8]);
        assert!((frame.mean_power() - 1.0).abs() < 1e-5);
        for (s, m) in frame.symbols.iter().zip(frame.mask.iter()) {
            if !m {
                assert_eq!(*s, Complex64::default());
            }
        }
        let side = GaussianParams {
            mu: Array3::zeros((4, 3, 8)),
            sigma: Array3::ones((4, 3, 8)),
        };
        let out = decode(&frame, &alloc, 6.0, Some(&side), &dec, &params, 8).unwrap();
        assert_eq!(out.values.dim(), (4, 3, 8));
        assert!(decode(&frame, &alloc, 6.0, None, &dec, &params, 8).is_err());
    }

    #[test]
    fn masked_positions_do_not_reach_the_decoder() {
        let cfg = CodecConfig {
            side_info: false,
            ..tiny()
        };
        let mut pb = ParamBuilder::new(2);
        let dec = JsccDecoder::new(&mut pb, "dec", &cfg, 3, 8).unwrap();
        let params = pb.finish();
        let alloc = RateAllocation::from_indices(vec![0, 2], &cfg.values).unwrap();
        let reals = Array2::from_shape_fn((2, 16), |(b, j)| (b + j) as f64 * 0.1);
        let frame = ChannelFrame::from_interleaved(&reals, alloc.k_bar.clone()).unwrap();
        let base = decode(&frame, &alloc, 3.0, None, &dec, &params, 8).unwrap();
        // Bypass ChannelFrame's zeroing to inject garbage past the budgets.
        let tape = Tape::new();
        let p = params.bind_frozen(&tape);
        let mut noisy = frame.to_interleaved();
        noisy[[0, 10]] = 123.0;
        noisy[[1, 15]] = -7.0;
        let y = dec
            .forward(&p, tape.constant(to_tensor(&noisy)), &alloc, 3.0, None, 8)
            .unwrap();
        assert_eq!(to_array3(&y.value()), base.values);
    }

    #[test]
    fn rejects_budget_outside_values() {
        let cfg = tiny();
        let mut pb = ParamBuilder::new(1);
        let enc = JsccEncoder::new(&mut pb, "enc", &cfg, 3, 8).unwrap();
        let params = pb.finish();
        let bad = RateAllocation {
            k_raw: ndarray::arr1(&[5.0]),
            k_bar: vec![5],
            token_index: vec![1],
        };
        assert!(encode(&latent(1, 3, 8), &bad, 0.0, &enc, &params).is_err());
    }

    #[test]
    fn infeasible_head_bank_is_rejected() {
        let cfg = CodecConfig {
            values: vec![4, 9],
            ..tiny()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn serialization_roundtrip() {
        let reals = Array2::from_shape_fn((3, 8), |(b, j)| (b as f64 - j as f64) * 0.25);
        let frame = ChannelFrame::from_interleaved(&reals, vec![1, 4, 2]).unwrap();
        let bytes = frame.to_bytes().unwrap();
        assert_eq!(bytes.len(), 8 + 6 + 3 * 4 * 8);
        assert_eq!(ChannelFrame::from_bytes(&bytes).unwrap(), frame);
        assert!(ChannelFrame::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn snr_token_changes_symbols() {
        let cfg = tiny();
        let mut pb = ParamBuilder::new(4);
        let enc = JsccEncoder::new(&mut pb, "enc", &cfg, 3, 8).unwrap();
        let params = pb.finish();
        let alloc = RateAllocation::uniform(2, 3, &cfg.values).unwrap();
        let a = encode(&latent(2, 3, 8), &alloc, 0.0, &enc, &params).unwrap();
        let b = encode(&latent(2, 3, 8), &alloc, 18.0, &enc, &params).unwrap();
        let diff = a
            .symbols
            .iter()
            .zip(b.symbols.iter())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max);
        assert!(diff > 0.0);
    }
}
