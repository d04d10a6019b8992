//! Hyperprior entropy model.
//!
//! `h_a` maps the latent `y` to side information `z` (two more stride-2
//! stages), `h_s` maps `z` back to a Gaussian mean and scale for every
//! element of `y`. Element likelihoods are Gaussian masses over unit boxes,
//! and `z` itself is priced under a learned per-channel monotone CDF.

use autograd::{special, Bound, ParamId, ParamStore, Tape, Tensor, Var};
use ndarray::{Array1, Array3, Axis, IxDyn, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Conv1d, ParamBuilder, Upsample1d};
use crate::rangecoder::CdfTable;
use crate::tensor::{to_array3, to_tensor};

/// Lower clamp on predicted scales.
pub const SIGMA_MIN: f64 = 1e-6;
/// Likelihood floor; caps any element at 30 bits.
pub const P_FLOOR: f64 = 1.0 / (1u64 << 30) as f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntropyConfig {
    /// Hyper-latent channel count `N`.
    pub hyper_channels: usize,
    pub kernel_size: usize,
    /// Hidden widths of the per-channel CDF network.
    pub prior_filters: Vec<usize>,
    /// Initial spread of the factorised prior.
    pub prior_init_scale: f64,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        Self {
            hyper_channels: 64,
            kernel_size: 5,
            prior_filters: vec![3, 3, 3],
            prior_init_scale: 10.0,
        }
    }
}

impl EntropyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hyper_channels == 0 {
            return Err(Error::Config("hyper_channels must be >= 1".into()));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::Config("entropy kernel size must be odd".into()));
        }
        if self.prior_filters.contains(&0) || self.prior_init_scale <= 0.0 {
            return Err(Error::Config("prior filters and init scale must be positive".into()));
        }
        Ok(())
    }
}

/// Side information `z` with its relaxed and rounded variants.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperLatent {
    pub z: Array3<f64>,
    pub z_relaxed: Array3<f64>,
    pub z_rounded: Array3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantMode {
    /// Additive uniform noise in `[-1/2, 1/2)`.
    Train,
    /// Nearest-integer rounding.
    Eval,
}

/// Relaxes `z` with fresh uniform noise or rounds it.
pub fn relax_or_round<R: Rng>(z: &Array3<f64>, mode: QuantMode, rng: &mut R) -> Array3<f64> {
    match mode {
        QuantMode::Train => z.mapv(|v| v + rng.gen_range(-0.5..0.5)),
        QuantMode::Eval => z.mapv(f64::round),
    }
}

impl HyperLatent {
    pub fn new<R: Rng>(z: Array3<f64>, rng: &mut R) -> Self {
        let z_relaxed = relax_or_round(&z, QuantMode::Train, rng);
        let z_rounded = relax_or_round(&z, QuantMode::Eval, rng);
        Self {
            z,
            z_relaxed,
            z_rounded,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mu: Array3<f64>,
    pub sigma: Array3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyEstimate {
    pub bits_per_element: Array3<f64>,
    pub bits_per_frame: Array1<f64>,
}

impl EntropyEstimate {
    pub fn from_bits(bits_per_element: Array3<f64>) -> Self {
        let bits_per_frame = bits_per_element
            .sum_axis(Axis(2))
            .sum_axis(Axis(1));
        Self {
            bits_per_element,
            bits_per_frame,
        }
    }

    pub fn total(&self) -> f64 {
        self.bits_per_frame.sum()
    }
}

/// `h_a`: `(B, M, T)` to `(B, N, T/4)`.
#[derive(Debug, Clone)]
pub struct HyperAnalysis {
    first: Conv1d,
    second: Conv1d,
    latent_channels: usize,
}

impl HyperAnalysis {
    pub fn new(pb: &mut ParamBuilder, name: &str, latent_channels: usize, cfg: &EntropyConfig) -> Self {
        let (n, k) = (cfg.hyper_channels, cfg.kernel_size);
        Self {
            first: Conv1d::new(pb, &format!("{name}.conv1"), latent_channels, n, k, 2),
            second: Conv1d::new(pb, &format!("{name}.conv2"), n, n, k, 2),
            latent_channels,
        }
    }

    /// The last layer is linear: a trailing ReLU would pin `z >= 0` and
    /// leave whole channels dead at zero.
    pub fn forward<'t>(&self, p: &Bound<'t>, y: Var<'t>) -> Result<Var<'t>> {
        let s = y.shape();
        if s.len() != 3 || s[1] != self.latent_channels || !s[2].is_multiple_of(4) || s[2] == 0 {
            return Err(Error::Shape(format!(
                "hyper analysis expects (B, {}, T) with T divisible by 4, got {s:?}",
                self.latent_channels
            )));
        }
        Ok(self.second.forward(p, self.first.forward(p, y).relu()))
    }
}

/// `h_s`: `(B, N, T/4)` to mean and scale, each `(B, M, T)`.
#[derive(Debug, Clone)]
pub struct HyperSynthesis {
    first: Upsample1d,
    second: Upsample1d,
    head: Conv1d,
    latent_channels: usize,
    hyper_channels: usize,
}

impl HyperSynthesis {
    pub fn new(pb: &mut ParamBuilder, name: &str, latent_channels: usize, cfg: &EntropyConfig) -> Self {
        let (n, k) = (cfg.hyper_channels, cfg.kernel_size);
        Self {
            first: Upsample1d::new(pb, &format!("{name}.up1"), n, n, k),
            second: Upsample1d::new(pb, &format!("{name}.up2"), n, n, k),
            head: Conv1d::new(pb, &format!("{name}.head"), n, 2 * latent_channels, 1, 1),
            latent_channels,
            hyper_channels: n,
        }
    }

    /// Returns `(mu, sigma)` with `sigma >= SIGMA_MIN`.
    pub fn forward<'t>(&self, p: &Bound<'t>, z: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let s = z.shape();
        if s.len() != 3 || s[1] != self.hyper_channels {
            return Err(Error::Shape(format!(
                "hyper synthesis expects (B, {}, T), got {s:?}",
                self.hyper_channels
            )));
        }
        let h = self.second.forward(p, self.first.forward(p, z).relu()).relu();
        let out = self.head.forward(p, h);
        let m = self.latent_channels;
        let mu = out.narrow(1, 0, m);
        let sigma = out.narrow(1, m, m).softplus().clamp_min(SIGMA_MIN);
        Ok((mu, sigma))
    }
}

/// Output squashing of the CDF network. `Logistic` is the learned default;
/// `Gaussian` turns a single identity knot into the unit normal CDF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PriorOutput {
    #[default]
    Logistic,
    Gaussian,
}

#[derive(Debug, Clone)]
struct PriorLayer {
    /// Raw matrix, `(N, d_out, d_in)`; the effective weights are its softplus.
    matrix: ParamId,
    bias: ParamId,
    /// `(N, d_out, 1)`; absent on the output layer.
    factor: Option<ParamId>,
}

/// Per-channel monotone CDF network `c(x) = g_K(H_K ... g_1(H_1 x + b_1) ... + b_K)`.
///
/// Monotonicity holds by construction: matrices pass through softplus and
/// the gating factors through `tanh`, whose range keeps each hidden map
/// nondecreasing.
#[derive(Debug, Clone)]
pub struct FactorizedPrior {
    layers: Vec<PriorLayer>,
    channels: usize,
    output: PriorOutput,
}

impl FactorizedPrior {
    pub fn new(pb: &mut ParamBuilder, name: &str, channels: usize, cfg: &EntropyConfig) -> Self {
        let widths: Vec<usize> = std::iter::once(1)
            .chain(cfg.prior_filters.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        let depth = widths.len() - 1;
        let scale = cfg.prior_init_scale.powf(1.0 / depth as f64);
        let layers = (0..depth)
            .map(|k| {
                let (din, dout) = (widths[k], widths[k + 1]);
                let init = special::softplus_inverse(1.0 / scale / din as f64);
                let matrix = pb.constant(&format!("{name}.matrix{k}"), &[channels, dout, din], init);
                let bias = pb.uniform(&format!("{name}.bias{k}"), &[channels, dout, 1], 0.5);
                let factor =
                    (k + 1 < depth).then(|| pb.zeros(&format!("{name}.factor{k}"), &[channels, dout, 1]));
                PriorLayer {
                    matrix,
                    bias,
                    factor,
                }
            })
            .collect();
        Self {
            layers,
            channels,
            output: PriorOutput::Logistic,
        }
    }

    /// A single identity knot per channel with a Gaussian output: the
    /// implied CDF is exactly `Φ`.
    pub fn unit_gaussian(pb: &mut ParamBuilder, name: &str, channels: usize) -> Self {
        let init = special::softplus_inverse(1.0);
        let matrix = pb.constant(&format!("{name}.matrix0"), &[channels, 1, 1], init);
        let bias = pb.zeros(&format!("{name}.bias0"), &[channels, 1, 1]);
        Self {
            layers: vec![PriorLayer {
                matrix,
                bias,
                factor: None,
            }],
            channels,
            output: PriorOutput::Gaussian,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Pre-squash CDF value for samples laid out as `(N, 1, S)`.
    fn logits<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        let mut h = x;
        for layer in &self.layers {
            let w = p.get(layer.matrix).softplus();
            h = w.bmm(h) + p.get(layer.bias);
            if let Some(f) = layer.factor {
                h = h + p.get(f).tanh() * h.tanh();
            }
        }
        h
    }

    /// Box mass `c(z + 1/2) - c(z - 1/2)` for `z` shaped `(B, N, T)`,
    /// floored at `P_FLOOR`.
    pub fn likelihood<'t>(&self, p: &Bound<'t>, z: Var<'t>) -> Result<Var<'t>> {
        let s = z.shape();
        if s.len() != 3 || s[1] != self.channels {
            return Err(Error::Shape(format!(
                "factorized prior expects (B, {}, T), got {s:?}",
                self.channels
            )));
        }
        let (b, n, t) = (s[0], s[1], s[2]);
        let flat = z.permute(&[1, 0, 2]).reshape(&[n, 1, b * t]);
        let both = Var::concat(&[flat.add_scalar(0.5), flat.add_scalar(-0.5)], 2);
        let logits = self.logits(p, both);
        let upper = logits.narrow(2, 0, b * t);
        let lower = logits.narrow(2, b * t, b * t);
        let mass = match self.output {
            PriorOutput::Logistic => upper.logistic_box_mass(lower),
            PriorOutput::Gaussian => upper.normal_box_mass(lower),
        };
        Ok(mass
            .clamp_min(P_FLOOR)
            .reshape(&[n, b, t])
            .permute(&[1, 0, 2]))
    }

    /// Evaluates the implied CDF for each channel at the given points.
    /// Returns `(N, points)`.
    pub fn cdf(&self, params: &ParamStore, points: &[f64]) -> ndarray::Array2<f64> {
        let tape = Tape::new();
        let p = params.bind_frozen(&tape);
        let s = points.len();
        let x = Tensor::from_shape_fn(IxDyn(&[self.channels, 1, s]), |i| points[i[2]]);
        let logits = self.logits(&p, tape.constant(x)).value();
        let squash = |v: f64| match self.output {
            PriorOutput::Logistic => special::sigmoid(v),
            PriorOutput::Gaussian => special::normal_cdf(v),
        };
        ndarray::Array2::from_shape_fn((self.channels, s), |(c, i)| squash(logits[[c, 0, i]]))
    }

    /// Fails when the parameters do not describe a nondecreasing CDF,
    /// which can only happen through corrupted (non-finite) values.
    pub fn validate(&self, params: &ParamStore) -> Result<()> {
        for layer in &self.layers {
            let ids = [Some(layer.matrix), Some(layer.bias), layer.factor];
            for id in ids.into_iter().flatten() {
                if params.get(id).iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonMonotonePrior(format!(
                        "non-finite value in {}",
                        params.name(id)
                    )));
                }
            }
        }
        let grid: Vec<f64> = (-64..=64).map(|i| i as f64 * 0.5).collect();
        let cdf = self.cdf(params, &grid);
        for (c, row) in cdf.outer_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite())
                || row.windows(2).into_iter().any(|w| w[1] < w[0])
            {
                return Err(Error::NonMonotonePrior(format!("channel {c}")));
            }
        }
        Ok(())
    }

    /// Exports 16-bit range-coding tables. Each channel's support is the
    /// integer interval holding all but `tail_mass` of its probability;
    /// the rest is left to the escape symbol.
    pub fn cdf_tables(&self, params: &ParamStore, tail_mass: f64) -> Result<Vec<CdfTable>> {
        self.validate(params)?;
        const REACH: i32 = 2048;
        let edges: Vec<f64> = (-REACH..=REACH + 1).map(|v| v as f64 - 0.5).collect();
        let cdf = self.cdf(params, &edges);
        let mut tables = Vec::with_capacity(self.channels);
        for row in cdf.outer_iter() {
            let half = tail_mass / 2.0;
            let lo = (0..edges.len() - 1)
                .find(|&i| row[i + 1] > half)
                .unwrap_or(0);
            let hi = (0..edges.len() - 1)
                .rev()
                .find(|&i| 1.0 - row[i] > half)
                .unwrap_or(edges.len() - 2)
                .max(lo);
            let pmf: Vec<f64> = (lo..=hi).map(|i| (row[i + 1] - row[i]).max(0.0)).collect();
            tables.push(CdfTable::from_pmf(lo as i32 - REACH, &pmf)?);
        }
        Ok(tables)
    }
}

/// `p_i = Φ((y-μ+½)/σ) - Φ((y-μ-½)/σ)`, floored at `P_FLOOR`.
pub fn likelihood_y_var<'t>(y: Var<'t>, mu: Var<'t>, sigma: Var<'t>) -> Var<'t> {
    let centered = y - mu;
    let upper = centered.add_scalar(0.5) / sigma;
    let lower = centered.add_scalar(-0.5) / sigma;
    upper.normal_box_mass(lower).clamp_min(P_FLOOR)
}

/// `-log2 p` elementwise.
pub fn bits_var(p: Var<'_>) -> Var<'_> {
    p.log2().neg()
}

fn check_same(what: &str, a: &Array3<f64>, b: &Array3<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn likelihood_y(y: &Array3<f64>, mu: &Array3<f64>, sigma: &Array3<f64>) -> Result<Array3<f64>> {
    check_same("likelihood_y mean", y, mu)?;
    check_same("likelihood_y scale", y, sigma)?;
    let mut p = Array3::zeros(y.raw_dim());
    Zip::from(&mut p)
        .and(y)
        .and(mu)
        .and(sigma)
        .for_each(|p, &y, &m, &s| {
            let c = y - m;
            *p = special::normal_box_mass((c + 0.5) / s, (c - 0.5) / s).max(P_FLOOR);
        });
    Ok(p)
}

pub fn entropy_y(y: &Array3<f64>, mu: &Array3<f64>, sigma: &Array3<f64>) -> Result<EntropyEstimate> {
    let p = likelihood_y(y, mu, sigma)?;
    Ok(EntropyEstimate::from_bits(p.mapv(|p| -p.log2())))
}

/// Bits of `z` under the factorised prior, per element and per frame.
pub fn prior_bits(
    z: &Array3<f64>,
    prior: &FactorizedPrior,
    params: &ParamStore,
) -> Result<EntropyEstimate> {
    prior.validate(params)?;
    let tape = Tape::new();
    let p = params.bind_frozen(&tape);
    let mass = prior.likelihood(&p, tape.constant(to_tensor(z)))?;
    Ok(EntropyEstimate::from_bits(to_array3(&bits_var(mass).value())))
}

/// Hyper codec plus factorised prior, built together.
#[derive(Debug, Clone)]
pub struct EntropyModel {
    pub hyper_analysis: HyperAnalysis,
    pub hyper_synthesis: HyperSynthesis,
    pub prior: FactorizedPrior,
}

impl EntropyModel {
    pub fn new(pb: &mut ParamBuilder, latent_channels: usize, cfg: &EntropyConfig) -> Self {
        Self {
            hyper_analysis: HyperAnalysis::new(pb, "ha", latent_channels, cfg),
            hyper_synthesis: HyperSynthesis::new(pb, "hs", latent_channels, cfg),
            prior: FactorizedPrior::new(pb, "prior", cfg.hyper_channels, cfg),
        }
    }
}

/// Evaluates `h_a` without recording gradients and attaches both variants.
pub fn hyper_analyze<R: Rng>(
    y: &Array3<f64>,
    ha: &HyperAnalysis,
    params: &ParamStore,
    rng: &mut R,
) -> Result<HyperLatent> {
    let tape = Tape::new();
    let p = params.bind_frozen(&tape);
    let z = ha.forward(&p, tape.constant(to_tensor(y)))?;
    Ok(HyperLatent::new(to_array3(&z.value()), rng))
}

/// Evaluates `h_s` without recording gradients.
pub fn hyper_synthesize(
    z: &Array3<f64>,
    hs: &HyperSynthesis,
    params: &ParamStore,
) -> Result<GaussianParams> {
    let tape = Tape::new();
    let p = params.bind_frozen(&tape);
    let (mu, sigma) = hs.forward(&p, tape.constant(to_tensor(z)))?;
    Ok(GaussianParams {
        mu: to_array3(&mu.value()),
        sigma: to_array3(&sigma.value()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn phi(x: f64) -> f64 {
        0.5 * (1.0 + libm_erf(x / std::f64::consts::SQRT_2))
    }

    // Independent erf via its Maclaurin series, good to ~1e-15 for |x| < 1.
    fn libm_erf(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        for n in 1..60 {
            term *= -x * x / n as f64;
            sum += term / (2 * n + 1) as f64;
        }
        2.0 / std::f64::consts::PI.sqrt() * sum
    }

    #[test]
    fn likelihood_at_the_mean() {
        let y = Array3::zeros((1, 1, 1));
        let p = likelihood_y(&y, &y, &Array3::ones((1, 1, 1))).unwrap();
        let expected = phi(0.5) - phi(-0.5);
        assert!((p[[0, 0, 0]] - expected).abs() < 1e-12);
        assert!((expected - 0.382925).abs() < 1e-6);
    }

    #[test]
    fn frame_bits_for_unit_scale() {
        let y = Array3::zeros((2, 128, 128));
        let est = entropy_y(&y, &y, &Array3::ones((2, 128, 128))).unwrap();
        let per = -(phi(0.5) - phi(-0.5)).log2();
        assert!((est.bits_per_frame[0] - 16384.0 * per).abs() < 1e-6);
        // 128 * 128 * 1.3848665... = 22689.65 bits.
        assert!((est.bits_per_frame[0] - 22689.6533).abs() < 1e-3);
    }

    #[test]
    fn tiny_sigma_gives_zero_bits() {
        let y = Array3::zeros((1, 1, 1));
        let est = entropy_y(&y, &y, &Array3::from_elem((1, 1, 1), SIGMA_MIN)).unwrap();
        assert_eq!(est.bits_per_element[[0, 0, 0]], 0.0);
    }

    #[test]
    fn far_tail_is_floored() {
        let y = Array3::from_elem((1, 1, 1), 1e6);
        let est = entropy_y(&y, &Array3::zeros((1, 1, 1)), &Array3::ones((1, 1, 1))).unwrap();
        assert!((est.bits_per_element[[0, 0, 0]] - 30.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let a = Array3::zeros((1, 2, 3));
        let b = Array3::zeros((1, 3, 2));
        assert!(matches!(likelihood_y(&a, &b, &a), Err(Error::Shape(_))));
    }

    #[test]
    fn relax_and_round() {
        let z = Array3::from_elem((1, 1, 1), 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(relax_or_round(&z, QuantMode::Eval, &mut rng)[[0, 0, 0]], 0.0);
        let r = relax_or_round(&z, QuantMode::Train, &mut rng)[[0, 0, 0]];
        assert!((-0.1..0.9).contains(&r));
    }

    #[test]
    fn unit_gaussian_prior_matches_likelihood() {
        let mut pb = ParamBuilder::new(0);
        let prior = FactorizedPrior::unit_gaussian(&mut pb, "prior", 2);
        let params = pb.finish();
        let bits = prior_bits(&Array3::zeros((1, 2, 3)), &prior, &params).unwrap();
        let expected = -(phi(0.5) - phi(-0.5)).log2();
        for &b in bits.bits_per_element.iter() {
            assert!((b - expected).abs() < 1e-12);
        }
        assert!((expected - 1.385).abs() < 1e-3);
    }

    #[test]
    fn learned_prior_is_monotone_and_tabulates() {
        let mut pb = ParamBuilder::new(2);
        let cfg = EntropyConfig::default();
        let prior = FactorizedPrior::new(&mut pb, "prior", 4, &cfg);
        let params = pb.finish();
        prior.validate(&params).unwrap();
        let tables = prior.cdf_tables(&params, 1e-9).unwrap();
        assert_eq!(tables.len(), 4);
        for t in &tables {
            assert!(t.symbols() > 3);
        }
    }

    #[test]
    fn corrupted_prior_is_rejected() {
        let mut pb = ParamBuilder::new(2);
        let prior = FactorizedPrior::new(&mut pb, "prior", 2, &EntropyConfig::default());
        let mut params = pb.finish();
        let id = params.id_of("prior.matrix1").unwrap();
        params.get_mut(id)[[0, 0, 0]] = f64::NAN;
        assert!(matches!(
            prior_bits(&Array3::zeros((1, 2, 1)), &prior, &params),
            Err(Error::NonMonotonePrior(_))
        ));
    }

    #[test]
    fn hyper_shapes() {
        let cfg = EntropyConfig {
            hyper_channels: 4,
            ..EntropyConfig::default()
        };
        let mut pb = ParamBuilder::new(0);
        let model = EntropyModel::new(&mut pb, 6, &cfg);
        let params = pb.finish();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = Array3::from_shape_fn((2, 6, 32), |(b, c, t)| ((b + c * 3 + t) as f64).sin());
        let hl = hyper_analyze(&y, &model.hyper_analysis, &params, &mut rng).unwrap();
        assert_eq!(hl.z.shape(), &[2, 4, 8]);
        let g = hyper_synthesize(&hl.z_rounded, &model.hyper_synthesis, &params).unwrap();
        assert_eq!(g.mu.shape(), &[2, 6, 32]);
        assert!(g.sigma.iter().all(|&s| s >= SIGMA_MIN));
    }
}
