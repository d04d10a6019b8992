//! The full transmitter/receiver chain, in a differentiable training form
//! and a discrete evaluation form.
//!
//! Training: `x -> g_a -> y`, `z~ = h_a(y) + U`, `(mu, sigma) = h_s(z~)`,
//! rates from the two entropy models, `k_bar` from the per-frame rate of
//! `y`, then the JSCC encoder, a simulated channel `s * keep + n_eff`
//! (gains and noise are constants of the step), the JSCC decoder and
//! `g_s`. Evaluation rounds `z`, range-codes it, and sends complex symbols
//! through the real channel simulator with zero-forcing equalisation.

use autograd::{Bound, ParamStore, Tape, Tensor, Var};
use ndarray::{Array1, Array3, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{effective_channel, equalize, transmit, ChannelState, EqualizeStats};
use crate::config::ModelConfig;
use crate::corpus::SpeechBatch;
use crate::entropy::{bits_var, entropy_y, likelihood_y_var, EntropyModel, GaussianParams};
use crate::error::{Error, Result};
use crate::jscc::{decode, encode, ChannelFrame, JsccDecoder, JsccEncoder};
use crate::layers::ParamBuilder;
use autograd::ParamId;
use crate::mfcc::Mfcc;
use crate::objective::{distortion_var, rd_loss_var, RdWeights};
use crate::rate::{allocate_rate, RateAllocation};
use crate::side::{account_bandwidth, decode_side, encode_side, BandwidthReport, SideBitstream};
use crate::tensor::{to_array1, to_array3, to_tensor};
use crate::transform::{AnalysisTransform, LatentFeatures, SynthesisTransform};

/// Probability left to the escape symbol in each side-link table.
pub const SIDE_TAIL_MASS: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub analysis: AnalysisTransform,
    pub synthesis: SynthesisTransform,
    pub entropy: EntropyModel,
    pub encoder: JsccEncoder,
    pub decoder: JsccDecoder,
    pub mfcc: Mfcc,
    pub lambda_gain: Option<LambdaGain>,
}

/// Per-channel gain `exp(a * log10 λ + b)` applied to `y` before
/// quantisation and removed after the JSCC decoder. Starts at 1.
#[derive(Debug, Clone)]
pub struct LambdaGain {
    slope: ParamId,
    offset: ParamId,
}

impl LambdaGain {
    pub fn new(pb: &mut ParamBuilder, channels: usize) -> Self {
        Self {
            slope: pb.zeros("lambda_gain.slope", &[1, channels, 1]),
            offset: pb.zeros("lambda_gain.offset", &[1, channels, 1]),
        }
    }

    /// `(1, M, 1)` log-gain for one λ.
    pub fn log_gain<'t>(&self, p: &Bound<'t>, lambda: f64) -> Var<'t> {
        p.get(self.slope).mul_scalar(lambda.log10()) + p.get(self.offset)
    }
}

fn check_lambda(lambda: Option<f64>) -> Result<f64> {
    match lambda {
        Some(l) if l.is_finite() && l > 0.0 => Ok(l),
        other => Err(Error::Config(format!(
            "a lambda-conditioned model needs a finite lambda > 0, got {other:?}"
        ))),
    }
}

/// Everything the training forward needs besides parameters and input.
#[derive(Debug, Clone)]
pub struct TrainContext {
    /// Value fed to the SNR tokens.
    pub snr_db: f64,
    /// Channel realisation for the batch; its SNR sets the noise power.
    pub channel: ChannelState,
    /// Seeds the latent noise and the channel noise.
    pub noise_seed: u64,
    pub weights: RdWeights,
    /// Fixes the allocation instead of deriving it from the rate.
    pub alloc: Option<RateAllocation>,
}

pub struct TrainForward<'t> {
    pub loss: Var<'t>,
    /// Mean bits of `y` per frame.
    pub bits_y: Var<'t>,
    /// Mean bits of `z~` per frame.
    pub bits_z: Var<'t>,
    pub dist_time: Var<'t>,
    pub dist_mfcc: Var<'t>,
    pub x_hat: Var<'t>,
    pub alloc: RateAllocation,
}

#[derive(Debug, Clone)]
pub struct InferOptions {
    pub channel: ChannelState,
    /// SNR token value; defaults to the channel SNR.
    pub snr_token: Option<f64>,
    /// Operating point of a lambda-conditioned model; ignored otherwise.
    pub lambda: Option<f64>,
    pub eta_y: f64,
    pub seed: u64,
    /// Fixes the allocation instead of deriving it from the rate.
    pub alloc: Option<RateAllocation>,
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub x_hat: Array3<f64>,
    pub alloc: RateAllocation,
    /// Estimated bits of `y` per frame under the hyperprior.
    pub bits_y: Array1<f64>,
    pub side: Option<SideBitstream>,
    pub bandwidth: BandwidthReport,
    pub equalize: EqualizeStats,
    /// Mean power per valid complex symbol before the channel.
    pub tx_power: f64,
}

fn uniform_noise(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_shape_simple_fn(IxDyn(shape), || rng.gen_range(-0.5..0.5))
}

fn frame_weights(batch: &SpeechBatch) -> Vec<f64> {
    let w: Vec<f64> = batch.padded.iter().map(|&p| if p { 0.0 } else { 1.0 }).collect();
    // An all-padded batch still has to be scored.
    if w.iter().all(|&v| v == 0.0) {
        vec![1.0; w.len()]
    } else {
        w
    }
}

impl Model {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        let mut pb = ParamBuilder::new(seed);
        let model = Self::build(&mut pb, cfg)?;
        Ok((model, pb.finish()))
    }

    /// Registers every parameter with `pb`, in a fixed order.
    pub fn build(pb: &mut ParamBuilder, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let m = cfg.transform.channels;
        let t = cfg.latent_length();
        Ok(Self {
            cfg: cfg.clone(),
            analysis: AnalysisTransform::new(pb, "ga", &cfg.transform),
            synthesis: SynthesisTransform::new(pb, "gs", &cfg.transform),
            entropy: EntropyModel::new(pb, m, &cfg.entropy),
            encoder: JsccEncoder::new(pb, "enc", &cfg.codec, m, t)?,
            decoder: JsccDecoder::new(pb, "dec", &cfg.codec, m, t)?,
            mfcc: Mfcc::new(&cfg.mfcc)?,
            lambda_gain: cfg.lambda_conditioning.then(|| LambdaGain::new(pb, m)),
        })
    }

    pub fn side_info(&self) -> bool {
        self.decoder.uses_side_info()
    }

    fn check_batch(&self, batch: &SpeechBatch) -> Result<()> {
        if batch.frame_length() != self.cfg.frame_length || batch.frames.shape()[1] != 1 {
            return Err(Error::Shape(format!(
                "model expects (B, 1, {}) frames, got {:?}",
                self.cfg.frame_length,
                batch.frames.shape()
            )));
        }
        Ok(())
    }

    /// Differentiable forward pass. `x` is `(B, 1, L)`.
    pub fn forward_train<'t>(
        &self,
        p: &Bound<'t>,
        x: Var<'t>,
        weights: &[f64],
        ctx: &TrainContext,
    ) -> Result<TrainForward<'t>> {
        let tape = x.tape();
        let s = x.shape();
        let (b, l) = (s[0], s[2]);
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.noise_seed);
        let mut y = self.analysis.forward(p, x)?;
        let log_gain = self.lambda_gain.as_ref().map(|g| g.log_gain(p, ctx.weights.lambda));
        if let Some(lg) = log_gain {
            y = y * lg.exp();
        }
        let y_in = if self.cfg.latent_noise {
            y + tape.constant(uniform_noise(&y.shape(), &mut rng))
        } else {
            y
        };
        let z = self.entropy.hyper_analysis.forward(p, y)?;
        let z_tilde = z + tape.constant(uniform_noise(&z.shape(), &mut rng));
        let (mu, sigma) = self.entropy.hyper_synthesis.forward(p, z_tilde)?;

        let per_frame = |bits: Var<'t>| {
            let n: usize = bits.shape()[1..].iter().product();
            bits.reshape(&[b, n]).sum_axis(1, false)
        };
        let frame_bits_y = per_frame(bits_var(likelihood_y_var(y_in, mu, sigma)));
        let bits_y = frame_bits_y.mean();
        let bits_z = per_frame(bits_var(self.entropy.prior.likelihood(p, z_tilde)?)).mean();

        let alloc = match &ctx.alloc {
            Some(a) => a.clone(),
            None => allocate_rate(
                to_array1(&frame_bits_y.value()).as_slice().expect("contiguous"),
                ctx.weights.eta_y,
                &self.cfg.codec.values,
            )?,
        };
        let sent = self.encoder.forward(p, y_in, &alloc, ctx.snr_db)?;
        let (keep, n_eff) = effective_channel(&ctx.channel, &sent.mask, &mut rng)?;
        let received = sent.reals * tape.constant(to_tensor(&keep)) + tape.constant(to_tensor(&n_eff));
        let side = self.side_info().then_some((mu, sigma));
        let mut y_hat = self
            .decoder
            .forward(p, received, &alloc, ctx.snr_db, side, self.cfg.latent_length())?;
        if let Some(lg) = log_gain {
            y_hat = y_hat * lg.neg().exp();
        }
        let x_hat = self.synthesis.forward(p, y_hat)?;
        let (dist_time, dist_mfcc) =
            distortion_var(x.reshape(&[b, l]), x_hat.reshape(&[b, l]), weights, &self.mfcc)?;
        Ok(TrainForward {
            loss: rd_loss_var(bits_y, bits_z, dist_time, dist_mfcc, ctx.weights),
            bits_y,
            bits_z,
            dist_time,
            dist_mfcc,
            x_hat,
            alloc,
        })
    }

    /// Training forward on a fresh tape plus gradients in store order.
    pub fn loss_and_gradients(
        &self,
        params: &ParamStore,
        batch: &SpeechBatch,
        ctx: &TrainContext,
    ) -> Result<(StepValues, Vec<Tensor>)> {
        self.check_batch(batch)?;
        let tape = Tape::new();
        let p = params.bind(&tape);
        let x = tape.constant(to_tensor(&batch.frames));
        let out = self.forward_train(&p, x, &frame_weights(batch), ctx)?;
        let values = StepValues {
            bits_y: out.bits_y.item(),
            bits_z: out.bits_z.item(),
            dist_time: out.dist_time.item(),
            dist_mfcc: out.dist_mfcc.item(),
            total: out.loss.item(),
            alloc: out.alloc.clone(),
        };
        let grads = tape.backward(out.loss);
        Ok((values, p.gradients(&grads)))
    }

    /// Gain tensor for a lambda-conditioned model, `None` otherwise.
    fn gain(&self, p: &Bound<'_>, lambda: Option<f64>) -> Result<Option<Tensor>> {
        match &self.lambda_gain {
            Some(g) => Ok(Some(g.log_gain(p, check_lambda(lambda)?).exp().value().as_ref().clone())),
            None => Ok(None),
        }
    }

    /// Discrete transmission of a batch.
    pub fn infer(&self, params: &ParamStore, batch: &SpeechBatch, opts: &InferOptions) -> Result<Inference> {
        self.check_batch(batch)?;
        let tape = Tape::new();
        let p = params.bind_frozen(&tape);
        let gain = self.gain(&p, opts.lambda)?;
        let mut y = self.analysis.forward(&p, tape.constant(to_tensor(&batch.frames)))?;
        if let Some(g) = &gain {
            y = y * tape.constant(g.clone());
        }
        let z = self.entropy.hyper_analysis.forward(&p, y)?;
        let y = to_array3(&y.value());
        let y = if self.cfg.latent_noise { y.mapv(f64::round) } else { y };
        let z_hat = to_array3(&z.value()).mapv(f64::round);

        // The receiver only sees z_hat through the side link.
        let (side, z_rx) = if self.side_info() {
            let tables = self.entropy.prior.cdf_tables(params, SIDE_TAIL_MASS)?;
            let bs = encode_side(&z_hat, &tables)?;
            let dim = z_hat.dim();
            let z_rx = decode_side(&bs.to_container(), &tables, [dim.0, dim.1, dim.2])?;
            (Some(bs), z_rx)
        } else {
            (None, z_hat)
        };
        let (mu, sigma) = self.entropy.hyper_synthesis.forward(&p, tape.constant(to_tensor(&z_rx)))?;
        let gauss = GaussianParams {
            mu: to_array3(&mu.value()),
            sigma: to_array3(&sigma.value()),
        };
        let bits_y = entropy_y(&y, &gauss.mu, &gauss.sigma)?.bits_per_frame;
        let alloc = match &opts.alloc {
            Some(a) => a.clone(),
            None => allocate_rate(
                bits_y.as_slice().expect("contiguous"),
                opts.eta_y,
                &self.cfg.codec.values,
            )?,
        };
        let token = opts.snr_token.unwrap_or(opts.channel.snr_db);
        let latent = LatentFeatures { values: y };
        let frame = encode(&latent, &alloc, token, &self.encoder, params)?;
        let tx_power = frame.mean_power();
        let rx = transmit(&frame, &opts.channel, opts.seed)?;
        let (eq, stats) = equalize(&rx, &opts.channel)?;
        let y_hat = decode(
            &eq,
            &alloc,
            token,
            self.side_info().then_some(&gauss),
            &self.decoder,
            params,
            self.cfg.latent_length(),
        )?;
        let mut y_hat = tape.constant(to_tensor(&y_hat.values));
        if let Some(g) = &gain {
            y_hat = y_hat / tape.constant(g.clone());
        }
        let x_hat = self.synthesis.forward(&p, y_hat)?;
        let bits_z = side.as_ref().map_or(0.0, |s| s.bit_length as f64);
        Ok(Inference {
            x_hat: to_array3(&x_hat.value()),
            bandwidth: account_bandwidth(&alloc, bits_z, opts.channel.snr_db)?,
            alloc,
            bits_y,
            side,
            equalize: stats,
            tx_power,
        })
    }

    /// Channel symbols for a batch without sending them anywhere.
    pub fn channel_symbols(
        &self,
        params: &ParamStore,
        batch: &SpeechBatch,
        alloc: &RateAllocation,
        snr_token: f64,
        lambda: Option<f64>,
    ) -> Result<ChannelFrame> {
        self.check_batch(batch)?;
        let tape = Tape::new();
        let p = params.bind_frozen(&tape);
        let mut y = self.analysis.forward(&p, tape.constant(to_tensor(&batch.frames)))?;
        if let Some(g) = self.gain(&p, lambda)? {
            y = y * tape.constant(g);
        }
        let y = to_array3(&y.value());
        let y = if self.cfg.latent_noise { y.mapv(f64::round) } else { y };
        encode(&LatentFeatures { values: y }, alloc, snr_token, &self.encoder, params)
    }
}

/// Scalar results of one training forward.
#[derive(Debug, Clone)]
pub struct StepValues {
    pub bits_y: f64,
    pub bits_z: f64,
    pub dist_time: f64,
    pub dist_mfcc: f64,
    pub total: f64,
    pub alloc: RateAllocation,
}
