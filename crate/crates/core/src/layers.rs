//! Parameterised building blocks shared by the transforms and the codec.

use autograd::{Bound, Conv1dSpec, ParamId, ParamStore, Tensor, Var};
use ndarray::IxDyn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Pointwise nonlinearity. `Identity` exists so linear behaviour can be
/// probed directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    #[default]
    Gelu,
    Tanh,
}

impl Activation {
    pub fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.relu(),
            Activation::Gelu => x.gelu(),
            Activation::Tanh => x.tanh(),
        }
    }
}

/// Registers parameters with seeded initial values.
pub struct ParamBuilder {
    pub store: ParamStore,
    rng: ChaCha8Rng,
}

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        Self {
            store: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> ParamId {
        let rng = &mut self.rng;
        let t = Tensor::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-bound..=bound));
        self.store.insert(name, t)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        self.store.insert(name, Tensor::from_elem(IxDyn(shape), value))
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.constant(name, shape, 0.0)
    }

    pub fn finish(self) -> ParamStore {
        self.store
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    weight: ParamId,
    bias: ParamId,
    spec: Conv1dSpec,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv1d {
    /// "Same"-padded convolution with an odd kernel; `stride` divides the
    /// length exactly when it is even.
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        let bound = 1.0 / ((in_channels * kernel) as f64).sqrt();
        Self {
            weight: pb.uniform(&format!("{name}.weight"), &[out_channels, in_channels, kernel], bound),
            bias: pb.uniform(&format!("{name}.bias"), &[out_channels], bound),
            spec: Conv1dSpec {
                stride,
                padding: kernel / 2,
            },
            in_channels,
            out_channels,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        x.conv1d(p.get(self.weight), Some(p.get(self.bias)), self.spec)
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }
}

/// Stride-2 transposed convolution that exactly doubles the length.
#[derive(Debug, Clone)]
pub struct Upsample1d {
    weight: ParamId,
    bias: ParamId,
    spec: Conv1dSpec,
}

impl Upsample1d {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    ) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        let bound = 1.0 / ((in_channels * kernel) as f64 / 2.0).sqrt();
        Self {
            weight: pb.uniform(&format!("{name}.weight"), &[in_channels, out_channels, kernel], bound),
            bias: pb.uniform(&format!("{name}.bias"), &[out_channels], bound),
            spec: Conv1dSpec {
                stride: 2,
                padding: kernel / 2,
            },
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        x.conv_transpose1d(p.get(self.weight), Some(p.get(self.bias)), self.spec, 1)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    pub fn new(pb: &mut ParamBuilder, name: &str, inputs: usize, outputs: usize) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            weight: pb.uniform(&format!("{name}.weight"), &[inputs, outputs], bound),
            bias: pb.zeros(&format!("{name}.bias"), &[outputs]),
        }
    }

    /// `(.., inputs) -> (.., outputs)`.
    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        x.matmul(p.get(self.weight)) + p.get(self.bias)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gain: ParamId,
    bias: ParamId,
}

impl LayerNorm {
    pub fn new(pb: &mut ParamBuilder, name: &str, width: usize) -> Self {
        Self {
            gain: pb.constant(&format!("{name}.gain"), &[width], 1.0),
            bias: pb.zeros(&format!("{name}.bias"), &[width]),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        x.layer_norm(1e-5) * p.get(self.gain) + p.get(self.bias)
    }
}

/// Pre-norm Transformer block over a `(B, P, d)` token sequence.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    norm1: LayerNorm,
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    norm2: LayerNorm,
    hidden: Linear,
    project: Linear,
    heads: usize,
}

impl TransformerBlock {
    pub fn new(pb: &mut ParamBuilder, name: &str, width: usize, heads: usize) -> Self {
        assert!(heads >= 1 && width.is_multiple_of(heads), "width must split evenly into heads");
        Self {
            norm1: LayerNorm::new(pb, &format!("{name}.norm1"), width),
            query: Linear::new(pb, &format!("{name}.query"), width, width),
            key: Linear::new(pb, &format!("{name}.key"), width, width),
            value: Linear::new(pb, &format!("{name}.value"), width, width),
            out: Linear::new(pb, &format!("{name}.out"), width, width),
            norm2: LayerNorm::new(pb, &format!("{name}.norm2"), width),
            hidden: Linear::new(pb, &format!("{name}.mlp1"), width, 2 * width),
            project: Linear::new(pb, &format!("{name}.mlp2"), 2 * width, width),
            heads,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        let shape = x.shape();
        let (b, n, d) = (shape[0], shape[1], shape[2]);
        let h = self.heads;
        let dh = d / h;
        let split = |v: Var<'t>| {
            v.reshape(&[b, n, h, dh])
                .permute(&[0, 2, 1, 3])
                .reshape(&[b * h, n, dh])
        };
        let normed = self.norm1.forward(p, x);
        let q = split(self.query.forward(p, normed));
        let k = split(self.key.forward(p, normed));
        let v = split(self.value.forward(p, normed));
        let scores = q.bmm(k.transpose_last()).mul_scalar(1.0 / (dh as f64).sqrt());
        let attended = scores
            .softmax()
            .bmm(v)
            .reshape(&[b, h, n, dh])
            .permute(&[0, 2, 1, 3])
            .reshape(&[b, n, d]);
        let x = x + self.out.forward(p, attended);
        let mlp = self
            .project
            .forward(p, self.hidden.forward(p, self.norm2.forward(p, x)).gelu());
        x + mlp
    }
}
