//! Semantic analysis and synthesis transforms.
//!
//! Both are stacks of "same"-padded 1-D convolutions with residual blocks.
//! The analysis side halves the temporal length twice (`L -> L/4`), the
//! synthesis side mirrors it with stride-2 transposed convolutions. The
//! synthesis output has no nonlinearity; clipping only happens at export.

use autograd::{Bound, ParamStore, Tape, Var};
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::corpus::SpeechBatch;
use crate::error::{shape_err, Error, Result};
use crate::layers::{Activation, Conv1d, ParamBuilder, Upsample1d};
use crate::tensor::{to_array3, to_tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformConfig {
    /// Latent channel count `M`.
    pub channels: usize,
    /// Residual blocks per resolution stage.
    pub residual_blocks: usize,
    pub kernel_size: usize,
    pub activation: Activation,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            channels: 128,
            residual_blocks: 2,
            kernel_size: 5,
            activation: Activation::Gelu,
        }
    }
}

impl TransformConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Config("transform channels must be >= 1".into()));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "transform kernel size {} must be odd",
                self.kernel_size
            )));
        }
        Ok(())
    }
}

/// Semantic latent `y`, shape `B x M x L/4`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFeatures {
    pub values: Array3<f64>,
}

impl LatentFeatures {
    pub fn batch_frames(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn temporal_len(&self) -> usize {
        self.values.shape()[2]
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    first: Conv1d,
    second: Conv1d,
}

impl ResBlock {
    fn new(pb: &mut ParamBuilder, name: &str, width: usize, kernel: usize) -> Self {
        Self {
            first: Conv1d::new(pb, &format!("{name}.conv1"), width, width, kernel, 1),
            second: Conv1d::new(pb, &format!("{name}.conv2"), width, width, kernel, 1),
        }
    }

    fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>, act: Activation) -> Var<'t> {
        let h = self.first.forward(p, act.apply(x));
        x + self.second.forward(p, act.apply(h))
    }
}

/// `g_a`: waveform `(B, 1, L)` to latent `(B, M, L/4)`.
#[derive(Debug, Clone)]
pub struct AnalysisTransform {
    cfg: TransformConfig,
    stem: Conv1d,
    stages: Vec<(Vec<ResBlock>, Conv1d)>,
}

impl AnalysisTransform {
    pub fn new(pb: &mut ParamBuilder, name: &str, cfg: &TransformConfig) -> Self {
        let (m, k) = (cfg.channels, cfg.kernel_size);
        let stem = Conv1d::new(pb, &format!("{name}.stem"), 1, m, k, 1);
        let stages = (0..2)
            .map(|s| {
                let blocks = (0..cfg.residual_blocks)
                    .map(|r| ResBlock::new(pb, &format!("{name}.stage{s}.res{r}"), m, k))
                    .collect();
                let down = Conv1d::new(pb, &format!("{name}.stage{s}.down"), m, m, k, 2);
                (blocks, down)
            })
            .collect();
        Self {
            cfg: cfg.clone(),
            stem,
            stages,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 3 || shape[1] != 1 || !shape[2].is_multiple_of(4) || shape[2] == 0 {
            return Err(Error::Shape(format!(
                "analysis input must be (B, 1, L) with L divisible by 4, got {shape:?}"
            )));
        }
        let act = self.cfg.activation;
        let mut h = act.apply(self.stem.forward(p, x));
        for (blocks, down) in &self.stages {
            for block in blocks {
                h = block.forward(p, h, act);
            }
            h = down.forward(p, h);
        }
        Ok(h)
    }
}

/// `g_s`: latent `(B, M, L/4)` back to waveform `(B, 1, L)`.
#[derive(Debug, Clone)]
pub struct SynthesisTransform {
    cfg: TransformConfig,
    stem: Conv1d,
    stages: Vec<(Vec<ResBlock>, Upsample1d)>,
    head: Conv1d,
}

impl SynthesisTransform {
    pub fn new(pb: &mut ParamBuilder, name: &str, cfg: &TransformConfig) -> Self {
        let (m, k) = (cfg.channels, cfg.kernel_size);
        let stem = Conv1d::new(pb, &format!("{name}.stem"), m, m, k, 1);
        let stages = (0..2)
            .map(|s| {
                let blocks = (0..cfg.residual_blocks)
                    .map(|r| ResBlock::new(pb, &format!("{name}.stage{s}.res{r}"), m, k))
                    .collect();
                let up = Upsample1d::new(pb, &format!("{name}.stage{s}.up"), m, m, k);
                (blocks, up)
            })
            .collect();
        let head = Conv1d::new(pb, &format!("{name}.head"), m, 1, k, 1);
        Self {
            cfg: cfg.clone(),
            stem,
            stages,
            head,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, y: Var<'t>) -> Result<Var<'t>> {
        let shape = y.shape();
        if shape.len() != 3 || shape[1] != self.cfg.channels {
            return Err(shape_err(
                "synthesis input (B, M, T)",
                &[0, self.cfg.channels, 0],
                &shape,
            ));
        }
        let act = self.cfg.activation;
        let mut h = self.stem.forward(p, y);
        for (blocks, up) in &self.stages {
            for block in blocks {
                h = block.forward(p, h, act);
            }
            h = up.forward(p, act.apply(h));
        }
        Ok(self.head.forward(p, act.apply(h)))
    }
}

/// Evaluates `g_a` without recording gradients.
pub fn analyze(
    x: &SpeechBatch,
    transform: &AnalysisTransform,
    params: &ParamStore,
) -> Result<LatentFeatures> {
    let tape = Tape::new();
    let p = params.bind_frozen(&tape);
    let y = transform.forward(&p, tape.constant(to_tensor(&x.frames)))?;
    Ok(LatentFeatures {
        values: to_array3(&y.value()),
    })
}

/// Evaluates `g_s` without recording gradients.
pub fn synthesize(
    y: &LatentFeatures,
    transform: &SynthesisTransform,
    params: &ParamStore,
) -> Result<SpeechBatch> {
    let tape = Tape::new();
    let p = params.bind_frozen(&tape);
    let x = transform.forward(&p, tape.constant(to_tensor(&y.values)))?;
    Ok(SpeechBatch::from_frames(to_array3(&x.value())))
}
