//! Rate-distortion objective.
//!
//! `total = eta_y * rate_y + eta_z * rate_z + lambda * (dist_time + beta * dist_mfcc)`
//! with rates in bits per frame, `dist_time` the waveform MSE and
//! `dist_mfcc` the cepstral error normalised by the reference's energy.

use autograd::{Tape, Tensor, Var};
use ndarray::{Array2, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mfcc::Mfcc;
use crate::tensor::to_tensor;

/// Added to the reference energy in the cepstral NMSE.
pub const NMSE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdWeights {
    pub eta_y: f64,
    pub eta_z: f64,
    pub lambda: f64,
    pub beta: f64,
}

impl RdWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.eta_y) && ok(self.eta_z) && ok(self.lambda) && ok(self.beta)) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RdLossBreakdown {
    /// `eta_y * rate_y_raw`.
    pub rate_y: f64,
    /// `eta_z * rate_z_raw`.
    pub rate_z: f64,
    pub rate_y_raw: f64,
    pub rate_z_raw: f64,
    pub dist_time: f64,
    pub dist_mfcc: f64,
    pub total: f64,
}

pub const CSV_HEADER: &str = "step,lambda,snr_db,rate_y,rate_z,dist_time,dist_mfcc,total";

impl RdLossBreakdown {
    pub fn csv_line(&self, step: u64, lambda: f64, snr_db: f64) -> String {
        format!(
            "{step},{lambda},{snr_db},{},{},{},{},{}",
            self.rate_y, self.rate_z, self.dist_time, self.dist_mfcc, self.total
        )
    }

    /// Name of the first non-finite component, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("rate_y", self.rate_y_raw),
            ("rate_z", self.rate_z_raw),
            ("dist_time", self.dist_time),
            ("dist_mfcc", self.dist_mfcc),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Scalar form of the loss.
pub fn rd_loss(
    bits_y: f64,
    bits_z: f64,
    dist_time: f64,
    dist_mfcc: f64,
    w: RdWeights,
) -> Result<RdLossBreakdown> {
    w.validate()?;
    for (name, v) in [
        ("bits_y", bits_y),
        ("bits_z", bits_z),
        ("dist_time", dist_time),
        ("dist_mfcc", dist_mfcc),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} = {v}")));
        }
    }
    Ok(RdLossBreakdown {
        rate_y: w.eta_y * bits_y,
        rate_z: w.eta_z * bits_z,
        rate_y_raw: bits_y,
        rate_z_raw: bits_z,
        dist_time,
        dist_mfcc,
        total: w.eta_y * bits_y + w.eta_z * bits_z + w.lambda * (dist_time + w.beta * dist_mfcc),
    })
}

/// Tape form; every argument is a scalar `Var`.
pub fn rd_loss_var<'t>(
    bits_y: Var<'t>,
    bits_z: Var<'t>,
    dist_time: Var<'t>,
    dist_mfcc: Var<'t>,
    w: RdWeights,
) -> Var<'t> {
    bits_y.mul_scalar(w.eta_y)
        + bits_z.mul_scalar(w.eta_z)
        + (dist_time + dist_mfcc.mul_scalar(w.beta)).mul_scalar(w.lambda)
}

/// Differentiable distortion between `(B, L)` reference `x` and
/// reconstruction `x_hat`. Frames whose weight is zero (padded frames) do
/// not count. Returns `(dist_time, dist_mfcc)` as scalars.
pub fn distortion_var<'t>(
    x: Var<'t>,
    x_hat: Var<'t>,
    frame_weights: &[f64],
    mfcc: &Mfcc,
) -> Result<(Var<'t>, Var<'t>)> {
    let s = x.shape();
    if s != x_hat.shape() || s.len() != 2 || s[0] != frame_weights.len() {
        return Err(Error::Shape(format!(
            "distortion needs equal (B, L) inputs with B weights, got {s:?}, {:?}, {}",
            x_hat.shape(),
            frame_weights.len()
        )));
    }
    let tape = x.tape();
    let count: f64 = frame_weights.iter().sum();
    if count <= 0.0 {
        return Err(Error::Shape("no frames left after excluding padded ones".into()));
    }
    let w = tape.constant(Tensor::from_shape_fn(IxDyn(&[s[0], 1]), |i| frame_weights[i[0]]));
    let err = (x - x_hat).square() * w;
    let dist_time = err.sum().mul_scalar(1.0 / (count * s[1] as f64));
    let w3 = w.reshape(&[s[0], 1, 1]);
    let cx = mfcc.forward(x)?;
    let cy = mfcc.forward(x_hat)?;
    let num = ((cx - cy).square() * w3).sum();
    let den = (cx.square() * w3).sum().add_scalar(NMSE_EPS);
    Ok((dist_time, num / den))
}

/// Plain evaluation of [`distortion_var`] over all frames.
pub fn distortion(x: &Array2<f64>, x_hat: &Array2<f64>, mfcc: &Mfcc) -> Result<(f64, f64)> {
    let tape = Tape::new();
    let weights = vec![1.0; x.nrows()];
    let (t, m) = distortion_var(
        tape.constant(to_tensor(x)),
        tape.constant(to_tensor(x_hat)),
        &weights,
        mfcc,
    )?;
    Ok((t.item(), m.item()))
}
