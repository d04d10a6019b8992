//! Finite-difference oracles for checking analytic gradients.
//!
//! These only evaluate the function; they never look at the tape, so they
//! stay independent of the backward pass they are used to check.

use crate::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct DirectionalCheck {
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Compares `<grad, direction>` with a fourth-order central difference of
/// `f` along `direction`.
pub fn directional_check(
    f: &dyn Fn(&[Tensor]) -> f64,
    point: &[Tensor],
    grad: &[Tensor],
    direction: &[Tensor],
    eps: f64,
) -> DirectionalCheck {
    assert_eq!(point.len(), direction.len());
    assert_eq!(point.len(), grad.len());
    let shifted = |h: f64| -> Vec<Tensor> {
        point
            .iter()
            .zip(direction)
            .map(|(p, d)| p + &(d * h))
            .collect()
    };
    let f1 = f(&shifted(eps));
    let fm1 = f(&shifted(-eps));
    let f2 = f(&shifted(2.0 * eps));
    let fm2 = f(&shifted(-2.0 * eps));
    let numeric = (8.0 * (f1 - fm1) - (f2 - fm2)) / (12.0 * eps);
    let analytic: f64 = grad
        .iter()
        .zip(direction)
        .map(|(g, d)| (g * d).sum())
        .sum();
    let scale = analytic.abs().max(numeric.abs()).max(1e-12);
    DirectionalCheck {
        analytic,
        numeric,
        rel_error: (analytic - numeric).abs() / scale,
    }
}
