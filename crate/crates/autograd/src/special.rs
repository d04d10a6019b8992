//! Scalar special functions shared by the differentiable ops.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF, evaluated through `erfc` so the lower tail keeps
/// full relative precision.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Φ(x)`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// `Φ(upper) - Φ(lower)` without cancellation when both points sit in the
/// same tail.
pub fn normal_box_mass(upper: f64, lower: f64) -> f64 {
    if upper < lower {
        return -normal_box_mass(lower, upper);
    }
    if lower >= 0.0 {
        normal_sf(lower) - normal_sf(upper)
    } else if upper <= 0.0 {
        normal_cdf(upper) - normal_cdf(lower)
    } else {
        1.0 - normal_sf(upper) - normal_cdf(lower)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `σ(upper) - σ(lower)`, mirrored into the lower tail when both logits are
/// large and positive.
pub fn logistic_box_mass(upper: f64, lower: f64) -> f64 {
    if upper + lower > 0.0 {
        sigmoid(-lower) - sigmoid(-upper)
    } else {
        sigmoid(upper) - sigmoid(lower)
    }
}

/// Derivative of the logistic sigmoid.
pub fn sigmoid_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for positive arguments.
pub fn softplus_inverse(y: f64) -> f64 {
    assert!(y > 0.0, "softplus inverse needs a positive argument");
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_mass_matches_naive_in_the_bulk() {
        for &(u, l) in &[(0.5, -0.5), (1.3, 0.2), (-0.2, -1.7), (2.0, -3.0)] {
            let naive = normal_cdf(u) - normal_cdf(l);
            assert!((normal_box_mass(u, l) - naive).abs() < 1e-15);
            let naive = sigmoid(u) - sigmoid(l);
            assert!((logistic_box_mass(u, l) - naive).abs() < 1e-15);
        }
    }

    #[test]
    fn far_tail_mass_is_positive() {
        // 1 - Φ(x) rounds to zero long before erfc does.
        let m = normal_box_mass(30.5, 29.5);
        assert!(m > 0.0 && m.is_finite());
        let m = normal_box_mass(-29.5, -30.5);
        assert!(m > 0.0);
        let m = logistic_box_mass(60.5, 59.5);
        assert!(m > 0.0);
    }

    #[test]
    fn softplus_roundtrip() {
        for &y in &[1e-3, 0.5, 1.0, 7.0, 45.0] {
            assert!((softplus(softplus_inverse(y)) - y).abs() < 1e-12 * y.max(1.0));
        }
    }
}
