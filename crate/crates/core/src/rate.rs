//! Entropy-driven rate allocation over a finite set of symbol budgets.

use ndarray::Array1;

use crate::error::{Error, Result};

/// Per-frame channel budgets. `k_bar[i] == values[token_index[i]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateAllocation {
    pub k_raw: Array1<f64>,
    pub k_bar: Vec<usize>,
    pub token_index: Vec<usize>,
}

impl RateAllocation {
    /// Rebuilds an allocation from token indices, as the receiver does
    /// after reading them off the control channel. `k_raw` is unknown
    /// there and is set to the quantised values.
    pub fn from_indices(token_index: Vec<usize>, values: &[usize]) -> Result<Self> {
        validate_values(values)?;
        let k_bar = token_index
            .iter()
            .map(|&t| {
                values.get(t).copied().ok_or_else(|| {
                    Error::Allocation(format!("token index {t} outside a set of {}", values.len()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            k_raw: k_bar.iter().map(|&k| k as f64).collect(),
            k_bar,
            token_index,
        })
    }

    pub fn uniform(frames: usize, index: usize, values: &[usize]) -> Result<Self> {
        Self::from_indices(vec![index; frames], values)
    }

    pub fn frames(&self) -> usize {
        self.k_bar.len()
    }

    /// Primary-link cost `K_y`.
    pub fn k_y(&self) -> usize {
        self.k_bar.iter().sum()
    }

    /// Checks that the allocation is consistent with `values`.
    pub fn check(&self, values: &[usize]) -> Result<()> {
        for (&k, &t) in self.k_bar.iter().zip(&self.token_index) {
            if values.get(t) != Some(&k) {
                return Err(Error::Allocation(format!(
                    "budget {k} with token {t} is not in the value set {values:?}"
                )));
            }
        }
        Ok(())
    }
}

pub fn validate_values(values: &[usize]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Config("rate value set is empty".into()));
    }
    if values[0] == 0 || values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(format!(
            "rate values must be positive and strictly ascending, got {values:?}"
        )));
    }
    Ok(())
}

/// Index of the element of `values` nearest to `x`, ties going up.
pub fn nearest_index(x: f64, values: &[usize]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if (x - v as f64).abs() <= (x - values[best] as f64).abs() {
            best = i;
        }
    }
    best
}

/// `k_raw = eta_y * bits`, clamped to `[v_1, v_n]` and snapped to the
/// nearest value.
pub fn allocate_rate(bits_per_frame: &[f64], eta_y: f64, values: &[usize]) -> Result<RateAllocation> {
    validate_values(values)?;
    if !(eta_y.is_finite() && eta_y > 0.0) {
        return Err(Error::Config(format!("eta_y must be positive, got {eta_y}")));
    }
    if let Some(b) = bits_per_frame.iter().find(|b| !b.is_finite()) {
        return Err(Error::NonFinite(format!("frame bits {b}")));
    }
    let lo = values[0] as f64;
    let hi = *values.last().expect("non-empty") as f64;
    let k_raw: Array1<f64> = bits_per_frame.iter().map(|&b| eta_y * b).collect();
    let token_index: Vec<usize> = k_raw
        .iter()
        .map(|&k| nearest_index(k.clamp(lo, hi), values))
        .collect();
    let k_bar = token_index.iter().map(|&t| values[t]).collect();
    Ok(RateAllocation {
        k_raw,
        k_bar,
        token_index,
    })
}

/// Control-channel bits needed to signal one frame's budget.
pub fn control_bits_per_frame(values: &[usize]) -> usize {
    let n = values.len();
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const V: [usize; 4] = [8, 16, 24, 32];

    #[test]
    fn worked_cases() {
        let a = allocate_rate(&[10.0, 0.0, 1e6], 1.6, &V).unwrap();
        assert_eq!(a.k_bar, vec![16, 8, 32]);
        assert_eq!(a.token_index, vec![1, 0, 3]);
        assert!((a.k_raw[0] - 16.0).abs() < 1e-12);
        assert_eq!(a.k_y(), 56);
    }

    #[test]
    fn ties_round_up() {
        let a = allocate_rate(&[12.0, 20.0], 1.0, &V).unwrap();
        assert_eq!(a.k_bar, vec![16, 24]);
    }

    #[test]
    fn empty_or_unsorted_values_fail() {
        assert!(allocate_rate(&[1.0], 1.0, &[]).is_err());
        assert!(allocate_rate(&[1.0], 1.0, &[8, 8]).is_err());
        assert!(allocate_rate(&[f64::NAN], 1.0, &V).is_err());
    }

    #[test]
    fn control_bits() {
        assert_eq!(control_bits_per_frame(&[128]), 0);
        assert_eq!(control_bits_per_frame(&[1, 2]), 1);
        assert_eq!(control_bits_per_frame(&[8, 16, 24, 32]), 2);
        assert_eq!(control_bits_per_frame(&[8, 16, 24, 32, 48, 64]), 3);
    }

    #[test]
    fn receiver_rebuild() {
        let a = allocate_rate(&[3.0, 9.0, 30.0], 1.0, &V).unwrap();
        let b = RateAllocation::from_indices(a.token_index.clone(), &V).unwrap();
        assert_eq!(a.k_bar, b.k_bar);
        b.check(&V).unwrap();
        assert!(RateAllocation::from_indices(vec![4], &V).is_err());
    }
}
