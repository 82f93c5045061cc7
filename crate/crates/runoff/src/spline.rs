//! Cubic B-spline bases with difference penalties for smooth log-risk
//! terms.
//!
//! The basis uses `kappa` cubic B-splines on equally spaced knots
//! extended past `[min, max]`, so the basis functions sum to one inside
//! the range and reproduce linear functions exactly. Smoothness is
//! penalized through the quadratic form of squared second differences of
//! the coefficient vector.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SplineError {
    #[error("need at least 4 basis functions for a cubic spline, got {0}")]
    TooFewKnots(usize),
    #[error("spline column is degenerate: min {min} equals max {max}")]
    DegenerateColumn { min: f64, max: f64 },
}

/// Cubic B-spline basis on equally spaced knots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplineBasis {
    /// Full knot vector (uniform, extended by the cubic order on each side).
    pub knots: Vec<f64>,
    /// Number of basis functions.
    pub size: usize,
    pub min: f64,
    pub max: f64,
}

impl SplineBasis {
    /// Build a basis with `kappa` functions spanning `[min, max]` of the
    /// supplied values.
    pub fn from_values(values: &[f64], kappa: usize) -> Result<Self, SplineError> {
        if kappa < 4 {
            return Err(SplineError::TooFewKnots(kappa));
        }
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(max > min) {
            return Err(SplineError::DegenerateColumn { min, max });
        }
        Ok(Self::on_range(min, max, kappa))
    }

    /// Basis on an explicit range.
    pub fn on_range(min: f64, max: f64, kappa: usize) -> Self {
        let segments = kappa - 3;
        let h = (max - min) / segments as f64;
        // knots t_{-3}..t_{segments+3}: kappa + 4 of them
        let knots: Vec<f64> = (0..kappa + 4)
            .map(|i| min + (i as f64 - 3.0) * h)
            .collect();
        SplineBasis {
            knots,
            size: kappa,
            min,
            max,
        }
    }

    /// Evaluate all basis functions at `x` (clamped to the knot range).
    pub fn row(&self, x: f64) -> Vec<f64> {
        let x = x.clamp(self.min, self.max);
        let mut out = vec![0.0; self.size];
        for k in 0..self.size {
            out[k] = cubic_bspline(&self.knots, k, x);
        }
        out
    }

    /// Evaluate the spline with coefficients `beta` at `x`.
    pub fn evaluate(&self, beta: &[f64], x: f64) -> f64 {
        self.row(x)
            .iter()
            .zip(beta)
            .map(|(b, c)| b * c)
            .sum()
    }

    /// Second-difference penalty `beta' D2' D2 beta`.
    pub fn penalty(&self, beta: &[f64]) -> f64 {
        let mut sum = 0.0;
        for k in 0..self.size.saturating_sub(2) {
            let d = beta[k] - 2.0 * beta[k + 1] + beta[k + 2];
            sum += d * d;
        }
        sum
    }

    /// Dense penalty matrix `D2' D2` (size x size, symmetric PSD).
    pub fn penalty_matrix(&self) -> Vec<Vec<f64>> {
        let m = self.size;
        let mut p = vec![vec![0.0; m]; m];
        for k in 0..m.saturating_sub(2) {
            let idx = [k, k + 1, k + 2];
            let coef = [1.0, -2.0, 1.0];
            for a in 0..3 {
                for b in 0..3 {
                    p[idx[a]][idx[b]] += coef[a] * coef[b];
                }
            }
        }
        p
    }
}

/// Cox-de Boor evaluation of the cubic B-spline `B_{k,4}` on `knots`.
fn cubic_bspline(knots: &[f64], k: usize, x: f64) -> f64 {
    // order 4 (degree 3); local support [t_k, t_{k+4})
    let t = |i: usize| knots[i];
    if x < t(k) || x > t(k + 4) {
        return 0.0;
    }
    // degree 0
    let mut b = [0.0_f64; 4];
    for (i, slot) in b.iter_mut().enumerate() {
        let lo = t(k + i);
        let hi = t(k + i + 1);
        // half-open intervals, closed at the final knot
        *slot = if (x >= lo && x < hi) || (x == hi && hi == *knots.last().unwrap()) {
            1.0
        } else {
            0.0
        };
    }
    // raise the degree
    for d in 1..4 {
        for i in 0..(4 - d) {
            let lo = t(k + i);
            let mid = t(k + i + d);
            let hi = t(k + i + d + 1);
            let left = if mid > lo { (x - lo) / (mid - lo) * b[i] } else { 0.0 };
            let right = if hi > t(k + i + 1) {
                (hi - x) / (hi - t(k + i + 1)) * b[i + 1]
            } else {
                0.0
            };
            b[i] = left + right;
        }
    }
    b[0]
}
