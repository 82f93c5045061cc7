//! Classical feature-free chain ladder on count triangles.
//!
//! Development factors are volume-weighted column-sum ratios
//! `f_j = sum_k C_{k,j} / sum_k C_{k,j-1}` over accident periods where
//! both entries are observed, and the lower triangle is filled
//! multiplicatively from the diagonal.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChainLadderError {
    #[error("need at least 2 accident periods, got {0}")]
    TooFewPeriods(usize),
    #[error("development factor undefined at column {0}: zero denominator")]
    UndefinedFactor(usize),
}

/// Fitted chain ladder: cumulative triangle (observed and filled) plus
/// the per-column development factors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClTriangle {
    pub k_periods: usize,
    pub j_periods: usize,
    /// Column factors; `factors[j]` develops from `j-1` to `j` (index 0 unused, 1.0).
    pub factors: Vec<f64>,
    /// Cumulative counts: observed in the upper triangle, filled below.
    pub cumulative: Vec<Vec<f64>>,
    /// Incremental predicted counts in the lower triangle.
    pub predicted: Vec<Vec<f64>>,
}

impl ClTriangle {
    /// Total predicted IBNR count.
    pub fn predicted_total(&self) -> f64 {
        self.predicted.iter().flatten().sum()
    }
}

/// Fit column factors on an aggregated incremental triangle and fill the
/// lower triangle. `incremental[k][j]` are observed counts for
/// `k + j <= K - 1`; cells below the diagonal are ignored.
pub fn cl_fit_predict(incremental: &[Vec<f64>]) -> Result<ClTriangle, ChainLadderError> {
    let k_periods = incremental.len();
    if k_periods < 2 {
        return Err(ChainLadderError::TooFewPeriods(k_periods));
    }
    let j_periods = incremental[0].len();

    let mut cumulative = vec![vec![0.0; j_periods]; k_periods];
    for k in 0..k_periods {
        let mut acc = 0.0;
        for j in 0..j_periods {
            if k + j <= k_periods - 1 {
                acc += incremental[k][j];
            }
            cumulative[k][j] = acc; // provisional below the diagonal
        }
    }

    let mut factors = vec![1.0; j_periods];
    for j in 1..j_periods {
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..k_periods {
            if k + j <= k_periods - 1 {
                num += cumulative[k][j];
                den += cumulative[k][j - 1];
            }
        }
        if j <= k_periods - 1 {
            if den <= 0.0 {
                return Err(ChainLadderError::UndefinedFactor(j));
            }
            factors[j] = num / den;
        } else {
            // beyond the last observed column pair: no information, f = 1
            factors[j] = 1.0;
        }
    }

    let mut predicted = vec![vec![0.0; j_periods]; k_periods];
    for k in 0..k_periods {
        let diag = k_periods - 1 - k;
        let mut prev = cumulative[k][diag.min(j_periods - 1)];
        for j in (diag + 1)..j_periods {
            let now = prev * factors[j];
            predicted[k][j] = now - prev;
            cumulative[k][j] = now;
            prev = now;
        }
    }

    Ok(ClTriangle {
        k_periods,
        j_periods,
        factors,
        cumulative,
        predicted,
    })
}
