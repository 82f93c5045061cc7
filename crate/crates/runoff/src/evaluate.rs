//! Forecast scoring: relative error metrics over the lower triangle,
//! the continuously ranked probability score, and likelihood reports.
//!
//! With truth counts `O'` and predictions `Ohat'` at some granularity,
//! summed over feature combinations per cell:
//!
//! * `R_tot  = |1 - sum Ohat' / sum O'|`
//! * `R_cell = sum_cells |O' - Ohat'| / sum O'`
//! * `R_cal  = sum_diagonals |sum_{k+j=tau} (O' - Ohat')| / sum O'`
//!
//! All sums range over lower-triangle cells `k + j > K - 1`. The
//! calendar metric pairs cells on the same diagonal by default; the
//! shifted pairing `(O'_{k,j}, Ohat'_{k,j-1})` is available behind
//! [`CalendarPairing::PreviousDiagonal`].
//!
//! The per-claim CRPS for an event in bin `j` of `Z` bins with forecast
//! survival `S_z` and widths `D_z` is
//!
//! ```text
//! sum_{z<j} (1 - S_z)^2 D_z + sum_{z>j} S_z^2 D_z
//!   + 1/2 D_j (S_j^2 + (1 - S_j)^2)
//! ```
//!
//! negatively oriented: lower is better.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::claims::RiskGrid;
use crate::likelihood::{neg_log_partial_likelihood, LikelihoodError, ScoreVector};
use crate::triangle::TriangleSet;

#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error("metric undefined: truth total over the lower triangle is zero")]
    ZeroTruth,
    #[error("prediction and truth grids differ: {0}")]
    GridMismatch(String),
    #[error("claim event bin {bin} outside 1..={bins}")]
    BadEventBin { bin: usize, bins: usize },
    #[error("survival vector has {got} bins, need {want}")]
    SurvivalLength { got: usize, want: usize },
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
}

/// How `R_cal` pairs predictions with truth on a calendar diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CalendarPairing {
    /// Truth and prediction from the same cell (default).
    #[default]
    Aligned,
    /// Truth at development `j` against prediction at `j - 1`.
    PreviousDiagonal,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RMetrics {
    pub r_tot: f64,
    pub r_cellwise: f64,
    pub r_calwise: f64,
}

/// Lower-triangle relative error metrics of a prediction set against a
/// truth set at the same granularity.
pub fn r_metrics(
    predicted: &TriangleSet,
    truth: &TriangleSet,
    pairing: CalendarPairing,
) -> Result<RMetrics, EvaluateError> {
    if predicted.k_periods != truth.k_periods
        || predicted.j_periods != truth.j_periods
        || predicted.granularity != truth.granularity
    {
        return Err(EvaluateError::GridMismatch(format!(
            "prediction {}x{}@{} vs truth {}x{}@{}",
            predicted.k_periods,
            predicted.j_periods,
            predicted.granularity,
            truth.k_periods,
            truth.j_periods,
            truth.granularity
        )));
    }
    let pred = predicted.aggregate_predicted();
    let obs = truth.aggregate_observed();
    r_metrics_dense(&pred, &obs, predicted.k_periods, predicted.j_periods, pairing)
}

/// Metrics over dense `K x J` matrices. The evaluation region is the
/// lower triangle of the square grid: `k + j > K - 1` with development
/// periods `j <= K - 1`; later development columns are tail cells
/// outside every model's factor range and outside the metrics.
pub fn r_metrics_dense(
    pred: &[Vec<f64>],
    truth: &[Vec<f64>],
    k_periods: usize,
    j_periods: usize,
    pairing: CalendarPairing,
) -> Result<RMetrics, EvaluateError> {
    let j_cap = j_periods.min(k_periods);
    let lower = |k: usize, j: usize| k + j > k_periods - 1 && j < j_cap;
    let mut truth_total = 0.0;
    let mut pred_total = 0.0;
    let mut cell_abs = 0.0;
    for k in 0..k_periods {
        for j in 0..j_cap {
            if lower(k, j) {
                truth_total += truth[k][j];
                pred_total += pred[k][j];
                cell_abs += (truth[k][j] - pred[k][j]).abs();
            }
        }
    }
    if truth_total <= 0.0 {
        return Err(EvaluateError::ZeroTruth);
    }

    let mut cal_abs = 0.0;
    for tau in k_periods..(k_periods + j_cap - 1) {
        let mut diag = 0.0;
        for k in 0..k_periods {
            let j = tau as i64 - k as i64;
            if j < 0 || j as usize >= j_cap || !lower(k, j as usize) {
                continue;
            }
            let j = j as usize;
            let p = match pairing {
                CalendarPairing::Aligned => pred[k][j],
                CalendarPairing::PreviousDiagonal => {
                    if j >= 1 {
                        pred[k][j - 1]
                    } else {
                        0.0
                    }
                }
            };
            diag += truth[k][j] - p;
        }
        cal_abs += diag.abs();
    }

    Ok(RMetrics {
        r_tot: (1.0 - pred_total / truth_total).abs(),
        r_cellwise: cell_abs / truth_total,
        r_calwise: cal_abs / truth_total,
    })
}

/// Individual CRPS for an event in `event_bin` (1-based) given forecast
/// survival values per bin and bin widths.
pub fn crps_individual(
    survival: &[f64],
    widths: &[f64],
    event_bin: usize,
) -> Result<f64, EvaluateError> {
    let bins = survival.len();
    if widths.len() != bins {
        return Err(EvaluateError::SurvivalLength {
            got: widths.len(),
            want: bins,
        });
    }
    if event_bin == 0 || event_bin > bins {
        return Err(EvaluateError::BadEventBin {
            bin: event_bin,
            bins,
        });
    }
    let mut score = 0.0;
    for z in 1..=bins {
        let s = survival[z - 1];
        let w = widths[z - 1];
        if z < event_bin {
            score += (1.0 - s) * (1.0 - s) * w;
        } else if z > event_bin {
            score += s * s * w;
        } else {
            score += 0.5 * w * (s * s + (1.0 - s) * (1.0 - s));
        }
    }
    Ok(score)
}

/// Average CRPS over held-out claims. `survival_for(i)` yields the
/// forecast survival per bin for claim `i`; `event_bin_for(i)` its
/// (1-based) event bin.
pub fn crps_average<S, E>(
    n_claims: usize,
    widths: &[f64],
    mut survival_for: S,
    mut event_bin_for: E,
) -> Result<(Vec<f64>, f64), EvaluateError>
where
    S: FnMut(usize) -> Result<Vec<f64>, EvaluateError>,
    E: FnMut(usize) -> usize,
{
    let mut scores = Vec::with_capacity(n_claims);
    for i in 0..n_claims {
        let survival = survival_for(i)?;
        scores.push(crps_individual(&survival, widths, event_bin_for(i))?);
    }
    let avg = if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    };
    Ok((scores, avg))
}

/// Average negative log partial likelihood per claim.
pub fn average_nll(grid: &RiskGrid, scores: &ScoreVector) -> Result<f64, EvaluateError> {
    let loss = neg_log_partial_likelihood(grid, scores)?;
    Ok(loss / grid.n() as f64)
}

/// Seeded uniform claim split: returns (train, validation) index sets.
pub fn split_claims(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let cut = ((n as f64) * train_fraction).round() as usize;
    let (train, valid) = idx.split_at(cut.min(n));
    let mut train = train.to_vec();
    let mut valid = valid.to_vec();
    train.sort_unstable();
    valid.sort_unstable();
    (train, valid)
}

/// One row of the likelihood table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LikelihoodRow {
    pub model: String,
    pub in_sample: f64,
    pub out_of_sample: Option<f64>,
}
