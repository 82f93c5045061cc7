//! Feature-dependent run-off triangles: grouping reported claims into
//! cells, forecasting the lower triangle from development factors, and
//! re-expressing everything at coarser granularities.
//!
//! Cells are calendar parallelograms: a claim with accident day `U`
//! (1-based, so day-start coordinate `u0 = U - 1`) and recorded delay
//! `d` lands in accident period `k = u0 div g` and development period
//! `j = (u0 + d) div g - k` at granularity `g`. The development index
//! counts calendar blocks since the accident block, which keeps every
//! diagonal cell fully observed at any granularity: observed claims
//! satisfy `k + j <= K - 1` exactly, and held-out claims fall strictly
//! below the diagonal. At the native daily granularity this reduces to
//! `j = d`.
//!
//! Each fine cell maps into exactly one coarse cell, so coarse observed
//! counts equal block sums of fine counts, and block-summing fine
//! predictions preserves totals across granularities.
//!
//! Per-claim development walks convert the baseline hazard into factors
//! with the eta transform; a cell whose hazard leaves the transform's
//! domain (possible for extreme risk scores at the earliest delay
//! blocks) inherits a factor of one and is counted in `guard_flags`
//! rather than aborting the forecast.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::claims::{ClaimRecord, Encoding, FeatureKey};
use crate::hazard::{BaselineHazard, HazardError};
use crate::likelihood::ScoreVector;

#[derive(Debug, Error)]
pub enum TriangleError {
    #[error("claim `{id}` outside the observation window: accident day {u}, delay {d}, cut-off {cutoff}")]
    OutOfRange { id: String, u: u32, d: u32, cutoff: u32 },
    #[error("granularity {granularity} must divide the cut-off {cutoff} and delay bound {max_delay}")]
    BadGranularity { granularity: u32, cutoff: u32, max_delay: u32 },
    #[error("coarse granularity {coarse} must be a multiple of the native granularity {fine}")]
    NonDivisible { coarse: u32, fine: u32 },
    #[error("scores length {got} does not match record count {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error(transparent)]
    Claims(#[from] crate::claims::ClaimsError),
    #[error(transparent)]
    Hazard(#[from] HazardError),
}

/// Observed and predicted counts for one feature combination.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrianglePair {
    pub observed: BTreeMap<(u32, u32), f64>,
    pub predicted: BTreeMap<(u32, u32), f64>,
}

impl TrianglePair {
    pub fn observed_at(&self, k: u32, j: u32) -> f64 {
        *self.observed.get(&(k, j)).unwrap_or(&0.0)
    }

    pub fn predicted_at(&self, k: u32, j: u32) -> f64 {
        *self.predicted.get(&(k, j)).unwrap_or(&0.0)
    }

    /// Cumulative observed count `C_{k,j} = sum_{l<=j} O_{k,l}`.
    pub fn cumulative_observed(&self, k: u32, j: u32) -> f64 {
        self.observed
            .range((k, 0)..=(k, j))
            .map(|(_, v)| v)
            .sum()
    }
}

/// Triangles for every feature combination at one granularity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TriangleSet {
    pub granularity: u32,
    pub k_periods: usize,
    pub j_periods: usize,
    pub cutoff: u32,
    /// Cells whose factor left the transform domain and inherited f = 1.
    #[serde(default)]
    pub guard_flags: u64,
    pub cells: BTreeMap<FeatureKey, TrianglePair>,
}

/// Development columns at granularity `g`: the calendar shear adds one
/// column beyond `max_delay / g` whenever `g > 1`.
fn j_periods_at(max_delay: u32, g: u32) -> usize {
    ((max_delay + g - 2) / g + 1) as usize
}

impl TriangleSet {
    fn empty(granularity: u32, cutoff: u32, max_delay: u32) -> Result<Self, TriangleError> {
        if granularity == 0 || cutoff % granularity != 0 || max_delay % granularity != 0 {
            return Err(TriangleError::BadGranularity {
                granularity,
                cutoff,
                max_delay,
            });
        }
        Ok(TriangleSet {
            granularity,
            k_periods: (cutoff / granularity) as usize,
            j_periods: j_periods_at(max_delay, granularity),
            cutoff,
            guard_flags: 0,
            cells: BTreeMap::new(),
        })
    }

    pub fn pair_mut(&mut self, key: &FeatureKey) -> &mut TrianglePair {
        self.cells.entry(key.clone()).or_default()
    }

    /// Total observed count over every cell.
    pub fn observed_total(&self) -> f64 {
        self.cells
            .values()
            .flat_map(|p| p.observed.values())
            .sum()
    }

    /// Total predicted count over every cell (the IBNR point estimate).
    pub fn predicted_total(&self) -> f64 {
        self.cells
            .values()
            .flat_map(|p| p.predicted.values())
            .sum()
    }

    /// Observed counts aggregated over feature combinations, dense K x J.
    pub fn aggregate_observed(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.j_periods]; self.k_periods];
        for pair in self.cells.values() {
            for (&(k, j), &v) in &pair.observed {
                out[k as usize][j as usize] += v;
            }
        }
        out
    }

    /// Predicted counts aggregated over feature combinations, dense K x J.
    pub fn aggregate_predicted(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.j_periods]; self.k_periods];
        for pair in self.cells.values() {
            for (&(k, j), &v) in &pair.predicted {
                out[k as usize][j as usize] += v;
            }
        }
        out
    }
}

fn cell_indices(
    record: &ClaimRecord,
    granularity: u32,
    cutoff: u32,
    max_delay: u32,
) -> Result<(u32, u32), TriangleError> {
    let out_of_range = |r: &ClaimRecord| TriangleError::OutOfRange {
        id: r.claim_id.clone(),
        u: r.accident_day,
        d: r.delay_days,
        cutoff,
    };
    if record.accident_day == 0 || record.accident_day > cutoff {
        return Err(out_of_range(record));
    }
    if record.delay_days > max_delay {
        return Err(out_of_range(record));
    }
    let u0 = record.accident_day - 1;
    let k = u0 / granularity;
    let j = (u0 + record.delay_days) / granularity - k;
    Ok((k, j))
}

/// Coarse cell of a fine cell `(k, l)` at fine granularity `delta`:
/// accident block of the period start, development by calendar blocks.
fn coarse_cell(fine_k: usize, fine_l: usize, delta: u32, coarse: u32) -> (u32, u32) {
    let day = fine_k as u32 * delta;
    let calendar = day + fine_l as u32 * delta;
    let k = day / coarse;
    (k, calendar / coarse - k)
}

/// Group observed claims into per-feature-combination triangles.
///
/// Claims reported after the cut-off (`U + d > cutoff`) are range errors:
/// observed data must fill the upper triangle only.
pub fn build_cells(
    records: &[ClaimRecord],
    encoding: &Encoding,
    granularity: u32,
) -> Result<TriangleSet, TriangleError> {
    let cutoff = encoding.cutoff;
    let max_delay = encoding.max_delay;
    let mut set = TriangleSet::empty(granularity, cutoff, max_delay)?;
    for record in records {
        if record.report_day() > cutoff {
            return Err(TriangleError::OutOfRange {
                id: record.claim_id.clone(),
                u: record.accident_day,
                d: record.delay_days,
                cutoff,
            });
        }
        let (k, j) = cell_indices(record, granularity, cutoff, max_delay)?;
        let key = encoding.feature_key(record)?;
        *set.pair_mut(&key).observed.entry((k, j)).or_insert(0.0) += 1.0;
    }
    Ok(set)
}

/// Bin claims without feature information (single aggregate triangle).
/// Used for truth files and the chain-ladder comparator.
pub fn build_cells_aggregate(
    records: &[ClaimRecord],
    granularity: u32,
    cutoff: u32,
    max_delay: u32,
    allow_lower: bool,
) -> Result<TriangleSet, TriangleError> {
    let mut set = TriangleSet::empty(granularity, cutoff, max_delay)?;
    let key = FeatureKey(vec![]);
    for record in records {
        if !allow_lower && record.report_day() > cutoff {
            return Err(TriangleError::OutOfRange {
                id: record.claim_id.clone(),
                u: record.accident_day,
                d: record.delay_days,
                cutoff,
            });
        }
        let (k, j) = cell_indices(record, granularity, cutoff, max_delay)?;
        *set.pair_mut(&key).observed.entry((k, j)).or_insert(0.0) += 1.0;
    }
    Ok(set)
}

/// Bin claims keyed by feature combination, allowing lower-triangle cells.
/// Used for held-out truth.
pub fn build_cells_truth(
    records: &[ClaimRecord],
    encoding: &Encoding,
    granularity: u32,
) -> Result<TriangleSet, TriangleError> {
    let mut set = TriangleSet::empty(granularity, encoding.cutoff, encoding.max_delay)?;
    for record in records {
        let (k, j) = cell_indices(record, granularity, encoding.cutoff, encoding.max_delay)?;
        let key = encoding.feature_key(record)?;
        *set.pair_mut(&key).observed.entry((k, j)).or_insert(0.0) += 1.0;
    }
    Ok(set)
}

/// Per-claim development state grouped by (fine accident period, feature
/// key, risk score). Identical scores collapse into one weighted walk.
struct WalkGroup {
    fine_k: usize,
    key: FeatureKey,
    weight: f64,
    count: f64,
}

fn group_walks(
    records: &[ClaimRecord],
    encoding: &Encoding,
    scores: &ScoreVector,
    base_level: Option<usize>,
) -> Result<Vec<WalkGroup>, TriangleError> {
    if scores.len() != records.len() {
        return Err(TriangleError::LengthMismatch {
            got: scores.len(),
            want: records.len(),
        });
    }
    let delta = encoding.delta;
    let mut map: BTreeMap<(usize, FeatureKey, u64), (f64, f64)> = BTreeMap::new();
    for (i, record) in records.iter().enumerate() {
        let (k, j) = cell_indices(record, delta, encoding.cutoff, encoding.max_delay)?;
        if let Some(level) = base_level {
            if j as usize != level {
                continue;
            }
        }
        let key = encoding.feature_key(record)?;
        let w = scores.as_slice()[i].exp();
        let entry = map
            .entry((k as usize, key, w.to_bits()))
            .or_insert((w, 0.0));
        entry.1 += 1.0;
    }
    Ok(map
        .into_iter()
        .map(|((fine_k, key, _), (weight, count))| WalkGroup {
            fine_k,
            key,
            weight,
            count,
        })
        .collect())
}

/// Forecast the lower triangle at granularity `out_granularity`.
///
/// Every observed claim contributes one unit to its row's diagonal
/// cumulant and is developed with factors built from its own risk score:
/// the predicted count in fine cell `(k, l)` is
/// `sum_i (prod_{m=K-k}^{l} f_m(i) - prod_{m=K-k}^{l-1} f_m(i))`, then
/// fine predictions are accumulated into coarse cells. Totals are
/// therefore identical at every output granularity.
pub fn predict_lower(
    records: &[ClaimRecord],
    encoding: &Encoding,
    scores: &ScoreVector,
    baseline: &BaselineHazard,
    eta: f64,
    out_granularity: u32,
) -> Result<TriangleSet, TriangleError> {
    if out_granularity % encoding.delta != 0 {
        return Err(TriangleError::NonDivisible {
            coarse: out_granularity,
            fine: encoding.delta,
        });
    }
    let mut set = TriangleSet::empty(out_granularity, encoding.cutoff, encoding.max_delay)?;
    // observed counts at the output granularity
    for record in records {
        if record.report_day() > encoding.cutoff {
            return Err(TriangleError::OutOfRange {
                id: record.claim_id.clone(),
                u: record.accident_day,
                d: record.delay_days,
                cutoff: encoding.cutoff,
            });
        }
        let (k, j) = cell_indices(record, out_granularity, encoding.cutoff, encoding.max_delay)?;
        let key = encoding.feature_key(record)?;
        *set.pair_mut(&key).observed.entry((k, j)).or_insert(0.0) += 1.0;
    }

    let delta = encoding.delta;
    let k_fine = encoding.k_periods();
    let j_fine = encoding.j_periods();
    let z: Vec<Option<f64>> = baseline
        .values
        .iter()
        .map(|v| v.map(|a| a * delta as f64))
        .collect();

    let mut guard_flags = 0u64;
    for group in group_walks(records, encoding, scores, None)? {
        let start = k_fine - group.fine_k; // first lower-triangle level
        if start >= j_fine {
            continue;
        }
        let pair = set.pair_mut(&group.key);
        let mut prod_prev = 1.0_f64;
        for l in start..j_fine {
            let factor = match z[l] {
                Some(zl) => {
                    let (f, flagged) = guarded_factor(zl * group.weight, eta);
                    if flagged {
                        guard_flags += 1;
                    }
                    f
                }
                None => 1.0,
            };
            let prod_now = prod_prev * factor;
            let increment = group.count * (prod_now - prod_prev);
            if increment != 0.0 {
                let cell = coarse_cell(group.fine_k, l, delta, out_granularity);
                *pair.predicted.entry(cell).or_insert(0.0) += increment;
            }
            prod_prev = prod_now;
        }
    }
    set.guard_flags = guard_flags;
    Ok(set)
}

/// Factor transform with the domain guard: cells whose hazard reaches the
/// pole inherit f = 1 and report a flag instead of failing the walk.
fn guarded_factor(z: f64, eta: f64) -> (f64, bool) {
    let bound = if eta < 1.0 { 1.0 / (1.0 - eta) } else { f64::INFINITY };
    if z >= bound {
        (1.0, true)
    } else {
        ((1.0 + eta * z) / (1.0 - (1.0 - eta) * z), false)
    }
}

/// Triangles, fitted occurrence ladder and development factors at a
/// coarser granularity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegrainedTriangle {
    pub granularity: u32,
    pub k_periods: usize,
    pub j_periods: usize,
    /// Coarse observed and predicted counts per feature combination.
    pub triangles: TriangleSet,
    /// Coarse fitted occurrence ladder per feature combination.
    pub fitted: BTreeMap<FeatureKey, BTreeMap<(u32, u32), f64>>,
    /// Coarse development factors per (key, k'): `factors[j']` develops
    /// cumulative fitted counts from j'-1 to j'; `None` where undefined.
    pub factors: BTreeMap<FeatureKey, Vec<Vec<Option<f64>>>>,
}

impl RegrainedTriangle {
    /// Survival values at the coarse grid for one (key, accident period):
    /// `S(z) = 1 / prod_{l=1..z} f'_l`, `S(0) = 1`. `None` if any needed
    /// factor is undefined.
    pub fn survival(&self, key: &FeatureKey, k: usize) -> Option<Vec<f64>> {
        let ladders = self.factors.get(key)?;
        let ladder = ladders.get(k)?;
        let mut out = Vec::with_capacity(self.j_periods);
        let mut prod = 1.0;
        for (j, f) in ladder.iter().enumerate() {
            if j > 0 {
                prod *= (*f)?;
            }
            out.push(1.0 / prod);
        }
        Some(out)
    }
}

/// Re-express the fitted development at granularity `out_granularity`.
///
/// Coarse observed counts come from direct re-binning of the claims;
/// coarse factors from block sums of the fitted occurrence ladder
/// (first-column counts developed by the fine factors); coarse
/// predictions from block sums of the fine predictions.
pub fn regrain(
    records: &[ClaimRecord],
    encoding: &Encoding,
    scores: &ScoreVector,
    baseline: &BaselineHazard,
    eta: f64,
    out_granularity: u32,
) -> Result<RegrainedTriangle, TriangleError> {
    let triangles = predict_lower(records, encoding, scores, baseline, eta, out_granularity)?;
    let delta = encoding.delta;
    let j_fine = encoding.j_periods();
    let z: Vec<Option<f64>> = baseline
        .values
        .iter()
        .map(|v| v.map(|a| a * delta as f64))
        .collect();

    // Fitted ladder: claims observed in fine development period 0 are
    // developed across the whole row, fine increments block-summed.
    let mut fitted: BTreeMap<FeatureKey, BTreeMap<(u32, u32), f64>> = BTreeMap::new();
    for group in group_walks(records, encoding, scores, Some(0))? {
        let cells = fitted.entry(group.key.clone()).or_default();
        let base = coarse_cell(group.fine_k, 0, delta, out_granularity);
        *cells.entry(base).or_insert(0.0) += group.count;
        let mut prod_prev = 1.0_f64;
        for l in 1..j_fine {
            let factor = match z[l] {
                Some(zl) => guarded_factor(zl * group.weight, eta).0,
                None => 1.0,
            };
            let prod_now = prod_prev * factor;
            let increment = group.count * (prod_now - prod_prev);
            if increment != 0.0 {
                let cell = coarse_cell(group.fine_k, l, delta, out_granularity);
                *cells.entry(cell).or_insert(0.0) += increment;
            }
            prod_prev = prod_now;
        }
    }

    // Coarse development factors: ratios of consecutive coarse cumulants
    // of the fitted row profiles. Each fine accident period's fitted
    // cumulative curve is its factor-product shape anchored so that the
    // fitted count at the period's observed diagonal equals its observed
    // claim count; anchoring at the row total keeps the ladder defined
    // for feature combinations with no first-column claims.
    let k_coarse = triangles.k_periods;
    let j_coarse = triangles.j_periods;
    let k_fine = encoding.k_periods();
    let mut coarse_cum: BTreeMap<(FeatureKey, usize), Vec<f64>> = BTreeMap::new();
    for group in group_walks(records, encoding, scores, None)? {
        let day0 = group.fine_k as u32 * delta;
        let coarse_k = (day0 / out_granularity) as usize;
        let diag = j_fine.min(k_fine - group.fine_k) - 1;
        // fitted shape S(l) = prod_{m<=l} f_m at this group's risk score,
        // captured at the last fine level of each coarse cell
        let mut shape_at_cell_end = vec![1.0_f64; j_coarse];
        let mut shape_at_diag = 1.0_f64;
        let mut shape = 1.0_f64;
        for l in 0..j_fine {
            if l >= 1 {
                let factor = match z[l] {
                    Some(zl) => guarded_factor(zl * group.weight, eta).0,
                    None => 1.0,
                };
                shape *= factor;
            }
            if l == diag {
                shape_at_diag = shape;
            }
            let cell = ((day0 + l as u32 * delta) / out_granularity) as usize - coarse_k;
            shape_at_cell_end[cell.min(j_coarse - 1)] = shape;
        }
        // carry cumulants forward through empty trailing cells
        for m in 1..j_coarse {
            if shape_at_cell_end[m] < shape_at_cell_end[m - 1] {
                shape_at_cell_end[m] = shape_at_cell_end[m - 1];
            }
        }
        let cum = coarse_cum
            .entry((group.key.clone(), coarse_k))
            .or_insert_with(|| vec![0.0; j_coarse]);
        for m in 0..j_coarse {
            cum[m] += group.count * shape_at_cell_end[m] / shape_at_diag;
        }
    }
    let mut factors: BTreeMap<FeatureKey, Vec<Vec<Option<f64>>>> = BTreeMap::new();
    for key in fitted.keys().chain(triangles.cells.keys()) {
        factors.entry(key.clone()).or_insert_with(|| {
            let mut per_k = vec![vec![None; j_coarse]; k_coarse];
            for ladder in per_k.iter_mut() {
                if j_coarse > 0 {
                    ladder[0] = Some(1.0);
                }
            }
            per_k
        });
    }
    for ((key, k), cum) in coarse_cum {
        if let Some(per_k) = factors.get_mut(&key) {
            for j in 1..j_coarse {
                if cum[j - 1] > 0.0 {
                    per_k[k][j] = Some(cum[j] / cum[j - 1]);
                }
            }
        }
    }

    Ok(RegrainedTriangle {
        granularity: out_granularity,
        k_periods: k_coarse,
        j_periods: j_coarse,
        triangles,
        fitted,
        factors,
    })
}
