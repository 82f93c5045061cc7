//! Baseline hazard estimation and the hazard-to-development-factor
//! transform.
//!
//! The baseline at tie level `j` is
//!
//! ```text
//! alpha0(j) = (1/delta) O_j / (S_j - eta Q_j)
//! ```
//!
//! with `S_j` the risk-set score sum, `Q_j` the occurrence score sum and
//! `eta in [0, 1]` the within-tie position constant (1/2 under the
//! uniform-reporting assumption). A cell hazard `alpha = alpha0 e^phi`
//! converts into a development factor through
//!
//! ```text
//! f = (1 + eta z) / (1 - (1 - eta) z),   z = delta * alpha
//! ```
//!
//! which at `eta = 1/2` is the familiar `(2 + z)/(2 - z)` and reproduces
//! raw age-to-age ratios exactly for every `eta` when fed raw occurrence
//! counts. The transform blows up as `z` approaches `1/(1-eta)`; at the
//! default `eta = 1/2` that is the usual `2/delta` bound on the hazard.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::claims::RiskGrid;
use crate::likelihood::ScoreVector;

#[derive(Debug, Error)]
pub enum HazardError {
    #[error("eta must lie in [0, 1], got {0}")]
    InvalidEta(f64),
    #[error("score vector length {got} does not match grid size {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("non-positive baseline denominator at level {0} with occurrences present")]
    BaselineDomain(usize),
    #[error(
        "development factor blows up at level {level}: delta * alpha = {z} >= {bound}; \
         choose a smaller delta"
    )]
    FactorBlowUp { level: usize, z: f64, bound: f64 },
    #[error("baseline eta {baseline} does not match requested eta {requested}")]
    EtaMismatch { baseline: f64, requested: f64 },
}

/// Estimated baseline hazard per tie level, in units 1/day.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineHazard {
    pub delta: u32,
    pub eta: f64,
    /// `alpha0(j)`; `None` where the exposure set is empty.
    pub values: Vec<Option<f64>>,
}

impl BaselineHazard {
    pub fn levels(&self) -> usize {
        self.values.len()
    }
}

/// Estimate the eta-corrected baseline hazard from a fitted score vector.
pub fn estimate_baseline(
    grid: &RiskGrid,
    scores: &ScoreVector,
    eta: f64,
) -> Result<BaselineHazard, HazardError> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(HazardError::InvalidEta(eta));
    }
    if scores.len() != grid.n() {
        return Err(HazardError::LengthMismatch {
            got: scores.len(),
            want: grid.n(),
        });
    }
    let weights: Vec<f64> = scores.as_slice().iter().map(|&p| p.exp()).collect();

    // Risk-set sums per level from the contiguous exposure intervals.
    let mut diff = vec![0.0_f64; grid.levels + 1];
    for (i, exp) in grid.exposure.iter().enumerate() {
        if let Some((lo, hi)) = exp {
            diff[*lo] += weights[i];
            diff[*hi + 1] -= weights[i];
        }
    }

    let mut values = Vec::with_capacity(grid.levels);
    let mut risk_sum = 0.0;
    for j in 0..grid.levels {
        risk_sum += diff[j];
        let occ = grid.occurrence_set(j);
        let occ_sum: f64 = occ.iter().map(|&i| weights[i]).sum();
        let o_j = occ.len() as f64;
        if occ.is_empty() {
            if risk_sum > 0.0 {
                values.push(Some(0.0));
            } else {
                values.push(None);
            }
            continue;
        }
        let denom = risk_sum - eta * occ_sum;
        if !(denom > 0.0) {
            return Err(HazardError::BaselineDomain(j));
        }
        values.push(Some(o_j / (grid.delta as f64 * denom)));
    }
    Ok(BaselineHazard {
        delta: grid.delta,
        eta,
        values,
    })
}

/// One row of a development-factor table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorCell {
    pub hazard: f64,
    pub factor: f64,
    /// True when the cell had no exposure information and inherited f = 1.
    pub flagged: bool,
}

/// Convert one cell hazard into a development factor.
pub fn factor_from_hazard(
    delta: u32,
    alpha: f64,
    eta: f64,
    level: usize,
) -> Result<f64, HazardError> {
    let z = delta as f64 * alpha;
    let bound = if eta < 1.0 { 1.0 / (1.0 - eta) } else { f64::INFINITY };
    if z >= bound {
        return Err(HazardError::FactorBlowUp {
            level,
            z,
            bound,
        });
    }
    Ok((1.0 + eta * z) / (1.0 - (1.0 - eta) * z))
}

/// Development-factor ladder for one accident period and feature
/// combination: `factors[j]` develops cumulative counts from `j-1` to `j`
/// for `j = 1..levels-1` (`factors[0]` is unused and fixed at 1).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorLadder {
    pub cells: Vec<FactorCell>,
}

impl FactorLadder {
    pub fn factor(&self, j: usize) -> f64 {
        self.cells[j].factor
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Build the factor ladder for one risk score `e^phi`.
///
/// `eta` must equal the value used for the baseline; mixed-eta use is
/// rejected.
pub fn dev_factors_from_hazard(
    baseline: &BaselineHazard,
    risk_score: f64,
    eta: f64,
) -> Result<FactorLadder, HazardError> {
    if eta != baseline.eta {
        return Err(HazardError::EtaMismatch {
            baseline: baseline.eta,
            requested: eta,
        });
    }
    let mut cells = Vec::with_capacity(baseline.levels());
    for (j, alpha0) in baseline.values.iter().enumerate() {
        if j == 0 {
            cells.push(FactorCell {
                hazard: alpha0.unwrap_or(0.0) * risk_score,
                factor: 1.0,
                flagged: alpha0.is_none(),
            });
            continue;
        }
        match alpha0 {
            Some(a0) => {
                let alpha = a0 * risk_score;
                let factor = factor_from_hazard(baseline.delta, alpha, eta, j)?;
                cells.push(FactorCell {
                    hazard: alpha,
                    factor,
                    flagged: false,
                });
            }
            None => cells.push(FactorCell {
                hazard: 0.0,
                factor: 1.0,
                flagged: true,
            }),
        }
    }
    Ok(FactorLadder { cells })
}

/// Predicted survival values `S(j) = 1 / prod_{l<=j} f_l` for
/// `j = 0..levels-1`; `S(0) = 1` (empty product).
pub fn survival_curve(ladder: &FactorLadder) -> Vec<f64> {
    let mut out = Vec::with_capacity(ladder.len());
    let mut prod = 1.0;
    for (j, cell) in ladder.cells.iter().enumerate() {
        if j > 0 {
            prod *= cell.factor;
        }
        out.push(1.0 / prod);
    }
    out
}

/// Development factors indexed by accident period, development period and
/// feature combination, at the baseline's native granularity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorTable {
    pub granularity: u32,
    pub eta: f64,
    pub k_periods: usize,
    /// One ladder per accident period, keyed by feature combination.
    pub ladders: std::collections::BTreeMap<crate::claims::FeatureKey, Vec<FactorLadder>>,
}

impl FactorTable {
    pub fn ladder(&self, key: &crate::claims::FeatureKey, k: usize) -> Option<&FactorLadder> {
        self.ladders.get(key).and_then(|v| v.get(k))
    }

    /// Long-format export: k, j, feature values, hazard, factor, flag.
    pub fn write_csv<W: std::io::Write>(
        &self,
        writer: W,
        feature_names: &[String],
    ) -> std::io::Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["k".to_string(), "j".to_string()];
        header.extend(feature_names.iter().cloned());
        header.extend(["hazard".to_string(), "factor".to_string(), "flag".to_string()]);
        wtr.write_record(&header)?;
        for (key, ladders) in &self.ladders {
            for (k, ladder) in ladders.iter().enumerate() {
                for (j, cell) in ladder.cells.iter().enumerate().skip(1) {
                    let mut row = vec![k.to_string(), j.to_string()];
                    row.extend(key.0.iter().cloned());
                    row.push(cell.hazard.to_string());
                    row.push(cell.factor.to_string());
                    row.push((cell.flagged as u8).to_string());
                    wtr.write_record(&row)?;
                }
            }
        }
        wtr.flush()
    }
}

/// Build the native-granularity factor table. Each feature combination is
/// represented by the encoded features of its first observed claim; the
/// accident-day input per period `k` is the period's first day.
pub fn build_factor_table(
    records: &[crate::claims::ClaimRecord],
    encoding: &crate::claims::Encoding,
    scorer: &dyn crate::RiskScorer,
    baseline: &BaselineHazard,
    eta: f64,
) -> Result<FactorTable, HazardError> {
    let mut representatives: std::collections::BTreeMap<crate::claims::FeatureKey, Vec<f64>> =
        std::collections::BTreeMap::new();
    for record in records {
        let (Ok(key), Ok(row)) = (encoding.feature_key(record), encoding.encode_row(record))
        else {
            continue;
        };
        representatives.entry(key).or_insert(row);
    }
    let k_periods = encoding.k_periods();
    let mut ladders = std::collections::BTreeMap::new();
    for (key, mut row) in representatives {
        let mut per_k = Vec::with_capacity(k_periods);
        for k in 0..k_periods {
            row[0] = encoding.period_accident_input(k);
            let risk = scorer.log_risk(&row).exp();
            per_k.push(dev_factors_from_hazard(baseline, risk, eta)?);
        }
        ladders.insert(key, per_k);
    }
    Ok(FactorTable {
        granularity: baseline.delta,
        eta,
        k_periods,
        ladders,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::claims::RiskGrid;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn grid_two_exposed_one_occurrence() -> RiskGrid {
        // |R(0)| = 2, O_0 = 1 on a one-level grid.
        RiskGrid::from_parts(
            1,
            1,
            2,
            vec![Some((0, 0)), Some((0, 0))],
            vec![Some(0), None],
        )
        .unwrap()
    }

    #[test]
    fn baseline_direct_substitution() {
        let grid = grid_two_exposed_one_occurrence();
        let b = estimate_baseline(&grid, &ScoreVector::zeros(2), 0.5).unwrap();
        assert!((b.values[0].unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn baseline_eta_zero_is_uncorrected() {
        let grid = grid_two_exposed_one_occurrence();
        let b = estimate_baseline(&grid, &ScoreVector::zeros(2), 0.0).unwrap();
        assert!((b.values[0].unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn baseline_zero_when_no_occurrences() {
        let grid = RiskGrid::from_parts(
            2,
            1,
            3,
            vec![Some((0, 1)), Some((0, 1))],
            vec![Some(0), Some(0)],
        )
        .unwrap();
        let b = estimate_baseline(&grid, &ScoreVector::zeros(2), 0.5).unwrap();
        assert_eq!(b.values[1], Some(0.0));
    }

    #[test]
    fn factor_direct_substitution() {
        // z = 2/3 at eta = 1/2: f = (2 + 2/3) / (2 - 2/3) = 2.
        let f = factor_from_hazard(1, 2.0 / 3.0, 0.5, 1).unwrap();
        assert!((f - 2.0).abs() < 1e-15);
    }

    #[test]
    fn factor_is_one_at_zero_hazard() {
        let f = factor_from_hazard(1, 0.0, 0.5, 1).unwrap();
        assert_eq!(f, 1.0);
    }

    #[test]
    fn factor_blow_up_detected() {
        let err = factor_from_hazard(1, 2.1, 0.5, 3).unwrap_err();
        assert!(matches!(err, HazardError::FactorBlowUp { level: 3, .. }));
    }

    #[test]
    fn eta_identity_reproduces_age_to_age_exactly() {
        // For raw occurrence columns: z = O_j / (C_j - eta O_j) with
        // C_j = sum_{l<=j} O_l must reproduce C_j / C_{j-1} for every eta.
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        for _ in 0..50 {
            let cols = rng.gen_range(3..10);
            let counts: Vec<f64> = (0..cols).map(|_| rng.gen_range(1..40) as f64).collect();
            let mut cum = 0.0;
            let mut cums = Vec::new();
            for &o in &counts {
                cum += o;
                cums.push(cum);
            }
            for &eta in &[0.0, 0.25, 0.5, 0.75, 1.0] {
                for j in 1..cols {
                    let expected = cums[j] / cums[j - 1];
                    let z = counts[j] / (cums[j] - eta * counts[j]);
                    let f = (1.0 + eta * z) / (1.0 - (1.0 - eta) * z);
                    assert!(
                        (f - expected).abs() <= 1e-12 * expected,
                        "eta={eta} j={j}: {f} vs {expected}"
                    );
                }
            }
        }
    }

    #[test]
    fn survival_is_monotone_and_anchored() {
        let ladder = FactorLadder {
            cells: vec![
                FactorCell { hazard: 0.0, factor: 1.0, flagged: false },
                FactorCell { hazard: 0.5, factor: 2.0, flagged: false },
                FactorCell { hazard: 0.2, factor: 1.25, flagged: false },
            ],
        };
        let s = survival_curve(&ladder);
        assert_eq!(s[0], 1.0);
        assert!((s[1] - 0.5).abs() < 1e-15);
        assert!((s[2] - 0.4).abs() < 1e-15);
        for w in s.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn all_unit_factors_give_unit_survival() {
        let ladder = FactorLadder {
            cells: (0..4)
                .map(|_| FactorCell { hazard: 0.0, factor: 1.0, flagged: false })
                .collect(),
        };
        assert!(survival_curve(&ladder).iter().all(|&s| s == 1.0));
    }

    #[test]
    fn mixed_eta_rejected() {
        let grid = grid_two_exposed_one_occurrence();
        let b = estimate_baseline(&grid, &ScoreVector::zeros(2), 0.5).unwrap();
        let err = dev_factors_from_hazard(&b, 1.0, 0.25).unwrap_err();
        assert!(matches!(err, HazardError::EtaMismatch { .. }));
    }

    #[test]
    fn factor_table_builds_and_exports() {
        use crate::claims::{
            preprocess_features, ClaimRecord, ColumnRole, FeatureValue, PreprocessConfig, Schema,
        };
        struct Flat;
        impl crate::RiskScorer for Flat {
            fn log_risk(&self, _row: &[f64]) -> f64 {
                0.0
            }
        }
        let schema = Schema::new(&[
            ("id", ColumnRole::Id),
            ("accident_day", ColumnRole::AccidentDay),
            ("delay_day", ColumnRole::DelayDay),
            ("claim_type", ColumnRole::Categorical),
        ]);
        let records: Vec<ClaimRecord> = (0..30)
            .map(|i| ClaimRecord {
                claim_id: i.to_string(),
                accident_day: 1 + (i % 4) as u32,
                delay_days: (i % 2) as u32,
                features: vec![FeatureValue::Cat((i % 2).to_string())],
            })
            .collect();
        let pre = PreprocessConfig {
            cutoff: Some(6),
            ..Default::default()
        };
        let data = preprocess_features(&records, &schema, &pre).unwrap();
        let grid = crate::claims::build_risk_grid(&records, 1, 6, 6).unwrap();
        let baseline = estimate_baseline(&grid, &ScoreVector::zeros(30), 0.5).unwrap();
        let table =
            build_factor_table(&records, &data.encoding, &Flat, &baseline, 0.5).unwrap();
        assert_eq!(table.ladders.len(), 2);
        for ladders in table.ladders.values() {
            assert_eq!(ladders.len(), 6);
        }
        let mut csv = Vec::new();
        table
            .write_csv(&mut csv, &data.encoding.feature_names())
            .unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("k,j,claim_type,hazard,factor,flag"));
        assert!(text.lines().count() > 10);
    }
}
