//! Claims-reserving engine built on individual claim records.
//!
//! The pipeline estimates an accident-date- and feature-dependent hazard
//! in reverse development time from individual claims, converts it into
//! development factors at any reporting granularity, forecasts IBNR
//! claim counts into the lower run-off triangle, and scores the
//! forecasts against held-out data.
//!
//! Modules follow the pipeline stages:
//!
//! * [`claims`] — ingestion, feature encoding, exposure/occurrence grid
//! * [`likelihood`] — tie-corrected negative log partial likelihood
//! * [`cox`], [`mlp`], [`gbm`] — the three log-risk estimators
//! * [`hazard`] — baseline hazard and development-factor transform
//! * [`triangle`] — run-off cells, lower-triangle forecasts, regraining
//! * [`chainladder`] — the classical aggregate comparator
//! * [`simulate`] — synthetic claim generators (scenarios Alpha..Zeta)
//! * [`evaluate`] — error metrics, CRPS and likelihood reports
//! * [`tune`] — seeded random hyperparameter search
//! * [`pipeline`] — file-based commands wired into the CLI

pub mod chainladder;
pub mod claims;
pub mod cox;
pub mod evaluate;
pub mod gbm;
pub mod hazard;
pub mod likelihood;
pub mod mlp;
pub mod pipeline;
pub mod simulate;
pub mod spline;
pub mod triangle;
pub mod tune;

/// Anything that can assign a log-risk score to an encoded row.
///
/// Row layout matches [`claims::Encoding`]: scaled accident day first,
/// encoded feature columns after.
pub trait RiskScorer {
    fn log_risk(&self, row: &[f64]) -> f64;

    fn score_rows(&self, rows: &[Vec<f64>]) -> likelihood::ScoreVector {
        likelihood::ScoreVector(rows.iter().map(|r| self.log_risk(r)).collect())
    }
}
