//! Semi-parametric proportional-hazard fitter: penalized Newton
//! iterations on the partial likelihood with linear terms and optional
//! P-spline smooths.
//!
//! The log-risk is `phi(u, x) = sum_s zeta_s(x^s) + theta' x_linear`
//! where each smooth `zeta_s` is a cubic B-spline expansion penalized by
//! `rho_s` times the squared second differences of its coefficients. One
//! indicator per categorical feature is dropped to restore
//! identifiability under the likelihood's shift invariance.
//!
//! The Newton direction uses the diagonal likelihood curvature chained
//! through the design (`X' diag(h) X` plus penalty blocks); step halving
//! keeps the penalized loss monotone.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::claims::{ColumnKind, EncodedDataset, RiskGrid};
use crate::likelihood::{grad_and_hess, LikelihoodError, ScoreVector};
use crate::spline::{SplineBasis, SplineError};
use crate::RiskScorer;

#[derive(Debug, Error)]
pub enum CoxError {
    #[error("config error: {0}")]
    Config(String),
    #[error("identifiability error: collinear or constant design columns: {}", columns.join(", "))]
    Identifiability { columns: Vec<String> },
    #[error(
        "did not converge after {iterations} iterations: gradient max-norm {grad_norm:.3e}, penalized loss {loss:.6}"
    )]
    NonConvergence {
        iterations: usize,
        grad_norm: f64,
        loss: f64,
    },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error(transparent)]
    Spline(#[from] SplineError),
}

/// How the accident-day column enters the log-risk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccidentTerm {
    Excluded,
    Linear,
    Spline,
}

fn d_accident() -> AccidentTerm { AccidentTerm::Linear }
fn d_knots() -> usize { 10 }
fn d_smoothing() -> f64 { 1.0 }
fn d_tol() -> f64 { 1e-8 }
fn d_max_iter() -> usize { 100 }
fn d_max_halvings() -> usize { 30 }

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoxConfig {
    #[serde(default = "d_accident")]
    pub accident: AccidentTerm,
    /// Continuous features routed through splines (by feature name).
    #[serde(default)]
    pub spline_features: Vec<String>,
    /// Basis size per smooth (>= 4).
    #[serde(default = "d_knots")]
    pub knots: usize,
    /// Default smoothing weight for every smooth.
    #[serde(default = "d_smoothing")]
    pub smoothing: f64,
    /// Per-feature overrides of the smoothing weight.
    #[serde(default)]
    pub smoothing_overrides: BTreeMap<String, f64>,
    /// Convergence tolerance on the penalized gradient max-norm, relative
    /// to the loss scale: stop when `|grad|_inf <= tol * (1 + |loss|)`.
    #[serde(default = "d_tol")]
    pub tol: f64,
    #[serde(default = "d_max_iter")]
    pub max_iter: usize,
    #[serde(default = "d_max_halvings")]
    pub max_halvings: usize,
}

impl Default for CoxConfig {
    fn default() -> Self {
        CoxConfig {
            accident: d_accident(),
            spline_features: Vec::new(),
            knots: d_knots(),
            smoothing: d_smoothing(),
            smoothing_overrides: BTreeMap::new(),
            tol: d_tol(),
            max_iter: d_max_iter(),
            max_halvings: d_max_halvings(),
        }
    }
}

/// One additive term of the fitted log-risk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum CoxTerm {
    /// `coefficient * row[source]`.
    Linear {
        source: usize,
        name: String,
        coefficient: f64,
    },
    /// `sum_k beta_k B_k(row[source])`.
    Spline {
        source: usize,
        name: String,
        basis: SplineBasis,
        rho: f64,
        coefficients: Vec<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub iterations: usize,
    pub final_grad_norm: f64,
    /// Unpenalized negative log partial likelihood at the solution.
    pub final_loss: f64,
    pub final_penalized_loss: f64,
    /// Penalized loss after each accepted iteration (monotone non-increasing).
    pub trajectory: Vec<f64>,
    pub converged: bool,
}

/// Fitted proportional-hazard log-risk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoxModel {
    pub terms: Vec<CoxTerm>,
    pub report: FitReport,
}

impl CoxModel {
    /// Coefficient of the indicator column for `feature` = `level`,
    /// 0 when that level is the dropped reference.
    pub fn indicator_coefficient(
        &self,
        data_columns: &[ColumnKind],
        feature: &str,
        level: &str,
    ) -> Option<f64> {
        let source = data_columns.iter().position(|c| {
            matches!(c, ColumnKind::Indicator { feature: f, level: l } if f == feature && l == level)
        })?;
        for term in &self.terms {
            if let CoxTerm::Linear { source: s, coefficient, .. } = term {
                if *s == source {
                    return Some(*coefficient);
                }
            }
        }
        Some(0.0)
    }

    /// Total second-difference penalty `1/2 sum_s rho_s beta' P beta` at
    /// the fitted coefficients.
    pub fn penalty_value(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| match t {
                CoxTerm::Spline { basis, rho, coefficients, .. } => {
                    0.5 * rho * basis.penalty(coefficients)
                }
                CoxTerm::Linear { .. } => 0.0,
            })
            .sum()
    }
}

impl RiskScorer for CoxModel {
    fn log_risk(&self, row: &[f64]) -> f64 {
        let mut phi = 0.0;
        for term in &self.terms {
            match term {
                CoxTerm::Linear { source, coefficient, .. } => {
                    phi += coefficient * row[*source];
                }
                CoxTerm::Spline { source, basis, coefficients, .. } => {
                    phi += basis.evaluate(coefficients, row[*source]);
                }
            }
        }
        phi
    }
}

/// Score encoded rows with a fitted model.
pub fn cox_log_risk(model: &CoxModel, rows: &[Vec<f64>]) -> ScoreVector {
    model.score_rows(rows)
}

struct DesignColumn {
    /// Per-claim values.
    values: Vec<f64>,
    name: String,
}

struct TermLayout {
    term: CoxTerm,
    /// Design-column range occupied by this term.
    cols: std::ops::Range<usize>,
}

fn build_design(
    data: &EncodedDataset,
    config: &CoxConfig,
) -> Result<(Vec<DesignColumn>, Vec<TermLayout>), CoxError> {
    let n = data.n();
    let mut columns: Vec<DesignColumn> = Vec::new();
    let mut layouts: Vec<TermLayout> = Vec::new();
    let enc = &data.encoding;

    let push_linear = |columns: &mut Vec<DesignColumn>,
                           layouts: &mut Vec<TermLayout>,
                           source: usize,
                           name: String| {
        let start = columns.len();
        columns.push(DesignColumn {
            values: data.rows.iter().map(|r| r[source]).collect(),
            name: name.clone(),
        });
        layouts.push(TermLayout {
            term: CoxTerm::Linear {
                source,
                name,
                coefficient: 0.0,
            },
            cols: start..start + 1,
        });
    };

    let push_spline = |columns: &mut Vec<DesignColumn>,
                           layouts: &mut Vec<TermLayout>,
                           source: usize,
                           name: String,
                           rho: f64|
     -> Result<(), CoxError> {
        let values: Vec<f64> = data.rows.iter().map(|r| r[source]).collect();
        let basis = SplineBasis::from_values(&values, config.knots)?;
        let start = columns.len();
        for k in 0..basis.size {
            columns.push(DesignColumn {
                values: values.iter().map(|&v| basis.row(v)[k]).collect(),
                name: format!("{name}[b{k}]"),
            });
        }
        let size = basis.size;
        layouts.push(TermLayout {
            term: CoxTerm::Spline {
                source,
                name,
                basis,
                rho,
                coefficients: vec![0.0; size],
            },
            cols: start..start + size,
        });
        Ok(())
    };

    // accident day (encoded column 0)
    match config.accident {
        AccidentTerm::Excluded => {}
        AccidentTerm::Linear => push_linear(&mut columns, &mut layouts, 0, "accident_day".into()),
        AccidentTerm::Spline => {
            let rho = config
                .smoothing_overrides
                .get("accident_day")
                .copied()
                .unwrap_or(config.smoothing);
            push_spline(&mut columns, &mut layouts, 0, "accident_day".into(), rho)?;
        }
    }

    // feature columns: drop the first indicator of each categorical
    let mut seen_reference: BTreeMap<String, bool> = BTreeMap::new();
    for (idx, kind) in enc.columns.iter().enumerate() {
        match kind {
            ColumnKind::AccidentDay => {}
            ColumnKind::Indicator { feature, level } => {
                let seen = seen_reference.entry(feature.clone()).or_insert(false);
                if !*seen {
                    *seen = true; // reference level, dropped
                    continue;
                }
                push_linear(
                    &mut columns,
                    &mut layouts,
                    idx,
                    format!("{feature}={level}"),
                );
            }
            ColumnKind::Scaled { feature } => {
                if config.spline_features.iter().any(|f| f == feature) {
                    let rho = config
                        .smoothing_overrides
                        .get(feature)
                        .copied()
                        .unwrap_or(config.smoothing);
                    push_spline(&mut columns, &mut layouts, idx, feature.clone(), rho)?;
                } else {
                    push_linear(&mut columns, &mut layouts, idx, feature.clone());
                }
            }
        }
    }

    if columns.is_empty() {
        return Err(CoxError::Config(
            "design matrix has no columns; include at least one feature or the accident day"
                .to_string(),
        ));
    }
    let _ = n;
    Ok((columns, layouts))
}

fn check_identifiability(columns: &[DesignColumn]) -> Result<(), CoxError> {
    let mut bad: Vec<String> = Vec::new();
    for col in columns {
        let min = col.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = col.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(max > min) {
            bad.push(format!("{} (constant)", col.name));
        }
    }
    for a in 0..columns.len() {
        for b in (a + 1)..columns.len() {
            if columns[a]
                .values
                .iter()
                .zip(&columns[b].values)
                .all(|(x, y)| x == y)
            {
                bad.push(format!("{} = {}", columns[a].name, columns[b].name));
            }
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CoxError::Identifiability { columns: bad })
    }
}

/// Penalty matrix over the full design, block-diagonal per spline term.
fn penalty_full(layouts: &[TermLayout], p: usize) -> DMatrix<f64> {
    let mut pen = DMatrix::zeros(p, p);
    for layout in layouts {
        if let CoxTerm::Spline { basis, rho, .. } = &layout.term {
            let pm = basis.penalty_matrix();
            for (a, row) in pm.iter().enumerate() {
                for (b, &v) in row.iter().enumerate() {
                    pen[(layout.cols.start + a, layout.cols.start + b)] += rho * v;
                }
            }
        }
    }
    pen
}

fn penalty_value(layouts: &[TermLayout], theta: &DVector<f64>) -> f64 {
    let mut value = 0.0;
    for layout in layouts {
        if let CoxTerm::Spline { basis, rho, .. } = &layout.term {
            let beta: Vec<f64> = layout.cols.clone().map(|c| theta[c]).collect();
            value += 0.5 * rho * basis.penalty(&beta);
        }
    }
    value
}

fn solve_spd(h: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>, CoxError> {
    if let Some(chol) = h.clone().cholesky() {
        return Ok(chol.solve(rhs));
    }
    // escalating ridge for indefinite curvature
    let scale = h.diagonal().amax().max(1.0);
    for exp in [-10, -8, -6, -4, -2] {
        let ridge = scale * 10f64.powi(exp);
        let mut hj = h.clone();
        for i in 0..h.nrows() {
            hj[(i, i)] += ridge;
        }
        if let Some(chol) = hj.cholesky() {
            return Ok(chol.solve(rhs));
        }
    }
    Err(CoxError::Numeric(
        "Newton system is not positive definite even with ridge".to_string(),
    ))
}

/// Fit the penalized proportional-hazard model.
pub fn fit_cox(
    data: &EncodedDataset,
    grid: &RiskGrid,
    config: &CoxConfig,
) -> Result<CoxModel, CoxError> {
    if config.knots < 4 {
        return Err(CoxError::Config(format!(
            "spline basis needs at least 4 functions, got {}",
            config.knots
        )));
    }
    if config.smoothing < 0.0 {
        return Err(CoxError::Config("smoothing weight must be >= 0".to_string()));
    }
    let (columns, mut layouts) = build_design(data, config)?;
    check_identifiability(&columns)?;

    let n = data.n();
    let p = columns.len();
    let pen = penalty_full(&layouts, p);

    let scores_of = |theta: &DVector<f64>| -> ScoreVector {
        let mut phi = vec![0.0_f64; n];
        for (c, col) in columns.iter().enumerate() {
            let t = theta[c];
            if t != 0.0 {
                for (i, v) in col.values.iter().enumerate() {
                    phi[i] += t * v;
                }
            }
        }
        ScoreVector(phi)
    };

    let mut theta = DVector::zeros(p);
    let mut derivs = grad_and_hess(grid, &scores_of(&theta))?;
    let mut pen_loss = derivs.loss + penalty_value(&layouts, &theta);
    let mut trajectory = vec![pen_loss];
    let mut converged = false;
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;

    for iter in 0..config.max_iter {
        iterations = iter;
        // penalized gradient: X' g + P theta
        let mut grad = DVector::zeros(p);
        for (c, col) in columns.iter().enumerate() {
            grad[c] = col
                .values
                .iter()
                .zip(&derivs.grad)
                .map(|(x, g)| x * g)
                .sum::<f64>();
        }
        grad += &pen * &theta;
        grad_norm = grad.amax();
        if grad_norm <= config.tol * (1.0 + pen_loss.abs()) {
            converged = true;
            break;
        }

        // curvature: X' diag(h) X + P
        let mut hess = pen.clone();
        for a in 0..p {
            for b in a..p {
                let mut s = 0.0;
                for i in 0..n {
                    s += columns[a].values[i] * derivs.hess[i] * columns[b].values[i];
                }
                hess[(a, b)] += s;
                if a != b {
                    hess[(b, a)] += s;
                }
            }
        }

        let direction = solve_spd(&hess, &grad)?;
        let mut step = 1.0_f64;
        let mut accepted = false;
        // ties at floating-point resolution count as descent
        let slack = 1e-12 * (1.0 + pen_loss.abs());
        for _ in 0..=config.max_halvings {
            let candidate = &theta - step * &direction;
            match grad_and_hess(grid, &scores_of(&candidate)) {
                Ok(d) => {
                    let cand_pen = d.loss + penalty_value(&layouts, &candidate);
                    if cand_pen <= pen_loss + slack {
                        theta = candidate;
                        derivs = d;
                        pen_loss = cand_pen.min(pen_loss);
                        accepted = true;
                        break;
                    }
                }
                Err(LikelihoodError::NumericDomain { .. }) | Err(LikelihoodError::NonFiniteScore(_)) => {}
                Err(e) => return Err(e.into()),
            }
            step *= 0.5;
        }
        trajectory.push(pen_loss);
        if !accepted {
            // no descent step found: either done or genuinely stuck
            break;
        }
    }

    if !converged {
        // re-check the gradient at the final iterate
        let mut grad = DVector::zeros(p);
        for (c, col) in columns.iter().enumerate() {
            grad[c] = col
                .values
                .iter()
                .zip(&derivs.grad)
                .map(|(x, g)| x * g)
                .sum::<f64>();
        }
        grad += &pen * &theta;
        grad_norm = grad.amax();
        converged = grad_norm <= config.tol * (1.0 + pen_loss.abs());
    }
    if !converged && iterations + 1 >= config.max_iter {
        return Err(CoxError::NonConvergence {
            iterations: iterations + 1,
            grad_norm,
            loss: pen_loss,
        });
    }

    // write fitted coefficients back into the terms
    for layout in &mut layouts {
        match &mut layout.term {
            CoxTerm::Linear { coefficient, .. } => *coefficient = theta[layout.cols.start],
            CoxTerm::Spline { coefficients, .. } => {
                for (o, c) in layout.cols.clone().enumerate() {
                    coefficients[o] = theta[c];
                }
            }
        }
    }

    let final_loss = derivs.loss;
    Ok(CoxModel {
        terms: layouts.into_iter().map(|l| l.term).collect(),
        report: FitReport {
            iterations: iterations + 1,
            final_grad_norm: grad_norm,
            final_loss,
            final_penalized_loss: pen_loss,
            trajectory,
            converged: true,
        },
    })
}
