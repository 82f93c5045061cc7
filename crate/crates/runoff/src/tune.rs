//! Seeded random hyperparameter search with claim-wise cross-validation.
//!
//! Each trial draws hyperparameters uniformly from fixed ranges, fits on
//! every fold complement and scores the held-out fold by its average
//! negative log partial likelihood. The winner is the argmin of the mean
//! fold score; failing trials are logged and skipped.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::claims::{build_risk_grid, ClaimRecord, PreprocessConfig, Schema};
use crate::evaluate::average_nll;
use crate::gbm::{fit_gbm, gbm_log_risk, GbmConfig};
use crate::mlp::{fit_mlp, mlp_log_risk, Activation, MlpConfig};

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("config error: {0}")]
    Config(String),
    #[error("every trial failed; last error: {0}")]
    AllTrialsFailed(String),
    #[error(transparent)]
    Claims(#[from] crate::claims::ClaimsError),
}

/// What is being tuned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TuneTarget {
    Mlp,
    Gbm,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneConfig {
    pub target: TuneTarget,
    pub trials: usize,
    pub folds: usize,
    pub seed: u64,
    /// Training epochs for network trials.
    pub mlp_epochs: usize,
    /// Boosting rounds for tree trials.
    pub gbm_rounds: usize,
}

impl TuneConfig {
    pub fn new(target: TuneTarget) -> Self {
        TuneConfig {
            target,
            trials: 20,
            folds: 3,
            seed: 0,
            mlp_epochs: 150,
            gbm_rounds: 100,
        }
    }
}

/// Hyperparameters of one trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TrialParams {
    Mlp(MlpConfig),
    Gbm(GbmConfig),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub index: usize,
    pub params: TrialParams,
    /// Mean held-out average negative log partial likelihood; `None` when
    /// the trial failed.
    pub score: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub best: TrialParams,
    pub best_score: f64,
    pub best_index: usize,
    pub trials: Vec<TrialOutcome>,
}

fn draw_mlp(rng: &mut ChaCha12Rng, epochs: usize) -> MlpConfig {
    MlpConfig {
        hidden_layers: rng.gen_range(2..=10),
        hidden_nodes: rng.gen_range(2..=10),
        activation: if rng.gen_bool(0.5) {
            Activation::Tanh
        } else {
            Activation::Rectifier
        },
        learning_rate: rng.gen_range(0.005..=0.5),
        epochs,
        rho: rng.gen_range(0.0..=0.5),
        eps: rng.gen_range(0.0..=0.5),
        seed: rng.gen(),
    }
}

fn draw_gbm(rng: &mut ChaCha12Rng, rounds: usize) -> GbmConfig {
    GbmConfig {
        rounds,
        eta: rng.gen_range(0.0..=1.0),
        max_depth: rng.gen_range(0..=25),
        gamma: 0.0,
        lambda: rng.gen_range(0.0..=50.0),
        alpha: rng.gen_range(0.0..=50.0),
        min_child_weight: rng.gen_range(0.0..=50.0),
        subsample: rng.gen_range(0.1..=1.0),
        seed: rng.gen(),
    }
}

/// Split claim indices into `folds` seeded groups of near-equal size.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut assignment = vec![0usize; n];
    for (pos, &i) in idx.iter().enumerate() {
        assignment[i] = pos % folds;
    }
    assignment
}

fn fold_score(
    records: &[ClaimRecord],
    schema: &Schema,
    preprocess: &PreprocessConfig,
    assignment: &[usize],
    folds: usize,
    params: &TrialParams,
) -> Result<f64, String> {
    let mut total = 0.0;
    for fold in 0..folds {
        let train: Vec<ClaimRecord> = records
            .iter()
            .zip(assignment)
            .filter(|(_, &a)| a != fold)
            .map(|(r, _)| r.clone())
            .collect();
        let valid: Vec<ClaimRecord> = records
            .iter()
            .zip(assignment)
            .filter(|(_, &a)| a == fold)
            .map(|(r, _)| r.clone())
            .collect();
        if train.is_empty() || valid.is_empty() {
            return Err("empty fold".to_string());
        }
        let train_data =
            crate::claims::preprocess_features(&train, schema, preprocess).map_err(|e| e.to_string())?;
        let cutoff = train_data.encoding.cutoff;
        let max_delay = train_data.encoding.max_delay;
        let train_grid =
            build_risk_grid(&train, preprocess.delta, cutoff, max_delay).map_err(|e| e.to_string())?;

        let valid_rows: Result<Vec<Vec<f64>>, _> = valid
            .iter()
            .map(|r| train_data.encoding.encode_row(r))
            .collect();
        let valid_rows = valid_rows.map_err(|e| e.to_string())?;
        let valid_grid =
            build_risk_grid(&valid, preprocess.delta, cutoff, max_delay).map_err(|e| e.to_string())?;

        let scores = match params {
            TrialParams::Mlp(cfg) => {
                let model = fit_mlp(&train_data, &train_grid, cfg).map_err(|e| e.to_string())?;
                mlp_log_risk(&model, &valid_rows).map_err(|e| e.to_string())?
            }
            TrialParams::Gbm(cfg) => {
                let model = fit_gbm(&train_data, &train_grid, cfg).map_err(|e| e.to_string())?;
                gbm_log_risk(&model, &valid_rows).map_err(|e| e.to_string())?
            }
        };
        total += average_nll(&valid_grid, &scores).map_err(|e| e.to_string())?;
    }
    Ok(total / folds as f64)
}

/// Run the random search.
pub fn tune_random(
    records: &[ClaimRecord],
    schema: &Schema,
    preprocess: &PreprocessConfig,
    config: &TuneConfig,
) -> Result<TuneOutcome, TuneError> {
    if config.trials == 0 {
        return Err(TuneError::Config("trials must be >= 1".to_string()));
    }
    if config.folds < 2 {
        return Err(TuneError::Config("folds must be >= 2".to_string()));
    }
    let assignment = fold_assignment(records.len(), config.folds, config.seed);
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut trials = Vec::with_capacity(config.trials);
    let mut best: Option<(usize, f64, TrialParams)> = None;
    let mut last_error = String::new();

    for index in 0..config.trials {
        let params = match config.target {
            TuneTarget::Mlp => TrialParams::Mlp(draw_mlp(&mut rng, config.mlp_epochs)),
            TuneTarget::Gbm => TrialParams::Gbm(draw_gbm(&mut rng, config.gbm_rounds)),
        };
        match fold_score(records, schema, preprocess, &assignment, config.folds, &params) {
            Ok(score) => {
                if best.as_ref().map_or(true, |(_, s, _)| score < *s) {
                    best = Some((index, score, params.clone()));
                }
                trials.push(TrialOutcome {
                    index,
                    params,
                    score: Some(score),
                    error: None,
                });
            }
            Err(message) => {
                last_error = message.clone();
                trials.push(TrialOutcome {
                    index,
                    params,
                    score: None,
                    error: Some(message),
                });
            }
        }
    }

    match best {
        Some((best_index, best_score, best)) => Ok(TuneOutcome {
            best,
            best_score,
            best_index,
            trials,
        }),
        None => Err(TuneError::AllTrialsFailed(last_error)),
    }
}
