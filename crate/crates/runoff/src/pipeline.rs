//! File-based pipeline commands: simulate, fit, predict, evaluate,
//! replicate and tune.
//!
//! Every command reads and writes plain files (CSV data, TOML configs,
//! JSON models and metrics) so runs compose across processes exactly as
//! they do in memory, and identical seeds give byte-identical artifacts.
//!
//! A dataset directory holds `claims.csv`, `truth.csv` (held-out
//! lower-triangle claims, when simulated), `schema.toml` and `meta.toml`.
//! Fitting writes a self-contained `model.json` (encoding dictionary,
//! scaling statistics, baseline hazard and the estimator-specific
//! parameters); prediction and evaluation only ever read that artifact.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::chainladder::{cl_fit_predict, ChainLadderError, ClTriangle};
use crate::claims::{
    build_risk_grid, load_claims, preprocess_features, write_claims, ClaimRecord, ClaimsError, Encoding, FeatureKey, PreprocessConfig, Schema,
};
use crate::cox::{fit_cox, CoxConfig, CoxError, CoxModel};
use crate::evaluate::{
    average_nll, crps_individual, r_metrics, split_claims, CalendarPairing, EvaluateError,
    LikelihoodRow, RMetrics,
};
use crate::gbm::{fit_gbm, GbmConfig, GbmError, GbmModel};
use crate::hazard::{estimate_baseline, BaselineHazard, HazardError};
use crate::likelihood::ScoreVector;
use crate::mlp::{fit_mlp, MlpConfig, MlpError, MlpModel};
use crate::simulate::{simulate_scenario, Scenario, ScenarioConfig, SimulateError};
use crate::triangle::{
    build_cells_truth, regrain, RegrainedTriangle, TriangleError, TriangleSet,
};
use crate::tune::{tune_random, TuneConfig, TuneError, TuneOutcome, TuneTarget};
use crate::RiskScorer;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad config: {0}")]
    Config(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Claims(#[from] ClaimsError),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
    #[error(transparent)]
    Cox(#[from] CoxError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Gbm(#[from] GbmError),
    #[error(transparent)]
    Hazard(#[from] HazardError),
    #[error(transparent)]
    Triangle(#[from] TriangleError),
    #[error(transparent)]
    ChainLadder(#[from] ChainLadderError),
    #[error(transparent)]
    Evaluate(#[from] EvaluateError),
    #[error(transparent)]
    Tune(#[from] TuneError),
    #[error(transparent)]
    Likelihood(#[from] crate::likelihood::LikelihoodError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cox,
    Mlp,
    Gbm,
    Cl,
}

impl ModelKind {
    pub fn parse(tag: &str) -> Result<Self, PipelineError> {
        match tag.to_ascii_lowercase().as_str() {
            "cox" => Ok(ModelKind::Cox),
            "mlp" | "nn" => Ok(ModelKind::Mlp),
            "gbm" | "xgb" => Ok(ModelKind::Gbm),
            "cl" => Ok(ModelKind::Cl),
            other => Err(PipelineError::Config(format!("unknown model tag `{other}`"))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ModelKind::Cox => "cox",
            ModelKind::Mlp => "mlp",
            ModelKind::Gbm => "gbm",
            ModelKind::Cl => "cl",
        }
    }
}

fn default_eta() -> f64 {
    0.5
}
fn default_delta() -> u32 {
    1
}
fn default_report_granularity() -> u32 {
    90
}
fn default_train_fraction() -> f64 {
    0.8
}
fn default_buckets() -> usize {
    10
}

/// Run configuration shared by all commands, loadable from TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Native fitting granularity in days.
    #[serde(default = "default_delta")]
    pub delta: u32,
    /// Reporting granularity in days for factors, triangles and metrics.
    #[serde(default = "default_report_granularity")]
    pub report_granularity: u32,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_buckets")]
    pub buckets: usize,
    #[serde(default)]
    pub calendar_pairing: CalendarPairing,
    #[serde(default)]
    pub cox: CoxConfig,
    #[serde(default)]
    pub mlp: MlpConfig,
    #[serde(default)]
    pub gbm: GbmConfig,
    /// Scenario overrides used by `simulate`/`replicate`.
    pub scenario: Option<ScenarioConfig>,
    #[serde(default)]
    pub tune: TuneSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneSection {
    pub trials: usize,
    pub folds: usize,
    pub mlp_epochs: usize,
    pub gbm_rounds: usize,
}

impl Default for TuneSection {
    fn default() -> Self {
        TuneSection {
            trials: 20,
            folds: 3,
            mlp_epochs: 150,
            gbm_rounds: 100,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            eta: default_eta(),
            delta: default_delta(),
            report_granularity: default_report_granularity(),
            train_fraction: default_train_fraction(),
            buckets: default_buckets(),
            calendar_pairing: CalendarPairing::default(),
            cox: CoxConfig::default(),
            mlp: MlpConfig::default(),
            gbm: GbmConfig::default(),
            scenario: None,
            tune: TuneSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        toml::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))
    }
}

/// Dataset-level metadata stored next to the claims file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub scenario: Option<String>,
    pub cutoff: u32,
    pub max_delay: u32,
    pub seed: Option<u64>,
}

// ---------------------------------------------------------------------------
// Dataset directory I/O
// ---------------------------------------------------------------------------

pub struct Dataset {
    pub records: Vec<ClaimRecord>,
    pub truth: Vec<ClaimRecord>,
    pub schema: Schema,
    pub meta: DatasetMeta,
}

pub fn write_dataset(
    dir: &Path,
    schema: &Schema,
    observed: &[ClaimRecord],
    withheld: &[ClaimRecord],
    meta: &DatasetMeta,
) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let claims_path = dir.join("claims.csv");
    let file = fs::File::create(&claims_path).map_err(io_err(&claims_path))?;
    write_claims(file, schema, observed)?;
    let truth_path = dir.join("truth.csv");
    let file = fs::File::create(&truth_path).map_err(io_err(&truth_path))?;
    write_claims(file, schema, withheld)?;
    let schema_path = dir.join("schema.toml");
    fs::write(&schema_path, schema.to_toml_string()).map_err(io_err(&schema_path))?;
    let meta_path = dir.join("meta.toml");
    let meta_text =
        toml::to_string(meta).map_err(|e| PipelineError::Config(e.to_string()))?;
    fs::write(&meta_path, meta_text).map_err(io_err(&meta_path))?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, PipelineError> {
    let schema = Schema::from_toml_file(&dir.join("schema.toml"))?;
    let meta_path = dir.join("meta.toml");
    let meta: DatasetMeta = {
        let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
        toml::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))?
    };
    let outcome = load_claims(&dir.join("claims.csv"), &schema, Some(meta.cutoff))?;
    if !outcome.rejected.is_empty() {
        return Err(PipelineError::Config(format!(
            "{} claims beyond the cut-off in claims.csv (first at line {})",
            outcome.rejected.len(),
            outcome.rejected[0].line
        )));
    }
    let truth_path = dir.join("truth.csv");
    let truth = if truth_path.exists() {
        // truth rows live beyond the cut-off by construction
        load_claims(&truth_path, &schema, Some(u32::MAX))?.records
    } else {
        Vec::new()
    };
    Ok(Dataset {
        records: outcome.records,
        truth,
        schema,
        meta,
    })
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

/// Generate one replication and write the dataset directory.
pub fn cmd_simulate(
    scenario: Scenario,
    config: &RunConfig,
    seed: u64,
    replication: u64,
    out_dir: &Path,
) -> Result<DatasetMeta, PipelineError> {
    let scenario_config = match &config.scenario {
        Some(sc) if sc.scenario == scenario => sc.clone(),
        Some(sc) => {
            let mut sc = sc.clone();
            sc.scenario = scenario;
            sc
        }
        None => ScenarioConfig::new(scenario),
    };
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    let data = simulate_scenario(&scenario_config, &mut rng)?;
    let meta = DatasetMeta {
        scenario: Some(scenario.tag().to_string()),
        cutoff: data.cutoff,
        max_delay: data.cutoff,
        seed: Some(seed),
    };
    write_dataset(out_dir, &data.schema, &data.observed, &data.withheld, &meta)?;
    let scenario_path = out_dir.join("scenario.toml");
    fs::write(&scenario_path, scenario_config.to_toml_string())
        .map_err(io_err(&scenario_path))?;
    Ok(meta)
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

/// Chain-ladder artifact: the filled triangle at its fitting granularity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClArtifact {
    pub granularity: u32,
    pub triangle: ClTriangle,
}

/// Self-contained fitted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub kind: ModelKind,
    pub eta: f64,
    pub delta: u32,
    pub meta: DatasetMeta,
    pub encoding: Option<Encoding>,
    pub baseline: Option<BaselineHazard>,
    pub cox: Option<CoxModel>,
    pub mlp: Option<MlpModel>,
    pub gbm: Option<GbmModel>,
    pub cl: Option<ClArtifact>,
    pub likelihood: Vec<LikelihoodRow>,
}

impl ModelArtifact {
    pub fn scorer(&self) -> Option<&dyn RiskScorer> {
        match self.kind {
            ModelKind::Cox => self.cox.as_ref().map(|m| m as &dyn RiskScorer),
            ModelKind::Mlp => self.mlp.as_ref().map(|m| m as &dyn RiskScorer),
            ModelKind::Gbm => self.gbm.as_ref().map(|m| m as &dyn RiskScorer),
            ModelKind::Cl => None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let file = fs::File::create(path).map_err(io_err(path))?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let file = fs::File::open(path).map_err(io_err(path))?;
        Ok(serde_json::from_reader(file)?)
    }
}

fn preprocess_config(config: &RunConfig, meta: &DatasetMeta) -> PreprocessConfig {
    PreprocessConfig {
        delta: config.delta,
        cutoff: Some(meta.cutoff),
        max_delay: Some(meta.max_delay),
        buckets: config.buckets,
    }
}

/// Fit one model on a dataset directory.
pub fn cmd_fit(
    dataset: &Dataset,
    kind: ModelKind,
    config: &RunConfig,
    seed: u64,
) -> Result<ModelArtifact, PipelineError> {
    let pre = preprocess_config(config, &dataset.meta);
    let mut artifact = ModelArtifact {
        kind,
        eta: config.eta,
        delta: config.delta,
        meta: dataset.meta.clone(),
        encoding: None,
        baseline: None,
        cox: None,
        mlp: None,
        gbm: None,
        cl: None,
        likelihood: Vec::new(),
    };

    match kind {
        ModelKind::Cl => {
            let g = config.report_granularity;
            let set = crate::triangle::build_cells_aggregate(
                &dataset.records,
                g,
                dataset.meta.cutoff,
                dataset.meta.max_delay,
                false,
            )?;
            let incremental = set.aggregate_observed();
            let triangle = cl_fit_predict(&incremental)?;
            artifact.cl = Some(ClArtifact {
                granularity: g,
                triangle,
            });
        }
        ModelKind::Cox => {
            let data = preprocess_features(&dataset.records, &dataset.schema, &pre)?;
            let grid = build_risk_grid(
                &dataset.records,
                config.delta,
                dataset.meta.cutoff,
                dataset.meta.max_delay,
            )?;
            let model = fit_cox(&data, &grid, &config.cox)?;
            let scores = model.score_rows(&data.rows);
            let in_sample = average_nll(&grid, &scores)?;
            artifact.baseline = Some(estimate_baseline(&grid, &scores, config.eta)?);
            artifact.likelihood.push(LikelihoodRow {
                model: "cox".into(),
                in_sample,
                out_of_sample: None,
            });
            artifact.encoding = Some(data.encoding);
            artifact.cox = Some(model);
        }
        ModelKind::Mlp | ModelKind::Gbm => {
            let n = dataset.records.len();
            let (train_idx, valid_idx) = split_claims(n, config.train_fraction, seed);
            let train: Vec<ClaimRecord> =
                train_idx.iter().map(|&i| dataset.records[i].clone()).collect();
            let valid: Vec<ClaimRecord> =
                valid_idx.iter().map(|&i| dataset.records[i].clone()).collect();
            let train_data = preprocess_features(&train, &dataset.schema, &pre)?;
            let train_grid = build_risk_grid(
                &train,
                config.delta,
                dataset.meta.cutoff,
                dataset.meta.max_delay,
            )?;

            let (scorer, tag): (Box<dyn RiskScorer>, &str) = match kind {
                ModelKind::Mlp => {
                    let mut cfg = config.mlp.clone();
                    cfg.seed = seed;
                    let model = fit_mlp(&train_data, &train_grid, &cfg)?;
                    artifact.mlp = Some(model.clone());
                    (Box::new(model), "mlp")
                }
                ModelKind::Gbm => {
                    let mut cfg = config.gbm.clone();
                    cfg.seed = seed;
                    let model = fit_gbm(&train_data, &train_grid, &cfg)?;
                    artifact.gbm = Some(model.clone());
                    (Box::new(model), "gbm")
                }
                _ => unreachable!(),
            };

            let in_sample = average_nll(&train_grid, &scorer.score_rows(&train_data.rows))?;
            let out_of_sample = if valid.is_empty() {
                None
            } else {
                let valid_rows: Result<Vec<Vec<f64>>, _> = valid
                    .iter()
                    .map(|r| train_data.encoding.encode_row(r))
                    .collect();
                let valid_rows = valid_rows?;
                let valid_grid = build_risk_grid(
                    &valid,
                    config.delta,
                    dataset.meta.cutoff,
                    dataset.meta.max_delay,
                )?;
                Some(average_nll(&valid_grid, &scorer.score_rows(&valid_rows))?)
            };
            artifact.likelihood.push(LikelihoodRow {
                model: tag.into(),
                in_sample,
                out_of_sample,
            });

            // baseline on the full observed grid with model scores
            let full_rows: Result<Vec<Vec<f64>>, _> = dataset
                .records
                .iter()
                .map(|r| train_data.encoding.encode_row(r))
                .collect();
            let full_rows = full_rows?;
            let full_grid = build_risk_grid(
                &dataset.records,
                config.delta,
                dataset.meta.cutoff,
                dataset.meta.max_delay,
            )?;
            let full_scores = scorer.score_rows(&full_rows);
            artifact.baseline = Some(estimate_baseline(&full_grid, &full_scores, config.eta)?);
            artifact.encoding = Some(train_data.encoding);
        }
    }
    Ok(artifact)
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

/// Model predictions at the reporting granularity.
pub struct Prediction {
    pub granularity: u32,
    pub triangles: TriangleSet,
    pub regrained: Option<RegrainedTriangle>,
}

/// Encoded observed rows and scores for a hazard-model artifact.
fn score_observed(
    artifact: &ModelArtifact,
    dataset: &Dataset,
) -> Result<(Encoding, ScoreVector), PipelineError> {
    let encoding = artifact
        .encoding
        .clone()
        .ok_or_else(|| PipelineError::Config("model artifact carries no encoding".into()))?;
    let scorer = artifact
        .scorer()
        .ok_or_else(|| PipelineError::Config("model artifact has no scorer".into()))?;
    let rows: Result<Vec<Vec<f64>>, _> = dataset
        .records
        .iter()
        .map(|r| encoding.encode_row(r))
        .collect();
    let scores = scorer.score_rows(&rows?);
    Ok((encoding, scores))
}

/// Build lower-triangle predictions at `granularity`.
pub fn cmd_predict(
    artifact: &ModelArtifact,
    dataset: &Dataset,
    granularity: u32,
) -> Result<Prediction, PipelineError> {
    match artifact.kind {
        ModelKind::Cl => {
            let cl = artifact
                .cl
                .as_ref()
                .ok_or_else(|| PipelineError::Config("cl artifact is empty".into()))?;
            if cl.granularity != granularity {
                return Err(PipelineError::Config(format!(
                    "chain ladder was fitted at granularity {}, requested {}",
                    cl.granularity, granularity
                )));
            }
            let mut set = TriangleSet {
                granularity,
                k_periods: cl.triangle.k_periods,
                j_periods: cl.triangle.j_periods,
                cutoff: artifact.meta.cutoff,
                guard_flags: 0,
                cells: BTreeMap::new(),
            };
            let key = FeatureKey(vec![]);
            let pair = set.pair_mut(&key);
            for (k, row) in cl.triangle.predicted.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    if v != 0.0 {
                        pair.predicted.insert((k as u32, j as u32), v);
                    }
                }
            }
            // carry observed counts for export
            let observed = crate::triangle::build_cells_aggregate(
                &dataset.records,
                granularity,
                artifact.meta.cutoff,
                artifact.meta.max_delay,
                false,
            )?;
            let obs_pair = observed.cells.get(&key).cloned().unwrap_or_default();
            set.pair_mut(&key).observed = obs_pair.observed;
            Ok(Prediction {
                granularity,
                triangles: set,
                regrained: None,
            })
        }
        _ => {
            let (encoding, scores) = score_observed(artifact, dataset)?;
            let baseline = artifact
                .baseline
                .as_ref()
                .ok_or_else(|| PipelineError::Config("model artifact has no baseline".into()))?;
            let re = regrain(
                &dataset.records,
                &encoding,
                &scores,
                baseline,
                artifact.eta,
                granularity,
            )?;
            Ok(Prediction {
                granularity,
                triangles: re.triangles.clone(),
                regrained: Some(re),
            })
        }
    }
}

/// Long-format triangle export: k, j, feature values, observed, predicted.
pub fn write_triangles_csv(
    path: &Path,
    set: &TriangleSet,
    feature_names: &[String],
) -> Result<(), PipelineError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut wtr = csv::Writer::from_writer(file);
    let mut header = vec!["k".to_string(), "j".to_string()];
    header.extend(feature_names.iter().cloned());
    header.extend(["observed".to_string(), "predicted".to_string()]);
    wtr.write_record(&header).map_err(ClaimsError::from)?;
    for (key, pair) in &set.cells {
        let mut cells: Vec<(u32, u32)> = pair
            .observed
            .keys()
            .chain(pair.predicted.keys())
            .cloned()
            .collect();
        cells.sort_unstable();
        cells.dedup();
        for (k, j) in cells {
            let mut row = vec![k.to_string(), j.to_string()];
            row.extend(key.0.iter().cloned());
            row.push(pair.observed_at(k, j).to_string());
            row.push(pair.predicted_at(k, j).to_string());
            wtr.write_record(&row).map_err(ClaimsError::from)?;
        }
    }
    wtr.flush().map_err(io_err(path))?;
    Ok(())
}

/// Coarse development-factor export with implied hazards:
/// k, j, feature values, hazard, factor, flag.
pub fn write_factors_csv(
    path: &Path,
    re: &RegrainedTriangle,
    eta: f64,
    feature_names: &[String],
) -> Result<(), PipelineError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut wtr = csv::Writer::from_writer(file);
    let mut header = vec!["k".to_string(), "j".to_string()];
    header.extend(feature_names.iter().cloned());
    header.extend(["hazard".to_string(), "factor".to_string(), "flag".to_string()]);
    wtr.write_record(&header).map_err(ClaimsError::from)?;
    for (key, ladders) in &re.factors {
        for (k, ladder) in ladders.iter().enumerate() {
            for (j, f) in ladder.iter().enumerate().skip(1) {
                let mut row = vec![k.to_string(), j.to_string()];
                row.extend(key.0.iter().cloned());
                match f {
                    Some(factor) => {
                        // invert the factor transform to an implied hazard
                        let z = (factor - 1.0) / (eta + (1.0 - eta) * factor);
                        row.push((z / re.granularity as f64).to_string());
                        row.push(factor.to_string());
                        row.push("0".to_string());
                    }
                    None => {
                        row.push("".to_string());
                        row.push("1".to_string());
                        row.push("1".to_string());
                    }
                }
                wtr.write_record(&row).map_err(ClaimsError::from)?;
            }
        }
    }
    wtr.flush().map_err(io_err(path))?;
    Ok(())
}

/// Survival-curve plot data per feature combination and accident period:
/// key columns, k, z, t_days, survival.
pub fn write_survival_csv(
    path: &Path,
    re: &RegrainedTriangle,
    feature_names: &[String],
) -> Result<(), PipelineError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut wtr = csv::Writer::from_writer(file);
    let mut header = vec!["k".to_string(), "z".to_string(), "t_days".to_string()];
    header.extend(feature_names.iter().cloned());
    header.push("survival".to_string());
    wtr.write_record(&header).map_err(ClaimsError::from)?;
    for key in re.factors.keys() {
        for k in 0..re.k_periods {
            if let Some(survival) = re.survival(key, k) {
                for (z, s) in survival.iter().enumerate() {
                    let mut row = vec![
                        k.to_string(),
                        z.to_string(),
                        (z as u32 * re.granularity).to_string(),
                    ];
                    row.extend(key.0.iter().cloned());
                    row.push(s.to_string());
                    wtr.write_record(&row).map_err(ClaimsError::from)?;
                }
            }
        }
    }
    wtr.flush().map_err(io_err(path))?;
    Ok(())
}

/// Factor-sensitivity plot data: the development factor at `(k, j)` as one
/// categorical feature sweeps its levels, others held at a reference row.
pub fn write_sensitivity_csv(
    path: &Path,
    artifact: &ModelArtifact,
    dataset: &Dataset,
    granularity: u32,
    k: usize,
    j: usize,
) -> Result<(), PipelineError> {
    let re = match cmd_predict(artifact, dataset, granularity)? {
        Prediction { regrained: Some(re), .. } => re,
        _ => {
            return Err(PipelineError::Config(
                "factor sensitivities need a hazard model".into(),
            ))
        }
    };
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut wtr = csv::Writer::from_writer(file);
    wtr.write_record(["feature_key", "factor"])
        .map_err(ClaimsError::from)?;
    for (key, ladders) in &re.factors {
        if let Some(Some(f)) = ladders.get(k).and_then(|l| l.get(j)) {
            wtr.write_record([key.to_string(), f.to_string()])
                .map_err(ClaimsError::from)?;
        }
    }
    wtr.flush().map_err(io_err(path))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub scenario: Option<String>,
    pub replication: Option<u64>,
    pub granularity: u32,
    pub r_tot: f64,
    pub r_cellwise: f64,
    pub r_calwise: f64,
    pub crps_average: Option<f64>,
    pub in_sample_nll: Option<f64>,
    pub out_of_sample_nll: Option<f64>,
}

/// Integrated baseline hazard per coarse delay block: `blocks[z]` sums
/// `delta * alpha0(l)` over the fine levels in `[z R, (z+1) R)`. The
/// entry at `z = bins` covers the calendar shear past the delay bound
/// and is zero.
fn coarse_hazard_blocks(baseline: &BaselineHazard, ratio: usize, bins: usize) -> Vec<f64> {
    let fine_levels = baseline.levels();
    let delta = baseline.delta as f64;
    (0..=bins)
        .map(|z| {
            let lo = z * ratio;
            let hi = ((z + 1) * ratio).min(fine_levels);
            (lo..hi)
                .filter_map(|l| baseline.values[l])
                .map(|a| a * delta)
                .sum()
        })
        .collect()
}

/// Forecast survival of one held-out claim on calendar blocks past the
/// cut-off, anchored at its accident period's own truncation corner:
/// `S_z = exp(-risk * sum_{m=0}^{z-1} A_{d0+m})` where `d0` is the first
/// unobserved delay block of the period. Anchoring at the corner scores
/// the delay distribution conditional on the claim being unreported at
/// the cut-off, which is the distribution the held-out sample is drawn
/// from. The exponential conversion agrees with the factor transform to
/// third order in the block hazard and stays smooth and monotone for
/// arbitrarily large risk scores.
fn claim_survival_bins(blocks: &[f64], first_block: usize, count: usize, risk: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    let mut cum = 0.0_f64;
    for z in 0..count {
        cum += blocks[first_block + z] * risk;
        out.push((-cum).exp());
    }
    out
}

/// Score one fitted model against held-out truth.
pub fn cmd_evaluate(
    artifact: &ModelArtifact,
    dataset: &Dataset,
    config: &RunConfig,
    granularity: u32,
    replication: Option<u64>,
) -> Result<MetricsReport, PipelineError> {
    let prediction = cmd_predict(artifact, dataset, granularity)?;

    // truth triangles at the same granularity
    let truth_set = match &artifact.encoding {
        Some(encoding) => build_cells_truth(&dataset.truth, encoding, granularity)?,
        None => crate::triangle::build_cells_aggregate(
            &dataset.truth,
            granularity,
            artifact.meta.cutoff,
            artifact.meta.max_delay,
            true,
        )?,
    };

    let metrics: RMetrics = r_metrics(&prediction.triangles, &truth_set, config.calendar_pairing)?;

    let crps_average = match artifact.kind {
        ModelKind::Cl => None,
        _ => {
            let encoding = artifact.encoding.as_ref().expect("hazard model has encoding");
            let baseline = artifact.baseline.as_ref().expect("hazard model has baseline");
            let scorer = artifact.scorer().expect("hazard model has scorer");
            let ratio = (granularity / artifact.delta) as usize;
            let bins = (artifact.meta.max_delay / granularity) as usize;
            let k_coarse = (artifact.meta.cutoff / granularity) as usize;
            let blocks = coarse_hazard_blocks(baseline, ratio, bins);
            let mut total = 0.0;
            let mut count = 0usize;
            for record in &dataset.truth {
                let row = encoding.encode_row(record)?;
                let risk = scorer.log_risk(&row).exp();
                let u0 = (record.accident_day - 1) as usize / artifact.delta as usize;
                let day0 = u0 * artifact.delta as usize;
                let k = day0 / granularity as usize;
                let first_block = k_coarse - k;
                let z_count = bins + 1 - first_block;
                let survival = claim_survival_bins(&blocks, first_block, z_count, risk);
                let widths = vec![granularity as f64; z_count];
                let calendar = (day0 + record.delay_days as usize) / granularity as usize;
                let event_bin = (calendar + 1 - k_coarse).clamp(1, z_count);
                total += crps_individual(&survival, &widths, event_bin)?;
                count += 1;
            }
            if count == 0 {
                None
            } else {
                Some(total / count as f64)
            }
        }
    };

    let (in_sample_nll, out_of_sample_nll) = artifact
        .likelihood
        .first()
        .map(|row| (Some(row.in_sample), row.out_of_sample))
        .unwrap_or((None, None));

    Ok(MetricsReport {
        model: artifact.kind.tag().to_string(),
        scenario: artifact.meta.scenario.clone(),
        replication,
        granularity,
        r_tot: metrics.r_tot,
        r_cellwise: metrics.r_cellwise,
        r_calwise: metrics.r_calwise,
        crps_average,
        in_sample_nll,
        out_of_sample_nll,
    })
}

// ---------------------------------------------------------------------------
// replicate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub scenario: String,
    pub replications: usize,
    pub r_tot_mean: f64,
    pub r_tot_sd: f64,
    pub r_cellwise_mean: f64,
    pub r_cellwise_sd: f64,
    pub r_calwise_mean: f64,
    pub r_calwise_sd: f64,
    pub crps_mean: Option<f64>,
    pub crps_sd: Option<f64>,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Summarize per-replication metrics into mean +/- sd rows per model.
pub fn summarize(reports: &[MetricsReport]) -> Vec<SummaryRow> {
    let mut by_model: BTreeMap<(String, String), Vec<&MetricsReport>> = BTreeMap::new();
    for r in reports {
        by_model
            .entry((r.model.clone(), r.scenario.clone().unwrap_or_default()))
            .or_default()
            .push(r);
    }
    by_model
        .into_iter()
        .map(|((model, scenario), rows)| {
            let take = |f: &dyn Fn(&MetricsReport) -> f64| -> Vec<f64> {
                rows.iter().map(|r| f(r)).collect()
            };
            let (r_tot_mean, r_tot_sd) = mean_sd(&take(&|r| r.r_tot));
            let (r_cell_mean, r_cell_sd) = mean_sd(&take(&|r| r.r_cellwise));
            let (r_cal_mean, r_cal_sd) = mean_sd(&take(&|r| r.r_calwise));
            let crps: Vec<f64> = rows.iter().filter_map(|r| r.crps_average).collect();
            let (crps_mean, crps_sd) = if crps.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_sd(&crps);
                (Some(m), Some(s))
            };
            SummaryRow {
                model,
                scenario,
                replications: rows.len(),
                r_tot_mean,
                r_tot_sd,
                r_cellwise_mean: r_cell_mean,
                r_cellwise_sd: r_cell_sd,
                r_calwise_mean: r_cal_mean,
                r_calwise_sd: r_cal_sd,
                crps_mean,
                crps_sd,
            }
        })
        .collect()
}

/// Run the full simulate/fit/predict/evaluate loop for `replications`
/// seeds and return every per-replication report.
pub fn cmd_replicate(
    scenario: Scenario,
    models: &[ModelKind],
    replications: u64,
    config: &RunConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<Vec<MetricsReport>, PipelineError> {
    let mut reports = Vec::new();
    for rep in 0..replications {
        let scenario_config = match &config.scenario {
            Some(sc) => {
                let mut sc = sc.clone();
                sc.scenario = scenario;
                sc
            }
            None => ScenarioConfig::new(scenario),
        };
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(rep);
        let data = simulate_scenario(&scenario_config, &mut rng)?;
        let dataset = Dataset {
            records: data.observed,
            truth: data.withheld,
            schema: data.schema,
            meta: DatasetMeta {
                scenario: Some(scenario.tag().to_string()),
                cutoff: data.cutoff,
                max_delay: data.cutoff,
                seed: Some(seed),
            },
        };
        for &kind in models {
            let artifact = cmd_fit(&dataset, kind, config, seed.wrapping_add(rep))?;
            let report = cmd_evaluate(
                &artifact,
                &dataset,
                config,
                config.report_granularity,
                Some(rep),
            )?;
            if let Some(dir) = out_dir {
                let path = dir
                    .join(format!("rep_{rep}"))
                    .join(format!("metrics_{}.json", kind.tag()));
                if let Some(parent) = path.parent() {
                    fs::create_dir_all(parent).map_err(io_err(parent))?;
                }
                let file = fs::File::create(&path).map_err(io_err(&path))?;
                serde_json::to_writer_pretty(file, &report)?;
            }
            reports.push(report);
        }
    }
    if let Some(dir) = out_dir {
        let summary = summarize(&reports);
        let path = dir.join("summary.json");
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        serde_json::to_writer_pretty(file, &summary)?;
        let csv_path = dir.join("summary.csv");
        let mut wtr = csv::Writer::from_path(&csv_path).map_err(ClaimsError::from)?;
        wtr.write_record([
            "model",
            "scenario",
            "replications",
            "r_tot_mean",
            "r_tot_sd",
            "r_cellwise_mean",
            "r_cellwise_sd",
            "r_calwise_mean",
            "r_calwise_sd",
            "crps_mean",
            "crps_sd",
        ])
        .map_err(ClaimsError::from)?;
        for row in &summary {
            wtr.write_record([
                row.model.clone(),
                row.scenario.clone(),
                row.replications.to_string(),
                row.r_tot_mean.to_string(),
                row.r_tot_sd.to_string(),
                row.r_cellwise_mean.to_string(),
                row.r_cellwise_sd.to_string(),
                row.r_calwise_mean.to_string(),
                row.r_calwise_sd.to_string(),
                row.crps_mean.map(|v| v.to_string()).unwrap_or_default(),
                row.crps_sd.map(|v| v.to_string()).unwrap_or_default(),
            ])
            .map_err(ClaimsError::from)?;
        }
        wtr.flush().map_err(io_err(&csv_path))?;
    }
    Ok(reports)
}

// ---------------------------------------------------------------------------
// tune
// ---------------------------------------------------------------------------

pub fn cmd_tune(
    dataset: &Dataset,
    target: TuneTarget,
    config: &RunConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<TuneOutcome, PipelineError> {
    let pre = preprocess_config(config, &dataset.meta);
    let tune_config = TuneConfig {
        target,
        trials: config.tune.trials,
        folds: config.tune.folds,
        seed,
        mlp_epochs: config.tune.mlp_epochs,
        gbm_rounds: config.tune.gbm_rounds,
    };
    let outcome = tune_random(&dataset.records, &dataset.schema, &pre, &tune_config)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let best_path = dir.join("best.json");
        let file = fs::File::create(&best_path).map_err(io_err(&best_path))?;
        serde_json::to_writer_pretty(file, &outcome.best)?;
        let trials_path = dir.join("trials.json");
        let file = fs::File::create(&trials_path).map_err(io_err(&trials_path))?;
        serde_json::to_writer_pretty(file, &outcome.trials)?;
    }
    Ok(outcome)
}

/// Fit every likelihood-reporting model with a shared seeded split and
/// assemble the likelihood table: in-sample averages for all, held-out
/// averages for the network and boosting fits only.
pub fn likelihood_report(
    dataset: &Dataset,
    config: &RunConfig,
    seed: u64,
) -> Result<Vec<LikelihoodRow>, PipelineError> {
    let mut rows = Vec::new();
    for kind in [ModelKind::Cox, ModelKind::Mlp, ModelKind::Gbm] {
        let artifact = cmd_fit(dataset, kind, config, seed)?;
        rows.extend(artifact.likelihood);
    }
    Ok(rows)
}

/// Render summary rows as a fixed-width table.
pub fn format_summary(summary: &[SummaryRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<10} {:<10} {:>4} {:>20} {:>20} {:>20} {:>22}\n",
        "model", "scenario", "reps", "R_tot", "R_cellwise", "R_calwise", "CRPS"
    ));
    for row in summary {
        let fmt = |m: f64, s: f64| format!("{m:.4} (+/- {s:.4})");
        let crps = match (row.crps_mean, row.crps_sd) {
            (Some(m), Some(s)) => format!("{m:.2} (+/- {s:.2})"),
            _ => "--".to_string(),
        };
        out.push_str(&format!(
            "{:<10} {:<10} {:>4} {:>20} {:>20} {:>20} {:>22}\n",
            row.model,
            row.scenario,
            row.replications,
            fmt(row.r_tot_mean, row.r_tot_sd),
            fmt(row.r_cellwise_mean, row.r_cellwise_sd),
            fmt(row.r_calwise_mean, row.r_calwise_sd),
            crps,
        ));
    }
    out
}

/// Write a metrics report to a JSON file.
pub fn write_metrics(path: &Path, report: &MetricsReport) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    serde_json::to_writer_pretty(&file, report)?;
    file.flush().map_err(io_err(path))?;
    Ok(())
}
