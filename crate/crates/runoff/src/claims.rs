//! Claim ingestion, feature encoding and the exposure/occurrence grid.
//!
//! Individual claims carry an accident day `U` (1-based day label; the
//! accident happens during the `U`-th day, so its time coordinate is
//! `U - 1` days after the origin), an integer reporting delay in days,
//! and raw feature values. The observation window ends at the cut-off
//! `cutoff`: a claim is observable iff `U + delay <= cutoff`.
//!
//! All estimators consume the same [`RiskGrid`]: for each tie interval
//! `j` (delay block `[j*delta, (j+1)*delta)`) it knows which claims are
//! exposed and which occur there. Exposure of claim `i` at level `j`
//! requires both
//!
//! * `rec(T_i) <= t^(j)` — the claim's recorded delay falls in block `j`
//!   or earlier, and
//! * `u0_i <= cutoff - t^(j+1)` with `u0_i = U_i - 1` — the claim would
//!   still have been observable had its delay reached block `j`.
//!
//! The second condition makes every observed occurrence a member of its
//! own risk set, so the tie-corrected likelihood denominators stay
//! positive, and the featureless pipeline reduces exactly to the
//! classical chain ladder.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClaimsError {
    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("degenerate scale: continuous column `{0}` is constant (x_max = x_min)")]
    DegenerateScale(String),
    #[error("unseen categorical level `{level}` for feature `{feature}`")]
    UnseenLevel { feature: String, level: String },
    #[error("record {index}: delay {delay} exceeds the maximum delay bound {max_delay}")]
    DelayOutOfRange {
        index: usize,
        delay: u32,
        max_delay: u32,
    },
    #[error("grid error: {0}")]
    Grid(String),
}

/// Raw value of one feature column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureValue {
    Cat(String),
    Num(f64),
}

impl fmt::Display for FeatureValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureValue::Cat(s) => write!(f, "{s}"),
            FeatureValue::Num(x) => write!(f, "{x}"),
        }
    }
}

/// One reported claim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub claim_id: String,
    /// Accident day, 1-based. Day `U` spans time `[U-1, U)`.
    pub accident_day: u32,
    /// Recorded reporting delay in whole days (`rec(T)` on the daily grid).
    pub delay_days: u32,
    /// Raw feature values, ordered as in the schema.
    pub features: Vec<FeatureValue>,
}

impl ClaimRecord {
    /// Calendar day of the report (1-based, same unit as `accident_day`).
    pub fn report_day(&self) -> u32 {
        self.accident_day + self.delay_days
    }
}

/// Role of one input column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Id,
    AccidentDay,
    DelayDay,
    Categorical,
    Continuous,
}

/// Column mapping for delimiter-separated claim files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Schema {
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    /// Column name -> role. Feature order follows `feature_order`.
    pub columns: BTreeMap<String, ColumnRole>,
    /// Order of the feature columns (categorical/continuous). Columns not
    /// listed are appended in name order.
    #[serde(default)]
    pub feature_order: Vec<String>,
}

fn default_delimiter() -> char {
    ','
}

impl Schema {
    pub fn new(columns: &[(&str, ColumnRole)]) -> Self {
        Schema {
            delimiter: ',',
            columns: columns
                .iter()
                .map(|(n, r)| (n.to_string(), *r))
                .collect(),
            feature_order: Vec::new(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ClaimsError> {
        toml::from_str(text).map_err(|e| ClaimsError::Schema(e.to_string()))
    }

    pub fn from_toml_file(path: &Path) -> Result<Self, ClaimsError> {
        let mut buf = String::new();
        std::fs::File::open(path)?.read_to_string(&mut buf)?;
        Self::from_toml_str(&buf)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    fn role_column(&self, role: ColumnRole) -> Result<&str, ClaimsError> {
        self.columns
            .iter()
            .find(|(_, r)| **r == role)
            .map(|(n, _)| n.as_str())
            .ok_or_else(|| ClaimsError::MissingColumn(format!("{role:?}")))
    }

    /// Feature columns in their declared order.
    pub fn feature_columns(&self) -> Vec<(String, ColumnRole)> {
        let mut feats: Vec<(String, ColumnRole)> = self
            .columns
            .iter()
            .filter(|(_, r)| matches!(r, ColumnRole::Categorical | ColumnRole::Continuous))
            .map(|(n, r)| (n.clone(), *r))
            .collect();
        feats.sort_by_key(|(n, _)| {
            match self.feature_order.iter().position(|o| o == n) {
                Some(p) => (0, p, n.clone()),
                None => (1, 0, n.clone()),
            }
        });
        feats
    }
}

/// A row rejected at ingestion, with its 1-based line number in the file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RejectedRow {
    pub line: usize,
    pub reason: String,
}

/// Result of loading a claims file.
#[derive(Debug, Clone)]
pub struct LoadOutcome {
    pub records: Vec<ClaimRecord>,
    pub rejected: Vec<RejectedRow>,
    /// Cut-off used for validation: the override if given, else
    /// `max(U + delay)` over the file.
    pub cutoff: u32,
}

/// Load claims from a delimiter-separated file with a header row.
///
/// Rows violating `U + delay <= cutoff` are rejected with their line
/// numbers; the cut-off is `cutoff_override` when given and otherwise the
/// maximum observed report day.
pub fn load_claims(
    path: &Path,
    schema: &Schema,
    cutoff_override: Option<u32>,
) -> Result<LoadOutcome, ClaimsError> {
    let file = std::fs::File::open(path)?;
    load_claims_from_reader(file, schema, cutoff_override)
}

pub fn load_claims_from_reader<R: Read>(
    reader: R,
    schema: &Schema,
    cutoff_override: Option<u32>,
) -> Result<LoadOutcome, ClaimsError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .from_reader(reader);

    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize, ClaimsError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ClaimsError::MissingColumn(name.to_string()))
    };

    let id_col = find(schema.role_column(ColumnRole::Id)?)?;
    let u_col = find(schema.role_column(ColumnRole::AccidentDay)?)?;
    let d_col = find(schema.role_column(ColumnRole::DelayDay)?)?;
    let feature_cols: Vec<(String, ColumnRole, usize)> = schema
        .feature_columns()
        .into_iter()
        .map(|(n, r)| find(&n).map(|i| (n, r, i)))
        .collect::<Result<_, _>>()?;

    let parse_day = |field: &str, line: usize, what: &str| -> Result<u32, ClaimsError> {
        field.trim().parse::<u32>().map_err(|_| ClaimsError::Parse {
            line,
            message: format!("non-integer {what} field `{field}`"),
        })
    };

    let mut parsed: Vec<(usize, ClaimRecord)> = Vec::new();
    for (idx, row) in rdr.records().enumerate() {
        let line = idx + 2; // header is line 1
        let row = row?;
        let accident_day = parse_day(&row[u_col], line, "accident day")?;
        if accident_day == 0 {
            return Err(ClaimsError::Parse {
                line,
                message: "accident day must be >= 1".to_string(),
            });
        }
        let delay_days = parse_day(&row[d_col], line, "delay day")?;
        let mut features = Vec::with_capacity(feature_cols.len());
        for (name, role, col) in &feature_cols {
            let raw = row[*col].trim();
            match role {
                ColumnRole::Categorical => features.push(FeatureValue::Cat(raw.to_string())),
                ColumnRole::Continuous => {
                    let v = raw.parse::<f64>().map_err(|_| ClaimsError::Parse {
                        line,
                        message: format!("non-numeric value `{raw}` in column `{name}`"),
                    })?;
                    features.push(FeatureValue::Num(v));
                }
                _ => unreachable!(),
            }
        }
        parsed.push((
            line,
            ClaimRecord {
                claim_id: row[id_col].to_string(),
                accident_day,
                delay_days,
                features,
            },
        ));
    }

    if parsed.is_empty() {
        return Err(ClaimsError::EmptyInput("no data rows".to_string()));
    }

    let cutoff = cutoff_override.unwrap_or_else(|| {
        parsed
            .iter()
            .map(|(_, r)| r.report_day())
            .max()
            .unwrap_or(0)
    });

    let mut records = Vec::with_capacity(parsed.len());
    let mut rejected = Vec::new();
    for (line, rec) in parsed {
        if rec.report_day() > cutoff {
            rejected.push(RejectedRow {
                line,
                reason: format!(
                    "accident day {} + delay {} exceeds cut-off {}",
                    rec.accident_day, rec.delay_days, cutoff
                ),
            });
        } else {
            records.push(rec);
        }
    }
    Ok(LoadOutcome {
        records,
        rejected,
        cutoff,
    })
}

/// Write claims in the same delimiter-separated format `load_claims` reads.
pub fn write_claims<W: std::io::Write>(
    writer: W,
    schema: &Schema,
    records: &[ClaimRecord],
) -> Result<(), ClaimsError> {
    let mut wtr = csv::WriterBuilder::new()
        .delimiter(schema.delimiter as u8)
        .from_writer(writer);
    let id_name = schema.role_column(ColumnRole::Id)?.to_string();
    let u_name = schema.role_column(ColumnRole::AccidentDay)?.to_string();
    let d_name = schema.role_column(ColumnRole::DelayDay)?.to_string();
    let feats = schema.feature_columns();

    let mut header = vec![id_name, u_name, d_name];
    header.extend(feats.iter().map(|(n, _)| n.clone()));
    wtr.write_record(&header)?;
    for rec in records {
        let mut row = vec![
            rec.claim_id.clone(),
            rec.accident_day.to_string(),
            rec.delay_days.to_string(),
        ];
        for v in &rec.features {
            row.push(v.to_string());
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Feature encoding
// ---------------------------------------------------------------------------

/// Where an encoded column came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnKind {
    /// Min-max scaled accident day (always column 0).
    AccidentDay,
    /// Indicator for one level of a categorical feature.
    Indicator { feature: String, level: String },
    /// Min-max scaled continuous feature.
    Scaled { feature: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    /// `2 (x - min) / (max - min)`, the training-time affine map.
    pub fn apply(&self, x: f64) -> f64 {
        2.0 * (x - self.min) / (self.max - self.min)
    }
}

/// Per-feature encoding state learned from training data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureCodec {
    pub name: String,
    pub spec: FeatureSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum FeatureSpec {
    /// Levels in first-seen order; expands to one indicator per level.
    Categorical { levels: Vec<String> },
    /// Scaled with training statistics; quantile edges drive the
    /// triangle bucketing of continuous features.
    Continuous { stats: MinMax, bucket_edges: Vec<f64> },
}

/// Dictionary mapping raw features to encoded design columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Encoding {
    pub accident_stats: MinMax,
    pub features: Vec<FeatureCodec>,
    pub columns: Vec<ColumnKind>,
    /// Grid metadata shared by every consumer of the encoded data.
    pub delta: u32,
    pub cutoff: u32,
    pub max_delay: u32,
}

impl Encoding {
    pub fn width(&self) -> usize {
        self.columns.len()
    }

    /// Number of accident periods `K = cutoff / delta`.
    pub fn k_periods(&self) -> usize {
        (self.cutoff / self.delta) as usize
    }

    /// Number of delay blocks `J = max_delay / delta`.
    pub fn j_periods(&self) -> usize {
        (self.max_delay / self.delta) as usize
    }

    /// Encode one record with the stored dictionary and statistics.
    pub fn encode_row(&self, record: &ClaimRecord) -> Result<Vec<f64>, ClaimsError> {
        let mut row = Vec::with_capacity(self.width());
        row.push(self.accident_stats.apply(record.accident_day as f64));
        for (codec, value) in self.features.iter().zip(&record.features) {
            match (&codec.spec, value) {
                (FeatureSpec::Categorical { levels }, FeatureValue::Cat(v)) => {
                    let hit = levels.iter().position(|l| l == v);
                    match hit {
                        Some(pos) => {
                            for i in 0..levels.len() {
                                row.push(if i == pos { 1.0 } else { 0.0 });
                            }
                        }
                        None => {
                            return Err(ClaimsError::UnseenLevel {
                                feature: codec.name.clone(),
                                level: v.clone(),
                            })
                        }
                    }
                }
                (FeatureSpec::Continuous { stats, .. }, FeatureValue::Num(v)) => {
                    row.push(stats.apply(*v));
                }
                _ => {
                    return Err(ClaimsError::Schema(format!(
                        "feature `{}` does not match its declared role",
                        codec.name
                    )))
                }
            }
        }
        Ok(row)
    }

    /// Scaled representative accident-day input for period `k` (its first day).
    pub fn period_accident_input(&self, k: usize) -> f64 {
        let day = (k as u32) * self.delta + 1;
        self.accident_stats.apply(day as f64)
    }

    /// Bucket key of a record: categorical level labels plus decile labels
    /// for continuous features. Used to index triangles and factor tables.
    pub fn feature_key(&self, record: &ClaimRecord) -> Result<FeatureKey, ClaimsError> {
        let mut parts = Vec::with_capacity(self.features.len());
        for (codec, value) in self.features.iter().zip(&record.features) {
            match (&codec.spec, value) {
                (FeatureSpec::Categorical { levels }, FeatureValue::Cat(v)) => {
                    if !levels.iter().any(|l| l == v) {
                        return Err(ClaimsError::UnseenLevel {
                            feature: codec.name.clone(),
                            level: v.clone(),
                        });
                    }
                    parts.push(v.clone());
                }
                (FeatureSpec::Continuous { bucket_edges, .. }, FeatureValue::Num(v)) => {
                    let b = bucket_edges.iter().filter(|e| v > *e).count();
                    parts.push(format!("q{}", b + 1));
                }
                _ => {
                    return Err(ClaimsError::Schema(format!(
                        "feature `{}` does not match its declared role",
                        codec.name
                    )))
                }
            }
        }
        Ok(FeatureKey(parts))
    }

    /// Names of the feature columns, aligned with `feature_key` parts.
    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|c| c.name.clone()).collect()
    }
}

/// Feature combination label used to index triangles and factor tables.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FeatureKey(pub Vec<String>);

impl fmt::Display for FeatureKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            write!(f, "(all)")
        } else {
            write!(f, "{}", self.0.join("|"))
        }
    }
}

/// Encoded design matrix plus the dictionary that produced it.
#[derive(Debug, Clone)]
pub struct EncodedDataset {
    pub rows: Vec<Vec<f64>>,
    pub encoding: Encoding,
}

impl EncodedDataset {
    pub fn n(&self) -> usize {
        self.rows.len()
    }
}

/// Options for [`preprocess_features`].
#[derive(Debug, Clone)]
pub struct PreprocessConfig {
    pub delta: u32,
    /// Observation cut-off; `None` infers `max(U + delay)`.
    pub cutoff: Option<u32>,
    /// Maximum delay bound; `None` uses the cut-off (square grid).
    pub max_delay: Option<u32>,
    /// Number of quantile buckets for continuous features in triangles.
    pub buckets: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            delta: 1,
            cutoff: None,
            max_delay: None,
            buckets: 10,
        }
    }
}

/// Dummy-encode categoricals, min-max scale continuous columns and the
/// accident day, and freeze the statistics for held-out scoring.
pub fn preprocess_features(
    records: &[ClaimRecord],
    schema: &Schema,
    config: &PreprocessConfig,
) -> Result<EncodedDataset, ClaimsError> {
    if records.is_empty() {
        return Err(ClaimsError::EmptyInput("no records to encode".to_string()));
    }
    let feats = schema.feature_columns();
    for rec in records {
        if rec.features.len() != feats.len() {
            return Err(ClaimsError::Schema(format!(
                "record `{}` has {} features, schema declares {}",
                rec.claim_id,
                rec.features.len(),
                feats.len()
            )));
        }
    }

    let acc_min = records.iter().map(|r| r.accident_day).min().unwrap() as f64;
    let acc_max = records.iter().map(|r| r.accident_day).max().unwrap() as f64;
    let accident_stats = MinMax {
        min: acc_min,
        max: if acc_max > acc_min { acc_max } else { acc_min + 1.0 },
    };

    let mut codecs = Vec::with_capacity(feats.len());
    for (fi, (name, role)) in feats.iter().enumerate() {
        match role {
            ColumnRole::Categorical => {
                let mut levels: Vec<String> = Vec::new();
                for rec in records {
                    if let FeatureValue::Cat(v) = &rec.features[fi] {
                        if !levels.iter().any(|l| l == v) {
                            levels.push(v.clone());
                        }
                    }
                }
                codecs.push(FeatureCodec {
                    name: name.clone(),
                    spec: FeatureSpec::Categorical { levels },
                });
            }
            ColumnRole::Continuous => {
                let mut values: Vec<f64> = records
                    .iter()
                    .filter_map(|r| match &r.features[fi] {
                        FeatureValue::Num(v) => Some(*v),
                        FeatureValue::Cat(_) => None,
                    })
                    .collect();
                let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if !(max > min) {
                    return Err(ClaimsError::DegenerateScale(name.clone()));
                }
                values.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mut bucket_edges = Vec::new();
                for q in 1..config.buckets {
                    let pos = q * values.len() / config.buckets;
                    let edge = values[pos.min(values.len() - 1)];
                    if bucket_edges.last().map_or(true, |e| *e < edge) && edge < max {
                        bucket_edges.push(edge);
                    }
                }
                codecs.push(FeatureCodec {
                    name: name.clone(),
                    spec: FeatureSpec::Continuous {
                        stats: MinMax { min, max },
                        bucket_edges,
                    },
                });
            }
            _ => unreachable!(),
        }
    }

    let mut columns = vec![ColumnKind::AccidentDay];
    for codec in &codecs {
        match &codec.spec {
            FeatureSpec::Categorical { levels } => {
                for level in levels {
                    columns.push(ColumnKind::Indicator {
                        feature: codec.name.clone(),
                        level: level.clone(),
                    });
                }
            }
            FeatureSpec::Continuous { .. } => columns.push(ColumnKind::Scaled {
                feature: codec.name.clone(),
            }),
        }
    }

    let cutoff = config
        .cutoff
        .unwrap_or_else(|| records.iter().map(|r| r.report_day()).max().unwrap());
    let max_delay = config.max_delay.unwrap_or(cutoff);
    if cutoff % config.delta != 0 || max_delay % config.delta != 0 {
        return Err(ClaimsError::Grid(format!(
            "delta {} must divide the cut-off {} and the delay bound {}",
            config.delta, cutoff, max_delay
        )));
    }

    let encoding = Encoding {
        accident_stats,
        features: codecs,
        columns,
        delta: config.delta,
        cutoff,
        max_delay,
    };
    let rows = records
        .iter()
        .map(|r| encoding.encode_row(r))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EncodedDataset { rows, encoding })
}

// ---------------------------------------------------------------------------
// Risk grid
// ---------------------------------------------------------------------------

/// Per-tie-interval exposure and occurrence structure.
///
/// Exposure of a claim is a contiguous block of levels `[entry, exit]`:
/// it starts at the claim's own occurrence level (its recorded delay
/// block) and ends where the truncation condition on the accident day
/// fails. Claims whose block straddles the cut-off are truncated out of
/// the likelihood entirely and only counted in `n_truncated`.
#[derive(Debug, Clone)]
pub struct RiskGrid {
    /// Number of tie intervals `J`.
    pub levels: usize,
    pub delta: u32,
    pub cutoff: u32,
    /// Per-claim exposure interval in level indices, `None` if truncated out.
    pub exposure: Vec<Option<(usize, usize)>>,
    /// Per-claim occurrence level, `None` if truncated out.
    pub occurrence: Vec<Option<usize>>,
    /// Sorted claim indices occurring at each level.
    pub occurrence_sets: Vec<Vec<usize>>,
    /// Number of claims excluded by truncation.
    pub n_truncated: usize,
}

impl RiskGrid {
    pub fn n(&self) -> usize {
        self.exposure.len()
    }

    /// `O_j`, the number of occurrences at level `j`.
    pub fn occurrence_count(&self, j: usize) -> usize {
        self.occurrence_sets[j].len()
    }

    /// Materialize the exposure set at level `j` as a sorted index list.
    pub fn exposure_set(&self, j: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .exposure
            .iter()
            .enumerate()
            .filter_map(|(i, e)| match e {
                Some((lo, hi)) if *lo <= j && j <= *hi => Some(i),
                _ => None,
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Occurrence set at level `j` as a sorted index list.
    pub fn occurrence_set(&self, j: usize) -> &[usize] {
        &self.occurrence_sets[j]
    }

    /// Total number of occurrences across levels (claims in the likelihood).
    pub fn n_active(&self) -> usize {
        self.occurrence.iter().filter(|o| o.is_some()).count()
    }

    /// Assemble a grid directly from per-claim intervals, for callers that
    /// construct abstract instances rather than deriving them from claims.
    pub fn from_parts(
        levels: usize,
        delta: u32,
        cutoff: u32,
        exposure: Vec<Option<(usize, usize)>>,
        occurrence: Vec<Option<usize>>,
    ) -> Result<Self, ClaimsError> {
        if exposure.len() != occurrence.len() {
            return Err(ClaimsError::Grid(
                "exposure and occurrence lengths differ".to_string(),
            ));
        }
        let mut occurrence_sets = vec![Vec::new(); levels];
        let mut n_truncated = 0;
        for (i, (exp, occ)) in exposure.iter().zip(&occurrence).enumerate() {
            match (exp, occ) {
                (Some((lo, hi)), occ) => {
                    if lo > hi || *hi >= levels {
                        return Err(ClaimsError::Grid(format!(
                            "claim {i}: exposure interval [{lo}, {hi}] out of range"
                        )));
                    }
                    if let Some(l) = occ {
                        if l < lo || l > hi {
                            return Err(ClaimsError::Grid(format!(
                                "claim {i}: occurrence level {l} outside exposure [{lo}, {hi}]"
                            )));
                        }
                        occurrence_sets[*l].push(i);
                    }
                }
                (None, Some(_)) => {
                    return Err(ClaimsError::Grid(format!(
                        "claim {i}: occurrence without exposure"
                    )))
                }
                (None, None) => n_truncated += 1,
            }
        }
        Ok(RiskGrid {
            levels,
            delta,
            cutoff,
            exposure,
            occurrence,
            occurrence_sets,
            n_truncated,
        })
    }
}

/// Build the exposure/occurrence grid from claim records.
pub fn build_risk_grid(
    records: &[ClaimRecord],
    delta: u32,
    cutoff: u32,
    max_delay: u32,
) -> Result<RiskGrid, ClaimsError> {
    if cutoff % delta != 0 || max_delay % delta != 0 {
        return Err(ClaimsError::Grid(format!(
            "delta {delta} must divide the cut-off {cutoff} and the delay bound {max_delay}"
        )));
    }
    let levels = (max_delay / delta) as usize;
    let mut exposure = Vec::with_capacity(records.len());
    let mut occurrence = Vec::with_capacity(records.len());
    let mut occurrence_sets = vec![Vec::new(); levels];
    let mut n_truncated = 0;

    for (i, rec) in records.iter().enumerate() {
        if rec.delay_days > max_delay {
            return Err(ClaimsError::DelayOutOfRange {
                index: i,
                delay: rec.delay_days,
                max_delay,
            });
        }
        let entry = (rec.delay_days / delta) as usize;
        // Day-start coordinate of the accident; day U spans [U-1, U).
        let u0 = rec.accident_day as i64 - 1;
        // Largest level j with u0 <= cutoff - (j+1) delta.
        let span = cutoff as i64 - u0;
        let exit_raw = span.div_euclid(delta as i64) - 1;
        let exit = exit_raw.min(levels as i64 - 1);
        if exit < entry as i64 {
            exposure.push(None);
            occurrence.push(None);
            n_truncated += 1;
            continue;
        }
        let exit = exit as usize;
        exposure.push(Some((entry, exit)));
        occurrence.push(Some(entry));
        occurrence_sets[entry].push(i);
    }

    Ok(RiskGrid {
        levels,
        delta,
        cutoff,
        exposure,
        occurrence,
        occurrence_sets,
        n_truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, u: u32, d: u32) -> ClaimRecord {
        ClaimRecord {
            claim_id: id.to_string(),
            accident_day: u,
            delay_days: d,
            features: vec![],
        }
    }

    fn basic_schema() -> Schema {
        Schema::new(&[
            ("id", ColumnRole::Id),
            ("accident_day", ColumnRole::AccidentDay),
            ("delay_day", ColumnRole::DelayDay),
        ])
    }

    #[test]
    fn load_two_rows_with_override() {
        let csv = "id,accident_day,delay_day\n1,1,0\n2,2,1\n";
        let out = load_claims_from_reader(csv.as_bytes(), &basic_schema(), Some(3)).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.cutoff, 3);
        assert!(out.rejected.is_empty());
        assert_eq!(out.records[0].accident_day, 1);
        assert_eq!(out.records[1].delay_days, 1);
    }

    #[test]
    fn reject_row_beyond_cutoff() {
        let csv = "id,accident_day,delay_day\n1,1,0\n2,5,10\n";
        let out = load_claims_from_reader(csv.as_bytes(), &basic_schema(), Some(12)).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.rejected.len(), 1);
        assert_eq!(out.rejected[0].line, 3);
    }

    #[test]
    fn missing_column_is_schema_error() {
        let csv = "id,accident_day\n1,1\n";
        let err = load_claims_from_reader(csv.as_bytes(), &basic_schema(), None).unwrap_err();
        assert!(matches!(err, ClaimsError::MissingColumn(_)));
    }

    #[test]
    fn non_integer_day_reports_line() {
        let csv = "id,accident_day,delay_day\n1,1,0\n2,x,1\n";
        let err = load_claims_from_reader(csv.as_bytes(), &basic_schema(), None).unwrap_err();
        match err {
            ClaimsError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_file_errors() {
        let csv = "id,accident_day,delay_day\n";
        let err = load_claims_from_reader(csv.as_bytes(), &basic_schema(), None).unwrap_err();
        assert!(matches!(err, ClaimsError::EmptyInput(_)));
    }

    #[test]
    fn write_then_load_round_trips() {
        let schema = Schema {
            delimiter: ',',
            columns: [
                ("id".to_string(), ColumnRole::Id),
                ("accident_day".to_string(), ColumnRole::AccidentDay),
                ("delay_day".to_string(), ColumnRole::DelayDay),
                ("claim_type".to_string(), ColumnRole::Categorical),
            ]
            .into_iter()
            .collect(),
            feature_order: vec!["claim_type".to_string()],
        };
        let records = vec![
            ClaimRecord {
                claim_id: "a".into(),
                accident_day: 3,
                delay_days: 2,
                features: vec![FeatureValue::Cat("0".into())],
            },
            ClaimRecord {
                claim_id: "b".into(),
                accident_day: 1,
                delay_days: 0,
                features: vec![FeatureValue::Cat("1".into())],
            },
        ];
        let mut buf = Vec::new();
        write_claims(&mut buf, &schema, &records).unwrap();
        let back = load_claims_from_reader(buf.as_slice(), &schema, None).unwrap();
        assert_eq!(back.records, records);
    }

    #[test]
    fn one_hot_identity() {
        let schema = Schema {
            delimiter: ',',
            columns: [
                ("id".to_string(), ColumnRole::Id),
                ("accident_day".to_string(), ColumnRole::AccidentDay),
                ("delay_day".to_string(), ColumnRole::DelayDay),
                ("claim_type".to_string(), ColumnRole::Categorical),
            ]
            .into_iter()
            .collect(),
            feature_order: vec![],
        };
        let records = vec![
            ClaimRecord {
                claim_id: "a".into(),
                accident_day: 1,
                delay_days: 0,
                features: vec![FeatureValue::Cat("0".into())],
            },
            ClaimRecord {
                claim_id: "b".into(),
                accident_day: 2,
                delay_days: 0,
                features: vec![FeatureValue::Cat("1".into())],
            },
        ];
        let data = preprocess_features(&records, &schema, &PreprocessConfig::default()).unwrap();
        // column 0 is the scaled accident day; indicators follow
        assert_eq!(data.rows[1][1..], [0.0, 1.0]);
        assert_eq!(data.rows[0][1..], [1.0, 0.0]);
        // indicators sum to one per row
        for row in &data.rows {
            let s: f64 = row[1..].iter().sum();
            assert_eq!(s, 1.0);
        }
    }

    #[test]
    fn minmax_scaling_values() {
        let schema = Schema {
            delimiter: ',',
            columns: [
                ("id".to_string(), ColumnRole::Id),
                ("accident_day".to_string(), ColumnRole::AccidentDay),
                ("delay_day".to_string(), ColumnRole::DelayDay),
                ("x".to_string(), ColumnRole::Continuous),
            ]
            .into_iter()
            .collect(),
            feature_order: vec![],
        };
        let mk = |id: &str, v: f64| ClaimRecord {
            claim_id: id.into(),
            accident_day: 1,
            delay_days: 0,
            features: vec![FeatureValue::Num(v)],
        };
        let records = vec![mk("a", 0.0), mk("b", 5.0), mk("c", 10.0)];
        let data = preprocess_features(&records, &schema, &PreprocessConfig::default()).unwrap();
        let col = data.encoding.width() - 1;
        assert_eq!(data.rows[0][col], 0.0);
        assert_eq!(data.rows[1][col], 1.0);
        assert_eq!(data.rows[2][col], 2.0);
    }

    #[test]
    fn constant_continuous_column_errors() {
        let schema = Schema {
            delimiter: ',',
            columns: [
                ("id".to_string(), ColumnRole::Id),
                ("accident_day".to_string(), ColumnRole::AccidentDay),
                ("delay_day".to_string(), ColumnRole::DelayDay),
                ("x".to_string(), ColumnRole::Continuous),
            ]
            .into_iter()
            .collect(),
            feature_order: vec![],
        };
        let mk = |id: &str| ClaimRecord {
            claim_id: id.into(),
            accident_day: 1,
            delay_days: 0,
            features: vec![FeatureValue::Num(7.0)],
        };
        let err =
            preprocess_features(&[mk("a"), mk("b")], &schema, &PreprocessConfig::default())
                .unwrap_err();
        match err {
            ClaimsError::DegenerateScale(col) => assert_eq!(col, "x"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn scaling_scaled_data_is_identity() {
        // Scaled continuous data has min 0 and max 2; re-scaling it as a
        // fresh dataset with its own statistics maps x -> 2(x-0)/2 = x.
        let stats = MinMax { min: 0.0, max: 2.0 };
        for &x in &[0.0, 0.3, 1.0, 1.7, 2.0] {
            assert!((stats.apply(x) - x).abs() < 1e-15);
        }
    }

    proptest::proptest! {
        #[test]
        fn scaling_idempotence_on_random_columns(
            values in proptest::collection::vec(-1e6f64..1e6, 3..40)
        ) {
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            proptest::prop_assume!(max > min + 1e-6);
            let stats = MinMax { min, max };
            let scaled: Vec<f64> = values.iter().map(|&v| stats.apply(v)).collect();
            // fresh statistics of the scaled column are exactly (0, 2)
            let stats2 = MinMax { min: 0.0, max: 2.0 };
            for &s in &scaled {
                proptest::prop_assert!((stats2.apply(s) - s).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn single_claim_grid() {
        // U=0 kept as a raw time point for grid purposes (u0 = -1).
        let records = vec![rec("1", 0, 0)];
        let grid = build_risk_grid(&records, 1, 2, 1).unwrap();
        assert_eq!(grid.exposure_set(0), vec![0]);
        assert_eq!(grid.occurrence_set(0), &[0]);
        assert_eq!(grid.occurrence_count(0), 1);
    }

    fn assert_membership_brute_force(records: &[ClaimRecord], grid: &RiskGrid) {
        // re-evaluation of both set definitions over all (i, j)
        for j in 0..grid.levels {
            let expect: Vec<usize> = records
                .iter()
                .enumerate()
                .filter(|(_, r)| {
                    let rec_le = (r.delay_days / grid.delta) as usize <= j;
                    let u0 = r.accident_day as i64 - 1;
                    let u_ok =
                        u0 <= grid.cutoff as i64 - ((j as i64 + 1) * grid.delta as i64);
                    rec_le && u_ok
                })
                .map(|(i, _)| i)
                .collect();
            assert_eq!(grid.exposure_set(j), expect, "level {j}");
            // occurrence = claims recorded at this level that are exposed
            let occ: Vec<usize> = records
                .iter()
                .enumerate()
                .filter(|(i, r)| {
                    (r.delay_days / grid.delta) as usize == j && expect.contains(i)
                })
                .map(|(i, _)| i)
                .collect();
            assert_eq!(grid.occurrence_set(j), &occ[..], "level {j}");
        }
    }

    #[test]
    fn membership_matches_brute_force() {
        // A=(U=0,rec=0), B=(U=0,rec=1), C=(U=1,rec=0), delta=1, cutoff=3.
        let records = vec![rec("A", 0, 0), rec("B", 0, 1), rec("C", 1, 0)];
        let grid = build_risk_grid(&records, 1, 3, 2).unwrap();
        assert_eq!(grid.exposure_set(0), vec![0, 2]);
        for j in 0..grid.levels {
            let expect: Vec<usize> = records
                .iter()
                .enumerate()
                .filter(|(_, r)| {
                    let rec_le = (r.delay_days / grid.delta) as usize <= j;
                    let u0 = r.accident_day as i64 - 1;
                    let u_ok =
                        u0 <= grid.cutoff as i64 - ((j as i64 + 1) * grid.delta as i64);
                    rec_le && u_ok
                })
                .map(|(i, _)| i)
                .collect();
            assert_eq!(grid.exposure_set(j), expect, "level {j}");
        }
    }

    #[test]
    fn membership_matches_brute_force_random_instances() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(77);
        for _ in 0..10 {
            let cutoff = rng.gen_range(6..=14u32);
            let n = rng.gen_range(50..=200usize);
            let records: Vec<ClaimRecord> = (0..n)
                .map(|i| {
                    let u = rng.gen_range(1..=cutoff);
                    let d = rng.gen_range(0..=cutoff - u);
                    rec(&i.to_string(), u, d)
                })
                .collect();
            let grid = build_risk_grid(&records, 1, cutoff, cutoff).unwrap();
            assert_membership_brute_force(&records, &grid);
        }
    }

    #[test]
    fn occurrences_partition_claims() {
        let records: Vec<ClaimRecord> = (0..40)
            .map(|i| rec(&i.to_string(), 1 + (i % 8) as u32, (i % 5) as u32))
            .collect();
        let cutoff = records.iter().map(|r| r.report_day()).max().unwrap();
        let grid = build_risk_grid(&records, 1, cutoff, cutoff).unwrap();
        let total: usize = (0..grid.levels).map(|j| grid.occurrence_count(j)).sum();
        assert_eq!(total, records.len());
        assert_eq!(grid.n_truncated, 0);
        // occurrence sets are contained in exposure sets
        for j in 0..grid.levels {
            let exp = grid.exposure_set(j);
            for &i in grid.occurrence_set(j) {
                assert!(exp.contains(&i));
            }
        }
    }

    #[test]
    fn delay_beyond_bound_errors() {
        let records = vec![rec("1", 1, 9)];
        let err = build_risk_grid(&records, 1, 20, 5).unwrap_err();
        assert!(matches!(err, ClaimsError::DelayOutOfRange { .. }));
    }

    #[test]
    fn unseen_level_is_a_scoring_error() {
        let schema = Schema {
            delimiter: ',',
            columns: [
                ("id".to_string(), ColumnRole::Id),
                ("accident_day".to_string(), ColumnRole::AccidentDay),
                ("delay_day".to_string(), ColumnRole::DelayDay),
                ("claim_type".to_string(), ColumnRole::Categorical),
            ]
            .into_iter()
            .collect(),
            feature_order: vec![],
        };
        let train = vec![ClaimRecord {
            claim_id: "a".into(),
            accident_day: 1,
            delay_days: 0,
            features: vec![FeatureValue::Cat("0".into())],
        }, ClaimRecord {
            claim_id: "b".into(),
            accident_day: 2,
            delay_days: 0,
            features: vec![FeatureValue::Cat("1".into())],
        }];
        let data = preprocess_features(&train, &schema, &PreprocessConfig::default()).unwrap();
        let probe = ClaimRecord {
            claim_id: "c".into(),
            accident_day: 1,
            delay_days: 0,
            features: vec![FeatureValue::Cat("9".into())],
        };
        let err = data.encoding.encode_row(&probe).unwrap_err();
        match err {
            ClaimsError::UnseenLevel { feature, level } => {
                assert_eq!(feature, "claim_type");
                assert_eq!(level, "9");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
