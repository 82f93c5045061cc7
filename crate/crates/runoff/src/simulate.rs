//! Synthetic claim generators with a known reverse-time hazard.
//!
//! Scenarios Alpha..Epsilon draw daily claim counts from a Poisson law
//! per accident day and claim type, and reporting delays from a
//! right-truncated Frechet-Weibull distribution (RTFWD) whose scale is
//! tilted so that the reverse-time hazard factorizes as
//! `alpha0(t) exp(phi(AD, claim_type))`:
//!
//! ```text
//! F(t) = exp(-pi^nu xi^(nu k) (t^(-nu k) - b^(-nu k))),  0 < t <= b
//! alpha(t) = nu k pi^nu xi^(nu k) t^(-1 - nu k)
//! xi(AD, ct) = xi0 (e^phi)^(1/(nu k))
//! ```
//!
//! Epsilon breaks proportionality: its hazard `alpha0(t|ct)(e^phi + phi/2)`
//! is integrated in closed form and sampled by bisection on the CDF.
//! Zeta draws delays from a Transformed Gamma and carries continuous and
//! categorical covariates, with a deliberately non-informative age.
//!
//! Claims reported after the cut-off are kept separately as the
//! out-of-sample lower triangle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Poisson};

use crate::claims::{ClaimRecord, ColumnRole, FeatureValue, Schema};

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("unknown scenario tag `{0}`")]
    UnknownScenario(String),
    #[error("uniform variate {0} outside (0, 1)")]
    UniformDomain(f64),
    #[error("invalid config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Alpha,
    Beta,
    Gamma,
    Delta,
    Epsilon,
    Zeta,
}

impl Scenario {
    pub fn parse(tag: &str) -> Result<Self, SimulateError> {
        match tag.to_ascii_lowercase().as_str() {
            "alpha" => Ok(Scenario::Alpha),
            "beta" => Ok(Scenario::Beta),
            "gamma" => Ok(Scenario::Gamma),
            "delta" => Ok(Scenario::Delta),
            "epsilon" => Ok(Scenario::Epsilon),
            "zeta" => Ok(Scenario::Zeta),
            other => Err(SimulateError::UnknownScenario(other.to_string())),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Scenario::Alpha => "alpha",
            Scenario::Beta => "beta",
            Scenario::Gamma => "gamma",
            Scenario::Delta => "delta",
            Scenario::Epsilon => "epsilon",
            Scenario::Zeta => "zeta",
        }
    }
}

/// RTFWD parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RtfwdParams {
    pub nu: f64,
    pub pi: f64,
    pub k: f64,
    pub xi0: f64,
}

impl Default for RtfwdParams {
    fn default() -> Self {
        RtfwdParams {
            nu: 0.5,
            pi: 60.0,
            k: 1.0,
            xi0: 0.1,
        }
    }
}

/// Zeta-specific parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZetaParams {
    /// Poisson rate per individual; `None` calibrates the rate so the
    /// expected total equals `expected_total`.
    pub rate: Option<f64>,
    pub expected_total: f64,
    pub business_use_prob: f64,
    /// Exposure decreases by one per accident day, floored here.
    pub min_exposure: f64,
    pub property_log_mean: f64,
    pub property_log_sd: f64,
    /// Transformed-Gamma scale, in years.
    pub o: f64,
    pub days_per_year: f64,
}

impl Default for ZetaParams {
    fn default() -> Self {
        ZetaParams {
            rate: None,
            expected_total: 9448.0,
            business_use_prob: 0.5,
            min_exposure: 1.0,
            property_log_mean: 3.034513,
            property_log_sd: 0.4087569,
            o: 0.2,
            days_per_year: 360.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    /// Observation horizon in days; accident days run 1..=horizon.
    pub horizon_days: u32,
    /// Individuals at risk per accident day and claim type.
    pub individuals_at_risk: f64,
    /// Poisson rate per individual per accident day.
    pub rate_per_individual: f64,
    /// beta_0..beta_6 feature effects.
    pub betas: [f64; 7],
    pub rtfwd: RtfwdParams,
    pub zeta: ZetaParams,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario) -> Self {
        ScenarioConfig {
            scenario,
            horizon_days: 1440,
            individuals_at_risk: 200.0,
            rate_per_individual: 0.05,
            betas: [1.1512, 1.95601, -0.021206, -0.3, 0.4, -0.7, 0.1],
            rtfwd: RtfwdParams::default(),
            zeta: ZetaParams::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SimulateError> {
        toml::from_str(text).map_err(|e| SimulateError::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }
}

/// Individuals at risk for `(accident day, claim type)`.
pub fn exposure(config: &ScenarioConfig, accident_day: u32, claim_type: u8) -> f64 {
    let base = config.individuals_at_risk;
    match config.scenario {
        Scenario::Beta if claim_type == 1 => base - ((accident_day - 1) / 10) as f64,
        Scenario::Zeta => {
            (base - (accident_day - 1) as f64).max(config.zeta.min_exposure)
        }
        _ => base,
    }
}

/// Seasonal month index `1..=12` of an accident day in a 360-day year.
pub fn seasonal_month(accident_day: u32) -> u32 {
    ((accident_day - 1) % 360) / 30 + 1
}

/// Scenario log-risk `phi(AD, claim_type)`.
pub fn log_risk(config: &ScenarioConfig, accident_day: u32, claim_type: u8) -> f64 {
    let b = &config.betas;
    let base = if claim_type == 0 { b[0] } else { b[1] };
    match config.scenario {
        Scenario::Alpha | Scenario::Beta | Scenario::Epsilon => base,
        Scenario::Gamma => {
            base + if claim_type == 1 {
                b[2] * (accident_day as f64).sqrt()
            } else {
                0.0
            }
        }
        Scenario::Delta => {
            let m = seasonal_month(accident_day);
            let seasonal = match m {
                2..=4 => b[3],
                5..=7 => b[4],
                8..=10 => b[5],
                _ => b[6], // months 11, 12, 1
            };
            base + seasonal
        }
        Scenario::Zeta => 0.0,
    }
}

/// Closed-form RTFWD distribution function.
pub fn rtfwd_cdf(params: &RtfwdParams, xi: f64, b: f64, t: f64) -> f64 {
    let nk = params.nu * params.k;
    let scale = params.pi.powf(params.nu) * xi.powf(nk);
    (-scale * (t.powf(-nk) - b.powf(-nk))).exp()
}

/// Inverse-CDF sample of the RTFWD: errors unless `0 < u < 1`.
pub fn sample_rtfwd(
    params: &RtfwdParams,
    xi: f64,
    b: f64,
    u: f64,
) -> Result<f64, SimulateError> {
    if !(0.0 < u && u < 1.0) {
        return Err(SimulateError::UniformDomain(u));
    }
    let nk = params.nu * params.k;
    let scale = params.pi.powf(params.nu) * xi.powf(nk);
    let t = (-u.ln() / scale + b.powf(-nk)).powf(-1.0 / nk);
    Ok(t.min(b))
}

/// Epsilon reverse hazard `alpha(t) = c(ct) / t`, the baseline
/// `0.5 sqrt(0.1 (2 + f(ct)))` over `t` times the non-exponential risk
/// multiplier `e^phi + f(ct)` with `f = phi / 2`. Integrating gives the
/// closed form `F(t) = (t / b)^c`.
fn epsilon_hazard_coefficient(config: &ScenarioConfig, claim_type: u8) -> f64 {
    let phi = log_risk(config, 1, claim_type);
    let f = 0.5 * phi;
    let alpha0 = 0.5 * (0.1 * (2.0 + f)).sqrt();
    alpha0 * (phi.exp() + f)
}

fn epsilon_cdf(c: f64, b: f64, t: f64) -> f64 {
    (t / b).powf(c)
}

/// Sample the Epsilon delay by bisecting its CDF to 1e-10 days.
fn sample_epsilon(c: f64, b: f64, u: f64) -> Result<f64, SimulateError> {
    if !(0.0 < u && u < 1.0) {
        return Err(SimulateError::UniformDomain(u));
    }
    let (mut lo, mut hi) = (0.0_f64, b);
    if epsilon_cdf(c, b, lo) >= u {
        return Ok(0.0);
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if epsilon_cdf(c, b, mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Transformed-Gamma delay draw `o * G^(1/s2)` with `G ~ Gamma(s1, 1)`.
pub fn sample_transformed_gamma<R: Rng>(
    rng: &mut R,
    s1: f64,
    s2: f64,
    o: f64,
) -> Result<f64, SimulateError> {
    if s1 <= 0.0 || s2 <= 0.0 || o <= 0.0 {
        return Err(SimulateError::Config(format!(
            "transformed gamma needs positive parameters, got s1={s1}, s2={s2}, o={o}"
        )));
    }
    let gamma = Gamma::new(s1, 1.0)
        .map_err(|e| SimulateError::Config(format!("gamma draw: {e}")))?;
    let g: f64 = gamma.sample(rng);
    Ok(o * g.powf(1.0 / s2))
}

/// Everything one replication produces.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    /// Claims reported on or before the cut-off (the upper triangle).
    pub observed: Vec<ClaimRecord>,
    /// Claims reported after the cut-off (lower-triangle truth).
    pub withheld: Vec<ClaimRecord>,
    pub schema: Schema,
    pub cutoff: u32,
}

impl SimulatedData {
    pub fn total(&self) -> usize {
        self.observed.len() + self.withheld.len()
    }
}

/// Schema of the Alpha..Epsilon output files.
pub fn typed_schema() -> Schema {
    let mut schema = Schema::new(&[
        ("claim_number", ColumnRole::Id),
        ("AD", ColumnRole::AccidentDay),
        ("DD", ColumnRole::DelayDay),
        ("claim_type", ColumnRole::Categorical),
    ]);
    schema.feature_order = vec!["claim_type".to_string()];
    schema
}

/// Schema of the Zeta output files.
pub fn zeta_schema() -> Schema {
    let mut schema = Schema::new(&[
        ("claim_number", ColumnRole::Id),
        ("AD", ColumnRole::AccidentDay),
        ("DD", ColumnRole::DelayDay),
        ("age", ColumnRole::Continuous),
        ("property_value", ColumnRole::Continuous),
        ("business_use", ColumnRole::Categorical),
    ]);
    schema.feature_order = vec![
        "age".to_string(),
        "property_value".to_string(),
        "business_use".to_string(),
    ];
    schema
}

fn poisson_count<R: Rng>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

/// Draw claim counts per (accident day, claim type): Poisson with mean
/// `rate * exposure(day, type)`. Zeta uses a single pseudo-type 0.
pub fn sample_counts<R: Rng>(config: &ScenarioConfig, rng: &mut R) -> Vec<(u32, u8, u64)> {
    let types: &[u8] = match config.scenario {
        Scenario::Zeta => &[0],
        _ => &[0, 1],
    };
    let rate = match config.scenario {
        Scenario::Zeta => zeta_rate(config),
        _ => config.rate_per_individual,
    };
    let mut out = Vec::with_capacity(config.horizon_days as usize * types.len());
    for ad in 1..=config.horizon_days {
        for &ct in types {
            let mean = rate * exposure(config, ad, ct);
            out.push((ad, ct, poisson_count(rng, mean)));
        }
    }
    out
}

/// Generate one replication of any scenario.
pub fn simulate_scenario<R: Rng>(
    config: &ScenarioConfig,
    rng: &mut R,
) -> Result<SimulatedData, SimulateError> {
    match config.scenario {
        Scenario::Zeta => simulate_zeta(config, rng),
        _ => simulate_typed(config, rng),
    }
}

fn simulate_typed<R: Rng>(
    config: &ScenarioConfig,
    rng: &mut R,
) -> Result<SimulatedData, SimulateError> {
    let b = config.horizon_days as f64;
    let cutoff = config.horizon_days;
    let nk = config.rtfwd.nu * config.rtfwd.k;
    let mut observed = Vec::new();
    let mut withheld = Vec::new();
    let mut next_id = 0u64;

    for ad in 1..=config.horizon_days {
        for ct in 0u8..=1 {
            let mean = config.rate_per_individual * exposure(config, ad, ct);
            let count = poisson_count(rng, mean);
            for _ in 0..count {
                let delay = match config.scenario {
                    Scenario::Epsilon => {
                        let c = epsilon_hazard_coefficient(config, ct);
                        sample_epsilon(c, b, draw_open_unit(rng))?
                    }
                    _ => {
                        let phi = log_risk(config, ad, ct);
                        let xi = config.rtfwd.xi0 * phi.exp().powf(1.0 / nk);
                        sample_rtfwd(&config.rtfwd, xi, b, draw_open_unit(rng))?
                    }
                };
                let rec = (delay.floor() as u32).min(config.horizon_days - 1);
                let record = ClaimRecord {
                    claim_id: next_id.to_string(),
                    accident_day: ad,
                    delay_days: rec,
                    features: vec![FeatureValue::Cat(ct.to_string())],
                };
                next_id += 1;
                if ad + rec <= cutoff {
                    observed.push(record);
                } else {
                    withheld.push(record);
                }
            }
        }
    }
    Ok(SimulatedData {
        observed,
        withheld,
        schema: typed_schema(),
        cutoff,
    })
}

/// Calibrated Zeta rate: `expected_total / sum_AD exposure(AD)`.
pub fn zeta_rate(config: &ScenarioConfig) -> f64 {
    if let Some(rate) = config.zeta.rate {
        return rate;
    }
    let total_exposure: f64 = (1..=config.horizon_days)
        .map(|ad| exposure(config, ad, 0))
        .sum();
    config.zeta.expected_total / total_exposure
}

/// Generate the Zeta scenario.
pub fn simulate_zeta<R: Rng>(
    config: &ScenarioConfig,
    rng: &mut R,
) -> Result<SimulatedData, SimulateError> {
    let z = &config.zeta;
    let cutoff = config.horizon_days;
    let b_days = config.horizon_days as f64;
    let rate = zeta_rate(config);
    let lognormal = LogNormal::new(z.property_log_mean, z.property_log_sd)
        .map_err(|e| SimulateError::Config(format!("lognormal: {e}")))?;

    let mut observed = Vec::new();
    let mut withheld = Vec::new();
    let mut next_id = 0u64;

    for ad in 1..=config.horizon_days {
        let mean = rate * exposure(config, ad, 0);
        let count = poisson_count(rng, mean);
        for _ in 0..count {
            let property_value: f64 = lognormal.sample(rng);
            let business_use = rng.gen_bool(z.business_use_prob);
            let age = rng.gen_range(50..=55u32);
            let s1 = 1.0 + 1.0 / property_value;
            let s2 = 1.0 - (1.0 + business_use as u8 as f64) / 10.0;
            // truncate at the horizon by resampling
            let mut days;
            loop {
                let years = sample_transformed_gamma(rng, s1, s2, z.o)?;
                days = years * z.days_per_year;
                if days <= b_days {
                    break;
                }
            }
            let rec = (days.floor() as u32).min(config.horizon_days - 1);
            let record = ClaimRecord {
                claim_id: next_id.to_string(),
                accident_day: ad,
                delay_days: rec,
                features: vec![
                    FeatureValue::Num(age as f64),
                    FeatureValue::Num(property_value),
                    FeatureValue::Cat(if business_use { "Y" } else { "N" }.to_string()),
                ],
            };
            next_id += 1;
            if ad + rec <= cutoff {
                observed.push(record);
            } else {
                withheld.push(record);
            }
        }
    }
    Ok(SimulatedData {
        observed,
        withheld,
        schema: zeta_schema(),
        cutoff,
    })
}

fn draw_open_unit<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 && u < 1.0 {
            return u;
        }
    }
}
