//! From a fitted hazard to development factors and survival curves.
//!
//! The baseline hazard per delay block converts into a development
//! factor through `f = (1 + eta z) / (1 - (1 - eta) z)` with
//! `z = delta * alpha` — exactly the age-to-age ratio when fed raw
//! occurrence counts, for any eta in [0, 1]. Survival curves are inverse
//! cumulative factor products.
//!
//! Run with: `cargo run --release --example development_factors`

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use runoff::claims::{ClaimRecord, FeatureValue};
use runoff::hazard::{dev_factors_from_hazard, survival_curve};
use runoff::pipeline::{cmd_fit, cmd_predict, Dataset, DatasetMeta, ModelKind, RunConfig};
use runoff::simulate::{simulate_scenario, Scenario, ScenarioConfig};
use runoff::RiskScorer;

fn main() {
    let scenario = ScenarioConfig::new(Scenario::Alpha);
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let data = simulate_scenario(&scenario, &mut rng).unwrap();
    let dataset = Dataset {
        records: data.observed,
        truth: data.withheld,
        schema: data.schema,
        meta: DatasetMeta {
            scenario: Some("alpha".into()),
            cutoff: data.cutoff,
            max_delay: data.cutoff,
            seed: Some(7),
        },
    };
    let config = RunConfig::default();
    let artifact = cmd_fit(&dataset, ModelKind::Cox, &config, 1).unwrap();
    let encoding = artifact.encoding.as_ref().unwrap();
    let baseline = artifact.baseline.as_ref().unwrap();
    let model = artifact.cox.as_ref().unwrap();

    // native (daily) factor ladder for a type-0 claim at accident day 13
    let probe = ClaimRecord {
        claim_id: "probe".into(),
        accident_day: 13,
        delay_days: 0,
        features: vec![FeatureValue::Cat("0".into())],
    };
    let row = encoding.encode_row(&probe).unwrap();
    let risk = model.log_risk(&row).exp();
    let ladder = dev_factors_from_hazard(baseline, risk, artifact.eta).unwrap();
    let survival = survival_curve(&ladder);
    println!("daily development factors, claim_type 0, accident day 13:");
    for j in [1usize, 2, 3, 7, 30, 90, 360] {
        println!(
            "  day {:>3}: hazard {:.5}, factor {:.4}, survival {:.4}",
            j,
            ladder.cells[j].hazard,
            ladder.factor(j),
            survival[j]
        );
    }

    // quarterly factors from the regrained fitted ladder
    let prediction = cmd_predict(&artifact, &dataset, 90).unwrap();
    let re = prediction.regrained.as_ref().unwrap();
    println!("\nquarterly development factors (accident quarter 4):");
    for (key, ladders) in &re.factors {
        let row: Vec<String> = (1..8)
            .map(|j| match ladders[4][j] {
                Some(f) => format!("{f:.3}"),
                None => "  -  ".into(),
            })
            .collect();
        println!("  claim_type {}: {}", key, row.join("  "));
    }
}
