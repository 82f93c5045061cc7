//! Score forecasts against held-out truth: relative error metrics over
//! the lower triangle and the continuously ranked probability score.
//!
//! Run with: `cargo run --release --example evaluate_forecasts`

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use runoff::pipeline::{cmd_evaluate, cmd_fit, Dataset, DatasetMeta, ModelKind, RunConfig};
use runoff::simulate::{simulate_scenario, Scenario, ScenarioConfig};

fn main() {
    // scenario Beta: the long-tailed claim type loses volume over time,
    // which misleads the aggregate chain ladder but not the hazard models
    let scenario = ScenarioConfig::new(Scenario::Beta);
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let data = simulate_scenario(&scenario, &mut rng).unwrap();
    let dataset = Dataset {
        records: data.observed,
        truth: data.withheld,
        schema: data.schema,
        meta: DatasetMeta {
            scenario: Some("beta".into()),
            cutoff: data.cutoff,
            max_delay: data.cutoff,
            seed: Some(7),
        },
    };
    let config = RunConfig::default();

    println!(
        "scenario beta, quarterly metrics against {} held-out claims:\n",
        dataset.truth.len()
    );
    println!(
        "{:<6} {:>8} {:>12} {:>11} {:>9}",
        "model", "R_tot", "R_cellwise", "R_calwise", "CRPS"
    );
    for kind in [ModelKind::Cl, ModelKind::Cox, ModelKind::Gbm, ModelKind::Mlp] {
        let artifact = cmd_fit(&dataset, kind, &config, 1).unwrap();
        let report = cmd_evaluate(&artifact, &dataset, &config, 90, None).unwrap();
        println!(
            "{:<6} {:>8.4} {:>12.4} {:>11.4} {:>9}",
            report.model,
            report.r_tot,
            report.r_cellwise,
            report.r_calwise,
            report
                .crps_average
                .map(|c| format!("{c:.2}"))
                .unwrap_or_else(|| "--".into())
        );
    }
}
