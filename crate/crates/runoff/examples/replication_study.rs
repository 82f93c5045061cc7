//! Multi-replication comparison study: simulate, fit, forecast and
//! score several models across seeded replications, then print the
//! mean +/- sd summary table.
//!
//! Uses a reduced portfolio and two replications so the example runs in
//! seconds; raise `rate_per_individual` and `replications` for a full
//! study.
//!
//! Run with: `cargo run --release --example replication_study`

use runoff::pipeline::{cmd_replicate, format_summary, summarize, ModelKind, RunConfig};
use runoff::simulate::{Scenario, ScenarioConfig};

fn main() {
    let mut config = RunConfig::default();
    let mut scenario = ScenarioConfig::new(Scenario::Beta);
    scenario.rate_per_individual = 0.02;
    config.scenario = Some(scenario);

    let reports = cmd_replicate(
        Scenario::Beta,
        &[ModelKind::Cl, ModelKind::Cox, ModelKind::Gbm],
        2,
        &config,
        7,
        None,
    )
    .unwrap();
    print!("{}", format_summary(&summarize(&reports)));
}
