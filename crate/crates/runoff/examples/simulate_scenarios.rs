//! Generate synthetic claim datasets and write them as dataset
//! directories (claims.csv, truth.csv, schema.toml, meta.toml).
//!
//! Each scenario draws daily claim counts from a Poisson law and
//! reporting delays from a right-truncated heavy-tailed distribution
//! whose reverse-time hazard factorizes over accident day and claim
//! type; claims reported after the cut-off day are written to the truth
//! file as the out-of-sample lower triangle.
//!
//! Run with: `cargo run --release --example simulate_scenarios`

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use runoff::pipeline::{cmd_simulate, RunConfig};
use runoff::simulate::{simulate_scenario, Scenario, ScenarioConfig};

fn main() {
    let out = tempfile::tempdir().expect("temp dir");

    // full-size scenario Alpha through the file pipeline
    let config = RunConfig::default();
    let meta = cmd_simulate(Scenario::Alpha, &config, 7, 0, &out.path().join("alpha")).unwrap();
    println!(
        "alpha: dataset written to {} (cut-off day {})",
        out.path().join("alpha").display(),
        meta.cutoff
    );

    // in-memory generation for every scenario, with a summary line each
    for scenario in [
        Scenario::Alpha,
        Scenario::Beta,
        Scenario::Gamma,
        Scenario::Delta,
        Scenario::Epsilon,
        Scenario::Zeta,
    ] {
        let sc = ScenarioConfig::new(scenario);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let data = simulate_scenario(&sc, &mut rng).unwrap();
        let ibnr = data.withheld.len() as f64 / data.total() as f64;
        println!(
            "{:8}: {:6} claims generated, {:5} reported after the cut-off ({:.1}% IBNR)",
            scenario.tag(),
            data.total(),
            data.withheld.len(),
            100.0 * ibnr
        );
    }
}
