//! Forecast the lower run-off triangle and demonstrate granularity
//! coherence: the predicted IBNR total is identical whether reported
//! daily, monthly or quarterly, because coarse cells are calendar-block
//! sums of the same per-claim fine predictions.
//!
//! Run with: `cargo run --release --example forecast_triangle`

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use runoff::pipeline::{cmd_fit, cmd_predict, Dataset, DatasetMeta, ModelKind, RunConfig};
use runoff::simulate::{simulate_scenario, Scenario, ScenarioConfig};

fn main() {
    let scenario = ScenarioConfig::new(Scenario::Alpha);
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let data = simulate_scenario(&scenario, &mut rng).unwrap();
    let truth_total = data.withheld.len();
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
    let artifact = cmd_fit(&dataset, ModelKind::Gbm, &config, 1).unwrap();

    println!("held-out truth: {truth_total} claims reported after the cut-off\n");
    for granularity in [1u32, 30, 90] {
        let prediction = cmd_predict(&artifact, &dataset, granularity).unwrap();
        println!(
            "granularity {:>2} days: predicted IBNR total {:.4}",
            granularity,
            prediction.triangles.predicted_total()
        );
    }

    // quarterly triangle corner, observed and predicted, per claim type
    let prediction = cmd_predict(&artifact, &dataset, 90).unwrap();
    println!("\nquarterly triangle (last four accident quarters, claim_type 1):");
    let key = runoff::claims::FeatureKey(vec!["1".into()]);
    let pair = &prediction.triangles.cells[&key];
    let k_max = prediction.triangles.k_periods as u32;
    for k in (k_max - 4)..k_max {
        let mut cells = Vec::new();
        for j in 0..8u32 {
            let obs = pair.observed_at(k, j);
            let pred = pair.predicted_at(k, j);
            if pred > 0.0 {
                cells.push(format!("{:>7.1}*", pred));
            } else {
                cells.push(format!("{:>7.0} ", obs));
            }
        }
        println!("  quarter {:>2}: {}", k, cells.join(""));
    }
    println!("  (* = forecast)");
}
