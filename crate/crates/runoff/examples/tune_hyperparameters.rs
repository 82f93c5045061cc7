//! Seeded random hyperparameter search with claim-wise cross-validation.
//!
//! Each trial draws tree-booster hyperparameters uniformly from fixed
//! ranges and scores them by the mean held-out average negative log
//! partial likelihood over the folds; the argmin wins. A reduced
//! portfolio keeps this example quick.
//!
//! Run with: `cargo run --release --example tune_hyperparameters`

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use runoff::pipeline::{cmd_tune, Dataset, DatasetMeta, RunConfig};
use runoff::simulate::{simulate_scenario, Scenario, ScenarioConfig};
use runoff::tune::{TrialParams, TuneTarget};

fn main() {
    let mut scenario = ScenarioConfig::new(Scenario::Alpha);
    scenario.rate_per_individual = 0.01; // ~5800 claims
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

    let mut config = RunConfig::default();
    config.tune.trials = 8;
    config.tune.folds = 3;
    config.tune.gbm_rounds = 60;

    let outcome = cmd_tune(&dataset, TuneTarget::Gbm, &config, 7, None).unwrap();
    println!("{:>5} {:>12}  parameters", "trial", "cv nll/n");
    for trial in &outcome.trials {
        let TrialParams::Gbm(p) = &trial.params else { continue };
        println!(
            "{:>5} {:>12}  eta {:.2}, depth {:>2}, lambda {:>5.1}, alpha {:>5.1}, mcw {:>4.1}, subsample {:.2}",
            trial.index,
            trial
                .score
                .map(|s| format!("{s:.4}"))
                .unwrap_or_else(|| "failed".into()),
            p.eta,
            p.max_depth,
            p.lambda,
            p.alpha,
            p.min_child_weight,
            p.subsample,
        );
    }
    println!(
        "\nwinner: trial {} with held-out nll/n {:.4}",
        outcome.best_index, outcome.best_score
    );
}
