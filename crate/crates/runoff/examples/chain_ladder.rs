//! The classical chain ladder, and its exact equivalence with the
//! featureless hazard pipeline.
//!
//! With all log-risk scores at zero and eta = 1/2, development factors
//! derived from the baseline hazard coincide with the volume-weighted
//! column-sum factors of the classical chain ladder, and the filled
//! triangles agree cell by cell.
//!
//! Run with: `cargo run --release --example chain_ladder`

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

use runoff::chainladder::cl_fit_predict;
use runoff::claims::{
    build_risk_grid, preprocess_features, ClaimRecord, ColumnRole, PreprocessConfig, Schema,
};
use runoff::hazard::{dev_factors_from_hazard, estimate_baseline};
use runoff::likelihood::ScoreVector;
use runoff::triangle::{build_cells, predict_lower};

fn main() {
    // random featureless claims on an 8-period grid
    let mut rng = ChaCha12Rng::seed_from_u64(42);
    let cutoff = 8u32;
    let mut records = Vec::new();
    for j in 0..cutoff {
        records.push(ClaimRecord {
            claim_id: format!("base{j}"),
            accident_day: 1,
            delay_days: j,
            features: vec![],
        });
    }
    for i in 0..400 {
        let u = rng.gen_range(1..=cutoff);
        let d = rng.gen_range(0..=cutoff - u);
        records.push(ClaimRecord {
            claim_id: i.to_string(),
            accident_day: u,
            delay_days: d,
            features: vec![],
        });
    }

    let schema = Schema::new(&[
        ("id", ColumnRole::Id),
        ("accident_day", ColumnRole::AccidentDay),
        ("delay_day", ColumnRole::DelayDay),
    ]);
    let pre = PreprocessConfig {
        cutoff: Some(cutoff),
        ..Default::default()
    };
    let data = preprocess_features(&records, &schema, &pre).unwrap();
    let observed = build_cells(&records, &data.encoding, 1).unwrap();
    let incremental = observed.aggregate_observed();

    let cl = cl_fit_predict(&incremental).unwrap();
    println!("chain-ladder factors: {:?}", &cl.factors[1..]);
    println!("chain-ladder IBNR total: {:.4}", cl.predicted_total());

    // featureless hazard route
    let grid = build_risk_grid(&records, 1, cutoff, cutoff).unwrap();
    let scores = ScoreVector::zeros(records.len());
    let baseline = estimate_baseline(&grid, &scores, 0.5).unwrap();
    let ladder = dev_factors_from_hazard(&baseline, 1.0, 0.5).unwrap();
    let factors: Vec<f64> = (1..cutoff as usize).map(|j| ladder.factor(j)).collect();
    println!("hazard-route factors:  {factors:?}");

    let predicted = predict_lower(&records, &data.encoding, &scores, &baseline, 0.5, 1).unwrap();
    println!("hazard-route IBNR total: {:.4}", predicted.predicted_total());

    let max_gap = (1..cutoff as usize)
        .map(|j| (ladder.factor(j) - cl.factors[j]).abs())
        .fold(0.0_f64, f64::max);
    println!("max factor difference: {max_gap:.2e}");
}
