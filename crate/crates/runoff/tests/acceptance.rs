//! Acceptance suite: one test per pinned criterion, each printing a
//! PASS line (run with `--nocapture` to see them).
//!
//! Criterion 8 pins reference bands for in-sample likelihood levels. The
//! boosting band and the model ordering hold; the Cox band starts at
//! 8.94 while a fully converged Efron-tie fit of the same likelihood
//! attains about 8.84 on this data (better than the band), so that
//! sub-check fails by construction and is kept faithful rather than
//! loosened. The validation out-of-sample likelihoods of the boosting
//! and network fits land within 0.02 of the pinned reference values,
//! which pins down every shared convention; only the Cox reference level
//! is unattainable without degrading the fit.

use std::collections::BTreeMap;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

use runoff::chainladder::cl_fit_predict;
use runoff::claims::{
    build_risk_grid, preprocess_features, ClaimRecord, ColumnRole, PreprocessConfig, RiskGrid,
    Schema,
};
use runoff::evaluate::{crps_individual, r_metrics_dense, CalendarPairing};
use runoff::hazard::{dev_factors_from_hazard, estimate_baseline};
use runoff::likelihood::{grad_and_hess, neg_log_partial_likelihood, ScoreVector};
use runoff::pipeline::{
    cmd_evaluate, cmd_fit, cmd_predict, cmd_replicate, cmd_simulate, Dataset, DatasetMeta,
    ModelKind, RunConfig,
};
use runoff::simulate::{
    rtfwd_cdf, sample_rtfwd, simulate_scenario, RtfwdParams, Scenario, ScenarioConfig,
};

fn alpha_dataset(seed: u64) -> Dataset {
    let config = ScenarioConfig::new(Scenario::Alpha);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let data = simulate_scenario(&config, &mut rng).unwrap();
    Dataset {
        records: data.observed,
        truth: data.withheld,
        schema: data.schema,
        meta: DatasetMeta {
            scenario: Some("alpha".into()),
            cutoff: data.cutoff,
            max_delay: data.cutoff,
            seed: Some(seed),
        },
    }
}

fn random_tied_grid(rng: &mut ChaCha12Rng) -> RiskGrid {
    let cutoff = rng.gen_range(8..=10u32);
    let n = rng.gen_range(10..=50usize);
    let records: Vec<ClaimRecord> = (0..n)
        .map(|i| {
            let u = rng.gen_range(1..=cutoff - 1);
            let d = rng.gen_range(0..=(cutoff - u).min(5));
            ClaimRecord {
                claim_id: i.to_string(),
                accident_day: u,
                delay_days: d,
                features: vec![],
            }
        })
        .collect();
    build_risk_grid(&records, 1, cutoff, cutoff).unwrap()
}

#[test]
fn criterion_01_derivatives_match_finite_differences() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(101);
    for instance in 0..50 {
        let grid = random_tied_grid(&mut rng);
        let ties = (0..grid.levels).any(|j| grid.occurrence_count(j) > 1);
        assert!(ties, "instance {instance} drew no ties");
        let scores = ScoreVector(
            (0..grid.n())
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect(),
        );
        let derivs = grad_and_hess(&grid, &scores).unwrap();
        let eval = |s: &ScoreVector| neg_log_partial_likelihood(&grid, s).unwrap();
        for i in 0..grid.n() {
            let h = 1e-5;
            let mut plus = scores.clone();
            plus.0[i] += h;
            let mut minus = scores.clone();
            minus.0[i] -= h;
            let fd_grad = (eval(&plus) - eval(&minus)) / (2.0 * h);
            assert!(
                (derivs.grad[i] - fd_grad).abs() / (1.0 + fd_grad.abs()) <= 1e-5,
                "instance {instance} claim {i}: grad {} vs fd {}",
                derivs.grad[i],
                fd_grad
            );
            let h2 = 2e-4;
            let mut plus2 = scores.clone();
            plus2.0[i] += h2;
            let mut minus2 = scores.clone();
            minus2.0[i] -= h2;
            let fd_hess =
                (eval(&plus2) - 2.0 * eval(&scores) + eval(&minus2)) / (h2 * h2);
            assert!(
                (derivs.hess[i] - fd_hess).abs() / (1.0 + fd_hess.abs()) <= 1e-5,
                "instance {instance} claim {i}: hess {} vs fd {}",
                derivs.hess[i],
                fd_hess
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 10, "took {elapsed:?}");
    println!("criterion 01 PASS: gradients and hessians match finite differences ({elapsed:?})");
}

#[test]
fn criterion_02_efron_loss_oracle() {
    // O = {0, 1}, R = {0, 1, 2}
    let grid = RiskGrid::from_parts(
        1,
        1,
        2,
        vec![Some((0, 0)); 3],
        vec![Some(0), Some(0), None],
    )
    .unwrap();
    let loss0 = neg_log_partial_likelihood(&grid, &ScoreVector::zeros(3)).unwrap();
    assert!((loss0 - (3.0_f64.ln() + 2.0_f64.ln())).abs() <= 1e-12);
    let loss1 =
        neg_log_partial_likelihood(&grid, &ScoreVector(vec![2.0_f64.ln(), 0.0, 0.0])).unwrap();
    assert!((loss1 - 5.0_f64.ln()).abs() <= 1e-12);
    println!("criterion 02 PASS: hand-enumerated Efron losses reproduce to 1e-12");
}

#[test]
fn criterion_03_chain_ladder_equivalence() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(303);
    let schema = Schema::new(&[
        ("id", ColumnRole::Id),
        ("accident_day", ColumnRole::AccidentDay),
        ("delay_day", ColumnRole::DelayDay),
    ]);
    for dataset_index in 0..20 {
        let cutoff = rng.gen_range(5..=11u32);
        let mut records = Vec::new();
        // row 0 observes every development column
        for j in 0..cutoff {
            records.push(ClaimRecord {
                claim_id: format!("base{j}"),
                accident_day: 1,
                delay_days: j,
                features: vec![],
            });
        }
        let n = rng.gen_range(50..=500 - cutoff as usize);
        for i in 0..n {
            let u = rng.gen_range(1..=cutoff);
            let d = rng.gen_range(0..=cutoff - u);
            records.push(ClaimRecord {
                claim_id: i.to_string(),
                accident_day: u,
                delay_days: d,
                features: vec![],
            });
        }
        let pre = PreprocessConfig {
            cutoff: Some(cutoff),
            ..Default::default()
        };
        let data = preprocess_features(&records, &schema, &pre).unwrap();
        let grid = build_risk_grid(&records, 1, cutoff, cutoff).unwrap();
        let scores = ScoreVector::zeros(records.len());
        let baseline = estimate_baseline(&grid, &scores, 0.5).unwrap();

        // hazard-route factors and fill
        let ladder = dev_factors_from_hazard(&baseline, 1.0, 0.5).unwrap();
        let predicted = runoff::triangle::predict_lower(
            &records,
            &data.encoding,
            &scores,
            &baseline,
            0.5,
            1,
        )
        .unwrap();

        // classical chain ladder on the aggregated triangle
        let observed = runoff::triangle::build_cells(&records, &data.encoding, 1).unwrap();
        let incremental = observed.aggregate_observed();
        let cl = cl_fit_predict(&incremental).unwrap();

        for j in 1..cutoff as usize {
            assert!(
                (ladder.factor(j) - cl.factors[j]).abs() <= 1e-10,
                "dataset {dataset_index}: factor {j}: {} vs {}",
                ladder.factor(j),
                cl.factors[j]
            );
        }
        let pred_dense = predicted.aggregate_predicted();
        for k in 0..cutoff as usize {
            for j in 0..cutoff as usize {
                if k + j > cutoff as usize - 1 {
                    assert!(
                        (pred_dense[k][j] - cl.predicted[k][j]).abs() <= 1e-10,
                        "dataset {dataset_index}: cell ({k},{j}): {} vs {}",
                        pred_dense[k][j],
                        cl.predicted[k][j]
                    );
                }
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 30, "took {elapsed:?}");
    println!("criterion 03 PASS: featureless pipeline equals classical chain ladder ({elapsed:?})");
}

#[test]
fn criterion_04_eta_identity() {
    let mut rng = ChaCha12Rng::seed_from_u64(404);
    for _ in 0..100 {
        let cols = rng.gen_range(3..12);
        let counts: Vec<f64> = (0..cols).map(|_| rng.gen_range(1..50) as f64).collect();
        let mut cums = Vec::with_capacity(cols);
        let mut acc = 0.0;
        for &o in &counts {
            acc += o;
            cums.push(acc);
        }
        for &eta in &[0.0, 0.25, 0.5, 0.75, 1.0] {
            for j in 1..cols {
                let age_to_age = cums[j] / cums[j - 1];
                // baseline form: z = O_j / (C_j - eta O_j), then the factor transform
                let z = counts[j] / (cums[j] - eta * counts[j]);
                let f = (1.0 + eta * z) / (1.0 - (1.0 - eta) * z);
                assert!(
                    (f - age_to_age).abs() <= 1e-12 * age_to_age,
                    "eta {eta}, column {j}: {f} vs {age_to_age}"
                );
            }
        }
    }
    println!("criterion 04 PASS: generalized factor formula is exact for eta in {{0,...,1}}");
}

#[test]
fn criterion_05_granularity_coherence() {
    let dataset = alpha_dataset(5);
    let config = RunConfig::default();
    let artifact = cmd_fit(&dataset, ModelKind::Cox, &config, 5).unwrap();
    let fine = cmd_predict(&artifact, &dataset, 1).unwrap().triangles;
    let mid = cmd_predict(&artifact, &dataset, 30).unwrap().triangles;
    let coarse = cmd_predict(&artifact, &dataset, 90).unwrap().triangles;

    let t1 = fine.predicted_total();
    let t30 = mid.predicted_total();
    let t90 = coarse.predicted_total();
    let tol = 1e-9 * (1.0 + t1.abs());
    assert!((t1 - t30).abs() <= tol, "totals {t1} vs {t30}");
    assert!((t1 - t90).abs() <= tol, "totals {t1} vs {t90}");

    // block-cell coherence: coarse cells equal calendar-block sums of fine cells
    for (coarse_set, g) in [(&mid, 30u32), (&coarse, 90u32)] {
        for (key, fine_pair) in &fine.cells {
            let mut blocks: BTreeMap<(u32, u32), f64> = BTreeMap::new();
            for (&(k, l), &v) in &fine_pair.predicted {
                let ck = k / g;
                let cj = (k + l) / g - ck;
                *blocks.entry((ck, cj)).or_insert(0.0) += v;
            }
            let coarse_pair = &coarse_set.cells[key];
            for (&cell, &v) in &coarse_pair.predicted {
                let b = blocks.get(&cell).copied().unwrap_or(0.0);
                assert!(
                    (v - b).abs() <= 1e-9 * (1.0 + v.abs()),
                    "granularity {g} cell {cell:?}: {v} vs block sum {b}"
                );
            }
            assert_eq!(blocks.len(), coarse_pair.predicted.len());
        }
    }
    println!(
        "criterion 05 PASS: predicted totals identical across granularities 1/30/90 ({t1:.4})"
    );
}

#[test]
fn criterion_06_sampler_fidelity() {
    let params = RtfwdParams::default();
    let median = sample_rtfwd(&params, 0.1, 1440.0, 0.5).unwrap();
    assert!((median - 10.45).abs() <= 0.5, "median {median}");

    let mut rng = ChaCha12Rng::seed_from_u64(606);
    let n = 100_000;
    let mut draws: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            sample_rtfwd(&params, 0.1, 1440.0, u).unwrap()
        })
        .collect();
    draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut ks: f64 = 0.0;
    for (i, &t) in draws.iter().enumerate() {
        let f = rtfwd_cdf(&params, 0.1, 1440.0, t);
        ks = ks
            .max((f - i as f64 / n as f64).abs())
            .max((f - (i + 1) as f64 / n as f64).abs());
    }
    assert!(ks <= 0.01, "Kolmogorov distance {ks}");
    println!("criterion 06 PASS: RTFWD sampler matches its closed form (KS {ks:.5}, median {median:.2})");
}

#[test]
fn criterion_07_cox_coefficient_recovery() {
    let start = std::time::Instant::now();
    let dataset = alpha_dataset(7);
    assert!(dataset.records.len() + dataset.truth.len() > 27_000);
    let config = RunConfig::default();
    let artifact = cmd_fit(&dataset, ModelKind::Cox, &config, 7).unwrap();
    let model = artifact.cox.as_ref().unwrap();
    let columns = &artifact.encoding.as_ref().unwrap().columns;
    let c1 = model
        .indicator_coefficient(columns, "claim_type", "1")
        .unwrap();
    let c0 = model
        .indicator_coefficient(columns, "claim_type", "0")
        .unwrap();
    let contrast = c1 - c0;
    assert!(
        (contrast - 0.80481).abs() <= 0.08,
        "claim_type contrast {contrast}"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 300, "took {elapsed:?}");
    println!(
        "criterion 07 PASS: claim_type log-hazard contrast {contrast:.4} within 0.80481 +/- 0.08 ({elapsed:?})"
    );
}

#[test]
fn criterion_08_likelihood_bands() {
    let start = std::time::Instant::now();
    let dataset = alpha_dataset(8);
    let config = RunConfig::default();

    let cox = cmd_fit(&dataset, ModelKind::Cox, &config, 8).unwrap();
    let gbm = cmd_fit(&dataset, ModelKind::Gbm, &config, 8).unwrap();
    let mlp = cmd_fit(&dataset, ModelKind::Mlp, &config, 8).unwrap();
    let cox_nll = cox.likelihood[0].in_sample;
    let gbm_nll = gbm.likelihood[0].in_sample;
    let mlp_nll = mlp.likelihood[0].in_sample;
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 900, "took {elapsed:?}");

    let mut failures = Vec::new();
    if (gbm_nll - 8.63).abs() <= 0.3 {
        println!("criterion 08 PASS (boosting band): in-sample nll/n {gbm_nll:.4} within 8.63 +/- 0.3");
    } else {
        failures.push(format!("boosting in-sample {gbm_nll:.4} outside 8.63 +/- 0.3"));
    }
    if gbm_nll <= mlp_nll && mlp_nll <= cox_nll {
        println!(
            "criterion 08 PASS (ordering): boosting {gbm_nll:.4} <= network {mlp_nll:.4} <= cox {cox_nll:.4}"
        );
    } else {
        failures.push(format!(
            "ordering violated: boosting {gbm_nll:.4}, network {mlp_nll:.4}, cox {cox_nll:.4}"
        ));
    }
    if (cox_nll - 9.24).abs() <= 0.3 {
        println!("criterion 08 PASS (cox band): in-sample nll/n {cox_nll:.4} within 9.24 +/- 0.3");
    } else {
        failures.push(format!(
            "cox in-sample {cox_nll:.4} outside 9.24 +/- 0.3 (a converged Efron fit \
             attains a lower loss than the pinned reference level; band kept as pinned)"
        ));
    }
    assert!(failures.is_empty(), "criterion 08 FAIL: {}", failures.join("; "));
}

#[test]
fn criterion_09_scenario_orderings() {
    let start = std::time::Instant::now();
    let config = RunConfig::default();
    let reps = 5;

    // (a) scenario Beta: hazard models beat the chain ladder on total error
    let beta = cmd_replicate(
        Scenario::Beta,
        &[ModelKind::Cl, ModelKind::Cox, ModelKind::Gbm],
        reps,
        &config,
        900,
        None,
    )
    .unwrap();
    let mean = |reports: &[runoff::pipeline::MetricsReport], model: &str, f: &dyn Fn(&runoff::pipeline::MetricsReport) -> f64| -> f64 {
        let vals: Vec<f64> = reports
            .iter()
            .filter(|r| r.model == model)
            .map(f)
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    let beta_cl = mean(&beta, "cl", &|r| r.r_tot);
    let beta_cox = mean(&beta, "cox", &|r| r.r_tot);
    let beta_gbm = mean(&beta, "gbm", &|r| r.r_tot);
    assert!(
        beta_cox < beta_cl && beta_gbm < beta_cl,
        "Beta R_tot: cox {beta_cox:.4}, gbm {beta_gbm:.4}, cl {beta_cl:.4}"
    );
    println!(
        "criterion 09a PASS: Beta mean R_tot cox {beta_cox:.4} and gbm {beta_gbm:.4} < cl {beta_cl:.4}"
    );

    // (b) scenario Alpha: chain-ladder cell-wise error in the reference band
    let alpha = cmd_replicate(Scenario::Alpha, &[ModelKind::Cl], reps, &config, 901, None).unwrap();
    let alpha_cl_cell = mean(&alpha, "cl", &|r| r.r_cellwise);
    assert!(
        (0.10..=0.17).contains(&alpha_cl_cell),
        "Alpha CL mean R_cellwise {alpha_cl_cell:.4}"
    );
    println!("criterion 09b PASS: Alpha chain-ladder mean R_cellwise {alpha_cl_cell:.4} in [0.10, 0.17]");

    // (c) scenario Delta: boosting beats Cox on CRPS
    let delta = cmd_replicate(
        Scenario::Delta,
        &[ModelKind::Cox, ModelKind::Gbm],
        reps,
        &config,
        902,
        None,
    )
    .unwrap();
    let delta_cox = mean(&delta, "cox", &|r| r.crps_average.unwrap());
    let delta_gbm = mean(&delta, "gbm", &|r| r.crps_average.unwrap());
    assert!(
        delta_gbm < delta_cox,
        "Delta CRPS: gbm {delta_gbm:.2} vs cox {delta_cox:.2}"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 7200, "took {elapsed:?}");
    println!(
        "criterion 09c PASS: Delta mean CRPS gbm {delta_gbm:.2} < cox {delta_cox:.2} ({elapsed:?} total)"
    );
}

#[test]
fn criterion_10_metric_inequalities() {
    let mut rng = ChaCha12Rng::seed_from_u64(1010);
    for case in 0..100 {
        let k = rng.gen_range(2..8usize);
        let j = k + rng.gen_range(0..3usize);
        let mut truth = vec![vec![0.0; j]; k];
        let mut pred = vec![vec![0.0; j]; k];
        for a in 0..k {
            for b in 0..j {
                if a + b > k - 1 {
                    truth[a][b] = rng.gen_range(1..200) as f64;
                    pred[a][b] = rng.gen_range(0..250) as f64;
                }
            }
        }
        let m = r_metrics_dense(&pred, &truth, k, j, CalendarPairing::Aligned).unwrap();
        assert!(m.r_tot <= m.r_cellwise + 1e-12, "case {case}: R_tot > R_cellwise");
        assert!(
            m.r_calwise <= m.r_cellwise + 1e-12,
            "case {case}: R_calwise > R_cellwise"
        );
    }
    println!("criterion 10 PASS: R_tot <= R_cellwise and R_calwise <= R_cellwise on 100 random tables");
}

#[test]
fn criterion_11_crps_oracle() {
    let s = crps_individual(&[0.0], &[1.0], 1).unwrap();
    assert!((s - 0.5).abs() <= 1e-12);
    let s = crps_individual(&[0.5], &[1.0], 1).unwrap();
    assert!((s - 0.25).abs() <= 1e-12);
    // three unit bins, event in bin 3, survival identically zero:
    // bins 1 and 2 contribute (1-0)^2 each, the own bin 1/2 (0 + 1)
    let s = crps_individual(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0], 3).unwrap();
    assert!((s - 2.5).abs() <= 1e-12);

    let mut best = (f64::INFINITY, -1.0);
    for i in 0..=10 {
        let sv = i as f64 / 10.0;
        let score = crps_individual(&[sv], &[1.0], 1).unwrap();
        if score < best.0 {
            best = (score, sv);
        }
    }
    assert_eq!(best.1, 0.5, "single-bin minimum at {}", best.1);
    println!("criterion 11 PASS: CRPS oracle values reproduce to 1e-12, minimum at S = 1/2");
}

#[test]
fn criterion_12_byte_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = RunConfig::default();
    // smaller portfolio keeps the double run quick; full pipeline shape
    let mut scenario = ScenarioConfig::new(Scenario::Alpha);
    scenario.rate_per_individual = 0.005;
    config.scenario = Some(scenario);
    config.gbm.subsample = 0.7; // exercise the seeded subsampler
    config.gbm.rounds = 40;

    let run = |dir: &Path| {
        let data_dir = dir.join("data");
        cmd_simulate(Scenario::Alpha, &config, 12, 0, &data_dir).unwrap();
        let dataset = runoff::pipeline::load_dataset(&data_dir).unwrap();
        let artifact = cmd_fit(&dataset, ModelKind::Gbm, &config, 12).unwrap();
        artifact.save(&dir.join("model.json")).unwrap();
        let prediction = cmd_predict(&artifact, &dataset, 90).unwrap();
        runoff::pipeline::write_triangles_csv(
            &dir.join("triangles.csv"),
            &prediction.triangles,
            &["claim_type".to_string()],
        )
        .unwrap();
        let report = cmd_evaluate(&artifact, &dataset, &config, 90, Some(0)).unwrap();
        runoff::pipeline::write_metrics(&dir.join("metrics.json"), &report).unwrap();
    };
    let dir_a = tmp.path().join("a");
    let dir_b = tmp.path().join("b");
    std::fs::create_dir_all(&dir_a).unwrap();
    std::fs::create_dir_all(&dir_b).unwrap();
    run(&dir_a);
    run(&dir_b);

    for file in [
        "data/claims.csv",
        "data/truth.csv",
        "data/schema.toml",
        "data/meta.toml",
        "model.json",
        "triangles.csv",
        "metrics.json",
    ] {
        let a = std::fs::read(dir_a.join(file)).unwrap();
        let b = std::fs::read(dir_b.join(file)).unwrap();
        assert_eq!(a, b, "artifact {file} differs between identical runs");
    }
    println!("criterion 12 PASS: simulate/fit/predict/evaluate artifacts are byte-identical across runs");
}
