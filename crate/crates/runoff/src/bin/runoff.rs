//! Thin command-line front door over the pipeline library.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use runoff::pipeline::{
    cmd_evaluate, cmd_fit, cmd_predict, cmd_replicate, cmd_simulate, cmd_tune, format_summary,
    load_dataset, summarize, write_factors_csv, write_metrics, write_survival_csv,
    write_triangles_csv, ModelArtifact, ModelKind, RunConfig,
};
use runoff::simulate::Scenario;
use runoff::tune::TuneTarget;

#[derive(Parser)]
#[command(name = "runoff", version, about = "IBNR claim-count forecasting from individual claims")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Shared {
    /// TOML run configuration (defaults are used when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every random choice in the command.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Simulate {
        #[command(flatten)]
        shared: Shared,
        /// alpha | beta | gamma | delta | epsilon | zeta
        #[arg(long)]
        scenario: String,
        /// Replication index (selects an independent stream).
        #[arg(long, default_value_t = 0)]
        replication: u64,
    },
    /// Fit one model on a dataset directory.
    Fit {
        #[command(flatten)]
        shared: Shared,
        /// cox | mlp | gbm | cl
        #[arg(long)]
        model: String,
        /// Dataset directory (claims.csv, schema.toml, meta.toml).
        #[arg(long)]
        data: PathBuf,
    },
    /// Forecast the lower triangle with a fitted model.
    Predict {
        #[command(flatten)]
        shared: Shared,
        /// Fitted model.json.
        #[arg(long)]
        model_file: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Reporting granularity in days (defaults to the run config's).
        #[arg(long)]
        granularity: Option<u32>,
    },
    /// Score a fitted model against the dataset's held-out truth.
    Evaluate {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        model_file: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        granularity: Option<u32>,
    },
    /// Simulate, fit, predict and evaluate across replications.
    Replicate {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        scenario: String,
        /// Comma-separated model tags, e.g. cl,cox,gbm.
        #[arg(long, default_value = "cl,cox,gbm")]
        models: String,
        #[arg(long, default_value_t = 5)]
        replications: u64,
    },
    /// Random hyperparameter search with cross-validation.
    Tune {
        #[command(flatten)]
        shared: Shared,
        /// mlp | gbm
        #[arg(long)]
        target: String,
        #[arg(long)]
        data: PathBuf,
    },
}

fn run() -> Result<(), Box<dyn std::error::Error>> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate {
            shared,
            scenario,
            replication,
        } => {
            let config = load_config(&shared)?;
            let scenario = Scenario::parse(&scenario)?;
            let meta = cmd_simulate(scenario, &config, shared.seed, replication, &shared.out)?;
            println!(
                "simulated scenario {} into {} (cut-off day {})",
                scenario.tag(),
                shared.out.display(),
                meta.cutoff
            );
        }
        Command::Fit {
            shared,
            model,
            data,
        } => {
            let config = load_config(&shared)?;
            let kind = ModelKind::parse(&model)?;
            let dataset = load_dataset(&data)?;
            let artifact = cmd_fit(&dataset, kind, &config, shared.seed)?;
            std::fs::create_dir_all(&shared.out)?;
            let path = shared.out.join("model.json");
            artifact.save(&path)?;
            for row in &artifact.likelihood {
                match row.out_of_sample {
                    Some(out) => println!(
                        "{}: in-sample nll/n {:.4}, out-of-sample {:.4}",
                        row.model, row.in_sample, out
                    ),
                    None => println!("{}: in-sample nll/n {:.4}", row.model, row.in_sample),
                }
            }
            println!("wrote {}", path.display());
        }
        Command::Predict {
            shared,
            model_file,
            data,
            granularity,
        } => {
            let config = load_config(&shared)?;
            let artifact = ModelArtifact::load(&model_file)?;
            let dataset = load_dataset(&data)?;
            let g = granularity.unwrap_or(config.report_granularity);
            let prediction = cmd_predict(&artifact, &dataset, g)?;
            std::fs::create_dir_all(&shared.out)?;
            let names = artifact
                .encoding
                .as_ref()
                .map(|e| e.feature_names())
                .unwrap_or_default();
            write_triangles_csv(&shared.out.join("triangles.csv"), &prediction.triangles, &names)?;
            if let Some(re) = &prediction.regrained {
                write_factors_csv(&shared.out.join("factors.csv"), re, artifact.eta, &names)?;
                write_survival_csv(&shared.out.join("survival.csv"), re, &names)?;
                // marginal effect of the feature combinations on one factor
                let k = re.k_periods.saturating_sub(1);
                let j = 2.min(re.j_periods.saturating_sub(1));
                runoff::pipeline::write_sensitivity_csv(
                    &shared.out.join("sensitivity.csv"),
                    &artifact,
                    &dataset,
                    g,
                    k,
                    j,
                )?;
            }
            println!(
                "predicted IBNR total {:.2} at granularity {} days",
                prediction.triangles.predicted_total(),
                g
            );
        }
        Command::Evaluate {
            shared,
            model_file,
            data,
            granularity,
        } => {
            let config = load_config(&shared)?;
            let artifact = ModelArtifact::load(&model_file)?;
            let dataset = load_dataset(&data)?;
            let g = granularity.unwrap_or(config.report_granularity);
            let report = cmd_evaluate(&artifact, &dataset, &config, g, None)?;
            write_metrics(&shared.out.join("metrics.json"), &report)?;
            println!(
                "{}: R_tot {:.4}, R_cellwise {:.4}, R_calwise {:.4}{}",
                report.model,
                report.r_tot,
                report.r_cellwise,
                report.r_calwise,
                report
                    .crps_average
                    .map(|c| format!(", CRPS {c:.2}"))
                    .unwrap_or_default()
            );
        }
        Command::Replicate {
            shared,
            scenario,
            models,
            replications,
        } => {
            let config = load_config(&shared)?;
            let scenario = Scenario::parse(&scenario)?;
            let kinds: Result<Vec<ModelKind>, _> =
                models.split(',').map(|m| ModelKind::parse(m.trim())).collect();
            let reports = cmd_replicate(
                scenario,
                &kinds?,
                replications,
                &config,
                shared.seed,
                Some(&shared.out),
            )?;
            print!("{}", format_summary(&summarize(&reports)));
        }
        Command::Tune {
            shared,
            target,
            data,
        } => {
            let config = load_config(&shared)?;
            let target = match target.to_ascii_lowercase().as_str() {
                "mlp" | "nn" => TuneTarget::Mlp,
                "gbm" | "xgb" => TuneTarget::Gbm,
                other => return Err(format!("unknown tune target `{other}`").into()),
            };
            let dataset = load_dataset(&data)?;
            let outcome = cmd_tune(&dataset, target, &config, shared.seed, Some(&shared.out))?;
            println!(
                "best trial {} with held-out nll/n {:.4}",
                outcome.best_index, outcome.best_score
            );
        }
    }
    Ok(())
}

fn load_config(shared: &Shared) -> Result<RunConfig, Box<dyn std::error::Error>> {
    Ok(match &shared.config {
        Some(path) => RunConfig::from_toml_file(path)?,
        None => RunConfig::default(),
    })
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
