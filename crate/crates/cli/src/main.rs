//! `crashcast`: data generation, preparation, training, evaluation and serving.

mod commands;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use crashcast_core::ensemble::Variant;
use crashcast_core::evaluation::FoldMode;

#[derive(Debug, Parser)]
#[command(name = "crashcast", version, about = "Crash severity risk modelling and serving")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic crash dataset and its hourly weather timeline.
    Generate {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Weather timeline CSV; defaults to `<out>.weather.csv`.
        #[arg(long)]
        weather: Option<PathBuf>,
        /// Share of optional cells left blank.
        #[arg(long, default_value_t = 0.0)]
        missing_rate: f64,
        /// Share of records given a validation defect.
        #[arg(long, default_value_t = 0.0)]
        defect_rate: f64,
    },
    /// Drop high-missingness and out-of-control records and report why.
    Validate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Retained records.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Control-limit width in standard deviations.
        #[arg(long, default_value_t = 3.0)]
        k: f64,
        /// Maximum share of missing critical fields.
        #[arg(long, default_value_t = 0.3)]
        max_missing: f64,
    },
    /// Fill missing flags and codes; score imputation on hidden observed cells.
    Impute {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Share of observed cells hidden for the quality report.
        #[arg(long)]
        eval_mask: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Masked-evaluation report; printed when absent.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Turn records into a feature table.
    Features {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        weather: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 11)]
        serving_resolution: u8,
    },
    /// Under-sample and SMOTE a feature table to per-class targets.
    Resample {
        #[arg(long = "in")]
        input: PathBuf,
        /// Targets as inline JSON (`{"0": 15000}`) or a file.
        #[arg(long)]
        under: String,
        #[arg(long)]
        over: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Fit the two-booster ensemble and write a serving bundle.
    Train {
        /// Records CSV.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        weather: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Under-sampling targets applied before fitting.
        #[arg(long)]
        under: Option<String>,
        /// SMOTE targets applied before fitting.
        #[arg(long)]
        over: Option<String>,
        /// Overrides the presets' number of boosting rounds.
        #[arg(long)]
        trees: Option<usize>,
        #[arg(long, default_value_t = 11)]
        serving_resolution: u8,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Random-search booster hyperparameters under the scalarised objective.
    Tune {
        #[arg(long)]
        variant: Variant,
        #[arg(long)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Feature table.
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        history: PathBuf,
    },
    /// K-fold cross-validation of a model's training recipe.
    Evaluate {
        /// Model file or serving bundle.
        #[arg(long)]
        model: PathBuf,
        /// Feature table; geographic mode needs its lat/lon columns.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value = "random")]
        mode: FoldMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run the HTTP prediction service.
    Serve {
        #[arg(long)]
        model: PathBuf,
        /// Record log directory.
        #[arg(long)]
        store: PathBuf,
        /// Weather fixture CSV.
        #[arg(long)]
        weather: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Service TOML configuration.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Closed-loop load test against a running service.
    Loadtest {
        #[arg(long)]
        url: String,
        #[arg(long, default_value_t = 256)]
        concurrency: usize,
        /// Seconds.
        #[arg(long, default_value_t = 30.0)]
        duration: f64,
        #[arg(long, default_value_t = 1.1)]
        zipf: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Request timestamp (RFC 3339); the server's clock when absent.
        #[arg(long)]
        at: Option<chrono::DateTime<chrono::Utc>>,
        /// Latency report; printed when absent.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write stored records as PostGIS SQL.
    ExportSql {
        /// Record log directory.
        #[arg(long)]
        store: Option<PathBuf>,
        /// Records CSV, instead of a store.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Generate { n, seed, out, weather, missing_rate, defect_rate } => {
            commands::generate(n, seed, &out, weather, missing_rate, defect_rate)
        }
        Command::Validate { input, report, out, k, max_missing } => {
            commands::validate(&input, &report, out.as_deref(), k, max_missing)
        }
        Command::Impute { input, out, eval_mask, seed, report } => {
            commands::impute(&input, &out, eval_mask, seed, report.as_deref())
        }
        Command::Features { input, weather, out, serving_resolution } => {
            commands::features(&input, &weather, &out, serving_resolution)
        }
        Command::Resample { input, under, over, seed, out, report } => {
            commands::resample(&input, &under, &over, seed, &out, &report)
        }
        Command::Train { input, weather, out, under, over, trees, serving_resolution, seed } => commands::train(
            &input,
            &weather,
            &out,
            commands::Balance { under, over },
            trees,
            serving_resolution,
            seed,
        ),
        Command::Tune { variant, budget, seed, train, out, history } => {
            commands::tune(variant, budget, seed, &train, &out, &history)
        }
        Command::Evaluate { model, data, folds, mode, seed, report } => {
            commands::evaluate(&model, &data, folds, mode, seed, &report)
        }
        Command::Serve { model, store, weather, port, host, config } => {
            commands::serve(&model, &store, &weather, &host, port, config.as_deref())
        }
        Command::Loadtest { url, concurrency, duration, zipf, seed, at, report } => {
            commands::loadtest(url, concurrency, duration, zipf, seed, at, report.as_deref())
        }
        Command::ExportSql { store, input, out } => commands::export_sql(store.as_deref(), input.as_deref(), &out),
    }
}
