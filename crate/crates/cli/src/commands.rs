use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, Utc};
use crashcast_core::bundle::{train_bundle, ModelBundle};
use crashcast_core::dataset::Dataset;
use crashcast_core::ensemble::{EnsembleConfig, EnsembleModel, Variant};
use crashcast_core::evaluation::{cross_validate_model, FoldMode, FoldSpec};
use crashcast_core::features::{fit_feature_context, FeatureConfig, FeatureSet, WeatherTimeline};
use crashcast_core::hyperopt::{tune_booster, SearchSpace};
use crashcast_core::model::CrashRecord;
use crashcast_core::pipeline::{
    exclude_high_missingness, fit_adaptive_thresholds, generate_synthetic, impute_records, ingest_csv,
    masked_imputation_eval, validate_batch, write_csv_file, GroupKey, MiceConfig, RejectReason, SyntheticConfig,
    ValidationConfig,
};
use crashcast_core::resampling::{parse_strategy, two_stage_balance, SamplingStrategy};
use crashcast_service::api::start;
use crashcast_service::clock::SystemClock;
use crashcast_service::config::ServiceConfig;
use crashcast_service::loadtest::{run_load_test, LoadProfile};
use crashcast_service::store::{export_sql as sql_text, RecordStore};
use crashcast_service::weather::FixtureWeather;
use crashcast_service::Service;
use serde_json::Value;

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn read_records(path: &Path) -> Result<Vec<CrashRecord>> {
    let ingest = ingest_csv(path).with_context(|| format!("reading {}", path.display()))?;
    if !ingest.errors.is_empty() {
        eprintln!("{}: skipped {} unparseable rows (first: line {})", path.display(), ingest.errors.len(), ingest.errors[0].line);
    }
    Ok(ingest.records)
}

/// Inline JSON when it looks like an object, else a file holding it.
fn strategy(arg: &str) -> Result<SamplingStrategy> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        std::fs::read_to_string(arg).with_context(|| format!("reading {arg}"))?
    };
    Ok(parse_strategy(&text)?)
}

pub fn generate(
    n: usize,
    seed: u64,
    out: &Path,
    weather: Option<PathBuf>,
    missing_rate: f64,
    defect_rate: f64,
) -> Result<()> {
    let syn = generate_synthetic(&SyntheticConfig { missing_rate, defect_rate, ..SyntheticConfig::with_size(n, seed) })?;
    write_csv_file(out, &syn.records)?;
    let weather = weather.unwrap_or_else(|| out.with_extension("weather.csv"));
    WeatherTimeline::new(syn.weather).save(&weather)?;
    eprintln!("wrote {} records to {} and weather to {}", syn.records.len(), out.display(), weather.display());
    Ok(())
}

pub fn validate(input: &Path, report: &Path, out: Option<&Path>, k: f64, max_missing: f64) -> Result<()> {
    let records = read_records(input)?;
    let (kept, dropped) = exclude_high_missingness(&records, max_missing);
    let thresholds = fit_adaptive_thresholds(&kept, k, GroupKey::County)?;
    let (retained, mut r) = validate_batch(&kept, &thresholds, &ValidationConfig::default());
    if !dropped.is_empty() {
        *r.rejection_reasons.entry(RejectReason::MissingCritical).or_default() += dropped.len();
    }
    r.input_count = records.len();
    r.retention_rate = if records.is_empty() { 1.0 } else { r.retained_count as f64 / records.len() as f64 };
    write_json(report, &r)?;
    if let Some(out) = out {
        write_csv_file(out, &retained)?;
    }
    eprintln!("retained {} of {} records", r.retained_count, r.input_count);
    Ok(())
}

pub fn impute(input: &Path, out: &Path, eval_mask: f64, seed: u64, report: Option<&Path>) -> Result<()> {
    let records = read_records(input)?;
    let cfg = MiceConfig::default();
    let eval = masked_imputation_eval(&records, eval_mask, seed, &cfg)?;
    let (filled, model) = impute_records(&records, &cfg)?;
    write_csv_file(out, &filled)?;
    match report {
        Some(p) => write_json(p, &eval)?,
        None => print_json(&eval)?,
    }
    eprintln!("imputed {} records in {} iterations (converged: {})", filled.len(), model.iteration_count, model.converged);
    Ok(())
}

fn feature_set(input: &Path, weather: &Path, serving_resolution: u8) -> Result<FeatureSet> {
    let records = read_records(input)?;
    let timeline = WeatherTimeline::load(weather)?;
    let cfg = FeatureConfig { serving_resolution, ..FeatureConfig::default() };
    Ok(fit_feature_context(&records, &timeline, &cfg)?)
}

pub fn features(input: &Path, weather: &Path, out: &Path, serving_resolution: u8) -> Result<()> {
    let set = feature_set(input, weather, serving_resolution)?;
    let data = Dataset::from_feature_set(&set);
    data.save(out)?;
    eprintln!("wrote {} rows x {} features to {}", data.len(), data.n_features(), out.display());
    Ok(())
}

pub fn resample(input: &Path, under: &str, over: &str, seed: u64, out: &Path, report: &Path) -> Result<()> {
    let data = Dataset::load(input)?;
    let (balanced, r, _) = two_stage_balance(&data, &strategy(under)?, &strategy(over)?, seed)?;
    balanced.save(out)?;
    write_json(report, &r)?;
    eprintln!("{} rows -> {} rows", data.len(), balanced.len());
    Ok(())
}

pub struct Balance {
    pub under: Option<String>,
    pub over: Option<String>,
}

pub fn train(
    input: &Path,
    weather: &Path,
    out: &Path,
    balance: Balance,
    trees: Option<usize>,
    serving_resolution: u8,
    seed: u64,
) -> Result<()> {
    let set = feature_set(input, weather, serving_resolution)?;
    let mut data = Dataset::from_feature_set(&set);
    if balance.under.is_some() || balance.over.is_some() {
        let under = balance.under.as_deref().map(strategy).transpose()?.unwrap_or_default();
        let over = balance.over.as_deref().map(strategy).transpose()?.unwrap_or_default();
        data = two_stage_balance(&data, &under, &over, seed)?.0;
    }
    let mut cfg = EnsembleConfig { seed, ..EnsembleConfig::default() };
    if let Some(t) = trees {
        cfg.depthwise.n_estimators = t;
        cfg.leafwise.n_estimators = t;
    }
    let (bundle, report) = train_bundle(&data, set.context, &cfg)?;
    bundle.save(out)?;
    eprintln!(
        "trained on {} rows; held-out accuracy {:?}; {} active cells",
        report.fit_rows,
        report.meta_accuracy,
        bundle.feature_context.active_cells().count()
    );
    Ok(())
}

pub fn tune(variant: Variant, budget: usize, seed: u64, train: &Path, out: &Path, history: &Path) -> Result<()> {
    let data = Dataset::load(train)?;
    let study = tune_booster(&data, variant, &SearchSpace::default(), budget, seed)?;
    EnsembleModel::single(data.feature_names.clone(), study.best_artifact).save(out)?;
    write_json(history, &study.history)?;
    eprintln!(
        "best trial {} scalar {:.4}; Pareto front of {}",
        study.best.trial,
        study.best.scalar,
        study.front.len()
    );
    Ok(())
}

/// A serving bundle or a bare model file.
fn load_model(path: &Path) -> Result<EnsembleModel> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: Value = serde_json::from_str(&text)?;
    if v.get("ensemble").is_some() {
        Ok(ModelBundle::from_json(&text)?.ensemble)
    } else {
        Ok(EnsembleModel::from_json(&text)?)
    }
}

pub fn evaluate(model: &Path, data: &Path, folds: usize, mode: FoldMode, seed: u64, report: &Path) -> Result<()> {
    let model = load_model(model)?;
    let data = Dataset::load(data)?;
    let locations = data.all_locations();
    if mode == FoldMode::Geographic && locations.is_none() {
        bail!("geographic folds need lat/lon on every row of the data file");
    }
    let spec = FoldSpec { k: folds, mode, ..FoldSpec::default() };
    let r = cross_validate_model(&data, locations.as_deref(), &spec, seed, &model)?;
    write_json(report, &r)?;
    eprintln!(
        "accuracy {:.4} ± {:.4}, macro F1 {:.4} ± {:.4}",
        r.mean.accuracy, r.std.accuracy, r.mean.f1, r.std.f1
    );
    Ok(())
}

pub fn serve(model: &Path, store: &Path, weather: &Path, host: &str, port: u16, config: Option<&Path>) -> Result<()> {
    let config = match config {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    };
    let bundle = ModelBundle::load(model)?;
    let store = RecordStore::open(store, config.store_max_records)?.with_resolution(config.store_resolution);
    let weather = FixtureWeather::new(WeatherTimeline::load(weather)?);
    let service = Arc::new(Service::new(config, Some(bundle), store, Arc::new(weather), Arc::new(SystemClock))?);
    let entries = service.refresh()?;
    eprintln!("primary cache holds {entries} cells");
    let addr: SocketAddr = format!("{host}:{port}").parse().with_context(|| format!("address {host}:{port}"))?;
    tokio::runtime::Runtime::new()?.block_on(async move {
        let (local, handle) = start(service, addr, Duration::from_secs(5)).await?;
        eprintln!("listening on http://{local}");
        handle.await?;
        Ok(())
    })
}

pub fn loadtest(
    url: String,
    concurrency: usize,
    duration: f64,
    zipf: f64,
    seed: u64,
    at: Option<DateTime<Utc>>,
    report: Option<&Path>,
) -> Result<()> {
    if !(duration > 0.0) {
        bail!("duration must be positive");
    }
    let mut profile = LoadProfile::new(url, concurrency, Duration::from_secs_f64(duration), zipf);
    profile.seed = seed;
    profile.at = at;
    let r = tokio::runtime::Runtime::new()?.block_on(run_load_test(&profile))?;
    match report {
        Some(p) => write_json(p, &r)?,
        None => print_json(&r)?,
    }
    Ok(())
}

pub fn export_sql(store: Option<&Path>, input: Option<&Path>, out: &Path) -> Result<()> {
    let records = match (store, input) {
        (Some(dir), None) => RecordStore::open(dir, usize::MAX)?.records().to_vec(),
        (None, Some(csv)) => read_records(csv)?,
        _ => bail!("give exactly one of --store and --in"),
    };
    std::fs::write(out, sql_text(&records)).with_context(|| format!("writing {}", out.display()))?;
    eprintln!("wrote {} inserts to {}", records.len(), out.display());
    Ok(())
}
