use crashcast_core::bundle::{train_bundle, ModelBundle};
use crashcast_core::cell::cell_of;
use crashcast_core::dataset::Dataset;
use crashcast_core::ensemble::{ContextBucket, EnsembleConfig};
use crashcast_core::evaluation::{assign_folds, cross_validate_model, FoldMode, FoldSpec};
use crashcast_core::features::{fit_feature_context, FeatureConfig, WeatherTimeline};
use crashcast_core::pipeline::{
    fit_adaptive_thresholds, generate_synthetic, impute_records, ingest_csv, validate_batch, write_csv_file, GroupKey,
    MiceConfig, SyntheticConfig, ValidationConfig,
};
use crashcast_core::resampling::{parse_strategy, two_stage_balance};
use proptest::prelude::*;

fn quick_config() -> EnsembleConfig {
    let mut cfg = EnsembleConfig::default();
    cfg.depthwise.n_estimators = 8;
    cfg.leafwise.n_estimators = 8;
    cfg
}

#[test]
fn files_round_trip_through_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SyntheticConfig { missing_rate: 0.05, defect_rate: 0.03, ..SyntheticConfig::with_size(3000, 31) };
    let syn = generate_synthetic(&cfg).unwrap();
    let records_csv = dir.path().join("records.csv");
    let weather_csv = dir.path().join("weather.csv");
    write_csv_file(&records_csv, &syn.records).unwrap();
    WeatherTimeline::new(syn.weather).save(&weather_csv).unwrap();

    let ingest = ingest_csv(&records_csv).unwrap();
    assert!(ingest.errors.is_empty());
    assert_eq!(ingest.records, syn.records);
    let thresholds = fit_adaptive_thresholds(&ingest.records, 3.0, GroupKey::County).unwrap();
    let (valid, report) = validate_batch(&ingest.records, &thresholds, &ValidationConfig::default());
    assert!(report.retained_count < syn.records.len());
    let (filled, _) = impute_records(&valid, &MiceConfig::default()).unwrap();

    let timeline = WeatherTimeline::load(&weather_csv).unwrap();
    let fs = fit_feature_context(&filled, &timeline, &FeatureConfig::default()).unwrap();
    let data = Dataset::from_feature_set(&fs);
    let table = dir.path().join("features.csv");
    data.save(&table).unwrap();
    let reloaded = Dataset::load(&table).unwrap();
    assert_eq!(reloaded.rows, data.rows);
    assert_eq!(reloaded.labels, data.labels);
    assert!(reloaded.all_locations().is_some());

    let under = parse_strategy(r#"{"0": 1000}"#).unwrap();
    let over = parse_strategy(r#"{"2": 300, "3": 150}"#).unwrap();
    let (balanced, _, _) = two_stage_balance(&reloaded, &under, &over, 2).unwrap();
    assert_eq!(balanced.class_counts()[0], 1000);

    let (bundle, _) = train_bundle(&balanced, fs.context, &quick_config()).unwrap();
    let path = dir.path().join("bundle.json");
    bundle.save(&path).unwrap();
    let back = ModelBundle::load(&path).unwrap();
    for i in (0..data.len()).step_by(97) {
        let ctx = ContextBucket::from_features(&data.rows[i], data.weekend[i]);
        assert_eq!(
            bundle.ensemble.predict(&data.rows[i], ctx).unwrap().probabilities,
            back.ensemble.predict(&data.rows[i], ctx).unwrap().probabilities
        );
    }
}

#[test]
fn geographic_cv_holds_out_whole_cells() {
    let syn = generate_synthetic(&SyntheticConfig::with_size(2500, 32)).unwrap();
    let fs = fit_feature_context(&syn.records, &WeatherTimeline::new(syn.weather), &FeatureConfig::default()).unwrap();
    let data = Dataset::from_feature_set(&fs);
    let spec = FoldSpec { mode: FoldMode::Geographic, ..FoldSpec::default() };
    let folds = assign_folds(&data.labels, Some(&fs.locations), &spec, 4).unwrap();
    let mut owner = std::collections::HashMap::new();
    for (p, f) in fs.locations.iter().zip(&folds) {
        assert_eq!(*owner.entry(cell_of(*p, spec.geo_resolution)).or_insert(*f), *f);
    }

    let (bundle, _) = train_bundle(&data, fs.context, &quick_config()).unwrap();
    let report = cross_validate_model(&data, Some(&fs.locations), &spec, 4, &bundle.ensemble).unwrap();
    assert_eq!(report.fold_sizes.iter().sum::<usize>(), data.len());
    assert_eq!(report.confusion_matrix.total() as usize, data.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn random_folds_partition_rows(seed in 0u64..1000, k in 2usize..8) {
        let syn = generate_synthetic(&SyntheticConfig::with_size(1500, seed)).unwrap();
        let labels: Vec<_> = syn.records.iter().map(|r| r.severity.unwrap()).collect();
        let spec = FoldSpec { k, ..FoldSpec::default() };
        let folds = assign_folds(&labels, None, &spec, seed).unwrap();
        prop_assert_eq!(folds.len(), labels.len());
        prop_assert!(folds.iter().all(|f| *f < k));
        let mut sizes = vec![[0usize; 4]; k];
        for (f, l) in folds.iter().zip(&labels) {
            sizes[*f][l.index()] += 1;
        }
        for c in 0..4 {
            let per_fold: Vec<usize> = sizes.iter().map(|s| s[c]).collect();
            prop_assert!(per_fold.iter().max().unwrap() - per_fold.iter().min().unwrap() <= 1);
        }
    }
}
