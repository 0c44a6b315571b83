#![allow(dead_code)]

use std::sync::{Arc, OnceLock};

use chrono::{DateTime, TimeZone, Utc};
use crashcast_core::bundle::{train_bundle, ModelBundle};
use crashcast_core::dataset::Dataset;
use crashcast_core::ensemble::EnsembleConfig;
use crashcast_core::features::{fit_feature_context, FeatureConfig, WeatherTimeline};
use crashcast_core::model::CrashRecord;
use crashcast_core::pipeline::{generate_synthetic, SyntheticConfig};
use crashcast_service::clock::ManualClock;
use crashcast_service::config::ServiceConfig;
use crashcast_service::store::RecordStore;
use crashcast_service::weather::{FixtureWeather, WeatherSource};
use crashcast_service::Service;

pub struct Fixture {
    pub bundle: ModelBundle,
    pub records: Vec<CrashRecord>,
    pub timeline: WeatherTimeline,
}

/// A small model trained once per test binary.
pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let syn = generate_synthetic(&SyntheticConfig::with_size(8000, 11)).unwrap();
        let timeline = WeatherTimeline::new(syn.weather);
        let fs = fit_feature_context(&syn.records, &timeline, &FeatureConfig::default()).unwrap();
        let data = Dataset::from_feature_set(&fs);
        let mut cfg = EnsembleConfig::default();
        cfg.depthwise.n_estimators = 30;
        cfg.leafwise.n_estimators = 30;
        let (bundle, _) = train_bundle(&data, fs.context, &cfg).unwrap();
        Fixture { bundle, records: syn.records, timeline }
    })
}

pub fn start_time() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2023, 1, 17, 8, 5, 0).unwrap()
}

pub fn service_with(weather: Arc<dyn WeatherSource>, config: ServiceConfig) -> (Arc<Service>, Arc<ManualClock>) {
    let clock = Arc::new(ManualClock::new(start_time()));
    let s = Service::new(config, Some(fixture().bundle.clone()), RecordStore::in_memory(100_000), weather, clock.clone())
        .unwrap();
    (Arc::new(s), clock)
}

pub fn service() -> (Arc<Service>, Arc<ManualClock>) {
    service_with(Arc::new(FixtureWeather::new(fixture().timeline.clone())), ServiceConfig::default())
}
