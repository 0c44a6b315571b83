mod common;

use std::sync::Arc;

use chrono::Duration;
use common::{fixture, service, service_with, start_time};
use crashcast_core::model::{BoundingBox, WeatherCategory, WeatherSnapshot};
use crashcast_service::clock::{time_bucket, Clock};
use crashcast_service::config::ServiceConfig;
use crashcast_service::metrics::CacheTier;
use crashcast_service::service::{anchor, rank_hotspots, LatLon, PredictionRequest, WeatherOverride};
use crashcast_service::weather::WeatherSource;
use crashcast_service::ServiceError;

fn request(lat: f64, lon: f64) -> PredictionRequest {
    PredictionRequest { location: LatLon { lat, lon }, at: None, weather_override: None, flags_override: None, bypass_cache: false }
}

fn active_center(s: &crashcast_service::Service, i: usize) -> LatLon {
    let cells = s.predictor().unwrap().active_cells();
    anchor(&cells[i % cells.len()].bounds(), &s.config().region()).unwrap()
}

#[test]
fn refresh_covers_every_active_cell() {
    let (s, _) = service();
    let n = s.refresh().unwrap();
    assert_eq!(n, fixture().bundle.feature_context.active_cells().count());
    assert_eq!(s.generation().entries.len(), n);
    assert!(!s.refresh_due());
    let status = s.refresh_status();
    assert_eq!(status.generation, 1);
    assert!(!status.stale);
}

#[test]
fn tiers_progress_from_miss_to_secondary_and_primary() {
    let (s, _) = service();
    let LatLon { lat, lon } = active_center(&s, 3);
    // Before any refresh every answer is computed or served from the LRU.
    let off_grid = request(lat + 0.0003, lon + 0.0003);
    let first = s.predict(&off_grid).unwrap();
    assert_eq!(first.cache_tier, CacheTier::Miss);
    let second = s.predict(&off_grid).unwrap();
    assert_eq!(second.cache_tier, CacheTier::Secondary);
    assert_eq!(first.core, second.core);

    s.refresh().unwrap();
    let third = s.predict(&request(lat, lon)).unwrap();
    assert_eq!(third.cache_tier, CacheTier::Primary);
}

#[test]
fn cached_and_fresh_answers_agree() {
    let (s, _) = service();
    s.refresh().unwrap();
    for i in 0..40 {
        let mut req = request(active_center(&s, i * 7).lat, active_center(&s, i * 7).lon);
        let cached = s.predict(&req).unwrap();
        req.bypass_cache = true;
        let fresh = s.predict(&req).unwrap();
        assert_eq!(fresh.cache_tier, CacheTier::Miss);
        assert!((cached.core.risk_score - fresh.core.risk_score).abs() <= 1e-12);
        assert_eq!(cached.core, fresh.core);
    }
}

#[test]
fn responses_are_deterministic_across_services() {
    let (a, _) = service();
    let (b, _) = service();
    a.refresh().unwrap();
    b.refresh().unwrap();
    for i in 0..20 {
        let req = request(active_center(&a, i).lat, active_center(&a, i).lon);
        let (ra, rb) = (a.predict(&req).unwrap(), b.predict(&req).unwrap());
        assert_eq!(serde_json::to_string(&ra.core).unwrap(), serde_json::to_string(&rb.core).unwrap());
    }
}

#[test]
fn weather_override_changes_the_weather_feature() {
    let (s, _) = service();
    let c = active_center(&s, 0);
    let mut req = request(c.lat, c.lon);
    req.weather_override = Some(WeatherOverride {
        category: WeatherCategory::CLEAR,
        temperature_c: None,
        precipitation_mm_hr: None,
        visibility_km: None,
        wind_kmh: None,
    });
    let clear = s.predict(&req).unwrap();
    req.weather_override.as_mut().unwrap().category = WeatherCategory::SNOW;
    let snow = s.predict(&req).unwrap();
    assert!((clear.core.weather_risk - 0.2).abs() < 1e-12);
    assert!((snow.core.weather_risk - 0.8).abs() < 1e-12);
    assert_eq!(snow.core.weather_category, WeatherCategory::SNOW);
    // What-if answers never come from the primary cache.
    assert_ne!(snow.cache_tier, CacheTier::Primary);
}

#[test]
fn out_of_region_and_model_errors() {
    let (s, _) = service();
    assert!(matches!(s.predict(&request(25.0, -80.0)), Err(ServiceError::OutOfRegion(_))));
    assert!(matches!(s.predict(&request(95.0, -80.0)), Err(ServiceError::OutOfRegion(_))));
    let empty = crashcast_service::Service::new(
        ServiceConfig::default(),
        None,
        crashcast_service::store::RecordStore::in_memory(10),
        Arc::new(crashcast_service::weather::FixtureWeather::new(fixture().timeline.clone())),
        Arc::new(crashcast_service::clock::ManualClock::new(start_time())),
    )
    .unwrap();
    assert!(matches!(empty.predict(&request(40.4, -79.9)), Err(ServiceError::ModelNotLoaded)));
    assert_eq!(s.metrics().counters.errors, 2);
}

struct Flaky {
    inner: crashcast_service::weather::FixtureWeather,
    fail: std::sync::atomic::AtomicBool,
}

impl WeatherSource for Flaky {
    fn current(&self, at: chrono::DateTime<chrono::Utc>) -> Result<WeatherSnapshot, ServiceError> {
        if self.fail.load(std::sync::atomic::Ordering::SeqCst) {
            Err(ServiceError::WeatherUnavailable("provider down".into()))
        } else {
            self.inner.current(at)
        }
    }
}

#[test]
fn weather_failure_keeps_previous_generation() {
    let flaky = Arc::new(Flaky {
        inner: crashcast_service::weather::FixtureWeather::new(fixture().timeline.clone()),
        fail: false.into(),
    });
    let (s, clock) = service_with(flaky.clone(), ServiceConfig::default());
    let n = s.refresh().unwrap();
    flaky.fail.store(true, std::sync::atomic::Ordering::SeqCst);
    clock.advance(Duration::minutes(15));
    assert!(s.refresh_due());
    assert!(matches!(s.refresh(), Err(ServiceError::WeatherUnavailable(_))));
    let status = s.refresh_status();
    assert!(status.stale);
    assert!(status.last_error.is_some());
    assert_eq!(status.generation, 1);
    assert_eq!(s.generation().entries.len(), n);
    flaky.fail.store(false, std::sync::atomic::Ordering::SeqCst);
    s.refresh().unwrap();
    assert!(!s.refresh_status().stale);
    assert_eq!(s.refresh_status().generation, 2);
}

#[test]
fn refresh_follows_the_clock() {
    let (s, clock) = service();
    assert_eq!(s.refresh_if_due().unwrap().is_some(), true);
    assert_eq!(s.refresh_if_due().unwrap(), None);
    clock.advance(Duration::minutes(10));
    assert!(s.refresh_if_due().unwrap().is_some(), "bucket boundary crossed");
    assert_eq!(s.generation().bucket, time_bucket(clock.now()));
    // A stale bucket is not served from the primary cache.
    let c = active_center(&s, 1);
    let mut req = request(c.lat, c.lon);
    req.at = Some(clock.now() - Duration::hours(2));
    assert_ne!(s.predict(&req).unwrap().cache_tier, CacheTier::Primary);
}

#[test]
fn hotspots_match_full_scan() {
    let (s, _) = service();
    s.refresh().unwrap();
    let bbox = BoundingBox::new(39.8, -80.3, 40.9, -79.0).unwrap();
    let got = s.hotspots(&bbox, None, None).unwrap();
    let predictor = s.predictor().unwrap();
    let mut oracle = Vec::new();
    for cell in predictor.active_cells() {
        let b = cell.bounds();
        if b.max_lat < bbox.min_lat || b.min_lat > bbox.max_lat || b.max_lon < bbox.min_lon || b.min_lon > bbox.max_lon {
            continue;
        }
        let Some(c) = anchor(&b, &s.config().region()) else { continue };
        let mut req = request(c.lat, c.lon);
        req.bypass_cache = true;
        oracle.push((cell, s.predict(&req).unwrap().core.risk_score));
    }
    oracle.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    assert_eq!(got.hotspots.len(), oracle.len());
    for (h, (cell, risk)) in got.hotspots.iter().zip(&oracle) {
        assert_eq!(h.cell, *cell);
        assert!((h.risk_score - risk).abs() < 1e-12);
    }
    let mut resorted = got.hotspots.clone();
    rank_hotspots(&mut resorted);
    assert_eq!(resorted, got.hotspots);

    let top = s.hotspots(&bbox, None, Some(1)).unwrap();
    assert_eq!(top.hotspots.len(), 1.min(oracle.len()));
    let nowhere = BoundingBox::new(39.5, -74.7, 39.51, -74.6).unwrap();
    assert!(s.hotspots(&nowhere, None, None).unwrap().hotspots.is_empty());
}

#[test]
fn metrics_start_at_zero_and_add_up() {
    let (s, _) = service();
    let m = s.metrics();
    assert_eq!(m.counters.requests_total, 0);
    assert_eq!(m.counters.tiers.total(), 0);
    assert_eq!(m.counters.hit_rate, 0.0);
    s.refresh().unwrap();
    let mut last = 0;
    for i in 0..50 {
        let c = active_center(&s, i % 9);
        s.predict(&request(c.lat + 0.0001 * (i % 3) as f64, c.lon)).unwrap();
        let m = s.metrics();
        assert!(m.counters.requests_total > last);
        last = m.counters.requests_total;
        assert_eq!(m.counters.tiers.total(), m.counters.requests_total);
    }
    let m = s.metrics();
    let lat = m.counters.latency_ms;
    assert!(lat.p50 <= lat.p95 && lat.p95 <= lat.p99);
    assert!(m.counters.hit_rate > 0.0 && m.counters.hit_rate <= 1.0);
}

#[test]
fn inserted_records_are_queryable_and_feed_drift() {
    let (s, _) = service();
    let batch: Vec<_> = fixture().records.iter().take(300).cloned().enumerate().map(|(i, r)| (i as u64 + 1, r)).collect();
    let report = s.insert_records(batch.clone()).unwrap();
    assert_eq!(report.inserted + report.rejected.len(), batch.len());
    let all = s.query_records(&BoundingBox::PENNSYLVANIA, None, None, None);
    assert_eq!(all.len(), report.inserted);
    assert_eq!(s.query_records(&BoundingBox::PENNSYLVANIA, None, None, Some(5)).len(), 5.min(report.inserted));
    let m = s.metrics();
    assert_eq!(m.stored_records, report.inserted);
    assert_eq!(m.counters.crashes_inserted, report.inserted as u64);
    assert!(m.drift.updates > 0);
}

#[test]
fn secondary_cache_reaches_hit_rate_under_zipf() {
    use rand_distr::{Distribution, Zipf};
    let mut cfg = ServiceConfig::default();
    cfg.secondary_capacity = 500;
    let cache = crashcast_service::cache::SecondaryCache::<u64, u64>::new(crashcast_service::cache::LruConfig {
        capacity: cfg.secondary_capacity,
        pin_confidence: cfg.pin_confidence,
        pin_fraction_max: cfg.pin_fraction_max,
    });
    let zipf = Zipf::new(1000.0, 1.1).unwrap();
    let mut rng = crashcast_core::rng::seeded(3);
    let (mut hits, n) = (0, 200_000);
    for _ in 0..n {
        let k = zipf.sample(&mut rng) as u64;
        if cache.get(&k).is_some() {
            hits += 1;
        } else {
            cache.insert(k, k, 0.5);
        }
    }
    let rate = hits as f64 / n as f64;
    assert!(rate >= 0.87, "hit rate {rate}");
}
