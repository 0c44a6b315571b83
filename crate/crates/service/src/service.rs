use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use chrono::{DateTime, Duration, Utc};
use crashcast_core::bundle::ModelBundle;
use crashcast_core::cell::CellId;
use crashcast_core::evaluation::{DriftMonitor, DriftSnapshot};
use crashcast_core::model::{BoundingBox, CrashRecord, Flag, GeoPoint, WeatherCategory, WeatherSnapshot};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::cache::{CacheKey, Generation, LruConfig, PrimaryCache, SecondaryCache};
use crate::clock::{bucket_start, time_bucket, Clock};
use crate::config::ServiceConfig;
use crate::metrics::{CacheTier, Counters, Metrics};
use crate::predictor::{scenario_hash, PredictionCore, Predictor, Scenario};
use crate::recommend::{RecommendationTable, RiskTier};
use crate::store::{check_record, RecordStore};
use crate::weather::WeatherSource;
use crate::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

/// Partial weather for what-if requests; missing measurements take the
/// category's typical values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherOverride {
    pub category: WeatherCategory,
    pub temperature_c: Option<f64>,
    pub precipitation_mm_hr: Option<f64>,
    pub visibility_km: Option<f64>,
    pub wind_kmh: Option<f64>,
}

impl WeatherOverride {
    pub fn snapshot(&self, at: DateTime<Utc>) -> Result<WeatherSnapshot, ServiceError> {
        let t = WeatherSnapshot::typical(self.category, at);
        WeatherSnapshot::new(
            self.category,
            self.temperature_c.unwrap_or(t.temperature_c),
            self.precipitation_mm_hr.unwrap_or(t.precipitation_mm_hr),
            self.visibility_km.unwrap_or(t.visibility_km),
            self.wind_kmh.unwrap_or(t.wind_kmh),
            at,
        )
        .map_err(|e| ServiceError::BadRequest(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRequest {
    pub location: LatLon,
    #[serde(default)]
    pub at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub weather_override: Option<WeatherOverride>,
    #[serde(default)]
    pub flags_override: Option<BTreeMap<Flag, bool>>,
    /// Skip both caches and compute directly.
    #[serde(default)]
    pub bypass_cache: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResponse {
    #[serde(flatten)]
    pub core: PredictionCore,
    pub risk_tier: RiskTier,
    pub cache_tier: CacheTier,
    pub latency_ms: f64,
    pub cell: CellId,
    pub time_bucket: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hotspot {
    pub cell: CellId,
    pub center: LatLon,
    pub risk_score: f64,
    pub risk_tier: RiskTier,
    pub severity_probs: [f64; 4],
    pub dominant_factor: crashcast_core::features::FactorGroup,
    pub expected_impact: f64,
    pub display_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotspotResponse {
    pub at: DateTime<Utc>,
    pub time_bucket: i64,
    pub weather_category: WeatherCategory,
    pub hotspots: Vec<Hotspot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefreshStatus {
    pub generation: u64,
    pub entries: usize,
    pub time_bucket: Option<i64>,
    pub last_refresh: Option<DateTime<Utc>>,
    pub stale: bool,
    pub last_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheSizes {
    pub primary_entries: usize,
    pub secondary_entries: usize,
    pub secondary_pinned: usize,
    pub secondary_capacity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub counters: Counters,
    pub cache: CacheSizes,
    pub refresh: RefreshStatus,
    pub drift: DriftSnapshot,
    pub stored_records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRecord {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsertReport {
    pub inserted: usize,
    pub rejected: Vec<RejectedRecord>,
}

type Secondary = SecondaryCache<CacheKey, Arc<PredictionCore>>;

pub struct Service {
    config: ServiceConfig,
    predictor: RwLock<Option<Arc<Predictor>>>,
    primary: PrimaryCache,
    secondary: Secondary,
    store: RwLock<RecordStore>,
    weather: Arc<dyn WeatherSource>,
    clock: Arc<dyn Clock>,
    metrics: Metrics,
    drift: Mutex<DriftMonitor>,
    refresh: Mutex<RefreshStatus>,
}

impl Service {
    pub fn new(
        config: ServiceConfig,
        bundle: Option<ModelBundle>,
        store: RecordStore,
        weather: Arc<dyn WeatherSource>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, ServiceError> {
        config.validate()?;
        let table = match &config.recommendations {
            Some(p) => RecommendationTable::load(p)?,
            None => RecommendationTable::default(),
        };
        let drift = match bundle.as_ref().and_then(|b| b.baseline_accuracy.zip(b.baseline_rows)) {
            Some((accuracy, rows)) => DriftMonitor::estimated(accuracy, rows, config.drift_window),
            None => DriftMonitor::binomial(
                bundle.as_ref().and_then(|b| b.baseline_accuracy).unwrap_or(config.baseline_accuracy),
                config.drift_window,
            ),
        };
        let secondary = SecondaryCache::new(LruConfig {
            capacity: config.secondary_capacity,
            pin_confidence: config.pin_confidence,
            pin_fraction_max: config.pin_fraction_max,
        });
        Ok(Service {
            predictor: RwLock::new(bundle.map(|b| Arc::new(Predictor::new(b, table)))),
            primary: PrimaryCache::default(),
            secondary,
            store: RwLock::new(store),
            weather,
            clock,
            metrics: Metrics::default(),
            drift: Mutex::new(drift),
            refresh: Mutex::new(RefreshStatus {
                generation: 0,
                entries: 0,
                time_bucket: None,
                last_refresh: None,
                stale: false,
                last_error: None,
            }),
            config,
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    pub fn predictor(&self) -> Result<Arc<Predictor>, ServiceError> {
        self.predictor.read().clone().ok_or(ServiceError::ModelNotLoaded)
    }

    /// Rebuilds the primary cache for the current bucket over every active
    /// cell. On weather failure the previous generation stays and is flagged.
    pub fn refresh(&self) -> Result<usize, ServiceError> {
        let predictor = self.predictor()?;
        let now = self.clock.now();
        let bucket = time_bucket(now);
        let at = bucket_start(bucket);
        let snapshot = match self.weather.current(at) {
            Ok(s) => s,
            Err(e) => {
                let mut r = self.refresh.lock();
                r.stale = true;
                r.last_error = Some(e.to_string());
                return Err(e);
            }
        };
        let mut entries = std::collections::HashMap::new();
        for cell in predictor.active_cells() {
            let scenario = Scenario { location: cell.center(), at, snapshot, flags: BTreeMap::new() };
            entries.insert(cell, Arc::new(predictor.predict(&scenario)?));
        }
        let n = entries.len();
        let id = {
            let mut r = self.refresh.lock();
            r.generation += 1;
            r.entries = n;
            r.time_bucket = Some(bucket);
            r.last_refresh = Some(now);
            r.stale = false;
            r.last_error = None;
            r.generation
        };
        self.primary.swap(Generation { id, bucket, weather: snapshot, built_at: now, entries });
        self.metrics.record_refresh();
        Ok(n)
    }

    /// True when the primary cache no longer matches the clock's bucket or
    /// the refresh period has elapsed.
    pub fn refresh_due(&self) -> bool {
        let now = self.clock.now();
        let r = self.refresh.lock();
        match (r.time_bucket, r.last_refresh) {
            (Some(b), Some(t)) => b != time_bucket(now) || now - t >= Duration::minutes(self.config.refresh_minutes),
            _ => true,
        }
    }

    pub fn refresh_if_due(&self) -> Result<Option<usize>, ServiceError> {
        if self.refresh_due() {
            self.refresh().map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn generation(&self) -> Arc<Generation> {
        self.primary.snapshot()
    }

    fn location(&self, p: LatLon) -> Result<GeoPoint, ServiceError> {
        let point = GeoPoint::new(p.lat, p.lon).map_err(|e| ServiceError::OutOfRegion(e.to_string()))?;
        if !self.config.region().contains(point) {
            return Err(ServiceError::OutOfRegion(format!("({}, {}) is outside the service region", p.lat, p.lon)));
        }
        Ok(point)
    }

    fn scenario(&self, req: &PredictionRequest) -> Result<(Scenario, u64), ServiceError> {
        let location = self.location(req.location)?;
        let at = req.at.unwrap_or_else(|| self.clock.now());
        let snapshot = match &req.weather_override {
            Some(w) => w.snapshot(at)?,
            None => self.weather.current(at)?,
        };
        let flags = req.flags_override.clone().unwrap_or_default();
        let hash = scenario_hash(req.weather_override.as_ref().map(|_| &snapshot), &flags);
        Ok((Scenario { location, at, snapshot, flags }, hash))
    }

    /// Primary, then secondary, then on-demand computation.
    pub fn predict(&self, req: &PredictionRequest) -> Result<PredictionResponse, ServiceError> {
        let start = Instant::now();
        let result = self.predict_inner(req, start);
        if result.is_err() {
            self.metrics.record_error();
        }
        result
    }

    fn predict_inner(&self, req: &PredictionRequest, start: Instant) -> Result<PredictionResponse, ServiceError> {
        let predictor = self.predictor()?;
        let (scenario, hash) = self.scenario(req)?;
        let cell = predictor.cell(scenario.location);
        let bucket = time_bucket(scenario.at);
        let key = CacheKey { cell, bucket, weather: scenario.snapshot.category, scenario: hash };
        let (core, tier) = if req.bypass_cache {
            (Arc::new(predictor.predict(&scenario)?), CacheTier::Miss)
        } else if let Some(hit) = self.primary.get(&key) {
            (hit, CacheTier::Primary)
        } else if let Some(hit) = self.secondary.get(&key) {
            (hit, CacheTier::Secondary)
        } else {
            let core = Arc::new(predictor.predict(&scenario)?);
            self.secondary.insert(key, core.clone(), core.confidence);
            (core, CacheTier::Miss)
        };
        let latency_ms = start.elapsed().as_secs_f64() * 1e3;
        if !req.bypass_cache {
            self.metrics.record(tier, latency_ms);
        }
        Ok(PredictionResponse {
            risk_tier: RiskTier::from_score(core.risk_score),
            core: (*core).clone(),
            cache_tier: tier,
            latency_ms,
            cell,
            time_bucket: bucket,
        })
    }

    /// Active cells intersecting `bbox`, ranked by risk, at most `k`.
    pub fn hotspots(&self, bbox: &BoundingBox, at: Option<DateTime<Utc>>, k: Option<usize>) -> Result<HotspotResponse, ServiceError> {
        self.metrics.record_hotspots();
        let predictor = self.predictor()?;
        let at = at.unwrap_or_else(|| self.clock.now());
        let bucket = time_bucket(at);
        let snapshot = self.weather.current(at)?;
        let generation = self.primary.snapshot();
        let mut out = Vec::new();
        for cell in predictor.active_cells() {
            let b = cell.bounds();
            let intersects =
                b.min_lat <= bbox.max_lat && b.max_lat >= bbox.min_lat && b.min_lon <= bbox.max_lon && b.max_lon >= bbox.min_lon;
            if !intersects {
                continue;
            }
            let key = CacheKey { cell, bucket, weather: snapshot.category, scenario: 0 };
            let core = match generation.get(&key).or_else(|| self.secondary.get(&key)) {
                Some(c) => c,
                None => {
                    let s = Scenario { location: cell.center(), at, snapshot, flags: BTreeMap::new() };
                    let c = Arc::new(predictor.predict(&s)?);
                    self.secondary.insert(key, c.clone(), c.confidence);
                    c
                }
            };
            let Some(center) = anchor(&b, &self.config.region()) else { continue };
            out.push(Hotspot {
                cell,
                center,
                risk_score: core.risk_score,
                risk_tier: RiskTier::from_score(core.risk_score),
                severity_probs: core.severity_probs,
                dominant_factor: core.dominant_factor,
                expected_impact: core.expected_impact,
                display_radius: display_radius(self.config.hotspot_base_radius_m, core.risk_score, core.expected_impact),
            });
        }
        rank_hotspots(&mut out);
        if let Some(k) = k {
            out.truncate(k);
        }
        Ok(HotspotResponse { at, time_bucket: bucket, weather_category: snapshot.category, hotspots: out })
    }

    /// Stores valid records and scores those with outcomes for drift.
    pub fn insert_records(&self, records: Vec<(u64, CrashRecord)>) -> Result<InsertReport, ServiceError> {
        let mut rejected = Vec::new();
        let mut valid = Vec::new();
        for (line, r) in records {
            match check_record(&r) {
                Ok(()) => valid.push(r),
                Err(e) => rejected.push(RejectedRecord { line, message: e.to_string() }),
            }
        }
        let outcomes: Vec<(Scenario, crashcast_core::model::SeverityLevel)> = valid
            .iter()
            .filter_map(|r| {
                let (loc, at, sev) = (r.location?, r.occurred_at?, r.severity?);
                let snapshot = self.weather.current(at).ok()?;
                Some((Scenario { location: loc, at, snapshot, flags: BTreeMap::new() }, sev))
            })
            .collect();
        let inserted = self.store.write().insert(valid)?;
        self.metrics.record_inserted(inserted);
        if let Ok(predictor) = self.predictor() {
            for (s, outcome) in outcomes {
                let p = predictor.probabilities(&s)?;
                let class = (1..4).fold(0, |b, c| if p[c] > p[b] { c } else { b });
                self.drift.lock().update(crashcast_core::model::SeverityLevel::ALL[class], outcome);
            }
        }
        Ok(InsertReport { inserted, rejected })
    }

    pub fn query_records(
        &self,
        bbox: &BoundingBox,
        from: Option<DateTime<Utc>>,
        to: Option<DateTime<Utc>>,
        limit: Option<usize>,
    ) -> Vec<CrashRecord> {
        let store = self.store.read();
        let hits = store.query(bbox, from, to);
        hits.into_iter().take(limit.unwrap_or(usize::MAX)).cloned().collect()
    }

    pub fn refresh_status(&self) -> RefreshStatus {
        self.refresh.lock().clone()
    }

    pub fn metrics(&self) -> MetricsReport {
        MetricsReport {
            counters: self.metrics.counters(),
            cache: CacheSizes {
                primary_entries: self.primary.snapshot().entries.len(),
                secondary_entries: self.secondary.len(),
                secondary_pinned: self.secondary.pinned_len(),
                secondary_capacity: self.config.secondary_capacity,
            },
            refresh: self.refresh_status(),
            drift: self.drift.lock().snapshot(),
            stored_records: self.store.read().len(),
        }
    }
}

/// Midpoint of a cell's overlap with the service region, so a hotspot's
/// location can always be requested. None when they do not overlap.
pub fn anchor(cell: &BoundingBox, region: &BoundingBox) -> Option<LatLon> {
    let (lo_lat, hi_lat) = (cell.min_lat.max(region.min_lat), cell.max_lat.min(region.max_lat));
    let (lo_lon, hi_lon) = (cell.min_lon.max(region.min_lon), cell.max_lon.min(region.max_lon));
    (lo_lat < hi_lat && lo_lon < hi_lon).then(|| LatLon { lat: (lo_lat + hi_lat) / 2.0, lon: (lo_lon + hi_lon) / 2.0 })
}

/// `base · sqrt(risk · expected_impact)`.
pub fn display_radius(base: f64, risk: f64, expected_impact: f64) -> f64 {
    base * (risk * expected_impact).max(0.0).sqrt()
}

/// Descending risk; ties by cell.
pub fn rank_hotspots(h: &mut [Hotspot]) {
    h.sort_by(|a, b| b.risk_score.total_cmp(&a.risk_score).then(a.cell.cmp(&b.cell)));
}
