//! Fitted feature context and feature-vector assembly.

use std::collections::BTreeMap;

use chrono::{DateTime, Datelike, Duration, Timelike, Utc};
use serde::{Deserialize, Serialize};

use super::behavioral::{behavioral_features, flag_values, BehavioralRiskWeights};
use super::clustering::{assign_clusters, ClusterParams};
use super::environmental::{environmental_features, fit_environmental_weights, visibility_factor, EnvironmentalRiskWeights};
use super::knn::{WeatherKnnIndex, DEFAULT_K};
use super::temporal::cyclical_encode;
use super::weather::WeatherTimeline;
use super::FeatureError;
use crate::cell::{cell_of, CellId};
use crate::model::{CrashRecord, Flag, GeoPoint, SeverityLevel, WeatherCategory, WeatherSnapshot};

pub const N_FEATURES: usize = 30;
pub const FEATURE_CONTEXT_FORMAT: &str = "crashcast-feature-context";
pub const FEATURE_CONTEXT_VERSION: u32 = 1;

/// Column order of every feature matrix and model file.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "impairment_risk",
    "distraction_risk",
    "adverse_road_conditions",
    "weather_risk",
    "total_environmental_risk",
    "environmental_risk",
    "weather_knn_risk",
    "hour_sin",
    "hour_cos",
    "month_sin",
    "month_cos",
    "cluster_density",
    "ALCOHOL_RELATED",
    "DRUGGED_DRIVER",
    "MARIJUANA_RELATED",
    "CELL_PHONE",
    "DISTRACTED",
    "FATIGUE_ASLEEP",
    "ICY_ROAD",
    "WET_ROAD",
    "SNOW_SLUSH_ROAD",
    "AGGRESSIVE_DRIVING",
    "LOCAL_ROAD",
    "UNBELTED",
    "CURVE_DVR_ERROR",
    "INTERSTATE",
    "INTERSECTION_RELATED",
    "WEATHER1",
    "ILLUMINATION",
    "ROAD_CONDITION",
];

pub const FLAG_OFFSET: usize = 12;
pub const WEATHER_RISK_INDEX: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorGroup {
    Weather,
    Temporal,
    Historical,
    Behavioral,
    Geometry,
}

impl FactorGroup {
    pub const ALL: [FactorGroup; 5] =
        [FactorGroup::Weather, FactorGroup::Temporal, FactorGroup::Historical, FactorGroup::Behavioral, FactorGroup::Geometry];

    pub fn name(self) -> &'static str {
        match self {
            FactorGroup::Weather => "weather",
            FactorGroup::Temporal => "temporal",
            FactorGroup::Historical => "historical",
            FactorGroup::Behavioral => "behavioral",
            FactorGroup::Geometry => "geometry",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Factor group of each feature column.
pub fn feature_group(feature: usize) -> FactorGroup {
    use FactorGroup::*;
    match feature {
        0 | 1 => Behavioral,
        2..=5 => Weather,
        6 | 11 => Historical,
        7..=10 | 28 => Temporal,
        27 | 29 => Weather,
        f if (FLAG_OFFSET..FLAG_OFFSET + 15).contains(&f) => match Flag::ALL[f - FLAG_OFFSET] {
            Flag::IcyRoad | Flag::WetRoad | Flag::SnowSlushRoad => Weather,
            Flag::LocalRoad | Flag::CurveDvrError | Flag::Interstate | Flag::IntersectionRelated => Geometry,
            _ => Behavioral,
        },
        _ => Historical,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub impairment_risk: f64,
    pub distraction_risk: f64,
    pub adverse_road_conditions: f64,
    pub weather_risk: f64,
    pub total_environmental_risk: f64,
    pub environmental_risk: f64,
    pub weather_knn_risk: f64,
    pub hour_sin: f64,
    pub hour_cos: f64,
    pub month_sin: f64,
    pub month_cos: f64,
    pub cluster_density: f64,
    pub flags: [f64; 15],
    /// WEATHER1, ILLUMINATION, ROAD_CONDITION; NaN when missing.
    pub codes: [f64; 3],
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; N_FEATURES] {
        let mut out = [0.0; N_FEATURES];
        out[..FLAG_OFFSET].copy_from_slice(&[
            self.impairment_risk,
            self.distraction_risk,
            self.adverse_road_conditions,
            self.weather_risk,
            self.total_environmental_risk,
            self.environmental_risk,
            self.weather_knn_risk,
            self.hour_sin,
            self.hour_cos,
            self.month_sin,
            self.month_cos,
            self.cluster_density,
        ]);
        out[FLAG_OFFSET..FLAG_OFFSET + 15].copy_from_slice(&self.flags);
        out[FLAG_OFFSET + 15..].copy_from_slice(&self.codes);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub cluster: ClusterParams,
    pub knn_k: usize,
    pub serving_resolution: u8,
    /// How stale a timeline observation may be and still describe a record.
    pub weather_max_age_hours: i64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { cluster: ClusterParams::default(), knn_k: DEFAULT_K, serving_resolution: 11, weather_max_age_hours: 1 }
    }
}

/// Historical statistics of one serving cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStat {
    pub cell: CellId,
    pub records: usize,
    /// Mean cluster density of the cell's historical records.
    pub density: f64,
    /// Mean of each flag over the cell's records.
    pub flag_means: [f64; 15],
    /// Mean severity code, for hotspot summaries.
    pub mean_severity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub clusters: usize,
    pub noise_points: usize,
    pub clustered_points: usize,
}

/// Everything fitted from history that feature assembly needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureContext {
    pub format: String,
    pub version: u32,
    pub feature_names: Vec<String>,
    pub config: FeatureConfig,
    pub behavioral: BehavioralRiskWeights,
    pub environmental: EnvironmentalRiskWeights,
    /// False when α, β, γ fell back to uniform because the fit was degenerate.
    pub environmental_fitted: bool,
    pub cluster_summary: ClusterSummary,
    /// Sorted by cell.
    pub cells: Vec<CellStat>,
    /// Icy, wet, snow/slush prevalence per WEATHER1 category (codes 1..=6).
    pub surface_by_weather: [[f64; 3]; 6],
    pub illumination_by_hour: [u8; 24],
    pub road_condition_by_weather: [u8; 6],
    pub knn: WeatherKnnIndex,
}

/// Inputs for one feature vector, independent of where they came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureParts {
    pub location: GeoPoint,
    pub hour: u8,
    pub month: u8,
    pub flags: [f64; 15],
    pub weather_category: Option<WeatherCategory>,
    pub illumination: Option<u8>,
    pub road_condition: Option<u8>,
    pub snapshot: WeatherSnapshot,
    /// History row to leave out of the kNN search.
    pub knn_exclude: Option<usize>,
}

impl FeatureContext {
    pub fn cell_stat(&self, cell: CellId) -> Option<&CellStat> {
        self.cells.binary_search_by(|c| c.cell.cmp(&cell)).ok().map(|i| &self.cells[i])
    }

    pub fn active_cells(&self) -> impl Iterator<Item = CellId> + '_ {
        self.cells.iter().map(|c| c.cell)
    }

    pub fn assemble(&self, parts: &FeatureParts) -> FeatureVector {
        let (impairment_risk, distraction_risk) = behavioral_features(&parts.flags, &self.behavioral);
        let env = environmental_features(&parts.flags, parts.weather_category, &self.environmental);
        let v = visibility_factor(&parts.snapshot);
        let e = &self.environmental;
        let environmental_risk = (e.alpha * env.weather_risk + e.beta * env.adverse_road + e.gamma * v).clamp(0.0, 1.0);
        let (hour_sin, hour_cos) = cyclical_encode(parts.hour as f64, 24.0);
        let (month_sin, month_cos) = cyclical_encode(parts.month as f64, 12.0);
        let cell = cell_of(parts.location, self.config.serving_resolution);
        let cluster_density = self.cell_stat(cell).map_or(0.0, |c| c.density);
        let code = |c: Option<u8>| c.map_or(f64::NAN, f64::from);
        FeatureVector {
            impairment_risk,
            distraction_risk,
            adverse_road_conditions: env.adverse_road,
            weather_risk: env.weather_risk,
            total_environmental_risk: env.total,
            environmental_risk,
            weather_knn_risk: self.knn.risk(&parts.snapshot, parts.knn_exclude),
            hour_sin,
            hour_cos,
            month_sin,
            month_cos,
            cluster_density,
            flags: parts.flags,
            codes: [code(parts.weather_category.map(|w| w.code())), code(parts.illumination), code(parts.road_condition)],
        }
    }

    /// Feature vector of a recorded crash under the given weather.
    pub fn assemble_record(
        &self,
        record: &CrashRecord,
        snapshot: &WeatherSnapshot,
        knn_exclude: Option<usize>,
    ) -> Result<FeatureVector, FeatureError> {
        let location = record.location.ok_or_else(|| FeatureError::MissingField("location".into()))?;
        Ok(self.assemble(&FeatureParts {
            location,
            hour: record.hour_of_day,
            month: record.crash_month,
            flags: flag_values(record),
            weather_category: record.weather,
            illumination: record.illumination,
            road_condition: record.road_condition,
            snapshot: *snapshot,
            knn_exclude,
        }))
    }

    /// Typical conditions for a location, time and weather: each flag is set
    /// when the cell's history has it in at least half of its records (road
    /// surface flags follow the weather), codes are the historical modes.
    /// `overrides` replaces individual flags. Flags stay binary because the
    /// trees were fitted on 0/1 values.
    pub fn scenario_parts(
        &self,
        location: GeoPoint,
        at: DateTime<Utc>,
        snapshot: &WeatherSnapshot,
        overrides: &BTreeMap<Flag, bool>,
    ) -> FeatureParts {
        let cell = cell_of(location, self.config.serving_resolution);
        let modal = |m: f64| if m >= 0.5 { 1.0 } else { 0.0 };
        let mut flags = self.cell_stat(cell).map_or([0.0; 15], |c| c.flag_means.map(modal));
        let w = snapshot.category;
        let wi = (w.code() - 1) as usize;
        for (k, f) in Flag::ROAD_SURFACE.iter().enumerate() {
            flags[f.index()] = modal(self.surface_by_weather[wi][k]);
        }
        for (f, v) in overrides {
            flags[f.index()] = if *v { 1.0 } else { 0.0 };
        }
        let road_condition = if overrides.keys().any(|f| Flag::ROAD_SURFACE.contains(f)) {
            let on = |f: Flag| flags[f.index()] >= 0.5;
            Some(if on(Flag::IcyRoad) {
                4
            } else if on(Flag::SnowSlushRoad) {
                3
            } else if on(Flag::WetRoad) {
                2
            } else {
                1
            })
        } else {
            Some(self.road_condition_by_weather[wi])
        };
        FeatureParts {
            location,
            hour: at.hour() as u8,
            month: at.month() as u8,
            flags,
            weather_category: Some(w),
            illumination: Some(self.illumination_by_hour[at.hour() as usize]),
            road_condition,
            snapshot: *snapshot,
            knn_exclude: None,
        }
    }

    /// Rebuilds derived lookup structures after deserialising.
    pub fn rebuild(&mut self) {
        self.knn.rebuild();
    }
}

/// Weather describing a record: the timeline observation for its hour, else
/// typical conditions for its WEATHER1 code.
pub fn record_snapshot(record: &CrashRecord, timeline: &WeatherTimeline, max_age: Duration) -> WeatherSnapshot {
    let at = record.occurred_at.unwrap_or_default();
    timeline
        .at(at, max_age)
        .unwrap_or_else(|| WeatherSnapshot::typical(record.weather.unwrap_or(WeatherCategory::CLEAR), at))
}

fn mode(counts: &BTreeMap<u8, usize>) -> Option<u8> {
    counts.iter().fold(None, |best: Option<(u8, usize)>, (&c, &n)| match best {
        Some((_, b)) if b >= n => best,
        _ => Some((c, n)),
    })
    .map(|(c, _)| c)
}

/// Training output: context, one vector per record, and labels.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub context: FeatureContext,
    pub vectors: Vec<FeatureVector>,
    pub labels: Vec<SeverityLevel>,
    pub weekend: Vec<bool>,
    pub locations: Vec<GeoPoint>,
}

/// Fits the feature context on validated, imputed records and assembles
/// their vectors. kNN risk for each record leaves that record out.
pub fn fit_feature_context(
    records: &[CrashRecord],
    timeline: &WeatherTimeline,
    config: &FeatureConfig,
) -> Result<FeatureSet, FeatureError> {
    if records.is_empty() {
        return Err(FeatureError::EmptyHistory);
    }
    let mut located = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    for r in records {
        let p = r.location.ok_or_else(|| FeatureError::MissingField(format!("location of record {}", r.id)))?;
        let s = r.severity.ok_or_else(|| FeatureError::MissingField(format!("severity of record {}", r.id)))?;
        located.push(p);
        labels.push(s);
    }
    let max_age = Duration::hours(config.weather_max_age_hours);
    let snapshots: Vec<WeatherSnapshot> = records.iter().map(|r| record_snapshot(r, timeline, max_age)).collect();
    let history: Vec<(WeatherSnapshot, SeverityLevel)> = snapshots.iter().copied().zip(labels.iter().copied()).collect();
    let knn = WeatherKnnIndex::fit(&history, config.knn_k.min(history.len()))?;

    let base_env = EnvironmentalRiskWeights::default();
    let flags: Vec<[f64; 15]> = records.iter().map(flag_values).collect();
    let components: Vec<[f64; 3]> = records
        .iter()
        .zip(&flags)
        .zip(&snapshots)
        .map(|((r, f), s)| [base_env.weather_risk(r.weather), base_env.adverse_road(f), visibility_factor(s)])
        .collect();
    let outcome: Vec<bool> = labels.iter().map(|s| *s >= SeverityLevel::Serious).collect();
    let (environmental, environmental_fitted) = match fit_environmental_weights(&components, &outcome, &base_env) {
        Ok(w) => (w, true),
        Err(FeatureError::DegenerateDesign(_) | FeatureError::InsufficientHistory { .. }) => (base_env, false),
        Err(e) => return Err(e),
    };

    let assignments = assign_clusters(&located, &config.cluster);
    let noise_points = assignments.iter().filter(|a| a.label.cluster().is_none()).count();
    let clusters = assignments.iter().filter_map(|a| a.label.cluster()).max().map_or(0, |m| m as usize + 1);

    struct Acc {
        n: usize,
        density: f64,
        flags: [f64; 15],
        severity: f64,
    }
    let mut per_cell: BTreeMap<CellId, Acc> = BTreeMap::new();
    for (((p, a), f), s) in located.iter().zip(&assignments).zip(&flags).zip(&labels) {
        let acc = per_cell
            .entry(cell_of(*p, config.serving_resolution))
            .or_insert(Acc { n: 0, density: 0.0, flags: [0.0; 15], severity: 0.0 });
        acc.n += 1;
        acc.density += a.density;
        acc.severity += f64::from(s.code());
        for k in 0..15 {
            acc.flags[k] += f[k];
        }
    }
    let cells = per_cell
        .into_iter()
        .map(|(cell, a)| CellStat {
            cell,
            records: a.n,
            density: a.density / a.n as f64,
            flag_means: a.flags.map(|v| v / a.n as f64),
            mean_severity: a.severity / a.n as f64,
        })
        .collect();

    let mut surface_sum = [[0.0; 3]; 6];
    let mut surface_n = [0usize; 6];
    let mut road_counts: [BTreeMap<u8, usize>; 6] = Default::default();
    let mut illum_counts: [BTreeMap<u8, usize>; 24] = Default::default();
    let mut illum_all: BTreeMap<u8, usize> = BTreeMap::new();
    let mut road_all: BTreeMap<u8, usize> = BTreeMap::new();
    for (r, f) in records.iter().zip(&flags) {
        if let Some(w) = r.weather {
            let wi = (w.code() - 1) as usize;
            surface_n[wi] += 1;
            for (k, sf) in Flag::ROAD_SURFACE.iter().enumerate() {
                surface_sum[wi][k] += f[sf.index()];
            }
            if let Some(rc) = r.road_condition {
                *road_counts[wi].entry(rc).or_default() += 1;
            }
        }
        if let Some(rc) = r.road_condition {
            *road_all.entry(rc).or_default() += 1;
        }
        if let Some(il) = r.illumination {
            *illum_counts[(r.hour_of_day as usize).min(23)].entry(il).or_default() += 1;
            *illum_all.entry(il).or_default() += 1;
        }
    }
    let total_n = surface_n.iter().sum::<usize>().max(1) as f64;
    let global_surface: [f64; 3] = std::array::from_fn(|k| surface_sum.iter().map(|s| s[k]).sum::<f64>() / total_n);
    let surface_by_weather: [[f64; 3]; 6] = std::array::from_fn(|wi| {
        if surface_n[wi] == 0 {
            global_surface
        } else {
            surface_sum[wi].map(|v| v / surface_n[wi] as f64)
        }
    });
    let road_default = mode(&road_all).unwrap_or(1);
    let illum_default = mode(&illum_all).unwrap_or(1);
    let road_condition_by_weather = std::array::from_fn(|wi| mode(&road_counts[wi]).unwrap_or(road_default));
    let illumination_by_hour = std::array::from_fn(|h| mode(&illum_counts[h]).unwrap_or(illum_default));

    let context = FeatureContext {
        format: FEATURE_CONTEXT_FORMAT.to_string(),
        version: FEATURE_CONTEXT_VERSION,
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        config: config.clone(),
        behavioral: BehavioralRiskWeights::default(),
        environmental,
        environmental_fitted,
        cluster_summary: ClusterSummary { clusters, noise_points, clustered_points: located.len() - noise_points },
        cells,
        surface_by_weather,
        illumination_by_hour,
        road_condition_by_weather,
        knn,
    };
    let vectors = records
        .iter()
        .zip(&snapshots)
        .enumerate()
        .map(|(i, (r, s))| context.assemble_record(r, s, Some(i)))
        .collect::<Result<Vec<_>, _>>()?;
    let weekend = records.iter().map(CrashRecord::is_weekend).collect();
    Ok(FeatureSet { context, vectors, labels, weekend, locations: located })
}
