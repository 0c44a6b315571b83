//! Seeded synthetic crash generator.
//!
//! Records are drawn from Gaussian clusters around Pennsylvania cities plus a
//! uniform rural background, with winter and rush-hour oversampling and an
//! hourly weather timeline that drives road-surface flags. Severity follows
//! `P(s | x) ∝ exp(a_s + s·z(x))` where `z` sums the planted log-odds shifts of
//! the active features; the intercepts `a_s` are calibrated on the generated
//! feature values so the marginals match the requested ones.

use std::collections::BTreeMap;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Duration, NaiveDate, TimeZone, Timelike, Utc};
use rand::distr::weighted::WeightedIndex;
use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::model::{BoundingBox, CrashRecord, Flag, GeoPoint, SeverityLevel, WeatherCategory, WeatherSnapshot};
use crate::rng::{self, Rng};

pub const PAPER_SEVERITY_COUNTS: [usize; 4] = [43_372, 13_364, 2_159, 601];

const TRUNCATE_SIGMA: f64 = 2.5;
const KM_PER_DEG: f64 = 111.195;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCenter {
    pub center: GeoPoint,
    pub weight: f64,
    pub spread_km: f64,
    pub county: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_records: usize,
    pub severity_marginals: [f64; 4],
    pub seasonal_peak_months: Vec<u8>,
    pub rush_hours: Vec<u8>,
    pub cluster_centers: Vec<ClusterCenter>,
    /// Weight of the uniform background over `region`, relative to the clusters.
    pub background_weight: f64,
    pub region: BoundingBox,
    pub seed: u64,
    /// Severity log-odds shift per active feature: flag names, or
    /// `WEATHER1_<code>` for a weather category.
    pub planted_effects: BTreeMap<String, f64>,
    /// Probability that any single flag or code cell is blanked.
    pub missing_rate: f64,
    /// Fraction of records given a validation defect.
    pub defect_rate: f64,
    pub year: i32,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let total: usize = PAPER_SEVERITY_COUNTS.iter().sum();
        let city = |name: &str, lat: f64, lon: f64, weight: f64, spread_km: f64| ClusterCenter {
            center: GeoPoint::new(lat, lon).expect("valid city coordinate"),
            weight,
            spread_km,
            county: name.to_string(),
        };
        let effects = [
            ("UNBELTED", 9.0),
            ("ALCOHOL_RELATED", 7.5),
            ("DRUGGED_DRIVER", 6.0),
            ("CURVE_DVR_ERROR", 4.5),
            ("FATIGUE_ASLEEP", 4.5),
            ("AGGRESSIVE_DRIVING", 3.6),
            ("ICY_ROAD", 3.0),
            ("INTERSTATE", 2.4),
            ("LOCAL_ROAD", -2.4),
        ];
        SyntheticConfig {
            n_records: total,
            severity_marginals: PAPER_SEVERITY_COUNTS.map(|c| c as f64 / total as f64),
            seasonal_peak_months: vec![12, 1, 2],
            rush_hours: vec![7, 8, 9, 16, 17, 18],
            cluster_centers: vec![
                city("PHILADELPHIA", 39.9526, -75.1652, 0.30, 10.0),
                city("ALLEGHENY", 40.4406, -79.9959, 0.18, 12.0),
                city("DAUPHIN", 40.2732, -76.8867, 0.08, 9.0),
                city("LEHIGH", 40.6023, -75.4714, 0.08, 9.0),
                city("LANCASTER", 40.0379, -76.3055, 0.07, 10.0),
                city("BERKS", 40.3356, -75.9269, 0.06, 8.0),
                city("LACKAWANNA", 41.4090, -75.6624, 0.06, 8.0),
                city("ERIE", 42.1292, -80.0851, 0.05, 8.0),
                city("CENTRE", 40.7934, -77.8600, 0.05, 7.0),
                city("CAMBRIA", 40.3267, -78.9220, 0.04, 7.0),
                city("LYCOMING", 41.2412, -77.0011, 0.03, 7.0),
            ],
            background_weight: 0.15,
            region: BoundingBox::PENNSYLVANIA,
            seed: 0,
            planted_effects: effects.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            missing_rate: 0.0,
            defect_rate: 0.0,
            year: 2023,
        }
    }
}

impl SyntheticConfig {
    pub fn with_size(n_records: usize, seed: u64) -> Self {
        SyntheticConfig { n_records, seed, ..Self::default() }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub records: Vec<CrashRecord>,
    /// Hourly weather for the whole year, starting at January 1 00:00 UTC.
    pub weather: Vec<WeatherSnapshot>,
    pub planted_defects: usize,
}

#[derive(Debug, Clone, Copy)]
enum Effect {
    Flag(Flag, f64),
    Weather(WeatherCategory, f64),
}

fn parse_effects(map: &BTreeMap<String, f64>) -> Result<Vec<Effect>, PipelineError> {
    map.iter()
        .map(|(k, &v)| {
            if !v.is_finite() {
                return Err(PipelineError::InvalidConfig(format!("effect {k} is not finite")));
            }
            if let Some(code) = k.to_ascii_uppercase().strip_prefix("WEATHER1_") {
                let w = WeatherCategory::from_str(code)?;
                Ok(Effect::Weather(w, v))
            } else {
                Ok(Effect::Flag(Flag::from_str(k)?, v))
            }
        })
        .collect()
}

fn validate(cfg: &SyntheticConfig) -> Result<(), PipelineError> {
    let bad = |m: String| Err(PipelineError::InvalidConfig(m));
    let sum: f64 = cfg.severity_marginals.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || cfg.severity_marginals.iter().any(|p| !(*p > 0.0)) {
        return bad(format!("severity marginals must be positive and sum to 1, got {:?}", cfg.severity_marginals));
    }
    if cfg.cluster_centers.iter().any(|c| !(c.weight >= 0.0) || !(c.spread_km > 0.0)) || !(cfg.background_weight >= 0.0) {
        return bad("cluster weights must be nonnegative and spreads positive".into());
    }
    if cfg.cluster_centers.iter().map(|c| c.weight).sum::<f64>() + cfg.background_weight <= 0.0 {
        return bad("at least one location component needs positive weight".into());
    }
    if !(0.0..=1.0).contains(&cfg.missing_rate) || !(0.0..=1.0).contains(&cfg.defect_rate) {
        return bad("missing_rate and defect_rate must lie in [0, 1]".into());
    }
    if cfg.seasonal_peak_months.iter().any(|m| !(1..=12).contains(m)) || cfg.rush_hours.iter().any(|h| *h > 23) {
        return bad("peak months must be 1..=12 and rush hours 0..=23".into());
    }
    Ok(())
}

/// Category mix (clear, cloudy, rain, snow, sleet, fog) for a month.
fn category_mix(month: u32) -> [f64; 6] {
    match month {
        12 | 1 | 2 => [0.35, 0.25, 0.08, 0.22, 0.05, 0.05],
        3 | 4 | 10 | 11 => [0.42, 0.25, 0.20, 0.04, 0.02, 0.07],
        _ => [0.50, 0.22, 0.22, 0.0, 0.0, 0.06],
    }
}

/// Hourly weather with persistence: each hour keeps the previous category
/// with probability 0.9, otherwise redraws from the month's mix.
pub fn generate_weather_timeline(start: DateTime<Utc>, hours: usize, seed: u64) -> Vec<WeatherSnapshot> {
    let mut rng = rng::stream(seed, 0x77746872);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = Vec::with_capacity(hours);
    let mut current: Option<WeatherCategory> = None;
    for h in 0..hours {
        let at = start + Duration::hours(h as i64);
        let redraw = current.is_none() || rng.random::<f64>() >= 0.9;
        if redraw {
            let mix = WeightedIndex::new(category_mix(at.month())).expect("valid mix");
            current = Some(WeatherCategory::ALL[mix.sample(&mut rng)]);
        }
        let category = current.expect("set above");
        let doy = at.ordinal() as f64;
        let seasonal = 11.0 + 12.0 * (2.0 * std::f64::consts::PI * (doy - 105.0) / 365.0).sin();
        let diurnal = 4.0 * (2.0 * std::f64::consts::PI * (at.hour() as f64 - 9.0) / 24.0).sin();
        let mut temp = seasonal + diurnal + 2.0 * noise.sample(&mut rng);
        let (precip, vis_mean) = match category.code() {
            1 => (0.0, 16.0),
            2 => (0.0, 12.0),
            3 => (LogNormal::new(1.0, 0.5).expect("lognormal").sample(&mut rng), 6.0),
            4 => {
                temp = temp.min(0.5);
                (LogNormal::new(0.5, 0.5).expect("lognormal").sample(&mut rng), 2.0)
            }
            5 => {
                temp = temp.clamp(-4.0, 1.5);
                (LogNormal::new(0.7, 0.4).expect("lognormal").sample(&mut rng), 3.0)
            }
            _ => (0.1 * rng.random::<f64>(), 0.5),
        };
        let visibility = (vis_mean * (1.0 + 0.15 * noise.sample(&mut rng))).max(0.05);
        let wind = (12.0 + 6.0 * noise.sample(&mut rng)).abs() + if category.code() >= 3 { 6.0 } else { 0.0 };
        out.push(
            WeatherSnapshot::new(category, temp, precip, visibility, wind, at).expect("generated measurements are nonnegative"),
        );
    }
    out
}

fn truncated_normal(rng: &mut Rng, normal: &Normal<f64>) -> f64 {
    loop {
        let z = normal.sample(rng);
        if z.abs() <= TRUNCATE_SIGMA {
            return z;
        }
    }
}

const HOUR_PROFILE: [f64; 24] = [
    0.50, 0.40, 0.35, 0.30, 0.30, 0.45, 0.80, 1.00, 1.00, 1.00, 1.00, 1.00, 1.05, 1.05, 1.10, 1.10, 1.00, 1.00, 0.95,
    0.85, 0.75, 0.70, 0.65, 0.55,
];

/// Base prevalence of each flag, indexed like [`Flag::ALL`]. Road surface
/// flags are weather-driven and handled separately.
fn base_prevalence(flag: Flag) -> f64 {
    match flag {
        Flag::AlcoholRelated => 0.05,
        Flag::DruggedDriver => 0.03,
        Flag::MarijuanaRelated => 0.02,
        Flag::CellPhone => 0.03,
        Flag::Distracted => 0.15,
        Flag::FatigueAsleep => 0.03,
        Flag::AggressiveDriving => 0.20,
        Flag::LocalRoad => 0.40,
        Flag::Unbelted => 0.06,
        Flag::CurveDvrError => 0.10,
        Flag::Interstate => 0.15,
        Flag::IntersectionRelated => 0.35,
        Flag::IcyRoad | Flag::WetRoad | Flag::SnowSlushRoad => 0.0,
    }
}

fn surface_prevalence(flag: Flag, weather: WeatherCategory) -> f64 {
    match (flag, weather.code()) {
        (Flag::IcyRoad, 4 | 5) => 0.35,
        (Flag::IcyRoad, _) => 0.01,
        (Flag::WetRoad, 3) => 0.60,
        (Flag::WetRoad, 4 | 5) => 0.30,
        (Flag::WetRoad, 6) => 0.15,
        (Flag::WetRoad, _) => 0.04,
        (Flag::SnowSlushRoad, 4) => 0.50,
        (Flag::SnowSlushRoad, 5) => 0.30,
        (Flag::SnowSlushRoad, _) => 0.005,
        _ => 0.0,
    }
}

fn illumination_for(hour: u8, rural: bool) -> u8 {
    match hour {
        7..=17 => 1,
        5 | 6 | 18 | 19 => 4,
        _ if rural => 2,
        _ => 3,
    }
}

fn road_condition_for(flags: &[Option<bool>; 15]) -> u8 {
    let on = |f: Flag| flags[f.index()] == Some(true);
    if on(Flag::IcyRoad) {
        4
    } else if on(Flag::SnowSlushRoad) {
        3
    } else if on(Flag::WetRoad) {
        2
    } else {
        1
    }
}

fn softmax_severity(a: &[f64; 4], z: f64) -> [f64; 4] {
    let logits: [f64; 4] = std::array::from_fn(|s| a[s] + s as f64 * z);
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.map(|l| (l - m).exp());
    let sum: f64 = e.iter().sum();
    e.map(|v| v / sum)
}

/// Intercepts that reproduce `target` as the average predicted distribution.
fn calibrate_intercepts(z: &[f64], target: &[f64; 4]) -> [f64; 4] {
    let mut a = [0.0; 4];
    for s in 1..4 {
        a[s] = (target[s] / target[0]).ln();
    }
    for _ in 0..200 {
        let mut mean = [0.0; 4];
        for &zi in z {
            let p = softmax_severity(&a, zi);
            for s in 0..4 {
                mean[s] += p[s];
            }
        }
        let mut worst = 0.0f64;
        for s in 0..4 {
            mean[s] /= z.len() as f64;
            let step = (target[s] / mean[s]).ln();
            worst = worst.max(step.abs());
            a[s] += step;
        }
        if worst < 1e-12 {
            break;
        }
    }
    a
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticDataset, PipelineError> {
    validate(cfg)?;
    let effects = parse_effects(&cfg.planted_effects)?;
    let start = Utc.with_ymd_and_hms(cfg.year, 1, 1, 0, 0, 0).single().ok_or_else(|| {
        PipelineError::InvalidConfig(format!("year {} out of range", cfg.year))
    })?;
    let year_hours = (Utc.with_ymd_and_hms(cfg.year + 1, 1, 1, 0, 0, 0).unwrap() - start).num_hours() as usize;
    let weather = generate_weather_timeline(start, year_hours, cfg.seed);

    let mut rng = rng::stream(cfg.seed, 0x72656373);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut component_weights: Vec<f64> = cfg.cluster_centers.iter().map(|c| c.weight).collect();
    component_weights.push(cfg.background_weight);
    let components = WeightedIndex::new(&component_weights).map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
    let month_weights: Vec<f64> =
        (1..=12u8).map(|m| if cfg.seasonal_peak_months.contains(&m) { 1.5 } else { 1.0 }).collect();
    let months = WeightedIndex::new(&month_weights).expect("positive month weights");
    let hour_weights: Vec<f64> = HOUR_PROFILE
        .iter()
        .enumerate()
        .map(|(h, w)| if cfg.rush_hours.contains(&(h as u8)) { w * 1.8 } else { *w })
        .collect();
    let hours = WeightedIndex::new(&hour_weights).expect("positive hour weights");

    let mut records = Vec::with_capacity(cfg.n_records);
    let mut z = Vec::with_capacity(cfg.n_records);
    for i in 0..cfg.n_records {
        let comp = components.sample(&mut rng);
        let (location, county, rural) = if comp < cfg.cluster_centers.len() {
            let c = &cfg.cluster_centers[comp];
            let sd_lat = c.spread_km / KM_PER_DEG;
            let sd_lon = c.spread_km / (KM_PER_DEG * c.center.lat().to_radians().cos());
            let p = loop {
                let lat = c.center.lat() + sd_lat * truncated_normal(&mut rng, &normal);
                let lon = c.center.lon() + sd_lon * truncated_normal(&mut rng, &normal);
                if let Ok(p) = GeoPoint::new(lat, lon) {
                    if cfg.region.contains(p) {
                        break p;
                    }
                }
            };
            (p, c.county.clone(), false)
        } else {
            let r = &cfg.region;
            let lat = rng.random_range(r.min_lat..r.max_lat);
            let lon = rng.random_range(r.min_lon..r.max_lon);
            (GeoPoint::new(lat, lon).expect("region corners are valid"), "RURAL".to_string(), true)
        };

        let month = months.sample(&mut rng) as u32 + 1;
        let days = days_in_month(cfg.year, month);
        let day = rng.random_range(1..=days);
        let hour = hours.sample(&mut rng) as u32;
        let minute = rng.random_range(0..60);
        let at = Utc.with_ymd_and_hms(cfg.year, month, day, hour, minute, 0).single().expect("valid timestamp");
        let snapshot = weather[((at - start).num_hours() as usize).min(weather.len() - 1)];

        let mut rec = CrashRecord::blank(i.to_string(), at);
        rec.location = Some(location);
        rec.county = county;
        rec.weather = Some(snapshot.category);
        let night = !(4..21).contains(&hour);
        for flag in Flag::ALL {
            let p = match flag {
                Flag::IcyRoad | Flag::WetRoad | Flag::SnowSlushRoad => surface_prevalence(flag, snapshot.category),
                Flag::AlcoholRelated | Flag::DruggedDriver | Flag::MarijuanaRelated if night => base_prevalence(flag) * 2.5,
                Flag::Interstate if rural => 0.25,
                Flag::LocalRoad if rural => 0.30,
                _ => base_prevalence(flag),
            };
            rec.set_flag(flag, Some(rng.random::<f64>() < p));
        }
        rec.illumination = Some(illumination_for(hour as u8, rural));
        rec.road_condition = Some(road_condition_for(&rec.flags));

        let zi: f64 = effects
            .iter()
            .map(|e| match *e {
                Effect::Flag(f, v) => rec.flag_or_zero(f) * v,
                Effect::Weather(w, v) => {
                    if rec.weather == Some(w) {
                        v
                    } else {
                        0.0
                    }
                }
            })
            .sum();
        z.push(zi);
        records.push(rec);
    }

    let a = calibrate_intercepts(&z, &cfg.severity_marginals);
    let mut sev_rng = rng::stream(cfg.seed, 0x73657665);
    for (rec, &zi) in records.iter_mut().zip(&z) {
        let p = softmax_severity(&a, zi);
        let u: f64 = sev_rng.random();
        let mut acc = 0.0;
        let mut level = SeverityLevel::Fatal;
        for s in SeverityLevel::ALL {
            acc += p[s.index()];
            if u < acc {
                level = s;
                break;
            }
        }
        rec.severity = Some(level);
    }

    if cfg.missing_rate > 0.0 {
        let mut miss_rng = rng::stream(cfg.seed, 0x6d697373);
        for rec in records.iter_mut() {
            for f in rec.flags.iter_mut() {
                if miss_rng.random::<f64>() < cfg.missing_rate {
                    *f = None;
                }
            }
            if miss_rng.random::<f64>() < cfg.missing_rate {
                rec.weather = None;
            }
            if miss_rng.random::<f64>() < cfg.missing_rate {
                rec.illumination = None;
            }
            if miss_rng.random::<f64>() < cfg.missing_rate {
                rec.road_condition = None;
            }
        }
    }

    let planted_defects = (cfg.defect_rate * cfg.n_records as f64).round() as usize;
    let mut defect_rng = rng::stream(cfg.seed, 0x64656665);
    let mut chosen = index::sample(&mut defect_rng, cfg.n_records, planted_defects).into_vec();
    chosen.sort_unstable();
    for (k, i) in chosen.into_iter().enumerate() {
        let rec = &mut records[i];
        match k % 4 {
            0 => rec.severity = None,
            1 => {
                let lon = rec.location.map_or(-77.0, |p| p.lon());
                rec.location = Some(GeoPoint::new(cfg.region.min_lat - 0.3, lon).expect("valid point"));
            }
            2 => rec.occurred_at = None,
            _ => rec.location = None,
        }
    }

    Ok(SyntheticDataset { records, weather, planted_defects })
}

fn days_in_month(year: i32, month: u32) -> u32 {
    let next = if month == 12 { NaiveDate::from_ymd_opt(year + 1, 1, 1) } else { NaiveDate::from_ymd_opt(year, month + 1, 1) };
    next.and_then(|d| d.pred_opt()).map_or(28, |d| d.day())
}
