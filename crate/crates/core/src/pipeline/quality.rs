//! Statistical-process-control validation with per-jurisdiction limits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::model::{BoundingBox, CrashRecord};

/// Groups smaller than this use the global limits.
pub const MIN_GROUP_SIZE: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlLimit {
    pub mean: f64,
    pub sigma: f64,
    pub k: f64,
}

impl ControlLimit {
    /// Mean and sample standard deviation. Values are sorted first so the
    /// result does not depend on input order.
    fn fit(values: &mut [f64], k: f64) -> ControlLimit {
        values.sort_by(|a, b| a.total_cmp(b));
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        let sigma = if values.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
        ControlLimit { mean, sigma, k }
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.k * self.sigma
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.k * self.sigma
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower() && v <= self.upper()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldLimits {
    pub lat: ControlLimit,
    pub lon: ControlLimit,
    pub hour: ControlLimit,
}

impl FieldLimits {
    fn fit(records: &[&CrashRecord], k: f64) -> FieldLimits {
        let mut lat: Vec<f64> = records.iter().filter_map(|r| r.location.map(|p| p.lat())).collect();
        let mut lon: Vec<f64> = records.iter().filter_map(|r| r.location.map(|p| p.lon())).collect();
        let mut hour: Vec<f64> = records.iter().map(|r| r.hour_of_day as f64).collect();
        FieldLimits {
            lat: ControlLimit::fit(&mut lat, k),
            lon: ControlLimit::fit(&mut lon, k),
            hour: ControlLimit::fit(&mut hour, k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupThresholds {
    pub count: usize,
    /// Set when the group is too small for its own limits.
    pub uses_global: bool,
    pub limits: FieldLimits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupKey {
    #[serde(rename = "COUNTY")]
    County,
    #[serde(rename = "NONE")]
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityThresholds {
    pub group_by: GroupKey,
    pub k: f64,
    pub global: FieldLimits,
    pub groups: BTreeMap<String, GroupThresholds>,
}

impl QualityThresholds {
    pub fn limits_for(&self, record: &CrashRecord) -> &FieldLimits {
        match self.group_by {
            GroupKey::County => self.groups.get(&record.county).map(|g| &g.limits).unwrap_or(&self.global),
            GroupKey::None => &self.global,
        }
    }
}

/// Fits mean ± k·sigma limits on latitude, longitude and hour, globally and
/// per group. Only records with a location contribute.
pub fn fit_adaptive_thresholds(
    records: &[CrashRecord],
    k: f64,
    group_by: GroupKey,
) -> Result<QualityThresholds, PipelineError> {
    if !(k > 0.0) {
        return Err(PipelineError::InvalidConfig(format!("k must be positive, got {k}")));
    }
    let located: Vec<&CrashRecord> = records.iter().filter(|r| r.location.is_some()).collect();
    if located.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    let global = FieldLimits::fit(&located, k);
    let mut groups = BTreeMap::new();
    if group_by == GroupKey::County {
        let mut by_county: BTreeMap<&str, Vec<&CrashRecord>> = BTreeMap::new();
        for r in &located {
            by_county.entry(r.county.as_str()).or_default().push(r);
        }
        for (county, members) in by_county {
            let uses_global = members.len() < MIN_GROUP_SIZE;
            let limits = if uses_global { global } else { FieldLimits::fit(&members, k) };
            groups.insert(county.to_string(), GroupThresholds { count: members.len(), uses_global, limits });
        }
    }
    Ok(QualityThresholds { group_by, k, global, groups })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    MissingCritical,
    CoordinateInconsistent,
    SeverityAmbiguous,
    ControlLimitViolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub input_count: usize,
    pub retained_count: usize,
    pub rejection_reasons: BTreeMap<RejectReason, usize>,
    pub retention_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub region: BoundingBox,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig { region: BoundingBox::PENNSYLVANIA }
    }
}

fn check(record: &CrashRecord, thresholds: &QualityThresholds, cfg: &ValidationConfig) -> Option<RejectReason> {
    let Some(location) = record.location else {
        return Some(RejectReason::MissingCritical);
    };
    if record.occurred_at.is_none() {
        return Some(RejectReason::MissingCritical);
    }
    if record.severity.is_none() || !record.has_hour_and_month_in_range() {
        return Some(RejectReason::SeverityAmbiguous);
    }
    if !cfg.region.contains(location) {
        return Some(RejectReason::CoordinateInconsistent);
    }
    let limits = thresholds.limits_for(record);
    if !limits.lat.contains(location.lat())
        || !limits.lon.contains(location.lon())
        || !limits.hour.contains(record.hour_of_day as f64)
    {
        return Some(RejectReason::ControlLimitViolation);
    }
    None
}

/// Splits records into retained and rejected; every rejection is tallied
/// under exactly one reason.
pub fn validate_batch(
    records: &[CrashRecord],
    thresholds: &QualityThresholds,
    cfg: &ValidationConfig,
) -> (Vec<CrashRecord>, ValidationReport) {
    let mut retained = Vec::with_capacity(records.len());
    let mut reasons: BTreeMap<RejectReason, usize> = BTreeMap::new();
    for r in records {
        match check(r, thresholds, cfg) {
            None => retained.push(r.clone()),
            Some(reason) => *reasons.entry(reason).or_default() += 1,
        }
    }
    let report = ValidationReport {
        input_count: records.len(),
        retained_count: retained.len(),
        rejection_reasons: reasons,
        retention_rate: if records.is_empty() { 1.0 } else { retained.len() as f64 / records.len() as f64 },
    };
    (retained, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GeoPoint, SeverityLevel};
    use chrono::{TimeZone, Utc};
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn rec(i: usize, lat: f64, lon: f64, county: &str) -> CrashRecord {
        let mut r = CrashRecord::blank(i.to_string(), Utc.with_ymd_and_hms(2023, 3, 1, 12, 0, 0).unwrap());
        r.location = Some(GeoPoint::new(lat, lon).unwrap());
        r.severity = Some(SeverityLevel::Minor);
        r.county = county.into();
        r
    }

    #[test]
    fn identical_values_collapse_limits() {
        let records: Vec<_> = (0..40).map(|i| rec(i, 40.5, -77.0, "A")).collect();
        let t = fit_adaptive_thresholds(&records, 3.0, GroupKey::County).unwrap();
        let g = &t.groups["A"];
        assert_eq!(g.limits.lat.sigma, 0.0);
        assert_eq!(g.limits.lat.lower(), 40.5);
        assert_eq!(g.limits.lat.upper(), 40.5);
    }

    #[test]
    fn gaussian_latitudes_give_three_sigma_band() {
        let mut rng = crate::rng::seeded(11);
        let normal = Normal::new(40.0, 0.5).unwrap();
        let lats: Vec<f64> = (0..5000).map(|_| normal.sample(&mut rng)).collect();
        let records: Vec<_> = lats.iter().enumerate().map(|(i, &lat)| rec(i, lat, -77.0, "A")).collect();
        // Welford one-pass oracle
        let (mut n, mut mean, mut m2) = (0.0f64, 0.0f64, 0.0f64);
        for &x in &lats {
            n += 1.0;
            let d = x - mean;
            mean += d / n;
            m2 += d * (x - mean);
        }
        let sd = (m2 / (n - 1.0)).sqrt();
        let t = fit_adaptive_thresholds(&records, 3.0, GroupKey::County).unwrap();
        let lim = t.groups["A"].limits.lat;
        assert!((lim.lower() - (mean - 3.0 * sd)).abs() < 1e-9);
        assert!((lim.upper() - (mean + 3.0 * sd)).abs() < 1e-9);
        assert!((lim.lower() - 38.5).abs() < 0.1 && (lim.upper() - 41.5).abs() < 0.1);
    }

    #[test]
    fn small_group_uses_global_limits() {
        let mut records: Vec<_> = (0..100).map(|i| rec(i, 40.0 + (i % 7) as f64 * 0.01, -77.0, "BIG")).collect();
        records.extend((0..10).map(|i| rec(200 + i, 41.0, -76.0, "SMALL")));
        let t = fit_adaptive_thresholds(&records, 3.0, GroupKey::County).unwrap();
        assert!(t.groups["SMALL"].uses_global);
        assert!(!t.groups["BIG"].uses_global);
        assert_eq!(t.groups["SMALL"].limits, t.global);
    }

    #[test]
    fn limits_are_order_independent() {
        let mut rng = crate::rng::seeded(3);
        let mut records: Vec<_> =
            (0..200).map(|i| rec(i, 40.0 + rng.random::<f64>(), -77.0 + rng.random::<f64>(), "A")).collect();
        let a = fit_adaptive_thresholds(&records, 3.0, GroupKey::County).unwrap();
        records.reverse();
        let b = fit_adaptive_thresholds(&records, 3.0, GroupKey::County).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(fit_adaptive_thresholds(&[], 3.0, GroupKey::County), Err(PipelineError::EmptyInput)));
    }

    #[test]
    fn rejection_reasons() {
        let mut records: Vec<_> = (0..50).map(|i| rec(i, 40.0 + (i % 5) as f64 * 0.1, -77.0, "A")).collect();
        let t = fit_adaptive_thresholds(&records, 3.0, GroupKey::County).unwrap();
        let mut no_sev = rec(100, 40.1, -77.0, "A");
        no_sev.severity = None;
        let origin = rec(101, 0.0, 0.0, "A");
        let mut no_loc = rec(102, 40.1, -77.0, "A");
        no_loc.location = None;
        let far = rec(103, 42.4, -77.0, "A");
        records.extend([no_sev, origin, no_loc, far]);
        let (kept, report) = validate_batch(&records, &t, &ValidationConfig::default());
        assert_eq!(kept.len(), 50);
        assert_eq!(report.rejection_reasons[&RejectReason::SeverityAmbiguous], 1);
        assert_eq!(report.rejection_reasons[&RejectReason::CoordinateInconsistent], 1);
        assert_eq!(report.rejection_reasons[&RejectReason::MissingCritical], 1);
        assert_eq!(report.rejection_reasons[&RejectReason::ControlLimitViolation], 1);
        let json = serde_json::to_value(&report).unwrap();
        assert_eq!(json["rejection_reasons"]["severity_ambiguous"], 1);
        assert!(json.get("retention_rate").is_some());
    }
}
