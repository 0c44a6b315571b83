use std::path::{Path, PathBuf};

use crashcast_core::cell::MAX_RESOLUTION;
use crashcast_core::model::BoundingBox;
use serde::{Deserialize, Serialize};

use crate::ServiceError;

/// Service settings, read from a TOML file. Every key is optional. The
/// serving resolution belongs to the model bundle, fixed at training time.
///
/// ```toml
/// refresh_minutes = 15           # primary cache rebuild period
/// secondary_capacity = 500       # LRU entries
/// pin_confidence = 0.9           # confidence at which entries are pinned
/// pin_fraction_max = 0.1         # share of capacity that may be pinned
/// store_max_records = 5000000    # record log limit
/// store_resolution = 8           # grid resolution of the record index
/// hotspot_base_radius_m = 400.0  # display radius scale
/// drift_window = 1000
/// baseline_accuracy = 0.85       # used when the model bundle has none
/// region = [39.5, -80.6, 42.5, -74.6]  # min_lat, min_lon, max_lat, max_lon
/// recommendations = "recommendations.toml"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub refresh_minutes: i64,
    pub secondary_capacity: usize,
    pub pin_confidence: f64,
    pub pin_fraction_max: f64,
    pub store_max_records: usize,
    pub store_resolution: u8,
    pub hotspot_base_radius_m: f64,
    pub drift_window: usize,
    pub baseline_accuracy: f64,
    pub region: [f64; 4],
    pub recommendations: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            refresh_minutes: 15,
            secondary_capacity: 500,
            pin_confidence: 0.9,
            pin_fraction_max: 0.1,
            store_max_records: 5_000_000,
            store_resolution: crate::store::STORE_RESOLUTION,
            hotspot_base_radius_m: 400.0,
            drift_window: 1000,
            baseline_accuracy: 0.85,
            region: [39.5, -80.6, 42.5, -74.6],
            recommendations: None,
        }
    }
}

impl ServiceConfig {
    pub fn parse(text: &str) -> Result<Self, ServiceError> {
        let c: ServiceConfig = toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let mut c = Self::parse(&text)?;
        if let (Some(rel), Some(dir)) = (c.recommendations.as_ref(), path.parent()) {
            if rel.is_relative() {
                c.recommendations = Some(dir.join(rel));
            }
        }
        Ok(c)
    }

    /// Requests outside this box are rejected.
    pub fn region(&self) -> BoundingBox {
        let [a, b, c, d] = self.region;
        BoundingBox::new(a, b, c, d).unwrap_or(BoundingBox::PENNSYLVANIA)
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        let bad = |m: &str| Err(ServiceError::Config(m.to_string()));
        let [a, b, c, d] = self.region;
        if BoundingBox::new(a, b, c, d).is_err() {
            return bad("region is not a valid bounding box");
        }
        if !(self.pin_fraction_max > 0.0 && self.pin_fraction_max < 1.0) {
            return bad("pin_fraction_max must lie in (0, 1)");
        }
        if self.refresh_minutes < 1 || self.secondary_capacity == 0 || self.drift_window == 0 {
            return bad("refresh_minutes, secondary_capacity and drift_window must be positive");
        }
        if self.store_resolution > MAX_RESOLUTION {
            return bad("store_resolution exceeds the grid's finest level");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c = ServiceConfig::parse("secondary_capacity = 64\n").unwrap();
        assert_eq!(c.secondary_capacity, 64);
        assert_eq!(c.refresh_minutes, 15);
        assert!(ServiceConfig::parse("pin_fraction_max = 1.0").is_err());
        assert!(ServiceConfig::parse("unknown_key = 1").is_err());
    }
}
