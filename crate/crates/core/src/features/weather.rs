//! Hourly weather timeline and its CSV fixture format.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::model::{WeatherCategory, WeatherSnapshot};

pub const WEATHER_CSV_HEADER: [&str; 6] =
    ["observed_at", "category", "temperature_c", "precipitation_mm_hr", "visibility_km", "wind_kmh"];

/// Snapshots sorted by observation time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeatherTimeline {
    snapshots: Vec<WeatherSnapshot>,
}

#[derive(Serialize, Deserialize)]
struct Row {
    observed_at: DateTime<Utc>,
    category: String,
    temperature_c: f64,
    precipitation_mm_hr: f64,
    visibility_km: f64,
    wind_kmh: f64,
}

impl WeatherTimeline {
    pub fn new(mut snapshots: Vec<WeatherSnapshot>) -> Self {
        snapshots.sort_by_key(|s| s.observed_at);
        WeatherTimeline { snapshots }
    }

    pub fn snapshots(&self) -> &[WeatherSnapshot] {
        &self.snapshots
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Latest observation at or before `at`, if it is no older than `max_age`.
    pub fn at(&self, at: DateTime<Utc>, max_age: Duration) -> Option<WeatherSnapshot> {
        let pos = self.snapshots.partition_point(|s| s.observed_at <= at);
        let s = self.snapshots.get(pos.checked_sub(1)?)?;
        (at - s.observed_at <= max_age).then_some(*s)
    }

    /// Observations in `(at - window, at]`.
    pub fn window(&self, at: DateTime<Utc>, window: Duration) -> &[WeatherSnapshot] {
        let hi = self.snapshots.partition_point(|s| s.observed_at <= at);
        let lo = self.snapshots.partition_point(|s| s.observed_at <= at - window);
        &self.snapshots[lo..hi.max(lo)]
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, FeatureError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut out = Vec::new();
        for (i, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| FeatureError::Fixture(format!("row {}: {e}", i + 2)))?;
            let category: WeatherCategory =
                row.category.parse().map_err(|e| FeatureError::Fixture(format!("row {}: {e}", i + 2)))?;
            let snap = WeatherSnapshot::new(
                category,
                row.temperature_c,
                row.precipitation_mm_hr,
                row.visibility_km,
                row.wind_kmh,
                row.observed_at,
            )
            .map_err(|e| FeatureError::Fixture(format!("row {}: {e}", i + 2)))?;
            out.push(snap);
        }
        Ok(WeatherTimeline::new(out))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| FeatureError::Fixture(format!("{}: {e}", path.display())))?;
        Self::read_csv(file)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), FeatureError> {
        let mut wtr = csv::Writer::from_writer(writer);
        for s in &self.snapshots {
            wtr.serialize(Row {
                observed_at: s.observed_at,
                category: s.category.code().to_string(),
                temperature_c: s.temperature_c,
                precipitation_mm_hr: s.precipitation_mm_hr,
                visibility_km: s.visibility_km,
                wind_kmh: s.wind_kmh,
            })
            .map_err(|e| FeatureError::Fixture(e.to_string()))?;
        }
        wtr.flush().map_err(|e| FeatureError::Fixture(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FeatureError> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| FeatureError::Fixture(format!("{}: {e}", path.display())))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}
