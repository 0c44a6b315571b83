use chrono::{DateTime, Datelike, Duration, Utc};
use crashcast_core::features::WeatherTimeline;
use crashcast_core::model::WeatherSnapshot;

use crate::ServiceError;

pub const RETENTION_HOURS: i64 = 24;

/// Current conditions for the service; a live provider would implement this.
pub trait WeatherSource: Send + Sync {
    fn current(&self, at: DateTime<Utc>) -> Result<WeatherSnapshot, ServiceError>;
}

/// Replays a recorded hourly timeline. Times outside the recording are
/// shifted by whole years into it, so a one-year fixture covers any date.
#[derive(Debug, Clone)]
pub struct FixtureWeather {
    timeline: WeatherTimeline,
}

impl FixtureWeather {
    pub fn new(timeline: WeatherTimeline) -> Self {
        FixtureWeather { timeline }
    }

    fn lookup(&self, at: DateTime<Utc>) -> Option<WeatherSnapshot> {
        self.timeline.at(at, Duration::hours(RETENTION_HOURS))
    }
}

impl WeatherSource for FixtureWeather {
    fn current(&self, at: DateTime<Utc>) -> Result<WeatherSnapshot, ServiceError> {
        let snaps = self.timeline.snapshots();
        let (first, last) = match (snaps.first(), snaps.last()) {
            (Some(f), Some(l)) => (f.observed_at, l.observed_at),
            _ => return Err(ServiceError::WeatherUnavailable("empty weather fixture".into())),
        };
        if let Some(s) = self.lookup(at) {
            return Ok(s);
        }
        for year in [first.year(), last.year()] {
            if let Some(shifted) = at.with_year(year) {
                if let Some(s) = self.lookup(shifted) {
                    return Ok(WeatherSnapshot { observed_at: at - (shifted - s.observed_at), ..s });
                }
            }
        }
        Err(ServiceError::WeatherUnavailable(format!("no observation within {RETENTION_HOURS} h of {at}")))
    }
}

/// Fixed conditions, for tests.
#[derive(Debug, Clone, Copy)]
pub struct ConstantWeather(pub WeatherSnapshot);

impl WeatherSource for ConstantWeather {
    fn current(&self, at: DateTime<Utc>) -> Result<WeatherSnapshot, ServiceError> {
        Ok(WeatherSnapshot { observed_at: at, ..self.0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use crashcast_core::model::WeatherCategory;

    #[test]
    fn replays_across_years() {
        let t0 = Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap();
        let snaps: Vec<WeatherSnapshot> = (0..48)
            .map(|h| WeatherSnapshot::typical(WeatherCategory::ALL[h % 6], t0 + Duration::hours(h as i64)))
            .collect();
        let w = FixtureWeather::new(WeatherTimeline::new(snaps));
        let direct = w.current(t0 + Duration::minutes(130)).unwrap();
        assert_eq!(direct.category, WeatherCategory::ALL[2]);
        let later = w.current(Utc.with_ymd_and_hms(2026, 1, 1, 2, 10, 0).unwrap()).unwrap();
        assert_eq!(later.category, direct.category);
        assert!(w.current(Utc.with_ymd_and_hms(2023, 6, 1, 0, 0, 0).unwrap()).is_err());
    }
}
