use crate::model::CrashRecord;

/// Location, occurred_at, severity and the 15 flags.
pub const CRITICAL_FIELD_COUNT: usize = 18;

pub fn missing_critical_fraction(record: &CrashRecord) -> f64 {
    let missing = usize::from(record.location.is_none())
        + usize::from(record.occurred_at.is_none())
        + usize::from(record.severity.is_none())
        + record.flags.iter().filter(|f| f.is_none()).count();
    missing as f64 / CRITICAL_FIELD_COUNT as f64
}

/// Splits into (training set, robustness hold-out); a record goes to the
/// hold-out when its missing-critical fraction exceeds `threshold`.
pub fn exclude_high_missingness(records: &[CrashRecord], threshold: f64) -> (Vec<CrashRecord>, Vec<CrashRecord>) {
    records.iter().cloned().partition(|r| missing_critical_fraction(r) <= threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GeoPoint, SeverityLevel};
    use chrono::{TimeZone, Utc};

    fn full() -> CrashRecord {
        let mut r = CrashRecord::blank("1", Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap());
        r.location = Some(GeoPoint::new(40.0, -77.0).unwrap());
        r.severity = Some(SeverityLevel::Minor);
        r.flags = [Some(false); 15];
        r
    }

    #[test]
    fn complete_record_trains() {
        let (train, hold) = exclude_high_missingness(&[full()], 0.30);
        assert_eq!((train.len(), hold.len()), (1, 0));
    }

    #[test]
    fn forty_percent_missing_is_held_out() {
        let mut r = full();
        r.location = None;
        r.severity = None;
        for f in r.flags.iter_mut().take(5) {
            *f = None;
        }
        // 7 of 18 ≈ 0.389
        assert!((missing_critical_fraction(&r) - 7.0 / 18.0).abs() < 1e-12);
        let (train, hold) = exclude_high_missingness(&[r, full()], 0.30);
        assert_eq!((train.len(), hold.len()), (1, 1));
    }

    #[test]
    fn exactly_at_threshold_stays_in_training() {
        let mut r = full();
        for f in r.flags.iter_mut().take(3) {
            *f = None;
        }
        assert!(missing_critical_fraction(&r) <= 0.30);
        assert_eq!(exclude_high_missingness(&[r], 0.30).0.len(), 1);
    }
}
