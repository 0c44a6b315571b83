use chrono::{DateTime, Duration, Utc};
use parking_lot::Mutex;

/// Source of service time, so refresh cadence and buckets are testable.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Clock that moves only when told to.
#[derive(Debug)]
pub struct ManualClock {
    now: Mutex<DateTime<Utc>>,
}

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        ManualClock { now: Mutex::new(start) }
    }

    pub fn set(&self, t: DateTime<Utc>) {
        *self.now.lock() = t;
    }

    pub fn advance(&self, by: Duration) {
        *self.now.lock() += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.now.lock()
    }
}

pub const BUCKET_MINUTES: i64 = 15;

/// Index of the 15-minute bucket containing `t`, aligned to the hour.
pub fn time_bucket(t: DateTime<Utc>) -> i64 {
    t.timestamp().div_euclid(BUCKET_MINUTES * 60)
}

pub fn bucket_start(bucket: i64) -> DateTime<Utc> {
    DateTime::from_timestamp(bucket * BUCKET_MINUTES * 60, 0).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn buckets_align_to_quarter_hours() {
        let t = Utc.with_ymd_and_hms(2023, 1, 5, 10, 14, 59).unwrap();
        let b = time_bucket(t);
        assert_eq!(bucket_start(b), Utc.with_ymd_and_hms(2023, 1, 5, 10, 0, 0).unwrap());
        assert_eq!(time_bucket(t + Duration::seconds(1)), b + 1);
        let c = ManualClock::new(t);
        c.advance(Duration::minutes(30));
        assert_eq!(time_bucket(c.now()), b + 2);
    }
}
