//! Context-conditioned booster weights from decayed per-bucket accuracy.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Datelike, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::features::FEATURE_NAMES;
use crate::model::WeatherCategory;

pub const DEFAULT_MIN_BUCKET_COUNT: usize = 50;
pub const DEFAULT_DECAY: f64 = 0.995;

/// Weather category × 4-hour bin × weekend: 72 buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ContextBucket {
    pub weather_category: u8,
    pub hour_bin: u8,
    pub weekend: bool,
}

impl ContextBucket {
    pub fn new(weather: WeatherCategory, hour: u32, weekend: bool) -> Self {
        ContextBucket { weather_category: weather.code(), hour_bin: (hour / 4).min(5) as u8, weekend }
    }

    pub fn at(weather: WeatherCategory, at: DateTime<Utc>) -> Self {
        Self::new(weather, at.hour(), at.weekday().number_from_monday() >= 6)
    }

    /// Recovers the bucket from an assembled feature row: WEATHER1 and the
    /// hour angle. Unknown weather maps to clear.
    pub fn from_features(row: &[f64], weekend: bool) -> Self {
        let col = |name: &str| {
            FEATURE_NAMES.iter().position(|n| *n == name).and_then(|i| row.get(i).copied()).unwrap_or(f64::NAN)
        };
        let w = col("WEATHER1");
        let weather = if w.is_finite() { WeatherCategory::new(w.round() as u8).unwrap_or(WeatherCategory::CLEAR) } else { WeatherCategory::CLEAR };
        let angle = col("hour_sin").atan2(col("hour_cos"));
        let hour = if angle.is_finite() { (angle.rem_euclid(std::f64::consts::TAU) / std::f64::consts::TAU * 24.0).round() as u32 % 24 } else { 0 };
        Self::new(weather, hour, weekend)
    }

    pub fn all() -> impl Iterator<Item = ContextBucket> {
        (1..=6u8).flat_map(|w| {
            (0..6u8).flat_map(move |h| [false, true].map(|weekend| ContextBucket { weather_category: w, hour_bin: h, weekend }))
        })
    }
}

impl fmt::Display for ContextBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}-h{}-{}", self.weather_category, self.hour_bin, if self.weekend { "we" } else { "wd" })
    }
}

/// Exponentially decayed correctness per booster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTrack {
    /// Decayed count of correct predictions per booster.
    pub correct: Vec<f64>,
    /// Decayed observation count.
    pub mass: f64,
    pub count: usize,
}

impl AccuracyTrack {
    fn new(m: usize) -> Self {
        AccuracyTrack { correct: vec![0.0; m], mass: 0.0, count: 0 }
    }

    fn update(&mut self, hits: &[bool], decay: f64) {
        for (c, h) in self.correct.iter_mut().zip(hits) {
            *c = decay * *c + f64::from(u8::from(*h));
        }
        self.mass = decay * self.mass + 1.0;
        self.count += 1;
    }

    pub fn accuracy(&self) -> Vec<f64> {
        self.correct.iter().map(|c| if self.mass > 0.0 { c / self.mass } else { 0.0 }).collect()
    }

    /// `a_m² / Σ a²`, uniform when every accuracy is zero.
    pub fn weights(&self) -> Vec<f64> {
        let a = self.accuracy();
        let s: f64 = a.iter().map(|x| x * x).sum();
        if s > 0.0 {
            a.iter().map(|x| x * x / s).collect()
        } else {
            vec![1.0 / a.len() as f64; a.len()]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaWeights {
    pub n_boosters: usize,
    pub decay: f64,
    pub min_bucket_count: usize,
    pub global: AccuracyTrack,
    /// Keyed by the bucket's display form.
    pub buckets: BTreeMap<String, AccuracyTrack>,
}

impl MetaWeights {
    pub fn new(n_boosters: usize, decay: f64, min_bucket_count: usize) -> Self {
        MetaWeights {
            n_boosters,
            decay,
            min_bucket_count,
            global: AccuracyTrack::new(n_boosters),
            buckets: BTreeMap::new(),
        }
    }

    pub fn observe(&mut self, bucket: ContextBucket, hits: &[bool]) {
        self.global.update(hits, self.decay);
        self.buckets
            .entry(bucket.to_string())
            .or_insert_with(|| AccuracyTrack::new(self.n_boosters))
            .update(hits, self.decay);
    }

    pub fn global_weights(&self) -> Vec<f64> {
        self.global.weights()
    }

    pub fn weights(&self, bucket: ContextBucket) -> Vec<f64> {
        match self.buckets.get(&bucket.to_string()) {
            Some(t) if t.count >= self.min_bucket_count => t.weights(),
            _ => self.global.weights(),
        }
    }
}

/// Replays a validation stream of (bucket, per-booster correctness).
pub fn fit_meta_weights<'a>(
    n_boosters: usize,
    stream: impl IntoIterator<Item = (ContextBucket, &'a [bool])>,
    decay: f64,
    min_bucket_count: usize,
) -> MetaWeights {
    let mut m = MetaWeights::new(n_boosters, decay, min_bucket_count);
    for (b, hits) in stream {
        m.observe(b, hits);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{cyclical_encode, N_FEATURES};

    #[test]
    fn seventy_two_buckets() {
        let all: Vec<_> = ContextBucket::all().collect();
        assert_eq!(all.len(), 72);
        let keys: std::collections::BTreeSet<String> = all.iter().map(|b| b.to_string()).collect();
        assert_eq!(keys.len(), 72);
    }

    #[test]
    fn bucket_from_feature_row() {
        for hour in 0..24u32 {
            let mut row = [0.0; N_FEATURES];
            let (s, c) = cyclical_encode(hour as f64, 24.0);
            row[7] = s;
            row[8] = c;
            row[27] = 4.0;
            let b = ContextBucket::from_features(&row, true);
            assert_eq!(b, ContextBucket::new(WeatherCategory::SNOW, hour, true));
        }
    }

    #[test]
    fn always_right_vs_always_wrong() {
        let b = ContextBucket::new(WeatherCategory::RAIN, 8, false);
        let hits = [true, false];
        let m = fit_meta_weights(2, (0..200).map(|_| (b, &hits[..])), DEFAULT_DECAY, DEFAULT_MIN_BUCKET_COUNT);
        assert_eq!(m.weights(b), vec![1.0, 0.0]);
    }

    #[test]
    fn empty_stream_is_uniform_everywhere() {
        let m = fit_meta_weights(2, std::iter::empty(), DEFAULT_DECAY, DEFAULT_MIN_BUCKET_COUNT);
        for b in ContextBucket::all() {
            assert_eq!(m.weights(b), vec![0.5, 0.5]);
        }
    }

    #[test]
    fn sparse_bucket_uses_global() {
        let busy = ContextBucket::new(WeatherCategory::CLEAR, 8, false);
        let sparse = ContextBucket::new(WeatherCategory::FOG, 2, true);
        let (a, b) = ([true, false], [false, true]);
        let stream = (0..100).map(|_| (busy, &a[..])).chain((0..10).map(|_| (sparse, &b[..])));
        let m = fit_meta_weights(2, stream, DEFAULT_DECAY, DEFAULT_MIN_BUCKET_COUNT);
        assert_eq!(m.weights(sparse), m.global_weights());
        for b in ContextBucket::all() {
            let w = m.weights(b);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12 && w.iter().all(|x| *x >= 0.0));
        }
    }

    #[test]
    fn decayed_accuracy_closed_form() {
        let mut t = AccuracyTrack::new(1);
        let d: f64 = 0.9;
        for i in 0..20 {
            t.update(&[i % 2 == 0], d);
        }
        let num: f64 = (0..20).filter(|i| i % 2 == 0).map(|i| d.powi(19 - i)).sum();
        let den: f64 = (0..20).map(|i| d.powi(19 - i)).sum();
        assert!((t.accuracy()[0] - num / den).abs() < 1e-12);
    }
}
