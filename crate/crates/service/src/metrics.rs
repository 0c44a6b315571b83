use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

pub const LATENCY_WINDOW: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CacheTier {
    Primary,
    Secondary,
    Miss,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
}

/// Nearest-rank percentiles of `values`.
pub fn percentiles(values: &mut [f64]) -> Percentiles {
    if values.is_empty() {
        return Percentiles::default();
    }
    values.sort_by(f64::total_cmp);
    let at = |q: f64| values[((q * values.len() as f64).ceil() as usize).clamp(1, values.len()) - 1];
    Percentiles { p50: at(0.50), p95: at(0.95), p99: at(0.99) }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TierCounts {
    pub primary: u64,
    pub secondary: u64,
    pub miss: u64,
}

impl TierCounts {
    pub fn total(&self) -> u64 {
        self.primary + self.secondary + self.miss
    }

    pub fn hit_rate(&self) -> f64 {
        let t = self.total();
        if t == 0 {
            0.0
        } else {
            (self.primary + self.secondary) as f64 / t as f64
        }
    }
}

#[derive(Default)]
pub struct Metrics {
    primary: AtomicU64,
    secondary: AtomicU64,
    miss: AtomicU64,
    errors: AtomicU64,
    hotspot_requests: AtomicU64,
    crashes_inserted: AtomicU64,
    refreshes: AtomicU64,
    latencies: Mutex<VecDeque<f64>>,
}

impl Metrics {
    pub fn record(&self, tier: CacheTier, latency_ms: f64) {
        let c = match tier {
            CacheTier::Primary => &self.primary,
            CacheTier::Secondary => &self.secondary,
            CacheTier::Miss => &self.miss,
        };
        c.fetch_add(1, Ordering::Relaxed);
        let mut l = self.latencies.lock();
        if l.len() == LATENCY_WINDOW {
            l.pop_front();
        }
        l.push_back(latency_ms);
    }

    pub fn record_error(&self) {
        self.errors.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_hotspots(&self) {
        self.hotspot_requests.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_inserted(&self, n: usize) {
        self.crashes_inserted.fetch_add(n as u64, Ordering::Relaxed);
    }

    pub fn record_refresh(&self) {
        self.refreshes.fetch_add(1, Ordering::Relaxed);
    }

    pub fn tiers(&self) -> TierCounts {
        TierCounts {
            primary: self.primary.load(Ordering::Relaxed),
            secondary: self.secondary.load(Ordering::Relaxed),
            miss: self.miss.load(Ordering::Relaxed),
        }
    }

    pub fn counters(&self) -> Counters {
        let tiers = self.tiers();
        Counters {
            requests_total: tiers.total(),
            hit_rate: tiers.hit_rate(),
            tiers,
            errors: self.errors.load(Ordering::Relaxed),
            hotspot_requests: self.hotspot_requests.load(Ordering::Relaxed),
            crashes_inserted: self.crashes_inserted.load(Ordering::Relaxed),
            refreshes: self.refreshes.load(Ordering::Relaxed),
            latency_ms: percentiles(&mut self.latencies.lock().iter().copied().collect::<Vec<_>>()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub requests_total: u64,
    pub hit_rate: f64,
    pub tiers: TierCounts,
    pub errors: u64,
    pub hotspot_requests: u64,
    pub crashes_inserted: u64,
    pub refreshes: u64,
    /// Over the most recent predictions.
    pub latency_ms: Percentiles,
}
