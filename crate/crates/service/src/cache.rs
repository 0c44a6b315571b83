use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use crashcast_core::cell::CellId;
use crashcast_core::model::{WeatherCategory, WeatherSnapshot};
use parking_lot::{Mutex, RwLock};
use serde::Serialize;

use crate::predictor::PredictionCore;

/// Key of a cached prediction. `scenario` is 0 for plain requests and a hash
/// of the what-if overrides otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct CacheKey {
    pub cell: CellId,
    pub bucket: i64,
    pub weather: WeatherCategory,
    pub scenario: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LruConfig {
    pub capacity: usize,
    pub pin_confidence: f64,
    pub pin_fraction_max: f64,
}

impl LruConfig {
    pub fn pin_cap(&self) -> usize {
        (self.capacity as f64 * self.pin_fraction_max).floor() as usize
    }
}

struct Slot<V> {
    value: V,
    pinned: bool,
    tick: u64,
}

struct Inner<K, V> {
    map: HashMap<K, Slot<V>>,
    unpinned: BTreeMap<u64, K>,
    pinned: BTreeMap<u64, K>,
    tick: u64,
}

impl<K: Clone + Eq + Hash, V> Inner<K, V> {
    fn order(&mut self, pinned: bool) -> &mut BTreeMap<u64, K> {
        if pinned {
            &mut self.pinned
        } else {
            &mut self.unpinned
        }
    }

    fn touch(&mut self, key: &K) {
        self.tick += 1;
        let tick = self.tick;
        let Some(slot) = self.map.get_mut(key) else { return };
        let (old, pinned) = (slot.tick, slot.pinned);
        slot.tick = tick;
        let order = self.order(pinned);
        order.remove(&old);
        order.insert(tick, key.clone());
    }

    fn evict_one(&mut self) -> Option<K> {
        let (_, key) = self.unpinned.pop_first().or_else(|| self.pinned.pop_first())?;
        self.map.remove(&key);
        Some(key)
    }
}

/// LRU cache in which high-confidence entries are pinned, up to a share of
/// capacity. Pinned entries are evicted only when nothing else is left.
pub struct SecondaryCache<K, V> {
    config: LruConfig,
    inner: Mutex<Inner<K, V>>,
}

impl<K: Clone + Eq + Hash, V: Clone> SecondaryCache<K, V> {
    pub fn new(config: LruConfig) -> Self {
        SecondaryCache {
            config,
            inner: Mutex::new(Inner { map: HashMap::new(), unpinned: BTreeMap::new(), pinned: BTreeMap::new(), tick: 0 }),
        }
    }

    pub fn config(&self) -> LruConfig {
        self.config
    }

    pub fn get(&self, key: &K) -> Option<V> {
        let mut inner = self.inner.lock();
        let v = inner.map.get(key)?.value.clone();
        inner.touch(key);
        Some(v)
    }

    /// Inserts or replaces `key` and returns the evicted keys.
    pub fn insert(&self, key: K, value: V, confidence: f64) -> Vec<K> {
        let mut inner = self.inner.lock();
        if let Some(slot) = inner.map.get_mut(&key) {
            slot.value = value;
            inner.touch(&key);
            return Vec::new();
        }
        let mut evicted = Vec::new();
        while inner.map.len() >= self.config.capacity {
            match inner.evict_one() {
                Some(k) => evicted.push(k),
                None => break,
            }
        }
        inner.tick += 1;
        let tick = inner.tick;
        let pinned = confidence >= self.config.pin_confidence && inner.pinned.len() < self.config.pin_cap();
        inner.order(pinned).insert(tick, key.clone());
        inner.map.insert(key, Slot { value, pinned, tick });
        evicted
    }

    pub fn len(&self) -> usize {
        self.inner.lock().map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pinned_len(&self) -> usize {
        self.inner.lock().pinned.len()
    }

    pub fn contains(&self, key: &K) -> bool {
        self.inner.lock().map.contains_key(key)
    }
}

/// One complete precomputed snapshot of the primary cache.
#[derive(Debug, Clone)]
pub struct Generation {
    pub id: u64,
    pub bucket: i64,
    pub weather: WeatherSnapshot,
    pub built_at: DateTime<Utc>,
    pub entries: HashMap<CellId, Arc<PredictionCore>>,
}

impl Generation {
    pub fn empty() -> Self {
        Generation {
            id: 0,
            bucket: i64::MIN,
            weather: WeatherSnapshot::typical(WeatherCategory::CLEAR, DateTime::default()),
            built_at: DateTime::default(),
            entries: HashMap::new(),
        }
    }

    pub fn get(&self, key: &CacheKey) -> Option<Arc<PredictionCore>> {
        if key.scenario != 0 || key.bucket != self.bucket || key.weather != self.weather.category {
            return None;
        }
        self.entries.get(&key.cell).cloned()
    }
}

/// Precomputed predictions for every active cell, replaced wholesale. A
/// lookup reads exactly one generation.
pub struct PrimaryCache {
    current: RwLock<Arc<Generation>>,
}

impl Default for PrimaryCache {
    fn default() -> Self {
        PrimaryCache { current: RwLock::new(Arc::new(Generation::empty())) }
    }
}

impl PrimaryCache {
    pub fn snapshot(&self) -> Arc<Generation> {
        self.current.read().clone()
    }

    pub fn swap(&self, generation: Generation) {
        *self.current.write() = Arc::new(generation);
    }

    pub fn get(&self, key: &CacheKey) -> Option<Arc<PredictionCore>> {
        self.snapshot().get(key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(capacity: usize) -> LruConfig {
        LruConfig { capacity, pin_confidence: 0.9, pin_fraction_max: 0.1 }
    }

    #[test]
    fn lru_trace() {
        let c = SecondaryCache::new(cfg(2));
        c.insert("A", 1, 0.5);
        c.insert("B", 2, 0.5);
        assert_eq!(c.get(&"A"), Some(1));
        assert_eq!(c.insert("C", 3, 0.5), vec!["B"]);
        assert!(c.contains(&"A") && c.contains(&"C") && !c.contains(&"B"));
    }

    #[test]
    fn pinned_entry_survives_sweep() {
        let c = SecondaryCache::new(cfg(10));
        c.insert(0, 0, 0.95);
        // Over the pin cap of one, so it competes as a normal entry.
        c.insert(1, 1, 0.97);
        for k in 2..10 {
            c.insert(k, k, 0.2);
        }
        assert_eq!(c.pinned_len(), 1);
        let mut evicted = Vec::new();
        for k in 10..20 {
            evicted.extend(c.insert(k, k, 0.2));
        }
        assert!(c.contains(&0));
        assert_eq!(evicted, (1..10).chain(10..11).collect::<Vec<_>>());
        assert_eq!(c.len(), 10);
    }

    #[test]
    fn all_pinned_still_bounded() {
        let c = SecondaryCache::new(LruConfig { capacity: 2, pin_confidence: 0.5, pin_fraction_max: 0.9 });
        c.insert(1, 1, 1.0);
        c.insert(2, 2, 1.0);
        c.insert(3, 3, 1.0);
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn concurrent_storm_respects_capacity() {
        let c = std::sync::Arc::new(SecondaryCache::new(cfg(64)));
        std::thread::scope(|s| {
            for t in 0..8u64 {
                let c = c.clone();
                s.spawn(move || {
                    for i in 0..2000u64 {
                        c.insert(t * 10_000 + i % 300, i, (i % 10) as f64 / 10.0);
                        let _ = c.get(&(i % 97));
                        assert!(c.len() <= 64);
                    }
                });
            }
        });
        assert!(c.len() <= 64);
        assert!(c.pinned_len() <= 6);
    }

    proptest! {
        #[test]
        fn size_never_exceeds_capacity(ops in proptest::collection::vec((0u8..40, 0u8..10, any::<bool>()), 1..400), cap in 1usize..20) {
            let c = SecondaryCache::new(cfg(cap));
            for (k, conf, read) in ops {
                if read {
                    let _ = c.get(&k);
                } else {
                    c.insert(k, k, conf as f64 / 9.0);
                }
                prop_assert!(c.len() <= cap);
                prop_assert!(c.pinned_len() <= cfg(cap).pin_cap().max(0));
            }
        }
    }
}
