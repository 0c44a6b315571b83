use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::model::SeverityLevel;

pub const DEFAULT_DRIFT_WINDOW: usize = 1000;
pub const DRIFT_SIGMAS: f64 = 3.0;

/// Sliding-window accuracy monitor with a lower control limit.
#[derive(Debug, Clone)]
pub struct DriftMonitor {
    window: VecDeque<(SeverityLevel, SeverityLevel)>,
    capacity: usize,
    correct: usize,
    baseline_accuracy: f64,
    baseline_sigma: f64,
    alert: bool,
    updates: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSnapshot {
    pub window_size: usize,
    pub capacity: usize,
    pub window_accuracy: Option<f64>,
    pub baseline_accuracy: f64,
    pub baseline_sigma: f64,
    pub control_limit: f64,
    pub alert: bool,
    pub updates: u64,
}

impl DriftMonitor {
    pub fn new(baseline_accuracy: f64, baseline_sigma: f64, capacity: usize) -> Self {
        DriftMonitor {
            window: VecDeque::with_capacity(capacity),
            capacity: capacity.max(1),
            correct: 0,
            baseline_accuracy,
            baseline_sigma,
            alert: false,
            updates: 0,
        }
    }

    /// Sigma taken as the binomial standard error of a full window.
    pub fn binomial(baseline_accuracy: f64, capacity: usize) -> Self {
        let p = baseline_accuracy.clamp(0.0, 1.0);
        let sigma = (p * (1.0 - p) / capacity.max(1) as f64).sqrt();
        Self::new(baseline_accuracy, sigma, capacity)
    }

    /// Limit width allowing for sampling noise in both the window and a
    /// baseline measured on `baseline_rows` held-out predictions.
    pub fn estimated(baseline_accuracy: f64, baseline_rows: usize, capacity: usize) -> Self {
        let p = baseline_accuracy.clamp(0.0, 1.0);
        let sigma = (p * (1.0 - p) * (1.0 / capacity.max(1) as f64 + 1.0 / baseline_rows.max(1) as f64)).sqrt();
        Self::new(baseline_accuracy, sigma, capacity)
    }

    pub fn control_limit(&self) -> f64 {
        self.baseline_accuracy - DRIFT_SIGMAS * self.baseline_sigma
    }

    pub fn window_accuracy(&self) -> Option<f64> {
        (!self.window.is_empty()).then(|| self.correct as f64 / self.window.len() as f64)
    }

    pub fn alert(&self) -> bool {
        self.alert
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    /// Pushes one outcome and returns the updated alert flag.
    pub fn update(&mut self, prediction: SeverityLevel, outcome: SeverityLevel) -> bool {
        if self.window.len() == self.capacity {
            if let Some((p, o)) = self.window.pop_front() {
                self.correct -= usize::from(p == o);
            }
        }
        self.window.push_back((prediction, outcome));
        self.correct += usize::from(prediction == outcome);
        self.updates += 1;
        self.alert = self.window.len() == self.capacity
            && self.window_accuracy().is_some_and(|a| a < self.control_limit());
        self.alert
    }

    pub fn snapshot(&self) -> DriftSnapshot {
        DriftSnapshot {
            window_size: self.window.len(),
            capacity: self.capacity,
            window_accuracy: self.window_accuracy(),
            baseline_accuracy: self.baseline_accuracy,
            baseline_sigma: self.baseline_sigma,
            control_limit: self.control_limit(),
            alert: self.alert,
            updates: self.updates,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn step(m: &mut DriftMonitor, rng: &mut impl Rng, p: f64) -> bool {
        let hit = rng.random::<f64>() < p;
        m.update(SeverityLevel::Minor, if hit { SeverityLevel::Minor } else { SeverityLevel::Fatal })
    }

    #[test]
    fn quiet_until_full() {
        let mut m = DriftMonitor::binomial(0.9, 100);
        for _ in 0..99 {
            assert!(!m.update(SeverityLevel::Minor, SeverityLevel::Fatal));
        }
        assert!(m.update(SeverityLevel::Minor, SeverityLevel::Fatal));
        assert_eq!(m.len(), 100);
        for _ in 0..500 {
            m.update(SeverityLevel::Minor, SeverityLevel::Minor);
            assert!(m.len() <= 100);
        }
        assert!(!m.alert());
    }

    #[test]
    fn estimated_baseline_widens_limit() {
        let window = DriftMonitor::binomial(0.8, 1000).snapshot().baseline_sigma;
        let both = DriftMonitor::estimated(0.8, 1000, 1000).snapshot().baseline_sigma;
        assert!((both - window * 2f64.sqrt()).abs() < 1e-15);
        let huge = DriftMonitor::estimated(0.8, usize::MAX, 1000).snapshot().baseline_sigma;
        assert!((huge - window).abs() < 1e-12);
    }

    #[test]
    fn stationary_and_shifted_streams() {
        for seed in 0..5 {
            let mut rng = seeded(seed);
            let mut m = DriftMonitor::estimated(0.85, DEFAULT_DRIFT_WINDOW, DEFAULT_DRIFT_WINDOW);
            let sigma = m.snapshot().baseline_sigma;
            assert!((0..10_000).all(|_| !step(&mut m, &mut rng, 0.85)), "seed {seed}");
            let dropped = 0.85 - 5.0 * sigma;
            let fired = (0..DEFAULT_DRIFT_WINDOW).position(|_| step(&mut m, &mut rng, dropped));
            assert!(fired.is_some(), "seed {seed}");
        }
    }
}
