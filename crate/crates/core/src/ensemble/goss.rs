//! Gradient-based one-side sampling with rarity-weighted ranking.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::EnsembleError;
use crate::model::SeverityLevel;
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GossConfig {
    pub a_top: f64,
    pub b_rest: f64,
    /// Exponent on the class-rarity factor `N / N_c`.
    pub severity_weight_exponent: f64,
}

impl Default for GossConfig {
    fn default() -> Self {
        GossConfig { a_top: 0.2, b_rest: 0.1, severity_weight_exponent: 0.5 }
    }
}

impl GossConfig {
    /// Keeps every row with weight one.
    pub fn disabled() -> Self {
        GossConfig { a_top: 1.0, b_rest: 0.0, severity_weight_exponent: 0.0 }
    }

    /// `a` in (0, 1], `b` in [0, 1 - a]; `b = 0` only makes sense with `a = 1`.
    pub fn validate(&self) -> Result<(), EnsembleError> {
        let ok = self.a_top > 0.0
            && self.a_top <= 1.0
            && self.b_rest >= 0.0
            && self.a_top + self.b_rest <= 1.0 + 1e-12
            && (self.b_rest > 0.0 || self.a_top == 1.0)
            && self.severity_weight_exponent.is_finite();
        if ok {
            Ok(())
        } else {
            Err(EnsembleError::InvalidConfig(format!("GOSS a = {}, b = {}", self.a_top, self.b_rest)))
        }
    }

    /// Weight of the sampled small-gradient rows.
    pub fn amplification(&self) -> f64 {
        if self.b_rest > 0.0 {
            (1.0 - self.a_top) / self.b_rest
        } else {
            0.0
        }
    }
}

/// Selected rows (ascending) and their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GossSample {
    pub indices: Vec<u32>,
    pub weights: Vec<f64>,
}

/// Ranks rows by `|g|·(N/N_c)^γ`, keeps the top `⌈a·n⌉` with weight 1 and
/// a uniform `⌈b·n⌉` of the rest with weight `(1-a)/b`.
pub fn goss_sample(
    grad_magnitude: &[f64],
    severities: &[SeverityLevel],
    goss: &GossConfig,
    seed: u64,
) -> Result<GossSample, EnsembleError> {
    let n = grad_magnitude.len();
    if n == 0 {
        return Err(EnsembleError::EmptyInput);
    }
    if severities.len() != n {
        return Err(EnsembleError::FeatureMismatch { expected: n, got: severities.len() });
    }
    goss.validate()?;
    let top_n = ((goss.a_top * n as f64).ceil() as usize).clamp(1, n);
    let rest_n = ((goss.b_rest * n as f64).ceil() as usize).min(n - top_n);
    if top_n == n {
        return Ok(GossSample { indices: (0..n as u32).collect(), weights: vec![1.0; n] });
    }
    let mut counts = [0usize; 4];
    for s in severities {
        counts[s.index()] += 1;
    }
    let rarity: [f64; 4] = std::array::from_fn(|c| {
        if counts[c] == 0 {
            0.0
        } else {
            (n as f64 / counts[c] as f64).powf(goss.severity_weight_exponent)
        }
    });
    let score: Vec<f64> = grad_magnitude.iter().zip(severities).map(|(g, s)| g.abs() * rarity[s.index()]).collect();
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|&a, &b| score[b as usize].total_cmp(&score[a as usize]).then(a.cmp(&b)));
    let (top, rest) = order.split_at(top_n);
    let mut rng = seeded(seed);
    let amp = goss.amplification();
    let mut chosen: Vec<(u32, f64)> = top.iter().map(|&i| (i, 1.0)).collect();
    chosen.extend(sample(&mut rng, rest.len(), rest_n).into_iter().map(|j| (rest[j], amp)));
    chosen.sort_by_key(|c| c.0);
    Ok(GossSample { indices: chosen.iter().map(|c| c.0).collect(), weights: chosen.iter().map(|c| c.1).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn counts_and_amplification() {
        let g: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let s = vec![SeverityLevel::Minor; 100];
        let out = goss_sample(&g, &s, &GossConfig::default(), 1).unwrap();
        assert_eq!(out.indices.len(), 30);
        assert_eq!(out.weights.iter().filter(|w| **w == 1.0).count(), 20);
        assert_eq!(out.weights.iter().filter(|w| **w == 8.0).count(), 10);
        for (i, w) in out.indices.iter().zip(&out.weights) {
            assert_eq!(*w == 1.0, *i >= 80);
        }
    }

    #[test]
    fn rare_class_wins_ties() {
        let mut s = vec![SeverityLevel::Minor; 100];
        s[50] = SeverityLevel::Fatal;
        let g = vec![1.0; 100];
        let cfg = GossConfig { a_top: 0.01, b_rest: 0.01, severity_weight_exponent: 0.5 };
        let out = goss_sample(&g, &s, &cfg, 3).unwrap();
        let top: Vec<u32> = out.indices.iter().zip(&out.weights).filter(|(_, w)| **w == 1.0).map(|(i, _)| *i).collect();
        assert_eq!(top, vec![50]);
        let plain = GossConfig { severity_weight_exponent: 0.0, ..cfg };
        let out = goss_sample(&g, &s, &plain, 3).unwrap();
        assert_eq!(out.indices.iter().zip(&out.weights).find(|(_, w)| **w == 1.0).unwrap().0, &0);
    }

    #[test]
    fn disabled_keeps_all() {
        let g = vec![0.3; 17];
        let s = vec![SeverityLevel::Serious; 17];
        let out = goss_sample(&g, &s, &GossConfig::disabled(), 9).unwrap();
        assert_eq!(out.indices, (0..17).collect::<Vec<_>>());
        assert!(out.weights.iter().all(|w| *w == 1.0));
        assert!(matches!(goss_sample(&[], &[], &GossConfig::default(), 0), Err(EnsembleError::EmptyInput)));
        assert!(GossConfig { a_top: 0.7, b_rest: 0.5, severity_weight_exponent: 0.0 }.validate().is_err());
    }

    #[test]
    fn weighted_sum_unbiased_over_seeds() {
        let mut rng = crate::rng::seeded(42);
        let g: Vec<f64> = (0..2000).map(|_| rng.random::<f64>().powi(3)).collect();
        let s = vec![SeverityLevel::Minor; 2000];
        let full: f64 = g.iter().sum();
        let cfg = GossConfig { severity_weight_exponent: 0.0, ..GossConfig::default() };
        let mean = (0..1000)
            .map(|seed| {
                let o = goss_sample(&g, &s, &cfg, seed).unwrap();
                o.indices.iter().zip(&o.weights).map(|(&i, w)| g[i as usize] * w).sum::<f64>()
            })
            .sum::<f64>()
            / 1000.0;
        assert!((mean - full).abs() / full < 0.02, "{mean} vs {full}");
    }
}
