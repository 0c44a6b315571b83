use std::collections::BTreeMap;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::model::{Flag, WeatherCategory, WeatherSnapshot};

/// Minimum labelled records for fitting α, β, γ.
pub const MIN_WEIGHT_FIT_RECORDS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentalRiskWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Icy, wet, snow/slush.
    pub road_component: [f64; 3],
    pub weather_map: BTreeMap<String, f64>,
    pub weather_default: f64,
    /// Weather, road.
    pub compound: [f64; 2],
}

impl Default for EnvironmentalRiskWeights {
    fn default() -> Self {
        let weather_map = [("1", 0.2), ("2", 0.4), ("3", 0.6), ("4", 0.8), ("5", 0.9), ("6", 0.7)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        EnvironmentalRiskWeights {
            alpha: 1.0 / 3.0,
            beta: 1.0 / 3.0,
            gamma: 1.0 / 3.0,
            road_component: [0.4, 0.3, 0.3],
            weather_map,
            weather_default: 0.2,
            compound: [0.6, 0.4],
        }
    }
}

impl EnvironmentalRiskWeights {
    /// Map lookup on the stringified code; unknown or missing codes take the default.
    pub fn weather_risk(&self, category: Option<WeatherCategory>) -> f64 {
        category.and_then(|c| self.weather_map.get(&c.code().to_string()).copied()).unwrap_or(self.weather_default)
    }

    pub fn adverse_road(&self, flags: &[f64; 15]) -> f64 {
        Flag::ROAD_SURFACE
            .iter()
            .zip(self.road_component)
            .map(|(f, w)| flags[f.index()] * w)
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvironmentalFeatures {
    pub adverse_road: f64,
    pub weather_risk: f64,
    pub total: f64,
}

pub fn environmental_features(
    flags: &[f64; 15],
    category: Option<WeatherCategory>,
    w: &EnvironmentalRiskWeights,
) -> EnvironmentalFeatures {
    let adverse_road = w.adverse_road(flags);
    let weather_risk = w.weather_risk(category);
    let total = (w.compound[0] * weather_risk + w.compound[1] * adverse_road).clamp(0.0, 1.0);
    EnvironmentalFeatures { adverse_road, weather_risk, total }
}

/// `clamp(1 − visibility/10 km, 0, 1)`.
pub fn visibility_factor(snapshot: &WeatherSnapshot) -> f64 {
    (1.0 - snapshot.visibility_km / 10.0).clamp(0.0, 1.0)
}

/// `α·W + β·R + γ·V`.
pub fn environmental_risk_e(w_t: f64, r: f64, v: f64, weights: &EnvironmentalRiskWeights) -> Result<f64, FeatureError> {
    for (name, value) in [("W", w_t), ("R", r), ("V", v)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(FeatureError::ComponentOutOfRange { name, value });
        }
    }
    Ok(weights.alpha * w_t + weights.beta * r + weights.gamma * v)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Logistic regression of `outcome` on (W, R, V) by Newton's method, then
/// the slope coefficients are clipped at zero and normalised to sum to one.
/// All-nonpositive slopes give uniform weights.
pub fn fit_environmental_weights(
    components: &[[f64; 3]],
    outcome: &[bool],
    base: &EnvironmentalRiskWeights,
) -> Result<EnvironmentalRiskWeights, FeatureError> {
    if components.len() != outcome.len() {
        return Err(FeatureError::LengthMismatch { expected: components.len(), got: outcome.len() });
    }
    if components.len() < MIN_WEIGHT_FIT_RECORDS {
        return Err(FeatureError::InsufficientHistory { need: MIN_WEIGHT_FIT_RECORDS, got: components.len() });
    }
    let positives = outcome.iter().filter(|o| **o).count();
    if positives == 0 || positives == outcome.len() {
        return Err(FeatureError::DegenerateDesign("all outcomes identical".into()));
    }
    for (j, name) in ["W", "R", "V"].iter().enumerate() {
        let first = components[0][j];
        if components.iter().all(|c| c[j] == first) {
            return Err(FeatureError::DegenerateDesign(format!("component {name} is constant")));
        }
    }

    let mut beta = Vector4::zeros();
    let prior = positives as f64 / outcome.len() as f64;
    beta[0] = (prior / (1.0 - prior)).ln();
    for _ in 0..100 {
        let mut grad = Vector4::zeros();
        let mut hess = Matrix4::zeros();
        for (c, &y) in components.iter().zip(outcome) {
            let x = Vector4::new(1.0, c[0], c[1], c[2]);
            let p = sigmoid(beta.dot(&x));
            grad += x * (f64::from(u8::from(y)) - p);
            hess += x * x.transpose() * (p * (1.0 - p));
        }
        for j in 0..4 {
            hess[(j, j)] += 1e-8;
        }
        let Some(step) = hess.cholesky().map(|ch| ch.solve(&grad)) else {
            return Err(FeatureError::DegenerateDesign("singular information matrix".into()));
        };
        beta += step;
        if step.amax() < 1e-10 {
            break;
        }
    }
    let slopes = [beta[1].max(0.0), beta[2].max(0.0), beta[3].max(0.0)];
    let total: f64 = slopes.iter().sum();
    let [alpha, b, gamma] = if total > 0.0 && total.is_finite() { slopes.map(|s| s / total) } else { [1.0 / 3.0; 3] };
    Ok(EnvironmentalRiskWeights { alpha, beta: b, gamma, ..base.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Utc;
    use rand::Rng;

    fn flags_with(on: &[Flag]) -> [f64; 15] {
        let mut f = [0.0; 15];
        for x in on {
            f[x.index()] = 1.0;
        }
        f
    }

    #[test]
    fn weather_map_values() {
        let w = EnvironmentalRiskWeights::default();
        assert_eq!(w.weather_risk(Some(WeatherCategory::SNOW)), 0.8);
        assert_eq!(w.weather_risk(Some(WeatherCategory::SLEET)), 0.9);
        assert_eq!(w.weather_risk(Some(WeatherCategory::FOG)), 0.7);
        assert_eq!(w.weather_risk(None), 0.2);
    }

    #[test]
    fn compound_arithmetic() {
        let w = EnvironmentalRiskWeights::default();
        let f = environmental_features(&flags_with(&Flag::ROAD_SURFACE), Some(WeatherCategory::SNOW), &w);
        assert!((f.adverse_road - 1.0).abs() < 1e-9);
        assert!((f.total - 0.88).abs() < 1e-9);
    }

    #[test]
    fn e_formula() {
        let third = EnvironmentalRiskWeights::default();
        assert!((environmental_risk_e(0.6, 0.6, 0.6, &third).unwrap() - 0.6).abs() < 1e-12);
        let w = EnvironmentalRiskWeights { alpha: 0.5, beta: 0.3, gamma: 0.2, ..third.clone() };
        assert!((environmental_risk_e(1.0, 0.0, 0.0, &w).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(environmental_risk_e(0.0, 0.0, 0.0, &w).unwrap(), 0.0);
        assert!(matches!(environmental_risk_e(1.5, 0.0, 0.0, &w), Err(FeatureError::ComponentOutOfRange { .. })));
    }

    #[test]
    fn visibility() {
        let mut s = WeatherSnapshot::typical(WeatherCategory::CLEAR, Utc::now());
        s.visibility_km = 2.5;
        assert!((visibility_factor(&s) - 0.75).abs() < 1e-12);
        s.visibility_km = 25.0;
        assert_eq!(visibility_factor(&s), 0.0);
    }

    #[test]
    fn outcome_driven_by_weather_only() {
        let mut rng = crate::rng::seeded(21);
        let comps: Vec<[f64; 3]> = (0..4000).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let y: Vec<bool> = comps.iter().map(|c| rng.random::<f64>() < sigmoid(-3.0 + 6.0 * c[0])).collect();
        let w = fit_environmental_weights(&comps, &y, &EnvironmentalRiskWeights::default()).unwrap();
        assert!(w.alpha >= 0.8, "alpha {}", w.alpha);
    }

    #[test]
    fn identical_outcomes_are_degenerate() {
        let comps: Vec<[f64; 3]> = (0..600).map(|i| [(i % 7) as f64 / 7.0, 0.5, (i % 3) as f64 / 3.0]).collect();
        let y = vec![true; 600];
        assert!(matches!(
            fit_environmental_weights(&comps, &y, &EnvironmentalRiskWeights::default()),
            Err(FeatureError::DegenerateDesign(_))
        ));
    }

    #[test]
    fn weights_always_a_simplex_point() {
        for seed in 0..50 {
            let mut rng = crate::rng::seeded(seed);
            let slope: [f64; 3] = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let comps: Vec<[f64; 3]> = (0..600).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
            let y: Vec<bool> = comps
                .iter()
                .map(|c| rng.random::<f64>() < sigmoid(slope[0] * c[0] + slope[1] * c[1] + slope[2] * c[2] - 0.5))
                .collect();
            let w = fit_environmental_weights(&comps, &y, &EnvironmentalRiskWeights::default()).unwrap();
            assert!(w.alpha >= 0.0 && w.beta >= 0.0 && w.gamma >= 0.0);
            assert!((w.alpha + w.beta + w.gamma - 1.0).abs() < 1e-9);
        }
    }
}
