use std::collections::BTreeMap;
use std::hash::{DefaultHasher, Hash, Hasher};

use chrono::{DateTime, Utc};
use crashcast_core::bundle::ModelBundle;
use crashcast_core::cell::{cell_of, CellId};
use crashcast_core::ensemble::{attribute_linear, ContextBucket, RISK_COEFFICIENTS};
use crashcast_core::features::{FactorGroup, FeatureParts};
use crashcast_core::model::{Flag, GeoPoint, SeverityLevel, WeatherCategory, WeatherSnapshot};
use serde::{Deserialize, Serialize};

use crate::recommend::RecommendationTable;
use crate::ServiceError;

/// Inputs of one prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub location: GeoPoint,
    pub at: DateTime<Utc>,
    pub snapshot: WeatherSnapshot,
    pub flags: BTreeMap<Flag, bool>,
}

/// The cacheable part of a prediction response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionCore {
    pub risk_score: f64,
    pub severity_probs: [f64; 4],
    pub predicted_severity: SeverityLevel,
    pub confidence: f64,
    pub contributing_factors: BTreeMap<FactorGroup, f64>,
    pub dominant_factor: FactorGroup,
    pub recommended_actions: Vec<String>,
    pub weather_category: WeatherCategory,
    /// The engineered weather feature the model saw.
    pub weather_risk: f64,
    /// Σ p_s·s over severity codes.
    pub expected_impact: f64,
}

pub struct Predictor {
    pub bundle: ModelBundle,
    pub recommendations: RecommendationTable,
}

/// Stable identifier of a set of what-if overrides; 0 means none.
pub fn scenario_hash(weather: Option<&WeatherSnapshot>, flags: &BTreeMap<Flag, bool>) -> u64 {
    if weather.is_none() && flags.is_empty() {
        return 0;
    }
    let mut h = DefaultHasher::new();
    if let Some(w) = weather {
        w.category.hash(&mut h);
        for v in w.measurements() {
            v.to_bits().hash(&mut h);
        }
    }
    flags.hash(&mut h);
    h.finish().max(1)
}

impl Predictor {
    pub fn new(bundle: ModelBundle, recommendations: RecommendationTable) -> Self {
        Predictor { bundle, recommendations }
    }

    pub fn serving_resolution(&self) -> u8 {
        self.bundle.feature_context.config.serving_resolution
    }

    pub fn cell(&self, p: GeoPoint) -> CellId {
        cell_of(p, self.serving_resolution())
    }

    pub fn active_cells(&self) -> Vec<CellId> {
        self.bundle.feature_context.active_cells().collect()
    }

    fn features(&self, s: &Scenario) -> (Vec<f64>, f64, ContextBucket) {
        let ctx = &self.bundle.feature_context;
        let parts: FeatureParts = ctx.scenario_parts(s.location, s.at, &s.snapshot, &s.flags);
        let v = ctx.assemble(&parts);
        (v.to_array().to_vec(), v.weather_risk, ContextBucket::at(s.snapshot.category, s.at))
    }

    /// Class probabilities only, without attribution.
    pub fn probabilities(&self, s: &Scenario) -> Result<[f64; 4], ServiceError> {
        let (x, _, bucket) = self.features(s);
        Ok(self.bundle.ensemble.predict(&x, bucket).map_err(|e| ServiceError::Model(e.to_string()))?.probabilities)
    }

    pub fn predict(&self, s: &Scenario) -> Result<PredictionCore, ServiceError> {
        let (x, weather_risk, bucket) = self.features(s);
        let model = &self.bundle.ensemble;
        let p = model.predict(&x, bucket).map_err(|e| ServiceError::Model(e.to_string()))?;
        let attribution =
            attribute_linear(model, &x, bucket, RISK_COEFFICIENTS).map_err(|e| ServiceError::Model(e.to_string()))?;
        let shares = attribution.factor_shares(&model.feature_names);
        let dominant = FactorGroup::ALL
            .into_iter()
            .fold(FactorGroup::Weather, |best, g| if shares[&g] > shares[&best] { g } else { best });
        let risk_score = (1.0 - p.probabilities[0]).clamp(0.0, 1.0);
        let expected_impact = p.probabilities.iter().enumerate().map(|(s, q)| s as f64 * q).sum();
        Ok(PredictionCore {
            risk_score,
            severity_probs: p.probabilities,
            predicted_severity: p.class,
            confidence: p.confidence,
            contributing_factors: shares,
            dominant_factor: dominant,
            recommended_actions: self.recommendations.recommend(risk_score, dominant),
            weather_category: s.snapshot.category,
            weather_risk,
            expected_impact,
        })
    }
}
