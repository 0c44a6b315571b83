use std::collections::BTreeMap;
use std::path::Path;

use crashcast_core::features::FactorGroup;
use serde::{Deserialize, Serialize};

use crate::ServiceError;

pub const DEFAULT_TABLE: &str = include_str!("../config/recommendations.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskTier {
    Low,
    Medium,
    High,
}

impl RiskTier {
    pub fn from_score(risk: f64) -> Self {
        if risk < 0.3 {
            RiskTier::Low
        } else if risk < 0.6 {
            RiskTier::Medium
        } else {
            RiskTier::High
        }
    }
}

/// Action strings keyed by tier and dominant factor group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationTable {
    #[serde(flatten)]
    pub rows: BTreeMap<RiskTier, BTreeMap<FactorGroup, Vec<String>>>,
}

impl RecommendationTable {
    pub fn parse(text: &str) -> Result<Self, ServiceError> {
        let t: RecommendationTable = toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))?;
        for tier in [RiskTier::Low, RiskTier::Medium, RiskTier::High] {
            for g in FactorGroup::ALL {
                if t.rows.get(&tier).and_then(|r| r.get(&g)).is_none() {
                    return Err(ServiceError::Config(format!("recommendation table lacks {tier:?} x {}", g.name())));
                }
            }
        }
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn recommend(&self, risk: f64, dominant: FactorGroup) -> Vec<String> {
        self.rows
            .get(&RiskTier::from_score(risk))
            .and_then(|r| r.get(&dominant))
            .cloned()
            .unwrap_or_default()
    }
}

impl Default for RecommendationTable {
    fn default() -> Self {
        Self::parse(DEFAULT_TABLE).expect("bundled recommendation table is complete")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiers_and_lookup() {
        let t = RecommendationTable::default();
        assert_eq!(RiskTier::from_score(0.29), RiskTier::Low);
        assert_eq!(RiskTier::from_score(0.3), RiskTier::Medium);
        assert_eq!(RiskTier::from_score(0.6), RiskTier::High);
        assert_eq!(t.recommend(0.1, FactorGroup::Weather), vec!["Routine monitoring; no action required".to_string()]);
        assert_eq!(t.recommend(0.7, FactorGroup::Weather), t.rows[&RiskTier::High][&FactorGroup::Weather]);
        assert_eq!(t.recommend(0.7, FactorGroup::Weather)[0], "Pre-position plows and salt trucks");
        assert_eq!(t.recommend(0.65, FactorGroup::Geometry), t.recommend(0.99, FactorGroup::Geometry));
        assert!(RecommendationTable::parse("[low]\nweather = []").is_err());
    }
}
