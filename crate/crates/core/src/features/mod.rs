//! Feature engineering: behavioural and environmental risk scores, spatial
//! clustering, weather kNN risk, cyclical time encodings and the assembled
//! per-record feature vector.

mod assemble;
mod behavioral;
mod clustering;
mod environmental;
mod knn;
mod temporal;
mod weather;

use thiserror::Error;

pub use assemble::{
    feature_group, fit_feature_context, record_snapshot, CellStat, ClusterSummary, FactorGroup, FeatureConfig,
    FeatureContext, FeatureParts, FeatureSet, FeatureVector, FEATURE_CONTEXT_FORMAT, FEATURE_CONTEXT_VERSION,
    FEATURE_NAMES, FLAG_OFFSET, N_FEATURES, WEATHER_RISK_INDEX,
};
pub use behavioral::{behavioral_features, flag_values, weighted_risk, BehavioralRiskWeights};
pub use clustering::{
    adaptive_eps, assign_clusters, cluster_density, dbscan_haversine, dbscan_with_eps, enclosing_radius_km,
    ClusterAssignment, ClusterLabel, ClusterParams,
};
pub use environmental::{
    environmental_features, environmental_risk_e, fit_environmental_weights, visibility_factor, EnvironmentalFeatures,
    EnvironmentalRiskWeights, MIN_WEIGHT_FIT_RECORDS,
};
pub use knn::{weather_knn_risk, weighted_severity, WeatherKnnIndex, DEFAULT_K};
pub use temporal::cyclical_encode;
pub use weather::{WeatherTimeline, WEATHER_CSV_HEADER};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("component {name} = {value} is outside [0, 1]")]
    ComponentOutOfRange { name: &'static str, value: f64 },
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),
    #[error("need at least {need} labelled records, got {got}")]
    InsufficientHistory { need: usize, got: usize },
    #[error("history is empty")]
    EmptyHistory,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("weather fixture: {0}")]
    Fixture(String),
    #[error("missing {0}")]
    MissingField(String),
}
