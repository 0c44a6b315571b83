//! Multiclass gradient-boosted trees in two growth styles, a context-weighted
//! ensemble over them, and per-feature attribution.

mod attribution;
mod booster;
mod goss;
mod meta;
mod model;
mod tree;

use thiserror::Error;

pub use attribution::{
    attribute_linear, attribute_prediction, booster_attribution, brute_force_shapley, group_of,
    tree_attribution, tree_path_attribution, AttributionResult, MAX_SHAPLEY_FEATURES, MAX_TREE_SUBSET_FEATURES,
    RISK_COEFFICIENTS,
};
pub use booster::{
    fit_depthwise, fit_leafwise_full, fit_leafwise_goss, log_loss, softmax, softmax_gradients, Booster, BoosterConfig, FitTrace, Variant,
    N_CLASSES,
};
pub use goss::{goss_sample, GossConfig, GossSample};
pub use meta::{fit_meta_weights, AccuracyTrack, ContextBucket, MetaWeights, DEFAULT_DECAY, DEFAULT_MIN_BUCKET_COUNT};
pub use model::{
    fit_booster, fit_ensemble, mix, stratified_split, EnsembleConfig, EnsembleFitReport, EnsembleModel, Prediction,
    MODEL_FORMAT, MODEL_VERSION,
};
pub use tree::{grow_tree, split_counts, BinnedMatrix, DecisionTree, GrowParams, Node, MAX_BINS};

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("training labels contain fewer than two classes")]
    SingleClassInput,
    #[error("no input rows")]
    EmptyInput,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("model has no fitted boosters")]
    UnfittedModel,
    #[error("expected {expected} values, got {got}")]
    FeatureMismatch { expected: usize, got: usize },
    #[error("{got} features exceed the exact-Shapley limit of {max}")]
    TooManyFeatures { got: usize, max: usize },
    #[error("model file: {0}")]
    Format(String),
    #[error("{0}")]
    Io(String),
}
