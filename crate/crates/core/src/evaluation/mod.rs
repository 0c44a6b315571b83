//! Classification metrics, k-fold cross-validation with spatial folds, and a
//! sliding-window drift monitor.

mod cv;
mod drift;
mod metrics;

use thiserror::Error;

pub use cv::{
    assign_folds, cross_validate_model, evaluate_predictions, kfold_cv, CvReport, FoldMode, FoldSpec, MetricPoint, MetricSeries,
    DEFAULT_FOLDS, GEO_FOLD_RESOLUTION,
};
pub use drift::{DriftMonitor, DriftSnapshot, DEFAULT_DRIFT_WINDOW, DRIFT_SIGMAS};
pub use metrics::{binary_auc, classification_metrics, confusion_matrix, mean_std, roc_auc_ovr, ClassificationMetrics, ConfusionMatrix};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("class {class} outside 0..{n_classes}")]
    ClassOutOfRange { class: usize, n_classes: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("labels contain fewer than two classes")]
    SingleClassInput,
    #[error("scores must be finite with one column per class")]
    NonFiniteScore,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid fold specification: {0}")]
    InvalidFolds(String),
    #[error("training failed: {0}")]
    Train(String),
}
