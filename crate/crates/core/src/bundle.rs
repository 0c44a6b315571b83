//! The serving artifact: a fitted ensemble with the feature context it was
//! trained against.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::ensemble::{fit_ensemble, EnsembleConfig, EnsembleFitReport, EnsembleModel};
use crate::features::FeatureContext;

pub const BUNDLE_FORMAT: &str = "crashcast-bundle";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bundle JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bundle format: {0}")]
    Format(String),
    #[error("training: {0}")]
    Training(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format: String,
    pub version: u32,
    pub ensemble: EnsembleModel,
    pub feature_context: FeatureContext,
    /// Held-out accuracy measured at training time; the drift monitor baseline.
    #[serde(default)]
    pub baseline_accuracy: Option<f64>,
    /// Held-out rows behind `baseline_accuracy`.
    #[serde(default)]
    pub baseline_rows: Option<usize>,
}

impl ModelBundle {
    pub fn new(ensemble: EnsembleModel, feature_context: FeatureContext, baseline_accuracy: Option<f64>) -> Self {
        ModelBundle {
            format: BUNDLE_FORMAT.into(),
            version: BUNDLE_VERSION,
            ensemble,
            feature_context,
            baseline_accuracy,
            baseline_rows: None,
        }
    }

    pub fn to_json(&self) -> Result<String, BundleError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, BundleError> {
        let mut b: ModelBundle = serde_json::from_str(s)?;
        if b.format != BUNDLE_FORMAT || b.version != BUNDLE_VERSION {
            return Err(BundleError::Format(format!("unsupported bundle {} v{}", b.format, b.version)));
        }
        if b.ensemble.feature_names != b.feature_context.feature_names {
            return Err(BundleError::Format("model and feature context disagree on feature names".into()));
        }
        b.feature_context.rebuild();
        Ok(b)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BundleError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|source| BundleError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BundleError> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|source| BundleError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&s)
    }
}

/// Fits the ensemble on `data` and packages it with `context`. The baseline
/// accuracy is the better booster's accuracy on the meta split.
pub fn train_bundle(
    data: &Dataset,
    context: FeatureContext,
    config: &EnsembleConfig,
) -> Result<(ModelBundle, EnsembleFitReport), BundleError> {
    if data.feature_names != context.feature_names {
        return Err(BundleError::Format("dataset columns differ from the feature context".into()));
    }
    let (model, report) = fit_ensemble(data, config).map_err(|e| BundleError::Training(e.to_string()))?;
    let baseline = report.meta_accuracy.iter().copied().fold(None, |m: Option<f64>, a| Some(m.map_or(a, |m| m.max(a))));
    let mut bundle = ModelBundle::new(model, context, baseline);
    bundle.baseline_rows = baseline.map(|_| report.meta_rows);
    Ok((bundle, report))
}
