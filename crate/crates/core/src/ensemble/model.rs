//! The two-booster ensemble, its training entry point and its JSON file.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::booster::{softmax, Booster, BoosterConfig, FitTrace, Variant, N_CLASSES};
use super::goss::GossConfig;
use super::meta::{ContextBucket, MetaWeights, DEFAULT_DECAY, DEFAULT_MIN_BUCKET_COUNT};
use super::EnsembleError;
use crate::dataset::Dataset;
use crate::model::SeverityLevel;
use crate::rng::stream;

pub const MODEL_FORMAT: &str = "crashcast-ensemble";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub format: String,
    pub version: u32,
    pub feature_names: Vec<String>,
    pub boosters: Vec<Booster>,
    pub meta: MetaWeights,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probabilities: [f64; N_CLASSES],
    pub class: SeverityLevel,
    /// Probability of the predicted class.
    pub confidence: f64,
}

impl Prediction {
    fn from_probabilities(probabilities: [f64; N_CLASSES]) -> Self {
        let mut best = 0;
        for c in 1..N_CLASSES {
            if probabilities[c] > probabilities[best] {
                best = c;
            }
        }
        Prediction { probabilities, class: SeverityLevel::ALL[best], confidence: probabilities[best] }
    }
}

impl EnsembleModel {
    pub fn new(feature_names: Vec<String>, boosters: Vec<Booster>, meta: MetaWeights) -> Self {
        EnsembleModel { format: MODEL_FORMAT.into(), version: MODEL_VERSION, feature_names, boosters, meta }
    }

    /// A model that always uses one booster.
    pub fn single(feature_names: Vec<String>, booster: Booster) -> Self {
        Self::new(feature_names, vec![booster], MetaWeights::new(1, DEFAULT_DECAY, DEFAULT_MIN_BUCKET_COUNT))
    }

    fn check(&self, x: &[f64]) -> Result<(), EnsembleError> {
        if self.boosters.is_empty() {
            return Err(EnsembleError::UnfittedModel);
        }
        if x.len() != self.feature_names.len() {
            return Err(EnsembleError::FeatureMismatch { expected: self.feature_names.len(), got: x.len() });
        }
        Ok(())
    }

    pub fn weights(&self, context: ContextBucket) -> Vec<f64> {
        self.meta.weights(context)
    }

    /// `Σ_m w_m·p_m`, renormalised.
    pub fn predict(&self, x: &[f64], context: ContextBucket) -> Result<Prediction, EnsembleError> {
        self.predict_with_weights(x, &self.weights(context))
    }

    pub fn predict_with_weights(&self, x: &[f64], weights: &[f64]) -> Result<Prediction, EnsembleError> {
        self.check(x)?;
        let mut p = [0.0; N_CLASSES];
        for (b, w) in self.boosters.iter().zip(weights) {
            if *w == 0.0 {
                continue;
            }
            let pb = b.predict_proba(x);
            for c in 0..N_CLASSES {
                p[c] += w * pb[c];
            }
        }
        let s: f64 = p.iter().sum();
        Ok(Prediction::from_probabilities(p.map(|v| v / s)))
    }

    /// Weighted per-class margin, the quantity attribution explains.
    pub fn margin(&self, x: &[f64], context: ContextBucket) -> Result<[f64; N_CLASSES], EnsembleError> {
        self.check(x)?;
        let w = self.weights(context);
        let mut m = [0.0; N_CLASSES];
        for (b, wb) in self.boosters.iter().zip(&w) {
            let mb = b.predict_margin(x);
            for c in 0..N_CLASSES {
                m[c] += wb * mb[c];
            }
        }
        Ok(m)
    }

    pub fn node_count(&self) -> usize {
        self.boosters.iter().map(Booster::node_count).sum()
    }

    pub fn to_json(&self) -> Result<String, EnsembleError> {
        serde_json::to_string(self).map_err(|e| EnsembleError::Format(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self, EnsembleError> {
        let m: EnsembleModel = serde_json::from_str(s).map_err(|e| EnsembleError::Format(e.to_string()))?;
        if m.format != MODEL_FORMAT || m.version != MODEL_VERSION {
            return Err(EnsembleError::Format(format!("unsupported model {} v{}", m.format, m.version)));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EnsembleError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| EnsembleError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EnsembleError> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| EnsembleError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }
}

/// Helper for probability-weighted summaries.
pub fn mix(probs: &[[f64; N_CLASSES]], weights: &[f64]) -> [f64; N_CLASSES] {
    let mut p = [0.0; N_CLASSES];
    for (pb, w) in probs.iter().zip(weights) {
        for c in 0..N_CLASSES {
            p[c] += w * pb[c];
        }
    }
    let s: f64 = p.iter().sum();
    p.map(|v| v / s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub depthwise: BoosterConfig,
    pub leafwise: BoosterConfig,
    pub goss: GossConfig,
    /// Stratified share of the training rows held back to fit meta weights.
    pub meta_fraction: f64,
    pub decay: f64,
    pub min_bucket_count: usize,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            depthwise: BoosterConfig::depthwise_preset(),
            leafwise: BoosterConfig::leafwise_preset(),
            goss: GossConfig::default(),
            meta_fraction: 0.15,
            decay: DEFAULT_DECAY,
            min_bucket_count: DEFAULT_MIN_BUCKET_COUNT,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleFitReport {
    pub fit_rows: usize,
    pub meta_rows: usize,
    pub traces: Vec<FitTrace>,
    pub meta_accuracy: Vec<f64>,
}

/// Stratified split of row indices into (kept, held) with `fraction` held.
pub fn stratified_split(labels: &[SeverityLevel], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut kept = Vec::new();
    let mut held = Vec::new();
    for class in SeverityLevel::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut stream(seed, class.index() as u64));
        let n_held = (idx.len() as f64 * fraction).round() as usize;
        held.extend_from_slice(&idx[..n_held]);
        kept.extend_from_slice(&idx[n_held..]);
    }
    kept.sort_unstable();
    held.sort_unstable();
    (kept, held)
}

pub fn fit_booster(data: &Dataset, config: &BoosterConfig, goss: &GossConfig) -> Result<(Booster, FitTrace), EnsembleError> {
    Booster::fit(&data.rows, &data.labels, config, Some(goss))
}

/// Fits both boosters on the fit split and the meta weights on the held-out
/// split, replayed in row order.
pub fn fit_ensemble(data: &Dataset, config: &EnsembleConfig) -> Result<(EnsembleModel, EnsembleFitReport), EnsembleError> {
    if !(0.0..1.0).contains(&config.meta_fraction) {
        return Err(EnsembleError::InvalidConfig("meta_fraction must lie in [0, 1)".into()));
    }
    let (fit_idx, meta_idx) = stratified_split(&data.labels, config.meta_fraction, config.seed);
    let fit_set = data.subset(&fit_idx);
    let depthwise = BoosterConfig { variant: Variant::Depthwise, seed: config.seed, ..config.depthwise.clone() };
    let leafwise = BoosterConfig { variant: Variant::Leafwise, seed: config.seed, ..config.leafwise.clone() };
    let (a, ta) = fit_booster(&fit_set, &depthwise, &config.goss)?;
    let (b, tb) = fit_booster(&fit_set, &leafwise, &config.goss)?;
    let boosters = vec![a, b];
    let mut meta = MetaWeights::new(boosters.len(), config.decay, config.min_bucket_count);
    let mut hits_total = vec![0usize; boosters.len()];
    for &i in &meta_idx {
        let x = &data.rows[i];
        let hits: Vec<bool> = boosters
            .iter()
            .map(|bst| Prediction::from_probabilities(softmax(&bst.predict_margin(x))).class == data.labels[i])
            .collect();
        for (t, h) in hits_total.iter_mut().zip(&hits) {
            *t += usize::from(*h);
        }
        meta.observe(ContextBucket::from_features(x, data.weekend[i]), &hits);
    }
    let report = EnsembleFitReport {
        fit_rows: fit_idx.len(),
        meta_rows: meta_idx.len(),
        traces: vec![ta, tb],
        meta_accuracy: hits_total.iter().map(|h| *h as f64 / meta_idx.len().max(1) as f64).collect(),
    };
    Ok((EnsembleModel::new(data.feature_names.clone(), boosters, meta), report))
}
