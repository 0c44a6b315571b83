use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::{classification_metrics, confusion_matrix, mean_std, roc_auc_ovr, ConfusionMatrix};
use super::EvalError;
use crate::cell::{cell_of, CellId};
use crate::dataset::Dataset;
use crate::ensemble::{fit_booster, fit_ensemble, ContextBucket, EnsembleConfig, EnsembleModel, Variant};
use crate::model::{GeoPoint, SeverityLevel};
use crate::rng::stream;

pub const DEFAULT_FOLDS: usize = 5;
pub const GEO_FOLD_RESOLUTION: u8 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldMode {
    Random,
    Geographic,
}

impl std::str::FromStr for FoldMode {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(FoldMode::Random),
            "geo" | "geographic" => Ok(FoldMode::Geographic),
            other => Err(EvalError::InvalidFolds(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub k: usize,
    pub mode: FoldMode,
    pub geo_resolution: u8,
}

impl Default for FoldSpec {
    fn default() -> Self {
        FoldSpec { k: DEFAULT_FOLDS, mode: FoldMode::Random, geo_resolution: GEO_FOLD_RESOLUTION }
    }
}

/// Fold index per row. Random mode deals each shuffled class round-robin;
/// geographic mode places whole cells, largest first, into the lightest fold.
pub fn assign_folds(
    labels: &[SeverityLevel],
    locations: Option<&[GeoPoint]>,
    spec: &FoldSpec,
    seed: u64,
) -> Result<Vec<usize>, EvalError> {
    let k = spec.k;
    if k < 2 {
        return Err(EvalError::InvalidFolds(format!("k = {k}, need at least 2")));
    }
    let mut fold = vec![0usize; labels.len()];
    match spec.mode {
        FoldMode::Random => {
            let mut offset = 0;
            for class in SeverityLevel::ALL {
                let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
                if idx.is_empty() {
                    continue;
                }
                if idx.len() < k {
                    return Err(EvalError::InsufficientData(format!(
                        "class {} has {} rows for {k} folds",
                        class.code(),
                        idx.len()
                    )));
                }
                idx.shuffle(&mut stream(seed, class.index() as u64));
                for (j, &i) in idx.iter().enumerate() {
                    fold[i] = (j + offset) % k;
                }
                offset = (offset + idx.len()) % k;
            }
        }
        FoldMode::Geographic => {
            let locations = locations.ok_or_else(|| EvalError::InsufficientData("geographic folds need locations".into()))?;
            if locations.len() != labels.len() {
                return Err(EvalError::LengthMismatch { expected: labels.len(), got: locations.len() });
            }
            let mut by_cell: BTreeMap<CellId, Vec<usize>> = BTreeMap::new();
            for (i, &p) in locations.iter().enumerate() {
                by_cell.entry(cell_of(p, spec.geo_resolution)).or_default().push(i);
            }
            if by_cell.len() < k {
                return Err(EvalError::InsufficientData(format!("{} cells for {k} folds", by_cell.len())));
            }
            let mut cells: Vec<Vec<usize>> = by_cell.into_values().collect();
            cells.shuffle(&mut stream(seed, 0x6e0));
            cells.sort_by_key(|c| std::cmp::Reverse(c.len()));
            let mut sizes = vec![0usize; k];
            for rows in cells {
                let f = (0..k).min_by_key(|&f| (sizes[f], f)).unwrap_or(0);
                sizes[f] += rows.len();
                for i in rows {
                    fold[i] = f;
                }
            }
        }
    }
    Ok(fold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub roc_auc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub accuracy: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub roc_auc: Vec<f64>,
}

impl MetricSeries {
    fn push(&mut self, p: MetricPoint) {
        self.accuracy.push(p.accuracy);
        self.precision.push(p.precision);
        self.recall.push(p.recall);
        self.f1.push(p.f1);
        self.roc_auc.push(p.roc_auc);
    }

    fn summarize(&self) -> (MetricPoint, MetricPoint) {
        let (a, sa) = mean_std(&self.accuracy);
        let (p, sp) = mean_std(&self.precision);
        let (r, sr) = mean_std(&self.recall);
        let (f, sf) = mean_std(&self.f1);
        let (u, su) = mean_std(&self.roc_auc);
        (
            MetricPoint { accuracy: a, precision: p, recall: r, f1: f, roc_auc: u },
            MetricPoint { accuracy: sa, precision: sp, recall: sr, f1: sf, roc_auc: su },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub mode: FoldMode,
    pub seed: u64,
    pub fold_sizes: Vec<usize>,
    pub per_fold: MetricSeries,
    pub mean: MetricPoint,
    pub std: MetricPoint,
    pub fold_confusion: Vec<ConfusionMatrix>,
    pub confusion_matrix: ConfusionMatrix,
}

/// Scores one held-out set with a fitted predictor.
pub fn evaluate_predictions(truth: &[SeverityLevel], proba: &[[f64; 4]]) -> Result<(MetricPoint, ConfusionMatrix), EvalError> {
    let t: Vec<usize> = truth.iter().map(|l| l.index()).collect();
    let p: Vec<usize> = proba.iter().map(|q| (1..4).fold(0, |b, c| if q[c] > q[b] { c } else { b })).collect();
    let cm = confusion_matrix(&t, &p, 4)?;
    let m = classification_metrics(&cm)?;
    let roc_auc = roc_auc_ovr(proba, &t)?;
    Ok((MetricPoint { accuracy: m.accuracy, precision: m.precision, recall: m.recall, f1: m.f1, roc_auc }, cm))
}

/// Trains on k−1 folds and scores the remaining one, for each fold. `train`
/// returns a predictor over (feature row, weekend flag).
pub fn kfold_cv<F, P>(
    data: &Dataset,
    locations: Option<&[GeoPoint]>,
    spec: &FoldSpec,
    seed: u64,
    mut train: F,
) -> Result<CvReport, EvalError>
where
    F: FnMut(&Dataset) -> Result<P, String>,
    P: Fn(&[f64], bool) -> [f64; 4],
{
    let fold = assign_folds(&data.labels, locations, spec, seed)?;
    let mut per_fold = MetricSeries::default();
    let mut fold_confusion = Vec::with_capacity(spec.k);
    let mut pooled = ConfusionMatrix::zeros(4);
    let mut fold_sizes = Vec::with_capacity(spec.k);
    for f in 0..spec.k {
        let (test_idx, train_idx): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| fold[i] == f);
        if test_idx.is_empty() || train_idx.is_empty() {
            return Err(EvalError::InsufficientData(format!("fold {f} is empty")));
        }
        let predictor = train(&data.subset(&train_idx)).map_err(EvalError::Train)?;
        let proba: Vec<[f64; 4]> = test_idx.iter().map(|&i| predictor(&data.rows[i], data.weekend[i])).collect();
        let truth: Vec<SeverityLevel> = test_idx.iter().map(|&i| data.labels[i]).collect();
        let (point, cm) = evaluate_predictions(&truth, &proba)?;
        per_fold.push(point);
        pooled.add(&cm);
        fold_confusion.push(cm);
        fold_sizes.push(test_idx.len());
    }
    let (mean, std) = per_fold.summarize();
    Ok(CvReport {
        folds: spec.k,
        mode: spec.mode,
        seed,
        fold_sizes,
        per_fold,
        mean,
        std,
        fold_confusion,
        confusion_matrix: pooled,
    })
}

/// Cross-validates the recipe that produced `model`: each fold retrains with
/// the boosters' recorded configurations. A two-booster model is refitted as
/// an ensemble, a single booster on its own.
pub fn cross_validate_model(
    data: &Dataset,
    locations: Option<&[GeoPoint]>,
    spec: &FoldSpec,
    seed: u64,
    model: &EnsembleModel,
) -> Result<CvReport, EvalError> {
    if data.feature_names != model.feature_names {
        return Err(EvalError::Train("data columns differ from the model's features".into()));
    }
    let find = |v: Variant| model.boosters.iter().find(|b| b.config.variant == v);
    match (model.boosters.as_slice(), find(Variant::Depthwise), find(Variant::Leafwise)) {
        ([only], _, _) => {
            let (config, goss) = (only.config.clone(), only.goss.unwrap_or_default());
            kfold_cv(data, locations, spec, seed, |d| {
                let (b, _) = fit_booster(d, &config, &goss).map_err(|e| e.to_string())?;
                Ok(move |x: &[f64], _: bool| b.predict_proba(x))
            })
        }
        ([_, _], Some(dw), Some(lw)) => {
            let config = EnsembleConfig {
                depthwise: dw.config.clone(),
                leafwise: lw.config.clone(),
                goss: lw.goss.unwrap_or_default(),
                seed: dw.config.seed,
                ..EnsembleConfig::default()
            };
            kfold_cv(data, locations, spec, seed, |d| {
                let (m, _) = fit_ensemble(d, &config).map_err(|e| e.to_string())?;
                Ok(move |x: &[f64], weekend: bool| {
                    m.predict(x, ContextBucket::from_features(x, weekend)).expect("columns checked above").probabilities
                })
            })
        }
        _ => Err(EvalError::Train("model must hold one booster or a depth-wise and leaf-wise pair".into())),
    }
}
