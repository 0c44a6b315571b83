//! Multiclass gradient boosting: depth-wise and leaf-wise-with-GOSS growth.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::goss::{goss_sample, GossConfig};
use super::tree::{grow_tree, BinnedMatrix, DecisionTree, GrowParams};
use super::EnsembleError;
use crate::model::SeverityLevel;
use crate::rng::{derive_seed, seeded};

pub const N_CLASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Depthwise,
    Leafwise,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Depthwise => "depthwise",
            Variant::Leafwise => "leafwise",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = EnsembleError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "depthwise" => Ok(Variant::Depthwise),
            "leafwise" => Ok(Variant::Leafwise),
            other => Err(EnsembleError::InvalidConfig(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoosterConfig {
    pub variant: Variant,
    pub n_estimators: usize,
    pub max_depth: usize,
    pub num_leaves: usize,
    pub min_child_weight: f64,
    pub min_child_samples: usize,
    pub learning_rate: f64,
    /// Row fraction per round; depth-wise only. Leaf-wise rounds use GOSS.
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub reg_alpha: f64,
    pub reg_lambda: f64,
    pub gamma: f64,
    pub seed: u64,
    /// Recorded from the preset; only gradient boosting is implemented.
    pub boosting_type: String,
}

impl BoosterConfig {
    /// Depth-wise regularised preset.
    pub fn depthwise_preset() -> Self {
        BoosterConfig {
            variant: Variant::Depthwise,
            n_estimators: 114,
            max_depth: 3,
            num_leaves: 8,
            min_child_weight: 3.0,
            min_child_samples: 1,
            learning_rate: 0.07600002770236322,
            subsample: 0.9820341765138635,
            colsample_bytree: 0.9998673385112622,
            reg_alpha: 7.817258654943406e-05,
            reg_lambda: 4.980310548511174e-05,
            gamma: 0.000712326191489122,
            seed: 0,
            boosting_type: "gbtree".into(),
        }
    }

    /// Leaf-wise preset. The published block lists `boosting_type: gbd`,
    /// read here as plain gradient boosting.
    pub fn leafwise_preset() -> Self {
        BoosterConfig {
            variant: Variant::Leafwise,
            n_estimators: 101,
            max_depth: 3,
            num_leaves: 33,
            min_child_weight: 1e-3,
            min_child_samples: 100,
            learning_rate: 0.15202067057852842,
            subsample: 0.9748228026992201,
            colsample_bytree: 0.696571764024241,
            reg_alpha: 0.001825422639063087,
            reg_lambda: 2.3454548994016394e-05,
            gamma: 0.0,
            seed: 0,
            boosting_type: "gbd".into(),
        }
    }

    pub fn preset(variant: Variant) -> Self {
        match variant {
            Variant::Depthwise => Self::depthwise_preset(),
            Variant::Leafwise => Self::leafwise_preset(),
        }
    }

    pub fn validate(&self) -> Result<(), EnsembleError> {
        let bad = |m: &str| Err(EnsembleError::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.learning_rate) {
            return bad("learning_rate must lie in [0, 1]");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must lie in (0, 1]");
        }
        if !(self.colsample_bytree > 0.0 && self.colsample_bytree <= 1.0) {
            return bad("colsample_bytree must lie in (0, 1]");
        }
        if self.reg_alpha < 0.0 || self.reg_lambda < 0.0 || self.gamma < 0.0 || self.min_child_weight < 0.0 {
            return bad("regularisers must be non-negative");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be positive");
        }
        if self.variant == Variant::Leafwise && self.num_leaves < 2 {
            return bad("num_leaves must be at least 2");
        }
        Ok(())
    }

    fn grow_params(&self) -> GrowParams {
        GrowParams {
            max_depth: self.max_depth,
            max_leaves: (self.variant == Variant::Leafwise).then_some(self.num_leaves),
            lambda: self.reg_lambda,
            alpha: self.reg_alpha,
            gamma: self.gamma,
            min_child_weight: self.min_child_weight,
            min_child_samples: self.min_child_samples.max(1),
            learning_rate: self.learning_rate,
        }
    }
}

/// A fitted booster: per-class base margins plus one tree per class per round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Booster {
    pub config: BoosterConfig,
    pub goss: Option<GossConfig>,
    pub base_score: [f64; N_CLASSES],
    pub n_features: usize,
    /// `trees[round][class]`.
    pub trees: Vec<Vec<DecisionTree>>,
}

/// Per-round training log-loss, for diagnostics and the descent check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub log_loss: Vec<f64>,
}

pub fn softmax(margins: &[f64; N_CLASSES]) -> [f64; N_CLASSES] {
    let m = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = margins.map(|x| (x - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|x| x / s)
}

/// `g = p_c − 1{y=c}`, `h = p_c(1 − p_c)` for each sample and class.
pub fn softmax_gradients(
    labels: &[SeverityLevel],
    margins: &[[f64; N_CLASSES]],
) -> Vec<[(f64, f64); N_CLASSES]> {
    labels
        .iter()
        .zip(margins)
        .map(|(y, m)| {
            let p = softmax(m);
            std::array::from_fn(|c| {
                let target = if y.index() == c { 1.0 } else { 0.0 };
                (p[c] - target, p[c] * (1.0 - p[c]))
            })
        })
        .collect()
}

pub fn log_loss(labels: &[SeverityLevel], margins: &[[f64; N_CLASSES]]) -> f64 {
    let total: f64 = labels
        .iter()
        .zip(margins)
        .map(|(y, m)| {
            let mx = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + m.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
            lse - m[y.index()]
        })
        .sum();
    total / labels.len().max(1) as f64
}

impl Booster {
    pub fn predict_margin(&self, x: &[f64]) -> [f64; N_CLASSES] {
        let mut m = self.base_score;
        for round in &self.trees {
            for (c, t) in round.iter().enumerate() {
                m[c] += t.predict(x);
            }
        }
        m
    }

    pub fn predict_proba(&self, x: &[f64]) -> [f64; N_CLASSES] {
        softmax(&self.predict_margin(x))
    }

    pub fn node_count(&self) -> usize {
        self.trees.iter().flatten().map(|t| t.nodes.len()).sum()
    }

    pub fn fit(
        rows: &[Vec<f64>],
        labels: &[SeverityLevel],
        config: &BoosterConfig,
        goss: Option<&GossConfig>,
    ) -> Result<(Booster, FitTrace), EnsembleError> {
        match config.variant {
            Variant::Depthwise => fit_depthwise(rows, labels, config),
            Variant::Leafwise => fit_leafwise_goss(rows, labels, config, goss.copied().unwrap_or_default()),
        }
    }
}

pub fn fit_depthwise(
    rows: &[Vec<f64>],
    labels: &[SeverityLevel],
    config: &BoosterConfig,
) -> Result<(Booster, FitTrace), EnsembleError> {
    let mut cfg = config.clone();
    cfg.variant = Variant::Depthwise;
    fit(rows, labels, &cfg, None)
}

pub fn fit_leafwise_goss(
    rows: &[Vec<f64>],
    labels: &[SeverityLevel],
    config: &BoosterConfig,
    goss: GossConfig,
) -> Result<(Booster, FitTrace), EnsembleError> {
    goss.validate()?;
    let mut cfg = config.clone();
    cfg.variant = Variant::Leafwise;
    fit(rows, labels, &cfg, Some(goss))
}

/// Leaf-wise growth on every row with unit weights, no sampling.
pub fn fit_leafwise_full(
    rows: &[Vec<f64>],
    labels: &[SeverityLevel],
    config: &BoosterConfig,
) -> Result<(Booster, FitTrace), EnsembleError> {
    let mut cfg = config.clone();
    cfg.variant = Variant::Leafwise;
    fit(rows, labels, &cfg, None)
}

const STREAM_ROWS: u64 = 1;
const STREAM_COLS: u64 = 2;

fn fit(
    rows: &[Vec<f64>],
    labels: &[SeverityLevel],
    config: &BoosterConfig,
    goss: Option<GossConfig>,
) -> Result<(Booster, FitTrace), EnsembleError> {
    config.validate()?;
    if rows.is_empty() {
        return Err(EnsembleError::EmptyInput);
    }
    if rows.len() != labels.len() {
        return Err(EnsembleError::FeatureMismatch { expected: rows.len(), got: labels.len() });
    }
    let d = rows[0].len();
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(EnsembleError::FeatureMismatch { expected: d, got: r.len() });
    }
    let n = rows.len();
    let mut counts = [0usize; N_CLASSES];
    for l in labels {
        counts[l.index()] += 1;
    }
    if counts.iter().filter(|c| **c > 0).count() < 2 {
        return Err(EnsembleError::SingleClassInput);
    }
    let base_score: [f64; N_CLASSES] = std::array::from_fn(|c| ((counts[c] as f64).max(0.5) / n as f64).ln());
    let binned = BinnedMatrix::new(rows, d);
    let params = config.grow_params();
    let n_cols = ((config.colsample_bytree * d as f64).round() as usize).clamp(1, d);
    let n_sub = ((config.subsample * n as f64).round() as usize).clamp(1, n);

    let mut margins = vec![base_score; n];
    let mut trace = FitTrace { log_loss: vec![log_loss(labels, &margins)] };
    let mut trees = Vec::with_capacity(config.n_estimators);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut weight = vec![1.0; n];
    for round in 0..config.n_estimators {
        let gh = softmax_gradients(labels, &margins);
        let round_seed = derive_seed(config.seed, round as u64);
        let (selected, weights): (Vec<u32>, Option<Vec<f64>>) = match (config.variant, &goss) {
            (Variant::Leafwise, Some(g)) => {
                let magnitude: Vec<f64> = gh.iter().map(|r| r.iter().map(|(g, _)| g.abs()).sum()).collect();
                let s = goss_sample(&magnitude, labels, g, derive_seed(round_seed, STREAM_ROWS))?;
                (s.indices, Some(s.weights))
            }
            (Variant::Depthwise, _) if n_sub < n => {
                let mut rng = seeded(derive_seed(round_seed, STREAM_ROWS));
                let mut idx: Vec<u32> = sample(&mut rng, n, n_sub).into_iter().map(|i| i as u32).collect();
                idx.sort_unstable();
                (idx, None)
            }
            _ => ((0..n as u32).collect(), None),
        };
        let mut round_trees = Vec::with_capacity(N_CLASSES);
        for c in 0..N_CLASSES {
            for (k, &i) in selected.iter().enumerate() {
                let w = weights.as_ref().map_or(1.0, |w| w[k]);
                let (g, h) = gh[i as usize][c];
                grad[i as usize] = g * w;
                hess[i as usize] = h * w;
                weight[i as usize] = w;
            }
            let features: Vec<usize> = if n_cols < d {
                let mut rng = seeded(derive_seed(round_seed, STREAM_COLS + c as u64 * 16));
                let mut f = sample(&mut rng, d, n_cols).into_vec();
                f.sort_unstable();
                f
            } else {
                (0..d).collect()
            };
            round_trees.push(grow_tree(&binned, &grad, &hess, Some(&weight), selected.clone(), &features, &params));
        }
        for (m, x) in margins.iter_mut().zip(rows) {
            for (c, t) in round_trees.iter().enumerate() {
                m[c] += t.predict(x);
            }
        }
        trace.log_loss.push(log_loss(labels, &margins));
        trees.push(round_trees);
    }
    Ok((Booster { config: config.clone(), goss, base_score, n_features: d, trees }, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn separable(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<SeverityLevel>) {
        let mut rng = crate::rng::seeded(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.random();
            let b: f64 = rng.random();
            let c = (a >= 0.5) as usize * 2 + (b >= 0.5) as usize;
            rows.push(vec![a, b]);
            labels.push(SeverityLevel::ALL[c]);
        }
        (rows, labels)
    }

    fn quick(variant: Variant) -> BoosterConfig {
        BoosterConfig {
            n_estimators: 20,
            learning_rate: 0.3,
            subsample: 1.0,
            colsample_bytree: 1.0,
            min_child_samples: 1,
            min_child_weight: 0.0,
            ..BoosterConfig::preset(variant)
        }
    }

    fn accuracy(b: &Booster, rows: &[Vec<f64>], labels: &[SeverityLevel]) -> f64 {
        let hits = rows
            .iter()
            .zip(labels)
            .filter(|(x, y)| {
                let p = b.predict_proba(x);
                let arg = (0..4).max_by(|&i, &j| p[i].total_cmp(&p[j])).unwrap();
                arg == y.index()
            })
            .count();
        hits as f64 / rows.len() as f64
    }

    #[test]
    fn uniform_margin_gradients() {
        let g = softmax_gradients(&[SeverityLevel::Minor], &[[0.0; 4]]);
        let expect = [-0.75, 0.25, 0.25, 0.25];
        for c in 0..4 {
            assert!((g[0][c].0 - expect[c]).abs() < 1e-15);
            assert!((g[0][c].1 - 0.1875).abs() < 1e-15);
        }
        let g = softmax_gradients(&[SeverityLevel::Fatal], &[[-40.0, -40.0, -40.0, 40.0]]);
        assert!(g[0].iter().all(|(gg, h)| gg.abs() < 1e-30 && *h <= 0.25));
    }

    #[test]
    fn separable_set_fits_both_variants() {
        let (rows, labels) = separable(800, 1);
        for v in [Variant::Depthwise, Variant::Leafwise] {
            let (b, trace) = Booster::fit(&rows, &labels, &quick(v), Some(&GossConfig::disabled())).unwrap();
            assert!(accuracy(&b, &rows, &labels) >= 0.99, "{v:?}");
            assert!(trace.log_loss.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{v:?}");
        }
    }

    #[test]
    fn zero_learning_rate_is_base_score() {
        let (rows, labels) = separable(200, 2);
        let cfg = BoosterConfig { learning_rate: 0.0, ..quick(Variant::Depthwise) };
        let (b, _) = fit_depthwise(&rows, &labels, &cfg).unwrap();
        assert_eq!(b.predict_margin(&rows[0]), b.base_score);
    }

    #[test]
    fn single_class_rejected() {
        let rows = vec![vec![1.0]; 10];
        let labels = vec![SeverityLevel::Minor; 10];
        assert!(matches!(
            fit_depthwise(&rows, &labels, &quick(Variant::Depthwise)),
            Err(EnsembleError::SingleClassInput)
        ));
    }

    #[test]
    fn structural_bounds() {
        let (rows, labels) = separable(600, 3);
        let cfg = BoosterConfig { num_leaves: 2, max_depth: 6, ..quick(Variant::Leafwise) };
        let (b, _) = fit_leafwise_goss(&rows, &labels, &cfg, GossConfig::default()).unwrap();
        assert!(b.trees.iter().flatten().all(|t| t.leaf_count() <= 2 && t.is_well_formed()));
        let (b, _) = fit_depthwise(&rows, &labels, &quick(Variant::Depthwise)).unwrap();
        assert!(b.trees.iter().flatten().all(|t| t.depth() <= 3));
    }

    #[test]
    fn goss_off_matches_full_data() {
        let (rows, labels) = separable(500, 4);
        let cfg = BoosterConfig { colsample_bytree: 0.5, subsample: 0.5, ..quick(Variant::Leafwise) };
        let (a, _) = fit_leafwise_goss(&rows, &labels, &cfg, GossConfig::disabled()).unwrap();
        let (b, _) = fit(&rows, &labels, &cfg, None).unwrap();
        assert_eq!(a.trees, b.trees);
    }

    #[test]
    fn column_permutation_invariance() {
        let (rows, labels) = separable(400, 5);
        let swapped: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[1], r[0]]).collect();
        let cfg = quick(Variant::Depthwise);
        let (a, _) = fit_depthwise(&rows, &labels, &cfg).unwrap();
        let (b, _) = fit_depthwise(&swapped, &labels, &cfg).unwrap();
        for (x, y) in rows.iter().zip(&swapped).take(100) {
            let (pa, pb) = (a.predict_proba(x), b.predict_proba(y));
            for c in 0..4 {
                assert!((pa[c] - pb[c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn presets_validate() {
        BoosterConfig::depthwise_preset().validate().unwrap();
        BoosterConfig::leafwise_preset().validate().unwrap();
        assert!(BoosterConfig { learning_rate: 1.5, ..BoosterConfig::depthwise_preset() }.validate().is_err());
    }
}
