//! Path attribution over tree ensembles, and an exact Shapley oracle.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::booster::{Booster, N_CLASSES};
use super::meta::ContextBucket;
use super::model::EnsembleModel;
use super::tree::DecisionTree;
use super::EnsembleError;
use crate::features::{feature_group, FactorGroup, FEATURE_NAMES};
use crate::model::SeverityLevel;

pub const MAX_SHAPLEY_FEATURES: usize = 10;

/// Coefficients over class margins for the "risk" quantity served to users:
/// mean margin of the non-minor classes minus the minor margin.
pub const RISK_COEFFICIENTS: [f64; N_CLASSES] = [-1.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub coefficients: [f64; N_CLASSES],
    pub base_value: f64,
    pub contributions: Vec<f64>,
    /// Signed contribution totals per factor group.
    pub grouped: BTreeMap<FactorGroup, f64>,
    /// The explained value; `base_value + Σ contributions`.
    pub margin: f64,
}

impl AttributionResult {
    /// Share of absolute attribution mass per group; sums to 1. Uniform when
    /// every contribution is zero.
    pub fn factor_shares(&self, feature_names: &[String]) -> BTreeMap<FactorGroup, f64> {
        let mut mass: BTreeMap<FactorGroup, f64> = FactorGroup::ALL.iter().map(|g| (*g, 0.0)).collect();
        for (name, c) in feature_names.iter().zip(&self.contributions) {
            if let Some(g) = group_of(name) {
                *mass.get_mut(&g).expect("all groups present") += c.abs();
            }
        }
        let total: f64 = mass.values().sum();
        if total > 0.0 {
            mass.values_mut().for_each(|v| *v /= total);
        } else {
            mass.values_mut().for_each(|v| *v = 1.0 / FactorGroup::ALL.len() as f64);
        }
        mass
    }
}

pub fn group_of(feature_name: &str) -> Option<FactorGroup> {
    FEATURE_NAMES.iter().position(|n| *n == feature_name).map(feature_group)
}

/// Trees splitting on more distinct features than this fall back to
/// single-path attribution.
pub const MAX_TREE_SUBSET_FEATURES: usize = 12;

/// Walks `x`'s path, crediting each split's change in cover-weighted
/// expectation to the split feature. Returns the root expectation.
pub fn tree_path_attribution(tree: &DecisionTree, x: &[f64], scale: f64, out: &mut [f64]) -> f64 {
    let expected = tree.expected_values();
    let mut i = 0;
    while let (Some(f), Some(l), Some(r)) =
        (tree.nodes[i].feature_index, tree.nodes[i].left_child, tree.nodes[i].right_child)
    {
        let v = x[f];
        let next = if v.is_nan() || v <= tree.nodes[i].threshold { l } else { r };
        out[f] += scale * (expected[next] - expected[i]);
        i = next;
    }
    scale * expected[0]
}

/// Expected tree output when only the features in `known` (a bitmask over
/// `features`) are fixed to `x`; unknown splits average both branches by cover.
fn conditional_expectation(tree: &DecisionTree, x: &[f64], features: &[usize], known: usize, node: usize) -> f64 {
    let n = &tree.nodes[node];
    let (Some(f), Some(l), Some(r)) = (n.feature_index, n.left_child, n.right_child) else {
        return n.leaf_value;
    };
    let slot = features.iter().position(|&g| g == f).expect("feature list covers the tree");
    if known >> slot & 1 == 1 {
        let v = x[f];
        let next = if v.is_nan() || v <= n.threshold { l } else { r };
        return conditional_expectation(tree, x, features, known, next);
    }
    let (cl, cr) = (tree.nodes[l].cover, tree.nodes[r].cover);
    let (el, er) = (
        conditional_expectation(tree, x, features, known, l),
        conditional_expectation(tree, x, features, known, r),
    );
    if cl + cr > 0.0 {
        (cl * el + cr * er) / (cl + cr)
    } else {
        0.5 * (el + er)
    }
}

/// Exact Shapley values of one tree under the cover-weighted conditional
/// expectation, enumerating subsets of the tree's own split features.
/// Returns the root expectation; `base + Σ out` equals the tree output.
pub fn tree_attribution(tree: &DecisionTree, x: &[f64], scale: f64, out: &mut [f64]) -> f64 {
    let mut features: Vec<usize> = tree.nodes.iter().filter_map(|n| n.feature_index).collect();
    features.sort_unstable();
    features.dedup();
    let k = features.len();
    if k > MAX_TREE_SUBSET_FEATURES {
        return tree_path_attribution(tree, x, scale, out);
    }
    let value: Vec<f64> = (0..1usize << k).map(|m| conditional_expectation(tree, x, &features, m, 0)).collect();
    let fact: Vec<f64> = factorials(k);
    for (j, &f) in features.iter().enumerate() {
        let mut phi = 0.0;
        for mask in 0..(1usize << k) {
            if mask >> j & 1 == 1 {
                continue;
            }
            let s = mask.count_ones() as usize;
            phi += fact[s] * fact[k - s - 1] / fact[k] * (value[mask | 1 << j] - value[mask]);
        }
        out[f] += scale * phi;
    }
    scale * value[0]
}

fn factorials(n: usize) -> Vec<f64> {
    let mut f = vec![1.0; n + 1];
    for i in 1..=n {
        f[i] = f[i - 1] * i as f64;
    }
    f
}

/// Attribution of `Σ_c coef_c·margin_c` for one booster.
pub fn booster_attribution(booster: &Booster, x: &[f64], coefficients: &[f64; N_CLASSES], out: &mut [f64]) -> f64 {
    let mut base: f64 = booster.base_score.iter().zip(coefficients).map(|(b, k)| b * k).sum();
    for round in &booster.trees {
        for (c, t) in round.iter().enumerate() {
            if coefficients[c] != 0.0 {
                base += tree_attribution(t, x, coefficients[c], out);
            }
        }
    }
    base
}

/// Explains a linear combination of the ensemble's weighted class margins.
pub fn attribute_linear(
    model: &EnsembleModel,
    x: &[f64],
    context: ContextBucket,
    coefficients: [f64; N_CLASSES],
) -> Result<AttributionResult, EnsembleError> {
    let margins = model.margin(x, context)?;
    let weights = model.weights(context);
    let mut contributions = vec![0.0; x.len()];
    let mut base_value = 0.0;
    for (b, w) in model.boosters.iter().zip(&weights) {
        if *w == 0.0 {
            continue;
        }
        let mut part = vec![0.0; x.len()];
        base_value += w * booster_attribution(b, x, &coefficients, &mut part);
        for (c, p) in contributions.iter_mut().zip(&part) {
            *c += w * p;
        }
    }
    let mut grouped: BTreeMap<FactorGroup, f64> = FactorGroup::ALL.iter().map(|g| (*g, 0.0)).collect();
    for (name, c) in model.feature_names.iter().zip(&contributions) {
        if let Some(g) = group_of(name) {
            *grouped.get_mut(&g).expect("all groups present") += c;
        }
    }
    let margin = margins.iter().zip(&coefficients).map(|(m, k)| m * k).sum();
    Ok(AttributionResult { coefficients, base_value, contributions, grouped, margin })
}

/// Explains one class's ensemble margin.
pub fn attribute_prediction(
    model: &EnsembleModel,
    x: &[f64],
    context: ContextBucket,
    class: SeverityLevel,
) -> Result<AttributionResult, EnsembleError> {
    let mut k = [0.0; N_CLASSES];
    k[class.index()] = 1.0;
    attribute_linear(model, x, context, k)
}

/// Exact Shapley values of `f` at `x`, where absent features take each
/// background row's values and the value of a coalition is the mean over
/// background rows. Exponential in the feature count.
pub fn brute_force_shapley<F: Fn(&[f64]) -> f64>(
    f: F,
    x: &[f64],
    background: &[Vec<f64>],
) -> Result<Vec<f64>, EnsembleError> {
    let d = x.len();
    if d > MAX_SHAPLEY_FEATURES {
        return Err(EnsembleError::TooManyFeatures { got: d, max: MAX_SHAPLEY_FEATURES });
    }
    if background.is_empty() {
        return Err(EnsembleError::EmptyInput);
    }
    let mut value = vec![0.0; 1 << d];
    let mut z = vec![0.0; d];
    for (mask, v) in value.iter_mut().enumerate() {
        let mut sum = 0.0;
        for b in background {
            for j in 0..d {
                z[j] = if mask >> j & 1 == 1 { x[j] } else { b[j] };
            }
            sum += f(&z);
        }
        *v = sum / background.len() as f64;
    }
    let fact = factorials(d);
    let mut phi = vec![0.0; d];
    for (i, p) in phi.iter_mut().enumerate() {
        for mask in 0..(1usize << d) {
            if mask >> i & 1 == 1 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let w = fact[s] * fact[d - s - 1] / fact[d];
            *p += w * (value[mask | 1 << i] - value[mask]);
        }
    }
    Ok(phi)
}
