//! Two-stage class rebalancing: random under-sampling of over-represented
//! classes, then SMOTE synthesis for under-represented ones.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::model::SeverityLevel;
use crate::rng::stream;

pub const DEFAULT_SMOTE_K: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum ResampleError {
    #[error("class {class}: target {target} exceeds current count {count}")]
    TargetExceedsCount { class: u8, target: usize, count: usize },
    #[error("class {class}: target {target} is below current count {count}")]
    TargetBelowCount { class: u8, target: usize, count: usize },
    #[error("class {class}: {count} samples, SMOTE with k = {k} needs at least {}", k + 1)]
    TooFewSamplesForK { class: u8, count: usize, k: usize },
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
}

/// Per-class target counts. Serialised as `{"0": 15000, ...}`.
pub type SamplingStrategy = BTreeMap<SeverityLevel, usize>;

pub fn parse_strategy(json: &str) -> Result<SamplingStrategy, ResampleError> {
    serde_json::from_str(json).map_err(|e| ResampleError::InvalidStrategy(e.to_string()))
}

/// Under-sampling targets used for the published model.
pub fn paper_under_strategy() -> SamplingStrategy {
    [(SeverityLevel::Minor, 15000)].into_iter().collect()
}

/// SMOTE targets used for the published model.
pub fn paper_over_strategy() -> SamplingStrategy {
    [(SeverityLevel::Moderate, 15000), (SeverityLevel::Serious, 10000), (SeverityLevel::Fatal, 5000)]
        .into_iter()
        .collect()
}

fn class_indices(data: &Dataset) -> [Vec<usize>; 4] {
    let mut by_class: [Vec<usize>; 4] = Default::default();
    for (i, l) in data.labels.iter().enumerate() {
        by_class[l.index()].push(i);
    }
    by_class
}

/// Uniform without-replacement subsample of each listed class down to its
/// target. Returns the subset (original order) and the kept input indices.
pub fn random_undersample(
    data: &Dataset,
    strategy: &SamplingStrategy,
    seed: u64,
) -> Result<(Dataset, Vec<usize>), ResampleError> {
    let by_class = class_indices(data);
    let mut keep = vec![true; data.len()];
    for (&class, &target) in strategy {
        let members = &by_class[class.index()];
        if target > members.len() {
            return Err(ResampleError::TargetExceedsCount { class: class.code(), target, count: members.len() });
        }
        let mut rng = stream(seed, class.index() as u64);
        let mut chosen = vec![false; members.len()];
        for j in sample(&mut rng, members.len(), target) {
            chosen[j] = true;
        }
        for (j, &i) in members.iter().enumerate() {
            keep[i] = chosen[j];
        }
    }
    let kept: Vec<usize> = (0..data.len()).filter(|&i| keep[i]).collect();
    Ok((data.subset(&kept), kept))
}

/// Parents of one synthetic row, as indices into the SMOTE input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOrigin {
    pub class: SeverityLevel,
    pub base: usize,
    pub neighbor: usize,
    pub u: f64,
}

/// Euclidean distance over coordinates present in both rows.
fn distance2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| !x.is_nan() && !y.is_nan()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn k_nearest(data: &Dataset, members: &[usize], i: usize, k: usize) -> Vec<usize> {
    let x = &data.rows[i];
    let mut d: Vec<(f64, usize)> =
        members.iter().filter(|&&j| j != i).map(|&j| (distance2(x, &data.rows[j]), j)).collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.truncate(k);
    d.into_iter().map(|(_, j)| j).collect()
}

/// Appends synthetic rows until every listed class reaches its target.
/// Originals keep their positions; synthetics follow, class by class.
/// Coordinates missing in either parent copy the base row.
pub fn smote_oversample(
    data: &Dataset,
    strategy: &SamplingStrategy,
    k: usize,
    seed: u64,
) -> Result<(Dataset, Vec<SyntheticOrigin>), ResampleError> {
    if k == 0 {
        return Err(ResampleError::InvalidStrategy("k must be positive".into()));
    }
    let by_class = class_indices(data);
    for (&class, &target) in strategy {
        let count = by_class[class.index()].len();
        if target < count {
            return Err(ResampleError::TargetBelowCount { class: class.code(), target, count });
        }
        if target > count && count < k + 1 {
            return Err(ResampleError::TooFewSamplesForK { class: class.code(), count, k });
        }
    }
    let mut out = data.clone();
    let mut origins = Vec::new();
    for (&class, &target) in strategy {
        let members = &by_class[class.index()];
        let needed = target - members.len();
        let mut rng = stream(seed, 16 + class.index() as u64);
        let mut neighbors: HashMap<usize, Vec<usize>> = HashMap::new();
        for _ in 0..needed {
            let base = members[rng.random_range(0..members.len())];
            let nn = neighbors.entry(base).or_insert_with(|| k_nearest(data, members, base, k));
            let neighbor = nn[rng.random_range(0..nn.len())];
            let u: f64 = rng.random();
            let x = &data.rows[base];
            let xn = &data.rows[neighbor];
            let row = x.iter().zip(xn).map(|(&a, &b)| if a.is_nan() || b.is_nan() { a } else { a + u * (b - a) }).collect();
            out.push(row, class, data.weekend[base]);
            origins.push(SyntheticOrigin { class, base, neighbor, u });
        }
    }
    Ok((out, origins))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleReport {
    pub seed: u64,
    pub before: BTreeMap<SeverityLevel, usize>,
    pub removed: BTreeMap<SeverityLevel, usize>,
    pub synthetic_count: BTreeMap<SeverityLevel, usize>,
    pub after: BTreeMap<SeverityLevel, usize>,
}

fn counts_map(c: [usize; 4]) -> BTreeMap<SeverityLevel, usize> {
    SeverityLevel::ALL.iter().map(|s| (*s, c[s.index()])).collect()
}

/// Under-sampling followed by SMOTE. Synthetic origins index into the
/// under-sampled set.
pub fn two_stage_balance(
    data: &Dataset,
    under: &SamplingStrategy,
    over: &SamplingStrategy,
    seed: u64,
) -> Result<(Dataset, ResampleReport, Vec<SyntheticOrigin>), ResampleError> {
    let before = data.class_counts();
    let (reduced, _) = random_undersample(data, under, seed)?;
    let mid = reduced.class_counts();
    let (balanced, origins) = smote_oversample(&reduced, over, DEFAULT_SMOTE_K, seed)?;
    let after = balanced.class_counts();
    let report = ResampleReport {
        seed,
        before: counts_map(before),
        removed: counts_map(std::array::from_fn(|c| before[c] - mid[c])),
        synthetic_count: counts_map(std::array::from_fn(|c| after[c] - mid[c])),
        after: counts_map(after),
    };
    Ok((balanced, report, origins))
}
