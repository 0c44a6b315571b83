//! Inverse-distance kNN risk over standardised weather measurements.

use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::model::{SeverityLevel, WeatherSnapshot};

pub const DEFAULT_K: usize = 25;
const DIM: usize = 4;

/// Standardised (temperature, precipitation, visibility, wind) history with
/// severities, plus a kd-tree over it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherKnnIndex {
    pub k: usize,
    pub means: [f64; DIM],
    pub stds: [f64; DIM],
    pub points: Vec<[f64; DIM]>,
    pub severities: Vec<u8>,
    #[serde(skip)]
    tree: Vec<KdNode>,
}

#[derive(Debug, Clone, PartialEq)]
struct KdNode {
    idx: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

fn build(points: &[[f64; DIM]], ids: &mut [usize], depth: usize, nodes: &mut Vec<KdNode>) -> Option<usize> {
    if ids.is_empty() {
        return None;
    }
    let axis = depth % DIM;
    ids.sort_by(|&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
    let mid = ids.len() / 2;
    let slot = nodes.len();
    nodes.push(KdNode { idx: ids[mid], axis, left: None, right: None });
    let (lo, rest) = ids.split_at_mut(mid);
    let left = build(points, lo, depth + 1, nodes);
    let right = build(points, &mut rest[1..], depth + 1, nodes);
    nodes[slot].left = left;
    nodes[slot].right = right;
    Some(slot)
}

/// Bounded list of the k best (distance², index) pairs, sorted ascending.
struct Best {
    k: usize,
    items: Vec<(f64, usize)>,
}

impl Best {
    fn worst(&self) -> Option<f64> {
        (self.items.len() == self.k).then(|| self.items[self.k - 1].0)
    }

    fn offer(&mut self, d2: f64, idx: usize) {
        if self.items.len() == self.k {
            let (wd, wi) = self.items[self.k - 1];
            if (d2, idx) >= (wd, wi) {
                return;
            }
            self.items.pop();
        }
        let pos = self.items.partition_point(|&(d, i)| (d, i) < (d2, idx));
        self.items.insert(pos, (d2, idx));
    }
}

fn dist2(a: &[f64; DIM], b: &[f64; DIM]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl WeatherKnnIndex {
    pub fn fit(history: &[(WeatherSnapshot, SeverityLevel)], k: usize) -> Result<WeatherKnnIndex, FeatureError> {
        if history.is_empty() {
            return Err(FeatureError::EmptyHistory);
        }
        if k == 0 || k > history.len() {
            return Err(FeatureError::InvalidParams(format!("k = {k} with {} history rows", history.len())));
        }
        let raw: Vec<[f64; DIM]> = history.iter().map(|(s, _)| s.measurements()).collect();
        let n = raw.len() as f64;
        let mut means = [0.0; DIM];
        let mut stds = [0.0; DIM];
        for j in 0..DIM {
            means[j] = raw.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = raw.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n;
            stds[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        let points = raw.iter().map(|r| std::array::from_fn(|j| (r[j] - means[j]) / stds[j])).collect();
        let mut index = WeatherKnnIndex {
            k,
            means,
            stds,
            points,
            severities: history.iter().map(|(_, s)| s.code()).collect(),
            tree: Vec::new(),
        };
        index.rebuild();
        Ok(index)
    }

    /// Rebuilds the kd-tree; needed after deserialising.
    pub fn rebuild(&mut self) {
        let mut ids: Vec<usize> = (0..self.points.len()).collect();
        let mut nodes = Vec::with_capacity(ids.len());
        build(&self.points, &mut ids, 0, &mut nodes);
        self.tree = nodes;
    }

    pub fn standardize(&self, snapshot: &WeatherSnapshot) -> [f64; DIM] {
        let m = snapshot.measurements();
        std::array::from_fn(|j| (m[j] - self.means[j]) / self.stds[j])
    }

    /// The k nearest history rows as (distance, index), nearest first, ties
    /// by index. `exclude` drops one row (leave-one-out for training rows).
    pub fn nearest(&self, query: &[f64; DIM], k: usize, exclude: Option<usize>) -> Vec<(f64, usize)> {
        if self.tree.is_empty() && !self.points.is_empty() {
            // Deserialised without rebuild: fall back to a scan.
            let mut all: Vec<(f64, usize)> = (0..self.points.len())
                .filter(|i| Some(*i) != exclude)
                .map(|i| (dist2(query, &self.points[i]), i))
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
            all.truncate(k);
            return all.into_iter().map(|(d, i)| (d.sqrt(), i)).collect();
        }
        let mut best = Best { k, items: Vec::with_capacity(k + 1) };
        // Depth-first with near side first; far side only if the splitting
        // plane is within the current k-th distance (ties included).
        fn visit(idx: &WeatherKnnIndex, node: usize, q: &[f64; DIM], exclude: Option<usize>, best: &mut Best) {
            let n = &idx.tree[node];
            let p = &idx.points[n.idx];
            if Some(n.idx) != exclude {
                best.offer(dist2(q, p), n.idx);
            }
            let diff = q[n.axis] - p[n.axis];
            let (near, far) = if diff < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
            if let Some(c) = near {
                visit(idx, c, q, exclude, best);
            }
            if let Some(c) = far {
                if best.worst().is_none_or(|w| diff * diff <= w) {
                    visit(idx, c, q, exclude, best);
                }
            }
        }
        visit(self, 0, query, exclude, &mut best);
        best.items.into_iter().map(|(d2, i)| (d2.sqrt(), i)).collect()
    }

    pub fn risk(&self, snapshot: &WeatherSnapshot, exclude: Option<usize>) -> f64 {
        let q = self.standardize(snapshot);
        weighted_severity(&self.nearest(&q, self.k, exclude), &self.severities)
    }
}

/// `Σ w_i·(s_i/3) / Σ w_i` with `w_i = 1/(d_i + 1e-6)`.
pub fn weighted_severity(neighbors: &[(f64, usize)], severities: &[u8]) -> f64 {
    let (num, den) = neighbors.iter().fold((0.0, 0.0), |(n, d), &(dist, i)| {
        let w = 1.0 / (dist + 1e-6);
        (n + w * f64::from(severities[i]) / 3.0, d + w)
    });
    if den > 0.0 {
        (num / den).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// One-shot kNN risk against a history.
pub fn weather_knn_risk(
    query: &WeatherSnapshot,
    history: &[(WeatherSnapshot, SeverityLevel)],
    k: usize,
) -> Result<f64, FeatureError> {
    Ok(WeatherKnnIndex::fit(history, k)?.risk(query, None))
}
