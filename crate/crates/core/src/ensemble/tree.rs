//! Histogram-based regression trees fitted to second-order gradients.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Bin index reserved for missing values; missing values always go left.
const NAN_BIN: u8 = u8::MAX;
/// At most 255 value bins per feature.
pub const MAX_BINS: usize = 255;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// `None` for leaves.
    pub feature_index: Option<usize>,
    /// Rows with `x[feature] <= threshold` or missing go left.
    pub threshold: f64,
    pub left_child: Option<usize>,
    pub right_child: Option<usize>,
    /// Output for leaves; the node's own Newton step for internal nodes.
    pub leaf_value: f64,
    /// Weighted count of training rows reaching the node.
    pub cover: f64,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.feature_index.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn constant(value: f64) -> Self {
        DecisionTree {
            nodes: vec![Node {
                feature_index: None,
                threshold: 0.0,
                left_child: None,
                right_child: None,
                leaf_value: value,
                cover: 0.0,
            }],
        }
    }

    /// Index of the leaf reached by `x`.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            match (n.feature_index, n.left_child, n.right_child) {
                (Some(f), Some(l), Some(r)) => {
                    let v = x[f];
                    i = if v.is_nan() || v <= n.threshold { l } else { r };
                }
                _ => return i,
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.nodes[self.leaf_index(x)].leaf_value
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &DecisionTree, i: usize) -> usize {
            match (t.nodes[i].left_child, t.nodes[i].right_child) {
                (Some(l), Some(r)) => 1 + go(t, l).max(go(t, r)),
                _ => 0,
            }
        }
        go(self, 0)
    }

    /// Cover-weighted mean of leaf values below each node.
    pub fn expected_values(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.nodes.len()];
        fn go(t: &DecisionTree, i: usize, out: &mut [f64]) -> f64 {
            let n = &t.nodes[i];
            let v = match (n.left_child, n.right_child) {
                (Some(l), Some(r)) => {
                    let (el, er) = (go(t, l, out), go(t, r, out));
                    let (cl, cr) = (t.nodes[l].cover, t.nodes[r].cover);
                    if cl + cr > 0.0 {
                        (cl * el + cr * er) / (cl + cr)
                    } else {
                        0.5 * (el + er)
                    }
                }
                _ => n.leaf_value,
            };
            out[i] = v;
            v
        }
        go(self, 0, &mut out);
        out
    }

    /// Structural checks: two children per internal node, finite leaves.
    pub fn is_well_formed(&self) -> bool {
        self.nodes.iter().all(|n| match (n.feature_index, n.left_child, n.right_child) {
            (Some(_), Some(l), Some(r)) => l < self.nodes.len() && r < self.nodes.len() && n.threshold.is_finite(),
            (None, None, None) => n.leaf_value.is_finite(),
            _ => false,
        })
    }
}

/// Quantised feature matrix, column-major.
#[derive(Debug, Clone)]
pub struct BinnedMatrix {
    pub n_rows: usize,
    pub n_features: usize,
    bins: Vec<u8>,
    /// Upper edges: bin `b` holds values in `(t[b-1], t[b]]`.
    pub thresholds: Vec<Vec<f64>>,
}

impl BinnedMatrix {
    pub fn new(rows: &[Vec<f64>], n_features: usize) -> Self {
        let n_rows = rows.len();
        let mut bins = vec![0u8; n_rows * n_features];
        let mut thresholds = Vec::with_capacity(n_features);
        for f in 0..n_features {
            let mut values: Vec<f64> = rows.iter().map(|r| r[f]).filter(|v| !v.is_nan()).collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            let t: Vec<f64> = if values.len() <= MAX_BINS {
                values.iter().take(values.len().saturating_sub(1)).copied().collect()
            } else {
                let m = values.len();
                let mut t: Vec<f64> = (1..MAX_BINS).map(|i| values[i * m / MAX_BINS - 1]).collect();
                t.dedup();
                t
            };
            let col = &mut bins[f * n_rows..(f + 1) * n_rows];
            for (slot, r) in col.iter_mut().zip(rows) {
                let v = r[f];
                *slot = if v.is_nan() { NAN_BIN } else { t.partition_point(|&e| e < v) as u8 };
            }
            thresholds.push(t);
        }
        BinnedMatrix { n_rows, n_features, bins, thresholds }
    }

    fn column(&self, f: usize) -> &[u8] {
        &self.bins[f * self.n_rows..(f + 1) * self.n_rows]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowParams {
    pub max_depth: usize,
    /// Best-first growth to this many leaves when set; level-wise otherwise.
    pub max_leaves: Option<usize>,
    pub lambda: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
    pub min_child_samples: usize,
    pub learning_rate: f64,
}

/// Soft-thresholded gradient sum.
fn l1(g: f64, alpha: f64) -> f64 {
    if g > alpha {
        g - alpha
    } else if g < -alpha {
        g + alpha
    } else {
        0.0
    }
}

impl GrowParams {
    fn score(&self, g: f64, h: f64) -> f64 {
        let t = l1(g, self.alpha);
        t * t / (h + self.lambda)
    }

    pub fn leaf_value(&self, g: f64, h: f64) -> f64 {
        if h + self.lambda <= 0.0 {
            return 0.0;
        }
        -l1(g, self.alpha) / (h + self.lambda) * self.learning_rate
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Bin {
    g: f64,
    h: f64,
    w: f64,
    n: usize,
}

#[derive(Debug, Clone, Copy)]
struct Split {
    feature: usize,
    bin: usize,
    gain: f64,
}

struct Leaf {
    node: usize,
    depth: usize,
    rows: Vec<u32>,
    hist: Vec<Vec<Bin>>,
    split: Option<Split>,
}

struct Grower<'a> {
    data: &'a BinnedMatrix,
    grad: &'a [f64],
    hess: &'a [f64],
    weight: Option<&'a [f64]>,
    features: &'a [usize],
    params: &'a GrowParams,
}

impl Grower<'_> {
    /// One histogram per candidate feature; the last slot holds missing values.
    fn histogram(&self, rows: &[u32]) -> Vec<Vec<Bin>> {
        self.features
            .iter()
            .map(|&f| {
                let mut h = vec![Bin::default(); self.data.thresholds[f].len() + 2];
                let nan_slot = h.len() - 1;
                let col = self.data.column(f);
                for &r in rows {
                    let r = r as usize;
                    let b = col[r];
                    let slot = if b == NAN_BIN { nan_slot } else { b as usize };
                    let e = &mut h[slot];
                    e.g += self.grad[r];
                    e.h += self.hess[r];
                    e.w += self.weight.map_or(1.0, |w| w[r]);
                    e.n += 1;
                }
                h
            })
            .collect()
    }

    fn best_split(&self, hist: &[Vec<Bin>], depth: usize) -> Option<Split> {
        if depth >= self.params.max_depth {
            return None;
        }
        let p = self.params;
        let mut best: Option<Split> = None;
        for (k, h) in hist.iter().enumerate() {
            let nan = h[h.len() - 1];
            let (gt, ht, nt) = h.iter().fold((0.0, 0.0, 0), |(g, hh, n), b| (g + b.g, hh + b.h, n + b.n));
            let parent = p.score(gt, ht);
            let (mut gl, mut hl, mut nl) = (nan.g, nan.h, nan.n);
            for (b, e) in h[..h.len() - 2].iter().enumerate() {
                gl += e.g;
                hl += e.h;
                nl += e.n;
                let (gr, hr, nr) = (gt - gl, ht - hl, nt - nl);
                if nl == 0 || nr == 0 {
                    continue;
                }
                if nl < p.min_child_samples || nr < p.min_child_samples {
                    continue;
                }
                if hl < p.min_child_weight || hr < p.min_child_weight {
                    continue;
                }
                let gain = 0.5 * (p.score(gl, hl) + p.score(gr, hr) - parent) - p.gamma;
                if gain > 0.0 && best.is_none_or(|s| gain > s.gain) {
                    best = Some(Split { feature: k, bin: b, gain });
                }
            }
        }
        best
    }

    fn totals(hist: &[Vec<Bin>]) -> (f64, f64, f64) {
        hist.first().map_or((0.0, 0.0, 0.0), |h| h.iter().fold((0.0, 0.0, 0.0), |(g, hh, w), b| (g + b.g, hh + b.h, w + b.w)))
    }

    fn subtract(parent: &[Vec<Bin>], child: &[Vec<Bin>]) -> Vec<Vec<Bin>> {
        parent
            .iter()
            .zip(child)
            .map(|(p, c)| p.iter().zip(c).map(|(a, b)| Bin { g: a.g - b.g, h: a.h - b.h, w: a.w - b.w, n: a.n - b.n }).collect())
            .collect()
    }

    fn grow(&self, rows: Vec<u32>) -> DecisionTree {
        let p = self.params;
        let root_hist = self.histogram(&rows);
        let (g, h, w) = Self::totals(&root_hist);
        let mut tree = DecisionTree { nodes: vec![leaf_node(p.leaf_value(g, h), w)] };
        let split = self.best_split(&root_hist, 0);
        let mut open = vec![Leaf { node: 0, depth: 0, rows, hist: root_hist, split }];
        let mut leaves = 1;
        let max_leaves = p.max_leaves.unwrap_or(usize::MAX);
        while leaves < max_leaves {
            // Level-wise: split the shallowest splittable leaf first (ties by
            // creation order). Best-first: the highest gain.
            let pick = open
                .iter()
                .enumerate()
                .filter_map(|(i, l)| l.split.map(|s| (i, l.depth, s.gain)))
                .min_by(|a, b| {
                    if p.max_leaves.is_some() {
                        b.2.total_cmp(&a.2).then(a.0.cmp(&b.0))
                    } else {
                        a.1.cmp(&b.1).then(a.0.cmp(&b.0))
                    }
                });
            let Some((i, _, _)) = pick else { break };
            let leaf = open.remove(i);
            let s = leaf.split.expect("picked leaves have splits");
            let f = self.features[s.feature];
            let col = self.data.column(f);
            let (left, right): (Vec<u32>, Vec<u32>) =
                leaf.rows.iter().partition(|&&r| col[r as usize] == NAN_BIN || col[r as usize] as usize <= s.bin);
            let (small_is_left, small) = if left.len() <= right.len() { (true, &left) } else { (false, &right) };
            let small_hist = self.histogram(small);
            let big_hist = Self::subtract(&leaf.hist, &small_hist);
            let (lh, rh) = if small_is_left { (small_hist, big_hist) } else { (big_hist, small_hist) };
            let depth = leaf.depth + 1;
            let make = |rows: Vec<u32>, hist: Vec<Vec<Bin>>, tree: &mut DecisionTree| {
                let (g, h, w) = Self::totals(&hist);
                let node = tree.nodes.len();
                tree.nodes.push(leaf_node(p.leaf_value(g, h), w));
                let split = self.best_split(&hist, depth);
                (node, Leaf { node, depth, rows, hist, split })
            };
            let (li, l) = make(left, lh, &mut tree);
            let (ri, r) = make(right, rh, &mut tree);
            let n = &mut tree.nodes[leaf.node];
            n.feature_index = Some(f);
            n.threshold = self.data.thresholds[f][s.bin];
            n.left_child = Some(li);
            n.right_child = Some(ri);
            open.push(l);
            open.push(r);
            leaves += 1;
        }
        tree
    }
}

fn leaf_node(value: f64, cover: f64) -> Node {
    Node { feature_index: None, threshold: 0.0, left_child: None, right_child: None, leaf_value: value, cover }
}

/// Grows one tree on `rows` using only `features`. `grad` and `hess` are
/// indexed by row and already carry any sample weights; `weight` only
/// feeds node covers.
pub fn grow_tree(
    data: &BinnedMatrix,
    grad: &[f64],
    hess: &[f64],
    weight: Option<&[f64]>,
    rows: Vec<u32>,
    features: &[usize],
    params: &GrowParams,
) -> DecisionTree {
    Grower { data, grad, hess, weight, features, params }.grow(rows)
}

/// Split-feature usage counts, for diagnostics.
pub fn split_counts(trees: &[DecisionTree]) -> BTreeMap<usize, usize> {
    let mut out = BTreeMap::new();
    for t in trees {
        for f in t.nodes.iter().filter_map(|n| n.feature_index) {
            *out.entry(f).or_insert(0) += 1;
        }
    }
    out
}
