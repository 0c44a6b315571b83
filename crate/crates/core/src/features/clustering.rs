//! DBSCAN over great-circle distance, with optional density-adaptive radius.
//!
//! Neighbour search uses a latitude/longitude bucket grid sized so that any
//! pair within the radius falls in adjacent buckets. Border points join the
//! cluster of their nearest core point (ties broken by the core point's
//! coordinates), which makes the result independent of input order up to
//! label renaming.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cell::cell_of;
use crate::model::{haversine_km, GeoPoint, EARTH_RADIUS_KM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub eps_km: f64,
    pub min_samples: usize,
    pub adaptive: bool,
    pub adapt_bounds: [f64; 2],
    /// Cell resolution for the adaptive density estimate.
    pub adapt_resolution: u8,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams { eps_km: 1.0, min_samples: 3, adaptive: false, adapt_bounds: [0.5, 2.0], adapt_resolution: 9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClusterLabel {
    Noise,
    Cluster(u32),
}

impl ClusterLabel {
    pub fn cluster(self) -> Option<u32> {
        match self {
            ClusterLabel::Noise => None,
            ClusterLabel::Cluster(c) => Some(c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub label: ClusterLabel,
    /// Members per km²; zero for noise.
    pub density: f64,
}

struct Grid {
    lat_size: f64,
    lon_buckets: i64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl Grid {
    /// `None` when the radius is too large for a useful grid.
    fn new(points: &[GeoPoint], eps_km: f64) -> Option<Grid> {
        let max_abs_lat = points.iter().map(|p| p.lat().abs()).fold(0.0, f64::max);
        let c = max_abs_lat.to_radians().cos();
        let s = (eps_km / (2.0 * EARTH_RADIUS_KM)).sin() / c;
        if !(s < 0.25) {
            return None;
        }
        // A pair within eps differs by at most this much in longitude.
        let lon_size = (2.0 * s.asin()).to_degrees() * (1.0 + 1e-9);
        let lat_size = (eps_km / EARTH_RADIUS_KM).to_degrees() * (1.0 + 1e-9);
        let lon_buckets = ((360.0 / lon_size).floor() as i64).max(1);
        let mut grid = Grid { lat_size, lon_buckets, buckets: HashMap::new() };
        for (i, p) in points.iter().enumerate() {
            grid.buckets.entry(grid.key(*p)).or_default().push(i);
        }
        Some(grid)
    }

    fn key(&self, p: GeoPoint) -> (i64, i64) {
        let row = ((p.lat() + 90.0) / self.lat_size).floor() as i64;
        let col = (((p.lon() + 180.0) / 360.0 * self.lon_buckets as f64).floor() as i64).rem_euclid(self.lon_buckets);
        (row, col)
    }

    fn candidates(&self, p: GeoPoint, mut f: impl FnMut(usize)) {
        let (row, col) = self.key(p);
        let mut cols = [col - 1, col, col + 1].map(|c| c.rem_euclid(self.lon_buckets));
        cols.sort_unstable();
        for r in row - 1..=row + 1 {
            for (k, &c) in cols.iter().enumerate() {
                if k > 0 && cols[k - 1] == c {
                    continue;
                }
                if let Some(ids) = self.buckets.get(&(r, c)) {
                    ids.iter().copied().for_each(&mut f);
                }
            }
        }
    }
}

fn for_each_candidate(points: &[GeoPoint], grid: &Option<Grid>, i: usize, mut f: impl FnMut(usize)) {
    match grid {
        Some(g) => g.candidates(points[i], f),
        None => (0..points.len()).for_each(&mut f),
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

/// DBSCAN with a per-point radius; `p` and `q` are neighbours when
/// `haversine(p, q) ≤ min(eps_p, eps_q)`. A point is core when it has at
/// least `min_samples` neighbours, itself included.
pub fn dbscan_with_eps(points: &[GeoPoint], eps: &[f64], min_samples: usize) -> Vec<ClusterLabel> {
    assert_eq!(points.len(), eps.len(), "one radius per point");
    let n = points.len();
    let max_eps = eps.iter().copied().fold(0.0, f64::max);
    let grid = Grid::new(points, max_eps);
    let near = |i: usize, j: usize| haversine_km(points[i], points[j]) <= eps[i].min(eps[j]);

    let mut core = vec![false; n];
    for i in 0..n {
        let mut count = 0usize;
        for_each_candidate(points, &grid, i, |j| count += usize::from(near(i, j)));
        core[i] = count >= min_samples;
    }

    let mut uf = UnionFind((0..n).collect());
    for i in (0..n).filter(|&i| core[i]) {
        for_each_candidate(points, &grid, i, |j| {
            if j > i && core[j] && near(i, j) {
                uf.union(i, j);
            }
        });
    }

    // Border points: nearest core neighbour, ties by core coordinates.
    let mut owner: Vec<Option<usize>> = (0..n).map(|i| core[i].then_some(i)).collect();
    for i in (0..n).filter(|&i| !core[i]) {
        let mut best: Option<(f64, f64, f64, usize)> = None;
        for_each_candidate(points, &grid, i, |j| {
            if core[j] {
                let d = haversine_km(points[i], points[j]);
                if d <= eps[i].min(eps[j]) {
                    let cand = (d, points[j].lat(), points[j].lon(), j);
                    let better = match best {
                        None => true,
                        Some(b) => (cand.0, cand.1, cand.2).partial_cmp(&(b.0, b.1, b.2)) == Some(std::cmp::Ordering::Less),
                    };
                    if better {
                        best = Some(cand);
                    }
                }
            }
        });
        owner[i] = best.map(|b| b.3);
    }

    // Label clusters in order of their first member.
    let mut label_of_root: HashMap<usize, u32> = HashMap::new();
    owner
        .iter()
        .map(|o| match o {
            None => ClusterLabel::Noise,
            Some(c) => {
                let root = uf.find(*c);
                let next = label_of_root.len() as u32;
                ClusterLabel::Cluster(*label_of_root.entry(root).or_insert(next))
            }
        })
        .collect()
}

pub fn dbscan_haversine(points: &[GeoPoint], params: &ClusterParams) -> Vec<ClusterLabel> {
    let eps = if params.adaptive {
        adaptive_eps(points, params.eps_km, params.adapt_resolution, params.adapt_bounds)
    } else {
        vec![params.eps_km; points.len()]
    };
    dbscan_with_eps(points, &eps, params.min_samples.max(1))
}

/// `base · clamp(sqrt(ρ_median / ρ_cell), lo, hi)` where `ρ_cell` counts the
/// points sharing a point's cell and the median is over occupied cells.
pub fn adaptive_eps(points: &[GeoPoint], base: f64, resolution: u8, bounds: [f64; 2]) -> Vec<f64> {
    if points.is_empty() {
        return Vec::new();
    }
    let cells: Vec<_> = points.iter().map(|p| cell_of(*p, resolution)).collect();
    let mut counts: HashMap<_, usize> = HashMap::new();
    for c in &cells {
        *counts.entry(*c).or_default() += 1;
    }
    let mut occupied: Vec<f64> = counts.values().map(|&c| c as f64).collect();
    occupied.sort_by(f64::total_cmp);
    let m = occupied.len();
    let median = if m % 2 == 1 { occupied[m / 2] } else { (occupied[m / 2 - 1] + occupied[m / 2]) / 2.0 };
    cells.iter().map(|c| base * (median / counts[c] as f64).sqrt().clamp(bounds[0], bounds[1])).collect()
}

/// Radius in km of the smallest circle enclosing the points, on a local
/// equirectangular projection about their centroid.
pub fn enclosing_radius_km(points: &[GeoPoint]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let lat0 = points.iter().map(|p| p.lat()).sum::<f64>() / points.len() as f64;
    let lon0 = points.iter().map(|p| p.lon()).sum::<f64>() / points.len() as f64;
    let k = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
    let cos0 = lat0.to_radians().cos();
    let mut xy: Vec<(f64, f64)> = points.iter().map(|p| ((p.lon() - lon0) * k * cos0, (p.lat() - lat0) * k)).collect();
    xy.shuffle(&mut crate::rng::seeded(0x6d6563));
    welzl(&xy).2
}

type Circle = (f64, f64, f64);

fn inside(c: Circle, p: (f64, f64)) -> bool {
    ((p.0 - c.0).powi(2) + (p.1 - c.1).powi(2)).sqrt() <= c.2 * (1.0 + 1e-12) + 1e-12
}

fn circle_two(a: (f64, f64), b: (f64, f64)) -> Circle {
    let cx = (a.0 + b.0) / 2.0;
    let cy = (a.1 + b.1) / 2.0;
    (cx, cy, ((a.0 - cx).powi(2) + (a.1 - cy).powi(2)).sqrt())
}

fn circle_three(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> Circle {
    let d = 2.0 * (a.0 * (b.1 - c.1) + b.0 * (c.1 - a.1) + c.0 * (a.1 - b.1));
    if d.abs() < 1e-18 {
        // Collinear: the widest pair spans the rest.
        let pairs = [circle_two(a, b), circle_two(a, c), circle_two(b, c)];
        return pairs.into_iter().fold((0.0, 0.0, -1.0), |m, c| if c.2 > m.2 { c } else { m });
    }
    let (a2, b2, c2) = (a.0 * a.0 + a.1 * a.1, b.0 * b.0 + b.1 * b.1, c.0 * c.0 + c.1 * c.1);
    let ux = (a2 * (b.1 - c.1) + b2 * (c.1 - a.1) + c2 * (a.1 - b.1)) / d;
    let uy = (a2 * (c.0 - b.0) + b2 * (a.0 - c.0) + c2 * (b.0 - a.0)) / d;
    (ux, uy, ((a.0 - ux).powi(2) + (a.1 - uy).powi(2)).sqrt())
}

/// Iterative Welzl (expected linear time on shuffled input).
fn welzl(p: &[(f64, f64)]) -> Circle {
    let mut c: Circle = (p[0].0, p[0].1, 0.0);
    for i in 1..p.len() {
        if inside(c, p[i]) {
            continue;
        }
        c = (p[i].0, p[i].1, 0.0);
        for j in 0..i {
            if inside(c, p[j]) {
                continue;
            }
            c = circle_two(p[i], p[j]);
            for k in 0..j {
                if !inside(c, p[k]) {
                    c = circle_three(p[i], p[j], p[k]);
                }
            }
        }
    }
    c
}

/// Members / max(enclosing-circle area, π·eps²) for cluster members; 0 for noise.
pub fn cluster_density(points: &[GeoPoint], labels: &[ClusterLabel], eps_km: f64) -> Vec<f64> {
    let mut members: HashMap<u32, Vec<GeoPoint>> = HashMap::new();
    for (p, l) in points.iter().zip(labels) {
        if let Some(c) = l.cluster() {
            members.entry(c).or_default().push(*p);
        }
    }
    let floor = std::f64::consts::PI * eps_km * eps_km;
    let density: HashMap<u32, f64> = members
        .iter()
        .map(|(&c, pts)| {
            let r = enclosing_radius_km(pts);
            (c, pts.len() as f64 / (std::f64::consts::PI * r * r).max(floor))
        })
        .collect();
    labels.iter().map(|l| l.cluster().map_or(0.0, |c| density[&c])).collect()
}

pub fn assign_clusters(points: &[GeoPoint], params: &ClusterParams) -> Vec<ClusterAssignment> {
    let labels = dbscan_haversine(points, params);
    let density = cluster_density(points, &labels, params.eps_km);
    labels.into_iter().zip(density).map(|(label, density)| ClusterAssignment { label, density }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::cell_of;

    fn p(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn tight_triple_is_one_cluster() {
        let pts = [p(40.0, -75.0), p(40.002, -75.0), p(40.0, -75.002)];
        let labels = dbscan_haversine(&pts, &ClusterParams::default());
        assert!(labels.iter().all(|l| *l == ClusterLabel::Cluster(0)));
    }

    #[test]
    fn isolated_point_is_noise() {
        let labels = dbscan_haversine(&[p(41.0, -77.0)], &ClusterParams::default());
        assert_eq!(labels, vec![ClusterLabel::Noise]);
        assert_eq!(cluster_density(&[p(41.0, -77.0)], &labels, 1.0), vec![0.0]);
    }

    #[test]
    fn coincident_points_hit_area_floor() {
        let pts = [p(40.0, -75.0); 3];
        let labels = dbscan_haversine(&pts, &ClusterParams::default());
        let d = cluster_density(&pts, &labels, 1.0);
        for v in d {
            assert!((v - 3.0 / std::f64::consts::PI).abs() < 1e-12);
        }
    }

    #[test]
    fn enclosing_circle_of_square() {
        // Four corners of a ~2 km square: radius is half the diagonal.
        let d = 1.0 / 111.195;
        let cos = 40.0f64.to_radians().cos();
        let pts = [p(40.0 - d, -75.0 - d / cos), p(40.0 + d, -75.0 - d / cos), p(40.0 - d, -75.0 + d / cos), p(40.0 + d, -75.0 + d / cos)];
        let r = enclosing_radius_km(&pts);
        assert!((r - 2f64.sqrt()).abs() < 0.01, "{r}");
    }

    #[test]
    fn adaptive_eps_follows_density() {
        // Cells with 1, 1, 1, 4 points: median 1, dense cell gets 0.5x.
        let mut pts = vec![p(40.1, -75.1), p(40.6, -75.6), p(41.1, -76.1)];
        pts.extend([p(41.6, -76.6), p(41.6001, -76.6), p(41.6002, -76.6), p(41.6003, -76.6)]);
        let eps = adaptive_eps(&pts, 1.0, 9, [0.5, 2.0]);
        assert_eq!(&eps[..3], &[1.0, 1.0, 1.0]);
        assert!(eps[3..].iter().all(|e| (*e - 0.5).abs() < 1e-12));
        assert_ne!(cell_of(pts[0], 9), cell_of(pts[3], 9));
    }

    #[test]
    fn uniform_density_keeps_base_eps() {
        let pts: Vec<_> = (0..6).map(|i| p(40.0 + i as f64 * 0.5, -77.0)).collect();
        assert!(adaptive_eps(&pts, 1.3, 9, [0.5, 2.0]).iter().all(|e| *e == 1.3));
    }

    #[test]
    fn wraps_across_antimeridian() {
        let pts = [p(10.0, 179.9995), p(10.0, -179.9995), p(10.0, 179.999)];
        let labels = dbscan_haversine(&pts, &ClusterParams::default());
        assert!(labels.iter().all(|l| *l == ClusterLabel::Cluster(0)));
    }
}
