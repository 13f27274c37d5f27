//! UMAP on a precomputed distance matrix: smooth-kNN memberships, fuzzy
//! union and cross-entropy SGD from a classical MDS start.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distmat::DistanceMatrix;
use crate::embedding::{Embedding, ReducerSettings};
use crate::error::{Error, Result};

pub const SIGMA_MIN: f64 = 1e-10;
pub const SIGMA_MAX: f64 = 1e10;
/// Epoch interval between recorded cross-entropy values.
pub const COST_INTERVAL: usize = 10;
/// Tolerance on `Σ v` below which a σ search counts as converged.
pub const CALIBRATION_TOL: f64 = 1e-6;

const GRAD_CLIP: f64 = 4.0;
const REPULSION_EPS: f64 = 1e-3;
const INIT_EXTENT: f64 = 10.0;
const CE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UmapParams {
    pub k: usize,
    pub dim: usize,
    pub a: f64,
    pub b: f64,
    pub n_epochs: usize,
    pub learning_rate: f64,
    pub negative_sample_rate: usize,
    pub seed: u64,
}

impl Default for UmapParams {
    fn default() -> Self {
        UmapParams {
            k: 15,
            dim: 2,
            a: 1.929,
            b: 0.7915,
            n_epochs: 500,
            learning_rate: 1.0,
            negative_sample_rate: 5,
            seed: 0,
        }
    }
}

impl UmapParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(format!("UMAP {what}")));
        if !(self.a > 0.0 && self.b > 0.0) {
            return bad("kernel coefficients a and b must be positive");
        }
        if self.k < 2 {
            return bad("k must be at least 2");
        }
        if self.dim == 0 {
            return bad("dimension must be at least 1");
        }
        if self.n_epochs == 0 {
            return bad("needs at least one epoch");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }
}

/// Sparse membership graph. Directed graphs hold `v_{j|i}` as `(i, j, v)`;
/// undirected graphs hold both `(i, j, v)` and `(j, i, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyGraph {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
    rho: Vec<f64>,
    sigma: Vec<f64>,
    clamped: Vec<bool>,
    symmetric: bool,
}

impl FuzzyGraph {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Nodes whose σ search hit a bound without meeting the target.
    pub fn clamped(&self) -> &[bool] {
        &self.clamped
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// `Σ_j v_{j|i}` over the outgoing edges of each node.
    pub fn row_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n];
        for &(i, _, v) in &self.edges {
            sums[i] += v;
        }
        sums
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.edges
            .binary_search_by(|&(a, b, _)| (a, b).cmp(&(i, j)))
            .map(|pos| self.edges[pos].2)
            .unwrap_or(0.0)
    }
}

/// Membership sum `Σ exp(−(d − ρ)/σ)` over sorted neighbor distances.
fn membership_sum(dists: &[f64], rho: f64, sigma: f64) -> f64 {
    dists
        .iter()
        .map(|d| (-(d - rho).max(0.0) / sigma).exp())
        .sum()
}

/// Finds σ with `Σ_j exp(−(d_j − ρ)/σ) = target` by bisection on `ln σ`.
/// Returns `(σ, clamped)`.
pub fn calibrate_sigma(dists: &[f64], rho: f64, target: f64) -> (f64, bool) {
    if dists.iter().all(|&d| d <= rho) {
        // Every neighbor ties with the nearest: the sum does not depend on σ.
        return (SIGMA_MAX, true);
    }
    let (mut lo, mut hi) = (SIGMA_MIN.ln(), SIGMA_MAX.ln());
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let s = membership_sum(dists, rho, mid.exp());
        if (s - target).abs() < CALIBRATION_TOL * 1e-3 {
            break;
        }
        if s > target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let sigma = mid.exp();
    let converged = (membership_sum(dists, rho, sigma) - target).abs() <= CALIBRATION_TOL;
    (sigma, !converged)
}

/// Directed memberships over each point's `k` nearest neighbors, with
/// `Σ_j v_{j|i} = log₂ k`.
pub fn smooth_knn(m: &DistanceMatrix, k: usize) -> Result<FuzzyGraph> {
    let n = m.size();
    if k < 2 || k >= n {
        return Err(Error::InvalidParameter(format!(
            "k = {k} must lie in [2, {n})"
        )));
    }
    let target = (k as f64).log2();
    let rows: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut nbrs: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            nbrs.sort_by(|&x, &y| m.get(i, x).total_cmp(&m.get(i, y)).then(x.cmp(&y)));
            nbrs.truncate(k);
            let dists: Vec<f64> = nbrs.iter().map(|&j| m.get(i, j)).collect();
            let rho = dists[0];
            let (sigma, clamped) = calibrate_sigma(&dists, rho, target);
            let edges: Vec<_> = nbrs
                .iter()
                .zip(&dists)
                .map(|(&j, d)| (i, j, (-(d - rho).max(0.0) / sigma).exp()))
                .collect();
            (edges, rho, sigma, clamped)
        })
        .collect();
    let mut graph = FuzzyGraph {
        n,
        edges: Vec::with_capacity(n * k),
        rho: Vec::with_capacity(n),
        sigma: Vec::with_capacity(n),
        clamped: Vec::with_capacity(n),
        symmetric: false,
    };
    for (mut edges, rho, sigma, clamped) in rows {
        edges.sort_by_key(|&(a, b, _)| (a, b));
        graph.edges.append(&mut edges);
        graph.rho.push(rho);
        graph.sigma.push(sigma);
        graph.clamped.push(clamped);
    }
    Ok(graph)
}

/// Probabilistic t-conorm `a + b − ab`.
pub fn t_conorm(a: f64, b: f64) -> f64 {
    a + b - a * b
}

/// Symmetrizes directed memberships with the probabilistic t-conorm and
/// drops zero edges. Undirected graphs are returned unchanged.
pub fn fuzzy_union(g: &FuzzyGraph) -> FuzzyGraph {
    if g.symmetric {
        return g.clone();
    }
    let mut pairs: std::collections::BTreeMap<(usize, usize), (f64, f64)> = Default::default();
    for &(i, j, v) in &g.edges {
        if i == j {
            continue;
        }
        let entry = pairs.entry((i.min(j), i.max(j))).or_insert((0.0, 0.0));
        if i < j {
            entry.0 = v;
        } else {
            entry.1 = v;
        }
    }
    let mut edges = Vec::with_capacity(2 * pairs.len());
    for (&(i, j), &(a, b)) in &pairs {
        let v = t_conorm(a, b).clamp(0.0, 1.0);
        if v > 0.0 {
            edges.push((i, j, v));
            edges.push((j, i, v));
        }
    }
    edges.sort_by_key(|&(a, b, _)| (a, b));
    FuzzyGraph {
        edges,
        symmetric: true,
        ..g.clone()
    }
}

/// Low-dimensional similarity `1 / (1 + a·dist^{2b})`.
pub fn kernel(dist: f64, a: f64, b: f64) -> f64 {
    1.0 / (1.0 + a * dist.powf(2.0 * b))
}

/// Classical MDS: top-`dim` eigenvectors of `−½ J D² J`, scaled by the
/// square roots of their eigenvalues, each axis flipped so its
/// largest-magnitude entry is positive, then rescaled so the largest
/// absolute coordinate is 10.
pub fn classical_mds(m: &DistanceMatrix, dim: usize) -> Vec<f64> {
    let n = m.size();
    let d2 = DMatrix::from_fn(n, n, |i, j| m.get(i, j).powi(2));
    let row_means: Vec<f64> = (0..n).map(|i| d2.row(i).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let gram = DMatrix::from_fn(n, n, |i, j| {
        -0.5 * (d2[(i, j)] - row_means[i] - row_means[j] + grand)
    });
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| {
        eig.eigenvalues[y]
            .total_cmp(&eig.eigenvalues[x])
            .then(x.cmp(&y))
    });
    let mut coords = vec![0.0; n * dim];
    for (c, &axis) in order.iter().take(dim).enumerate() {
        let scale = eig.eigenvalues[axis].max(0.0).sqrt();
        let col = eig.eigenvectors.column(axis);
        let pivot = (0..n).fold(0, |best, i| {
            if col[i].abs() > col[best].abs() {
                i
            } else {
                best
            }
        });
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            coords[i * dim + c] = sign * scale * col[i];
        }
    }
    let extent = coords.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if extent > 0.0 {
        coords.iter_mut().for_each(|v| *v *= INIT_EXTENT / extent);
    }
    coords
}

fn sq_dist(y: &[f64], i: usize, j: usize, dim: usize) -> f64 {
    (0..dim)
        .map(|c| (y[i * dim + c] - y[j * dim + c]).powi(2))
        .sum()
}

/// Fuzzy cross-entropy of layout `y` against an undirected graph, summed
/// over unordered pairs.
pub fn cross_entropy(g: &FuzzyGraph, y: &[f64], dim: usize, a: f64, b: f64) -> f64 {
    let n = g.n;
    let mut v = vec![0.0; n * n];
    for &(i, j, w) in &g.edges {
        v[i * n + j] = w;
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let w = kernel(sq_dist(y, i, j, dim).sqrt(), a, b).clamp(CE_FLOOR, 1.0 - CE_FLOOR);
            let p = v[i * n + j].max(v[j * n + i]);
            if p > 0.0 {
                total += p * (p / w).ln();
            }
            if p < 1.0 {
                total += (1.0 - p) * ((1.0 - p) / (1.0 - w)).ln();
            }
        }
    }
    total
}

/// Cross-entropy SGD from the starting layout `init` (row-major, `params.dim`
/// columns). The graph is symmetrized first if needed.
pub fn umap_embed(g: &FuzzyGraph, init: &[f64], params: &UmapParams) -> Result<Embedding> {
    params.validate()?;
    let graph = fuzzy_union(g);
    let (n, dim) = (graph.n, params.dim);
    if init.len() != n * dim {
        return Err(Error::InvalidParameter(format!(
            "initial layout has {} values, expected {}",
            init.len(),
            n * dim
        )));
    }
    let (a, b) = (params.a, params.b);
    let max_w = graph.edges.iter().fold(0.0_f64, |acc, e| acc.max(e.2));
    // Edges too weak to be sampled once over the whole run are dropped.
    let edges: Vec<_> = graph
        .edges
        .iter()
        .copied()
        .filter(|e| e.2 >= max_w / params.n_epochs as f64)
        .collect();
    let per_sample: Vec<f64> = edges.iter().map(|e| max_w / e.2).collect();
    let neg_rate = params.negative_sample_rate as f64;
    let per_negative: Vec<f64> = per_sample.iter().map(|e| e / neg_rate).collect();
    let mut next_sample = per_sample.clone();
    let mut next_negative = per_negative.clone();

    let mut y = init.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut history = vec![cross_entropy(&graph, &y, dim, a, b)];
    let mut alpha = params.learning_rate;
    let mut delta = vec![0.0; dim];
    for epoch in 0..params.n_epochs {
        let now = epoch as f64;
        for (e, &(i, j, _)) in edges.iter().enumerate() {
            if next_sample[e] > now {
                continue;
            }
            let d2 = sq_dist(&y, i, j, dim);
            let coeff = if d2 > 0.0 {
                -2.0 * a * b * d2.powf(b - 1.0) / (a * d2.powf(b) + 1.0)
            } else {
                0.0
            };
            for c in 0..dim {
                delta[c] = (coeff * (y[i * dim + c] - y[j * dim + c])).clamp(-GRAD_CLIP, GRAD_CLIP);
            }
            for c in 0..dim {
                y[i * dim + c] += alpha * delta[c];
                y[j * dim + c] -= alpha * delta[c];
            }
            next_sample[e] += per_sample[e];

            if params.negative_sample_rate > 0 {
                let draws = ((now - next_negative[e]) / per_negative[e])
                    .floor()
                    .max(0.0) as usize;
                for _ in 0..draws {
                    let other = rng.random_range(0..n);
                    if other == i {
                        continue;
                    }
                    let d2 = sq_dist(&y, i, other, dim);
                    if d2 <= 0.0 {
                        continue;
                    }
                    let coeff = 2.0 * b / ((REPULSION_EPS + d2) * (a * d2.powf(b) + 1.0));
                    for c in 0..dim {
                        let step = (coeff * (y[i * dim + c] - y[other * dim + c]))
                            .clamp(-GRAD_CLIP, GRAD_CLIP);
                        y[i * dim + c] += alpha * step;
                    }
                }
                next_negative[e] += draws as f64 * per_negative[e];
            }
        }
        alpha = params.learning_rate * (1.0 - (epoch + 1) as f64 / params.n_epochs as f64);
        if (epoch + 1) % COST_INTERVAL == 0 || epoch + 1 == params.n_epochs {
            history.push(cross_entropy(&graph, &y, dim, a, b));
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invariant(
            "UMAP produced non-finite coordinates".into(),
        ));
    }
    Ok(Embedding {
        n,
        dim,
        coords: y,
        seed: params.seed,
        cost_history: history,
        settings: ReducerSettings::Umap(params.clone()),
    })
}

/// Full pipeline: smooth kNN, fuzzy union, MDS start and SGD.
pub fn umap(m: &DistanceMatrix, params: &UmapParams) -> Result<Embedding> {
    params.validate()?;
    let graph = fuzzy_union(&smooth_knn(m, params.k)?);
    let init = classical_mds(m, params.dim);
    umap_embed(&graph, &init, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distmat::MetricTag;

    fn points_matrix(pts: &[Vec<f64>]) -> DistanceMatrix {
        DistanceMatrix::from_fn(pts.len(), MetricTag::Euclidean, |i, j| {
            crate::curve::distance(&pts[i], &pts[j])
        })
        .unwrap()
    }

    #[test]
    fn worked_sigma_example() {
        let (sigma, clamped) = calibrate_sigma(&[1.0, 2.0, 3.0], 1.0, 3f64.log2());
        // x + x² = log₂3 − 1 with x = exp(−1/σ).
        let c = 3f64.log2() - 1.0;
        let x = (-1.0 + (1.0 + 4.0 * c).sqrt()) / 2.0;
        let expected = -1.0 / x.ln();
        assert!(!clamped);
        assert!((x - 0.41378).abs() < 1e-4);
        assert!((sigma - expected).abs() < 1e-6);
        assert!((sigma - 1.1334).abs() < 1e-3);
    }

    #[test]
    fn all_equal_distances_clamp() {
        let m = DistanceMatrix::from_fn(5, MetricTag::Euclidean, |_, _| 2.0).unwrap();
        let g = smooth_knn(&m, 3).unwrap();
        assert!(g.clamped().iter().all(|&c| c));
        assert!(g.sigma().iter().all(|&s| s == SIGMA_MAX));
        assert!(g.edges().iter().all(|e| e.2 == 1.0));
    }

    #[test]
    fn nearest_neighbor_has_full_membership() {
        let pts: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![(i as f64 * 0.37).sin() * 3.0, (i * i) as f64 * 0.01])
            .collect();
        let g = smooth_knn(&points_matrix(&pts), 5).unwrap();
        for i in 0..20 {
            let max = g
                .edges()
                .iter()
                .filter(|e| e.0 == i)
                .map(|e| e.2)
                .fold(0.0, f64::max);
            assert_eq!(max, 1.0);
        }
        assert_eq!(g.edges().len(), 20 * 5);
    }

    #[test]
    fn union_examples() {
        assert_eq!(t_conorm(1.0, 0.0), 1.0);
        assert_eq!(t_conorm(0.5, 0.5), 0.75);
        assert_eq!(t_conorm(0.0, 0.0), 0.0);
        let g = FuzzyGraph {
            n: 3,
            edges: vec![(0, 1, 0.5), (0, 2, 0.0), (1, 0, 0.5), (2, 1, 1.0)],
            rho: vec![0.0; 3],
            sigma: vec![1.0; 3],
            clamped: vec![false; 3],
            symmetric: false,
        };
        let u = fuzzy_union(&g);
        assert_eq!(u.weight(0, 1), 0.75);
        assert_eq!(u.weight(1, 0), 0.75);
        assert_eq!(u.weight(1, 2), 1.0);
        assert_eq!(u.weight(0, 2), 0.0);
        assert_eq!(u.edges().len(), 4);
        assert_eq!(fuzzy_union(&u), u);
    }

    #[test]
    fn kernel_is_one_at_zero_and_decreasing() {
        assert_eq!(kernel(0.0, 1.929, 0.7915), 1.0);
        let mut prev = 1.0;
        for k in 1..100 {
            let w = kernel(k as f64 * 0.1, 1.929, 0.7915);
            assert!(w < prev);
            prev = w;
        }
    }

    #[test]
    fn mds_recovers_planar_configuration() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![3.0, 0.0],
            vec![0.0, 1.0],
            vec![3.0, 1.0],
            vec![1.5, 0.5],
        ];
        let m = points_matrix(&pts);
        let y = classical_mds(&m, 2);
        let scale = m.get(0, 1) / crate::curve::distance(&y[0..2], &y[2..4]);
        for i in 0..5 {
            for j in 0..5 {
                let d = crate::curve::distance(&y[i * 2..i * 2 + 2], &y[j * 2..j * 2 + 2]) * scale;
                assert!((d - m.get(i, j)).abs() < 1e-9);
            }
        }
        assert!((y.iter().fold(0.0_f64, |a, v| a.max(v.abs())) - 10.0).abs() < 1e-12);
    }

    fn two_clusters() -> DistanceMatrix {
        let pts: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let angle = i as f64 * 0.9;
                let offset = if i < 10 { 0.0 } else { 10.0 };
                vec![offset + angle.cos(), angle.sin()]
            })
            .collect();
        points_matrix(&pts)
    }

    #[test]
    fn separated_clusters_stay_separated() {
        let params = UmapParams {
            k: 5,
            seed: 3,
            ..UmapParams::default()
        };
        let e = umap(&two_clusters(), &params).unwrap();
        let centroid = |r: std::ops::Range<usize>| {
            let len = r.len() as f64;
            let mut c = [0.0; 2];
            for i in r {
                c[0] += e.point(i)[0] / len;
                c[1] += e.point(i)[1] / len;
            }
            c
        };
        let (ca, cb) = (centroid(0..10), centroid(10..20));
        let spread = |c: [f64; 2], r: std::ops::Range<usize>| {
            let len = r.len() as f64;
            r.map(|i| crate::curve::distance(e.point(i), &c))
                .sum::<f64>()
                / len
        };
        let intra = 0.5 * (spread(ca, 0..10) + spread(cb, 10..20));
        assert!(crate::curve::distance(&ca, &cb) > 3.0 * intra);
    }

    #[test]
    fn deterministic_given_seed() {
        let params = UmapParams {
            k: 5,
            n_epochs: 100,
            seed: 9,
            ..UmapParams::default()
        };
        let m = two_clusters();
        let a = umap(&m, &params).unwrap();
        let b = umap(&m, &params).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cost_history().len(), 11);
        assert_eq!(a.cost_kind(), "fuzzy_cross_entropy");
    }

    #[test]
    fn k_out_of_range() {
        let m = two_clusters();
        assert!(smooth_knn(&m, 20).is_err());
        assert!(smooth_knn(&m, 1).is_err());
    }
}
