//! Exact t-SNE on a precomputed distance matrix, with either the
//! Kullback-Leibler cost or the Fisher-Rao (Bhattacharyya angle) cost.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::distmat::DistanceMatrix;
use crate::embedding::{Embedding, ReducerSettings};
use crate::error::{Error, Result};

/// Floor applied to probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;
/// Cap on `1 / sqrt(1 − B²)` in the Fisher-Rao gradient.
pub const FR_PREFACTOR_CAP: f64 = 1e6;

const INIT_STD: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    Kl,
    FisherRao,
}

impl CostKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CostKind::Kl => "kl",
            CostKind::FisherRao => "fisher_rao",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneParams {
    pub perplexity: f64,
    pub learning_rate: f64,
    pub n_iter: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub min_gain: f64,
    pub cost_kind: CostKind,
}

impl Default for TsneParams {
    fn default() -> Self {
        TsneParams {
            perplexity: 30.0,
            learning_rate: 200.0,
            n_iter: 1000,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            min_gain: 0.01,
            cost_kind: CostKind::Kl,
        }
    }
}

impl TsneParams {
    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(format!("t-SNE {what}")));
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.early_exaggeration >= 1.0) {
            return bad("early exaggeration must be at least 1");
        }
        if self.n_iter == 0 {
            return bad("needs at least one iteration");
        }
        if !(0.0..1.0).contains(&self.initial_momentum)
            || !(0.0..1.0).contains(&self.final_momentum)
        {
            return bad("momentum must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Symmetric joint similarities `p_ij` with zero diagonal summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Affinities {
    n: usize,
    p: Vec<f64>,
}

impl Affinities {
    pub fn new(n: usize, p: Vec<f64>) -> Result<Self> {
        if p.len() != n * n {
            return Err(Error::InvalidParameter(
                "affinity matrix has wrong size".into(),
            ));
        }
        let mut sum = 0.0;
        for i in 0..n {
            if p[i * n + i] != 0.0 {
                return Err(Error::InvalidParameter(format!("p_{i}{i} must be zero")));
            }
            for j in 0..n {
                let v = p[i * n + j];
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::InvalidParameter(format!("p_{i}{j} = {v}")));
                }
                if v != p[j * n + i] {
                    return Err(Error::InvalidParameter(format!(
                        "p is not symmetric at ({i}, {j})"
                    )));
                }
                sum += v;
            }
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Unnormalized(sum));
        }
        Ok(Affinities { n, p })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }
}

/// Row-wise Gaussian conditionals `p_{j|i}` calibrated to `perplexity`
/// (base-2 Shannon entropy), plus the precision `β_i = 1 / 2σ_i²` per row.
pub fn conditional_probabilities(
    m: &DistanceMatrix,
    perplexity: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = m.size();
    if !(perplexity > 1.0) || perplexity >= n as f64 {
        return Err(Error::InvalidParameter(format!(
            "perplexity {perplexity} must lie in (1, {n})"
        )));
    }
    let target = perplexity.log2();
    let mut cond = vec![0.0; n * n];
    let mut betas = vec![0.0; n];
    let mut sq = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            sq[j] = m.get(i, j).powi(2);
        }
        let min_sq = (0..n)
            .filter(|&j| j != i)
            .map(|j| sq[j])
            .fold(f64::INFINITY, f64::min);
        let row = &mut cond[i * n..(i + 1) * n];
        // Entropy (bits) of the row at precision β; shifting by the nearest
        // distance keeps the exponentials from underflowing.
        let entropy_at = |beta: f64, row: &mut [f64]| -> f64 {
            let mut z = 0.0;
            for j in 0..n {
                row[j] = if j == i {
                    0.0
                } else {
                    (-beta * (sq[j] - min_sq)).exp()
                };
                z += row[j];
            }
            let mut h = 0.0;
            for v in row.iter_mut() {
                *v /= z;
                if *v > 0.0 {
                    h -= *v * v.log2();
                }
            }
            h
        };
        let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
        let mut beta = 1.0;
        for _ in 0..200 {
            let h = entropy_at(beta, row);
            if (h - target).abs() < 1e-10 {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() {
                    0.5 * (lo + hi)
                } else {
                    beta * 2.0
                };
            } else {
                hi = beta;
                beta = 0.5 * (lo + hi);
            }
        }
        entropy_at(beta, row);
        betas[i] = beta;
    }
    Ok((cond, betas))
}

/// Calibrates each row to `perplexity` and symmetrizes to
/// `p_ij = (p_{j|i} + p_{i|j}) / 2N`.
pub fn perplexity_calibrate(m: &DistanceMatrix, perplexity: f64) -> Result<Affinities> {
    let n = m.size();
    let (cond, _) = conditional_probabilities(m, perplexity)?;
    let mut p = vec![0.0; n * n];
    let denom = 2.0 * n as f64;
    for i in 0..n {
        for j in i + 1..n {
            let v = (cond[i * n + j] + cond[j * n + i]) / denom;
            p[i * n + j] = v;
            p[j * n + i] = v;
        }
    }
    // Fold the rounding residue into the normalization.
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    Affinities::new(n, p)
}

/// Student-t kernel values `w_ij = 1 / (1 + |y_i − y_j|²)` and the
/// normalized `q_ij = w_ij / Σ_{k≠l} w_kl`.
pub fn joint_q(y: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = y.len() / dim;
    let mut w = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d2: f64 = (0..dim)
                .map(|c| (y[i * dim + c] - y[j * dim + c]).powi(2))
                .sum();
            let v = 1.0 / (1.0 + d2);
            w[i * n + j] = v;
            w[j * n + i] = v;
            z += 2.0 * v;
        }
    }
    let q = w.iter().map(|v| v / z).collect();
    (q, w)
}

fn bhattacharyya(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum()
}

/// Cost of layout `y` against `aff` (no exaggeration).
pub fn cost(aff: &Affinities, y: &[f64], dim: usize, kind: CostKind) -> f64 {
    let (q, _) = joint_q(y, dim);
    match kind {
        CostKind::Kl => aff
            .p
            .iter()
            .zip(&q)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, q)| p * (p.max(PROB_FLOOR) / q.max(PROB_FLOOR)).ln())
            .sum(),
        CostKind::FisherRao => bhattacharyya(&aff.p, &q).clamp(-1.0, 1.0).acos(),
    }
}

/// Analytic gradient of [`cost`], with extra attraction when
/// `exaggeration > 1`.
///
/// KL: `4 Σ_j (α p_ij − q_ij) w_ij (y_i − y_j)`.
/// Fisher-Rao, with `B = Σ sqrt(p q)` and `K = 1/sqrt(1 − B²)`:
/// `Σ_j [2K (sqrt(p_ij q_ij) − B q_ij) + 2(α − 1) sqrt(p_ij q_ij)] w_ij (y_i − y_j)`.
/// The exaggeration term sits outside `K`, which diverges as `B → 1`
/// while the bracketed difference does not vanish for `α > 1`.
pub fn gradient(
    aff: &Affinities,
    y: &[f64],
    dim: usize,
    kind: CostKind,
    exaggeration: f64,
) -> Vec<f64> {
    let n = aff.n;
    let (q, w) = joint_q(y, dim);
    let coeff: Vec<f64> = match kind {
        CostKind::Kl => aff
            .p
            .iter()
            .zip(&q)
            .map(|(p, q)| 4.0 * (exaggeration * p - q))
            .collect(),
        CostKind::FisherRao => {
            let b = bhattacharyya(&aff.p, &q);
            let k = (1.0 / (1.0 - b * b).max(0.0).sqrt()).min(FR_PREFACTOR_CAP);
            aff.p
                .iter()
                .zip(&q)
                .map(|(p, q)| {
                    let root = (p * q).sqrt();
                    2.0 * k * (root - b * q) + 2.0 * (exaggeration - 1.0) * root
                })
                .collect()
        }
    };
    let mut grad = vec![0.0; n * dim];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let idx = i * n + j;
            let f = coeff[idx] * w[idx];
            for c in 0..dim {
                grad[i * dim + c] += f * (y[i * dim + c] - y[j * dim + c]);
            }
        }
    }
    grad
}

fn recenter(y: &mut [f64], dim: usize) {
    let n = y.len() / dim;
    for c in 0..dim {
        let mean = (0..n).map(|i| y[i * dim + c]).sum::<f64>() / n as f64;
        (0..n).for_each(|i| y[i * dim + c] -= mean);
    }
}

/// Gaussian `N(0, 1e-4 I)` starting layout.
pub fn initial_layout(n: usize, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
    (0..n * dim).map(|_| normal.sample(&mut rng)).collect()
}

fn optimize(
    aff: &Affinities,
    dim: usize,
    params: &TsneParams,
    kind: CostKind,
    seed: u64,
) -> Result<Embedding> {
    params.validate()?;
    if dim == 0 {
        return Err(Error::InvalidParameter(
            "embedding dimension must be at least 1".into(),
        ));
    }
    let n = aff.n;
    let mut y = initial_layout(n, dim, seed);
    let mut update = vec![0.0; n * dim];
    let mut gains = vec![1.0_f64; n * dim];
    let mut history = Vec::with_capacity(params.n_iter + 1);
    history.push(cost(aff, &y, dim, kind));
    for it in 0..params.n_iter {
        let early = it < params.exaggeration_iters;
        let exaggeration = if early {
            params.early_exaggeration
        } else {
            1.0
        };
        let momentum = if early {
            params.initial_momentum
        } else {
            params.final_momentum
        };
        let grad = gradient(aff, &y, dim, kind, exaggeration);
        for k in 0..n * dim {
            let same_sign = (grad[k] > 0.0) == (update[k] > 0.0);
            gains[k] = if same_sign {
                gains[k] * 0.8
            } else {
                gains[k] + 0.2
            };
            gains[k] = gains[k].max(params.min_gain);
            update[k] = momentum * update[k] - params.learning_rate * gains[k] * grad[k];
            y[k] += update[k];
        }
        recenter(&mut y, dim);
        history.push(cost(aff, &y, dim, kind));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invariant(
            "t-SNE produced non-finite coordinates".into(),
        ));
    }
    Ok(Embedding {
        n,
        dim,
        coords: y,
        seed,
        cost_history: history,
        settings: ReducerSettings::Tsne(TsneParams {
            cost_kind: kind,
            ..params.clone()
        }),
    })
}

/// Minimizes `KL(P‖Q)`.
pub fn tsne_embed(
    aff: &Affinities,
    dim: usize,
    params: &TsneParams,
    seed: u64,
) -> Result<Embedding> {
    optimize(aff, dim, params, CostKind::Kl, seed)
}

/// Minimizes the Fisher-Rao distance `arccos Σ sqrt(p_ij q_ij)`.
pub fn etsne_embed(
    aff: &Affinities,
    dim: usize,
    params: &TsneParams,
    seed: u64,
) -> Result<Embedding> {
    optimize(aff, dim, params, CostKind::FisherRao, seed)
}
