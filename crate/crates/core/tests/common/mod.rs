//! Helpers shared by the integration tests: random smooth curves and
//! warpings, plus brute-force alignment oracles written independently of the
//! library's dynamic program.

#![allow(dead_code)]

use std::f64::consts::PI;

use elastic_embed::curve::Srvf;
use elastic_embed::Curve;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Local steps `(Δi, Δj)` with `1 ≤ Δ ≤ 3` and coprime components.
pub fn slope_set() -> Vec<(usize, usize)> {
    let gcd = |mut a: usize, mut b: usize| {
        while b != 0 {
            (a, b) = (b, a % b);
        }
        a
    };
    let mut steps = Vec::new();
    for di in 1..=3 {
        for dj in 1..=3 {
            if gcd(di, dj) == 1 {
                steps.push((di, dj));
            }
        }
    }
    steps
}

/// Low-frequency planar curve `f(s) = Σ_m (a_m cos 2πms + b_m sin 2πms)`
/// with coefficients decaying like `1/m²` and a linear drift so it is never
/// closed.
pub struct SmoothCurve {
    coeffs: Vec<[f64; 4]>,
    drift: [f64; 2],
}

impl SmoothCurve {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let coeffs = (1..=3)
            .map(|m| std::array::from_fn(|_| rng.random_range(-1.0..1.0) / (m * m) as f64))
            .collect();
        let drift = [rng.random_range(0.5..1.5), rng.random_range(-0.5..0.5)];
        SmoothCurve { coeffs, drift }
    }

    pub fn eval(&self, s: f64) -> [f64; 2] {
        let mut p = [self.drift[0] * s, self.drift[1] * s];
        for (m, c) in self.coeffs.iter().enumerate() {
            let w = 2.0 * PI * (m + 1) as f64 * s;
            p[0] += c[0] * w.cos() + c[1] * w.sin();
            p[1] += c[2] * w.cos() + c[3] * w.sin();
        }
        p
    }

    pub fn sample(&self, len: usize, warp: impl Fn(f64) -> f64) -> Curve {
        Curve::sample(len, |t| self.eval(warp(t))).unwrap()
    }
}

/// Smooth warping `t + Σ c_m sin(π m t)` with `γ̇ ≥ 1 − π Σ m|c_m| > 0`.
pub fn random_warp(rng: &mut ChaCha8Rng) -> impl Fn(f64) -> f64 {
    let c: [f64; 3] = std::array::from_fn(|m| rng.random_range(-0.08..0.08) / (m + 1) as f64);
    move |t: f64| {
        t + (1..=3)
            .map(|m| c[m - 1] * (PI * m as f64 * t).sin())
            .sum::<f64>()
    }
}

pub fn random_srvf(rng: &mut ChaCha8Rng, len: usize) -> Srvf {
    let values = (0..2 * len).map(|_| rng.random_range(-1.0..1.0)).collect();
    Srvf::from_flat(2, values).unwrap()
}

fn lerp_row(q: &Srvf, pos: f64) -> [f64; 2] {
    let last = q.len() - 1;
    let lo = (pos.floor() as usize).min(last - 1);
    let frac = pos - lo as f64;
    let (a, b) = (q.value(lo), q.value(lo + 1));
    [a[0] + frac * (b[0] - a[0]), a[1] + frac * (b[1] - a[1])]
}

/// Trapezoidal score of the straight lattice segment `(k, l) → (i, j)`.
pub fn segment_value(q_f: &Srvf, q_g: &Srvf, k: usize, l: usize, i: usize, j: usize) -> f64 {
    let h = 1.0 / (q_f.len() - 1) as f64;
    let slope = (j - l) as f64 / (i - k) as f64;
    let values: Vec<f64> = (k..=i)
        .map(|r| {
            let g = lerp_row(q_g, l as f64 + slope * (r - k) as f64);
            let f = q_f.value(r);
            f[0] * g[0] + f[1] * g[1]
        })
        .collect();
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    (inner + 0.5 * (values[0] + values[values.len() - 1])) * h * slope.sqrt()
}

pub fn path_value(q_f: &Srvf, q_g: &Srvf, path: &[(usize, usize)]) -> f64 {
    path.windows(2)
        .map(|w| segment_value(q_f, q_g, w[0].0, w[0].1, w[1].0, w[1].1))
        .sum()
}

/// Every monotone lattice path from `(0, 0)` to `(T−1, T−1)` built from the
/// slope set.
pub fn all_paths(len: usize) -> Vec<Vec<(usize, usize)>> {
    let steps = slope_set();
    let end = len - 1;
    let mut out = Vec::new();
    let mut stack = vec![vec![(0usize, 0usize)]];
    while let Some(path) = stack.pop() {
        let &(i, j) = path.last().unwrap();
        if (i, j) == (end, end) {
            out.push(path);
            continue;
        }
        for &(di, dj) in &steps {
            if i + di <= end && j + dj <= end {
                let mut next = path.clone();
                next.push((i + di, j + dj));
                stack.push(next);
            }
        }
    }
    out
}

/// Maximum-value path and its value, by a forward sweep over lattice nodes.
pub fn best_path(q_f: &Srvf, q_g: &Srvf) -> (f64, Vec<(usize, usize)>) {
    let len = q_f.len();
    let steps = slope_set();
    let mut best = vec![vec![f64::NEG_INFINITY; len]; len];
    let mut from = vec![vec![(0usize, 0usize); len]; len];
    best[0][0] = 0.0;
    for i in 1..len {
        for j in 1..len {
            for &(di, dj) in &steps {
                if di <= i && dj <= j && best[i - di][j - dj] > f64::NEG_INFINITY {
                    let v = best[i - di][j - dj] + segment_value(q_f, q_g, i - di, j - dj, i, j);
                    if v > best[i][j] {
                        best[i][j] = v;
                        from[i][j] = (i - di, j - dj);
                    }
                }
            }
        }
    }
    let mut path = vec![(len - 1, len - 1)];
    while *path.last().unwrap() != (0, 0) {
        let (i, j) = *path.last().unwrap();
        path.push(from[i][j]);
    }
    path.reverse();
    (best[len - 1][len - 1], path)
}

pub fn rotate_srvf(q: &Srvf, angle: f64) -> Srvf {
    let (s, c) = angle.sin_cos();
    q.transformed(&[c, -s, s, c])
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
