//! Elastic distances: amplitude distance with joint rotation and
//! reparameterization search, phase distance between warpings, and the
//! Fisher-Rao geodesic between discrete densities.

use nalgebra::DMatrix;

use crate::curve::{preprocess, to_srvf, Curve, Srvf, CLOSURE_TOL};
use crate::error::{Error, Result};
use crate::numeric::{self, clamped_acos, dot, interp_rows, trapz, warp_slope};

/// Lattice steps `(Δi, Δj)` of the registration DP, ordered by distance from
/// the diagonal; earlier entries win ties.
pub const DP_STEPS: [(usize, usize); 7] = [(1, 1), (1, 2), (2, 1), (2, 3), (3, 2), (1, 3), (3, 1)];

/// A discretized element of the warping group: strictly increasing samples
/// on the uniform grid with `γ(0) = 0` and `γ(1) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Warping {
    values: Vec<f64>,
}

impl Warping {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidParameter(
                "warping needs at least 2 samples".into(),
            ));
        }
        if values[0] != 0.0 || values[values.len() - 1] != 1.0 {
            return Err(Error::InvalidParameter("warping must fix 0 and 1".into()));
        }
        for k in 1..values.len() {
            if !(values[k] > values[k - 1]) {
                return Err(Error::NonMonotoneWarping(k));
            }
        }
        Ok(Warping { values })
    }

    pub fn identity(len: usize) -> Self {
        Warping {
            values: numeric::uniform_grid(len),
        }
    }

    /// Samples `gamma` on the grid; the endpoints are pinned to 0 and 1.
    pub fn from_fn(len: usize, gamma: impl Fn(f64) -> f64) -> Result<Self> {
        let mut values: Vec<f64> = numeric::uniform_grid(len).into_iter().map(gamma).collect();
        values[0] = 0.0;
        values[len - 1] = 1.0;
        Warping::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Maximum deviation from the identity warping.
    pub fn max_deviation_from_identity(&self) -> f64 {
        let last = (self.len() - 1) as f64;
        self.values
            .iter()
            .enumerate()
            .map(|(k, v)| (v - k as f64 / last).abs())
            .fold(0.0, f64::max)
    }

    /// Inverse warping sampled on the same grid.
    pub fn inverse(&self) -> Warping {
        let len = self.len();
        let grid = numeric::uniform_grid(len);
        let mut out = Vec::with_capacity(len);
        let mut seg = 0usize;
        for &t in &grid {
            while seg + 2 < len && self.values[seg + 1] < t {
                seg += 1;
            }
            let (a, b) = (self.values[seg], self.values[seg + 1]);
            let frac = ((t - a) / (b - a)).clamp(0.0, 1.0);
            out.push(grid[seg] + frac * (grid[seg + 1] - grid[seg]));
        }
        out[0] = 0.0;
        out[len - 1] = 1.0;
        Warping { values: out }
    }
}

/// An element of SO(n), stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Rotation {
    dim: usize,
    matrix: Vec<f64>,
}

impl Rotation {
    pub fn identity(dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for k in 0..dim {
            matrix[k * dim + k] = 1.0;
        }
        Rotation { dim, matrix }
    }

    /// Planar rotation by `angle` radians.
    pub fn planar(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation {
            dim: 2,
            matrix: vec![c, -s, s, c],
        }
    }

    /// Accepts a row-major matrix that is orthogonal with determinant +1
    /// within `1e-8`.
    pub fn from_matrix(dim: usize, matrix: Vec<f64>) -> Result<Self> {
        if matrix.len() != dim * dim {
            return Err(Error::InvalidParameter(format!(
                "expected {} entries",
                dim * dim
            )));
        }
        let m = DMatrix::from_row_slice(dim, dim, &matrix);
        let gram = m.transpose() * &m;
        let off = (gram - DMatrix::identity(dim, dim)).abs().max();
        if off > 1e-8 || (m.determinant() - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidParameter("matrix is not a rotation".into()));
        }
        Ok(Rotation { dim, matrix })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn transpose(&self) -> Rotation {
        let n = self.dim;
        let mut matrix = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                matrix[c * n + r] = self.matrix[r * n + c];
            }
        }
        Rotation { dim: n, matrix }
    }

    pub fn determinant(&self) -> f64 {
        DMatrix::from_row_slice(self.dim, self.dim, &self.matrix).determinant()
    }

    /// `max |MᵀM − I|`.
    pub fn orthogonality_error(&self) -> f64 {
        let m = DMatrix::from_row_slice(self.dim, self.dim, &self.matrix);
        (m.transpose() * &m - DMatrix::identity(self.dim, self.dim))
            .abs()
            .max()
    }
}

/// Outcome of aligning `g` to `f`.
#[derive(Debug, Clone)]
pub struct AlignmentResult {
    /// Geodesic angle in radians, within `[0, π]`.
    pub distance: f64,
    pub rotation: Rotation,
    pub warping: Warping,
    /// Cyclic start-point shift applied to `g` (0 unless seed search ran).
    pub start_shift: usize,
    /// The better alignment moved `f` onto the (shifted) `g`; `rotation` and
    /// `warping` then act on `f`.
    pub reversed: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ElasticOptions {
    /// Optimize over SO(n).
    pub rotation: bool,
    /// Number of uniformly spaced start points tried when both curves are
    /// closed; `None` disables the search.
    pub seed_shifts: Option<usize>,
    pub max_rounds: usize,
    pub tolerance: f64,
}

impl Default for ElasticOptions {
    fn default() -> Self {
        ElasticOptions {
            rotation: true,
            seed_shifts: None,
            max_rounds: 20,
            tolerance: 1e-6,
        }
    }
}

impl ElasticOptions {
    /// Defaults plus a 10-way start-point search, for closed contours.
    pub fn closed() -> Self {
        ElasticOptions {
            seed_shifts: Some(10),
            ..Self::default()
        }
    }
}

/// A probability mass function on `K` bins.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDensity {
    masses: Vec<f64>,
}

impl DiscreteDensity {
    /// Rejects negative entries and sums further than `1e-6` from one; the
    /// accepted masses are rescaled to sum to one exactly.
    pub fn new(masses: Vec<f64>) -> Result<Self> {
        if masses.is_empty() || masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::InvalidParameter(
                "density masses must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = masses.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Unnormalized(sum));
        }
        Ok(DiscreteDensity {
            masses: masses.into_iter().map(|m| m / sum).collect(),
        })
    }

    /// Normalizes arbitrary non-negative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::InvalidParameter(
                "weights must have a positive sum".into(),
            ));
        }
        DiscreteDensity::new(weights.iter().map(|w| w / sum).collect())
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }
}

fn check_grids(a: &Srvf, b: &Srvf) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    if a.len() != b.len() {
        return Err(Error::GridMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// `(q ∘ γ) · sqrt(γ̇)` with linear interpolation of `q`.
pub fn warp_srvf(q: &Srvf, warping: &Warping) -> Result<Srvf> {
    if q.len() != warping.len() {
        return Err(Error::GridMismatch {
            left: q.len(),
            right: warping.len(),
        });
    }
    let dim = q.dim();
    let slope = warp_slope(warping.values());
    let mut values = vec![0.0; q.as_flat().len()];
    for (k, out) in values.chunks_exact_mut(dim).enumerate() {
        interp_rows(q.as_flat(), dim, warping.values()[k], out);
        let s = slope[k].max(0.0).sqrt();
        out.iter_mut().for_each(|v| *v *= s);
    }
    Srvf::from_flat(dim, values)
}

/// Closed-form maximizer of `∫⟨q_f, O q_g⟩ dt` over SO(n).
pub fn optimal_rotation(q_f: &Srvf, q_g: &Srvf) -> Result<Rotation> {
    check_grids(q_f, q_g)?;
    let n = q_f.dim();
    let len = q_f.len();
    let h = 1.0 / (len - 1) as f64;
    let mut cross = DMatrix::<f64>::zeros(n, n);
    for k in 0..len {
        let w = if k == 0 || k == len - 1 { 0.5 * h } else { h };
        let (a, b) = (q_f.value(k), q_g.value(k));
        for r in 0..n {
            for c in 0..n {
                cross[(r, c)] += w * a[r] * b[c];
            }
        }
    }
    let svd = cross.svd(true, true);
    let u = svd.u.expect("svd computed with u");
    let v_t = svd.v_t.expect("svd computed with v_t");
    let mut fix = DMatrix::<f64>::identity(n, n);
    if (u.determinant() * v_t.determinant()) < 0.0 {
        fix[(n - 1, n - 1)] = -1.0;
    }
    let o = u * fix * v_t;
    let mut matrix = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            matrix.push(o[(r, c)]);
        }
    }
    Ok(Rotation { dim: n, matrix })
}

/// Sub-grid resolution of the DP: every step length in [`DP_STEPS`] divides 6,
/// so all segment samples of `q_g` fall on sixths of a grid cell.
const SUBDIV: usize = 6;

/// Inner products `⟨q_f(t_r), q_g(m / (SUBDIV·(T−1)))⟩` for every row `r`
/// and sub-grid position `m`, with `q_g` linearly interpolated.
struct InnerTable {
    width: usize,
    values: Vec<f64>,
}

impl InnerTable {
    fn new(q_f: &Srvf, q_g: &Srvf) -> Self {
        let len = q_f.len();
        let dim = q_f.dim();
        let width = SUBDIV * (len - 1) + 1;
        let mut fine = vec![0.0; width * dim];
        for m in 0..width {
            let lower = (m / SUBDIV).min(len - 2);
            let frac = (m - lower * SUBDIV) as f64 / SUBDIV as f64;
            let (a, b) = (q_g.value(lower), q_g.value(lower + 1));
            for c in 0..dim {
                fine[m * dim + c] = a[c] + frac * (b[c] - a[c]);
            }
        }
        let mut values = vec![0.0; len * width];
        for r in 0..len {
            let row = q_f.value(r);
            for m in 0..width {
                values[r * width + m] = dot(row, &fine[m * dim..(m + 1) * dim]);
            }
        }
        InnerTable { width, values }
    }

    /// Quadrature contribution of one straight lattice segment from `(k, l)`
    /// to `(i, j)`: trapezoidal `∫⟨q_f(t), q_g(γ(t))⟩ sqrt(γ̇) dt` over
    /// `[t_k, t_i]`.
    fn segment(&self, h: f64, k: usize, l: usize, i: usize, j: usize) -> f64 {
        let (di, dj) = (i - k, j - l);
        let stride = SUBDIV / di * dj;
        let mut m = SUBDIV * l;
        let mut acc = 0.0;
        for r in k..=i {
            let v = self.values[r * self.width + m];
            acc += if r == k || r == i { 0.5 * v } else { v };
            m += stride;
        }
        acc * h * (dj as f64 / di as f64).sqrt()
    }
}

/// Lattice path `(0, 0) → (T−1, T−1)` maximizing the discretized alignment
/// objective under the [`DP_STEPS`] slope constraints.
pub fn optimal_warping_path(q_f: &Srvf, q_g: &Srvf) -> Result<Vec<(usize, usize)>> {
    check_grids(q_f, q_g)?;
    let len = q_f.len();
    let mut score = vec![f64::NEG_INFINITY; len * len];
    let mut back = vec![u8::MAX; len * len];
    score[0] = 0.0;
    let table = InnerTable::new(q_f, q_g);
    let h = 1.0 / (len - 1) as f64;
    for i in 1..len {
        for j in 1..len {
            let mut best = f64::NEG_INFINITY;
            let mut best_step = u8::MAX;
            for (s, &(di, dj)) in DP_STEPS.iter().enumerate() {
                if di > i || dj > j {
                    continue;
                }
                let (k, l) = (i - di, j - dj);
                let prev = score[k * len + l];
                if prev == f64::NEG_INFINITY {
                    continue;
                }
                let cand = prev + table.segment(h, k, l, i, j);
                if cand > best {
                    best = cand;
                    best_step = s as u8;
                }
            }
            score[i * len + j] = best;
            back[i * len + j] = best_step;
        }
    }
    let mut path = vec![(len - 1, len - 1)];
    let (mut i, mut j) = (len - 1, len - 1);
    while i > 0 || j > 0 {
        let step = back[i * len + j];
        if step == u8::MAX {
            return Err(Error::Invariant(format!(
                "DP lattice node ({i}, {j}) unreachable"
            )));
        }
        let (di, dj) = DP_STEPS[step as usize];
        i -= di;
        j -= dj;
        path.push((i, j));
    }
    path.reverse();
    Ok(path)
}

/// Piecewise-linear warping through the lattice nodes of `path`.
pub fn warping_from_path(len: usize, path: &[(usize, usize)]) -> Result<Warping> {
    let last = (len - 1) as f64;
    let mut values = vec![0.0; len];
    for pair in path.windows(2) {
        let ((k, l), (i, j)) = (pair[0], pair[1]);
        let slope = (j - l) as f64 / (i - k) as f64;
        for r in k..=i {
            values[r] = (l as f64 + slope * (r - k) as f64) / last;
        }
    }
    values[0] = 0.0;
    values[len - 1] = 1.0;
    Warping::new(values)
}

/// Reparameterization of `q_g` best matching `q_f`, by dynamic programming
/// on the `T × T` lattice.
pub fn optimal_warping(q_f: &Srvf, q_g: &Srvf) -> Result<Warping> {
    let path = optimal_warping_path(q_f, q_g)?;
    warping_from_path(q_f.len(), &path)
}

/// Cosine of the angle between `q_f` and `O · (q_g, γ)` on the L² sphere.
fn aligned_cosine(q_f: &Srvf, q_g: &Srvf, rotation: &Rotation, warping: &Warping) -> Result<f64> {
    let moved = warp_srvf(q_g, warping)?.transformed(rotation.matrix());
    let denom = q_f.l2_norm() * moved.l2_norm();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(q_f.inner(&moved) / denom)
}

/// Geodesic angle between `q_f` and `q_g` after applying `rotation` and
/// `warping` to `q_g`; both functions are projected onto the unit sphere.
pub fn aligned_distance(
    q_f: &Srvf,
    q_g: &Srvf,
    rotation: &Rotation,
    warping: &Warping,
) -> Result<f64> {
    check_grids(q_f, q_g)?;
    Ok(clamped_acos(aligned_cosine(q_f, q_g, rotation, warping)?))
}

/// Coordinate descent over rotation and warping for two SRVFs.
pub fn align_srvfs(q_f: &Srvf, q_g: &Srvf, opts: &ElasticOptions) -> Result<AlignmentResult> {
    check_grids(q_f, q_g)?;
    let mut rotation = if opts.rotation {
        optimal_rotation(q_f, q_g)?
    } else {
        Rotation::identity(q_f.dim())
    };
    let mut warping = Warping::identity(q_f.len());
    let mut best = aligned_cosine(q_f, q_g, &rotation, &warping)?;
    for _ in 0..opts.max_rounds {
        let start = best;
        let rotated = q_g.transformed(rotation.matrix());
        let cand_warp = optimal_warping(q_f, &rotated)?;
        let cos_w = aligned_cosine(q_f, q_g, &rotation, &cand_warp)?;
        if cos_w > best {
            best = cos_w;
            warping = cand_warp;
        }
        if opts.rotation {
            let warped = warp_srvf(q_g, &warping)?;
            let cand_rot = optimal_rotation(q_f, &warped)?;
            let cos_r = aligned_cosine(q_f, q_g, &cand_rot, &warping)?;
            if cos_r > best {
                best = cos_r;
                rotation = cand_rot;
            }
        }
        if best - start < opts.tolerance {
            break;
        }
    }
    Ok(AlignmentResult {
        distance: clamped_acos(best),
        rotation,
        warping,
        start_shift: 0,
        reversed: false,
    })
}

/// Shape distance between two preprocessed curves, minimized over rotations
/// and reparameterizations of `g` (and optionally over its start point).
/// The descent runs in both directions and the smaller angle is kept, so the
/// result is symmetric in `f` and `g`.
pub fn amplitude_distance(f: &Curve, g: &Curve, opts: &ElasticOptions) -> Result<AlignmentResult> {
    if f.dim() != g.dim() {
        return Err(Error::DimensionMismatch {
            left: f.dim(),
            right: g.dim(),
        });
    }
    if f.len() != g.len() {
        return Err(Error::GridMismatch {
            left: f.len(),
            right: g.len(),
        });
    }
    let q_f = to_srvf(f);
    // Start points only move along closed contours.
    let closed = f.is_closed(CLOSURE_TOL) && g.is_closed(CLOSURE_TOL);
    let shifts = if closed {
        opts.seed_shifts.unwrap_or(1).max(1)
    } else {
        1
    };
    let loop_len = g.len() - 1;
    let mut best: Option<AlignmentResult> = None;
    for s in 0..shifts {
        let shift = s * loop_len / shifts;
        let q_g = if shift == 0 {
            to_srvf(g)
        } else {
            to_srvf(&preprocess(&g.cyclic_shift(shift), g.len())?)
        };
        let forward = align_srvfs(&q_f, &q_g, opts)?;
        let reverse = align_srvfs(&q_g, &q_f, opts)?;
        let mut result = if reverse.distance < forward.distance {
            AlignmentResult {
                reversed: true,
                ..reverse
            }
        } else {
            forward
        };
        result.start_shift = shift;
        if best.as_ref().is_none_or(|b| result.distance < b.distance) {
            best = Some(result);
        }
    }
    Ok(best.expect("at least one start point tried"))
}

/// `arccos ∫ sqrt(γ̇₁ γ̇₂) dt`, in `[0, π/2]`.
pub fn phase_distance(g1: &Warping, g2: &Warping) -> Result<f64> {
    if g1.len() != g2.len() {
        return Err(Error::GridMismatch {
            left: g1.len(),
            right: g2.len(),
        });
    }
    let s1 = warp_slope(g1.values());
    let s2 = warp_slope(g2.values());
    let integrand: Vec<f64> = s1
        .iter()
        .zip(&s2)
        .map(|(a, b)| (a * b).max(0.0).sqrt())
        .collect();
    Ok(clamped_acos(trapz(&integrand)))
}

/// Fisher-Rao geodesic distance `arccos Σ sqrt(p₁ p₂)`, in `[0, π/2]`.
pub fn fisher_rao_pdf_distance(p1: &DiscreteDensity, p2: &DiscreteDensity) -> Result<f64> {
    if p1.masses.len() != p2.masses.len() {
        return Err(Error::GridMismatch {
            left: p1.masses.len(),
            right: p2.masses.len(),
        });
    }
    let bc: f64 = p1
        .masses
        .iter()
        .zip(&p2.masses)
        .map(|(a, b)| (a * b).sqrt())
        .sum();
    Ok(clamped_acos(bc))
}

/// Speed profile `|q(t)|²` of an SRVF as a density over its grid samples
/// (trapezoidal cell weights).
pub fn speed_density(q: &Srvf) -> Result<DiscreteDensity> {
    let len = q.len();
    let weights: Vec<f64> = (0..len)
        .map(|k| {
            let v = q.value(k);
            let w = if k == 0 || k == len - 1 { 0.5 } else { 1.0 };
            w * dot(v, v)
        })
        .collect();
    DiscreteDensity::from_weights(&weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::{preprocess, to_srvf};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn srvf(len: usize, f: impl Fn(f64) -> [f64; 2]) -> Srvf {
        to_srvf(&Curve::sample(len, f).unwrap())
    }

    #[test]
    fn warping_validation() {
        assert!(Warping::new(vec![0.0, 0.6, 0.5, 1.0]).is_err());
        assert!(Warping::new(vec![0.0, 0.5, 0.9]).is_err());
        assert!(Warping::new(vec![0.0, 0.2, 1.0]).is_ok());
    }

    #[test]
    fn identity_warp_is_noop() {
        let q = srvf(50, |t| [t.cos(), (2.0 * t).sin()]);
        let w = warp_srvf(&q, &Warping::identity(50)).unwrap();
        for (a, b) in q.as_flat().iter().zip(w.as_flat()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn warp_constant_by_square() {
        let len = 100;
        let q = Srvf::from_flat(2, [1.0, 0.0].repeat(len)).unwrap();
        let g = Warping::from_fn(len, |t| t * t).unwrap();
        let w = warp_srvf(&q, &g).unwrap();
        let h = 1.0 / (len - 1) as f64;
        for (k, t) in q.grid().into_iter().enumerate() {
            let expected = (2.0 * t).sqrt();
            // Central differences are exact for t² inside; the one-sided end
            // slopes are off by O(h).
            let tol = if k == 0 || k == len - 1 {
                h.sqrt() + 1e-12
            } else {
                1e-9
            };
            assert!((w.value(k)[0] - expected).abs() < tol, "k = {k}");
            assert_eq!(w.value(k)[1], 0.0);
        }
    }

    #[test]
    fn warp_preserves_norm() {
        let q = srvf(100, |t| [(3.0 * t).sin() + t, (2.0 * t).cos()]);
        let g = Warping::from_fn(100, |t| {
            t + 0.1 * (PI * t).sin() - 0.05 * (2.0 * PI * t).sin()
        })
        .unwrap();
        let w = warp_srvf(&q, &g).unwrap();
        assert!((w.l2_norm() - q.l2_norm()).abs() < 1e-2);
    }

    #[test]
    fn rotation_recovers_known_angle() {
        let q_f = srvf(80, |t| [t + 0.2 * (5.0 * t).sin(), t * t]);
        let r = Rotation::planar(1.1);
        let q_g = q_f.transformed(r.matrix());
        let o = optimal_rotation(&q_f, &q_g).unwrap();
        let back = q_g.transformed(o.matrix());
        for (a, b) in back.as_flat().iter().zip(q_f.as_flat()) {
            assert!((a - b).abs() < 1e-6);
        }
        let same = optimal_rotation(&q_f, &q_f).unwrap();
        for (a, b) in same.matrix().iter().zip(Rotation::identity(2).matrix()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn rotation_matches_angle_grid_search() {
        let q_f = srvf(60, |t| [(4.0 * t).cos(), t.powi(3)]);
        let q_g = srvf(60, |t| [(2.0 * t).sin() - t, 0.5 * (3.0 * t).cos()]);
        let o = optimal_rotation(&q_f, &q_g).unwrap();
        let ours = q_f.inner(&q_g.transformed(o.matrix()));
        let grid_best = (0..3600)
            .map(|s| {
                let r = Rotation::planar(2.0 * PI * s as f64 / 3600.0);
                q_f.inner(&q_g.transformed(r.matrix()))
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(ours >= grid_best - 1e-12);
        assert!((ours - grid_best).abs() < 1e-4);
    }

    #[test]
    fn rotation_handles_rank_deficient_cross_covariance() {
        let zero = Srvf::from_flat(3, vec![0.0; 30]).unwrap();
        let line = Srvf::from_flat(3, [1.0, 0.0, 0.0].repeat(10)).unwrap();
        for (a, b) in [(&zero, &zero), (&line, &line), (&line, &zero)] {
            let o = optimal_rotation(a, b).unwrap();
            assert!(o.orthogonality_error() < 1e-8);
            assert!((o.determinant() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn dp_identity_on_equal_inputs() {
        let q = srvf(100, |t| [(6.0 * t).sin(), t]);
        let w = optimal_warping(&q, &q).unwrap();
        assert!(w.max_deviation_from_identity() < 2.0 / 100.0);
    }

    #[test]
    fn dp_recovers_known_warp() {
        let len = 100;
        let base = |t: f64| [(2.0 * PI * t).cos() + 0.3 * t, (3.0 * PI * t).sin()];
        let gamma0 = |t: f64| t + 0.15 * (PI * t).sin();
        // f = base ∘ γ₀ and g = base, so the alignment warping is γ₀ itself.
        let q_f = srvf(len, |t| base(gamma0(t)));
        let q_g = srvf(len, base);
        let w = optimal_warping(&q_f, &q_g).unwrap();
        let err = w
            .values()
            .iter()
            .zip(numeric::uniform_grid(len))
            .map(|(v, t)| (v - gamma0(t)).abs())
            .fold(0.0, f64::max);
        assert!(err < 0.05, "L∞ error {err}");
    }

    #[test]
    fn self_distance_is_zero() {
        let f = preprocess(
            &Curve::sample(150, |t| [(3.0 * t).cos(), (2.0 * t).sin() + t]).unwrap(),
            100,
        )
        .unwrap();
        let r = amplitude_distance(&f, &f, &ElasticOptions::default()).unwrap();
        assert!(r.distance < 1e-6, "{}", r.distance);
    }

    #[test]
    fn orthogonal_lines() {
        let f = preprocess(&Curve::sample(20, |t| [t, 0.0]).unwrap(), 50).unwrap();
        let g = preprocess(&Curve::sample(20, |t| [0.0, t]).unwrap(), 50).unwrap();
        let with = amplitude_distance(&f, &g, &ElasticOptions::default()).unwrap();
        assert!(with.distance < 1e-6);
        let without = ElasticOptions {
            rotation: false,
            ..ElasticOptions::default()
        };
        let r = amplitude_distance(&f, &g, &without).unwrap();
        assert_abs_diff_eq!(r.distance, FRAC_PI_2, epsilon = 1e-6);
    }

    #[test]
    fn alignment_result_reproduces_distance() {
        let f = preprocess(
            &Curve::sample(100, |t| [(3.0 * t).cos(), t * t]).unwrap(),
            100,
        )
        .unwrap();
        let g = preprocess(&Curve::sample(100, |t| [(2.0 * t).sin(), t]).unwrap(), 100).unwrap();
        for (a, b) in [(&f, &g), (&g, &f)] {
            let r = amplitude_distance(a, b, &ElasticOptions::default()).unwrap();
            let (q_a, q_b) = (to_srvf(a), to_srvf(b));
            let again = if r.reversed {
                aligned_distance(&q_b, &q_a, &r.rotation, &r.warping)
            } else {
                aligned_distance(&q_a, &q_b, &r.rotation, &r.warping)
            }
            .unwrap();
            assert!((again - r.distance).abs() < 1e-12);
        }
        let fg = amplitude_distance(&f, &g, &ElasticOptions::default()).unwrap();
        let gf = amplitude_distance(&g, &f, &ElasticOptions::default()).unwrap();
        assert_eq!(fg.distance, gf.distance);
        assert_ne!(fg.reversed, gf.reversed);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let f = Curve::sample(10, |t| [t, 0.0]).unwrap();
        let g = Curve::sample(10, |t| [t, 0.0, t]).unwrap();
        assert!(matches!(
            amplitude_distance(&f, &g, &ElasticOptions::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn seed_search_undoes_start_shift() {
        let circleish = |t: f64| {
            let a = 2.0 * PI * t;
            let r = 1.0 + 0.3 * (3.0 * a).cos();
            [r * a.cos(), r * a.sin()]
        };
        let f = preprocess(&Curve::sample(100, circleish).unwrap(), 100).unwrap();
        let g = preprocess(&f.cyclic_shift(33), 100).unwrap();
        let plain = amplitude_distance(&f, &g, &ElasticOptions::default()).unwrap();
        let searched = amplitude_distance(&f, &g, &ElasticOptions::closed()).unwrap();
        assert!(searched.distance <= plain.distance);
        assert!(searched.distance < 0.1, "{}", searched.distance);
    }

    #[test]
    fn phase_distance_values() {
        let id = Warping::identity(1000);
        assert_eq!(phase_distance(&id, &id).unwrap(), 0.0);
        let sq = Warping::from_fn(1000, |t| t * t).unwrap();
        let d = phase_distance(&id, &sq).unwrap();
        assert_abs_diff_eq!(d, (2.0 * 2f64.sqrt() / 3.0).acos(), epsilon = 1e-3);
        assert_abs_diff_eq!(d, phase_distance(&sq, &id).unwrap(), epsilon = 1e-9);
    }

    #[test]
    fn fisher_rao_values() {
        let k = 1000;
        let uniform = DiscreteDensity::new(vec![1.0 / k as f64; k]).unwrap();
        assert_eq!(fisher_rao_pdf_distance(&uniform, &uniform).unwrap(), 0.0);
        let left = DiscreteDensity::new(vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let right = DiscreteDensity::new(vec![0.0, 0.0, 0.25, 0.75]).unwrap();
        assert_abs_diff_eq!(
            fisher_rao_pdf_distance(&left, &right).unwrap(),
            FRAC_PI_2,
            epsilon = 1e-15
        );
        // Bin masses of the density 2t on [0, 1]: ((k+1)² − k²) / K².
        let kk = (k * k) as f64;
        let ramp = DiscreteDensity::new((0..k).map(|i| (2 * i + 1) as f64 / kk).collect()).unwrap();
        let d = fisher_rao_pdf_distance(&uniform, &ramp).unwrap();
        assert_abs_diff_eq!(d, (2.0 * 2f64.sqrt() / 3.0).acos(), epsilon = 1e-3);
    }

    #[test]
    fn unnormalized_density_rejected() {
        assert!(matches!(
            DiscreteDensity::new(vec![0.5, 0.6]),
            Err(Error::Unnormalized(_))
        ));
    }

    #[test]
    fn inverse_warping_composes_to_identity() {
        let g = Warping::from_fn(200, |t| t + 0.2 * (PI * t).sin()).unwrap();
        let inv = g.inverse();
        for (k, &v) in g.values().iter().enumerate() {
            // γ⁻¹(γ(t_k)) = t_k, read by interpolating the inverse samples.
            let mut out = [0.0];
            interp_rows(inv.values(), 1, v, &mut out);
            assert!((out[0] - k as f64 / 199.0).abs() < 1e-3);
        }
    }
}
