//! Curves in ℝⁿ, uniform resampling, scale normalization and the square-root
//! velocity transform.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::{self, dot, gradient_rows, trapz};

/// Below this speed a sample is treated as stationary when forming the SRVF.
pub const MIN_SPEED: f64 = 1e-8;

/// Default number of samples per curve.
pub const DEFAULT_RESOLUTION: usize = 100;
/// Gap between first and last point below which a curve counts as closed.
pub const CLOSURE_TOL: f64 = 1e-9;

/// An ordered sequence of `T ≥ 3` points in ℝⁿ (`n ≥ 2`), read as samples of
/// a map `[0, 1] → ℝⁿ` at uniform parameters. Points are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    dim: usize,
    data: Vec<f64>,
}

impl Curve {
    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidCurve(format!("dimension {dim} < 2")));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidCurve(format!(
                "{} coordinates do not split into points of dimension {dim}",
                data.len()
            )));
        }
        let len = data.len() / dim;
        if len < 3 {
            return Err(Error::InvalidCurve(format!(
                "{len} points, need at least 3"
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidCurve(format!(
                "non-finite coordinate in point {}",
                pos / dim
            )));
        }
        Ok(Curve { dim, data })
    }

    pub fn from_points<P: AsRef<[f64]>>(points: &[P]) -> Result<Self> {
        let dim = points.first().map(|p| p.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(points.len() * dim);
        for (k, p) in points.iter().enumerate() {
            let p = p.as_ref();
            if p.len() != dim {
                return Err(Error::InvalidCurve(format!(
                    "point {k} has {} coordinates, expected {dim}",
                    p.len()
                )));
            }
            data.extend_from_slice(p);
        }
        Curve::from_flat(dim, data)
    }

    /// Samples `f` at `len` uniform parameters on `[0, 1]`.
    pub fn sample<F, P>(len: usize, f: F) -> Result<Self>
    where
        F: Fn(f64) -> P,
        P: AsRef<[f64]>,
    {
        let pts: Vec<P> = numeric::uniform_grid(len).into_iter().map(f).collect();
        Curve::from_points(&pts)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    pub fn centroid(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        for p in self.points() {
            for (acc, v) in c.iter_mut().zip(p) {
                *acc += v;
            }
        }
        let len = self.len() as f64;
        c.iter_mut().for_each(|v| *v /= len);
        c
    }

    /// Applies `map` to every point; the closure receives the point and a
    /// buffer of the same dimension to fill.
    pub fn map_points(&self, mut map: impl FnMut(&[f64], &mut [f64])) -> Curve {
        let mut data = vec![0.0; self.data.len()];
        for (src, dst) in self
            .data
            .chunks_exact(self.dim)
            .zip(data.chunks_exact_mut(self.dim))
        {
            map(src, dst);
        }
        Curve {
            dim: self.dim,
            data,
        }
    }

    /// Left-multiplies every point by the row-major `n × n` matrix.
    pub fn transformed(&self, matrix: &[f64]) -> Curve {
        let n = self.dim;
        assert_eq!(matrix.len(), n * n, "matrix must be {n}x{n}");
        self.map_points(|p, out| {
            for r in 0..n {
                out[r] = dot(&matrix[r * n..(r + 1) * n], p);
            }
        })
    }

    pub fn scaled(&self, factor: f64) -> Curve {
        self.map_points(|p, out| {
            for (o, v) in out.iter_mut().zip(p) {
                *o = v * factor;
            }
        })
    }

    pub fn translated(&self, offset: &[f64]) -> Curve {
        self.map_points(|p, out| {
            for ((o, v), d) in out.iter_mut().zip(p).zip(offset) {
                *o = v + d;
            }
        })
    }

    /// Total polyline length.
    pub fn arc_length(&self) -> f64 {
        self.data
            .chunks_exact(self.dim)
            .zip(self.data.chunks_exact(self.dim).skip(1))
            .map(|(a, b)| distance(a, b))
            .sum()
    }

    /// True when the last point repeats the first one.
    pub fn is_closed(&self, tol: f64) -> bool {
        distance(self.point(0), self.point(self.len() - 1)) <= tol
    }

    /// Appends a copy of the first point unless the curve is already closed.
    pub fn closed(&self) -> Curve {
        if self.is_closed(CLOSURE_TOL) {
            return self.clone();
        }
        let mut data = self.data.clone();
        data.extend_from_slice(self.point(0));
        Curve {
            dim: self.dim,
            data,
        }
    }

    /// Treats the curve as a closed loop and moves its start point forward by
    /// `shift` vertices. An explicit closing point is kept explicit.
    pub fn cyclic_shift(&self, shift: usize) -> Curve {
        let explicit = self.is_closed(CLOSURE_TOL);
        let loop_len = if explicit { self.len() - 1 } else { self.len() };
        let shift = shift % loop_len;
        let mut data = Vec::with_capacity(self.data.len());
        for k in 0..loop_len {
            data.extend_from_slice(self.point((k + shift) % loop_len));
        }
        if explicit {
            data.extend_from_slice(self.point(shift));
        }
        Curve {
            dim: self.dim,
            data,
        }
    }

    /// Parses one point per line, comma separated, no header.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let point = line
                .split(',')
                .map(|field| field.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("line {}: {e}", line_no + 1)))?;
            points.push(point);
        }
        Curve::from_points(&points)
    }

    /// One point per line using the shortest decimal that round-trips.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.data.len() * 20);
        for p in self.points() {
            for (c, v) in p.iter().enumerate() {
                if c > 0 {
                    out.push(',');
                }
                write!(out, "{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Curve::from_csv_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Square-root velocity representation: `T` vectors in ℝⁿ on the uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Srvf {
    dim: usize,
    values: Vec<f64>,
}

impl Srvf {
    pub fn from_flat(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || !values.len().is_multiple_of(dim) || values.len() / dim < 2 {
            return Err(Error::InvalidParameter(format!(
                "{} values cannot form an SRVF of dimension {dim}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite SRVF value".into()));
        }
        Ok(Srvf { dim, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn grid(&self) -> Vec<f64> {
        numeric::uniform_grid(self.len())
    }

    pub fn value(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    /// `∫⟨self(t), other(t)⟩ dt` by the trapezoidal rule.
    pub fn inner(&self, other: &Srvf) -> f64 {
        debug_assert_eq!(self.values.len(), other.values.len());
        let pointwise: Vec<f64> = self
            .values
            .chunks_exact(self.dim)
            .zip(other.values.chunks_exact(self.dim))
            .map(|(a, b)| dot(a, b))
            .collect();
        trapz(&pointwise)
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// Projection onto the unit L² sphere. A zero function is returned as is.
    pub fn normalized(&self) -> Srvf {
        let norm = self.l2_norm();
        if norm == 0.0 {
            return self.clone();
        }
        Srvf {
            dim: self.dim,
            values: self.values.iter().map(|v| v / norm).collect(),
        }
    }

    /// Left-multiplies every value by the row-major `n × n` matrix.
    pub fn transformed(&self, matrix: &[f64]) -> Srvf {
        let n = self.dim;
        assert_eq!(matrix.len(), n * n, "matrix must be {n}x{n}");
        let mut values = vec![0.0; self.values.len()];
        for (src, dst) in self.values.chunks_exact(n).zip(values.chunks_exact_mut(n)) {
            for r in 0..n {
                dst[r] = dot(&matrix[r * n..(r + 1) * n], src);
            }
        }
        Srvf { dim: n, values }
    }
}

/// Resamples `curve` to `len` points with equal spacing along the polyline.
///
/// Points are placed on the input polyline so that consecutive output points
/// are all the same Euclidean distance apart, which makes the output polyline
/// itself arc-length uniform; resampling the output again is a no-op. The
/// first and last input points are kept exactly. Polylines that fold at the
/// scale of one chord get the fixed point of repeated arc-length spacing,
/// which may cut corners of the input.
pub fn resample(curve: &Curve, len: usize) -> Result<Curve> {
    if len < 3 {
        return Err(Error::InvalidParameter(format!(
            "resample needs at least 3 output points, got {len}"
        )));
    }
    let poly = Polyline::new(curve);
    if !(poly.total > 0.0) {
        return Err(Error::DegenerateCurve);
    }
    let steps = len - 1;
    if curve.len() == len && poly.has_equal_chords() {
        return Ok(curve.clone());
    }
    let hi = poly.total / steps as f64;
    if let Some(out) = poly.equal_chords(0.0, hi, steps) {
        return Ok(out);
    }
    // The end position jumps where a chord circle touches a later part of the
    // polyline, so bisection may land on a jump; try every other bracket.
    let grid: Vec<f64> = (0..=SCAN).map(|k| hi * k as f64 / SCAN as f64).collect();
    let short: Vec<bool> = grid
        .iter()
        .map(|&c| c == 0.0 || matches!(poly.walk(c, steps), Walk::Finished { at_end: false, .. }))
        .collect();
    for k in (0..SCAN).rev() {
        if short[k] && !short[k + 1] {
            if let Some(out) = poly.equal_chords(grid[k], grid[k + 1], steps) {
                return Ok(out);
            }
        }
    }
    // No equal-chord placement lies on the input polyline (it folds at the
    // scale of one chord). Arc-length spacing repeated on its own output
    // converges to equal chords, which keeps the result idempotent.
    log::debug!("equal-chord resampling did not converge, relaxing arc-length spacing");
    let mut out = poly.arc_length_uniform(len);
    for _ in 0..MAX_RELAX {
        let p = Polyline::new(&out);
        if p.has_equal_chords() {
            break;
        }
        out = p.arc_length_uniform(len);
    }
    Ok(out)
}

/// Chord lengths probed when the first bisection fails.
const SCAN: usize = 512;
const MAX_RELAX: usize = 20_000;

struct Polyline<'a> {
    curve: &'a Curve,
    cumulative: Vec<f64>,
    total: f64,
}

enum Walk {
    Finished {
        data: Vec<f64>,
        position: f64,
        at_end: bool,
    },
    RanOut,
}

impl<'a> Polyline<'a> {
    fn new(curve: &'a Curve) -> Self {
        let mut cumulative = Vec::with_capacity(curve.len());
        cumulative.push(0.0);
        let mut acc = 0.0;
        for k in 1..curve.len() {
            acc += distance(curve.point(k - 1), curve.point(k));
            cumulative.push(acc);
        }
        Polyline {
            curve,
            cumulative,
            total: acc,
        }
    }

    fn has_equal_chords(&self) -> bool {
        let seg = |k: usize| self.cumulative[k + 1] - self.cumulative[k];
        let first = seg(0);
        (1..self.segments()).all(|k| (seg(k) - first).abs() <= 1e-12 * first)
    }

    /// Bisects for the chord in `[lo, hi]` at which the walk ends on the last
    /// input point; `walk(lo)` must stop short of it.
    fn equal_chords(&self, mut lo: f64, mut hi: f64, steps: usize) -> Option<Curve> {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            match self.walk(mid, steps) {
                Walk::Finished { at_end: false, .. } => lo = mid,
                _ => hi = mid,
            }
        }
        let Walk::Finished {
            mut data, position, ..
        } = self.walk(lo, steps)
        else {
            return None;
        };
        if self.total - position > 1e-9 * self.total {
            return None;
        }
        let d = self.curve.dim;
        data.truncate(steps * d);
        data.extend_from_slice(self.curve.point(self.curve.len() - 1));
        Some(Curve { dim: d, data })
    }

    fn segments(&self) -> usize {
        self.curve.len() - 1
    }

    /// Places `steps` points after the first, each at Euclidean distance
    /// `chord` from its predecessor at the first crossing further along the
    /// polyline.
    fn walk(&self, chord: f64, steps: usize) -> Walk {
        let d = self.curve.dim;
        let mut data = Vec::with_capacity((steps + 1) * d);
        data.extend_from_slice(self.curve.point(0));
        let mut seg = 0usize;
        let mut param = 0.0_f64;
        let mut current = self.curve.point(0).to_vec();
        let mut w = vec![0.0; d];
        let mut dir = vec![0.0; d];
        let chord_sq = chord * chord;
        for _ in 0..steps {
            let mut found = None;
            for s in seg..self.segments() {
                let a = self.curve.point(s);
                let b = self.curve.point(s + 1);
                let end_sq: f64 = b.iter().zip(&current).map(|(x, y)| (x - y) * (x - y)).sum();
                if end_sq < chord_sq {
                    continue;
                }
                for c in 0..d {
                    w[c] = a[c] - current[c];
                    dir[c] = b[c] - a[c];
                }
                let dd = dot(&dir, &dir);
                if dd == 0.0 {
                    continue;
                }
                let wd = dot(&w, &dir);
                let ww = dot(&w, &w);
                let disc = (wd * wd - dd * (ww - chord_sq)).max(0.0);
                let start = if s == seg { param } else { 0.0 };
                let t = ((-wd + disc.sqrt()) / dd).clamp(start, 1.0);
                found = Some((s, t));
                break;
            }
            let Some((s, t)) = found else {
                return Walk::RanOut;
            };
            seg = s;
            param = t;
            let a = self.curve.point(s);
            let b = self.curve.point(s + 1);
            for c in 0..d {
                current[c] = a[c] + t * (b[c] - a[c]);
            }
            data.extend_from_slice(&current);
        }
        let seg_len = self.cumulative[seg + 1] - self.cumulative[seg];
        let position = self.cumulative[seg] + param * seg_len;
        let at_end = seg + 1 == self.segments() && param >= 1.0;
        Walk::Finished {
            data,
            position,
            at_end,
        }
    }

    fn arc_length_uniform(&self, len: usize) -> Curve {
        let d = self.curve.dim;
        let mut data = Vec::with_capacity(len * d);
        let mut seg = 0usize;
        for k in 0..len {
            if k == len - 1 {
                data.extend_from_slice(self.curve.point(self.curve.len() - 1));
                break;
            }
            let target = self.total * k as f64 / (len - 1) as f64;
            while seg + 1 < self.segments() && self.cumulative[seg + 1] < target {
                seg += 1;
            }
            let seg_len = self.cumulative[seg + 1] - self.cumulative[seg];
            let t = if seg_len > 0.0 {
                ((target - self.cumulative[seg]) / seg_len).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let a = self.curve.point(seg);
            let b = self.curve.point(seg + 1);
            data.extend((0..d).map(|c| a[c] + t * (b[c] - a[c])));
        }
        Curve { dim: d, data }
    }
}

/// `sqrt(∫|f′(t)|² dt)` with finite-difference derivatives.
pub fn velocity_norm(curve: &Curve) -> f64 {
    let deriv = gradient_rows(curve.as_flat(), curve.dim());
    let sq: Vec<f64> = deriv.chunks_exact(curve.dim()).map(|v| dot(v, v)).collect();
    trapz(&sq).sqrt()
}

/// Divides by `‖f′‖` and moves the centroid to the origin.
pub fn normalize_scale(curve: &Curve) -> Result<Curve> {
    let scale = velocity_norm(curve);
    if !(scale > 1e-300) || !scale.is_finite() {
        return Err(Error::DegenerateCurve);
    }
    let scaled = curve.scaled(1.0 / scale);
    let centroid = scaled.centroid();
    let neg: Vec<f64> = centroid.iter().map(|v| -v).collect();
    Ok(scaled.translated(&neg))
}

/// Resampling followed by scale normalization, the standard input pipeline.
pub fn preprocess(curve: &Curve, len: usize) -> Result<Curve> {
    normalize_scale(&resample(curve, len)?)
}

/// `q(t) = f′(t) / sqrt(|f′(t)|)`, with `|f′|` floored at [`MIN_SPEED`].
pub fn to_srvf(curve: &Curve) -> Srvf {
    let dim = curve.dim();
    let mut values = gradient_rows(curve.as_flat(), dim);
    for v in values.chunks_exact_mut(dim) {
        let speed = dot(v, v).sqrt().max(MIN_SPEED);
        let inv = 1.0 / speed.sqrt();
        v.iter_mut().for_each(|x| *x *= inv);
    }
    Srvf { dim, values }
}

/// Inverts [`to_srvf`] up to the additive constant `start`:
/// `f(t) = start + ∫₀ᵗ q(s)|q(s)| ds` by cumulative trapezoids.
pub fn from_srvf(q: &Srvf, start: &[f64]) -> Result<Curve> {
    let dim = q.dim();
    if start.len() != dim {
        return Err(Error::DimensionMismatch {
            left: dim,
            right: start.len(),
        });
    }
    let len = q.len();
    let h = 1.0 / (len - 1) as f64;
    let velocity: Vec<f64> = q
        .as_flat()
        .chunks_exact(dim)
        .flat_map(|v| {
            let mag = dot(v, v).sqrt();
            v.iter().map(move |x| x * mag)
        })
        .collect();
    let mut data = Vec::with_capacity(len * dim);
    data.extend_from_slice(start);
    for k in 1..len {
        for c in 0..dim {
            let prev = data[(k - 1) * dim + c];
            let step = 0.5 * h * (velocity[(k - 1) * dim + c] + velocity[k * dim + c]);
            data.push(prev + step);
        }
    }
    Curve::from_flat(dim, data)
}
