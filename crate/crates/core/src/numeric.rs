//! Small numerical kernels shared by the curve and metric code.
//!
//! Everything operates on uniform grids over `[0, 1]` with `len` samples and
//! spacing `1 / (len - 1)`.

/// Uniform parameter grid `t_k = k / (len - 1)`.
pub fn uniform_grid(len: usize) -> Vec<f64> {
    let last = (len - 1) as f64;
    (0..len).map(|k| k as f64 / last).collect()
}

/// Trapezoidal integral of uniformly sampled values over `[0, 1]`.
pub fn trapz(values: &[f64]) -> f64 {
    let len = values.len();
    if len < 2 {
        return 0.0;
    }
    let h = 1.0 / (len - 1) as f64;
    let interior: f64 = values[1..len - 1].iter().sum();
    h * (interior + 0.5 * (values[0] + values[len - 1]))
}

/// Derivative of a multichannel signal stored row-major (`len` rows of `dim`).
///
/// Central differences in the interior, second-order one-sided stencils at
/// both ends. Exact for quadratics.
pub fn gradient_rows(values: &[f64], dim: usize) -> Vec<f64> {
    let len = values.len() / dim;
    let h = 1.0 / (len - 1) as f64;
    let mut out = vec![0.0; values.len()];
    let at = |k: usize, c: usize| values[k * dim + c];
    for c in 0..dim {
        if len == 2 {
            let d = (at(1, c) - at(0, c)) / h;
            out[c] = d;
            out[dim + c] = d;
            continue;
        }
        out[c] = (-3.0 * at(0, c) + 4.0 * at(1, c) - at(2, c)) / (2.0 * h);
        for k in 1..len - 1 {
            out[k * dim + c] = (at(k + 1, c) - at(k - 1, c)) / (2.0 * h);
        }
        let n = len - 1;
        out[n * dim + c] = (3.0 * at(n, c) - 4.0 * at(n - 1, c) + at(n - 2, c)) / (2.0 * h);
    }
    out
}

/// Derivative of a scalar warping: central differences inside, first-order
/// one-sided at the ends so a strictly increasing input never yields a
/// negative slope.
pub fn warp_slope(values: &[f64]) -> Vec<f64> {
    let len = values.len();
    let h = 1.0 / (len - 1) as f64;
    let mut out = vec![0.0; len];
    out[0] = (values[1] - values[0]) / h;
    out[len - 1] = (values[len - 1] - values[len - 2]) / h;
    for k in 1..len - 1 {
        out[k] = (values[k + 1] - values[k - 1]) / (2.0 * h);
    }
    out
}

/// Linear interpolation of row-major samples on the uniform grid at
/// parameter `t` (clamped to `[0, 1]`), written into `out`.
pub fn interp_rows(values: &[f64], dim: usize, t: f64, out: &mut [f64]) {
    let len = values.len() / dim;
    let pos = t.clamp(0.0, 1.0) * (len - 1) as f64;
    let lower = (pos.floor() as usize).min(len - 2);
    let frac = pos - lower as f64;
    let a = &values[lower * dim..(lower + 1) * dim];
    let b = &values[(lower + 1) * dim..(lower + 2) * dim];
    for c in 0..dim {
        out[c] = a[c] + frac * (b[c] - a[c]);
    }
}

/// `acos` with its argument clamped into `[-1, 1]`.
pub fn clamped_acos(x: f64) -> f64 {
    x.clamp(-1.0, 1.0).acos()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
