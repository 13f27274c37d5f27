//! Pairwise distance matrices: parallel computation, the `.eldm` file
//! format, and empirical checks of the metric axioms.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::{to_srvf, Curve};
use crate::elastic::{
    amplitude_distance, fisher_rao_pdf_distance, phase_distance, speed_density, ElasticOptions,
    Warping,
};
use crate::error::{Error, Result};

pub const MAGIC: &[u8] = b"ELDM1\n";

/// Tolerance on `|d(i,j) − d(j,i)|` accepted when loading a matrix.
pub const LOAD_SYMMETRY_TOL: f64 = 1e-6;

/// Above this many triples the triangle check samples instead of enumerating.
const FULL_TRIANGLE_LIMIT: usize = 10_000_000;
const SAMPLED_TRIPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricTag {
    ElasticAmplitude,
    Euclidean,
    Phase,
    FisherRao,
}

impl MetricTag {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricTag::ElasticAmplitude => "elastic_amplitude",
            MetricTag::Euclidean => "euclidean",
            MetricTag::Phase => "phase",
            MetricTag::FisherRao => "fisher_rao",
        }
    }
}

impl fmt::Display for MetricTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "elastic" | "elastic_amplitude" => Ok(MetricTag::ElasticAmplitude),
            "euclidean" => Ok(MetricTag::Euclidean),
            "phase" => Ok(MetricTag::Phase),
            "fisher_rao" => Ok(MetricTag::FisherRao),
            other => Err(Error::InvalidParameter(format!("unknown metric '{other}'"))),
        }
    }
}

/// Symmetric `N × N` matrix of non-negative distances with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    size: usize,
    values: Vec<f64>,
    metric: MetricTag,
    labels: Option<Vec<String>>,
}

impl DistanceMatrix {
    /// Validates the matrix invariants with the load-time tolerance.
    pub fn new(
        size: usize,
        values: Vec<f64>,
        metric: MetricTag,
        labels: Option<Vec<String>>,
    ) -> Result<Self> {
        if values.len() != size * size {
            return Err(Error::Format("size mismatch".into()));
        }
        if let Some(l) = &labels {
            if l.len() != size {
                return Err(Error::Format(format!(
                    "label count mismatch: {} labels for {size} rows",
                    l.len()
                )));
            }
        }
        for i in 0..size {
            for j in 0..size {
                let v = values[i * size + j];
                if !v.is_finite() {
                    return Err(Error::Format(format!("non-finite entry at ({i}, {j})")));
                }
                if v < 0.0 {
                    return Err(Error::Format(format!("negative entry at ({i}, {j})")));
                }
                if i == j && v > LOAD_SYMMETRY_TOL {
                    return Err(Error::Format(format!("nonzero diagonal at {i}")));
                }
                if j > i && (v - values[j * size + i]).abs() > LOAD_SYMMETRY_TOL {
                    return Err(Error::Format(format!("asymmetric entry at ({i}, {j})")));
                }
            }
        }
        Ok(DistanceMatrix {
            size,
            values,
            metric,
            labels,
        })
    }

    /// Builds a matrix from the strict upper triangle of `f(i, j)`.
    pub fn from_fn(
        size: usize,
        metric: MetricTag,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = vec![0.0; size * size];
        for i in 0..size {
            for j in i + 1..size {
                let v = f(i, j);
                values[i * size + j] = v;
                values[j * size + i] = v;
            }
        }
        DistanceMatrix::new(size, values, metric, None)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.size..(i + 1) * self.size]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn metric(&self) -> MetricTag {
        self.metric
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.size {
            return Err(Error::Format(format!(
                "label count mismatch: {} labels for {} rows",
                labels.len(),
                self.size
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Row-major CSV with shortest round-trip decimals, no header.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for i in 0..self.size {
            for (j, v) in self.row(i).iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                write!(out, "{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.values.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(format!("{}\n{}\n", self.size, self.metric).as_bytes());
        let labels = serde_json::to_string(&self.labels).expect("labels serialize");
        out.extend_from_slice(labels.as_bytes());
        out.push(b'\n');
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let rest = bytes
            .strip_prefix(MAGIC)
            .ok_or_else(|| Error::Format("bad magic".into()))?;
        let mut cursor = rest;
        let mut header = Vec::with_capacity(3);
        for _ in 0..3 {
            let end = cursor
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::Format("size mismatch".into()))?;
            let line = std::str::from_utf8(&cursor[..end])
                .map_err(|_| Error::Format("header is not UTF-8".into()))?;
            header.push(line.to_owned());
            cursor = &cursor[end + 1..];
        }
        let size: usize = header[0]
            .parse()
            .map_err(|_| Error::Format(format!("bad size '{}'", header[0])))?;
        let metric: MetricTag = header[1].parse()?;
        let labels: Option<Vec<String>> = serde_json::from_str(&header[2])
            .map_err(|e| Error::Format(format!("bad label line: {e}")))?;
        let expected = size
            .checked_mul(size)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Format("size mismatch".into()))?;
        if cursor.len() != expected {
            return Err(Error::Format("size mismatch".into()));
        }
        let values = cursor
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        DistanceMatrix::new(size, values, metric, labels)
    }
}

pub fn save_matrix(m: &DistanceMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, m.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<DistanceMatrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    DistanceMatrix::from_bytes(&bytes)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatrixOptions {
    pub elastic: ElasticOptions,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

fn flat_euclidean(f: &Curve, g: &Curve) -> Result<f64> {
    if f.dim() != g.dim() || f.len() != g.len() {
        return Err(Error::GridMismatch {
            left: f.as_flat().len(),
            right: g.as_flat().len(),
        });
    }
    Ok(f.as_flat()
        .iter()
        .zip(g.as_flat())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// One entry of the matrix under `metric`.
pub fn pair_distance(
    metric: MetricTag,
    f: &Curve,
    g: &Curve,
    opts: &ElasticOptions,
) -> Result<f64> {
    match metric {
        MetricTag::ElasticAmplitude => Ok(amplitude_distance(f, g, opts)?.distance),
        MetricTag::Phase => {
            let aligned = amplitude_distance(f, g, opts)?;
            phase_distance(&Warping::identity(f.len()), &aligned.warping)
        }
        MetricTag::Euclidean => flat_euclidean(f, g),
        MetricTag::FisherRao => {
            if f.len() != g.len() {
                return Err(Error::GridMismatch {
                    left: f.len(),
                    right: g.len(),
                });
            }
            fisher_rao_pdf_distance(&speed_density(&to_srvf(f))?, &speed_density(&to_srvf(g))?)
        }
    }
}

/// All pairwise distances among `curves`. Only the upper triangle is
/// evaluated; every entry is computed independently, so the result does not
/// depend on the number of worker threads.
pub fn compute_matrix(
    curves: &[Curve],
    metric: MetricTag,
    opts: &MatrixOptions,
) -> Result<DistanceMatrix> {
    let n = curves.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 curves, got {n}"
        )));
    }
    let dim = curves[0].dim();
    if let Some(c) = curves.iter().find(|c| c.dim() != dim) {
        return Err(Error::DimensionMismatch {
            left: dim,
            right: c.dim(),
        });
    }
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let run = || -> Vec<Result<f64>> {
        pairs
            .par_iter()
            .map(|&(i, j)| pair_distance(metric, &curves[i], &curves[j], &opts.elastic))
            .collect()
    };
    let results = match opts.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    let mut values = vec![0.0; n * n];
    for (&(i, j), r) in pairs.iter().zip(results) {
        let v = r.map_err(|e| Error::Pair {
            i,
            j,
            source: Box::new(e),
        })?;
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Pair {
                i,
                j,
                source: Box::new(Error::Invariant(format!("distance {v}"))),
            });
        }
        values[i * n + j] = v;
        values[j * n + i] = v;
    }
    DistanceMatrix::new(n, values, metric, None)
}

/// Empirical check of the metric axioms on a materialized matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub max_asymmetry: f64,
    pub max_abs_diagonal: f64,
    pub min_off_diagonal: f64,
    /// Triples `(i, j, k)` with `i < k`, `j ∉ {i, k}` and
    /// `d(i,k) > d(i,j) + d(j,k) + slack`.
    pub triangle_violations: usize,
    pub triples_checked: usize,
    pub sampled: bool,
    pub slack: f64,
}

pub fn validate_metric_axioms(m: &DistanceMatrix, slack: f64) -> AxiomReport {
    let n = m.size();
    let mut max_asymmetry = 0.0_f64;
    let mut max_abs_diagonal = 0.0_f64;
    let mut min_off_diagonal = f64::INFINITY;
    for i in 0..n {
        max_abs_diagonal = max_abs_diagonal.max(m.get(i, i).abs());
        for j in 0..n {
            if i != j {
                max_asymmetry = max_asymmetry.max((m.get(i, j) - m.get(j, i)).abs());
                min_off_diagonal = min_off_diagonal.min(m.get(i, j));
            }
        }
    }
    let violates = |i: usize, j: usize, k: usize| m.get(i, k) > m.get(i, j) + m.get(j, k) + slack;
    let total = if n >= 3 { n * (n - 1) / 2 * (n - 2) } else { 0 };
    let sampled = n.saturating_mul(n).saturating_mul(n) > FULL_TRIANGLE_LIMIT;
    let (mut violations, mut checked) = (0, 0);
    if sampled {
        let mut rng = ChaCha8Rng::seed_from_u64(0x7472_6961_6e67_6c65);
        while checked < SAMPLED_TRIPLES {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            let k = rng.random_range(0..n);
            if i == j || j == k || i == k {
                continue;
            }
            let (i, k) = if i < k { (i, k) } else { (k, i) };
            checked += 1;
            violations += violates(i, j, k) as usize;
        }
    } else {
        for i in 0..n {
            for k in i + 1..n {
                for j in (0..n).filter(|&j| j != i && j != k) {
                    checked += 1;
                    violations += violates(i, j, k) as usize;
                }
            }
        }
        debug_assert_eq!(checked, total);
    }
    AxiomReport {
        max_asymmetry,
        max_abs_diagonal,
        min_off_diagonal: if n > 1 { min_off_diagonal } else { 0.0 },
        triangle_violations: violations,
        triples_checked: checked,
        sampled,
        slack,
    }
}
