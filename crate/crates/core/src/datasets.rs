//! Shape corpora: manifest loading, PGM bitmaps, boundary tracing and
//! synthetic shapes with controlled nuisance.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::{preprocess, Curve, DEFAULT_RESOLUTION};
use crate::error::{Error, Result};

/// Default foreground threshold on an 8-bit scale.
pub const DEFAULT_THRESHOLD: u16 = 127;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub label: String,
    pub name: String,
    /// Treat a point CSV as a closed contour. Bitmaps are always closed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeDataset {
    pub curves: Vec<Curve>,
    pub labels: Vec<String>,
    pub names: Vec<String>,
    /// Where the shapes came from (manifest path or generator settings).
    pub source: String,
}

impl ShapeDataset {
    pub fn new(
        curves: Vec<Curve>,
        labels: Vec<String>,
        names: Vec<String>,
        source: String,
    ) -> Result<Self> {
        if curves.len() != labels.len() || curves.len() != names.len() {
            return Err(Error::InvalidParameter(format!(
                "{} curves, {} labels, {} names",
                curves.len(),
                labels.len(),
                names.len()
            )));
        }
        Ok(ShapeDataset {
            curves,
            labels,
            names,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    /// Resamples every curve to `len` points and normalizes its scale.
    pub fn preprocessed(&self, len: usize) -> Result<ShapeDataset> {
        let curves = self
            .curves
            .iter()
            .zip(&self.names)
            .map(|(c, name)| {
                preprocess(c, len).map_err(|e| Error::InvalidCurve(format!("{name}: {e}")))
            })
            .collect::<Result<_>>()?;
        Ok(ShapeDataset {
            curves,
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    pub resolution: usize,
    /// Foreground when `value > threshold·maxval/255`.
    pub threshold: u16,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            resolution: DEFAULT_RESOLUTION,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

fn is_pgm(path: &Path, bytes: &[u8]) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
        || bytes.starts_with(b"P2")
        || bytes.starts_with(b"P5")
}

fn load_entry(path: &Path, entry: &ManifestEntry, opts: &LoadOptions) -> Result<Curve> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let raw = if is_pgm(path, &bytes) {
        trace_contour(&Pgm::parse(&bytes)?.threshold(opts.threshold))?.closed()
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Format(format!("{}: not UTF-8", path.display())))?;
        let curve = Curve::from_csv_str(&text)?;
        if entry.closed == Some(true) {
            curve.closed()
        } else {
            curve
        }
    };
    preprocess(&raw, opts.resolution)
}

/// Loads every manifest entry (paths relative to the manifest), resampled to
/// `opts.resolution` points and scale-normalized.
pub fn load_dataset(manifest_path: impl AsRef<Path>, opts: &LoadOptions) -> Result<ShapeDataset> {
    let manifest_path = manifest_path.as_ref();
    let manifest = Manifest::read(manifest_path)?;
    if manifest.entries.is_empty() {
        return Err(Error::InvalidParameter("manifest lists no entries".into()));
    }
    let base = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let curves = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let path: PathBuf = base.join(&entry.file);
            load_entry(&path, entry, opts).map_err(|e| match e {
                Error::MissingFile(_) | Error::Io { .. } => e,
                other => Error::InvalidCurve(format!("{}: {other}", path.display())),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ShapeDataset::new(
        curves,
        manifest.entries.iter().map(|e| e.label.clone()).collect(),
        manifest.entries.iter().map(|e| e.name.clone()).collect(),
        manifest_path.display().to_string(),
    )
}

/// Grayscale image from a binary (P5) or ASCII (P2) PGM file.
#[derive(Debug, Clone, PartialEq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u16>,
}

impl Pgm {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let bad = |what: &str| Error::Format(format!("PGM: {what}"));
        let mut pos = 0;
        // Header tokens are whitespace separated; '#' starts a comment line.
        let token = |pos: &mut usize| -> Result<String> {
            loop {
                while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                    *pos += 1;
                }
                if *pos < bytes.len() && bytes[*pos] == b'#' {
                    while *pos < bytes.len() && bytes[*pos] != b'\n' {
                        *pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = *pos;
            while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if start == *pos {
                return Err(bad("truncated header"));
            }
            Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
        };
        let magic = token(&mut pos)?;
        let binary = match magic.as_str() {
            "P5" => true,
            "P2" => false,
            _ => return Err(bad("bad magic")),
        };
        let number = |pos: &mut usize, what: &str| -> Result<usize> {
            token(pos)?.parse::<usize>().map_err(|_| bad(what))
        };
        let width = number(&mut pos, "bad width")?;
        let height = number(&mut pos, "bad height")?;
        let maxval = number(&mut pos, "bad maxval")?;
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if maxval == 0 || maxval > u16::MAX as usize {
            return Err(bad("bad maxval"));
        }
        let count = width * height;
        let pixels: Vec<u16> = if binary {
            // Exactly one whitespace byte separates the header from the raster.
            let start = pos + 1;
            let wide = maxval > 255;
            let need = count * if wide { 2 } else { 1 };
            let raster = bytes
                .get(start..start + need)
                .ok_or_else(|| bad("size mismatch"))?;
            if wide {
                raster
                    .chunks_exact(2)
                    .map(|b| u16::from_be_bytes([b[0], b[1]]))
                    .collect()
            } else {
                raster.iter().map(|&b| b as u16).collect()
            }
        } else {
            let mut values = Vec::with_capacity(count);
            for _ in 0..count {
                let v = number(&mut pos, "size mismatch")?;
                values.push(v as u16);
            }
            values
        };
        if pixels.iter().any(|&v| v as usize > maxval) {
            return Err(bad("pixel exceeds maxval"));
        }
        Ok(Pgm {
            width,
            height,
            maxval: maxval as u16,
            pixels,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Pgm::parse(&bytes)
    }

    /// Foreground where the pixel exceeds `threshold` rescaled from 0..255 to
    /// 0..maxval.
    pub fn threshold(&self, threshold: u16) -> BinaryImage {
        let cut = threshold as f64 * self.maxval as f64 / 255.0;
        BinaryImage {
            width: self.width,
            height: self.height,
            data: self.pixels.iter().map(|&v| v as f64 > cut).collect(),
        }
    }
}

/// Row-major foreground mask, row 0 at the top.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl BinaryImage {
    /// Parses rows of `#` (foreground) and any other character.
    pub fn from_rows(rows: &[&str]) -> Result<Self> {
        let width = rows.first().map_or(0, |r| r.chars().count());
        if rows.iter().any(|r| r.chars().count() != width) {
            return Err(Error::Format("size mismatch".into()));
        }
        Ok(BinaryImage {
            width,
            height: rows.len(),
            data: rows
                .iter()
                .flat_map(|r| r.chars().map(|c| c == '#'))
                .collect(),
        })
    }

    pub fn get(&self, row: isize, col: isize) -> bool {
        row >= 0
            && col >= 0
            && (row as usize) < self.height
            && (col as usize) < self.width
            && self.data[row as usize * self.width + col as usize]
    }

    /// 8-connected components as lists of pixel indices, in raster order of
    /// their first pixel.
    fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.data.len()];
        let mut out = Vec::new();
        for start in 0..self.data.len() {
            if !self.data[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![start];
            let mut members = Vec::new();
            while let Some(p) = stack.pop() {
                members.push(p);
                let (r, c) = ((p / self.width) as isize, (p % self.width) as isize);
                for (dr, dc) in NEIGHBORS {
                    let (nr, nc) = (r + dr, c + dc);
                    if self.get(nr, nc) {
                        let q = nr as usize * self.width + nc as usize;
                        if !seen[q] {
                            seen[q] = true;
                            stack.push(q);
                        }
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }
}

/// Moore neighborhood in clockwise order (row axis pointing down), starting
/// west.
const NEIGHBORS: [(isize, isize); 8] = [
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
];

fn direction_of(dr: isize, dc: isize) -> usize {
    NEIGHBORS
        .iter()
        .position(|&d| d == (dr, dc))
        .expect("unit step")
}

/// Boundary of the largest 8-connected foreground component by Moore-neighbor
/// following, stopping when the start pixel is re-entered from its initial
/// backtrack direction. Vertices are pixel centers at `(x = col, y = H−1−row)`,
/// counterclockwise, with no repeated closing vertex.
pub fn trace_contour(img: &BinaryImage) -> Result<Curve> {
    let components = img.components();
    let largest = components
        .iter()
        .fold(None::<&Vec<usize>>, |best, c| match best {
            Some(b) if b.len() >= c.len() => Some(b),
            _ => Some(c),
        })
        .ok_or(Error::EmptyImage)?;
    let mut mask = BinaryImage {
        width: img.width,
        height: img.height,
        data: vec![false; img.data.len()],
    };
    largest.iter().for_each(|&p| mask.data[p] = true);
    let start = largest[0];
    let start = ((start / img.width) as isize, (start % img.width) as isize);

    let mut boundary = vec![start];
    let mut current = start;
    // The west neighbor of the topmost-leftmost pixel is background.
    let mut backtrack = 0usize;
    let start_backtrack = backtrack;
    let limit = 4 * img.data.len() + 8;
    loop {
        let mut next = None;
        for step in 1..=8 {
            let d = (backtrack + step) % 8;
            let (dr, dc) = NEIGHBORS[d];
            if mask.get(current.0 + dr, current.1 + dc) {
                next = Some(d);
                break;
            }
        }
        let Some(d) = next else {
            break; // isolated pixel
        };
        let (dr, dc) = NEIGHBORS[d];
        let prev_dir = (d + 7) % 8;
        let (br, bc) = NEIGHBORS[prev_dir];
        let back_pixel = (current.0 + br, current.1 + bc);
        current = (current.0 + dr, current.1 + dc);
        backtrack = direction_of(back_pixel.0 - current.0, back_pixel.1 - current.1);
        if current == start && backtrack == start_backtrack {
            break;
        }
        boundary.push(current);
        if boundary.len() > limit {
            return Err(Error::Invariant("contour tracing did not terminate".into()));
        }
    }
    if boundary.len() < 3 {
        return Err(Error::DegenerateContour(boundary.len()));
    }
    let h = img.height as isize - 1;
    let mut points: Vec<[f64; 2]> = boundary
        .iter()
        .map(|&(r, c)| [c as f64, (h - r) as f64])
        .collect();
    let area2: f64 = (0..points.len())
        .map(|k| {
            let (a, b) = (points[k], points[(k + 1) % points.len()]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    if area2 < 0.0 {
        points[1..].reverse();
    }
    Curve::from_points(&points)
}

/// Bound on the first warp coefficient; `c_m ~ U(−WARP, WARP) / m`.
pub const WARP: f64 = 0.05;

/// Synthetic template families, in generation order.
pub const TEMPLATES: [&str; 5] = ["ellipse", "rectangle", "star3", "star5", "s_curve"];

fn template_closed(class: usize) -> bool {
    class < 4
}

/// Template `class` evaluated at `s ∈ [0, 1]`.
pub fn template_point(class: usize, s: f64) -> [f64; 2] {
    let a = 2.0 * PI * s;
    match class {
        0 => [a.cos(), 0.5 * a.sin()],
        1 => {
            // 2 × 1 rectangle walked by arc length from (1, 0).
            let u = (s * 6.0 + 0.5).rem_euclid(6.0);
            match u {
                u if u < 1.0 => [1.0, u - 0.5],
                u if u < 3.0 => [2.0 - u, 0.5],
                u if u < 4.0 => [-1.0, 3.5 - u],
                _ => [u - 5.0, -0.5],
            }
        }
        2 | 3 => {
            let lobes = if class == 2 { 3.0 } else { 5.0 };
            let r = 1.0 + 0.4 * (lobes * a).cos();
            [r * a.cos(), r * a.sin()]
        }
        _ => [0.5 * (2.0 * PI * s).sin(), 2.0 * s - 1.0],
    }
}

/// `γ(t) = t + Σ_{m=1..3} c_m sin(π m t)`, with the coefficients shrunk until
/// `γ̇ ≥ 0.05` everywhere.
pub fn smooth_warp(coeffs: [f64; 3]) -> impl Fn(f64) -> f64 {
    let slope = |c: &[f64; 3], t: f64| {
        1.0 + (1..=3)
            .map(|m| c[m - 1] * PI * m as f64 * (PI * m as f64 * t).cos())
            .sum::<f64>()
    };
    let mut c = coeffs;
    while (0..=1000).any(|k| slope(&c, k as f64 / 1000.0) < 0.05) {
        c.iter_mut().for_each(|v| *v *= 0.9);
    }
    move |t: f64| {
        t + (1..=3)
            .map(|m| c[m - 1] * (PI * m as f64 * t).sin())
            .sum::<f64>()
    }
}

fn diameter(points: &[[f64; 2]]) -> f64 {
    let mut best = 0.0_f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
        }
    }
    best
}

/// `per_class` instances of each of the first `n_classes` templates under a
/// random rotation, scale in `[0.5, 2]`, smooth reparameterization and
/// Gaussian jitter of `nuisance × diameter`, sampled at 100 points.
pub fn synth_shapes(
    n_classes: usize,
    per_class: usize,
    nuisance: f64,
    seed: u64,
) -> Result<ShapeDataset> {
    if n_classes == 0 || n_classes > TEMPLATES.len() {
        return Err(Error::InvalidParameter(format!(
            "n_classes must lie in [1, {}], got {n_classes}",
            TEMPLATES.len()
        )));
    }
    if !(nuisance >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "nuisance must be non-negative, got {nuisance}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let len = DEFAULT_RESOLUTION;
    let mut curves = Vec::new();
    let mut labels = Vec::new();
    let mut names = Vec::new();
    for class in 0..n_classes {
        for k in 0..per_class {
            let angle = rng.random_range(0.0..2.0 * PI);
            let scale = rng.random_range(0.5..=2.0);
            let coeffs: [f64; 3] =
                std::array::from_fn(|m| rng.random_range(-WARP..=WARP) / (m + 1) as f64);
            let gamma = smooth_warp(coeffs);
            let (sin, cos) = angle.sin_cos();
            let mut points: Vec<[f64; 2]> = (0..len)
                .map(|i| {
                    let [x, y] = template_point(class, gamma(i as f64 / (len - 1) as f64));
                    [scale * (cos * x - sin * y), scale * (sin * x + cos * y)]
                })
                .collect();
            let sigma = nuisance * diameter(&points);
            for p in points.iter_mut() {
                p[0] += sigma * unit.sample(&mut rng);
                p[1] += sigma * unit.sample(&mut rng);
            }
            if template_closed(class) {
                points[len - 1] = points[0];
            }
            curves.push(Curve::from_points(&points)?);
            labels.push(TEMPLATES[class].to_owned());
            names.push(format!("{}_{k:03}", TEMPLATES[class]));
        }
    }
    ShapeDataset::new(
        curves,
        labels,
        names,
        format!("synthetic(n_classes={n_classes}, per_class={per_class}, nuisance={nuisance}, seed={seed})"),
    )
}
