//! Datasets: IDX image/label files, seeded synthetic tasks, out-of-distribution
//! companions and image rotation.

use std::f64::consts::PI;
use std::path::Path;
use std::str::FromStr;

use edl_autodiff::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{io_error, DataError, EdlError, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Radius of the circle the blob centers sit on.
const BLOB_RADIUS: f64 = 2.0;
/// Minimum distance, in noise standard deviations, between an OoD point and
/// every class center.
pub const OOD_MARGIN_SIGMAS: f64 = 10.0;

/// Labelled samples. `features` has shape `[N, ...sample_shape]`; images are
/// `H × W × C` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    features: Tensor,
    labels: Vec<usize>,
    classes: usize,
    /// Global label of each local class index.
    class_labels: Vec<u32>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, features: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let class_labels = (0..classes as u32).collect();
        Self::with_class_labels(name, features, labels, class_labels)
    }

    pub fn with_class_labels(
        name: impl Into<String>,
        features: Tensor,
        labels: Vec<usize>,
        class_labels: Vec<u32>,
    ) -> Result<Self> {
        let classes = class_labels.len();
        let n = features.shape().first().copied().unwrap_or(0);
        if features.rank() < 2 {
            return Err(DataError::Invalid(format!(
                "features must be [N, ...], got shape {:?}",
                features.shape()
            ))
            .into());
        }
        if n != labels.len() {
            return Err(DataError::CountMismatch { images: n, labels: labels.len() }.into());
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(DataError::Invalid(format!("label {bad} out of range for {classes} classes")).into());
        }
        if !features.is_finite() {
            return Err(DataError::Invalid("non-finite feature value".into()).into());
        }
        Ok(Self { name: name.into(), features, labels, classes, class_labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    pub fn feature_dim(&self) -> usize {
        self.sample_shape().iter().product()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let d = self.feature_dim();
        &self.features.data()[i * d..(i + 1) * d]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn class_labels(&self) -> &[u32] {
        &self.class_labels
    }

    /// Subset by sample index, keeping the class set.
    pub fn select(&self, indices: &[usize]) -> Self {
        let d = self.feature_dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let mut shape = self.features.shape().to_vec();
        shape[0] = indices.len();
        Self {
            name: self.name.clone(),
            features: Tensor::new(shape, data).expect("consistent shape"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            class_labels: self.class_labels.clone(),
        }
    }

    /// Samples `[start, start + n)`, truncated at the end of the set.
    pub fn range(&self, start: usize, n: usize) -> Self {
        let end = (start + n).min(self.len());
        let idx: Vec<usize> = (start.min(end)..end).collect();
        self.select(&idx)
    }

    /// Keep samples whose global label is in `keep`, relabelled to positions
    /// in `keep`.
    pub fn filter_classes(&self, keep: &[u32]) -> Result<Self> {
        let mut local = vec![None; self.classes];
        for (new, g) in keep.iter().enumerate() {
            let old = self
                .class_labels
                .iter()
                .position(|c| c == g)
                .ok_or_else(|| DataError::Invalid(format!("label {g} not in dataset")))?;
            if local[old].is_some() {
                return Err(DataError::Invalid(format!("label {g} listed twice")).into());
            }
            local[old] = Some(new);
        }
        let idx: Vec<usize> = (0..self.len()).filter(|&i| local[self.labels[i]].is_some()).collect();
        let mut out = self.select(&idx);
        out.labels = idx.iter().map(|&i| local[self.labels[i]].unwrap()).collect();
        out.classes = keep.len();
        out.class_labels = keep.to_vec();
        Ok(out)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Truncated { expected: at + 4, actual: bytes.len() }.into())
}

/// Parses an IDX image file into `(count, rows, cols, pixels / 255)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f64>)> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic { expected: IDX_IMAGES_MAGIC, found: magic }.into());
    }
    let n = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let expected = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .and_then(|v| v.checked_add(16))
        .ok_or_else(|| DataError::Invalid("IDX dimensions overflow".into()))?;
    if bytes.len() < expected {
        return Err(DataError::Truncated { expected, actual: bytes.len() }.into());
    }
    let pixels = bytes[16..expected].iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok((n, rows, cols, pixels))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic { expected: IDX_LABELS_MAGIC, found: magic }.into());
    }
    let n = read_u32(bytes, 4)? as usize;
    let expected = n
        .checked_add(8)
        .ok_or_else(|| DataError::Invalid("IDX dimensions overflow".into()))?;
    if bytes.len() < expected {
        return Err(DataError::Truncated { expected, actual: bytes.len() }.into());
    }
    Ok(bytes[8..expected].iter().map(|&b| b as usize).collect())
}

/// Builds a dataset from in-memory IDX images and labels. The class count is
/// one more than the largest label, and at least `min_classes`.
pub fn dataset_from_idx(name: &str, images: &[u8], labels: &[u8], min_classes: usize) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if labels.len() != n {
        return Err(DataError::CountMismatch { images: n, labels: labels.len() }.into());
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(min_classes);
    let features = Tensor::new(vec![n, rows, cols, 1], pixels)?;
    Dataset::new(name, features, labels, classes)
}

/// Loads an IDX image/label pair from disk.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    let ib = std::fs::read(ip).map_err(io_error(ip))?;
    let lb = std::fs::read(lp).map_err(io_error(lp))?;
    let name = ip.file_name().map_or("idx".into(), |s| s.to_string_lossy().into_owned());
    dataset_from_idx(&name, &ib, &lb, 10)
}

/// IDX image bytes for `n` images of `rows × cols` raw pixels.
pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (rows * cols).max(1);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    Blobs,
    Moons,
}

/// Seeded synthetic 2-D classification task.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub generator: Generator,
    pub classes: usize,
    pub per_class: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn blobs(classes: usize, per_class: usize, sigma: f64, seed: u64) -> Self {
        Self { generator: Generator::Blobs, classes, per_class, sigma, seed }
    }

    /// Class centers on a circle of radius 2, the first on the positive x axis.
    pub fn centers(&self) -> Vec<[f64; 2]> {
        (0..self.classes)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / self.classes as f64;
                [BLOB_RADIUS * t.cos(), BLOB_RADIUS * t.sin()]
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.per_class == 0 || !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(EdlError::InvalidArgument(format!("invalid synthetic spec {self:?}")));
        }
        if self.generator == Generator::Moons && self.classes != 2 {
            return Err(EdlError::InvalidArgument("moons has exactly 2 classes".into()));
        }
        Ok(())
    }

    /// Samples interleaved by class: sample `i` has label `i % K`.
    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = self.classes * self.per_class;
        let mut data = Vec::with_capacity(2 * n);
        let mut labels = Vec::with_capacity(n);
        let centers = self.centers();
        for i in 0..n {
            let k = i % self.classes;
            let (x, y) = match self.generator {
                Generator::Blobs => (centers[k][0], centers[k][1]),
                Generator::Moons => {
                    let t = PI * rng.random::<f64>();
                    if k == 0 {
                        (t.cos(), t.sin())
                    } else {
                        (1.0 - t.cos(), 0.5 - t.sin())
                    }
                }
            };
            let nx: f64 = StandardNormal.sample(&mut rng);
            let ny: f64 = StandardNormal.sample(&mut rng);
            data.push(x + self.sigma * nx);
            data.push(y + self.sigma * ny);
            labels.push(k);
        }
        let name = match self.generator {
            Generator::Blobs => "blobs",
            Generator::Moons => "moons",
        };
        Dataset::new(name, Tensor::matrix(n, 2, data)?, labels, self.classes)
    }

    /// `n` blob-task points at least `10σ` from every center: uniform in the
    /// central disk when it is wide enough, else on a ring outside all blobs.
    /// Labels are all 0 and carry no meaning.
    pub fn ood(&self, n: usize, seed: u64) -> Result<Dataset> {
        self.validate()?;
        let margin = OOD_MARGIN_SIGMAS * self.sigma;
        let centers = self.centers();
        let inner = BLOB_RADIUS - margin;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(2 * n);
        while data.len() < 2 * n {
            let t = 2.0 * PI * rng.random::<f64>();
            let r = if inner > 0.0 {
                inner * rng.random::<f64>().sqrt()
            } else {
                BLOB_RADIUS + margin + rng.random::<f64>()
            };
            let (x, y) = (r * t.cos(), r * t.sin());
            if centers.iter().all(|c| ((x - c[0]).powi(2) + (y - c[1]).powi(2)).sqrt() >= margin) {
                data.push(x);
                data.push(y);
            }
        }
        Dataset::new("ood", Tensor::matrix(n, 2, data)?, vec![0; n], self.classes)
    }
}

/// Parses `blobs:K=3,n=200,sigma=0.1` or `moons:n=100,sigma=0.1` (`n` is per
/// class). The seed is supplied separately.
impl FromStr for SyntheticSpec {
    type Err = EdlError;

    fn from_str(s: &str) -> Result<Self> {
        let (gen, rest) = s.split_once(':').unwrap_or((s, ""));
        let generator = match gen {
            "blobs" => Generator::Blobs,
            "moons" => Generator::Moons,
            other => return Err(EdlError::InvalidArgument(format!("unknown generator `{other}`"))),
        };
        let mut spec = Self {
            generator,
            classes: if generator == Generator::Moons { 2 } else { 3 },
            per_class: 200,
            sigma: 0.1,
            seed: 0,
        };
        for kv in rest.split(',').filter(|s| !s.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| EdlError::InvalidArgument(format!("expected key=value, got `{kv}`")))?;
            let bad = || EdlError::InvalidArgument(format!("bad value for `{k}`: `{v}`"));
            match k {
                "K" | "k" => spec.classes = v.parse().map_err(|_| bad())?,
                "n" => spec.per_class = v.parse().map_err(|_| bad())?,
                "sigma" => spec.sigma = v.parse().map_err(|_| bad())?,
                _ => return Err(EdlError::InvalidArgument(format!("unknown key `{k}`"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// `n` images of uniform noise in `[0, 1]` with the given per-sample shape.
pub fn noise_images(n: usize, sample_shape: &[usize], classes: usize, seed: u64) -> Result<Dataset> {
    let d: usize = sample_shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * d).map(|_| rng.random::<f64>()).collect();
    let mut shape = vec![n];
    shape.extend_from_slice(sample_shape);
    Dataset::new("noise", Tensor::new(shape, data)?, vec![0; n], classes)
}

/// Rotates a square `n × n` image counterclockwise by `degrees` about its
/// center `((n−1)/2, (n−1)/2)`. Each output pixel is bilinearly sampled from
/// the inversely rotated source position; outside samples read 0.
pub fn rotate(image: &[f64], rows: usize, cols: usize, degrees: f64) -> Result<Vec<f64>> {
    if rows != cols || image.len() != rows * cols {
        return Err(EdlError::InvalidArgument(format!(
            "rotation needs a square single-channel image, got {rows}×{cols} with {} values",
            image.len()
        )));
    }
    let n = rows;
    if degrees == 0.0 {
        return Ok(image.iter().map(|v| v.clamp(0.0, 1.0)).collect());
    }
    let (s, c) = degrees.to_radians().sin_cos();
    let mid = (n as f64 - 1.0) / 2.0;
    let at = |r: isize, q: isize| -> f64 {
        if r < 0 || q < 0 || r >= n as isize || q >= n as isize {
            0.0
        } else {
            image[r as usize * n + q as usize]
        }
    };
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        for q in 0..n {
            // y axis points up so positive angles turn counterclockwise on screen
            let dx = q as f64 - mid;
            let dy = mid - r as f64;
            let sx = c * dx + s * dy;
            let sy = -s * dx + c * dy;
            let (fr, fc) = (mid - sy, mid + sx);
            let (r0, c0) = (fr.floor(), fc.floor());
            let (wr, wc) = (fr - r0, fc - c0);
            let (r0, c0) = (r0 as isize, c0 as isize);
            let v = (1.0 - wr) * (1.0 - wc) * at(r0, c0)
                + (1.0 - wr) * wc * at(r0, c0 + 1)
                + wr * (1.0 - wc) * at(r0 + 1, c0)
                + wr * wc * at(r0 + 1, c0 + 1);
            out[r * n + q] = v.clamp(0.0, 1.0);
        }
    }
    Ok(out)
}
