//! Datasets: deterministic synthetic generators, IDX and CSV ingestion,
//! train/validation splitting, and seeded batch iteration.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Immutable feature matrix with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    num_classes: usize,
    pub split: Split,
}

impl Dataset {
    /// Validates finiteness and label range at construction; a dataset can
    /// never hold NaN/Inf features or out-of-range labels.
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        dim: usize,
        num_classes: usize,
        split: Split,
    ) -> Result<Dataset> {
        if labels.is_empty() || dim == 0 {
            return Err(Error::Dataset("dataset must be non-empty".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::Dataset(format!(
                "{} feature values for {} examples of dim {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(bad) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Dataset(format!(
                "non-finite feature at flat index {bad}"
            )));
        }
        if let Some(&bad) = labels.iter().find(|l| **l >= num_classes) {
            return Err(Error::Dataset(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            dim,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Same labels and shape, replaced feature matrix.
    pub fn with_features(&self, features: Vec<f64>) -> Result<Dataset> {
        Dataset::new(
            features,
            self.labels.clone(),
            self.dim,
            self.num_classes,
            self.split,
        )
    }

    /// Subset by example indices.
    pub fn select(&self, indices: &[usize], split: Split) -> Result<Dataset> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(features, labels, self.dim, self.num_classes, split)
    }
}

/// Class centers on the radius-2 circle in the first two coordinates,
/// isotropic Gaussian noise, zero elsewhere.
pub fn gen_blobs(
    n_per_class: usize,
    num_classes: usize,
    dim: usize,
    sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_per_class == 0 || num_classes == 0 || dim == 0 {
        return Err(Error::Dataset(
            "blob counts and dimension must be positive".into(),
        ));
    }
    if sigma < 0.0 {
        return Err(Error::Dataset("sigma must be non-negative".into()));
    }
    let mut rng = Rng::new(seed);
    let n = n_per_class * num_classes;
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for class in 0..num_classes {
        let angle = 2.0 * std::f64::consts::PI * class as f64 / num_classes as f64;
        let mut center = vec![0.0; dim];
        center[0] = 2.0 * angle.cos();
        if dim > 1 {
            center[1] = 2.0 * angle.sin();
        }
        for _ in 0..n_per_class {
            for &c in &center {
                features.push(c + sigma * rng.normal());
            }
            labels.push(class);
        }
    }
    Dataset::new(features, labels, dim, num_classes, Split::Train)
}

/// Interleaved 2-D Archimedean spirals with angular offsets per class.
pub fn gen_spirals(
    n_per_class: usize,
    num_classes: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_per_class == 0 || num_classes == 0 {
        return Err(Error::Dataset("spiral counts must be positive".into()));
    }
    if noise < 0.0 {
        return Err(Error::Dataset("noise must be non-negative".into()));
    }
    let mut rng = Rng::new(seed);
    let n = n_per_class * num_classes;
    let mut features = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for class in 0..num_classes {
        let offset = 2.0 * std::f64::consts::PI * class as f64 / num_classes as f64;
        for k in 0..n_per_class {
            let t = k as f64 / n_per_class as f64;
            let radius = 0.25 + 1.75 * t;
            let angle = offset + 3.0 * std::f64::consts::PI * t;
            features.push(radius * angle.cos() + noise * rng.normal());
            features.push(radius * angle.sin() + noise * rng.normal());
            labels.push(class);
        }
    }
    Dataset::new(features, labels, 2, num_classes, Split::Train)
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], at: usize, path: &str) -> Result<u32> {
    let slice = bytes
        .get(at..at + 4)
        .ok_or_else(|| Error::Dataset(format!("{path}: truncated header at byte {at}")))?;
    Ok(u32::from_be_bytes([slice[0], slice[1], slice[2], slice[3]]))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(bytes)
}

/// Big-endian IDX pair: u8 image tensor (count x rows x cols) scaled to
/// [0, 1] by /255, and a u8 label vector of matching count.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img_name = images_path.display().to_string();
    let img = read_file(images_path)?;
    let magic = read_u32_be(&img, 0, &img_name)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Dataset(format!(
            "{img_name}: wrong magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x} (u8, 3-dim images)"
        )));
    }
    let count = read_u32_be(&img, 4, &img_name)? as usize;
    let rows = read_u32_be(&img, 8, &img_name)? as usize;
    let cols = read_u32_be(&img, 12, &img_name)? as usize;
    let dim = rows * cols;
    let payload = &img[16..];
    if payload.len() != count * dim {
        return Err(Error::Dataset(format!(
            "{img_name}: truncated payload, expected {} bytes, got {}",
            count * dim,
            payload.len()
        )));
    }

    let lab_name = labels_path.display().to_string();
    let lab = read_file(labels_path)?;
    let magic = read_u32_be(&lab, 0, &lab_name)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Dataset(format!(
            "{lab_name}: wrong magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x} (u8, 1-dim labels)"
        )));
    }
    let lab_count = read_u32_be(&lab, 4, &lab_name)? as usize;
    let lab_payload = &lab[8..];
    if lab_payload.len() != lab_count {
        return Err(Error::Dataset(format!(
            "{lab_name}: truncated payload, expected {lab_count} bytes, got {}",
            lab_payload.len()
        )));
    }
    if lab_count != count {
        return Err(Error::Dataset(format!(
            "image/label count mismatch: {count} images vs {lab_count} labels"
        )));
    }

    let features: Vec<f64> = payload.iter().map(|b| *b as f64 / 255.0).collect();
    let labels: Vec<usize> = lab_payload.iter().map(|b| *b as usize).collect();
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(features, labels, dim, num_classes.max(2), Split::Test)
}

/// CSV with a header row; last column is the integer label, the rest are
/// features.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(&name, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Dataset(format!("{name}: empty file")))?;
    let dim = header.split(',').count().saturating_sub(1);
    if dim == 0 {
        return Err(Error::Dataset(format!(
            "{name}: need at least one feature column and one label column"
        )));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(Error::Dataset(format!(
                "{name}:{}: expected {} fields, got {}",
                lineno + 2,
                dim + 1,
                fields.len()
            )));
        }
        for f in &fields[..dim] {
            features.push(f.trim().parse::<f64>().map_err(|e| {
                Error::Dataset(format!("{name}:{}: bad feature `{f}`: {e}", lineno + 2))
            })?);
        }
        labels.push(
            fields[dim]
                .trim()
                .parse::<usize>()
                .map_err(|e| Error::Dataset(format!("{name}:{}: bad label: {e}", lineno + 2)))?,
        );
    }
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(features, labels, dim, num_classes.max(2), Split::Test)
}

/// Deterministic shuffled split into (train, val) by fraction.
pub fn split_train_val(data: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Dataset(format!(
            "val_fraction must be in [0, 1), got {val_fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    Rng::new(seed).shuffle(&mut order);
    let n_val = ((data.len() as f64) * val_fraction).round() as usize;
    let n_val = n_val.min(data.len().saturating_sub(1));
    let (val_idx, train_idx) = order.split_at(n_val);
    Ok((
        data.select(train_idx, Split::Train)?,
        if val_idx.is_empty() {
            // Degenerate but legal: validate on the training data.
            data.select(train_idx, Split::Val)?
        } else {
            data.select(val_idx, Split::Val)?
        },
    ))
}

/// Seeded Fisher-Yates batch order for one epoch; the final short batch is
/// kept.
pub fn batch_iter(data: &Dataset, batch_size: usize, epoch_seed: u64) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    Rng::new(epoch_seed).shuffle(&mut order);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Materialize a batch as (features row-major, labels).
pub fn gather_batch(data: &Dataset, indices: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let mut features = Vec::with_capacity(indices.len() * data.dim());
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        features.extend_from_slice(data.row(i));
        labels.push(data.labels[i]);
    }
    (features, labels)
}
