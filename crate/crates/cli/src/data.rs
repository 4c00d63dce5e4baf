//! IDX ingestion, dataset splits and the stratified labeled subset.

use std::path::{Path, PathBuf};

use hali::{Config, Dataset, Shape3};
use hali_tensor::{SeededRng, Tensor};

use crate::error::{CliError, IdxError, Result};

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
pub const DATA_DIR_ENV: &str = "HALI_DATA_DIR";

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Header of an IDX file: magic and dimensions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxHeader {
    pub magic: u32,
    pub dims: Vec<usize>,
}

fn be_u32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(b[at..at + 4].try_into().unwrap())
}

/// Parse an unsigned-byte IDX buffer with the given magic. Returns the header
/// and the payload bytes.
pub fn parse_idx<'a>(bytes: &'a [u8], expected_magic: u32, path: &Path) -> std::result::Result<(IdxHeader, &'a [u8]), IdxError> {
    let truncated = |expected| IdxError::Truncated { path: path.to_path_buf(), expected, got: bytes.len() };
    if bytes.len() < 4 {
        return Err(truncated(4));
    }
    let magic = be_u32(bytes, 0);
    if magic != expected_magic {
        return Err(IdxError::Magic { path: path.to_path_buf(), found: magic, expected: expected_magic });
    }
    // The low byte of the magic is the number of dimensions.
    let rank = (magic & 0xff) as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(truncated(header));
    }
    let dims: Vec<usize> = (0..rank).map(|i| be_u32(bytes, 4 + 4 * i) as usize).collect();
    let total = header + dims.iter().product::<usize>();
    if bytes.len() < total {
        return Err(truncated(total));
    }
    Ok((IdxHeader { magic, dims }, &bytes[header..total]))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

/// Load an image file and its label file. Pixels are mapped from `[0, 255]`
/// to `[-1, 1]`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let ib = read(ip)?;
    let lb = read(lp)?;
    let (ih, pixels) = parse_idx(&ib, IMAGE_MAGIC, ip)?;
    let (lh, labels) = parse_idx(&lb, LABEL_MAGIC, lp)?;
    let (n, h, w) = (ih.dims[0], ih.dims[1], ih.dims[2]);
    if lh.dims[0] != n {
        return Err(IdxError::CountMismatch { images: n, labels: lh.dims[0] }.into());
    }
    if let Some(i) = labels.iter().position(|&l| l > 9) {
        return Err(IdxError::Label { path: lp.to_path_buf(), index: i, label: labels[i] }.into());
    }
    let data = pixels.iter().map(|&p| p as f32 / 127.5 - 1.0).collect();
    let images = Tensor::new(vec![n, 1, h, w], data).map_err(hali::HaliError::from)?;
    Ok(Dataset::new(images, labels.iter().map(|&l| l as usize).collect())?)
}

/// Train, validation and test splits plus the labeled subset of `train`.
///
/// `train` and `val` are disjoint ranges of the training file; `test` is the
/// separate test file.
#[derive(Clone, Debug)]
pub struct DatasetHandle {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// Indices into `train`.
    pub labeled: Vec<usize>,
}

/// Stratified sample of exactly `per_class` indices of every class present in
/// `labels`, drawn without replacement and returned in ascending order.
pub fn semisup_split(data: &Dataset, per_class: usize, seed: u64) -> Result<Vec<usize>> {
    let classes = data.labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = SeededRng::new(seed);
    let mut out = Vec::with_capacity(per_class * classes);
    for c in 0..classes {
        let mut pool: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == c).collect();
        if pool.len() < per_class {
            return Err(hali::HaliError::Data(format!("class {c} has {} examples, {per_class} requested", pool.len())).into());
        }
        // Partial Fisher-Yates: the first `per_class` slots become the sample.
        for k in 0..per_class {
            let j = k + rng.below(pool.len() - k);
            pool.swap(k, j);
        }
        out.extend_from_slice(&pool[..per_class]);
    }
    out.sort_unstable();
    Ok(out)
}

/// Dataset root: the explicit directory, else `$HALI_DATA_DIR`, else `data/mnist`.
pub fn data_dir(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data/mnist"))
}

/// Eight Gaussian blobs on a ring of radius 0.7 in the plane, std 0.05,
/// labeled by blob parity. Used for two-dimensional configs.
pub fn ring_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = SeededRng::new(seed);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.below(8);
        let a = k as f64 * std::f64::consts::TAU / 8.0;
        let noise: Vec<f32> = rng.normal_vec(2, 0.05);
        data.push((0.7 * a.cos()) as f32 + noise[0]);
        data.push((0.7 * a.sin()) as f32 + noise[1]);
        labels.push(k % 2);
    }
    Dataset::new(Tensor::new(vec![n, 2, 1, 1], data).expect("shape"), labels).expect("counts")
}

/// Build the splits a config asks for. MNIST-shaped configs read IDX files
/// from `dir`; two-dimensional configs use [`ring_dataset`].
pub fn load_for_config(config: &Config, dir: &Path) -> Result<DatasetHandle> {
    let t = &config.train;
    let shape = config.model.data;
    let (train, val, test) = if shape == Shape3::new(1, 28, 28) {
        let full = load_idx(dir.join(TRAIN_IMAGES), dir.join(TRAIN_LABELS))?;
        if t.train_images + t.eval_images > full.len() {
            return Err(CliError::Usage(format!(
                "train.train_images + train.eval_images = {} exceeds the {} training images",
                t.train_images + t.eval_images,
                full.len()
            )));
        }
        let test = load_idx(dir.join(TEST_IMAGES), dir.join(TEST_LABELS))?;
        (full.head(t.train_images), full.range(t.train_images, t.eval_images), test)
    } else if shape == Shape3::new(2, 1, 1) {
        let seed = t.seed ^ 0x7269_6e67;
        (ring_dataset(t.train_images, seed), ring_dataset(t.eval_images, seed + 1), ring_dataset(t.eval_images, seed + 2))
    } else {
        return Err(CliError::Usage(format!("no dataset is available for data shape {shape}")));
    };
    let labeled = if t.labels_per_class > 0 { semisup_split(&train, t.labels_per_class, t.seed)? } else { Vec::new() };
    Ok(DatasetHandle { train, val, test, labeled })
}
