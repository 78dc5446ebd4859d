//! Datasets and tasks.
//!
//! * IDX files (big-endian, magic `0x00000803` for images, `0x00000801` for
//!   labels) are parsed by [`load_idx`];
//! * grey-level images are binarized once with a dedicated noise stream and
//!   cached as an IDX file ([`binarize_fixed`]);
//! * [`synth_dataset`] draws noisy copies of random binary prototypes and
//!   knows its own exact log-likelihood;
//! * [`TaskInstance`] describes density estimation or predicting the bottom
//!   half of an example from its top half.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::autodiff::{Tape, Tensor, Var};
use crate::estimators::{self, EstimatorError, ObjectiveConfig};
use crate::math::log_sum_exp;
use crate::model::{Model, Objective, ParameterStore, Topology};
use crate::noise::{streams, RngStream};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Seed of the fixed binarization applied to grey-level MNIST and Omniglot.
pub const BINARIZATION_SEED: u64 = 0x00C0_FFEE;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("IDX: bad magic number {found:#010x} at offset {offset}")]
    BadMagic { offset: usize, found: u32 },
    #[error("IDX: truncated at offset {offset}: need {expected} bytes, have {found}")]
    Truncated { offset: usize, expected: usize, found: usize },
    #[error("{path}: line {line}: {msg}")]
    Text { path: PathBuf, line: usize, msg: String },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("no {what} found in {dir}")]
    Missing { what: &'static str, dir: PathBuf },
    #[error("task expects {expected} dimensions, model or data has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("task {task:?} does not fit a {topology:?} model")]
    TaskMismatch { task: TaskKind, topology: Topology },
}

pub type Result<T> = std::result::Result<T, DataError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------------
// IDX

/// An unsigned-byte IDX array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    /// Number of items along the first dimension.
    pub fn items(&self) -> usize {
        self.dims.first().copied().unwrap_or(0)
    }

    /// Product of all dimensions after the first.
    pub fn item_len(&self) -> usize {
        self.dims.iter().skip(1).product()
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let need = |offset: usize, n: usize| {
        if bytes.len() < offset + n {
            Err(DataError::Truncated {
                offset,
                expected: n,
                found: bytes.len().saturating_sub(offset),
            })
        } else {
            Ok(())
        }
    };
    need(0, 4)?;
    let magic = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
    let ndim = match magic {
        IDX_IMAGES_MAGIC => 3,
        IDX_LABELS_MAGIC => 1,
        found => return Err(DataError::BadMagic { offset: 0, found }),
    };
    need(4, 4 * ndim)?;
    let dims: Vec<usize> = (0..ndim)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    let header = 4 + 4 * ndim;
    let len: usize = dims.iter().product();
    need(header, len)?;
    Ok(IdxArray {
        dims,
        data: bytes[header..header + len].to_vec(),
    })
}

pub fn load_idx(path: &Path) -> Result<IdxArray> {
    parse_idx(&fs::read(path).map_err(io_err(path))?)
}

pub fn encode_idx(array: &IdxArray) -> Vec<u8> {
    let magic = if array.dims.len() == 1 {
        IDX_LABELS_MAGIC
    } else {
        IDX_IMAGES_MAGIC
    };
    let mut out = magic.to_be_bytes().to_vec();
    for d in &array.dims {
        out.extend_from_slice(&(*d as u32).to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    out
}

/// Writes via a temporary file and rename.
pub fn write_idx(path: &Path, array: &IdxArray) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode_idx(array)).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// Binary matrices and datasets

/// Row-major `{0,1}^{rows × cols}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl BinaryMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(DataError::Invalid(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(DataError::Invalid(format!(
                "value {} at row {}, column {} is not binary",
                data[i],
                i / cols.max(1),
                i % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn empty(cols: usize) -> Self {
        Self {
            rows: 0,
            cols,
            data: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Selected rows as an `f64` tensor.
    pub fn gather(&self, idx: &[usize]) -> Tensor {
        let mut out = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            out.extend(self.row(i).iter().map(|&v| v as f64));
        }
        Tensor::new(idx.len(), self.cols, out).expect("sized")
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (acc, &v) in m.iter_mut().zip(self.row(r)) {
                *acc += v as f64;
            }
        }
        m.iter().map(|v| v / self.rows.max(1) as f64).collect()
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Train/valid/test binary matrices with per-pixel base rates computed on
/// the training split only.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: BinaryMatrix,
    pub valid: BinaryMatrix,
    pub test: BinaryMatrix,
    base_rates: Vec<f64>,
}

impl Dataset {
    pub fn new(train: BinaryMatrix, valid: BinaryMatrix, test: BinaryMatrix) -> Result<Self> {
        if train.is_empty() {
            return Err(DataError::Invalid("empty training split".into()));
        }
        for m in [&valid, &test] {
            if m.cols() != train.cols() {
                return Err(DataError::DimensionMismatch {
                    expected: train.cols(),
                    found: m.cols(),
                });
            }
        }
        let base_rates = train.column_means();
        Ok(Self {
            train,
            valid,
            test,
            base_rates,
        })
    }

    pub fn dims(&self) -> usize {
        self.train.cols()
    }

    pub fn base_rates(&self) -> &[f64] {
        &self.base_rates
    }

    pub fn split(&self, s: Split) -> &BinaryMatrix {
        match s {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

// ---------------------------------------------------------------------------
// Binarization

/// Sets each pixel to 1 with probability `intensity / 255`, using stream
/// [`streams::BINARIZE`] of `seed`. With `cache` set, the result is read from
/// there when present and written there otherwise.
pub fn binarize_fixed(raw: &IdxArray, seed: u64, cache: Option<&Path>) -> Result<BinaryMatrix> {
    let (rows, cols) = (raw.items(), raw.item_len());
    if let Some(path) = cache {
        if path.exists() {
            let cached = load_idx(path)?;
            if cached.dims == raw.dims {
                return BinaryMatrix::new(rows, cols, cached.data);
            }
            log::warn!("{}: cached binarization has other dimensions; recomputing", path.display());
        }
    }
    let mut rng = RngStream::new(seed, streams::BINARIZE);
    let data: Vec<u8> = raw
        .data
        .iter()
        .map(|&v| {
            // Always draw, so the stream position does not depend on content.
            let u = rng.uniform();
            (u < v as f64 / 255.0) as u8
        })
        .collect();
    if let Some(path) = cache {
        write_idx(
            path,
            &IdxArray {
                dims: raw.dims.clone(),
                data: data.clone(),
            },
        )?;
    }
    BinaryMatrix::new(rows, cols, data)
}

/// Parses a whitespace-separated 0/1 text matrix (one example per line).
pub fn load_amat(path: &Path) -> Result<BinaryMatrix> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            data.push(match tok {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(DataError::Text {
                        path: path.to_path_buf(),
                        line: line_no + 1,
                        msg: format!("expected 0 or 1, found {other:?}"),
                    })
                }
            });
        }
        let n = data.len() - before;
        match cols {
            None => cols = Some(n),
            Some(c) if c != n => {
                return Err(DataError::Text {
                    path: path.to_path_buf(),
                    line: line_no + 1,
                    msg: format!("{n} values, expected {c}"),
                })
            }
            _ => {}
        }
        rows += 1;
    }
    BinaryMatrix::new(rows, cols.unwrap_or(0), data)
}

/// MNIST with a 50,000/10,000/10,000 split.
///
/// Uses `binarized_mnist_{train,valid,test}.amat` verbatim when present;
/// otherwise binarizes `train-images-idx3-ubyte` (first 50,000 train, last
/// 10,000 valid) and `t10k-images-idx3-ubyte` (test) with
/// [`BINARIZATION_SEED`], caching the result next to the source files.
pub fn load_mnist(dir: &Path) -> Result<Dataset> {
    let amat = |s: &str| dir.join(format!("binarized_mnist_{s}.amat"));
    if ["train", "valid", "test"].iter().all(|s| amat(s).exists()) {
        return Dataset::new(load_amat(&amat("train"))?, load_amat(&amat("valid"))?, load_amat(&amat("test"))?);
    }
    let train_path = dir.join("train-images-idx3-ubyte");
    let test_path = dir.join("t10k-images-idx3-ubyte");
    if !train_path.exists() || !test_path.exists() {
        return Err(DataError::Missing {
            what: "MNIST (binarized_mnist_*.amat or *-images-idx3-ubyte)",
            dir: dir.to_path_buf(),
        });
    }
    let train_raw = load_idx(&train_path)?;
    let test_raw = load_idx(&test_path)?;
    let all = binarize_fixed(&train_raw, BINARIZATION_SEED, Some(&dir.join("train-binarized.idx")))?;
    let test = binarize_fixed(&test_raw, BINARIZATION_SEED, Some(&dir.join("t10k-binarized.idx")))?;
    let n = all.rows();
    let cut = n.saturating_sub(10_000);
    Dataset::new(all.slice_rows(0, cut), all.slice_rows(cut, n), test)
}

/// Omniglot from pre-converted grey-level IDX files
/// `omniglot-train-images-idx3-ubyte` and `omniglot-test-images-idx3-ubyte`
/// (24,345 / 8,070 images), binarized with [`BINARIZATION_SEED`]. The
/// validation split is empty.
pub fn load_omniglot(dir: &Path) -> Result<Dataset> {
    let train_path = dir.join("omniglot-train-images-idx3-ubyte");
    let test_path = dir.join("omniglot-test-images-idx3-ubyte");
    if !train_path.exists() || !test_path.exists() {
        return Err(DataError::Missing {
            what: "Omniglot (omniglot-{train,test}-images-idx3-ubyte)",
            dir: dir.to_path_buf(),
        });
    }
    let train = binarize_fixed(
        &load_idx(&train_path)?,
        BINARIZATION_SEED,
        Some(&dir.join("omniglot-train-binarized.idx")),
    )?;
    let test = binarize_fixed(
        &load_idx(&test_path)?,
        BINARIZATION_SEED,
        Some(&dir.join("omniglot-test-binarized.idx")),
    )?;
    let cols = train.cols();
    Dataset::new(train, BinaryMatrix::empty(cols), test)
}

// ---------------------------------------------------------------------------
// Synthetic data

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub prototypes: usize,
    pub dims: usize,
    pub flip_prob: f64,
    pub sizes: [usize; 3],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            prototypes: 4,
            dims: 16,
            flip_prob: 0.05,
            sizes: [2000, 500, 500],
        }
    }
}

impl SynthConfig {
    /// Default data for the structured task: 32 prototypes, so the
    /// context half identifies far more patterns than a few binary latents
    /// can carry.
    pub fn structured() -> Self {
        Self {
            prototypes: 32,
            ..Self::default()
        }
    }
}

/// The mixture that generated a synthetic dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthGenerator {
    prototypes: Vec<Vec<u8>>,
    flip_prob: f64,
}

impl SynthGenerator {
    pub fn prototypes(&self) -> &[Vec<u8>] {
        &self.prototypes
    }

    pub fn flip_prob(&self) -> f64 {
        self.flip_prob
    }

    /// `log (1/K) Σ_k Π_d p^[x_d ≠ c_kd] (1-p)^[x_d = c_kd]`.
    pub fn log_prob(&self, x: &[u8]) -> f64 {
        let (lf, lk) = (self.flip_prob.ln(), (-self.flip_prob).ln_1p());
        let terms: Vec<f64> = self
            .prototypes
            .iter()
            .map(|c| {
                let diff = c.iter().zip(x).filter(|(a, b)| a != b).count() as f64;
                diff * lf + (x.len() as f64 - diff) * lk
            })
            .collect();
        log_sum_exp(&terms) - (self.prototypes.len() as f64).ln()
    }

    /// Mean negative log-likelihood per example.
    pub fn mean_nll(&self, m: &BinaryMatrix) -> f64 {
        -(0..m.rows()).map(|i| self.log_prob(m.row(i))).sum::<f64>() / m.rows() as f64
    }
}

/// Draws `K` uniform random prototypes, then each example as a uniformly
/// chosen prototype with every bit flipped independently with
/// `flip_prob`. Train, valid and test rows are drawn in that order from
/// stream [`streams::SYNTH`].
pub fn synth_dataset(cfg: &SynthConfig, seed: u64) -> Result<(Dataset, SynthGenerator)> {
    if cfg.prototypes == 0 || cfg.dims == 0 {
        return Err(DataError::Invalid("need at least one prototype and one dimension".into()));
    }
    if !(0.0..0.5).contains(&cfg.flip_prob) {
        return Err(DataError::Invalid(format!("flip probability {} outside [0, 0.5)", cfg.flip_prob)));
    }
    let mut rng = RngStream::new(seed, streams::SYNTH);
    let prototypes: Vec<Vec<u8>> = (0..cfg.prototypes)
        .map(|_| (0..cfg.dims).map(|_| rng.bernoulli(0.5) as u8).collect())
        .collect();
    let mut draw = |n: usize| {
        let mut data = Vec::with_capacity(n * cfg.dims);
        for _ in 0..n {
            let k = rng.below(cfg.prototypes);
            for &bit in &prototypes[k] {
                let flip = rng.bernoulli(cfg.flip_prob);
                data.push(bit ^ flip as u8);
            }
        }
        BinaryMatrix::new(n, cfg.dims, data)
    };
    let train = draw(cfg.sizes[0])?;
    let valid = draw(cfg.sizes[1])?;
    let test = draw(cfg.sizes[2])?;
    Ok((
        Dataset::new(train, valid, test)?,
        SynthGenerator {
            prototypes,
            flip_prob: cfg.flip_prob,
        },
    ))
}

// ---------------------------------------------------------------------------
// Tasks

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Density,
    Structured,
}

impl std::str::FromStr for TaskKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "density" => Ok(Self::Density),
            "structured" => Ok(Self::Structured),
            other => Err(format!("unknown task {other:?} (expected density or structured)")),
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Density => "density",
            Self::Structured => "structured",
        })
    }
}

/// A task over `dims`-dimensional examples. The structured task predicts
/// the second half of each example (the bottom rows of an image) from the
/// first half.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaskInstance {
    pub kind: TaskKind,
    pub dims: usize,
}

impl TaskInstance {
    pub fn new(kind: TaskKind, dims: usize) -> Result<Self> {
        if kind == TaskKind::Structured && !dims.is_multiple_of(2) {
            return Err(DataError::Invalid(format!("structured task needs an even dimension, got {dims}")));
        }
        Ok(Self { kind, dims })
    }

    /// Columns of the conditioning input.
    pub fn context_dims(&self) -> usize {
        match self.kind {
            TaskKind::Density => self.dims,
            TaskKind::Structured => self.dims / 2,
        }
    }

    pub fn target_dims(&self) -> usize {
        self.context_dims()
    }

    /// `(context, target)` for one example.
    pub fn split<'a>(&self, x: &'a [u8]) -> (&'a [u8], &'a [u8]) {
        match self.kind {
            TaskKind::Density => (x, x),
            TaskKind::Structured => x.split_at(self.dims / 2),
        }
    }

    /// `(input, target)` tensors for a batch of rows.
    pub fn batch(&self, m: &BinaryMatrix, rows: &[usize]) -> (Tensor, Tensor) {
        match self.kind {
            TaskKind::Density => {
                let t = m.gather(rows);
                (t.clone(), t)
            }
            TaskKind::Structured => {
                let h = self.dims / 2;
                let (mut a, mut b) = (Vec::new(), Vec::new());
                for &r in rows {
                    let (c, t) = self.split(m.row(r));
                    a.extend(c.iter().map(|&v| v as f64));
                    b.extend(t.iter().map(|&v| v as f64));
                }
                (
                    Tensor::new(rows.len(), h, a).expect("sized"),
                    Tensor::new(rows.len(), h, b).expect("sized"),
                )
            }
        }
    }

    /// Base rates of the scored target columns.
    pub fn target_base_rates(&self, data: &Dataset) -> Vec<f64> {
        match self.kind {
            TaskKind::Density => data.base_rates().to_vec(),
            TaskKind::Structured => data.base_rates()[self.dims / 2..].to_vec(),
        }
    }

    /// Checks that `model` fits this task.
    pub fn check_model(&self, model: &Model) -> Result<()> {
        let topology = model.topology();
        let want = match self.kind {
            TaskKind::Density => Topology::Density,
            TaskKind::Structured => Topology::Structured,
        };
        if topology != want {
            return Err(DataError::TaskMismatch {
                task: self.kind,
                topology,
            });
        }
        let spec = model.spec();
        for (expected, found) in [
            (self.context_dims(), spec.input_units()),
            (self.target_dims(), spec.output_units()),
        ] {
            if expected != found {
                return Err(DataError::DimensionMismatch { expected, found });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TaskError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// The training objective of `task` on a batch of rows: the `m`-sample
/// relaxed bound for density estimation, and for structured prediction
/// `log (1/m) Σ_i p(x_1 | Z_i)` with `Z_i` drawn from the chain conditioned
/// on `x_2` (no KL term).
#[allow(clippy::too_many_arguments)]
pub fn task_objective<'t>(
    tape: &'t Tape,
    vars: &BTreeMap<String, Var<'t>>,
    task: &TaskInstance,
    model: &Model,
    params: &ParameterStore,
    data: &BinaryMatrix,
    rows: &[usize],
    cfg: &ObjectiveConfig,
    rng: &mut RngStream,
) -> std::result::Result<Objective<'t>, TaskError> {
    task.check_model(model)?;
    if data.cols() != task.dims {
        return Err(DataError::DimensionMismatch {
            expected: task.dims,
            found: data.cols(),
        }
        .into());
    }
    let (input, target) = task.batch(data, rows);
    let (obj, _) = estimators::relaxed_objective(tape, vars, model, params, &input, &target, cfg, rng)?;
    Ok(obj)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vec<u8> {
        let mut b = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
        for d in [4u32, 2, 2] {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b.extend((0..16).map(|i| (i * 17) as u8));
        b
    }

    #[test]
    fn idx_round_trip_and_errors() {
        let a = parse_idx(&fixture()).unwrap();
        assert_eq!(a.dims, vec![4, 2, 2]);
        assert_eq!(a.data[15], 255);
        assert_eq!(encode_idx(&a), fixture());
        let mut bad = fixture();
        bad[3] = 0x02;
        assert!(matches!(parse_idx(&bad), Err(DataError::BadMagic { offset: 0, found: 0x802 })));
        let short = &fixture()[..20];
        assert!(matches!(parse_idx(short), Err(DataError::Truncated { offset: 16, .. })));
        assert!(matches!(parse_idx(&[0, 0]), Err(DataError::Truncated { offset: 0, .. })));
    }

    #[test]
    fn binarization_extremes_and_determinism() {
        let raw = IdxArray {
            dims: vec![2, 2, 2],
            data: vec![0, 255, 0, 255, 0, 255, 128, 128],
        };
        let a = binarize_fixed(&raw, 3, None).unwrap();
        assert_eq!(&a.data()[..6], &[0, 1, 0, 1, 0, 1]);
        assert_eq!(a, binarize_fixed(&raw, 3, None).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let c = dir.path().join("cache.idx");
        let b = binarize_fixed(&raw, 3, Some(&c)).unwrap();
        let bytes = fs::read(&c).unwrap();
        fs::remove_file(&c).unwrap();
        binarize_fixed(&raw, 3, Some(&c)).unwrap();
        assert_eq!(bytes, fs::read(&c).unwrap());
        assert_eq!(a, b);
        assert_eq!(binarize_fixed(&raw, 3, Some(&c)).unwrap(), a);
    }

    #[test]
    fn binarized_mean_tracks_intensity() {
        let raw = IdxArray {
            dims: vec![1000, 10, 10],
            data: (0..100_000).map(|i| (i % 256) as u8).collect(),
        };
        let b = binarize_fixed(&raw, 1, None).unwrap();
        let mean_b = b.data().iter().map(|&v| v as f64).sum::<f64>() / 1e5;
        let ps: Vec<f64> = raw.data.iter().map(|&v| v as f64 / 255.0).collect();
        let mean_p = ps.iter().sum::<f64>() / 1e5;
        let se = (ps.iter().map(|p| p * (1.0 - p)).sum::<f64>()).sqrt() / 1e5;
        assert!((mean_b - mean_p).abs() < 3.0 * se);
    }

    #[test]
    fn synth_without_flips_reproduces_prototypes() {
        let cfg = SynthConfig {
            flip_prob: 0.0,
            sizes: [50, 10, 10],
            ..Default::default()
        };
        let (d, g) = synth_dataset(&cfg, 2).unwrap();
        for r in 0..d.train.rows() {
            assert!(g.prototypes().iter().any(|p| p.as_slice() == d.train.row(r)));
        }
    }

    #[test]
    fn structured_preset_has_distinct_contexts() {
        let (_, g) = synth_dataset(&SynthConfig::structured(), 1).unwrap();
        let mut ctx: Vec<&[u8]> = g.prototypes().iter().map(|p| &p[..8]).collect();
        ctx.sort();
        ctx.dedup();
        assert!(ctx.len() > 16, "{}", ctx.len());
    }

    #[test]
    fn single_prototype_likelihood_is_closed_form() {
        let cfg = SynthConfig {
            prototypes: 1,
            dims: 16,
            flip_prob: 0.1,
            sizes: [20, 1, 1],
        };
        let (d, g) = synth_dataset(&cfg, 9).unwrap();
        for r in 0..d.train.rows() {
            let x = d.train.row(r);
            let want: f64 = x
                .iter()
                .zip(&g.prototypes()[0])
                .map(|(a, b)| if a == b { 0.9f64.ln() } else { 0.1f64.ln() })
                .sum();
            assert!((g.log_prob(x) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn prototype_frequencies_are_uniform() {
        let cfg = SynthConfig {
            flip_prob: 0.0,
            sizes: [20_000, 1, 1],
            dims: 32,
            ..Default::default()
        };
        let (d, g) = synth_dataset(&cfg, 5).unwrap();
        let mut counts = vec![0usize; 4];
        for r in 0..d.train.rows() {
            let k = g.prototypes().iter().position(|p| p.as_slice() == d.train.row(r)).unwrap();
            counts[k] += 1;
        }
        let n = 20_000f64;
        let se = (0.25 * 0.75 / n).sqrt();
        for c in counts {
            assert!((c as f64 / n - 0.25).abs() < 3.0 * se, "{c}");
        }
    }

    #[test]
    fn base_rates_come_from_train_only() {
        let train = BinaryMatrix::new(2, 2, vec![1, 0, 1, 1]).unwrap();
        let other = BinaryMatrix::new(1, 2, vec![0, 0]).unwrap();
        let d = Dataset::new(train, other.clone(), other).unwrap();
        assert_eq!(d.base_rates(), &[1.0, 0.5]);
        assert!(BinaryMatrix::new(1, 2, vec![0, 2]).is_err());
    }

    #[test]
    fn structured_split_reassembles() {
        let t = TaskInstance::new(TaskKind::Structured, 6).unwrap();
        let x = [1, 0, 1, 1, 0, 0];
        let (c, y) = t.split(&x);
        assert_eq!([c, y].concat(), x);
        assert!(TaskInstance::new(TaskKind::Structured, 5).is_err());
    }

    #[test]
    fn amat_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.amat");
        fs::write(&p, "0 1 1\n1 0 0\n").unwrap();
        let m = load_amat(&p).unwrap();
        assert_eq!((m.rows(), m.cols()), (2, 3));
        fs::write(&p, "0 1 1\n1 0\n").unwrap();
        assert!(matches!(load_amat(&p), Err(DataError::Text { line: 2, .. })));
    }
}
