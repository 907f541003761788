//! Loading of weight and representation tensors and of experiment manifests.
//!
//! Three containers are understood, detected from their leading bytes:
//!
//! - safetensors (dense `F16`, `BF16`, `F32` and `F64` tensors of rank 2),
//! - NPY version 1.0 (and 2.0) holding a single 2-D float array,
//! - a raw format with a 16-byte header: `b"UGT1"`, one dtype byte
//!   (`0` = f32, `1` = f64), three reserved zero bytes, then rows and cols as
//!   little-endian `u32`, followed by the row-major little-endian payload.
//!
//! Every tensor is widened to `f64` on load and rejected if any entry is not
//! finite.

mod formats;
mod manifest;
pub mod write;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

pub use formats::{detect_format, TensorFormat};
pub use manifest::{
    load_manifest, scaled_loss, CheckpointEntry, ExperimentRecord, Manifest, ManifestError,
    SCHEMA_VERSION,
};

/// Element type of the tensor as stored on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F64,
    F32,
    F16,
    BF16,
}

impl DType {
    pub fn size_bytes(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 => 4,
            DType::F16 | DType::BF16 => 2,
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: unrecognized tensor container format")]
    UnknownFormat { path: PathBuf },
    #[error("tensor {name:?} not found (available: {available:?})")]
    TensorNotFound { name: String, available: Vec<String> },
    #[error("non-finite entry {value} at row {row}, col {col}")]
    NonFinite { row: usize, col: usize, value: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unsupported dtype {0}")]
    UnsupportedDtype(String),
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
}

/// Unembedding matrix `v × d` with provenance.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    matrix: Matrix,
    source_id: String,
    dtype_origin: DType,
}

impl WeightMatrix {
    pub fn new(
        matrix: Matrix,
        source_id: impl Into<String>,
        dtype_origin: DType,
    ) -> Result<Self, IngestError> {
        check_matrix(&matrix, 1)?;
        Ok(Self {
            matrix,
            source_id: source_id.into(),
            dtype_origin,
        })
    }

    /// Shorthand for in-memory matrices (tests, generators).
    pub fn from_matrix(matrix: Matrix) -> Result<Self, IngestError> {
        Self::new(matrix, "<memory>", DType::F64)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.rows()
    }

    pub fn model_dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn dtype_origin(&self) -> DType {
        self.dtype_origin
    }
}

/// Last-token final-layer states, one row per input sequence.
#[derive(Debug, Clone)]
pub struct RepresentationMatrix {
    matrix: Matrix,
    source_id: String,
    dtype_origin: DType,
}

impl RepresentationMatrix {
    pub fn new(
        matrix: Matrix,
        source_id: impl Into<String>,
        dtype_origin: DType,
    ) -> Result<Self, IngestError> {
        check_matrix(&matrix, 2)?;
        Ok(Self {
            matrix,
            source_id: source_id.into(),
            dtype_origin,
        })
    }

    pub fn from_matrix(matrix: Matrix) -> Result<Self, IngestError> {
        Self::new(matrix, "<memory>", DType::F64)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn n_seq(&self) -> usize {
        self.matrix.rows()
    }

    pub fn model_dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn dtype_origin(&self) -> DType {
        self.dtype_origin
    }
}

fn check_matrix(m: &Matrix, min_rows: usize) -> Result<(), IngestError> {
    if m.rows() < min_rows || m.cols() < 1 {
        return Err(IngestError::InvalidMatrix(format!(
            "shape {}x{} (need at least {min_rows} row(s) and 1 column)",
            m.rows(),
            m.cols()
        )));
    }
    if let Some((row, col)) = m.first_non_finite() {
        return Err(IngestError::NonFinite {
            row,
            col,
            value: m.get(row, col),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Weight,
    Representation,
}

#[derive(Debug, Clone)]
pub enum LoadedTensor {
    Weight(WeightMatrix),
    Representation(RepresentationMatrix),
}

impl LoadedTensor {
    pub fn matrix(&self) -> &Matrix {
        match self {
            LoadedTensor::Weight(w) => w.matrix(),
            LoadedTensor::Representation(h) => h.matrix(),
        }
    }

    pub fn dtype_origin(&self) -> DType {
        match self {
            LoadedTensor::Weight(w) => w.dtype_origin(),
            LoadedTensor::Representation(h) => h.dtype_origin(),
        }
    }
}

/// Loads a 2-D tensor from `path` and widens it to `f64`.
///
/// `tensor_name` selects the tensor inside a safetensors container; NPY and
/// raw files hold a single unnamed array and ignore it.
pub fn load_tensor(
    path: impl AsRef<Path>,
    tensor_name: &str,
    kind: TensorKind,
) -> Result<LoadedTensor, IngestError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let (matrix, dtype) = match detect_format(&bytes) {
        Some(TensorFormat::Raw) => formats::read_raw(&bytes)?,
        Some(TensorFormat::Npy) => formats::read_npy(&bytes)?,
        Some(TensorFormat::Safetensors) => formats::read_safetensors(&bytes, tensor_name)?,
        None => {
            return Err(IngestError::UnknownFormat {
                path: path.to_path_buf(),
            })
        }
    };
    let source_id = format!("{}:{}", path.display(), tensor_name);
    Ok(match kind {
        TensorKind::Weight => LoadedTensor::Weight(WeightMatrix::new(matrix, source_id, dtype)?),
        TensorKind::Representation => {
            LoadedTensor::Representation(RepresentationMatrix::new(matrix, source_id, dtype)?)
        }
    })
}

pub fn load_weight(path: impl AsRef<Path>, tensor_name: &str) -> Result<WeightMatrix, IngestError> {
    match load_tensor(path, tensor_name, TensorKind::Weight)? {
        LoadedTensor::Weight(w) => Ok(w),
        LoadedTensor::Representation(_) => unreachable!(),
    }
}

pub fn load_representation(
    path: impl AsRef<Path>,
    tensor_name: &str,
) -> Result<RepresentationMatrix, IngestError> {
    match load_tensor(path, tensor_name, TensorKind::Representation)? {
        LoadedTensor::Representation(h) => Ok(h),
        LoadedTensor::Weight(_) => unreachable!(),
    }
}
