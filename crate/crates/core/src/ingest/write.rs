//! Writers for the supported tensor containers.
//!
//! Used to produce fixtures and to export synthetic matrices. Values are
//! narrowed to the requested dtype with the usual round-to-nearest-even casts.

use std::collections::HashMap;
use std::path::Path;

use half::{bf16, f16};
use safetensors::tensor::TensorView;
use safetensors::Dtype as StDtype;

use super::formats::{NPY_MAGIC, RAW_MAGIC};
use super::{DType, IngestError};
use crate::matrix::Matrix;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Little-endian encoding of every entry of `m` in row-major order.
pub fn encode_le(m: &Matrix, dtype: DType) -> Vec<u8> {
    let mut out = Vec::with_capacity(m.as_slice().len() * dtype.size_bytes());
    for &x in m.as_slice() {
        match dtype {
            DType::F64 => out.extend_from_slice(&x.to_le_bytes()),
            DType::F32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
            DType::F16 => out.extend_from_slice(&f16::from_f64(x).to_bits().to_le_bytes()),
            DType::BF16 => out.extend_from_slice(&bf16::from_f64(x).to_bits().to_le_bytes()),
        }
    }
    out
}

/// Writes the 16-byte-header raw format. Only f32 and f64 have dtype codes.
pub fn write_raw(path: impl AsRef<Path>, m: &Matrix, dtype: DType) -> Result<(), IngestError> {
    let path = path.as_ref();
    let code = match dtype {
        DType::F32 => 0u8,
        DType::F64 => 1u8,
        other => {
            return Err(IngestError::UnsupportedDtype(format!(
                "raw format has no code for {other:?}"
            )))
        }
    };
    let rows = u32::try_from(m.rows())
        .map_err(|_| IngestError::ShapeMismatch("rows exceed u32".into()))?;
    let cols = u32::try_from(m.cols())
        .map_err(|_| IngestError::ShapeMismatch("cols exceed u32".into()))?;
    let mut bytes = Vec::with_capacity(16 + m.as_slice().len() * dtype.size_bytes());
    bytes.extend_from_slice(RAW_MAGIC);
    bytes.extend_from_slice(&[code, 0, 0, 0]);
    bytes.extend_from_slice(&rows.to_le_bytes());
    bytes.extend_from_slice(&cols.to_le_bytes());
    bytes.extend_from_slice(&encode_le(m, dtype));
    std::fs::write(path, bytes).map_err(io_err(path))
}

/// Writes an NPY version 1.0 file in C order.
pub fn write_npy(path: impl AsRef<Path>, m: &Matrix, dtype: DType) -> Result<(), IngestError> {
    let path = path.as_ref();
    let descr = match dtype {
        DType::F64 => "<f8",
        DType::F32 => "<f4",
        DType::F16 => "<f2",
        DType::BF16 => return Err(IngestError::UnsupportedDtype("npy has no bfloat16".into())),
    };
    let mut header = format!(
        "{{'descr': '{descr}', 'fortran_order': False, 'shape': ({}, {}), }}",
        m.rows(),
        m.cols()
    );
    // magic(6) + version(2) + len(2) + header + '\n' is padded to 64 bytes
    let unpadded = 10 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');
    let mut bytes = NPY_MAGIC.to_vec();
    bytes.extend_from_slice(&[1, 0]);
    bytes.extend_from_slice(&(header.len() as u16).to_le_bytes());
    bytes.extend_from_slice(header.as_bytes());
    bytes.extend_from_slice(&encode_le(m, dtype));
    std::fs::write(path, bytes).map_err(io_err(path))
}

/// Writes a safetensors container holding the given named matrices.
pub fn write_safetensors(
    path: impl AsRef<Path>,
    tensors: &[(&str, &Matrix, DType)],
) -> Result<(), IngestError> {
    let path = path.as_ref();
    let buffers: Vec<Vec<u8>> = tensors.iter().map(|(_, m, d)| encode_le(m, *d)).collect();
    let mut views = HashMap::new();
    for ((name, m, dtype), buf) in tensors.iter().zip(&buffers) {
        let st_dtype = match dtype {
            DType::F64 => StDtype::F64,
            DType::F32 => StDtype::F32,
            DType::F16 => StDtype::F16,
            DType::BF16 => StDtype::BF16,
        };
        let view = TensorView::new(st_dtype, vec![m.rows(), m.cols()], buf)
            .map_err(|e| IngestError::Malformed(e.to_string()))?;
        views.insert(name.to_string(), view);
    }
    let bytes = safetensors::serialize(&views, &None)
        .map_err(|e| IngestError::Malformed(e.to_string()))?;
    std::fs::write(path, bytes).map_err(io_err(path))
}
