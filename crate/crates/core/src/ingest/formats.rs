use half::{bf16, f16};
use safetensors::{Dtype as StDtype, SafeTensorError, SafeTensors};

use super::{DType, IngestError};
use crate::matrix::Matrix;

pub(crate) const RAW_MAGIC: &[u8; 4] = b"UGT1";
pub(crate) const NPY_MAGIC: &[u8; 6] = b"\x93NUMPY";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorFormat {
    Safetensors,
    Npy,
    Raw,
}

/// Identifies the container from its leading bytes.
pub fn detect_format(bytes: &[u8]) -> Option<TensorFormat> {
    if bytes.starts_with(RAW_MAGIC) {
        return Some(TensorFormat::Raw);
    }
    if bytes.starts_with(NPY_MAGIC) {
        return Some(TensorFormat::Npy);
    }
    if bytes.len() >= 9 {
        let n = u64::from_le_bytes(bytes[..8].try_into().unwrap());
        if n >= 2 && n.saturating_add(8) <= bytes.len() as u64 && bytes[8] == b'{' {
            return Some(TensorFormat::Safetensors);
        }
    }
    None
}

#[derive(Debug, Clone, Copy)]
enum Endian {
    Little,
    Big,
}

fn widen(payload: &[u8], dtype: DType, endian: Endian) -> Vec<f64> {
    let size = dtype.size_bytes();
    let chunks = payload.chunks_exact(size);
    match (dtype, endian) {
        (DType::F64, Endian::Little) => chunks
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        (DType::F64, Endian::Big) => chunks
            .map(|c| f64::from_be_bytes(c.try_into().unwrap()))
            .collect(),
        (DType::F32, Endian::Little) => chunks
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        (DType::F32, Endian::Big) => chunks
            .map(|c| f32::from_be_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        (DType::F16, Endian::Little) => chunks
            .map(|c| f16::from_bits(u16::from_le_bytes(c.try_into().unwrap())).to_f64())
            .collect(),
        (DType::F16, Endian::Big) => chunks
            .map(|c| f16::from_bits(u16::from_be_bytes(c.try_into().unwrap())).to_f64())
            .collect(),
        (DType::BF16, Endian::Little) => chunks
            .map(|c| bf16::from_bits(u16::from_le_bytes(c.try_into().unwrap())).to_f64())
            .collect(),
        (DType::BF16, Endian::Big) => chunks
            .map(|c| bf16::from_bits(u16::from_be_bytes(c.try_into().unwrap())).to_f64())
            .collect(),
    }
}

fn check_payload(
    payload_len: usize,
    rows: usize,
    cols: usize,
    dtype: DType,
) -> Result<(), IngestError> {
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(dtype.size_bytes()))
        .ok_or_else(|| IngestError::ShapeMismatch(format!("shape {rows}x{cols} overflows")))?;
    if payload_len != expected {
        return Err(IngestError::ShapeMismatch(format!(
            "header declares {rows}x{cols} {dtype:?} ({expected} bytes) but payload has {payload_len} bytes"
        )));
    }
    Ok(())
}

pub(crate) fn read_raw(bytes: &[u8]) -> Result<(Matrix, DType), IngestError> {
    if bytes.len() < 16 {
        return Err(IngestError::Malformed("raw header shorter than 16 bytes".into()));
    }
    let dtype = match bytes[4] {
        0 => DType::F32,
        1 => DType::F64,
        code => return Err(IngestError::UnsupportedDtype(format!("raw dtype code {code}"))),
    };
    if bytes[5..8] != [0, 0, 0] {
        return Err(IngestError::Malformed("raw header reserved bytes are not zero".into()));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let payload = &bytes[16..];
    check_payload(payload.len(), rows, cols, dtype)?;
    let data = widen(payload, dtype, Endian::Little);
    Ok((Matrix::from_row_major(rows, cols, data), dtype))
}

struct NpyHeader {
    dtype: DType,
    endian: Endian,
    fortran_order: bool,
    shape: Vec<usize>,
}

fn parse_npy_header(header: &str) -> Result<NpyHeader, IngestError> {
    let malformed = |what: &str| IngestError::Malformed(format!("npy header: {what} in {header:?}"));

    let value_after = |key: &str| -> Option<&str> {
        let pat = format!("'{key}'");
        let start = header.find(&pat)? + pat.len();
        let rest = header[start..].trim_start();
        Some(rest.strip_prefix(':')?.trim_start())
    };

    let descr = value_after("descr").ok_or_else(|| malformed("missing descr"))?;
    let descr = descr
        .strip_prefix('\'')
        .and_then(|s| s.split('\'').next())
        .ok_or_else(|| malformed("bad descr"))?;
    let (endian, code) = match descr.as_bytes().first() {
        Some(b'<') | Some(b'|') | Some(b'=') => (Endian::Little, &descr[1..]),
        Some(b'>') => (Endian::Big, &descr[1..]),
        _ => (Endian::Little, descr),
    };
    let dtype = match code {
        "f8" => DType::F64,
        "f4" => DType::F32,
        "f2" => DType::F16,
        other => return Err(IngestError::UnsupportedDtype(format!("npy descr {other:?}"))),
    };

    let fortran = value_after("fortran_order").ok_or_else(|| malformed("missing fortran_order"))?;
    let fortran_order = if fortran.starts_with("True") {
        true
    } else if fortran.starts_with("False") {
        false
    } else {
        return Err(malformed("bad fortran_order"));
    };

    let shape = value_after("shape").ok_or_else(|| malformed("missing shape"))?;
    let inner = shape
        .strip_prefix('(')
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| malformed("bad shape"))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| malformed("bad shape entry")))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(NpyHeader {
        dtype,
        endian,
        fortran_order,
        shape,
    })
}

pub(crate) fn read_npy(bytes: &[u8]) -> Result<(Matrix, DType), IngestError> {
    if bytes.len() < 10 {
        return Err(IngestError::Malformed("npy file too short".into()));
    }
    let major = bytes[6];
    let (header_len, offset) = match major {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(IngestError::Malformed("npy file too short".into()));
            }
            (u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize, 12)
        }
        v => return Err(IngestError::Malformed(format!("npy version {v} not supported"))),
    };
    let end = offset + header_len;
    if bytes.len() < end {
        return Err(IngestError::Malformed("npy header truncated".into()));
    }
    let header = std::str::from_utf8(&bytes[offset..end])
        .map_err(|_| IngestError::Malformed("npy header is not text".into()))?;
    let h = parse_npy_header(header)?;
    let (rows, cols) = match h.shape[..] {
        [r, c] => (r, c),
        _ => {
            return Err(IngestError::ShapeMismatch(format!(
                "expected a 2-D array, found shape {:?}",
                h.shape
            )))
        }
    };
    let payload = &bytes[end..];
    check_payload(payload.len(), rows, cols, h.dtype)?;
    let data = widen(payload, h.dtype, h.endian);
    let matrix = if h.fortran_order {
        Matrix::from_fn(rows, cols, |i, j| data[j * rows + i])
    } else {
        Matrix::from_row_major(rows, cols, data)
    };
    Ok((matrix, h.dtype))
}

pub(crate) fn read_safetensors(bytes: &[u8], name: &str) -> Result<(Matrix, DType), IngestError> {
    let st = SafeTensors::deserialize(bytes).map_err(|e| IngestError::Malformed(e.to_string()))?;
    let view = match st.tensor(name) {
        Ok(v) => v,
        Err(SafeTensorError::TensorNotFound(_)) => {
            let mut available: Vec<String> = st.names().into_iter().cloned().collect();
            available.sort();
            return Err(IngestError::TensorNotFound {
                name: name.to_string(),
                available,
            });
        }
        Err(e) => return Err(IngestError::Malformed(e.to_string())),
    };
    let dtype = match view.dtype() {
        StDtype::F64 => DType::F64,
        StDtype::F32 => DType::F32,
        StDtype::F16 => DType::F16,
        StDtype::BF16 => DType::BF16,
        other => return Err(IngestError::UnsupportedDtype(format!("safetensors {other:?}"))),
    };
    let (rows, cols) = match view.shape() {
        [r, c] => (*r, *c),
        s => {
            return Err(IngestError::ShapeMismatch(format!(
                "tensor {name:?} has shape {s:?}, expected 2-D"
            )))
        }
    };
    check_payload(view.data().len(), rows, cols, dtype)?;
    let data = widen(view.data(), dtype, Endian::Little);
    Ok((Matrix::from_row_major(rows, cols, data), dtype))
}
