//! File formats: the CTB tensor binary and headerless numeric CSV tables.
//!
//! CTB layout, all integers little-endian:
//!
//! ```text
//! bytes 0..4   magic "CTB1" (ASCII)
//! byte  4      order M (u8, nonzero)
//! 5..5+8M      extents p_1..p_M (u64 each)
//! rest         prod(p_m) IEEE-754 f64 values in vectorization order
//! ```
//!
//! Readers reject a wrong magic, a zero order or extent, truncated payloads
//! and trailing bytes.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use thiserror::Error;

use crate::tensor::{DenseTensor, TensorError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: not a CTB file (bad magic)")]
    BadMagic { path: PathBuf },
    #[error("{path}: truncated, expected {expected} more bytes")]
    Truncated { path: PathBuf, expected: usize },
    #[error("{path}: {extra} unexpected trailing bytes")]
    TrailingBytes { path: PathBuf, extra: usize },
    #[error("{path}: header declares order 0")]
    ZeroOrder { path: PathBuf },
    #[error("{path}: extent of mode {mode} is zero or too large")]
    BadExtent { path: PathBuf, mode: usize },
    #[error("{path}:{line}: cannot parse {token:?} as a number")]
    ParseNumber {
        path: PathBuf,
        line: usize,
        token: String,
    },
    #[error("{path}:{line}: expected {expected} fields, found {got}")]
    FieldCount {
        path: PathBuf,
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("{path}:{line}: label {value} is not a positive integer")]
    BadLabel {
        path: PathBuf,
        line: usize,
        value: String,
    },
    #[error("{path}: file is empty")]
    Empty { path: PathBuf },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

const CTB_MAGIC: &[u8; 4] = b"CTB1";

pub fn write_ctb(path: &Path, tensor: &DenseTensor) -> Result<(), IoError> {
    let mut buf =
        Vec::with_capacity(5 + 8 * tensor.order() + 8 * tensor.num_elements());
    buf.extend_from_slice(CTB_MAGIC);
    buf.push(tensor.order() as u8);
    for &p in tensor.shape() {
        buf.extend_from_slice(&(p as u64).to_le_bytes());
    }
    for &v in tensor.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&buf).map_err(io_err(path))?;
    Ok(())
}

pub fn read_ctb(path: &Path) -> Result<DenseTensor, IoError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(io_err(path))?
        .read_to_end(&mut bytes)
        .map_err(io_err(path))?;
    if bytes.len() < 4 || &bytes[..4] != CTB_MAGIC {
        return Err(IoError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    if bytes.len() < 5 {
        return Err(IoError::Truncated {
            path: path.to_path_buf(),
            expected: 1,
        });
    }
    let order = bytes[4] as usize;
    if order == 0 {
        return Err(IoError::ZeroOrder {
            path: path.to_path_buf(),
        });
    }
    let header_len = 5 + 8 * order;
    if bytes.len() < header_len {
        return Err(IoError::Truncated {
            path: path.to_path_buf(),
            expected: header_len - bytes.len(),
        });
    }
    let mut shape = Vec::with_capacity(order);
    let mut elements: usize = 1;
    for mode in 0..order {
        let start = 5 + 8 * mode;
        let extent = u64::from_le_bytes(bytes[start..start + 8].try_into().unwrap());
        let extent: usize = extent.try_into().map_err(|_| IoError::BadExtent {
            path: path.to_path_buf(),
            mode,
        })?;
        if extent == 0 {
            return Err(IoError::BadExtent {
                path: path.to_path_buf(),
                mode,
            });
        }
        elements = elements
            .checked_mul(extent)
            .ok_or_else(|| IoError::BadExtent {
                path: path.to_path_buf(),
                mode,
            })?;
        shape.push(extent);
    }
    let payload = &bytes[header_len..];
    let expected_bytes = elements
        .checked_mul(8)
        .ok_or_else(|| IoError::BadExtent {
            path: path.to_path_buf(),
            mode: order - 1,
        })?;
    if payload.len() < expected_bytes {
        return Err(IoError::Truncated {
            path: path.to_path_buf(),
            expected: expected_bytes - payload.len(),
        });
    }
    if payload.len() > expected_bytes {
        return Err(IoError::TrailingBytes {
            path: path.to_path_buf(),
            extra: payload.len() - expected_bytes,
        });
    }
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DenseTensor::new(shape, data)?)
}

/// Reads only the geometry of a CTB file: magic, order and extents, with the
/// payload length checked against their product. Unlike [`read_ctb`] this
/// admits zero extents, so front ends can recognize an observation stack
/// with no observations without materializing a tensor.
pub fn read_ctb_header(path: &Path) -> Result<Vec<usize>, IoError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(io_err(path))?
        .read_to_end(&mut bytes)
        .map_err(io_err(path))?;
    if bytes.len() < 4 || &bytes[..4] != CTB_MAGIC {
        return Err(IoError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    if bytes.len() < 5 {
        return Err(IoError::Truncated {
            path: path.to_path_buf(),
            expected: 1,
        });
    }
    let order = bytes[4] as usize;
    if order == 0 {
        return Err(IoError::ZeroOrder {
            path: path.to_path_buf(),
        });
    }
    let header_len = 5 + 8 * order;
    if bytes.len() < header_len {
        return Err(IoError::Truncated {
            path: path.to_path_buf(),
            expected: header_len - bytes.len(),
        });
    }
    let mut shape = Vec::with_capacity(order);
    let mut elements: usize = 1;
    for mode in 0..order {
        let start = 5 + 8 * mode;
        let extent = u64::from_le_bytes(bytes[start..start + 8].try_into().unwrap());
        let extent: usize = extent.try_into().map_err(|_| IoError::BadExtent {
            path: path.to_path_buf(),
            mode,
        })?;
        elements = elements
            .checked_mul(extent)
            .ok_or_else(|| IoError::BadExtent {
                path: path.to_path_buf(),
                mode,
            })?;
        shape.push(extent);
    }
    let payload = bytes.len() - header_len;
    let expected_bytes = elements
        .checked_mul(8)
        .ok_or_else(|| IoError::BadExtent {
            path: path.to_path_buf(),
            mode: order - 1,
        })?;
    if payload < expected_bytes {
        return Err(IoError::Truncated {
            path: path.to_path_buf(),
            expected: expected_bytes - payload,
        });
    }
    if payload > expected_bytes {
        return Err(IoError::TrailingBytes {
            path: path.to_path_buf(),
            extra: payload - expected_bytes,
        });
    }
    Ok(shape)
}

/// Writes a matrix as comma-separated rows, no header. Values use the
/// shortest decimal form that parses back to the same f64.
pub fn write_csv_matrix(path: &Path, m: &Array2<f64>) -> Result<(), IoError> {
    let mut out = String::new();
    for row in m.rows() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn write_csv_vector(path: &Path, v: &[f64]) -> Result<(), IoError> {
    let mut out = String::new();
    for x in v {
        out.push_str(&format!("{x}\n"));
    }
    fs::write(path, out).map_err(io_err(path))
}

fn csv_lines(path: &Path) -> Result<Vec<(usize, String)>, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.to_string()))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect())
}

/// Reads a headerless numeric CSV into a matrix; every row must have the
/// same field count.
pub fn read_csv_matrix(path: &Path) -> Result<Array2<f64>, IoError> {
    let lines = csv_lines(path)?;
    if lines.is_empty() {
        return Err(IoError::Empty {
            path: path.to_path_buf(),
        });
    }
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(lines.len());
    let mut width = None;
    for (line_no, line) in &lines {
        let mut row = Vec::new();
        for token in line.split(',') {
            let token = token.trim();
            let v: f64 = token.parse().map_err(|_| IoError::ParseNumber {
                path: path.to_path_buf(),
                line: *line_no,
                token: token.to_string(),
            })?;
            row.push(v);
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(IoError::FieldCount {
                    path: path.to_path_buf(),
                    line: *line_no,
                    expected: w,
                    got: row.len(),
                });
            }
            _ => {}
        }
        rows.push(row);
    }
    let width = width.unwrap();
    let mut out = Array2::zeros((rows.len(), width));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

pub fn read_csv_vector(path: &Path) -> Result<Vec<f64>, IoError> {
    let m = read_csv_matrix(path)?;
    if m.ncols() != 1 {
        return Err(IoError::FieldCount {
            path: path.to_path_buf(),
            line: 1,
            expected: 1,
            got: m.ncols(),
        });
    }
    Ok(m.column(0).to_vec())
}

/// Reads a one-column file of positive integer class labels.
pub fn read_labels(path: &Path) -> Result<Vec<usize>, IoError> {
    let lines = csv_lines(path)?;
    if lines.is_empty() {
        return Err(IoError::Empty {
            path: path.to_path_buf(),
        });
    }
    let mut labels = Vec::with_capacity(lines.len());
    for (line_no, line) in &lines {
        let token = line.trim();
        let value: usize = token.parse().map_err(|_| IoError::BadLabel {
            path: path.to_path_buf(),
            line: *line_no,
            value: token.to_string(),
        })?;
        if value == 0 {
            return Err(IoError::BadLabel {
                path: path.to_path_buf(),
                line: *line_no,
                value: token.to_string(),
            });
        }
        labels.push(value);
    }
    Ok(labels)
}
