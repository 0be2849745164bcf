//! The `.fld` binary field format.
//!
//! ```text
//! magic       5 bytes   "PABR1"
//! dim         u32 LE
//! resolution  dim x u64 LE
//! payload     prod(resolution) x f64 LE, row-major, last axis fastest
//! ```
//!
//! Nothing may follow the payload. Values must be finite.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use abreu_core::grid::{PeriodicGrid, ScalarField};
use thiserror::Error;

pub const MAGIC: [u8; 5] = *b"PABR1";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormatError {
    #[error("bad magic {found:?} at byte offset 0, expected \"PABR1\"")]
    BadMagic { found: String },
    #[error("truncated {section} at byte offset {offset}: {missing} bytes missing")]
    Truncated {
        section: &'static str,
        offset: usize,
        missing: usize,
    },
    #[error("invalid grid header at byte offset {offset}: {message}")]
    InvalidHeader { offset: usize, message: String },
    #[error("non-finite value at byte offset {offset}")]
    NonFinite { offset: usize },
    #[error("{count} trailing bytes at byte offset {offset}")]
    TrailingBytes { offset: usize, count: usize },
}

#[derive(Debug, Error)]
pub enum FieldFileError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}: {source}", path.display())]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, count: usize, section: &'static str) -> Result<&'a [u8], FormatError> {
        let available = self.bytes.len() - self.offset;
        if available < count {
            return Err(FormatError::Truncated {
                section,
                offset: self.bytes.len(),
                missing: count - available,
            });
        }
        let out = &self.bytes[self.offset..self.offset + count];
        self.offset += count;
        Ok(out)
    }
}

pub fn encode(field: &ScalarField) -> Vec<u8> {
    let shape = field.grid().shape();
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + 8 * shape.len() + 8 * field.values().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &n in shape {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<ScalarField, FormatError> {
    let mut cur = Cursor { bytes, offset: 0 };
    let magic = cur.take(MAGIC.len(), "magic").map_err(|e| match e {
        FormatError::Truncated { .. } if !bytes.starts_with(&MAGIC[..bytes.len().min(MAGIC.len())]) => {
            FormatError::BadMagic {
                found: String::from_utf8_lossy(bytes).into_owned(),
            }
        }
        other => other,
    })?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic {
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let dim_offset = cur.offset;
    let dim = u32::from_le_bytes(cur.take(4, "dimension")?.try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(FormatError::InvalidHeader {
            offset: dim_offset,
            message: "dimension 0".into(),
        });
    }
    let shape_offset = cur.offset;
    let shape_bytes = cur.take(
        dim.checked_mul(8).ok_or(FormatError::InvalidHeader {
            offset: dim_offset,
            message: format!("dimension {dim} too large"),
        })?,
        "resolution",
    )?;
    let mut shape = Vec::with_capacity(dim);
    for chunk in shape_bytes.chunks_exact(8) {
        let n = u64::from_le_bytes(chunk.try_into().unwrap());
        shape.push(usize::try_from(n).map_err(|_| FormatError::InvalidHeader {
            offset: shape_offset,
            message: format!("resolution {n} too large"),
        })?);
    }
    let grid = PeriodicGrid::new(dim, &shape).map_err(|e| FormatError::InvalidHeader {
        offset: shape_offset,
        message: e.to_string(),
    })?;
    let payload_offset = cur.offset;
    let payload_len = grid.len().checked_mul(8).ok_or(FormatError::InvalidHeader {
        offset: shape_offset,
        message: "payload size overflows".into(),
    })?;
    let payload = cur.take(payload_len, "payload")?;
    if cur.offset != bytes.len() {
        return Err(FormatError::TrailingBytes {
            offset: cur.offset,
            count: bytes.len() - cur.offset,
        });
    }
    let mut values = Vec::with_capacity(grid.len());
    for (k, chunk) in payload.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(FormatError::NonFinite {
                offset: payload_offset + 8 * k,
            });
        }
        values.push(v);
    }
    Ok(ScalarField::new(&grid, values).expect("values checked finite and sized"))
}

pub fn read_field(path: &Path) -> Result<ScalarField, FieldFileError> {
    let bytes = fs::read(path).map_err(|source| FieldFileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes).map_err(|source| FieldFileError::Format {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_field(path: &Path, field: &ScalarField) -> Result<(), FieldFileError> {
    write_atomic(path, &encode(field))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FieldFileError> {
    let io_err = |source| FieldFileError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}
