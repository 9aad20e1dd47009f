//! `RNWT` weight files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "RNWT" | u32 version (=1) | u32 record count
//! per record: u32 name length | UTF-8 name | u8 dtype | u32 ndim | ndim x u32 dims | raw elements
//! ```
//!
//! dtype 0 is `f32`; dtype 1 (`f64`) is written only by double-precision
//! networks. Records carry every parameter plus batch-norm running statistics.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::tensor::{Float, Tensor};

use super::{NetError, Network, Result};

pub const WEIGHT_MAGIC: &[u8; 4] = b"RNWT";
pub const WEIGHT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic bytes {found:?}, expected \"RNWT\"")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated at byte {offset} while reading {context}")]
    Truncated { context: String, offset: usize },
    #[error("record name at byte {offset} is not valid UTF-8")]
    InvalidName { offset: usize },
    #[error("record `{record}` has unsupported dtype {dtype}")]
    UnsupportedDtype { record: String, dtype: u8 },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("parameter `{0}` missing from file")]
    MissingParameter(String),
    #[error("record `{0}` appears twice")]
    DuplicateRecord(String),
    #[error("record `{record}` has shape {found:?}, network expects {expected:?}")]
    ShapeMismatch {
        record: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("{count} trailing bytes after the last record")]
    TrailingBytes { count: usize },
}

pub fn save_weights<T: Float, W: Write>(network: &Network<T>, mut sink: W) -> Result<()> {
    let records = network.state_records();
    let mut buf = Vec::new();
    buf.extend_from_slice(WEIGHT_MAGIC);
    buf.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, t) in &records {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(T::DTYPE);
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut buf);
        }
    }
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, context: impl FnOnce() -> String) -> Result<&'a [u8], FormatError> {
        if self.bytes.len() - self.pos < n {
            return Err(FormatError::Truncated {
                context: context(),
                offset: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, context: impl FnOnce() -> String) -> Result<u32, FormatError> {
        let b = self.take(4, context)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

fn parse<T: Float>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>, FormatError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, || "magic".into()).map_err(|_| FormatError::BadMagic {
        found: bytes[..bytes.len().min(4)].to_vec(),
    })?;
    if magic != WEIGHT_MAGIC {
        return Err(FormatError::BadMagic {
            found: magic.to_vec(),
        });
    }
    let version = cur.u32(|| "version".into())?;
    if version != WEIGHT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let count = cur.u32(|| "record count".into())? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for i in 0..count {
        let name_len = cur.u32(|| format!("name length of record #{i}"))? as usize;
        let at = cur.pos;
        let raw = cur.take(name_len, || format!("name of record #{i}"))?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| FormatError::InvalidName { offset: at })?
            .to_string();
        let dtype = cur.take(1, || format!("dtype of `{name}`"))?[0];
        if dtype != T::DTYPE {
            return Err(FormatError::UnsupportedDtype { record: name, dtype });
        }
        let ndim = cur.u32(|| format!("rank of `{name}`"))? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(cur.u32(|| format!("dims of `{name}`"))? as usize);
        }
        let len: usize = shape.iter().product();
        let raw = cur.take(len * T::BYTES, || format!("data of `{name}`"))?;
        let data: Vec<T> = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        let t = Tensor::new(&shape, data).map_err(|_| FormatError::ShapeMismatch {
            record: name.clone(),
            expected: Vec::new(),
            found: shape.clone(),
        })?;
        out.push((name, t));
    }
    if cur.pos != bytes.len() {
        return Err(FormatError::TrailingBytes {
            count: bytes.len() - cur.pos,
        });
    }
    Ok(out)
}

/// Loads every record into `network`. The file is fully parsed and checked
/// against the network before anything is written, so a failed load leaves
/// the network untouched.
pub fn load_weights<T: Float, R: Read>(network: &mut Network<T>, mut source: R) -> Result<()> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let records = parse::<T>(&bytes)?;

    let expected: HashMap<String, Vec<usize>> = network
        .state_records()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    let mut staged = BTreeMap::new();
    for (name, t) in records {
        let Some(shape) = expected.get(&name) else {
            return Err(FormatError::UnknownParameter(name).into());
        };
        if t.shape() != &shape[..] {
            return Err(FormatError::ShapeMismatch {
                record: name,
                expected: shape.clone(),
                found: t.shape().to_vec(),
            }
            .into());
        }
        if staged.insert(name.clone(), t).is_some() {
            return Err(FormatError::DuplicateRecord(name).into());
        }
    }
    if let Some(missing) = network
        .state_records()
        .into_iter()
        .map(|(n, _)| n)
        .find(|n| !staged.contains_key(n))
    {
        return Err(FormatError::MissingParameter(missing).into());
    }
    network.apply_records(staged);
    Ok(())
}

pub fn save_weights_file<T: Float>(network: &Network<T>, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path.as_ref())?;
    save_weights(network, std::io::BufWriter::new(file))
}

pub fn load_weights_file<T: Float>(network: &mut Network<T>, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::open(path.as_ref()).map_err(NetError::Io)?;
    load_weights(network, std::io::BufReader::new(file))
}
