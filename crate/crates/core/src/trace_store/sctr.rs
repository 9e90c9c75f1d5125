//! SCTR binary trace container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic "SCTR" [4] | version u16 | channel u8 | flags u8 | M u32 | S u32
//! | axis_start f64 | axis_step f64 | repetitions u32
//! | samples f64 x M*S (row-major) | plaintexts 16 x M | [true_key 16]
//! ```
//!
//! Flag bit 0 marks the presence of the true key. The free-text provenance
//! is not part of the container.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use thiserror::Error;

use super::{Channel, TraceSet, TraceSetError};
use crate::aes_target::BLOCK_BYTES;

pub const MAGIC: [u8; 4] = *b"SCTR";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 1 + 1 + 4 + 4 + 8 + 8 + 4;

const FLAG_TRUE_KEY: u8 = 0x01;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad magic: expected \"SCTR\", found {found:02x?}")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported SCTR version {0} (this build reads version 1)")]
    UnsupportedVersion(u16),
    #[error("unknown channel code {0}")]
    UnknownChannel(u8),
    #[error("unknown flag bits {0:#04x}")]
    UnknownFlags(u8),
    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("file has {actual} bytes but the header implies {expected}")]
    LengthMismatch { expected: u64, actual: u64 },
    #[error("header declares an empty trace set ({traces} x {samples})")]
    EmptyShape { traces: u32, samples: u32 },
    #[error("non-finite value at trace {trace}, sample {sample}")]
    NonFinite { trace: usize, sample: usize },
    #[error("trace set too large for the SCTR u32 shape fields")]
    TooLarge,
    #[error(transparent)]
    Invalid(#[from] TraceSetError),
}

/// Serializes a trace set into the SCTR byte layout.
pub fn encode(set: &TraceSet) -> Result<Vec<u8>, StoreError> {
    let traces = u32::try_from(set.trace_count()).map_err(|_| StoreError::TooLarge)?;
    let samples = u32::try_from(set.sample_count()).map_err(|_| StoreError::TooLarge)?;
    let key_len = if set.true_key().is_some() { BLOCK_BYTES } else { 0 };
    let len = expected_len(traces, samples, key_len > 0).ok_or(StoreError::TooLarge)?;
    let mut out = Vec::with_capacity(len as usize);

    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(set.channel().code());
    out.push(if key_len > 0 { FLAG_TRUE_KEY } else { 0 });
    out.extend_from_slice(&traces.to_le_bytes());
    out.extend_from_slice(&samples.to_le_bytes());
    out.extend_from_slice(&set.axis_start().to_le_bytes());
    out.extend_from_slice(&set.axis_step().to_le_bytes());
    out.extend_from_slice(&set.repetitions().to_le_bytes());
    for ((trace, sample), v) in set.samples().indexed_iter() {
        if !v.is_finite() {
            return Err(StoreError::NonFinite { trace, sample });
        }
        out.extend_from_slice(&v.to_le_bytes());
    }
    for p in set.plaintexts() {
        out.extend_from_slice(p);
    }
    if let Some(key) = set.true_key() {
        out.extend_from_slice(key);
    }
    debug_assert_eq!(out.len() as u64, len);
    Ok(out)
}

fn expected_len(traces: u32, samples: u32, has_key: bool) -> Option<u64> {
    let cells = (traces as u64).checked_mul(samples as u64)?;
    let body = cells
        .checked_mul(8)?
        .checked_add((traces as u64).checked_mul(BLOCK_BYTES as u64)?)?;
    let key = if has_key { BLOCK_BYTES as u64 } else { 0 };
    (HEADER_LEN as u64).checked_add(body)?.checked_add(key)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let mut out = [0u8; N];
        out.copy_from_slice(&self.bytes[self.pos..self.pos + N]);
        self.pos += N;
        out
    }
}

/// Parses an SCTR byte buffer. The provenance of the result is empty.
pub fn decode(bytes: &[u8]) -> Result<TraceSet, StoreError> {
    let actual = bytes.len() as u64;
    if bytes.len() < MAGIC.len() || bytes[..4] != MAGIC {
        return Err(StoreError::BadMagic {
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(StoreError::Truncated {
            expected: HEADER_LEN as u64,
            actual,
        });
    }
    let mut cur = Cursor { bytes, pos: 4 };
    let version = u16::from_le_bytes(cur.take());
    if version != VERSION {
        return Err(StoreError::UnsupportedVersion(version));
    }
    let [code] = cur.take::<1>();
    let channel = Channel::from_code(code).ok_or(StoreError::UnknownChannel(code))?;
    let [flags] = cur.take::<1>();
    if flags & !FLAG_TRUE_KEY != 0 {
        return Err(StoreError::UnknownFlags(flags));
    }
    let traces = u32::from_le_bytes(cur.take());
    let samples = u32::from_le_bytes(cur.take());
    let axis_start = f64::from_le_bytes(cur.take());
    let axis_step = f64::from_le_bytes(cur.take());
    let repetitions = u32::from_le_bytes(cur.take());
    if traces == 0 || samples == 0 {
        return Err(StoreError::EmptyShape { traces, samples });
    }

    let has_key = flags & FLAG_TRUE_KEY != 0;
    let expected = expected_len(traces, samples, has_key).ok_or(StoreError::TooLarge)?;
    if actual < expected {
        return Err(StoreError::Truncated { expected, actual });
    }
    if actual > expected {
        return Err(StoreError::LengthMismatch { expected, actual });
    }

    let (m, s) = (traces as usize, samples as usize);
    let mut values = Vec::with_capacity(m * s);
    for i in 0..m * s {
        let v = f64::from_le_bytes(cur.take());
        if !v.is_finite() {
            return Err(StoreError::NonFinite {
                trace: i / s,
                sample: i % s,
            });
        }
        values.push(v);
    }
    let plaintexts = (0..m).map(|_| cur.take::<BLOCK_BYTES>()).collect();
    let true_key = has_key.then(|| cur.take::<BLOCK_BYTES>());

    let samples = Array2::from_shape_vec((m, s), values).expect("shape checked against length");
    Ok(TraceSet::new(
        channel,
        samples,
        axis_start,
        axis_step,
        plaintexts,
        true_key,
        repetitions,
        String::new(),
    )?)
}

/// Writes atomically: the bytes go to a sibling temp file that is then renamed.
pub fn write_trace_file(set: &TraceSet, path: impl AsRef<Path>) -> Result<(), StoreError> {
    let path = path.as_ref();
    let bytes = encode(set)?;
    let io_err = |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(&bytes)?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io_err)
}

pub fn read_trace_file(path: impl AsRef<Path>) -> Result<TraceSet, StoreError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}
