//! CLSB: labeled `[CLS]` stacks on disk.
//!
//! ```text
//! 0..4    magic "CLSB"
//! 4..8    version (u32, 1)
//! 8..12   n_layers (u32)
//! 12..16  hidden (u32)
//! 16..20  n_classes (u32)
//! 20..28  n_samples (u64)
//! 28..32  reserved (0)
//! labels  n_samples × u32
//! payload n_samples × n_layers × hidden × f32
//! ```
//!
//! Integers and floats are little-endian. The payload is sample-major, then
//! layer-major.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clstx_core::data::EmbeddingDataset;
use sha2::{Digest, Sha256};

pub const MAGIC: [u8; 4] = *b"CLSB";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 32;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    /// The header is not a CLSB header this reader understands.
    #[error("{path}: bad format: {reason}")]
    Format { path: PathBuf, reason: String },
    /// The header is valid but the file does not hold the bytes it promises.
    #[error("{path}: corrupt: expected {expected} bytes, found {actual}")]
    Corrupt { path: PathBuf, expected: u64, actual: u64 },
    #[error("{path}: invalid dataset: {source}")]
    Invalid {
        path: PathBuf,
        #[source]
        source: clstx_core::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub n_layers: u32,
    pub hidden: u32,
    pub n_classes: u32,
    pub n_samples: u64,
}

impl Header {
    pub fn of(ds: &EmbeddingDataset) -> Self {
        Self {
            n_layers: ds.n_layers() as u32,
            hidden: ds.hidden() as u32,
            n_classes: ds.n_classes() as u32,
            n_samples: ds.n_samples() as u64,
        }
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        let mut b = [0u8; 32];
        b[0..4].copy_from_slice(&MAGIC);
        b[4..8].copy_from_slice(&VERSION.to_le_bytes());
        b[8..12].copy_from_slice(&self.n_layers.to_le_bytes());
        b[12..16].copy_from_slice(&self.hidden.to_le_bytes());
        b[16..20].copy_from_slice(&self.n_classes.to_le_bytes());
        b[20..28].copy_from_slice(&self.n_samples.to_le_bytes());
        b
    }

    /// Parses and checks a header. Nothing past the 32 bytes is consulted.
    pub fn parse(b: &[u8; 32]) -> Result<Self, String> {
        if b[0..4] != MAGIC {
            return Err(format!("magic {:?} is not \"CLSB\"", String::from_utf8_lossy(&b[0..4])));
        }
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let h = Self {
            n_layers: u32_at(8),
            hidden: u32_at(12),
            n_classes: u32_at(16),
            n_samples: u64::from_le_bytes(b[20..28].try_into().unwrap()),
        };
        if u32_at(28) != 0 {
            return Err("reserved field is not zero".into());
        }
        if h.n_layers == 0 || h.hidden == 0 {
            return Err(format!("empty stack extent {}x{}", h.n_layers, h.hidden));
        }
        if h.n_classes < 2 {
            return Err(format!("n_classes {} is below 2", h.n_classes));
        }
        if h.file_len().is_none() {
            return Err("extents overflow the addressable size".into());
        }
        Ok(h)
    }

    pub fn stack_len(&self) -> usize {
        self.n_layers as usize * self.hidden as usize
    }

    /// Exact size of a file with this header.
    pub fn file_len(&self) -> Option<u64> {
        let per_sample = 4u64.checked_add(
            4u64.checked_mul(self.n_layers as u64)?
                .checked_mul(self.hidden as u64)?,
        )?;
        HEADER_LEN.checked_add(self.n_samples.checked_mul(per_sample)?)
    }
}

/// `32 + 4·N + 4·N·L·H`.
pub fn file_size(n_samples: u64, n_layers: u32, hidden: u32) -> u64 {
    HEADER_LEN + 4 * n_samples + 4 * n_samples * n_layers as u64 * hidden as u64
}

/// Serializes a dataset; the result is a complete CLSB file.
pub fn encode(ds: &EmbeddingDataset) -> Vec<u8> {
    let h = Header::of(ds);
    let mut out = Vec::with_capacity(h.file_len().unwrap_or(0) as usize);
    out.extend_from_slice(&h.to_bytes());
    for &l in ds.labels() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    for &v in ds.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Writes `ds` to `path` and returns the SHA-256 of the written bytes.
pub fn write_dataset(ds: &EmbeddingDataset, path: &Path) -> Result<String, FormatError> {
    ds.validate().map_err(|source| FormatError::Invalid {
        path: path.to_path_buf(),
        source,
    })?;
    let bytes = encode(ds);
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    w.write_all(&bytes).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))?;
    Ok(sha256_hex(&bytes))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of a whole file, streamed.
pub fn file_sha256(path: &Path) -> Result<String, FormatError> {
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = r.read(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Streaming reader: the header and labels are loaded up front, stacks are
/// read one at a time.
pub struct ClsbReader {
    path: PathBuf,
    header: Header,
    labels: Vec<u32>,
    inner: BufReader<File>,
    next: u64,
}

impl ClsbReader {
    /// Opens a file and validates its header and length before reading any
    /// payload byte.
    pub fn open(path: &Path) -> Result<Self, FormatError> {
        let file = File::open(path).map_err(io_err(path))?;
        let actual = file.metadata().map_err(io_err(path))?.len();
        let mut inner = BufReader::new(file);
        let mut raw = [0u8; 32];
        if actual < HEADER_LEN {
            return Err(FormatError::Format {
                path: path.to_path_buf(),
                reason: format!("{actual} bytes is shorter than the {HEADER_LEN}-byte header"),
            });
        }
        inner.read_exact(&mut raw).map_err(io_err(path))?;
        let header = Header::parse(&raw).map_err(|reason| FormatError::Format {
            path: path.to_path_buf(),
            reason,
        })?;
        let expected = header.file_len().expect("checked by parse");
        if actual != expected {
            return Err(FormatError::Corrupt {
                path: path.to_path_buf(),
                expected,
                actual,
            });
        }
        let mut label_bytes = vec![0u8; header.n_samples as usize * 4];
        inner.read_exact(&mut label_bytes).map_err(io_err(path))?;
        let labels = label_bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            path: path.to_path_buf(),
            header,
            labels,
            inner,
            next: 0,
        })
    }

    pub fn header(&self) -> &Header {
        &self.header
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Next stack in file order, `None` after the last one.
    pub fn next_stack(&mut self) -> Result<Option<Vec<f32>>, FormatError> {
        if self.next == self.header.n_samples {
            return Ok(None);
        }
        let mut buf = vec![0u8; self.header.stack_len() * 4];
        self.inner.read_exact(&mut buf).map_err(io_err(&self.path))?;
        self.next += 1;
        Ok(Some(
            buf.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ))
    }

    /// Reads the remaining stacks and validates the assembled dataset.
    pub fn into_dataset(mut self) -> Result<EmbeddingDataset, FormatError> {
        let mut values = Vec::with_capacity(self.header.n_samples as usize * self.header.stack_len());
        while let Some(stack) = self.next_stack()? {
            values.extend_from_slice(&stack);
        }
        let h = self.header;
        EmbeddingDataset::new(
            h.n_layers as usize,
            h.hidden as usize,
            h.n_classes as usize,
            self.labels,
            values,
        )
        .map_err(|source| FormatError::Invalid {
            path: self.path,
            source,
        })
    }
}

pub fn read_header(path: &Path) -> Result<Header, FormatError> {
    Ok(*ClsbReader::open(path)?.header())
}

pub fn read_dataset(path: &Path) -> Result<EmbeddingDataset, FormatError> {
    ClsbReader::open(path)?.into_dataset()
}
