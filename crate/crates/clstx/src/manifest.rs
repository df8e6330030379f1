//! JSON sidecar describing where a CLSB file came from.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;

use crate::clsb::{self, FormatError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    /// Corpus or generator the stacks were produced from.
    pub source: String,
    /// Identifier of the encoder that produced the stacks.
    pub extractor: String,
    /// Tokenizer truncation length; absent for synthetic data.
    pub max_length: Option<u32>,
    /// `sha256:<hex>` of the whole CLSB file.
    pub checksum: String,
    /// RFC 3339, UTC.
    pub created: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{path}: checksum mismatch: manifest says {expected}, file hashes to {actual}")]
    Checksum {
        path: PathBuf,
        expected: String,
        actual: String,
    },
}

/// `<path>.manifest.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

impl Manifest {
    pub fn new(name: &str, source: &str, extractor: &str, max_length: Option<u32>, sha256: &str) -> Self {
        let created = OffsetDateTime::now_utc()
            .replace_nanosecond(0)
            .ok()
            .and_then(|t| t.format(&Rfc3339).ok())
            .unwrap_or_default();
        Self {
            name: name.to_string(),
            source: source.to_string(),
            extractor: extractor.to_string(),
            max_length,
            checksum: format!("sha256:{sha256}"),
            created,
        }
    }

    pub fn write(&self, data_path: &Path) -> Result<PathBuf, ManifestError> {
        let path = sidecar_path(data_path);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|source| ManifestError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }

    pub fn read(data_path: &Path) -> Result<Self, ManifestError> {
        let path = sidecar_path(data_path);
        let text = fs::read_to_string(&path).map_err(|source| ManifestError::Io {
            path: path.clone(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ManifestError::Json { path, source })
    }

    /// Checks the recorded checksum against the file's current bytes.
    pub fn verify(&self, data_path: &Path) -> Result<(), ManifestError> {
        let actual = format!("sha256:{}", clsb::file_sha256(data_path)?);
        if actual != self.checksum {
            return Err(ManifestError::Checksum {
                path: data_path.to_path_buf(),
                expected: self.checksum.clone(),
                actual,
            });
        }
        Ok(())
    }
}
