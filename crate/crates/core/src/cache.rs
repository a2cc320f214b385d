//! Persisted sibling distributions.
//!
//! Same layout conventions as the sibling archive: a TOML `manifest` with one
//! entry per word (word, dim, mode, estimator, count) and a little-endian
//! `f32` payload holding the mean followed by the covariance (diagonal, or
//! the full matrix row-major). Values are stored at `f32` precision.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::archive::{payload_checksum, MANIFEST_FILE};
use crate::distribution::{CovMode, Covariance, CovarianceRep, Estimator, SiblingDistribution};
use crate::error::{Error, Result};

const CACHE_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub word: String,
    pub dim: usize,
    pub mode: CovMode,
    pub estimator: Estimator,
    pub count: usize,
    pub file: PathBuf,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub schema_version: u32,
    pub corpus_id: String,
    #[serde(default)]
    pub entries: Vec<CacheEntry>,
}

fn encode(d: &SiblingDistribution) -> Vec<u8> {
    let mut values: Vec<f64> = d.mean().iter().copied().collect();
    match &d.covariance().values {
        Covariance::Diag(v) => values.extend(v.iter()),
        Covariance::Full(m) => {
            for i in 0..m.nrows() {
                values.extend(m.row(i).iter());
            }
        }
    }
    values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

pub fn write_distribution_cache(dists: &[SiblingDistribution], dir: &Path) -> Result<CacheManifest> {
    let corpus_id = dists.first().map(|d| d.corpus_id().to_string()).unwrap_or_default();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(dists.len());
    for d in dists {
        if d.corpus_id() != corpus_id {
            return Err(Error::CorpusMismatch {
                expected: corpus_id,
                found: d.corpus_id().to_string(),
            });
        }
        if d.word().is_empty() || d.word().contains(['/', '\\', '\0']) || d.word() == ".." {
            return Err(Error::InvalidWord(d.word().to_string()));
        }
        if entries.iter().any(|e: &CacheEntry| e.word == d.word()) {
            return Err(Error::DuplicateWord(d.word().to_string()));
        }
        let bytes = encode(d);
        let file = PathBuf::from(format!("{}.gauss.f32", d.word()));
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        entries.push(CacheEntry {
            word: d.word().to_string(),
            dim: d.dim(),
            mode: d.covariance().mode(),
            estimator: d.covariance().estimator,
            count: d.count(),
            file,
            checksum: format!("{:016x}", payload_checksum(&bytes)),
        });
    }
    let manifest = CacheManifest {
        schema_version: CACHE_SCHEMA,
        corpus_id,
        entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = toml::to_string_pretty(&manifest).map_err(|e| Error::Manifest {
        path: path.clone(),
        message: e.to_string(),
    })?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_distribution_cache(dir: &Path) -> Result<Vec<SiblingDistribution>> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CacheManifest = toml::from_str(&text).map_err(|e| Error::Manifest {
        path: path.clone(),
        message: e.to_string(),
    })?;
    if manifest.schema_version != CACHE_SCHEMA {
        return Err(Error::Manifest {
            path,
            message: format!("unsupported schema version {}", manifest.schema_version),
        });
    }
    manifest
        .entries
        .iter()
        .map(|e| {
            if e.file.components().any(|c| !matches!(c, std::path::Component::Normal(_))) {
                return Err(Error::InvalidWord(e.word.clone()));
            }
            let p = dir.join(&e.file);
            let bytes = fs::read(&p).map_err(|err| Error::io(&p, err))?;
            let cov_len = match e.mode {
                CovMode::Diag => e.dim,
                CovMode::Full => e.dim * e.dim,
            };
            let expected = 4 * (e.dim + cov_len) as u64;
            if (bytes.len() as u64) != expected {
                return Err(Error::Truncated {
                    word: e.word.clone(),
                    expected,
                    found: bytes.len() as u64,
                });
            }
            let actual = payload_checksum(&bytes);
            let recorded = u64::from_str_radix(&e.checksum, 16).map_err(|err| Error::Manifest {
                path: dir.join(MANIFEST_FILE),
                message: err.to_string(),
            })?;
            if actual != recorded {
                return Err(Error::ChecksumMismatch {
                    word: e.word.clone(),
                    expected: recorded,
                    actual,
                });
            }
            let values: Vec<f64> = bytes
                .chunks_exact(4)
                .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
                .collect();
            let (mean, cov) = values.split_at(e.dim);
            let values = match e.mode {
                CovMode::Diag => Covariance::Diag(DVector::from_column_slice(cov)),
                CovMode::Full => Covariance::Full(DMatrix::from_row_slice(e.dim, e.dim, cov)),
            };
            SiblingDistribution::new(
                e.word.clone(),
                manifest.corpus_id.clone(),
                DVector::from_column_slice(mean),
                CovarianceRep {
                    values,
                    estimator: e.estimator,
                },
                e.count,
            )
        })
        .collect()
}
