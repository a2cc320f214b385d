//! On-disk sibling-embedding archives.
//!
//! An archive is a directory holding a plain-text `manifest` (TOML) and one
//! `<word>.f32` payload per word. Each payload is `count × dim` little-endian
//! IEEE-754 `f32` values in row-major order. The manifest records a 64-bit
//! checksum of the raw payload bytes so corruption is caught before parsing.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest";
pub const SCHEMA_VERSION: u32 = 1;
const PAYLOAD_EXT: &str = "f32";

/// Which hidden layers the extractor pooled. Carried as metadata only.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum LayerMode {
    Last,
    MeanLastFour,
    Other(String),
}

impl From<String> for LayerMode {
    fn from(s: String) -> Self {
        match s.as_str() {
            "last" => LayerMode::Last,
            "mean-last-four" => LayerMode::MeanLastFour,
            _ => LayerMode::Other(s),
        }
    }
}

impl From<LayerMode> for String {
    fn from(mode: LayerMode) -> Self {
        mode.to_string()
    }
}

impl fmt::Display for LayerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerMode::Last => f.write_str("last"),
            LayerMode::MeanLastFour => f.write_str("mean-last-four"),
            LayerMode::Other(s) => f.write_str(s),
        }
    }
}

/// All token embeddings of one word in one corpus, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SiblingSet {
    word: String,
    corpus_id: String,
    layer_mode: LayerMode,
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl SiblingSet {
    /// Builds a set from a row-major buffer of `rows × dim` values.
    pub fn new(
        word: impl Into<String>,
        corpus_id: impl Into<String>,
        layer_mode: LayerMode,
        dim: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        let word = word.into();
        if dim == 0 {
            return Err(Error::Shape(format!("{word:?}: dimension must be positive")));
        }
        if data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{word:?}: {} values do not form a non-empty matrix with {dim} columns",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("sibling set {word:?}"),
                index,
            });
        }
        Ok(Self {
            rows: data.len() / dim,
            word,
            corpus_id: corpus_id.into(),
            layer_mode,
            dim,
            data,
        })
    }

    /// Convenience constructor from explicit rows.
    pub fn from_rows(
        word: impl Into<String>,
        corpus_id: impl Into<String>,
        layer_mode: LayerMode,
        rows: &[Vec<f32>],
    ) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        Self::new(word, corpus_id, layer_mode, dim, rows.concat())
    }

    pub fn word(&self) -> &str {
        &self.word
    }

    pub fn corpus_id(&self) -> &str {
        &self.corpus_id
    }

    pub fn layer_mode(&self) -> &LayerMode {
        &self.layer_mode
    }

    /// Number of siblings (N).
    pub fn count(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    fn payload_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordEntry {
    pub surface: String,
    pub count: usize,
    pub file: PathBuf,
    #[serde(with = "hex_u64")]
    pub checksum: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub schema_version: u32,
    pub corpus_id: String,
    pub dim: usize,
    pub layer_mode: LayerMode,
    #[serde(default)]
    pub words: Vec<WordEntry>,
}

impl ArchiveManifest {
    pub fn entry(&self, word: &str) -> Option<&WordEntry> {
        self.words.iter().find(|e| e.surface == word)
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> + '_ {
        self.words.iter().map(|e| e.surface.as_str())
    }

    fn validate(&self, path: &Path) -> Result<()> {
        let bad = |message: String| Error::Manifest {
            path: path.to_path_buf(),
            message,
        };
        if self.schema_version != SCHEMA_VERSION {
            return Err(bad(format!(
                "unsupported schema version {}",
                self.schema_version
            )));
        }
        if self.dim == 0 && !self.words.is_empty() {
            return Err(bad("dim must be positive".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for entry in &self.words {
            if !seen.insert(entry.surface.as_str()) {
                return Err(Error::DuplicateWord(entry.surface.clone()));
            }
            if entry.count == 0 {
                return Err(bad(format!("{:?} has zero count", entry.surface)));
            }
            let escapes = entry
                .file
                .components()
                .any(|c| !matches!(c, Component::Normal(_)));
            if escapes {
                return Err(bad(format!(
                    "payload path {} must stay inside the archive",
                    entry.file.display()
                )));
            }
        }
        Ok(())
    }
}

/// 64-bit checksum of a raw payload: the leading eight bytes of its SHA-256.
pub fn payload_checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn payload_file_name(word: &str) -> Result<PathBuf> {
    let unsafe_name = word.is_empty()
        || word == "."
        || word == ".."
        || word.contains(['/', '\\', '\0']);
    if unsafe_name {
        return Err(Error::InvalidWord(word.to_string()));
    }
    Ok(PathBuf::from(format!("{word}.{PAYLOAD_EXT}")))
}

/// Writes `sets` as an archive under `dir`, creating the directory if needed.
///
/// All sets must share `dim`, `corpus_id` and `layer_mode`. An empty list
/// produces a manifest with no words.
pub fn write_archive(sets: &[SiblingSet], dir: &Path) -> Result<ArchiveManifest> {
    let (corpus_id, dim, layer_mode) = match sets.first() {
        Some(s) => (s.corpus_id.clone(), s.dim, s.layer_mode.clone()),
        None => (String::new(), 0, LayerMode::Last),
    };

    let mut seen = std::collections::HashSet::new();
    for set in sets {
        if set.dim != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: set.dim,
            });
        }
        if set.corpus_id != corpus_id {
            return Err(Error::CorpusMismatch {
                expected: corpus_id,
                found: set.corpus_id.clone(),
            });
        }
        if set.layer_mode != layer_mode {
            return Err(Error::Incompatible(format!(
                "layer mode {} differs from {}",
                set.layer_mode, layer_mode
            )));
        }
        if !seen.insert(set.word.as_str()) {
            return Err(Error::DuplicateWord(set.word.clone()));
        }
        payload_file_name(&set.word)?;
    }

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut words = Vec::with_capacity(sets.len());
    for set in sets {
        let file = payload_file_name(&set.word)?;
        let bytes = set.payload_bytes();
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        words.push(WordEntry {
            surface: set.word.clone(),
            count: set.rows,
            file,
            checksum: payload_checksum(&bytes),
        });
    }

    let manifest = ArchiveManifest {
        schema_version: SCHEMA_VERSION,
        corpus_id,
        dim,
        layer_mode,
        words,
    };
    let text = toml::to_string_pretty(&manifest).map_err(|e| Error::Manifest {
        path: dir.join(MANIFEST_FILE),
        message: e.to_string(),
    })?;
    let path = dir.join(MANIFEST_FILE);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(text.as_bytes())
        .map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// An opened archive: its directory plus the parsed manifest.
#[derive(Debug, Clone)]
pub struct Archive {
    root: PathBuf,
    manifest: ArchiveManifest,
}

impl Archive {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let root = dir.as_ref().to_path_buf();
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: ArchiveManifest = toml::from_str(&text).map_err(|e| Error::Manifest {
            path: path.clone(),
            message: e.to_string(),
        })?;
        manifest.validate(&path)?;
        Ok(Self { root, manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &ArchiveManifest {
        &self.manifest
    }

    pub fn dim(&self) -> usize {
        self.manifest.dim
    }

    pub fn corpus_id(&self) -> &str {
        &self.manifest.corpus_id
    }

    pub fn contains(&self, word: &str) -> bool {
        self.manifest.entry(word).is_some()
    }

    /// Loads and validates the siblings of `word`.
    pub fn read(&self, word: &str) -> Result<SiblingSet> {
        read_sibling_set(&self.root, &self.manifest, word)
    }

    /// Checksums of every payload, in manifest order.
    pub fn checksums(&self) -> Vec<u64> {
        self.manifest.words.iter().map(|e| e.checksum).collect()
    }
}

/// Reads one word's payload from the archive rooted at `root`.
pub fn read_sibling_set(root: &Path, manifest: &ArchiveManifest, word: &str) -> Result<SiblingSet> {
    let entry = manifest
        .entry(word)
        .ok_or_else(|| Error::UnknownWord(word.to_string()))?;
    let path = root.join(&entry.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;

    let expected = 4 * entry.count as u64 * manifest.dim as u64;
    let found = bytes.len() as u64;
    if found < expected {
        return Err(Error::Truncated {
            word: word.to_string(),
            expected,
            found,
        });
    }
    if found > expected {
        return Err(Error::Shape(format!(
            "{word:?}: payload has {found} bytes, manifest implies {expected}"
        )));
    }

    let actual = payload_checksum(&bytes);
    if actual != entry.checksum {
        return Err(Error::ChecksumMismatch {
            word: word.to_string(),
            expected: entry.checksum,
            actual,
        });
    }

    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    SiblingSet::new(
        word,
        manifest.corpus_id.clone(),
        manifest.layer_mode.clone(),
        manifest.dim,
        data,
    )
}

mod hex_u64 {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:016x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let s = String::deserialize(d)?;
        u64::from_str_radix(s.trim_start_matches("0x"), 16).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(word: &str, rows: &[Vec<f32>]) -> SiblingSet {
        SiblingSet::from_rows(word, "c1", LayerMode::Last, rows).unwrap()
    }

    #[test]
    fn payload_is_count_times_dim_floats() {
        let dir = tempfile::tempdir().unwrap();
        let s = set("cell", &[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        let manifest = write_archive(&[s], dir.path()).unwrap();
        assert_eq!(manifest.dim, 3);
        assert_eq!(manifest.words[0].count, 2);
        let len = fs::metadata(dir.path().join("cell.f32")).unwrap().len();
        assert_eq!(len, 24);
    }

    #[test]
    fn empty_archive_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_archive(&[], dir.path()).unwrap();
        assert!(manifest.words.is_empty());
        let archive = Archive::open(dir.path()).unwrap();
        assert_eq!(archive.manifest().words.len(), 0);
    }

    #[test]
    fn read_back_has_manifest_row_count() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<Vec<f32>> = (0..5).map(|i| vec![i as f32, 0.5]).collect();
        write_archive(&[set("tip", &rows)], dir.path()).unwrap();
        let loaded = Archive::open(dir.path()).unwrap().read("tip").unwrap();
        assert_eq!(loaded.count(), 5);
        assert_eq!(loaded.row(3), &[3.0, 0.5]);
    }

    #[test]
    fn rejects_mismatched_dims_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let a = set("a", &[vec![1.0, 2.0]]);
        let b = set("b", &[vec![1.0, 2.0, 3.0]]);
        assert!(matches!(
            write_archive(&[a.clone(), b], dir.path()),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            write_archive(&[a.clone(), a], dir.path()),
            Err(Error::DuplicateWord(_))
        ));
    }

    #[test]
    fn rejects_path_like_words() {
        let dir = tempfile::tempdir().unwrap();
        let s = set("../x", &[vec![1.0]]);
        assert!(matches!(
            write_archive(&[s], dir.path()),
            Err(Error::InvalidWord(_))
        ));
    }

    #[test]
    fn truncated_payload_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_archive(&[set("bit", &[vec![1.0, 2.0], vec![3.0, 4.0]])], dir.path()).unwrap();
        let path = dir.path().join("bit.f32");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        let err = Archive::open(dir.path()).unwrap().read("bit").unwrap_err();
        assert!(matches!(err, Error::Truncated { expected: 16, found: 12, .. }), "{err}");
    }

    #[test]
    fn unknown_word_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_archive(&[set("bit", &[vec![1.0]])], dir.path()).unwrap();
        let err = Archive::open(dir.path()).unwrap().read("byte").unwrap_err();
        assert!(matches!(err, Error::UnknownWord(_)));
    }

    #[test]
    fn non_finite_payload_is_rejected_after_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest =
            write_archive(&[set("nan", &[vec![1.0, 2.0]])], dir.path()).unwrap();
        let bytes: Vec<u8> = [1.0f32, f32::NAN].iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.path().join("nan.f32"), &bytes).unwrap();
        manifest.words[0].checksum = payload_checksum(&bytes);
        let err = read_sibling_set(dir.path(), &manifest, "nan").unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1, .. }));
    }

    #[test]
    fn sibling_set_rejects_bad_shapes() {
        assert!(SiblingSet::new("w", "c", LayerMode::Last, 0, vec![]).is_err());
        assert!(SiblingSet::new("w", "c", LayerMode::Last, 2, vec![]).is_err());
        assert!(SiblingSet::new("w", "c", LayerMode::Last, 2, vec![1.0; 3]).is_err());
        assert!(SiblingSet::new("w", "c", LayerMode::Last, 1, vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn layer_mode_round_trips_through_strings() {
        for mode in [
            LayerMode::Last,
            LayerMode::MeanLastFour,
            LayerMode::Other("all-twelve".into()),
        ] {
            assert_eq!(LayerMode::from(String::from(mode.clone())), mode);
        }
    }
}
