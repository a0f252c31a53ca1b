//! Embedding interchange format.
//!
//! A bundle directory holds two files:
//!
//! * `manifest.json`: `{ "dtype": "f32", "dim", "count", "ids", "labels"?, "groups"? }`
//! * `embeddings.bin`: `count × dim` little-endian `f32`, row-major, no header.
//!
//! Extra top-level manifest keys (encoder id, preprocessing hash, ...) are
//! carried through untouched.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";

/// Rows whose norm falls below this are rejected at load time.
pub const MIN_ROW_NORM: f64 = 1e-12;

/// Ground-truth contextual attribute values for one row: attribute name to
/// value name.
pub type GroupValues = BTreeMap<String, String>;

/// Dense row-major `f32` matrix with one id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, ids: Vec<String>, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("embedding dim must be positive".into()));
        }
        if ids.len() * dim != data.len() {
            return Err(Error::Invalid(format!(
                "{} ids × dim {} does not match {} values",
                ids.len(),
                dim,
                data.len()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Invalid(format!("duplicate row id `{id}`")));
            }
        }
        Ok(Self { dim, ids, data })
    }

    /// Builds a matrix from rows, checking that every row has length `dim`.
    pub fn from_rows(dim: usize, ids: Vec<String>, rows: &[Vec<f32>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, ids, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    /// Map from id to row index.
    pub fn index(&self) -> std::collections::HashMap<&str, usize> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }

    /// Rescales every row to unit Euclidean norm.
    pub fn normalize_rows(&mut self) -> Result<()> {
        for (row, id) in self.data.chunks_exact_mut(self.dim).zip(&self.ids) {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Metadata {
                    id: id.clone(),
                    message: "row contains a non-finite value".into(),
                });
            }
            let n = numeric::norm(row);
            if n < MIN_ROW_NORM {
                return Err(Error::ZeroNorm { id: id.clone() });
            }
            for v in row.iter_mut() {
                *v = (f64::from(*v) / n) as f32;
            }
        }
        Ok(())
    }
}

/// Per-row labels and ground-truth group attributes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageMetadata {
    pub labels: Option<Vec<Option<usize>>>,
    pub groups: Option<Vec<Option<GroupValues>>>,
}

impl ImageMetadata {
    pub fn label(&self, row: usize) -> Option<usize> {
        self.labels.as_ref().and_then(|l| l[row])
    }

    pub fn group(&self, row: usize) -> Option<&GroupValues> {
        self.groups.as_ref().and_then(|g| g[row].as_ref())
    }
}

/// One bundle directory: a matrix plus optional metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub matrix: EmbeddingMatrix,
    pub metadata: ImageMetadata,
    /// Unrecognised manifest keys, preserved on save.
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl EmbeddingSet {
    pub fn new(matrix: EmbeddingMatrix, metadata: ImageMetadata) -> Result<Self> {
        let n = matrix.rows();
        if let Some(labels) = &metadata.labels {
            if labels.len() != n {
                return Err(Error::Invalid(format!(
                    "{} labels for {n} rows",
                    labels.len()
                )));
            }
        }
        if let Some(groups) = &metadata.groups {
            if groups.len() != n {
                return Err(Error::Invalid(format!(
                    "{} group entries for {n} rows",
                    groups.len()
                )));
            }
        }
        Ok(Self {
            matrix,
            metadata,
            extra: BTreeMap::new(),
        })
    }

    /// Bare matrix with no metadata (text embeddings).
    pub fn texts(matrix: EmbeddingMatrix) -> Self {
        Self {
            matrix,
            metadata: ImageMetadata::default(),
            extra: BTreeMap::new(),
        }
    }

    /// Checks that every present label is a valid class id.
    pub fn check_labels(&self, n_classes: usize) -> Result<()> {
        if let Some(labels) = &self.metadata.labels {
            for (i, label) in labels.iter().enumerate() {
                if let Some(l) = label {
                    if *l >= n_classes {
                        return Err(Error::Metadata {
                            id: self.matrix.ids[i].clone(),
                            message: format!("label {l} out of range ({n_classes} classes)"),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Images and the text embeddings they are scored against.
#[derive(Debug, Clone)]
pub struct EmbeddingBundle {
    pub images: EmbeddingSet,
    pub texts: EmbeddingMatrix,
}

impl EmbeddingBundle {
    pub fn new(images: EmbeddingSet, texts: EmbeddingMatrix) -> Result<Self> {
        if images.matrix.dim() != texts.dim() {
            return Err(Error::DimMismatch {
                expected: images.matrix.dim(),
                found: texts.dim(),
            });
        }
        Ok(Self { images, texts })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    dtype: String,
    dim: usize,
    count: usize,
    ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<Option<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    groups: Option<Vec<Option<GroupValues>>>,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

/// Writes `manifest.json` and `embeddings.bin` into `dir`, creating it if
/// needed. Output bytes depend only on the input.
pub fn save_bundle(set: &EmbeddingSet, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let m = &set.matrix;
    let manifest = ManifestFile {
        dtype: "f32".into(),
        dim: m.dim,
        count: m.rows(),
        ids: m.ids.clone(),
        labels: set.metadata.labels.clone(),
        groups: set.metadata.groups.clone(),
        extra: set.extra.clone(),
    };
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    json.push(b'\n');
    let manifest_path = dir.join(MANIFEST_FILE);
    std::fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;

    let mut bytes = Vec::with_capacity(m.data.len() * 4);
    for v in &m.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let bin_path = dir.join(EMBEDDINGS_FILE);
    std::fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))
}

/// Reads a bundle directory without touching the float data.
pub fn load_raw(dir: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: ManifestFile = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: manifest_path.clone(),
        source,
    })?;
    let bad = |message: String| Error::Store {
        path: manifest_path.clone(),
        message,
    };
    if manifest.dtype != "f32" {
        return Err(bad(format!("unsupported dtype `{}`", manifest.dtype)));
    }
    if manifest.dim == 0 {
        return Err(bad("dim must be positive".into()));
    }
    if manifest.ids.len() != manifest.count {
        return Err(bad(format!(
            "count is {} but {} ids are listed",
            manifest.count,
            manifest.ids.len()
        )));
    }

    let bin_path = dir.join(EMBEDDINGS_FILE);
    let bytes = std::fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let expected = manifest.count * manifest.dim * 4;
    if bytes.len() != expected {
        return Err(Error::Store {
            path: bin_path,
            message: format!(
                "expected {expected} bytes for {} × {} f32, found {}",
                manifest.count,
                manifest.dim,
                bytes.len()
            ),
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let matrix = EmbeddingMatrix::new(manifest.dim, manifest.ids, data).map_err(|e| bad(e.to_string()))?;
    let mut set = EmbeddingSet::new(
        matrix,
        ImageMetadata {
            labels: manifest.labels,
            groups: manifest.groups,
        },
    )
    .map_err(|e| bad(e.to_string()))?;
    set.extra = manifest.extra;
    Ok(set)
}

/// Reads a bundle directory and rescales every row to unit norm.
pub fn load_normalized(dir: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let mut set = load_raw(dir)?;
    set.matrix.normalize_rows()?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("r{i}")).collect()
    }

    #[test]
    fn normalizes_three_four_five() {
        let dir = tempfile::tempdir().unwrap();
        let m = EmbeddingMatrix::new(2, ids(1), vec![3.0, 4.0]).unwrap();
        save_bundle(&EmbeddingSet::texts(m), dir.path()).unwrap();
        let loaded = load_normalized(dir.path()).unwrap();
        assert_eq!(loaded.matrix.row(0), &[0.6, 0.8]);
    }

    #[test]
    fn zero_row_is_rejected_by_id() {
        let dir = tempfile::tempdir().unwrap();
        let m = EmbeddingMatrix::new(2, vec!["a".into(), "zero".into()], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        save_bundle(&EmbeddingSet::texts(m), dir.path()).unwrap();
        match load_normalized(dir.path()) {
            Err(Error::ZeroNorm { id }) => assert_eq!(id, "zero"),
            other => panic!("expected zero-norm error, got {other:?}"),
        }
    }

    #[test]
    fn empty_bundle_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let m = EmbeddingMatrix::new(8, vec![], vec![]).unwrap();
        save_bundle(&EmbeddingSet::texts(m.clone()), dir.path()).unwrap();
        let manifest: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(manifest["count"], 0);
        assert_eq!(std::fs::metadata(dir.path().join(EMBEDDINGS_FILE)).unwrap().len(), 0);
        assert_eq!(load_normalized(dir.path()).unwrap().matrix, m);
    }

    #[test]
    fn truncated_binary_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let m = EmbeddingMatrix::new(2, ids(2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        save_bundle(&EmbeddingSet::texts(m), dir.path()).unwrap();
        let bin = dir.path().join(EMBEDDINGS_FILE);
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() - 3]).unwrap();
        let err = load_raw(dir.path()).unwrap_err();
        assert!(err.to_string().contains("expected 16 bytes"), "{err}");
    }

    #[test]
    fn rejects_bad_dtype_and_count() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join(MANIFEST_FILE),
            r#"{"dtype":"f16","dim":2,"count":0,"ids":[]}"#,
        )
        .unwrap();
        std::fs::write(dir.path().join(EMBEDDINGS_FILE), b"").unwrap();
        assert!(load_raw(dir.path()).unwrap_err().to_string().contains("dtype"));

        std::fs::write(
            dir.path().join(MANIFEST_FILE),
            r#"{"dtype":"f32","dim":2,"count":1,"ids":[]}"#,
        )
        .unwrap();
        assert!(load_raw(dir.path()).unwrap_err().to_string().contains("count"));
    }

    #[test]
    fn metadata_and_extra_keys_survive() {
        let dir = tempfile::tempdir().unwrap();
        let m = EmbeddingMatrix::new(2, ids(2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let mut g = GroupValues::new();
        g.insert("background".into(), "on water".into());
        let mut set = EmbeddingSet::new(
            m,
            ImageMetadata {
                labels: Some(vec![Some(1), None]),
                groups: Some(vec![Some(g.clone()), None]),
            },
        )
        .unwrap();
        set.extra.insert("encoder".into(), serde_json::json!("ViT-B/16"));
        save_bundle(&set, dir.path()).unwrap();
        let loaded = load_raw(dir.path()).unwrap();
        assert_eq!(loaded, set);
        assert_eq!(loaded.metadata.group(0), Some(&g));
        assert_eq!(loaded.metadata.label(1), None);
        assert!(loaded.check_labels(2).is_ok());
        assert!(loaded.check_labels(1).is_err());
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        assert!(EmbeddingMatrix::new(1, vec!["a".into(), "a".into()], vec![1.0, 2.0]).is_err());
        assert!(EmbeddingMatrix::new(2, ids(1), vec![1.0]).is_err());
    }

    #[test]
    fn bundle_requires_matching_dims() {
        let images = EmbeddingSet::texts(EmbeddingMatrix::new(2, ids(1), vec![1.0, 0.0]).unwrap());
        let texts = EmbeddingMatrix::new(3, ids(1), vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            EmbeddingBundle::new(images, texts),
            Err(Error::DimMismatch { expected: 2, found: 3 })
        ));
    }
}
