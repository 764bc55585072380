//! JSON-lines dataset manifests.
//!
//! The first line is a [`ManifestHeader`]; every following line is one
//! [`ManifestRecord`]. Records are written in `(split, class_id, provenance,
//! path)` order and paths are stored relative to the manifest's directory,
//! so the same dataset always serializes to the same bytes wherever it lives.

use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Category, Dataset, DatasetError, ImageRef, Provenance};
use crate::digest::sha256_hex;
use crate::imagegen::ImageSpec;
use crate::textgen::LabelSpec;
use crate::Split;

const MAGIC: &str = "synthaug-dataset";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub manifest: String,
    pub version: u32,
    pub name: String,
    pub domain: Option<String>,
    pub image_spec: ImageSpec,
    pub labels: Vec<LabelSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub path: String,
    pub class_id: u32,
    pub label_text: String,
    pub provenance: Provenance,
    pub split: Split,
    pub domain: Option<String>,
}

/// Resolves `.` and `..` without touching the filesystem.
fn normalize(path: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    out.push("..");
                }
            }
            other => out.push(other),
        }
    }
    out
}

fn relativize(path: &Path, base: &Path) -> PathBuf {
    if !path.is_absolute() || !base.is_absolute() {
        return path.to_path_buf();
    }
    let (p, b) = (normalize(path), normalize(base));
    let pc: Vec<_> = p.components().collect();
    let bc: Vec<_> = b.components().collect();
    let common = pc.iter().zip(&bc).take_while(|(x, y)| x == y).count();
    let mut out = PathBuf::new();
    for _ in common..bc.len() {
        out.push("..");
    }
    for c in &pc[common..] {
        out.push(c);
    }
    out
}

fn absolute_base(base: &Path) -> PathBuf {
    if base.is_absolute() {
        normalize(base)
    } else {
        normalize(&std::env::current_dir().unwrap_or_default().join(base))
    }
}

/// Serializes `ds`. With a `base`, absolute image paths are written relative to it.
pub fn to_manifest_string(ds: &Dataset, base: Option<&Path>) -> String {
    let header = ManifestHeader {
        manifest: MAGIC.into(),
        version: VERSION,
        name: ds.name.clone(),
        domain: ds.domain.clone(),
        image_spec: ds.image_spec,
        labels: ds.labels(),
    };
    let mut rows: Vec<(Split, u32, Provenance, &str, &Category)> = Vec::new();
    for cat in &ds.categories {
        for (prov, r) in cat.images() {
            rows.push((r.split, cat.class_id(), prov, r.path.as_str(), cat));
        }
    }
    rows.sort_by(|a, b| (a.0, a.1, a.2, a.3).cmp(&(b.0, b.1, b.2, b.3)));
    let base = base.map(absolute_base);
    let mut out = serde_json::to_string(&header).expect("serializable header");
    out.push('\n');
    for (split, class_id, provenance, path, cat) in rows {
        let path = match &base {
            Some(b) => relativize(Path::new(path), b).to_string_lossy().into_owned(),
            None => path.to_owned(),
        };
        let rec = ManifestRecord {
            path,
            class_id,
            label_text: cat.label.label_text.clone(),
            provenance,
            split,
            domain: ds.domain.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("serializable record"));
        out.push('\n');
    }
    out
}

/// Parses a manifest. Relative paths are resolved against `base` when given.
pub fn parse_manifest(text: &str, base: Option<&Path>) -> Result<Dataset, DatasetError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(DatasetError::Parse {
        line: 1,
        message: "empty manifest".into(),
    })?;
    let header: ManifestHeader = serde_json::from_str(first).map_err(|e| DatasetError::Parse {
        line: 1,
        message: format!("bad header: {e}"),
    })?;
    if header.manifest != MAGIC || header.version != VERSION {
        return Err(DatasetError::Parse {
            line: 1,
            message: format!("not a version {VERSION} dataset manifest"),
        });
    }
    let mut ds = Dataset::new(header.name, header.image_spec, header.labels)?;
    ds.domain = header.domain;
    let base = base.map(absolute_base);
    for (i, line) in lines {
        let line_no = i + 1;
        let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let cat = ds.categories.get_mut(rec.class_id as usize).ok_or(DatasetError::Parse {
            line: line_no,
            message: format!("unknown class_id {}", rec.class_id),
        })?;
        if cat.label.label_text != rec.label_text {
            return Err(DatasetError::Parse {
                line: line_no,
                message: format!(
                    "label `{}` does not match class {} (`{}`)",
                    rec.label_text, rec.class_id, cat.label.label_text
                ),
            });
        }
        let path = match &base {
            Some(b) if Path::new(&rec.path).is_relative() => normalize(&b.join(&rec.path)).to_string_lossy().into_owned(),
            _ => rec.path,
        };
        cat.list_mut(rec.provenance).push(ImageRef { path, split: rec.split });
    }
    ds.canonicalize();
    Ok(ds)
}

pub fn save_manifest(ds: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(base).map_err(|e| DatasetError::Io {
        path: base.display().to_string(),
        message: e.to_string(),
    })?;
    let text = to_manifest_string(ds, Some(base));
    crate::imagegen::atomic_write(path, text.as_bytes()).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Reads a manifest and checks that every referenced image exists.
pub fn load_manifest(path: &Path) -> Result<Dataset, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let ds = parse_manifest(&text, Some(base))?;
    let missing: Vec<String> = ds
        .categories
        .iter()
        .flat_map(|c| c.images())
        .filter(|(_, r)| !Path::new(&r.path).exists())
        .map(|(_, r)| r.path.clone())
        .collect();
    if !missing.is_empty() {
        return Err(DatasetError::MissingImages(missing));
    }
    Ok(ds)
}

/// SHA-256 of a manifest file's bytes.
pub fn manifest_digest(path: &Path) -> Result<String, DatasetError> {
    std::fs::read(path).map(|b| sha256_hex(&b)).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Per-class image counts by provenance; handy for reports.
pub fn provenance_counts(ds: &Dataset) -> BTreeMap<(u32, Provenance), usize> {
    let mut m = BTreeMap::new();
    for c in &ds.categories {
        for (p, _) in c.images() {
            *m.entry((c.class_id(), p)).or_insert(0) += 1;
        }
    }
    m
}
