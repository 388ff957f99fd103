//! Interchange data model: local descriptors, per-image descriptor sets,
//! dataset manifests, and their on-disk representation.
//!
//! Descriptor file layout (little-endian):
//!
//! ```text
//! magic    "RSIRDESC"            8 bytes
//! version  u16 = 1
//! d        u32
//! count    u32
//! count × [attention f32, scale f32, x f32, y f32, vector d × f32]
//! ```
//!
//! The manifest is a TOML document:
//!
//! ```toml
//! name = "aerial"
//! d = 1024
//! scales = [0.25, 0.3536, 0.5, 0.7071, 1.0, 1.4142, 2.0]
//! classes = ["agriculture", "airplane"]
//!
//! [[images]]
//! id = "agriculture_00"
//! class = "agriculture"
//! path = "descriptors/agriculture_00.rdesc"
//! ```
//!
//! Image paths are relative to the directory holding the manifest.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{read_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::scalar::{all_finite, Scalar};

pub const DESCRIPTOR_MAGIC: &[u8; 8] = b"RSIRDESC";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const DESCRIPTOR_EXT: &str = "rdesc";

/// Number of extraction scales in the multi-scale pyramid.
pub const NUM_SCALES: usize = 7;
/// Default local feature dimensionality.
pub const DEFAULT_DIM: usize = 1024;

/// The extraction pyramid: 0.25·(√2)^i for i = 0..6.
pub fn scale_ladder() -> [f64; NUM_SCALES] {
    let mut out = [0.0; NUM_SCALES];
    for (i, s) in out.iter_mut().enumerate() {
        *s = 0.25 * std::f64::consts::SQRT_2.powi(i as i32);
    }
    out
}

/// One attentive local feature.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalDescriptor<T> {
    pub vector: Vec<T>,
    /// Horizontal position normalized to [0, 1].
    pub x: T,
    /// Vertical position normalized to [0, 1].
    pub y: T,
    pub scale: T,
    pub attention: T,
}

impl<T: Scalar> LocalDescriptor<T> {
    pub fn new(vector: Vec<T>, x: T, y: T, scale: T, attention: T) -> Self {
        LocalDescriptor {
            vector,
            x,
            y,
            scale,
            attention,
        }
    }

    /// Checks the per-descriptor invariants against dimensionality `d`.
    pub fn check(&self, d: usize) -> Result<()> {
        if self.vector.len() != d {
            return Err(Error::dim(d, self.vector.len()));
        }
        if !all_finite(&self.vector) {
            return Err(Error::Data("non-finite descriptor entry".into()));
        }
        let unit = |v: T| v.is_finite() && v >= T::zero() && v <= T::one();
        if !unit(self.x) || !unit(self.y) {
            return Err(Error::Data(format!(
                "location ({}, {}) outside [0,1]",
                self.x, self.y
            )));
        }
        if !(self.scale.is_finite() && self.scale > T::zero()) {
            return Err(Error::Data(format!("scale {} is not positive", self.scale)));
        }
        if !(self.attention.is_finite() && self.attention >= T::zero()) {
            return Err(Error::Data(format!(
                "attention {} is negative or non-finite",
                self.attention
            )));
        }
        Ok(())
    }
}

/// All stored descriptors of one image, most attentive first.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorSet<T> {
    pub image_id: String,
    pub class_label: String,
    /// Dimensionality shared by every descriptor (kept even when empty).
    pub dim: usize,
    pub descriptors: Vec<LocalDescriptor<T>>,
}

impl<T: Scalar> DescriptorSet<T> {
    pub fn new(
        image_id: impl Into<String>,
        class_label: impl Into<String>,
        dim: usize,
        mut descriptors: Vec<LocalDescriptor<T>>,
    ) -> Result<Self> {
        for desc in &descriptors {
            desc.check(dim)?;
        }
        sort_by_attention(&mut descriptors);
        Ok(DescriptorSet {
            image_id: image_id.into(),
            class_label: class_label.into(),
            dim,
            descriptors,
        })
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    /// An empty set is legal but carries no visual content.
    pub fn is_degenerate(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn is_attention_ordered(&self) -> bool {
        self.descriptors
            .windows(2)
            .all(|w| w[0].attention >= w[1].attention)
    }

    pub fn validate(&self) -> Result<()> {
        for desc in &self.descriptors {
            desc.check(self.dim)?;
        }
        if !self.is_attention_ordered() {
            return Err(Error::Data(format!(
                "descriptors of `{}` are not ordered by attention",
                self.image_id
            )));
        }
        Ok(())
    }

    /// Serializes to the binary descriptor format.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut w = Writer::new(DESCRIPTOR_MAGIC);
        w.len_u32(self.dim)?;
        w.len_u32(self.descriptors.len())?;
        for desc in &self.descriptors {
            w.f32(desc.attention.as_f32());
            w.f32(desc.scale.as_f32());
            w.f32(desc.x.as_f32());
            w.f32(desc.y.as_f32());
            w.scalars(&desc.vector);
        }
        Ok(w.into_bytes())
    }

    /// Parses the binary descriptor format. `image_id` and `class_label`
    /// are not stored in the file and are left empty.
    pub fn from_bytes(bytes: &[u8], expected_dim: usize, source: &str) -> Result<Self> {
        let mut r = Reader::open(bytes, DESCRIPTOR_MAGIC, source)?;
        let dim_at = r.pos();
        let dim = r.u32()? as usize;
        if dim != expected_dim {
            return Err(Error::dim(expected_dim, dim));
        }
        if dim == 0 {
            return Err(r.error_at(dim_at, "zero dimensionality"));
        }
        let count = r.u32()? as usize;
        let record = 4 * (4 + dim);
        let remaining = bytes.len() - r.pos();
        if remaining < count.saturating_mul(record) {
            return Err(r.error_at(
                r.pos() + (remaining / record) * record,
                format!("truncated payload: header declares {count} records"),
            ));
        }
        let mut descriptors = Vec::with_capacity(count);
        for _ in 0..count {
            let at = r.pos();
            let attention = T::of(r.f32()? as f64);
            let scale = T::of(r.f32()? as f64);
            let x = T::of(r.f32()? as f64);
            let y = T::of(r.f32()? as f64);
            let vector = r.scalars(dim)?;
            let desc = LocalDescriptor::new(vector, x, y, scale, attention);
            desc.check(dim)
                .map_err(|e| r.error_at(at, format!("invalid record: {e}")))?;
            descriptors.push(desc);
        }
        r.finish()?;
        sort_by_attention(&mut descriptors);
        Ok(DescriptorSet {
            image_id: String::new(),
            class_label: String::new(),
            dim,
            descriptors,
        })
    }
}

/// Stable sort, most attentive first; ties keep file order.
fn sort_by_attention<T: Scalar>(descriptors: &mut [LocalDescriptor<T>]) {
    descriptors.sort_by(|a, b| b.attention.partial_cmp(&a.attention).unwrap());
}

/// Loads a descriptor file. The image id defaults to the file stem.
pub fn load_descriptor_set<T: Scalar>(
    path: &Path,
    expected_dim: usize,
) -> Result<DescriptorSet<T>> {
    let bytes = read_file(path)?;
    let mut set = DescriptorSet::from_bytes(&bytes, expected_dim, &path.display().to_string())?;
    set.image_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(set)
}

pub fn save_descriptor_set<T: Scalar>(set: &DescriptorSet<T>, path: &Path) -> Result<()> {
    let bytes = set.to_bytes()?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads only the header of a descriptor file: `(d, count)`.
pub fn peek_descriptor_header(path: &Path) -> Result<(usize, usize)> {
    let bytes = read_file(path)?;
    let mut r = Reader::open(&bytes, DESCRIPTOR_MAGIC, path.display().to_string())?;
    let d = r.u32()? as usize;
    let count = r.u32()? as usize;
    Ok((d, count))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: String,
    pub class: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub d: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scales: Vec<f64>,
    pub classes: Vec<String>,
    #[serde(default)]
    pub images: Vec<ImageEntry>,
}

impl DatasetManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    /// Looks up the class of every image id.
    pub fn label_map(&self) -> HashMap<&str, &str> {
        self.images
            .iter()
            .map(|e| (e.id.as_str(), e.class.as_str()))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationIssue {
    MissingFile {
        image_id: String,
        path: PathBuf,
    },
    DuplicateId {
        image_id: String,
    },
    UnknownClass {
        image_id: String,
        class: String,
    },
    DimensionMismatch {
        image_id: String,
        expected: usize,
        found: usize,
    },
    UnreadableFile {
        image_id: String,
        reason: String,
    },
    InvalidScales {
        found: Vec<f64>,
    },
    ZeroDimension,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::MissingFile { image_id, path } => {
                write!(f, "{image_id}: missing descriptor file {}", path.display())
            }
            ValidationIssue::DuplicateId { image_id } => {
                write!(f, "{image_id}: duplicate image id")
            }
            ValidationIssue::UnknownClass { image_id, class } => {
                write!(f, "{image_id}: class `{class}` is not declared")
            }
            ValidationIssue::DimensionMismatch {
                image_id,
                expected,
                found,
            } => write!(
                f,
                "{image_id}: dimension {found}, manifest declares {expected}"
            ),
            ValidationIssue::UnreadableFile { image_id, reason } => {
                write!(f, "{image_id}: {reason}")
            }
            ValidationIssue::InvalidScales { found } => {
                write!(
                    f,
                    "scales {found:?} differ from the 7-step √2 ladder from 0.25"
                )
            }
            ValidationIssue::ZeroDimension => write!(f, "manifest declares d = 0"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return writeln!(f, "ok");
        }
        for issue in &self.issues {
            writeln!(f, "{issue}")?;
        }
        Ok(())
    }
}

/// Lists every problem that would prevent `manifest` from loading.
pub fn validate_manifest(manifest: &DatasetManifest, root: &Path) -> ValidationReport {
    let mut issues = Vec::new();
    if manifest.d == 0 {
        issues.push(ValidationIssue::ZeroDimension);
    }
    if !manifest.scales.is_empty() {
        let ladder = scale_ladder();
        let ok = manifest.scales.len() == ladder.len()
            && manifest
                .scales
                .iter()
                .zip(ladder.iter())
                .all(|(a, b)| (a - b).abs() <= 1e-3);
        if !ok {
            issues.push(ValidationIssue::InvalidScales {
                found: manifest.scales.clone(),
            });
        }
    }
    let classes: HashSet<&str> = manifest.classes.iter().map(String::as_str).collect();
    let mut seen = HashSet::new();
    for entry in &manifest.images {
        if !seen.insert(entry.id.as_str()) {
            issues.push(ValidationIssue::DuplicateId {
                image_id: entry.id.clone(),
            });
        }
        if !classes.contains(entry.class.as_str()) {
            issues.push(ValidationIssue::UnknownClass {
                image_id: entry.id.clone(),
                class: entry.class.clone(),
            });
        }
        let path = root.join(&entry.path);
        if !path.is_file() {
            issues.push(ValidationIssue::MissingFile {
                image_id: entry.id.clone(),
                path: entry.path.clone(),
            });
            continue;
        }
        match peek_descriptor_header(&path) {
            Ok((d, _)) if d != manifest.d => issues.push(ValidationIssue::DimensionMismatch {
                image_id: entry.id.clone(),
                expected: manifest.d,
                found: d,
            }),
            Ok(_) => {}
            Err(e) => issues.push(ValidationIssue::UnreadableFile {
                image_id: entry.id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    ValidationReport { issues }
}

/// A manifest together with every image's descriptors, in manifest order.
#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub manifest: DatasetManifest,
    pub sets: Vec<DescriptorSet<T>>,
}

impl<T: Scalar> Dataset<T> {
    /// Loads `root/manifest.toml` and every descriptor file it references.
    /// Fails if the manifest does not validate cleanly.
    pub fn load(root: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(&root.join(MANIFEST_FILE))?;
        Self::load_with(manifest, root)
    }

    pub fn load_with(manifest: DatasetManifest, root: &Path) -> Result<Self> {
        let report = validate_manifest(&manifest, root);
        if !report.is_clean() {
            return Err(Error::Manifest(format!(
                "{} validation issue(s); first: {}",
                report.issues.len(),
                report.issues[0]
            )));
        }
        let sets = manifest
            .images
            .par_iter()
            .map(|entry| {
                let mut set = load_descriptor_set::<T>(&root.join(&entry.path), manifest.d)?;
                set.image_id = entry.id.clone();
                set.class_label = entry.class.clone();
                Ok(set)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { manifest, sets })
    }

    /// Writes the manifest and one descriptor file per set under `root`.
    pub fn save(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let by_id: HashMap<&str, &DescriptorSet<T>> =
            self.sets.iter().map(|s| (s.image_id.as_str(), s)).collect();
        for entry in &self.manifest.images {
            let set = by_id
                .get(entry.id.as_str())
                .ok_or_else(|| Error::Manifest(format!("no descriptors for `{}`", entry.id)))?;
            save_descriptor_set(*set, &root.join(&entry.path))?;
        }
        self.manifest.save(&root.join(MANIFEST_FILE))
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}
