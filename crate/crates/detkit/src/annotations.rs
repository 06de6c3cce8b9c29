//! Label-file and class-config I/O plus deterministic dataset splitting.
//!
//! Label files are UTF-8 text, one annotation per line: `class cx cy w h`
//! with the box in normalized center-size form. An empty file is a valid
//! image with no objects. The class config is a line-oriented key/value
//! file naming the classes and the split directories.

use crate::geometry::{GeometryError, NormBox};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("line {line}: expected 5 fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: field {field} ({token:?}) is not a number")]
    NotANumber { line: usize, field: usize, token: String },
    #[error("line {line}: {source}")]
    BadBox { line: usize, source: GeometryError },
    #[error("line {line}: negative class id")]
    NegativeClass { line: usize },
    #[error("class config is missing key {0:?}")]
    MissingKey(&'static str),
    #[error("class config declares no class names")]
    EmptyClassList,
    #[error("class config repeats name {0:?}")]
    DuplicateClassName(String),
    #[error("class config: declared class count {declared} does not match {found} names")]
    ClassCountMismatch { declared: usize, found: usize },
    #[error("record class id {class_id} out of range for {num_classes} classes")]
    ClassIdOutOfRange { class_id: u32, num_classes: usize },
    #[error("image {stem:?} has no matching label file")]
    MissingLabel { stem: String },
    #[error("dataset of {size} entries is too small to split (need at least {min})")]
    DatasetTooSmall { size: usize, min: usize },
    #[error("split fraction {0} outside (0, 1)")]
    BadFraction(f64),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// One line of a label file: class id plus a normalized box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub class_id: u32,
    pub bbox: NormBox,
}

impl AnnotationRecord {
    /// Check the class id against a config's class list.
    pub fn validate_against(&self, config: &ClassConfig) -> Result<(), AnnotationError> {
        if (self.class_id as usize) < config.class_names.len() {
            Ok(())
        } else {
            Err(AnnotationError::ClassIdOutOfRange {
                class_id: self.class_id,
                num_classes: config.class_names.len(),
            })
        }
    }
}

/// Parse label-file text. One record per non-empty line, order preserved;
/// empty input is an image with no objects. Errors carry the 1-based line
/// number and never silently clamp out-of-range coordinates.
pub fn parse_label_file(text: &str) -> Result<Vec<AnnotationRecord>, AnnotationError> {
    let mut records = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(AnnotationError::FieldCount { line, found: fields.len() });
        }
        let mut nums = [0f64; 5];
        for (field, (slot, token)) in nums.iter_mut().zip(fields.iter()).enumerate() {
            *slot = token.parse().map_err(|_| AnnotationError::NotANumber {
                line,
                field: field + 1,
                token: token.to_string(),
            })?;
        }
        if nums[0] < 0.0 || nums[0].fract() != 0.0 {
            return Err(AnnotationError::NegativeClass { line });
        }
        let bbox = NormBox::new(nums[1], nums[2], nums[3], nums[4])
            .map_err(|source| AnnotationError::BadBox { line, source })?;
        records.push(AnnotationRecord { class_id: nums[0] as u32, bbox });
    }
    Ok(records)
}

/// Serialize records one per line with fixed 6-decimal coordinates so output
/// is byte-reproducible. The parser accepts any precision.
pub fn write_label_file(records: &[AnnotationRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!(
            "{} {:.6} {:.6} {:.6} {:.6}\n",
            r.class_id, r.bbox.cx, r.bbox.cy, r.bbox.w, r.bbox.h
        ));
    }
    out
}

/// Class names and split directory references.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassConfig {
    pub class_names: Vec<String>,
    pub train_path: String,
    pub val_path: String,
    pub test_path: String,
}

/// Strip optional quotes from a config token.
fn unquote(s: &str) -> String {
    let s = s.trim();
    let s = s.strip_prefix('\'').and_then(|t| t.strip_suffix('\'')).unwrap_or(s);
    let s = s.strip_prefix('"').and_then(|t| t.strip_suffix('"')).unwrap_or(s);
    s.to_string()
}

/// Parse the class-config format: `key: value` lines with `train`, `val`,
/// `test` paths and a `names` list, either bracketed on one line
/// (`names: [polyp]`) or as indented `- name` continuation lines. An
/// optional `nc:` count is cross-checked when present.
pub fn parse_class_config(text: &str) -> Result<ClassConfig, AnnotationError> {
    let mut values: BTreeMap<String, String> = BTreeMap::new();
    let mut names: Vec<String> = Vec::new();
    let mut in_names_block = false;
    for raw in text.lines() {
        let line = raw.trim_end();
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        if in_names_block {
            if let Some(item) = line.trim_start().strip_prefix("- ") {
                names.push(unquote(item));
                continue;
            }
            in_names_block = false;
        }
        if let Some((key, value)) = line.split_once(':') {
            let key = key.trim().to_string();
            let value = value.trim();
            if key == "names" {
                if value.is_empty() {
                    in_names_block = true;
                } else {
                    let inner = value.trim_start_matches('[').trim_end_matches(']');
                    names = inner
                        .split(',')
                        .map(unquote)
                        .filter(|s| !s.is_empty())
                        .collect();
                }
            } else {
                values.insert(key, value.to_string());
            }
        }
    }
    if names.is_empty() {
        return Err(AnnotationError::EmptyClassList);
    }
    let mut seen = std::collections::BTreeSet::new();
    for n in &names {
        if !seen.insert(n.clone()) {
            return Err(AnnotationError::DuplicateClassName(n.clone()));
        }
    }
    if let Some(nc) = values.get("nc") {
        let declared: usize = nc
            .parse()
            .map_err(|_| AnnotationError::ClassCountMismatch { declared: 0, found: names.len() })?;
        if declared != names.len() {
            return Err(AnnotationError::ClassCountMismatch { declared, found: names.len() });
        }
    }
    let take = |key: &'static str| -> Result<String, AnnotationError> {
        values.get(key).cloned().ok_or(AnnotationError::MissingKey(key))
    };
    Ok(ClassConfig {
        class_names: names,
        train_path: take("train")?,
        val_path: take("val")?,
        test_path: take("test")?,
    })
}

/// Serialize a class config in the same key/value shape the parser reads.
pub fn write_class_config(config: &ClassConfig) -> String {
    let names = config
        .class_names
        .iter()
        .map(|n| format!("'{n}'"))
        .collect::<Vec<_>>()
        .join(", ");
    format!(
        "train: {}\nval: {}\ntest: {}\nnc: {}\nnames: [{}]\n",
        config.train_path,
        config.val_path,
        config.test_path,
        config.class_names.len(),
        names
    )
}

/// One dataset entry: an image file and its same-stem label file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub stem: String,
    pub image: PathBuf,
    pub label: PathBuf,
}

/// An immutable listing of (image, label) pairs, sorted by stem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub entries: Vec<DatasetEntry>,
    /// Expected image edge lengths, when known (640x640 in the reference layout).
    pub image_size: Option<(u32, u32)>,
}

impl DatasetIndex {
    /// Scan a dataset root containing sibling `images/` and `labels/`
    /// directories with matching file stems. Every image must have exactly
    /// one label file.
    pub fn scan(root: &Path) -> Result<Self, AnnotationError> {
        let images_dir = root.join("images");
        let labels_dir = root.join("labels");
        let io_err = |path: &Path, source: std::io::Error| AnnotationError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut entries = Vec::new();
        let rd = std::fs::read_dir(&images_dir).map_err(|e| io_err(&images_dir, e))?;
        for entry in rd {
            let entry = entry.map_err(|e| io_err(&images_dir, e))?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("ppm") {
                continue;
            }
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            let label = labels_dir.join(format!("{stem}.txt"));
            if !label.is_file() {
                return Err(AnnotationError::MissingLabel { stem });
            }
            entries.push(DatasetEntry { stem, image: path, label });
        }
        entries.sort_by(|a, b| a.stem.cmp(&b.stem));
        Ok(Self { entries, image_size: None })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn subset(&self, picks: &[usize]) -> DatasetIndex {
        let mut entries: Vec<DatasetEntry> =
            picks.iter().map(|&i| self.entries[i].clone()).collect();
        entries.sort_by(|a, b| a.stem.cmp(&b.stem));
        DatasetIndex { entries, image_size: self.image_size }
    }
}

/// Split ratios and the shuffle seed. Defaults: 20% test, then 20% of the
/// remaining training data as validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub val_fraction_of_train: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(test_fraction: f64, val_fraction_of_train: f64, seed: u64) -> Result<Self, AnnotationError> {
        for f in [test_fraction, val_fraction_of_train] {
            if !(f > 0.0 && f < 1.0) {
                return Err(AnnotationError::BadFraction(f));
            }
        }
        Ok(Self { test_fraction, val_fraction_of_train, seed })
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { test_fraction: 0.20, val_fraction_of_train: 0.20, seed: 0 }
    }
}

/// The three disjoint partitions produced by [`split_dataset`].
#[derive(Debug, Clone)]
pub struct SplitResult {
    pub train: DatasetIndex,
    pub val: DatasetIndex,
    pub test: DatasetIndex,
}

impl fmt::Display for SplitResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "train {} / val {} / test {}",
            self.train.len(),
            self.val.len(),
            self.test.len()
        )
    }
}

/// Deterministic shuffled split. Test size is `round(test_fraction * N)`
/// (half-up), validation is `round(val_fraction * remaining)` from what is
/// left, and training takes the rest; the partitions are disjoint and
/// exhaustive.
pub fn split_dataset(index: &DatasetIndex, spec: &SplitSpec) -> Result<SplitResult, AnnotationError> {
    let n = index.len();
    if n < 5 {
        return Err(AnnotationError::DatasetTooSmall { size: n, min: 5 });
    }
    SplitSpec::new(spec.test_fraction, spec.val_fraction_of_train, spec.seed)?;

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);

    let test_count = (spec.test_fraction * n as f64).round() as usize;
    let remaining = n - test_count;
    let val_count = (spec.val_fraction_of_train * remaining as f64).round() as usize;
    if test_count == 0 || val_count == 0 || test_count + val_count >= n {
        return Err(AnnotationError::DatasetTooSmall { size: n, min: 5 });
    }

    let test = index.subset(&order[..test_count]);
    let val = index.subset(&order[test_count..test_count + val_count]);
    let train = index.subset(&order[test_count + val_count..]);
    Ok(SplitResult { train, val, test })
}
