use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Result};

/// The two coral classes. `Bleached` is the positive class for metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Healthy,
    Bleached,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Healthy, Label::Bleached];

    /// Class index used for network outputs.
    pub fn index(self) -> usize {
        match self {
            Label::Healthy => 0,
            Label::Bleached => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<Label> {
        Label::ALL.get(index).copied()
    }

    /// Directory name under the dataset root.
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Healthy => "healthy",
            Label::Bleached => "bleached",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "healthy" => Ok(Label::Healthy),
            "bleached" => Ok(Label::Bleached),
            other => Err(DataError::Manifest(format!(
                "unknown label `{other}` (expected bleached or healthy)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the dataset root, `/`-separated.
    pub path: String,
    pub label: Label,
}

impl ManifestEntry {
    pub fn new(path: impl Into<String>, label: Label) -> Self {
        Self {
            path: path.into(),
            label,
        }
    }
}

/// Ordered, duplicate-free list of labelled images.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert(e.path.as_str()) {
                return Err(DataError::Manifest(format!("duplicate path `{}`", e.path)));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.entries.iter().filter(|e| e.label == label).count()
    }

    /// `(bleached, healthy)`.
    pub fn counts(&self) -> (usize, usize) {
        (self.count(Label::Bleached), self.count(Label::Healthy))
    }

    /// CSV with header `path,label` and LF line endings.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(sink);
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(source: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(source);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["path", "label"] {
            return Err(DataError::Manifest(format!(
                "manifest header must be `path,label`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut entries = Vec::new();
        for row in r.records() {
            let row = row?;
            let line = row.position().map_or(0, |p| p.line());
            let (Some(path), Some(label)) = (row.get(0), row.get(1)) else {
                return Err(DataError::Manifest(format!("line {line}: expected two fields")));
            };
            let label = label
                .parse()
                .map_err(|e| DataError::Manifest(format!("line {line}: {e}")))?;
            entries.push(ManifestEntry::new(path, label));
        }
        Self::new(entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = fs::File::create(path.as_ref())?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(fs::File::open(path.as_ref())?)
    }
}

/// File extensions treated as images when scanning a dataset tree.
pub const IMAGE_EXTENSIONS: [&str; 4] = ["ppm", "png", "jpg", "jpeg"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.iter().any(|x| x.eq_ignore_ascii_case(e)))
}

/// Result of scanning a dataset root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestScan {
    pub manifest: DatasetManifest,
    /// Non-image files that were ignored.
    pub skipped: usize,
}

/// Enumerates `<root>/bleached` and `<root>/healthy` in lexicographic path
/// order.
pub fn scan_dataset(root: impl AsRef<Path>) -> Result<ManifestScan> {
    let root = root.as_ref();
    let mut entries = Vec::new();
    let mut skipped = 0;
    for label in [Label::Bleached, Label::Healthy] {
        let dir = root.join(label.as_str());
        if !dir.is_dir() {
            return Err(DataError::Layout(format!(
                "missing class directory {}",
                dir.display()
            )));
        }
        let mut names = Vec::new();
        for item in fs::read_dir(&dir)? {
            let item = item?;
            if !item.file_type()?.is_file() {
                continue;
            }
            let path = item.path();
            if !is_image(&path) {
                skipped += 1;
                continue;
            }
            let Some(name) = item.file_name().to_str().map(str::to_owned) else {
                skipped += 1;
                continue;
            };
            names.push(name);
        }
        names.sort();
        entries.extend(
            names
                .into_iter()
                .map(|n| ManifestEntry::new(format!("{}/{n}", label.as_str()), label)),
        );
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} non-image files under {}", root.display());
    }
    Ok(ManifestScan {
        manifest: DatasetManifest::new(entries)?,
        skipped,
    })
}

pub fn build_manifest(root: impl AsRef<Path>) -> Result<DatasetManifest> {
    scan_dataset(root).map(|s| s.manifest)
}

/// How validation counts are derived from the fraction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// `ceil(fraction * class_count)` per class.
    #[default]
    Stratified,
    /// `ceil(fraction * total)` over the whole shuffled manifest.
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub validation_fraction: f64,
    pub seed: u64,
    pub rule: SplitRule,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            validation_fraction: 0.25,
            seed: 0,
            rule: SplitRule::Stratified,
        }
    }
}

impl SplitSpec {
    pub fn new(validation_fraction: f64, seed: u64) -> Self {
        Self {
            validation_fraction,
            seed,
            ..Self::default()
        }
    }

    pub fn with_rule(mut self, rule: SplitRule) -> Self {
        self.rule = rule;
        self
    }
}

/// `ceil(fraction * n)`, ignoring floating-point noise just above an integer.
fn ceil_count(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Deterministic train/validation partition. Both halves keep the original
/// manifest order.
pub fn split(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<(DatasetManifest, DatasetManifest)> {
    let f = spec.validation_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(DataError::Argument(format!(
            "validation fraction {f} must lie strictly between 0 and 1"
        )));
    }
    let total = manifest.len();
    if total < 2 {
        return Err(DataError::Argument(format!(
            "cannot split a manifest of {total} entries"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut in_val = vec![false; total];
    match spec.rule {
        SplitRule::Stratified => {
            for label in [Label::Bleached, Label::Healthy] {
                let mut idx: Vec<usize> = (0..total)
                    .filter(|&i| manifest.entries[i].label == label)
                    .collect();
                let take = ceil_count(f, idx.len());
                idx.shuffle(&mut rng);
                for &i in &idx[..take] {
                    in_val[i] = true;
                }
            }
        }
        SplitRule::Global => {
            let mut idx: Vec<usize> = (0..total).collect();
            idx.shuffle(&mut rng);
            for &i in &idx[..ceil_count(f, total)] {
                in_val[i] = true;
            }
        }
    }
    let n_val = in_val.iter().filter(|&&v| v).count();
    if n_val == 0 || n_val >= total {
        return Err(DataError::Argument(format!(
            "fraction {f} leaves {n_val} of {total} entries for validation"
        )));
    }
    let (val, train): (Vec<_>, Vec<_>) = manifest
        .entries
        .iter()
        .cloned()
        .zip(in_val)
        .partition(|(_, v)| *v);
    Ok((
        DatasetManifest::new(train.into_iter().map(|(e, _)| e).collect())?,
        DatasetManifest::new(val.into_iter().map(|(e, _)| e).collect())?,
    ))
}
