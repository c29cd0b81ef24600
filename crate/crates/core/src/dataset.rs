//! Sample manifests, stratified splits and k-shot subsets.
//!
//! A manifest is JSON-lines, one object per sample:
//!
//! ```text
//! {"id": "v1", "label": "malicious", "frames_dir": "v1/frames", "audio": "v1/audio.wav", "split": "train"}
//! ```
//!
//! Relative paths resolve against the directory holding the manifest.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Malicious,
    Benign,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Malicious, Label::Benign];

    /// Column of this class in the similarity matrix.
    pub fn index(self) -> usize {
        match self {
            Label::Malicious => 0,
            Label::Benign => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<Label> {
        Label::ALL.get(index).copied()
    }

    /// Text fed to the text encoder for this class.
    pub fn class_name(self) -> &'static str {
        match self {
            Label::Malicious => "malicious",
            Label::Benign => "benign",
        }
    }

    pub fn class_names() -> Vec<&'static str> {
        Label::ALL.iter().map(|l| l.class_name()).collect()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.class_name())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "malicious" => Ok(Label::Malicious),
            "benign" => Ok(Label::Benign),
            other => Err(Error::Validation(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Validation(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub label: Label,
    pub frames_dir: PathBuf,
    pub audio_path: PathBuf,
    pub split: Option<Split>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestLine {
    id: String,
    label: Label,
    frames_dir: String,
    audio: String,
    #[serde(default)]
    split: Option<Split>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotSpec {
    pub k: usize,
    pub seed: u64,
}

/// Class histogram. Both classes are always present, possibly with zero.
pub type ClassCounts = BTreeMap<Label, usize>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub entries: Vec<ManifestEntry>,
    pub class_counts: ClassCounts,
}

impl DatasetSplit {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        let class_counts = class_distribution(&entries);
        DatasetSplit {
            entries,
            class_counts,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Reads a manifest file. Entries keep file order.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_manifest(&text, base)
}

/// Parses manifest text, resolving relative paths against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let line: ManifestLine = serde_json::from_str(raw).map_err(|e| Error::ManifestParse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.id.is_empty() {
            return Err(Error::ManifestParse {
                line: line_no,
                message: "empty id".into(),
            });
        }
        if !seen.insert(line.id.clone()) {
            return Err(Error::DuplicateId(line.id));
        }
        entries.push(ManifestEntry {
            id: line.id,
            label: line.label,
            frames_dir: base.join(line.frames_dir),
            audio_path: base.join(line.audio),
            split: line.split,
        });
    }
    Ok(entries)
}

fn relative_to(path: &Path, dir: &Path) -> String {
    path.strip_prefix(dir)
        .unwrap_or(path)
        .to_string_lossy()
        .into_owned()
}

/// Serializes entries as manifest lines, writing paths relative to `dir`
/// when they live under it.
pub fn manifest_to_string(entries: &[ManifestEntry], dir: &Path) -> String {
    let mut out = String::new();
    for entry in entries {
        let line = ManifestLine {
            id: entry.id.clone(),
            label: entry.label,
            frames_dir: relative_to(&entry.frames_dir, dir),
            audio: relative_to(&entry.audio_path, dir),
            split: entry.split,
        };
        out.push_str(&serde_json::to_string(&line).expect("manifest line serializes"));
        out.push('\n');
    }
    out
}

pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(manifest_to_string(entries, dir).as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn class_distribution(entries: &[ManifestEntry]) -> ClassCounts {
    let mut counts: ClassCounts = Label::ALL.iter().map(|&l| (l, 0)).collect();
    for entry in entries {
        *counts.entry(entry.label).or_default() += 1;
    }
    counts
}

fn indices_by_class(entries: &[ManifestEntry]) -> BTreeMap<Label, Vec<usize>> {
    let mut by_class: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (i, entry) in entries.iter().enumerate() {
        by_class.entry(entry.label).or_default().push(i);
    }
    by_class
}

/// Stratified random split. Each class contributes `round(n_c * test_fraction)`
/// entries to the test side; both sides keep manifest order. Entries are
/// tagged with the split they land in.
pub fn make_splits(
    entries: &[ManifestEntry],
    test_fraction: f64,
    seed: u64,
) -> Result<(DatasetSplit, DatasetSplit)> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::Validation(format!(
            "test_fraction {test_fraction} outside [0, 1]"
        )));
    }
    if entries.is_empty() {
        return Err(Error::Validation("cannot split an empty manifest".into()));
    }
    let mut rng = rng::stream(seed, rng::purpose::SPLIT);
    let mut is_test = vec![false; entries.len()];
    for (_, mut idx) in indices_by_class(entries) {
        let n_test = (idx.len() as f64 * test_fraction).round() as usize;
        idx.shuffle(&mut rng);
        for &i in &idx[..n_test] {
            is_test[i] = true;
        }
    }
    let tagged = |split| {
        move |e: &ManifestEntry| ManifestEntry {
            split: Some(split),
            ..e.clone()
        }
    };
    let train = entries
        .iter()
        .zip(&is_test)
        .filter(|(_, &t)| !t)
        .map(|(e, _)| tagged(Split::Train)(e))
        .collect();
    let test = entries
        .iter()
        .zip(&is_test)
        .filter(|(_, &t)| t)
        .map(|(e, _)| tagged(Split::Test)(e))
        .collect();
    Ok((DatasetSplit::new(train), DatasetSplit::new(test)))
}

/// Uses the manifest's own split tags when every entry carries one,
/// otherwise falls back to [`make_splits`].
pub fn resolve_splits(
    entries: &[ManifestEntry],
    test_fraction: f64,
    seed: u64,
) -> Result<(DatasetSplit, DatasetSplit)> {
    if !entries.is_empty() && entries.iter().all(|e| e.split.is_some()) {
        let pick = |s| {
            entries
                .iter()
                .filter(|e| e.split == Some(s))
                .cloned()
                .collect::<Vec<_>>()
        };
        return Ok((
            DatasetSplit::new(pick(Split::Train)),
            DatasetSplit::new(pick(Split::Test)),
        ));
    }
    make_splits(entries, test_fraction, seed)
}

/// Draws exactly `k` entries per class uniformly without replacement.
/// The subset keeps the order the entries had in `train`.
pub fn few_shot_sample(train: &DatasetSplit, spec: FewShotSpec) -> Result<DatasetSplit> {
    let by_class = indices_by_class(&train.entries);
    for label in Label::ALL {
        let available = by_class.get(&label).map_or(0, Vec::len);
        if available < spec.k {
            return Err(Error::InsufficientSamples {
                class: label.to_string(),
                available,
                requested: spec.k,
            });
        }
    }
    let mut rng = rng::stream(spec.seed, rng::purpose::FEW_SHOT);
    let mut chosen = Vec::with_capacity(spec.k * Label::ALL.len());
    for label in Label::ALL {
        let idx = &by_class.get(&label).map(Vec::as_slice).unwrap_or(&[]);
        chosen.extend(idx.choose_multiple(&mut rng, spec.k).copied());
    }
    chosen.sort_unstable();
    Ok(DatasetSplit::new(
        chosen.into_iter().map(|i| train.entries[i].clone()).collect(),
    ))
}
