//! Pose-sequence and attribute-annotation ingestion, splits, training
//! windows and retrieval-query construction.
//!
//! File formats (all JSON lines unless noted):
//! - poses: `{"id", "fps", "joints", "channels", "frames": [[..] x n]}`,
//!   each frame flattened row-major to joints*channels values
//! - attributes: `{"id", "confidences": {name: value in [0,1], ...}}`
//! - manifest (plain JSON): `{"attributes": [names in canonical order]}`
//! - action labels: `{"id", "action"}`
//! - split (plain JSON): `{"train": [...], "val": [...], "test": [...]}`

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::textbridge::CaptionStore;

/// Training windows are always this many poses long.
pub const WINDOW_LEN: usize = 60;
/// Attributes are active iff confidence is strictly above this.
pub const CONFIDENCE_THRESHOLD: f64 = 0.5;

// ── attribute schema ────────────────────────────────────────────────────

/// Ordered attribute names. Production manifests carry the 42 appearance
/// attributes; the schema is data-driven so smaller synthetic sets work too.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeManifest {
    pub attributes: Vec<String>,
}

impl AttributeManifest {
    pub fn new(attributes: Vec<String>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(CoreError::validation("manifest: no attributes"));
        }
        let unique: HashSet<&String> = attributes.iter().collect();
        if unique.len() != attributes.len() {
            return Err(CoreError::validation("manifest: duplicate attribute names"));
        }
        Ok(AttributeManifest { attributes })
    }

    pub fn load(path: &Path) -> Result<Arc<Self>> {
        let file = File::open(path)
            .map_err(|e| CoreError::validation(format!("manifest {}: {e}", path.display())))?;
        let m: AttributeManifest = serde_json::from_reader(BufReader::new(file))?;
        Ok(Arc::new(AttributeManifest::new(m.attributes)?))
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a == name)
    }
}

/// Binary appearance attributes with their source confidences. The active
/// flags are always derived from the confidences by the strict threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeVector {
    manifest: Arc<AttributeManifest>,
    confidences: Vec<f64>,
    active: Vec<bool>,
}

impl AttributeVector {
    pub fn from_confidences(
        manifest: Arc<AttributeManifest>,
        confidences: Vec<f64>,
    ) -> Result<Self> {
        if confidences.len() != manifest.len() {
            return Err(CoreError::validation(format!(
                "attribute vector has {} confidences, manifest lists {}",
                confidences.len(),
                manifest.len()
            )));
        }
        for (i, &c) in confidences.iter().enumerate() {
            if !(0.0..=1.0).contains(&c) {
                return Err(CoreError::validation(format!(
                    "confidence {c} for '{}' outside [0, 1]",
                    manifest.attributes[i]
                )));
            }
        }
        let active = confidences
            .iter()
            .map(|&c| c > CONFIDENCE_THRESHOLD)
            .collect();
        Ok(AttributeVector {
            manifest,
            confidences,
            active,
        })
    }

    /// Test/synthetic helper: active set by name, confidences 1.0 / 0.0.
    pub fn from_active_names(manifest: Arc<AttributeManifest>, names: &[&str]) -> Result<Self> {
        let mut confidences = vec![0.0; manifest.len()];
        for name in names {
            let idx = manifest
                .index_of(name)
                .ok_or_else(|| CoreError::validation(format!("unknown attribute '{name}'")))?;
            confidences[idx] = 1.0;
        }
        AttributeVector::from_confidences(manifest, confidences)
    }

    pub fn manifest(&self) -> &Arc<AttributeManifest> {
        &self.manifest
    }

    pub fn confidences(&self) -> &[f64] {
        &self.confidences
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn active_names(&self) -> Vec<&str> {
        self.manifest
            .attributes
            .iter()
            .zip(&self.active)
            .filter(|(_, &a)| a)
            .map(|(n, _)| n.as_str())
            .collect()
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Canonical key: one '0'/'1' per attribute in manifest order.
    pub fn bitset_string(&self) -> String {
        self.active
            .iter()
            .map(|&a| if a { '1' } else { '0' })
            .collect()
    }

    /// Targets for the multi-label classifier.
    pub fn target_row(&self) -> Vec<f64> {
        self.active
            .iter()
            .map(|&a| if a { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn same_schema(&self, other: &AttributeVector) -> bool {
        self.manifest.attributes == other.manifest.attributes
    }
}

// ── pose sequences ──────────────────────────────────────────────────────

/// A length-n series of skeletons, each `joints x channels` values,
/// flattened row-major per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    pub id: String,
    pub fps: f64,
    pub joints: usize,
    pub channels: usize,
    frames: Vec<f64>,
    len: usize,
}

impl PoseSequence {
    pub fn new(
        id: String,
        fps: f64,
        joints: usize,
        channels: usize,
        frames: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if fps <= 0.0 {
            return Err(CoreError::validation(format!(
                "sequence '{id}': fps must be positive"
            )));
        }
        if joints == 0 || channels == 0 {
            return Err(CoreError::validation(format!(
                "sequence '{id}': joints and channels must be >= 1"
            )));
        }
        if frames.is_empty() {
            return Err(CoreError::validation(format!("sequence '{id}': no frames")));
        }
        let width = joints * channels;
        let mut flat = Vec::with_capacity(frames.len() * width);
        for (k, frame) in frames.iter().enumerate() {
            if frame.len() != width {
                return Err(CoreError::validation(format!(
                    "sequence '{id}': frame {k} has {} values, expected {width}",
                    frame.len()
                )));
            }
            if frame.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::validation(format!(
                    "sequence '{id}': non-finite value in frame {k}"
                )));
            }
            flat.extend_from_slice(frame);
        }
        Ok(PoseSequence {
            id,
            fps,
            joints,
            channels,
            len: frames.len(),
            frames: flat,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn frame_width(&self) -> usize {
        self.joints * self.channels
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        let w = self.frame_width();
        &self.frames[i * w..(i + 1) * w]
    }
}

#[derive(Deserialize)]
struct PoseRecord {
    id: String,
    fps: f64,
    joints: usize,
    channels: usize,
    frames: Vec<Vec<f64>>,
}

fn jsonl_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>> {
    let file = File::open(path)
        .map_err(|e| CoreError::validation(format!("cannot open {}: {e}", path.display())))?;
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l)))
}

pub fn load_pose_sequences(path: &Path) -> Result<Vec<PoseSequence>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (line_no, line) in jsonl_lines(path)? {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PoseRecord = serde_json::from_str(&line).map_err(|e| CoreError::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if !seen.insert(rec.id.clone()) {
            return Err(CoreError::validation(format!(
                "duplicate sequence id '{}'",
                rec.id
            )));
        }
        out.push(PoseSequence::new(
            rec.id,
            rec.fps,
            rec.joints,
            rec.channels,
            rec.frames,
        )?);
    }
    Ok(out)
}

pub fn save_pose_sequences(path: &Path, sequences: &[PoseSequence]) -> Result<()> {
    use std::io::Write as _;
    let mut out = std::io::BufWriter::new(File::create(path)?);
    for seq in sequences {
        let frames: Vec<&[f64]> = (0..seq.len()).map(|i| seq.frame(i)).collect();
        let record = serde_json::json!({
            "id": seq.id,
            "fps": seq.fps,
            "joints": seq.joints,
            "channels": seq.channels,
            "frames": frames,
        });
        writeln!(out, "{record}")?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct AttributeRecord {
    id: String,
    confidences: BTreeMap<String, f64>,
}

pub fn save_attribute_annotations(
    path: &Path,
    annotations: &BTreeMap<String, AttributeVector>,
) -> Result<()> {
    use std::io::Write as _;
    let mut out = std::io::BufWriter::new(File::create(path)?);
    for (id, attrs) in annotations {
        let confidences: BTreeMap<&str, f64> = attrs
            .manifest()
            .attributes
            .iter()
            .map(|n| n.as_str())
            .zip(attrs.confidences().iter().copied())
            .collect();
        writeln!(
            out,
            "{}",
            serde_json::json!({"id": id, "confidences": confidences})
        )?;
    }
    Ok(())
}

pub fn save_action_labels(path: &Path, labels: &BTreeMap<String, String>) -> Result<()> {
    use std::io::Write as _;
    let mut out = std::io::BufWriter::new(File::create(path)?);
    for (id, action) in labels {
        writeln!(out, "{}", serde_json::json!({"id": id, "action": action}))?;
    }
    Ok(())
}

impl AttributeManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Load per-sequence attribute confidences, deriving active flags by the
/// strict `> 0.5` rule. Every manifest attribute must be present and no
/// unknown names are allowed.
pub fn load_attribute_annotations(
    path: &Path,
    manifest: &Arc<AttributeManifest>,
) -> Result<BTreeMap<String, AttributeVector>> {
    let mut out = BTreeMap::new();
    for (line_no, line) in jsonl_lines(path)? {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AttributeRecord = serde_json::from_str(&line).map_err(|e| CoreError::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        for name in rec.confidences.keys() {
            if manifest.index_of(name).is_none() {
                return Err(CoreError::validation(format!(
                    "record '{}': unknown attribute '{name}'",
                    rec.id
                )));
            }
        }
        let mut confidences = Vec::with_capacity(manifest.len());
        for name in &manifest.attributes {
            let c = rec.confidences.get(name).ok_or_else(|| {
                CoreError::validation(format!("record '{}': missing attribute '{name}'", rec.id))
            })?;
            confidences.push(*c);
        }
        let vector = AttributeVector::from_confidences(manifest.clone(), confidences)?;
        if out.insert(rec.id.clone(), vector).is_some() {
            return Err(CoreError::validation(format!(
                "duplicate annotation id '{}'",
                rec.id
            )));
        }
    }
    Ok(out)
}

#[derive(Deserialize)]
struct ActionRecord {
    id: String,
    action: String,
}

/// Action labels for BABEL-style data: JSON lines `{"id", "action"}`.
pub fn load_action_labels(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (line_no, line) in jsonl_lines(path)? {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ActionRecord = serde_json::from_str(&line).map_err(|e| CoreError::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if rec.action.is_empty() {
            return Err(CoreError::validation(format!(
                "record '{}': empty action label",
                rec.id
            )));
        }
        if out.insert(rec.id.clone(), rec.action).is_some() {
            return Err(CoreError::validation(format!(
                "duplicate label id '{}'",
                rec.id
            )));
        }
    }
    Ok(out)
}

// ── labeled samples ─────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub enum Label {
    Action(String),
    Attributes(AttributeVector),
}

/// A pose sequence paired with its label and the key into the caption store.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub sequence: PoseSequence,
    pub label: Label,
    pub caption_key: String,
}

impl LabeledSample {
    pub fn action(sequence: PoseSequence, action: String) -> Self {
        let caption_key = action.clone();
        LabeledSample {
            sequence,
            label: Label::Action(action),
            caption_key,
        }
    }

    pub fn attributes(sequence: PoseSequence, attrs: AttributeVector) -> Self {
        let caption_key = attrs.bitset_string();
        LabeledSample {
            sequence,
            label: Label::Attributes(attrs),
            caption_key,
        }
    }
}

/// Pair every pose sequence with its action label.
pub fn assemble_action_samples(
    poses: Vec<PoseSequence>,
    labels: &BTreeMap<String, String>,
) -> Result<Vec<LabeledSample>> {
    poses
        .into_iter()
        .map(|p| {
            let action = labels.get(&p.id).ok_or_else(|| {
                CoreError::validation(format!("sequence '{}' has no action label", p.id))
            })?;
            Ok(LabeledSample::action(p, action.clone()))
        })
        .collect()
}

/// Pair every pose sequence with its attribute annotation.
pub fn assemble_attribute_samples(
    poses: Vec<PoseSequence>,
    annotations: &BTreeMap<String, AttributeVector>,
) -> Result<Vec<LabeledSample>> {
    poses
        .into_iter()
        .map(|p| {
            let attrs = annotations.get(&p.id).ok_or_else(|| {
                CoreError::validation(format!("sequence '{}' has no attribute annotation", p.id))
            })?;
            Ok(LabeledSample::attributes(p, attrs.clone()))
        })
        .collect()
}

// ── splits ──────────────────────────────────────────────────────────────

/// Disjoint 80/10/10 partition of sequence ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)
            .map_err(|e| CoreError::validation(format!("split {}: {e}", path.display())))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn subset<'a>(&'a self, name: &str) -> Result<&'a [String]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(CoreError::validation(format!("unknown split '{other}'"))),
        }
    }
}

/// Deterministic 80/10/10 split: val and test sizes are `round(0.1 n)`
/// (half away from zero), the remainder goes to train. Input order does
/// not matter; ids are sorted before shuffling.
pub fn split_dataset(ids: &[String], seed: u64) -> Result<DatasetSplit> {
    if ids.is_empty() {
        return Err(CoreError::validation("split_dataset: no ids"));
    }
    let unique: HashSet<&String> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(CoreError::validation("split_dataset: duplicate ids"));
    }
    let mut sorted: Vec<String> = ids.to_vec();
    sorted.sort();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);

    let n = sorted.len();
    let n_val = (0.1 * n as f64).round() as usize;
    let n_test = (0.1 * n as f64).round() as usize;
    let n_train = n - n_val - n_test;

    let train = sorted[..n_train].to_vec();
    let val = sorted[n_train..n_train + n_val].to_vec();
    let test = sorted[n_train + n_val..].to_vec();
    Ok(DatasetSplit { train, val, test })
}

// ── windows ─────────────────────────────────────────────────────────────

/// Extract a fixed-length training window, flattened to
/// `length * frame_width` values. Sequences with at least `length` poses
/// yield a uniformly random contiguous window; shorter ones are cyclically
/// tiled starting at frame 0.
pub fn sample_window(seq: &PoseSequence, length: usize, rng: &mut impl Rng) -> Vec<f64> {
    let n = seq.len();
    if n >= length {
        let offset = rng.random_range(0..=n - length);
        window_at(seq, length, offset)
    } else {
        window_at(seq, length, 0)
    }
}

/// Deterministic window at a fixed offset (tiling when the sequence is
/// shorter than `length`); offset 0 is the evaluation convention.
pub fn window_at(seq: &PoseSequence, length: usize, offset: usize) -> Vec<f64> {
    let n = seq.len();
    let w = seq.frame_width();
    let mut out = Vec::with_capacity(length * w);
    for i in 0..length {
        out.extend_from_slice(seq.frame((offset + i) % n));
    }
    out
}

pub fn sample_window_seeded(seq: &PoseSequence, length: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    sample_window(seq, length, &mut rng)
}

// ── retrieval queries ───────────────────────────────────────────────────

/// One retrieval query: a distinct active-attribute combination plus its
/// textual description.
#[derive(Debug, Clone)]
pub struct Query {
    pub attrs: AttributeVector,
    pub description: String,
}

/// Build one query per distinct active-attribute bitset in the test
/// annotations. The description is the lexicographically smallest caption
/// stored under the combination's bitset key.
pub fn build_queries(
    test_annotations: &BTreeMap<String, AttributeVector>,
    captions: &CaptionStore,
) -> Result<Vec<Query>> {
    let mut combos: BTreeMap<String, AttributeVector> = BTreeMap::new();
    for attrs in test_annotations.values() {
        combos
            .entry(attrs.bitset_string())
            .or_insert_with(|| attrs.clone());
    }
    let mut queries = Vec::with_capacity(combos.len());
    let mut missing: BTreeSet<String> = BTreeSet::new();
    for (bitset, attrs) in combos {
        let texts = captions.texts_for_key(&bitset);
        match texts.iter().min() {
            Some(text) => queries.push(Query {
                attrs,
                description: (*text).to_string(),
            }),
            None => {
                missing.insert(format!("{bitset} ({})", attrs.active_names().join(", ")));
            }
        }
    }
    if !missing.is_empty() {
        return Err(CoreError::validation(format!(
            "no description for attribute combination(s): {}",
            missing.into_iter().collect::<Vec<_>>().join("; ")
        )));
    }
    Ok(queries)
}
