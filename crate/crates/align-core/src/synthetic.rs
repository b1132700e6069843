//! Desk-scale synthetic datasets with known structure.
//!
//! Action flavor: 8 classes x 8 sequences; every class has its own
//! frequency/phase signature, so an expressive encoder can fit the
//! class structure perfectly.
//!
//! Retrieval flavor: 12 binary appearance attributes; every active
//! attribute adds a distinct sinusoidal component (attribute-specific
//! frequency, phase and joint mask) to the joint trajectories, so
//! attributes are decodable from motion by construction and retrieval
//! training has real signal.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::dataset::{
    save_action_labels, save_attribute_annotations, save_pose_sequences, split_dataset,
    AttributeManifest, AttributeVector, DatasetSplit, LabeledSample, PoseSequence,
};
use crate::error::Result;
use crate::textbridge::{CaptionRecord, CaptionSource, CaptionStore};

pub const ACTION_CLASSES: [&str; 8] = [
    "walk", "run", "jump", "sit", "stand", "wave", "kick", "turn",
];
const ACTION_SYNONYMS: [(&str, &str); 8] = [
    ("walk", "stroll"),
    ("run", "sprint"),
    ("jump", "leap"),
    ("sit", "crouch"),
    ("stand", "rise"),
    ("wave", "gesture"),
    ("kick", "strike"),
    ("turn", "spin"),
];

pub const RETRIEVAL_ATTRIBUTES: [&str; 12] = [
    "female",
    "male",
    "young",
    "adult",
    "backpack",
    "handbag",
    "trousers",
    "skirt",
    "sneakers",
    "boots",
    "front-view",
    "side-view",
];

const JOINTS: usize = 8;
const CHANNELS: usize = 2;
const SEQUENCES_PER_CLASS: usize = 8;
const RETRIEVAL_TOTAL: usize = 750; // splits 600 / 75 / 75
const COMBO_POOL: usize = 32;

pub struct ActionData {
    pub samples: Vec<LabeledSample>,
    pub captions: CaptionStore,
    pub synonyms: BTreeMap<String, Vec<String>>,
}

pub struct RetrievalData {
    pub poses: Vec<PoseSequence>,
    pub annotations: BTreeMap<String, AttributeVector>,
    pub manifest: Arc<AttributeManifest>,
    pub captions: CaptionStore,
    pub split: DatasetSplit,
}

fn class_frame(
    class: usize,
    t: usize,
    len: usize,
    jitter: f64,
    noise: &mut impl FnMut() -> f64,
) -> Vec<f64> {
    let freq = 0.5 + 0.23 * class as f64;
    let phase = 0.7 * class as f64 + jitter;
    let mut frame = Vec::with_capacity(JOINTS * CHANNELS);
    for j in 0..JOINTS {
        for c in 0..CHANNELS {
            let angle = 2.0 * std::f64::consts::PI * freq * t as f64 / len as f64
                + phase
                + 0.4 * j as f64
                + 1.3 * c as f64;
            let amp = 0.6 + 0.3 * ((class * 7 + j) % 5) as f64 / 4.0;
            frame.push(amp * angle.sin() + 0.05 * noise());
        }
    }
    frame
}

/// 8 classes x 8 sequences of length 60, label-keyed captions (original
/// label plus one generated description) and one synonym per class.
pub fn generate_action_dataset(seed: u64) -> Result<ActionData> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let len = 60;
    let mut samples = Vec::new();
    for (class, label) in ACTION_CLASSES.iter().enumerate() {
        for k in 0..SEQUENCES_PER_CLASS {
            let jitter = rng.random_range(0.0..0.3);
            let mut noise = {
                let rng = &mut rng;
                move || rng.random_range(-1.0..1.0)
            };
            let frames: Vec<Vec<f64>> = (0..len)
                .map(|t| class_frame(class, t, len, jitter, &mut noise))
                .collect();
            let seq = PoseSequence::new(format!("{label}-{k:02}"), 30.0, JOINTS, CHANNELS, frames)?;
            samples.push(LabeledSample::action(seq, label.to_string()));
        }
    }

    let mut captions = CaptionStore::new();
    for label in ACTION_CLASSES {
        captions.insert(CaptionRecord {
            key: label.to_string(),
            text: label.to_string(),
            source: CaptionSource::Original,
        });
        captions.insert(CaptionRecord {
            key: label.to_string(),
            text: format!("a person who {label}s with a steady repeating rhythm"),
            source: CaptionSource::Generated,
        });
    }
    let synonyms = ACTION_SYNONYMS
        .iter()
        .map(|&(label, synonym)| (label.to_string(), vec![synonym.to_string()]))
        .collect();

    Ok(ActionData {
        samples,
        captions,
        synonyms,
    })
}

fn combo_pool(rng: &mut ChaCha12Rng, manifest: &Arc<AttributeManifest>) -> Vec<AttributeVector> {
    let n = manifest.len();
    let mut combos: Vec<Vec<usize>> = Vec::new();
    while combos.len() < COMBO_POOL {
        let size = rng.random_range(2..=4);
        let mut picks: Vec<usize> = Vec::new();
        while picks.len() < size {
            let a = rng.random_range(0..n);
            if !picks.contains(&a) {
                picks.push(a);
            }
        }
        picks.sort_unstable();
        if !combos.contains(&picks) {
            combos.push(picks);
        }
    }
    combos
        .into_iter()
        .map(|picks| {
            let names: Vec<&str> = picks
                .iter()
                .map(|&i| manifest.attributes[i].as_str())
                .collect();
            AttributeVector::from_active_names(manifest.clone(), &names)
                .expect("pool names come from the manifest")
        })
        .collect()
}

fn attribute_frame(
    active: &[bool],
    t: usize,
    len: usize,
    noise: &mut impl FnMut() -> f64,
) -> Vec<f64> {
    let mut frame = vec![0.0; JOINTS * CHANNELS];
    for (a, &on) in active.iter().enumerate() {
        if !on {
            continue;
        }
        let freq = 0.3 + 0.17 * a as f64;
        let phase = 0.5 * a as f64;
        // each attribute drives two joints
        for &j in &[a % JOINTS, (a + 3) % JOINTS] {
            for c in 0..CHANNELS {
                let angle = 2.0 * std::f64::consts::PI * freq * t as f64 / len as f64
                    + phase
                    + 1.57 * c as f64;
                frame[j * CHANNELS + c] += 0.8 * angle.sin();
            }
        }
    }
    for v in frame.iter_mut() {
        *v += 0.05 * noise();
    }
    frame
}

/// A deterministic stand-in for the LLM's appearance description.
pub fn synthetic_description(attrs: &AttributeVector) -> String {
    format!("a person with {}", attrs.active_names().join(", "))
}

/// 750 sequences over a pool of 32 attribute combinations, with
/// confidence-bearing annotations, one description per combination and an
/// 80/10/10 split.
pub fn generate_retrieval_dataset(seed: u64) -> Result<RetrievalData> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed.wrapping_add(0x5e7));
    let manifest = Arc::new(AttributeManifest::new(
        RETRIEVAL_ATTRIBUTES.iter().map(|s| s.to_string()).collect(),
    )?);
    let pool = combo_pool(&mut rng, &manifest);

    let mut poses = Vec::with_capacity(RETRIEVAL_TOTAL);
    let mut annotations = BTreeMap::new();
    for i in 0..RETRIEVAL_TOTAL {
        let combo = &pool[i % pool.len()];
        let len = rng.random_range(50..=80);
        let mut noise = {
            let rng = &mut rng;
            move || rng.random_range(-1.0..1.0)
        };
        let frames: Vec<Vec<f64>> = (0..len)
            .map(|t| attribute_frame(combo.active(), t, len, &mut noise))
            .collect();
        let id = format!("seq-{i:04}");
        poses.push(PoseSequence::new(
            id.clone(),
            30.0,
            JOINTS,
            CHANNELS,
            frames,
        )?);

        // confidences consistent with the active set, strictly across 0.5
        let confidences: Vec<f64> = combo
            .active()
            .iter()
            .map(|&on| {
                if on {
                    0.55 + 0.45 * rng.random_range(0.0..1.0)
                } else {
                    0.45 * rng.random_range(0.0..1.0)
                }
            })
            .collect();
        annotations.insert(
            id,
            AttributeVector::from_confidences(manifest.clone(), confidences)?,
        );
    }

    let mut captions = CaptionStore::new();
    for combo in &pool {
        captions.insert(CaptionRecord {
            key: combo.bitset_string(),
            text: synthetic_description(combo),
            source: CaptionSource::Generated,
        });
    }

    let ids: Vec<String> = poses.iter().map(|p| p.id.clone()).collect();
    let split = split_dataset(&ids, seed)?;

    Ok(RetrievalData {
        poses,
        annotations,
        manifest,
        captions,
        split,
    })
}

impl RetrievalData {
    /// Labeled samples for one split subset ("train", "val" or "test").
    pub fn samples_for(&self, subset: &str) -> Result<Vec<LabeledSample>> {
        let ids = self.split.subset(subset)?;
        let by_id: BTreeMap<&str, &PoseSequence> =
            self.poses.iter().map(|p| (p.id.as_str(), p)).collect();
        ids.iter()
            .map(|id| {
                let seq = by_id[id.as_str()].clone();
                let attrs = self.annotations[id].clone();
                Ok(LabeledSample::attributes(seq, attrs))
            })
            .collect()
    }
}

/// Write the action dataset as the standard file set.
pub fn write_action_dataset(dir: &Path, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let data = generate_action_dataset(seed)?;
    let sequences: Vec<PoseSequence> = data.samples.iter().map(|s| s.sequence.clone()).collect();
    save_pose_sequences(&dir.join("poses.jsonl"), &sequences)?;

    let labels: BTreeMap<String, String> = data
        .samples
        .iter()
        .map(|s| (s.sequence.id.clone(), s.caption_key.clone()))
        .collect();
    save_action_labels(&dir.join("labels.jsonl"), &labels)?;
    data.captions.save(&dir.join("captions.jsonl"))?;
    std::fs::write(
        dir.join("synonyms.json"),
        serde_json::to_string_pretty(&data.synonyms)?,
    )?;

    let ids: Vec<String> = sequences.iter().map(|p| p.id.clone()).collect();
    split_dataset(&ids, seed)?.save(&dir.join("split.json"))?;
    Ok(())
}

/// Write the retrieval dataset as the standard file set.
pub fn write_retrieval_dataset(dir: &Path, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let data = generate_retrieval_dataset(seed)?;
    save_pose_sequences(&dir.join("poses.jsonl"), &data.poses)?;
    save_attribute_annotations(&dir.join("attributes.jsonl"), &data.annotations)?;
    data.manifest.save(&dir.join("manifest.json"))?;
    data.captions.save(&dir.join("captions.jsonl"))?;
    data.split.save(&dir.join("split.json"))?;
    Ok(())
}
