//! End-to-end training: dataset -> encoder -> objective -> AdamW, with
//! bit-reproducible runs and resumable checkpoints.
//!
//! Every random decision in an epoch (shuffle order, window offsets,
//! caption choice, negative sampling, dropout) is drawn from one stream
//! seeded by (base seed, epoch index), so a resumed run replays exactly
//! the epochs an uninterrupted run would have executed.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{sample_window, Label, LabeledSample};
use crate::encoder::{
    encode_batch, encode_batch_graph, init_encoder, EncoderConfig, EncoderParams, MetricMode,
};
use crate::error::{CoreError, Result};
use crate::numeric::{adamw_step, AdamWHyper, AdamWState, Graph, Tensor};
use crate::objectives::{
    batch_triplet_loss_node, cosine_similarity_matrix, masked_contrastive_loss_node, mse_loss_node,
    sample_negative, DEFAULT_MARGIN, DEFAULT_MASK_THRESHOLD, DEFAULT_TEMPERATURE,
};
use crate::textbridge::{CaptionStore, EmbeddingProvider, ProviderConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Contrastive,
    Mse,
    Triplet,
    BceMultilabel,
}

impl Objective {
    /// Contrastive and triplet need in-batch negatives; batches smaller
    /// than 2 are dropped for them.
    pub fn needs_pairs(&self) -> bool {
        matches!(self, Objective::Contrastive | Objective::Triplet)
    }
}

/// Input file locations; only the CLI resolves these, `train` itself works
/// on in-memory samples.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainPaths {
    #[serde(default)]
    pub poses: Option<PathBuf>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default)]
    pub attributes: Option<PathBuf>,
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub captions: Option<PathBuf>,
    #[serde(default)]
    pub synonyms: Option<PathBuf>,
    #[serde(default)]
    pub split: Option<PathBuf>,
    #[serde(default)]
    pub train_log: Option<PathBuf>,
}

fn default_batch_size() -> usize {
    64
}
fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_margin() -> f64 {
    DEFAULT_MARGIN
}
fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}
fn default_mask_threshold() -> f64 {
    DEFAULT_MASK_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    pub metric_mode: MetricMode,
    pub encoder: EncoderConfig,
    pub provider: ProviderConfig,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_mask_threshold")]
    pub mask_threshold: f64,
    /// Train action samples against generated descriptions instead of the
    /// raw label names. Attribute samples always use their stored captions.
    #[serde(default)]
    pub use_descriptions: bool,
    #[serde(default)]
    pub paths: TrainPaths,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.batch_size == 0 {
            return Err(CoreError::validation(
                "train config: batch_size must be >= 1",
            ));
        }
        if self.epochs == 0 {
            return Err(CoreError::validation("train config: epochs must be >= 1"));
        }
        if self.lr < 0.0 {
            return Err(CoreError::validation(
                "train config: negative learning rate",
            ));
        }
        match (self.objective, self.metric_mode) {
            (Objective::Contrastive, MetricMode::Cosine) => {}
            (Objective::Contrastive, MetricMode::Euclidean) => {
                return Err(CoreError::validation(
                    "train config: contrastive objective requires cosine metric mode",
                ))
            }
            (Objective::Mse | Objective::Triplet, MetricMode::Euclidean) => {}
            (Objective::Mse | Objective::Triplet, MetricMode::Cosine) => {
                return Err(CoreError::validation(
                    "train config: mse/triplet objectives require euclidean metric mode",
                ))
            }
            // metric mode is not applicable for the multi-label classifier
            (Objective::BceMultilabel, _) => {}
        }
        if self.objective != Objective::BceMultilabel
            && self.encoder.output_dim != self.provider.dim
        {
            return Err(CoreError::validation(format!(
                "train config: encoder output dim {} must equal provider dim {}",
                self.encoder.output_dim, self.provider.dim
            )));
        }
        Ok(())
    }

    pub fn adamw_hyper(&self) -> AdamWHyper {
        AdamWHyper {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::validation(format!("config {}: {e}", path.display())))?;
        let config: TrainConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }
}

/// Everything the trainer persists.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub params: EncoderParams,
    pub optimizer: AdamWState,
    /// Epochs completed so far.
    pub epoch: usize,
    /// Base seed; per-epoch streams are derived, so this plus `epoch` is
    /// the full RNG state.
    pub rng_seed: u64,
    pub loss_history: Vec<f64>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(splitmix64(seed ^ splitmix64(epoch as u64 + 1)))
}

/// Per-sample training-side text candidates (resolved through the frozen
/// provider exactly once) plus the class id used for negative masking.
struct TextContext {
    /// One entry per sample: candidate text embeddings.
    candidates: Vec<Vec<Arc<Vec<f64>>>>,
    class_of: Vec<String>,
}

fn resolve_texts(
    config: &TrainConfig,
    samples: &[LabeledSample],
    provider: &EmbeddingProvider,
    captions: &CaptionStore,
) -> Result<TextContext> {
    let mut cache: BTreeMap<String, Arc<Vec<f64>>> = BTreeMap::new();
    let mut embed = |text: &str| -> Result<Arc<Vec<f64>>> {
        if let Some(hit) = cache.get(text) {
            return Ok(hit.clone());
        }
        let v = provider.embed_text(text).map_err(|e| match e {
            CoreError::NotFound(_) => {
                CoreError::NotFound(format!("training caption '{text}' has no embedding"))
            }
            other => other,
        })?;
        let arc = Arc::new(v.0);
        cache.insert(text.to_string(), arc.clone());
        Ok(arc)
    };

    let mut candidates = Vec::with_capacity(samples.len());
    let mut class_of = Vec::with_capacity(samples.len());
    for sample in samples {
        let texts: Vec<String> = match &sample.label {
            Label::Action(action) if !config.use_descriptions => vec![action.clone()],
            _ => {
                let stored = captions.texts_for_key(&sample.caption_key);
                if stored.is_empty() {
                    return Err(CoreError::validation(format!(
                        "no caption stored for key '{}'",
                        sample.caption_key
                    )));
                }
                let mut stored: Vec<String> = stored.into_iter().map(String::from).collect();
                stored.sort();
                stored
            }
        };
        let mut embedded = Vec::with_capacity(texts.len());
        for text in &texts {
            embedded.push(embed(text)?);
        }
        candidates.push(embedded);
        class_of.push(sample.caption_key.clone());
    }
    Ok(TextContext {
        candidates,
        class_of,
    })
}

fn attribute_targets(samples: &[LabeledSample]) -> Result<Vec<Vec<f64>>> {
    samples
        .iter()
        .map(|s| match &s.label {
            Label::Attributes(attrs) => Ok(attrs.target_row()),
            Label::Action(_) => Err(CoreError::validation(
                "bce-multilabel objective needs attribute-labeled samples",
            )),
        })
        .collect()
}

/// Train from scratch.
pub fn train(
    config: &TrainConfig,
    samples: &[LabeledSample],
    provider: &EmbeddingProvider,
    captions: &CaptionStore,
) -> Result<Checkpoint> {
    config.validate()?;
    let params = init_encoder(&config.encoder, config.seed)?;
    let optimizer = AdamWState::new(&params.tensors(), config.adamw_hyper())?;
    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        config: config.clone(),
        params,
        optimizer,
        epoch: 0,
        rng_seed: config.seed,
        loss_history: Vec::new(),
    };
    run_epochs(checkpoint, samples, provider, captions)
}

/// Continue a loaded checkpoint up to its configured epoch count. In
/// deterministic mode the result is bitwise identical to an uninterrupted
/// run of the same length.
pub fn resume(
    checkpoint: Checkpoint,
    samples: &[LabeledSample],
    provider: &EmbeddingProvider,
    captions: &CaptionStore,
) -> Result<Checkpoint> {
    checkpoint.config.validate()?;
    run_epochs(checkpoint, samples, provider, captions)
}

fn run_epochs(
    mut ckpt: Checkpoint,
    samples: &[LabeledSample],
    provider: &EmbeddingProvider,
    captions: &CaptionStore,
) -> Result<Checkpoint> {
    let config = ckpt.config.clone();
    if samples.is_empty() {
        return Err(CoreError::validation("train: empty dataset"));
    }
    let window_len = config.encoder.window_len();
    for sample in samples {
        let width = sample.sequence.frame_width();
        if width != config.encoder.input_dim {
            return Err(CoreError::validation(format!(
                "sequence '{}' has frame width {width}, encoder expects {}",
                sample.sequence.id, config.encoder.input_dim
            )));
        }
    }

    let (texts, bce_targets) = match config.objective {
        Objective::BceMultilabel => {
            let targets = attribute_targets(samples)?;
            if targets.iter().any(|t| t.len() != config.encoder.output_dim) {
                return Err(CoreError::validation(format!(
                    "bce: encoder output dim {} must equal the attribute count",
                    config.encoder.output_dim
                )));
            }
            (None, Some(targets))
        }
        _ => (
            Some(resolve_texts(&config, samples, provider, captions)?),
            None,
        ),
    };

    let mut params_tensors = ckpt.params.tensors();
    let mut log_file = match &config.paths.train_log {
        Some(path) => Some(std::fs::File::create(path)?),
        None => None,
    };

    let n = samples.len();
    let dim = provider.dim();
    for epoch in ckpt.epoch..config.epochs {
        let epoch_start = Instant::now();
        let mut rng = epoch_rng(ckpt.rng_seed, epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        // The shuffle decides batch composition; a canonical order inside
        // each batch fixes the floating-point summation order, so equal
        // compositions give bit-equal losses.
        for chunk in order.chunks_mut(config.batch_size) {
            chunk.sort_unstable();
        }

        let mut batch_losses: Vec<f64> = Vec::new();
        for (step, batch_ids) in order.chunks(config.batch_size).enumerate() {
            if batch_ids.len() < 2 && config.objective.needs_pairs() {
                continue;
            }
            let b = batch_ids.len();

            // windows
            let mut wdata = Vec::with_capacity(b * window_len * config.encoder.input_dim);
            for &i in batch_ids {
                wdata.extend(sample_window(&samples[i].sequence, window_len, &mut rng));
            }
            let windows = Tensor::new(vec![b * window_len, config.encoder.input_dim], wdata)?;

            // per-sample caption choice and text matrix
            let (zt_values, class_of) = match &texts {
                Some(ctx) => {
                    let mut flat = Vec::with_capacity(b * dim);
                    let mut classes = Vec::with_capacity(b);
                    for &i in batch_ids {
                        let cands = &ctx.candidates[i];
                        let pick = if cands.len() == 1 {
                            0
                        } else {
                            rng.random_range(0..cands.len())
                        };
                        flat.extend_from_slice(&cands[pick]);
                        classes.push(ctx.class_of[i].clone());
                    }
                    (Some(Tensor::new(vec![b, dim], flat)?), classes)
                }
                None => (None, Vec::new()),
            };

            // forward
            let mut graph = Graph::new();
            let input = graph.constant(windows)?;
            let encoder_mode = match config.objective {
                Objective::Contrastive => MetricMode::Cosine,
                _ => MetricMode::Euclidean,
            };
            let fwd = encode_batch_graph(
                &mut graph,
                input,
                b,
                &ckpt.params,
                &config.encoder,
                encoder_mode,
                true,
                Some(&mut rng),
            )?;

            // objective
            let loss_node = match config.objective {
                Objective::Contrastive => {
                    let zt = zt_values.as_ref().unwrap();
                    let tsim = cosine_similarity_matrix(zt)?;
                    let zt_node = graph.constant(zt.clone())?;
                    Some(masked_contrastive_loss_node(
                        &mut graph,
                        fwd.output,
                        zt_node,
                        &tsim,
                        config.temperature,
                        config.mask_threshold,
                    )?)
                }
                Objective::Mse => {
                    let zt_node = graph.constant(zt_values.as_ref().unwrap().clone())?;
                    Some(mse_loss_node(&mut graph, fwd.output, zt_node)?)
                }
                Objective::Triplet => {
                    let zt = zt_values.as_ref().unwrap();
                    let tsim = cosine_similarity_matrix(zt)?;
                    let negatives: Vec<Option<usize>> = (0..b)
                        .map(|i| {
                            sample_negative(i, &class_of, &tsim, config.mask_threshold, &mut rng)
                        })
                        .collect();
                    let zt_node = graph.constant(zt.clone())?;
                    batch_triplet_loss_node(
                        &mut graph,
                        fwd.output,
                        zt_node,
                        &negatives,
                        config.margin,
                    )?
                }
                Objective::BceMultilabel => {
                    let targets = bce_targets.as_ref().unwrap();
                    let mut flat = Vec::with_capacity(b * config.encoder.output_dim);
                    for &i in batch_ids {
                        flat.extend_from_slice(&targets[i]);
                    }
                    let t =
                        graph.constant(Tensor::new(vec![b, config.encoder.output_dim], flat)?)?;
                    Some(graph.bce_with_logits(fwd.output, t)?)
                }
            };

            let Some(loss_node) = loss_node else {
                // every triplet anchor omitted: loss 0, no optimizer step
                batch_losses.push(0.0);
                continue;
            };
            let loss = graph.value(loss_node).item()?;
            if !loss.is_finite() {
                return Err(CoreError::numeric(
                    "train",
                    format!("non-finite loss at epoch {epoch} step {step}"),
                ));
            }

            let grads = graph.backward_for(loss_node, &fwd.param_nodes)?;
            adamw_step(&mut params_tensors, &grads, &mut ckpt.optimizer)?;
            ckpt.params = EncoderParams::from_tensors(&config.encoder, params_tensors.clone())?;
            batch_losses.push(loss);
        }

        let epoch_loss = if batch_losses.is_empty() {
            0.0
        } else {
            batch_losses.iter().sum::<f64>() / batch_losses.len() as f64
        };
        ckpt.loss_history.push(epoch_loss);
        ckpt.epoch = epoch + 1;

        if let Some(file) = log_file.as_mut() {
            writeln!(
                file,
                "{}",
                serde_json::json!({
                    "epoch": epoch,
                    "loss": epoch_loss,
                    "wall_ms": epoch_start.elapsed().as_millis() as u64,
                })
            )?;
        }
    }
    Ok(ckpt)
}

/// Embed samples for evaluation: fixed window at offset 0 (tiling shorter
/// sequences), batched to bound graph memory.
pub fn embed_samples(
    params: &EncoderParams,
    config: &EncoderConfig,
    samples: &[LabeledSample],
    mode: MetricMode,
) -> Result<Tensor> {
    embed_sequences(
        params,
        config,
        samples.iter().map(|s| &s.sequence),
        samples.len(),
        mode,
    )
}

pub fn embed_sequences<'a>(
    params: &EncoderParams,
    config: &EncoderConfig,
    sequences: impl Iterator<Item = &'a crate::dataset::PoseSequence>,
    count: usize,
    mode: MetricMode,
) -> Result<Tensor> {
    const EVAL_BATCH: usize = 32;
    let window_len = config.window_len();
    let mut rows: Vec<f64> = Vec::with_capacity(count * config.output_dim);
    let mut pending: Vec<f64> = Vec::new();
    let mut pending_count = 0usize;

    let flush =
        |pending: &mut Vec<f64>, pending_count: &mut usize, rows: &mut Vec<f64>| -> Result<()> {
            if *pending_count == 0 {
                return Ok(());
            }
            let t = Tensor::new(
                vec![*pending_count, window_len, config.input_dim],
                std::mem::take(pending),
            )?;
            let out = encode_batch(&t, params, config, mode)?;
            rows.extend_from_slice(out.data());
            *pending_count = 0;
            Ok(())
        };

    for seq in sequences {
        pending.extend(crate::dataset::window_at(seq, window_len, 0));
        pending_count += 1;
        if pending_count == EVAL_BATCH {
            flush(&mut pending, &mut pending_count, &mut rows)?;
        }
    }
    flush(&mut pending, &mut pending_count, &mut rows)?;
    Tensor::new(vec![count, config.output_dim], rows)
}
