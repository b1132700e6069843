//! Subcommand implementations. Every command prints one JSON document to
//! stdout (or `--out`); timings go to the training log stream only, so
//! identical inputs produce byte-identical reports.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use align_core::dataset::{
    assemble_action_samples, assemble_attribute_samples, build_queries, load_action_labels,
    load_attribute_annotations, load_pose_sequences, split_dataset, AttributeManifest,
    AttributeVector, DatasetSplit, Label, LabeledSample,
};
use align_core::encoder::MetricMode;
use align_core::error::{CoreError, Result};
use align_core::eval::{
    action_topk_accuracy, evaluate_retrieval, multilabel_f1, per_attribute_ndcg, retrieve_topk,
    synonym_zero_shot, RetrievalIndex, RetrievalMethod,
};
use align_core::numeric::Tensor;
use align_core::synthetic;
use align_core::textbridge::{
    build_action_prompt, build_attribute_prompt, load_synonyms, save_embedding_table,
    CaptionSource, CaptionStore, EmbeddingProvider, EmbeddingVector, ProviderConfig,
};
use align_core::trainer::{
    embed_samples, load_checkpoint, resume, save_checkpoint, train, Checkpoint, Objective,
    TrainConfig,
};

use crate::Command;

pub const REMOTE_URL_ENV: &str = "ALIGN_REMOTE_EMBED_URL";

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::PrepareData {
            poses,
            labels,
            attributes,
            manifest,
            seed,
            out,
        } => prepare_data(
            &poses,
            labels.as_deref(),
            attributes.as_deref(),
            manifest.as_deref(),
            seed,
            out.as_deref(),
        ),
        Command::GenPrompts {
            kind,
            labels,
            attributes,
            manifest,
            out,
        } => gen_prompts(
            &kind,
            labels.as_deref(),
            attributes.as_deref(),
            manifest.as_deref(),
            out.as_deref(),
        ),
        Command::Embed {
            captions,
            dim,
            remote,
            hash_seed,
            out,
        } => embed(&captions, dim, remote, hash_seed, &out),
        Command::Train {
            config,
            out,
            resume,
            seed,
            epochs,
            lr,
            batch_size,
        } => train_cmd(
            &config,
            &out,
            resume.as_deref(),
            seed,
            epochs,
            lr,
            batch_size,
        ),
        Command::EvalAction {
            ckpt,
            split,
            k,
            use_descriptions,
            out,
        } => eval_action(&ckpt, &split, &k, use_descriptions, out.as_deref()),
        Command::EvalSynonyms {
            ckpt,
            synonyms,
            split,
            k,
            out,
        } => eval_synonyms(&ckpt, synonyms.as_deref(), &split, &k, out.as_deref()),
        Command::EvalRetrieval {
            ckpt,
            method,
            k,
            per_attribute,
            split,
            seed,
            out,
        } => eval_retrieval(
            &ckpt,
            &method,
            &k,
            per_attribute,
            &split,
            seed,
            out.as_deref(),
        ),
        Command::Classify {
            config,
            split,
            ckpt_out,
            out,
        } => classify(&config, &split, ckpt_out.as_deref(), out.as_deref()),
        Command::MakeSynthetic {
            kind,
            out_dir,
            seed,
            out,
        } => make_synthetic(&kind, &out_dir, seed, out.as_deref()),
    }
}

fn emit(report: serde_json::Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(&report)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn require(path: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
    path.cloned()
        .ok_or_else(|| CoreError::validation(format!("config is missing the {what} path")))
}

fn provider_for(config: &TrainConfig) -> Result<EmbeddingProvider> {
    let mut provider_config = config.provider.clone();
    if provider_config.remote_url.is_none() {
        if let Ok(url) = std::env::var(REMOTE_URL_ENV) {
            if !url.is_empty() {
                provider_config.remote_url = Some(url);
            }
        }
    }
    EmbeddingProvider::from_config(&provider_config)
}

/// Everything the evaluation commands need, loaded from a config's paths.
struct DataContext {
    captions: CaptionStore,
    manifest: Option<Arc<AttributeManifest>>,
    annotations: Option<BTreeMap<String, AttributeVector>>,
    samples: BTreeMap<String, Vec<LabeledSample>>,
}

fn load_context(config: &TrainConfig) -> Result<DataContext> {
    let poses_path = require(config.paths.poses.as_ref(), "poses")?;
    let poses = load_pose_sequences(&poses_path)?;
    let ids: Vec<String> = poses.iter().map(|p| p.id.clone()).collect();

    let split = match &config.paths.split {
        Some(path) => DatasetSplit::load(path)?,
        None => split_dataset(&ids, config.seed)?,
    };

    let captions = match &config.paths.captions {
        Some(path) => CaptionStore::load(path)?,
        None => CaptionStore::new(),
    };

    let (all_samples, manifest, annotations) =
        match (&config.paths.labels, &config.paths.attributes) {
            (Some(labels_path), None) => {
                let labels = load_action_labels(labels_path)?;
                (assemble_action_samples(poses, &labels)?, None, None)
            }
            (None, Some(attr_path)) => {
                let manifest_path = require(config.paths.manifest.as_ref(), "manifest")?;
                let manifest = AttributeManifest::load(&manifest_path)?;
                let annotations = load_attribute_annotations(attr_path, &manifest)?;
                (
                    assemble_attribute_samples(poses, &annotations)?,
                    Some(manifest),
                    Some(annotations),
                )
            }
            (Some(_), Some(_)) => {
                return Err(CoreError::validation(
                    "config declares both labels and attributes; pick one",
                ))
            }
            (None, None) => {
                return Err(CoreError::validation(
                    "config must declare a labels or attributes path",
                ))
            }
        };

    let by_id: BTreeMap<String, LabeledSample> = all_samples
        .into_iter()
        .map(|s| (s.sequence.id.clone(), s))
        .collect();
    let mut samples = BTreeMap::new();
    for subset in ["train", "val", "test"] {
        let subset_samples: Vec<LabeledSample> = split
            .subset(subset)?
            .iter()
            .map(|id| {
                by_id.get(id).cloned().ok_or_else(|| {
                    CoreError::validation(format!("split id '{id}' has no pose sequence"))
                })
            })
            .collect::<Result<_>>()?;
        samples.insert(subset.to_string(), subset_samples);
    }

    Ok(DataContext {
        captions,
        manifest,
        annotations,
        samples,
    })
}

impl DataContext {
    fn subset(&self, name: &str) -> Result<&[LabeledSample]> {
        self.samples
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| CoreError::validation(format!("unknown split '{name}'")))
    }
}

// ── prepare-data ────────────────────────────────────────────────────────

fn prepare_data(
    poses: &Path,
    labels: Option<&Path>,
    attributes: Option<&Path>,
    manifest: Option<&Path>,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let sequences = load_pose_sequences(poses)?;
    if sequences.is_empty() {
        return Err(CoreError::validation("pose file contains no sequences"));
    }

    let mut labeled = 0usize;
    if let Some(labels_path) = labels {
        let label_map = load_action_labels(labels_path)?;
        for seq in &sequences {
            if !label_map.contains_key(&seq.id) {
                return Err(CoreError::validation(format!(
                    "sequence '{}' has no action label",
                    seq.id
                )));
            }
        }
        labeled = label_map.len();
    }
    if let Some(attr_path) = attributes {
        let manifest_path =
            manifest.ok_or_else(|| CoreError::validation("--attributes requires --manifest"))?;
        let manifest = AttributeManifest::load(manifest_path)?;
        let annotations = load_attribute_annotations(attr_path, &manifest)?;
        for seq in &sequences {
            if !annotations.contains_key(&seq.id) {
                return Err(CoreError::validation(format!(
                    "sequence '{}' has no attribute annotation",
                    seq.id
                )));
            }
        }
        labeled = annotations.len();
    }

    let ids: Vec<String> = sequences.iter().map(|p| p.id.clone()).collect();
    let split = split_dataset(&ids, seed)?;
    if let Some(path) = out {
        split.save(path)?;
    }
    emit(
        serde_json::json!({
            "command": "prepare-data",
            "sequences": sequences.len(),
            "labeled": labeled,
            "seed": seed,
            "split": {
                "train": split.train.len(),
                "val": split.val.len(),
                "test": split.test.len(),
            },
            "split_file": out.map(|p| p.display().to_string()),
        }),
        None,
    )
}

// ── gen-prompts ─────────────────────────────────────────────────────────

fn gen_prompts(
    kind: &str,
    labels: Option<&Path>,
    attributes: Option<&Path>,
    manifest: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let prompts: Vec<(String, String)> = match kind {
        "action" => {
            let labels_path =
                labels.ok_or_else(|| CoreError::validation("--kind action requires --labels"))?;
            let label_map = load_action_labels(labels_path)?;
            let distinct: BTreeSet<&String> = label_map.values().collect();
            distinct
                .into_iter()
                .map(|l| Ok((l.clone(), build_action_prompt(l)?)))
                .collect::<Result<_>>()?
        }
        "attribute" => {
            let attr_path = attributes
                .ok_or_else(|| CoreError::validation("--kind attribute requires --attributes"))?;
            let manifest_path = manifest
                .ok_or_else(|| CoreError::validation("--kind attribute requires --manifest"))?;
            let manifest = AttributeManifest::load(manifest_path)?;
            let annotations = load_attribute_annotations(attr_path, &manifest)?;
            let mut combos: BTreeMap<String, AttributeVector> = BTreeMap::new();
            for attrs in annotations.values() {
                if attrs.active_count() > 0 {
                    combos
                        .entry(attrs.bitset_string())
                        .or_insert_with(|| attrs.clone());
                }
            }
            combos
                .into_iter()
                .map(|(key, attrs)| Ok((key, build_attribute_prompt(&attrs)?)))
                .collect::<Result<_>>()?
        }
        other => {
            return Err(CoreError::validation(format!(
                "unknown prompt kind '{other}' (expected action|attribute)"
            )))
        }
    };

    let items: Vec<serde_json::Value> = prompts
        .into_iter()
        .map(|(key, prompt)| serde_json::json!({"key": key, "prompt": prompt}))
        .collect();
    emit(
        serde_json::json!({
            "command": "gen-prompts",
            "kind": kind,
            "count": items.len(),
            "prompts": items,
        }),
        out,
    )
}

// ── embed ───────────────────────────────────────────────────────────────

fn embed(
    captions_path: &Path,
    dim: usize,
    remote: Option<String>,
    hash_seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    let captions = CaptionStore::load(captions_path)?;
    let texts: BTreeSet<String> = captions.iter().map(|r| r.text.clone()).collect();
    if texts.is_empty() {
        return Err(CoreError::validation("caption store has no texts"));
    }

    let remote_url =
        remote.or_else(|| std::env::var(REMOTE_URL_ENV).ok().filter(|s| !s.is_empty()));
    if remote_url.is_none() && hash_seed.is_none() {
        return Err(CoreError::validation(
            "configure --remote (or ALIGN_REMOTE_EMBED_URL) or --hash-seed",
        ));
    }
    let provider = EmbeddingProvider::from_config(&ProviderConfig {
        dim,
        table_path: None,
        remote_url,
        timeout_ms: 30_000,
        hash_seed,
    })?;

    let texts: Vec<String> = texts.into_iter().collect();
    let vectors = provider.embed_many(&texts)?;
    save_embedding_table(
        out,
        dim,
        texts
            .iter()
            .map(|t| t.as_str())
            .zip(vectors.iter().map(|v| v.values())),
    )?;
    emit(
        serde_json::json!({
            "command": "embed",
            "texts": texts.len(),
            "dim": dim,
            "out": out.display().to_string(),
        }),
        None,
    )
}

// ── train ───────────────────────────────────────────────────────────────

fn train_cmd(
    config_path: &Path,
    out: &Path,
    resume_path: Option<&Path>,
    seed: Option<u64>,
    epochs: Option<usize>,
    lr: Option<f64>,
    batch_size: Option<usize>,
) -> Result<()> {
    let mut config = TrainConfig::load(config_path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(epochs) = epochs {
        config.epochs = epochs;
    }
    if let Some(lr) = lr {
        config.lr = lr;
    }
    if let Some(batch_size) = batch_size {
        config.batch_size = batch_size;
    }
    config.validate()?;

    let context = load_context(&config)?;
    let provider = provider_for(&config)?;
    let train_samples = context.subset("train")?;

    let checkpoint = match resume_path {
        Some(path) => {
            let mut ckpt = load_checkpoint(path)?;
            ckpt.config.epochs = config.epochs;
            resume(ckpt, train_samples, &provider, &context.captions)?
        }
        None => train(&config, train_samples, &provider, &context.captions)?,
    };
    save_checkpoint(&checkpoint, out)?;

    emit(
        serde_json::json!({
            "command": "train",
            "epochs": checkpoint.epoch,
            "final_loss": checkpoint.loss_history.last(),
            "train_sequences": train_samples.len(),
            "out": out.display().to_string(),
            "config": serde_json::to_value(&checkpoint.config)?,
        }),
        None,
    )
}

// ── shared evaluation plumbing ──────────────────────────────────────────

fn load_for_eval(ckpt_path: &Path) -> Result<(Checkpoint, DataContext, EmbeddingProvider)> {
    let checkpoint = load_checkpoint(ckpt_path)?;
    let context = load_context(&checkpoint.config)?;
    let provider = provider_for(&checkpoint.config)?;
    Ok((checkpoint, context, provider))
}

fn action_labels_of(samples: &[LabeledSample]) -> Result<Vec<String>> {
    samples
        .iter()
        .map(|s| match &s.label {
            Label::Action(a) => Ok(a.clone()),
            Label::Attributes(_) => Err(CoreError::validation(
                "this command needs an action-labeled dataset",
            )),
        })
        .collect()
}

fn class_text_embeddings(
    labels: &[String],
    provider: &EmbeddingProvider,
    use_descriptions: bool,
    captions: &CaptionStore,
) -> Result<Vec<(String, Vec<f64>)>> {
    let distinct: BTreeSet<&String> = labels.iter().collect();
    distinct
        .into_iter()
        .map(|label| {
            let text = if use_descriptions {
                let texts = captions.texts_for_key_with_source(label, CaptionSource::Generated);
                texts.first().map(|t| t.to_string()).ok_or_else(|| {
                    CoreError::validation(format!("no generated description for label '{label}'"))
                })?
            } else {
                label.clone()
            };
            Ok((label.clone(), provider.embed_text(&text)?.0))
        })
        .collect()
}

fn eval_metric(config: &TrainConfig) -> Result<MetricMode> {
    match config.objective {
        Objective::BceMultilabel => Err(CoreError::validation(
            "checkpoint was trained as a classifier; use `align classify`",
        )),
        _ => Ok(config.metric_mode),
    }
}

// ── eval-action ─────────────────────────────────────────────────────────

fn eval_action(
    ckpt_path: &Path,
    split: &str,
    ks: &[usize],
    use_descriptions: bool,
    out: Option<&Path>,
) -> Result<()> {
    let (checkpoint, context, provider) = load_for_eval(ckpt_path)?;
    let metric = eval_metric(&checkpoint.config)?;
    let samples = context.subset(split)?;
    if samples.is_empty() {
        return Err(CoreError::validation(format!("split '{split}' is empty")));
    }
    let labels = action_labels_of(samples)?;
    let classes = class_text_embeddings(&labels, &provider, use_descriptions, &context.captions)?;
    let embeddings = embed_samples(
        &checkpoint.params,
        &checkpoint.config.encoder,
        samples,
        metric,
    )?;

    let mut topk = BTreeMap::new();
    for &k in ks {
        let acc = action_topk_accuracy(&embeddings, &labels, &classes, metric, k)?;
        topk.insert(k.to_string(), acc);
    }
    emit(
        serde_json::json!({
            "command": "eval-action",
            "split": split,
            "samples": samples.len(),
            "classes": classes.len(),
            "use_descriptions": use_descriptions,
            "topk": topk,
            "config": serde_json::to_value(&checkpoint.config)?,
        }),
        out,
    )
}

// ── eval-synonyms ───────────────────────────────────────────────────────

fn eval_synonyms(
    ckpt_path: &Path,
    synonyms_path: Option<&Path>,
    split: &str,
    ks: &[usize],
    out: Option<&Path>,
) -> Result<()> {
    let (checkpoint, context, provider) = load_for_eval(ckpt_path)?;
    let metric = eval_metric(&checkpoint.config)?;
    let synonyms_path = match synonyms_path {
        Some(p) => p.to_path_buf(),
        None => require(checkpoint.config.paths.synonyms.as_ref(), "synonyms")?,
    };
    let synonyms = load_synonyms(&synonyms_path)?;

    let samples = context.subset(split)?;
    if samples.is_empty() {
        return Err(CoreError::validation(format!("split '{split}' is empty")));
    }
    let labels = action_labels_of(samples)?;
    let classes = class_text_embeddings(&labels, &provider, false, &context.captions)?;
    let embeddings = embed_samples(
        &checkpoint.params,
        &checkpoint.config.encoder,
        samples,
        metric,
    )?;

    let mut topk = BTreeMap::new();
    let mut baseline = BTreeMap::new();
    for &k in ks {
        let zero_shot = synonym_zero_shot(
            &embeddings,
            &labels,
            &classes,
            &synonyms,
            &provider,
            metric,
            k,
        )?;
        topk.insert(k.to_string(), zero_shot);
        let base = action_topk_accuracy(&embeddings, &labels, &classes, metric, k)?;
        baseline.insert(k.to_string(), base);
    }
    emit(
        serde_json::json!({
            "command": "eval-synonyms",
            "split": split,
            "samples": samples.len(),
            "topk": topk,
            "baseline_topk": baseline,
            "config": serde_json::to_value(&checkpoint.config)?,
        }),
        out,
    )
}

// ── eval-retrieval ──────────────────────────────────────────────────────

fn eval_retrieval(
    ckpt_path: &Path,
    method: &str,
    ks: &[usize],
    per_attribute: bool,
    split: &str,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let method = match method {
        "cosine" => RetrievalMethod::Cosine,
        "euclidean" => RetrievalMethod::Euclidean,
        "random" => RetrievalMethod::Random,
        other => {
            return Err(CoreError::validation(format!(
                "unknown method '{other}' (expected cosine|euclidean|random)"
            )))
        }
    };
    let (checkpoint, context, provider) = load_for_eval(ckpt_path)?;
    let model_metric = eval_metric(&checkpoint.config)?;
    let samples = context.subset(split)?;
    if samples.is_empty() {
        return Err(CoreError::validation(format!("split '{split}' is empty")));
    }
    let annotations = context.annotations.as_ref().ok_or_else(|| {
        CoreError::validation("eval-retrieval needs an attribute-annotated dataset")
    })?;

    // index metric follows the requested method; embeddings come from the
    // trained model's own mode
    let index_metric = match method {
        RetrievalMethod::Euclidean => MetricMode::Euclidean,
        _ => MetricMode::Cosine,
    };
    let embeddings = embed_samples(
        &checkpoint.params,
        &checkpoint.config.encoder,
        samples,
        model_metric,
    )?;
    let items: Vec<(String, EmbeddingVector, AttributeVector)> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let attrs = match &s.label {
                Label::Attributes(a) => a.clone(),
                Label::Action(_) => unreachable!("annotations imply attribute labels"),
            };
            Ok((
                s.sequence.id.clone(),
                EmbeddingVector(embeddings.row(i).to_vec()),
                attrs,
            ))
        })
        .collect::<Result<_>>()?;
    let index = RetrievalIndex::build(items, index_metric)?;

    let subset_annotations: BTreeMap<String, AttributeVector> = samples
        .iter()
        .map(|s| (s.sequence.id.clone(), annotations[&s.sequence.id].clone()))
        .collect();
    let queries = build_queries(&subset_annotations, &context.captions)?;
    let query_embeddings: Vec<Vec<f64>> = match method {
        RetrievalMethod::Random => Vec::new(),
        _ => queries
            .iter()
            .map(|q| Ok(provider.embed_text(&q.description)?.0))
            .collect::<Result<_>>()?,
    };

    let evaluation = evaluate_retrieval(&queries, &query_embeddings, &index, ks, method, seed)?;
    let per_attr = if per_attribute {
        let k = 5.min(index.len());
        Some(per_attribute_ndcg(
            &queries,
            &query_embeddings,
            &index,
            k,
            method,
            seed,
        )?)
    } else {
        None
    };

    // top-1 ids per query make reports spot-checkable
    let first_hits: Vec<String> = match method {
        RetrievalMethod::Random => Vec::new(),
        _ => query_embeddings
            .iter()
            .map(|q| {
                let top = retrieve_topk(q, &index, 1)?;
                Ok(index.items()[top[0]].id.clone())
            })
            .collect::<Result<_>>()?,
    };

    emit(
        serde_json::json!({
            "command": "eval-retrieval",
            "split": split,
            "method": evaluation.method,
            "K": evaluation.k,
            "ndcg": evaluation.ndcg,
            "excluded_queries": evaluation.excluded_queries,
            "queries": queries.len(),
            "per_attribute": per_attr,
            "top1_ids": if first_hits.is_empty() { None } else { Some(first_hits) },
            "config": serde_json::to_value(&checkpoint.config)?,
        }),
        out,
    )
}

// ── classify ────────────────────────────────────────────────────────────

fn classify(
    config_path: &Path,
    split: &str,
    ckpt_out: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let config = TrainConfig::load(config_path)?;
    if config.objective != Objective::BceMultilabel {
        return Err(CoreError::validation(
            "classify requires objective \"bce-multilabel\" in the config",
        ));
    }
    let context = load_context(&config)?;
    let provider = provider_for(&config)?;
    let manifest = context
        .manifest
        .clone()
        .ok_or_else(|| CoreError::validation("classify needs an attribute-annotated dataset"))?;
    if config.encoder.output_dim != manifest.len() {
        return Err(CoreError::validation(format!(
            "encoder output_dim {} must equal the attribute count {}",
            config.encoder.output_dim,
            manifest.len()
        )));
    }

    let checkpoint = train(
        &config,
        context.subset("train")?,
        &provider,
        &context.captions,
    )?;
    if let Some(path) = ckpt_out {
        save_checkpoint(&checkpoint, path)?;
    }

    let eval_samples = context.subset(split)?;
    if eval_samples.is_empty() {
        return Err(CoreError::validation(format!("split '{split}' is empty")));
    }
    let logits = embed_samples(
        &checkpoint.params,
        &checkpoint.config.encoder,
        eval_samples,
        MetricMode::Euclidean,
    )?;
    let probs: Vec<f64> = logits
        .data()
        .iter()
        .map(|&x| 1.0 / (1.0 + (-x).exp()))
        .collect();
    let probs = Tensor::new(logits.shape().to_vec(), probs)?;
    let mut target_data = Vec::with_capacity(eval_samples.len() * manifest.len());
    for s in eval_samples {
        match &s.label {
            Label::Attributes(a) => target_data.extend(a.target_row()),
            Label::Action(_) => unreachable!("manifest implies attribute labels"),
        }
    }
    let targets = Tensor::new(logits.shape().to_vec(), target_data)?;
    let f1 = multilabel_f1(&probs, &targets, 0.5)?;

    let per_attribute: BTreeMap<&str, f64> = manifest
        .attributes
        .iter()
        .map(|n| n.as_str())
        .zip(f1.per_attribute.iter().copied())
        .collect();
    emit(
        serde_json::json!({
            "command": "classify",
            "split": split,
            "samples": eval_samples.len(),
            "macro_f1": f1.macro_f1,
            "per_attribute": per_attribute,
            "final_loss": checkpoint.loss_history.last(),
            "config": serde_json::to_value(&checkpoint.config)?,
        }),
        out,
    )
}

// ── make-synthetic ──────────────────────────────────────────────────────

fn make_synthetic(kind: &str, out_dir: &Path, seed: u64, out: Option<&Path>) -> Result<()> {
    let files: Vec<&str> = match kind {
        "action" => {
            synthetic::write_action_dataset(out_dir, seed)?;
            vec![
                "poses.jsonl",
                "labels.jsonl",
                "captions.jsonl",
                "synonyms.json",
                "split.json",
            ]
        }
        "retrieval" => {
            synthetic::write_retrieval_dataset(out_dir, seed)?;
            vec![
                "poses.jsonl",
                "attributes.jsonl",
                "manifest.json",
                "captions.jsonl",
                "split.json",
            ]
        }
        other => {
            return Err(CoreError::validation(format!(
                "unknown synthetic kind '{other}' (expected action|retrieval)"
            )))
        }
    };
    emit(
        serde_json::json!({
            "command": "make-synthetic",
            "kind": kind,
            "seed": seed,
            "out_dir": out_dir.display().to_string(),
            "files": files,
        }),
        out,
    )
}
