//! The text side of the alignment: prompt construction for external LLM
//! description generation, caption and synonym stores, and the frozen
//! text-embedding provider chain.
//!
//! The text encoder itself never runs in-process. Embeddings come from a
//! precomputed table, an optional remote HTTP service, or a deterministic
//! hash-based fallback, in that order.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::AttributeVector;
use crate::error::{CoreError, Result};

// ── prompts ─────────────────────────────────────────────────────────────

/// Prompt sent to the LLM to expand an action label into a rich
/// description. The template is fixed; only `{ACT}` is substituted.
pub fn build_action_prompt(action_label: &str) -> Result<String> {
    if action_label.is_empty() {
        return Err(CoreError::validation("build_action_prompt: empty label"));
    }
    Ok(format!(
        "Describe in detail a person’s body movements who is performing the action: {action_label}"
    ))
}

/// Prompt sent to the LLM to describe a person with a set of appearance
/// attributes. Active attribute names are injected as a JSON array in
/// manifest order.
pub fn build_attribute_prompt(attrs: &AttributeVector) -> Result<String> {
    let names = attrs.active_names();
    if names.is_empty() {
        return Err(CoreError::validation(
            "build_attribute_prompt: no active attributes",
        ));
    }
    let json = names
        .iter()
        .map(|n| serde_json::to_string(n).map_err(CoreError::from))
        .collect::<Result<Vec<_>>>()?
        .join(", ");
    Ok(format!(
        "Concisely describe a person with the following features: [{json}]"
    ))
}

// ── caption store ───────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptionSource {
    Original,
    Generated,
    Synonym,
}

/// One description keyed by an action label or an attribute-bitset string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub key: String,
    pub text: String,
    pub source: CaptionSource,
}

/// All captions, grouped by key. Multiple records per key are allowed;
/// training samples among them, evaluation picks deterministically.
#[derive(Debug, Clone, Default)]
pub struct CaptionStore {
    by_key: BTreeMap<String, Vec<CaptionRecord>>,
}

impl CaptionStore {
    pub fn new() -> Self {
        CaptionStore::default()
    }

    pub fn insert(&mut self, record: CaptionRecord) {
        self.by_key
            .entry(record.key.clone())
            .or_default()
            .push(record);
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)
            .map_err(|e| CoreError::validation(format!("captions {}: {e}", path.display())))?;
        let mut store = CaptionStore::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CaptionRecord = serde_json::from_str(&line).map_err(|e| CoreError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            if rec.key.is_empty() || rec.text.is_empty() {
                return Err(CoreError::validation(format!(
                    "caption record at line {} has an empty key or text",
                    i + 1
                )));
            }
            store.insert(rec);
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = File::create(path)?;
        for recs in self.by_key.values() {
            for rec in recs {
                writeln!(out, "{}", serde_json::to_string(rec)?)?;
            }
        }
        Ok(())
    }

    pub fn texts_for_key(&self, key: &str) -> Vec<&str> {
        self.by_key
            .get(key)
            .map(|recs| recs.iter().map(|r| r.text.as_str()).collect())
            .unwrap_or_default()
    }

    /// Texts of records with the given source, sorted for determinism.
    pub fn texts_for_key_with_source(&self, key: &str, source: CaptionSource) -> Vec<&str> {
        let mut texts: Vec<&str> = self
            .by_key
            .get(key)
            .map(|recs| {
                recs.iter()
                    .filter(|r| r.source == source)
                    .map(|r| r.text.as_str())
                    .collect()
            })
            .unwrap_or_default();
        texts.sort();
        texts
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.by_key.keys().map(|k| k.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = &CaptionRecord> {
        self.by_key.values().flatten()
    }

    pub fn is_empty(&self) -> bool {
        self.by_key.is_empty()
    }
}

// ── embeddings ──────────────────────────────────────────────────────────

/// A D-dimensional real vector in the shared motion/text embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Lowercase and collapse whitespace; the canonical form hashed by
/// `hash_embed`.
pub fn normalize_text(text: &str) -> String {
    text.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Deterministic stand-in for the frozen text encoder: seed a
/// counter-based generator with a stable hash of the normalized text,
/// draw `dim` standard normals and L2-normalize.
pub fn hash_embed(text: &str, dim: usize, seed: u64) -> Result<EmbeddingVector> {
    if dim == 0 {
        return Err(CoreError::contract("hash_embed: dim must be >= 1"));
    }
    let normalized = normalize_text(text);
    let h = fnv1a64(normalized.as_bytes()) ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut rng = ChaCha12Rng::seed_from_u64(h);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return Ok(EmbeddingVector(v.into_iter().map(|x| x / norm).collect()));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderKind {
    Table,
    Remote,
    HashFallback,
}

/// Provider configuration; stages are chained table -> remote -> hash,
/// first hit wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub dim: usize,
    #[serde(default)]
    pub table_path: Option<PathBuf>,
    #[serde(default)]
    pub remote_url: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub hash_seed: Option<u64>,
}

fn default_timeout_ms() -> u64 {
    30_000
}

impl ProviderConfig {
    pub fn hash_only(dim: usize, seed: u64) -> Self {
        ProviderConfig {
            dim,
            table_path: None,
            remote_url: None,
            timeout_ms: default_timeout_ms(),
            hash_seed: Some(seed),
        }
    }
}

/// The frozen text encoder E_T as seen by the rest of the system. The
/// same text always maps to the same vector within a provider instance;
/// results are cached so repeated calls are lookups.
pub struct EmbeddingProvider {
    dim: usize,
    table: BTreeMap<String, Arc<Vec<f64>>>,
    remote_url: Option<String>,
    timeout: Duration,
    hash_seed: Option<u64>,
    cache: Mutex<HashMap<String, Arc<Vec<f64>>>>,
}

impl EmbeddingProvider {
    pub fn from_config(config: &ProviderConfig) -> Result<Self> {
        if config.dim == 0 {
            return Err(CoreError::validation("provider: dim must be >= 1"));
        }
        if config.table_path.is_none() && config.remote_url.is_none() && config.hash_seed.is_none()
        {
            return Err(CoreError::validation(
                "provider: configure at least one of table_path, remote_url, hash_seed",
            ));
        }
        let table = match &config.table_path {
            Some(path) => {
                let (dim, entries) = load_embedding_table(path)?;
                if dim != config.dim {
                    return Err(CoreError::validation(format!(
                        "table dim {dim} does not match provider dim {}",
                        config.dim
                    )));
                }
                entries
            }
            None => BTreeMap::new(),
        };
        Ok(EmbeddingProvider {
            dim: config.dim,
            table,
            remote_url: config.remote_url.clone(),
            timeout: Duration::from_millis(config.timeout_ms),
            hash_seed: config.hash_seed,
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Build a provider straight from (text, vector) pairs; used by tests
    /// and by the synonym-rigging evaluation path.
    pub fn from_table_entries(dim: usize, entries: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut table = BTreeMap::new();
        for (text, v) in entries {
            if v.len() != dim {
                return Err(CoreError::validation(format!(
                    "table entry '{text}' has dim {}, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(CoreError::validation(format!(
                    "table entry '{text}' has non-finite values"
                )));
            }
            table.insert(text, Arc::new(v));
        }
        Ok(EmbeddingProvider {
            dim,
            table,
            remote_url: None,
            timeout: Duration::from_millis(default_timeout_ms()),
            hash_seed: None,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn hash_fallback(dim: usize, seed: u64) -> Self {
        EmbeddingProvider {
            dim,
            table: BTreeMap::new(),
            remote_url: None,
            timeout: Duration::from_millis(default_timeout_ms()),
            hash_seed: Some(seed),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The first configured stage.
    pub fn kind(&self) -> ProviderKind {
        if !self.table.is_empty() {
            ProviderKind::Table
        } else if self.remote_url.is_some() {
            ProviderKind::Remote
        } else {
            ProviderKind::HashFallback
        }
    }

    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        if let Some(hit) = self.cache.lock().unwrap().get(text) {
            return Ok(EmbeddingVector(hit.as_ref().clone()));
        }
        let resolved = self.resolve(text)?;
        self.cache
            .lock()
            .unwrap()
            .entry(text.to_string())
            .or_insert_with(|| resolved.clone());
        Ok(EmbeddingVector(resolved.as_ref().clone()))
    }

    fn resolve(&self, text: &str) -> Result<Arc<Vec<f64>>> {
        if let Some(v) = self.table.get(text) {
            return Ok(v.clone());
        }
        if let Some(url) = &self.remote_url {
            let vectors = remote_embed(url, self.timeout, self.dim, &[text.to_string()])?;
            return Ok(Arc::new(vectors.into_iter().next().unwrap()));
        }
        if let Some(seed) = self.hash_seed {
            return Ok(Arc::new(hash_embed(text, self.dim, seed)?.0));
        }
        Err(CoreError::NotFound(format!(
            "no embedding for text '{text}' and no fallback configured"
        )))
    }

    pub fn embed_many(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        texts.iter().map(|t| self.embed_text(t)).collect()
    }
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct RemoteResponse {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

/// POST {base}/embed with `{"texts": [...]}`; expects
/// `{"dim": D, "vectors": [[..] ...]}` and status 200.
pub fn remote_embed(
    base_url: &str,
    timeout: Duration,
    dim: usize,
    texts: &[String],
) -> Result<Vec<Vec<f64>>> {
    let url = format!("{}/embed", base_url.trim_end_matches('/'));
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let mut response = agent
        .post(&url)
        .send_json(RemoteRequest { texts })
        .map_err(|e| CoreError::Provider(format!("POST {url}: {e}")))?;
    let status = response.status().as_u16();
    if status != 200 {
        return Err(CoreError::Provider(format!(
            "POST {url}: unexpected status {status}"
        )));
    }
    let body: RemoteResponse = response
        .body_mut()
        .read_json()
        .map_err(|e| CoreError::Provider(format!("POST {url}: bad response body: {e}")))?;
    if body.dim != dim {
        return Err(CoreError::Provider(format!(
            "remote returned dim {}, expected {dim}",
            body.dim
        )));
    }
    if body.vectors.len() != texts.len() {
        return Err(CoreError::Provider(format!(
            "remote returned {} vectors for {} texts",
            body.vectors.len(),
            texts.len()
        )));
    }
    for v in &body.vectors {
        if v.len() != dim || v.iter().any(|x| !x.is_finite()) {
            return Err(CoreError::Provider(
                "remote returned a malformed vector".to_string(),
            ));
        }
    }
    Ok(body.vectors)
}

// ── embedding table file ────────────────────────────────────────────────

/// text -> shared embedding storage, as loaded from a table file.
pub type EmbeddingTable = BTreeMap<String, Arc<Vec<f64>>>;

#[derive(Serialize, Deserialize)]
struct TableHeader {
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct TableRecord {
    text: String,
    vector: Vec<f64>,
}

/// Embedding table: a `{"dim": D}` header line followed by
/// `{"text", "vector"}` JSON lines.
pub fn load_embedding_table(path: &Path) -> Result<(usize, EmbeddingTable)> {
    let file = File::open(path)
        .map_err(|e| CoreError::validation(format!("embedding table {}: {e}", path.display())))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let header: TableHeader = loop {
        match lines.next() {
            Some((i, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| CoreError::Parse {
                    line: i + 1,
                    msg: format!("expected {{\"dim\": D}} header: {e}"),
                })?;
            }
            None => return Err(CoreError::validation("embedding table is empty")),
        }
    };
    if header.dim == 0 {
        return Err(CoreError::validation("embedding table: dim must be >= 1"));
    }
    let mut out = BTreeMap::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TableRecord = serde_json::from_str(&line).map_err(|e| CoreError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if rec.vector.len() != header.dim {
            return Err(CoreError::validation(format!(
                "line {}: vector has dim {}, header says {}",
                i + 1,
                rec.vector.len(),
                header.dim
            )));
        }
        if rec.vector.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::validation(format!(
                "line {}: non-finite vector value",
                i + 1
            )));
        }
        if out.insert(rec.text.clone(), Arc::new(rec.vector)).is_some() {
            return Err(CoreError::validation(format!(
                "duplicate table entry for text '{}'",
                rec.text
            )));
        }
    }
    Ok((header.dim, out))
}

pub fn save_embedding_table<'a>(
    path: &Path,
    dim: usize,
    entries: impl Iterator<Item = (&'a str, &'a [f64])>,
) -> Result<()> {
    let mut out = File::create(path)?;
    writeln!(out, "{}", serde_json::to_string(&TableHeader { dim })?)?;
    for (text, vector) in entries {
        let rec = TableRecord {
            text: text.to_string(),
            vector: vector.to_vec(),
        };
        writeln!(out, "{}", serde_json::to_string(&rec)?)?;
    }
    Ok(())
}

// ── synonyms ────────────────────────────────────────────────────────────

/// Synonym map `{label: [synonyms]}`; every label needs at least one
/// non-empty synonym. List order is preserved (the first synonym is the
/// zero-shot replacement).
pub fn load_synonyms(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let file = File::open(path)
        .map_err(|e| CoreError::validation(format!("synonyms {}: {e}", path.display())))?;
    let map: BTreeMap<String, Vec<String>> = serde_json::from_reader(BufReader::new(file))?;
    for (label, synonyms) in &map {
        if synonyms.is_empty() {
            return Err(CoreError::validation(format!(
                "label '{label}' has an empty synonym list"
            )));
        }
        if synonyms.iter().any(|s| s.is_empty()) {
            return Err(CoreError::validation(format!(
                "label '{label}' has an empty synonym string"
            )));
        }
    }
    Ok(map)
}
