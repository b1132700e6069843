//! Retrieval index, NDCG@K machinery, action-recognition top-k, zero-shot
//! synonym evaluation, per-attribute metrics and the random baseline.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::dataset::{AttributeVector, Query};
use crate::encoder::MetricMode;
use crate::error::{CoreError, Result};
use crate::numeric::Tensor;
use crate::textbridge::{fnv1a64, EmbeddingProvider, EmbeddingVector};

// ── index ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct IndexItem {
    pub id: String,
    pub embedding: Vec<f64>,
    pub attrs: AttributeVector,
}

/// Immutable store of (id, embedding, attributes) supporting top-k queries
/// under cosine similarity or euclidean distance.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    items: Vec<IndexItem>,
    metric: MetricMode,
}

impl RetrievalIndex {
    pub fn build(
        items: Vec<(String, EmbeddingVector, AttributeVector)>,
        metric: MetricMode,
    ) -> Result<Self> {
        if items.is_empty() {
            return Err(CoreError::validation("retrieval index: no items"));
        }
        let dim = items[0].1.dim();
        let mut seen = std::collections::HashSet::new();
        for (id, emb, attrs) in &items {
            if emb.dim() != dim {
                return Err(CoreError::contract(format!(
                    "index item '{id}': dim {} != {dim}",
                    emb.dim()
                )));
            }
            if emb.0.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::validation(format!(
                    "index item '{id}': non-finite embedding"
                )));
            }
            if !attrs.same_schema(&items[0].2) {
                return Err(CoreError::validation(format!(
                    "index item '{id}': attribute manifest mismatch"
                )));
            }
            if !seen.insert(id.clone()) {
                return Err(CoreError::validation(format!("duplicate index id '{id}'")));
            }
        }
        Ok(RetrievalIndex {
            items: items
                .into_iter()
                .map(|(id, emb, attrs)| IndexItem {
                    id,
                    embedding: emb.0,
                    attrs,
                })
                .collect(),
            metric,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[IndexItem] {
        &self.items
    }

    pub fn metric(&self) -> MetricMode {
        self.metric
    }

    pub fn dim(&self) -> usize {
        self.items[0].embedding.len()
    }
}

// ── relevance and NDCG ──────────────────────────────────────────────────

/// Graded relevance: the number of attributes active in both the query
/// and the item.
pub fn relevance(query_attrs: &AttributeVector, item_attrs: &AttributeVector) -> Result<u32> {
    if !query_attrs.same_schema(item_attrs) {
        return Err(CoreError::validation(
            "relevance: attribute manifest mismatch",
        ));
    }
    Ok(query_attrs
        .active()
        .iter()
        .zip(item_attrs.active())
        .filter(|(&q, &i)| q && i)
        .count() as u32)
}

/// DCG@K = sum_{i=1..K} rel_i / log2(1 + i).
pub fn dcg_at_k(rel: &[u32], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(CoreError::contract("dcg_at_k: K must be >= 1"));
    }
    if rel.len() < k {
        return Err(CoreError::contract(format!(
            "dcg_at_k: K={k} exceeds list length {}",
            rel.len()
        )));
    }
    Ok(rel[..k]
        .iter()
        .enumerate()
        .map(|(i, &r)| r as f64 / ((i + 2) as f64).log2())
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ndcg {
    pub value: f64,
    /// True when the ideal relevance is all zero; such queries are
    /// excluded from averages.
    pub excluded: bool,
}

/// NDCG@K = DCG@K / IDCG@K. `ideal_rel` must be the corpus-wide relevance
/// list sorted descending.
pub fn ndcg_at_k(retrieved_rel: &[u32], ideal_rel: &[u32], k: usize) -> Result<Ndcg> {
    if ideal_rel.windows(2).any(|w| w[0] < w[1]) {
        return Err(CoreError::contract(
            "ndcg_at_k: ideal relevance list is not sorted descending",
        ));
    }
    let dcg = dcg_at_k(retrieved_rel, k)?;
    let idcg = dcg_at_k(ideal_rel, k)?;
    if idcg == 0.0 {
        return Ok(Ndcg {
            value: 0.0,
            excluded: true,
        });
    }
    Ok(Ndcg {
        value: dcg / idcg,
        excluded: false,
    })
}

// ── top-k retrieval ─────────────────────────────────────────────────────

fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(CoreError::numeric("cosine", "zero-norm vector"));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Exhaustive top-k scan: cosine orders by descending similarity,
/// euclidean by ascending distance; ties break by ascending item id.
/// Returns positions into `index.items()`.
pub fn retrieve_topk(query: &[f64], index: &RetrievalIndex, k: usize) -> Result<Vec<usize>> {
    if k > index.len() {
        return Err(CoreError::contract(format!(
            "retrieve_topk: K={k} exceeds corpus size {}",
            index.len()
        )));
    }
    if query.len() != index.dim() {
        return Err(CoreError::contract(format!(
            "retrieve_topk: query dim {} != index dim {}",
            query.len(),
            index.dim()
        )));
    }
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(index.len());
    for (pos, item) in index.items.iter().enumerate() {
        let score = match index.metric {
            MetricMode::Cosine => -cosine_similarity(query, &item.embedding)?,
            MetricMode::Euclidean => euclidean_distance(query, &item.embedding),
        };
        scored.push((score, pos));
    }
    // ascending score (similarity negated above), then ascending id
    scored.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("finite scores")
            .then_with(|| index.items[a.1].id.cmp(&index.items[b.1].id))
    });
    Ok(scored[..k].iter().map(|&(_, pos)| pos).collect())
}

// ── retrieval evaluation ────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalMethod {
    Cosine,
    Euclidean,
    Random,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct RetrievalEvaluation {
    pub method: RetrievalMethod,
    pub k: Vec<usize>,
    /// Mean NDCG@K over non-excluded queries, aligned with `k`.
    pub ndcg: Vec<f64>,
    pub excluded_queries: usize,
}

fn query_order(
    query: &Query,
    embedding: Option<&Vec<f64>>,
    index: &RetrievalIndex,
    method: RetrievalMethod,
    seed: u64,
) -> Result<Vec<usize>> {
    match method {
        RetrievalMethod::Random => {
            // per-query stream so parallel evaluation cannot change results
            let h = seed ^ fnv1a64(query.attrs.bitset_string().as_bytes());
            let mut rng = ChaCha12Rng::seed_from_u64(h);
            let mut order: Vec<usize> = (0..index.len()).collect();
            order.shuffle(&mut rng);
            Ok(order)
        }
        RetrievalMethod::Cosine | RetrievalMethod::Euclidean => {
            let embedding = embedding.ok_or_else(|| {
                CoreError::contract("query embedding required for non-random retrieval")
            })?;
            retrieve_topk(embedding, index, index.len())
        }
    }
}

fn method_matches_metric(method: RetrievalMethod, metric: MetricMode) -> Result<()> {
    let ok = match method {
        RetrievalMethod::Cosine => metric == MetricMode::Cosine,
        RetrievalMethod::Euclidean => metric == MetricMode::Euclidean,
        RetrievalMethod::Random => true,
    };
    if ok {
        Ok(())
    } else {
        Err(CoreError::contract(
            "retrieval method does not match the index metric",
        ))
    }
}

/// Mean NDCG@K per K over all queries (excluding those whose corpus
/// relevance is identically zero). `query_embeddings` must align with
/// `queries` for cosine/euclidean; the random baseline ignores it.
pub fn evaluate_retrieval(
    queries: &[Query],
    query_embeddings: &[Vec<f64>],
    index: &RetrievalIndex,
    ks: &[usize],
    method: RetrievalMethod,
    seed: u64,
) -> Result<RetrievalEvaluation> {
    if queries.is_empty() {
        return Err(CoreError::validation("evaluate_retrieval: no queries"));
    }
    if ks.is_empty() {
        return Err(CoreError::validation("evaluate_retrieval: no K values"));
    }
    if let Some(&kmax) = ks.iter().max() {
        if kmax > index.len() {
            return Err(CoreError::validation(format!(
                "evaluate_retrieval: K={kmax} exceeds corpus size {}",
                index.len()
            )));
        }
    }
    method_matches_metric(method, index.metric())?;
    if method != RetrievalMethod::Random && query_embeddings.len() != queries.len() {
        return Err(CoreError::contract(format!(
            "evaluate_retrieval: {} embeddings for {} queries",
            query_embeddings.len(),
            queries.len()
        )));
    }

    let mut sums = vec![0.0; ks.len()];
    let mut counted = 0usize;
    let mut excluded = 0usize;
    for (qi, query) in queries.iter().enumerate() {
        let order = query_order(query, query_embeddings.get(qi), index, method, seed)?;
        let retrieved_rel: Vec<u32> = order
            .iter()
            .map(|&pos| relevance(&query.attrs, &index.items[pos].attrs))
            .collect::<Result<_>>()?;
        let mut ideal_rel = retrieved_rel.clone();
        ideal_rel.sort_unstable_by(|a, b| b.cmp(a));

        let mut query_excluded = false;
        let mut values = Vec::with_capacity(ks.len());
        for &k in ks {
            let ndcg = ndcg_at_k(&retrieved_rel, &ideal_rel, k)?;
            query_excluded = ndcg.excluded;
            values.push(ndcg.value);
        }
        if query_excluded {
            excluded += 1;
        } else {
            counted += 1;
            for (s, v) in sums.iter_mut().zip(values) {
                *s += v;
            }
        }
    }

    let ndcg = if counted == 0 {
        vec![0.0; ks.len()]
    } else {
        sums.into_iter().map(|s| s / counted as f64).collect()
    };
    Ok(RetrievalEvaluation {
        method,
        k: ks.to_vec(),
        ndcg,
        excluded_queries: excluded,
    })
}

/// NDCG@K per attribute: restrict to queries with the attribute active and
/// score with binary relevance (item has the attribute or not). Attributes
/// active in no query, or whose queries are all excluded, have no entry.
pub fn per_attribute_ndcg(
    queries: &[Query],
    query_embeddings: &[Vec<f64>],
    index: &RetrievalIndex,
    k: usize,
    method: RetrievalMethod,
    seed: u64,
) -> Result<BTreeMap<String, f64>> {
    if queries.is_empty() {
        return Err(CoreError::validation("per_attribute_ndcg: no queries"));
    }
    if k > index.len() {
        return Err(CoreError::validation(format!(
            "per_attribute_ndcg: K={k} exceeds corpus size {}",
            index.len()
        )));
    }
    method_matches_metric(method, index.metric())?;
    let manifest = queries[0].attrs.manifest().clone();

    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (qi, query) in queries.iter().enumerate() {
        let order = query_order(query, query_embeddings.get(qi), index, method, seed)?;
        for (ai, name) in manifest.attributes.iter().enumerate() {
            if !query.attrs.active()[ai] {
                continue;
            }
            let retrieved_rel: Vec<u32> = order
                .iter()
                .map(|&pos| u32::from(index.items[pos].attrs.active()[ai]))
                .collect();
            let mut ideal_rel = retrieved_rel.clone();
            ideal_rel.sort_unstable_by(|a, b| b.cmp(a));
            let ndcg = ndcg_at_k(&retrieved_rel, &ideal_rel, k)?;
            if !ndcg.excluded {
                let slot = sums.entry(name.clone()).or_insert((0.0, 0));
                slot.0 += ndcg.value;
                slot.1 += 1;
            }
        }
    }
    Ok(sums
        .into_iter()
        .map(|(name, (sum, n))| (name, sum / n as f64))
        .collect())
}

// ── action recognition ──────────────────────────────────────────────────

/// Predict by distance between pose embeddings and per-class label text
/// embeddings; accuracy is the fraction of samples whose true label is in
/// the top-k nearest classes. Ties break by ascending class id.
pub fn action_topk_accuracy(
    pose_embeddings: &Tensor,
    true_labels: &[String],
    label_embeddings: &[(String, Vec<f64>)],
    metric: MetricMode,
    k: usize,
) -> Result<f64> {
    let (b, d) = pose_embeddings.as_matrix_dims()?;
    if true_labels.len() != b {
        return Err(CoreError::contract(format!(
            "action_topk: {} labels for {b} embeddings",
            true_labels.len()
        )));
    }
    if label_embeddings.is_empty() {
        return Err(CoreError::validation("action_topk: no classes"));
    }
    let mut classes: Vec<(String, Vec<f64>)> = label_embeddings.to_vec();
    classes.sort_by(|a, b| a.0.cmp(&b.0));
    for (label, emb) in &classes {
        if emb.len() != d {
            return Err(CoreError::contract(format!(
                "action_topk: class '{label}' embedding dim {} != {d}",
                emb.len()
            )));
        }
    }
    let k = k.min(classes.len());

    let mut hits = 0usize;
    for (row, true_label) in true_labels.iter().enumerate() {
        if !classes.iter().any(|(l, _)| l == true_label) {
            return Err(CoreError::validation(format!(
                "action_topk: unknown true label '{true_label}'"
            )));
        }
        let z = pose_embeddings.row(row);
        let mut scored: Vec<(f64, usize)> = Vec::with_capacity(classes.len());
        for (ci, (_, emb)) in classes.iter().enumerate() {
            let score = match metric {
                MetricMode::Cosine => -cosine_similarity(z, emb)?,
                MetricMode::Euclidean => euclidean_distance(z, emb),
            };
            scored.push((score, ci));
        }
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite").then(a.1.cmp(&b.1)));
        if scored[..k]
            .iter()
            .any(|&(_, ci)| &classes[ci].0 == true_label)
        {
            hits += 1;
        }
    }
    Ok(hits as f64 / b as f64)
}

/// Zero-shot synonym transfer: swap each class's embedding for the
/// embedding of its first synonym and rerun `action_topk_accuracy`
/// unchanged.
pub fn synonym_zero_shot(
    pose_embeddings: &Tensor,
    true_labels: &[String],
    label_embeddings: &[(String, Vec<f64>)],
    synonyms: &BTreeMap<String, Vec<String>>,
    provider: &EmbeddingProvider,
    metric: MetricMode,
    k: usize,
) -> Result<f64> {
    let mut replaced = Vec::with_capacity(label_embeddings.len());
    for (label, _) in label_embeddings {
        let list = synonyms
            .get(label)
            .ok_or_else(|| CoreError::validation(format!("no synonyms for label '{label}'")))?;
        let first = list.first().ok_or_else(|| {
            CoreError::validation(format!("empty synonym list for label '{label}'"))
        })?;
        replaced.push((label.clone(), provider.embed_text(first)?.0));
    }
    action_topk_accuracy(pose_embeddings, true_labels, &replaced, metric, k)
}

// ── multi-label F1 ──────────────────────────────────────────────────────

#[derive(Debug, Clone, serde::Serialize)]
pub struct MultilabelF1 {
    /// Per-attribute F1 in manifest order.
    pub per_attribute: Vec<f64>,
    /// Unweighted mean over attributes with at least one positive target.
    pub macro_f1: f64,
}

/// Binarize probabilities at strictly-greater-than `threshold`, then
/// per-attribute F1 = 2PR/(P+R) (0 when P+R = 0).
pub fn multilabel_f1(
    predictions: &Tensor,
    targets: &Tensor,
    threshold: f64,
) -> Result<MultilabelF1> {
    if predictions.shape() != targets.shape() {
        return Err(CoreError::contract(format!(
            "multilabel_f1: predictions {:?} vs targets {:?}",
            predictions.shape(),
            targets.shape()
        )));
    }
    let (b, a) = predictions.as_matrix_dims()?;
    if predictions
        .data()
        .iter()
        .any(|&p| !(0.0..=1.0).contains(&p))
    {
        return Err(CoreError::validation(
            "multilabel_f1: probabilities outside [0, 1]",
        ));
    }
    if targets.data().iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(CoreError::validation(
            "multilabel_f1: targets outside {0, 1}",
        ));
    }

    let mut per_attribute = Vec::with_capacity(a);
    let mut macro_sum = 0.0;
    let mut macro_count = 0usize;
    for col in 0..a {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fne = 0usize;
        let mut positives = 0usize;
        for row in 0..b {
            let pred = predictions.data()[row * a + col] > threshold;
            let target = targets.data()[row * a + col] == 1.0;
            positives += usize::from(target);
            match (pred, target) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fne += 1,
                (false, false) => {}
            }
        }
        // 2TP/(2TP+FP+FN) equals 2PR/(P+R) and handles the P+R=0 case
        let denom = 2 * tp + fp + fne;
        let f1 = if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        };
        per_attribute.push(f1);
        if positives > 0 {
            macro_sum += f1;
            macro_count += 1;
        }
    }
    let macro_f1 = if macro_count == 0 {
        0.0
    } else {
        macro_sum / macro_count as f64
    };
    Ok(MultilabelF1 {
        per_attribute,
        macro_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::AttributeManifest;
    use std::sync::Arc;

    fn manifest(names: &[&str]) -> Arc<AttributeManifest> {
        Arc::new(AttributeManifest::new(names.iter().map(|s| s.to_string()).collect()).unwrap())
    }

    fn attrs(m: &Arc<AttributeManifest>, names: &[&str]) -> AttributeVector {
        AttributeVector::from_active_names(m.clone(), names).unwrap()
    }

    #[test]
    fn relevance_counts_common_active_attributes() {
        let m = manifest(&["a", "b", "c", "d", "e"]);
        let q = attrs(&m, &["a", "b", "c", "d", "e"]);
        assert_eq!(relevance(&q, &q).unwrap(), 5);

        let q = attrs(&m, &["a", "b"]);
        let i = attrs(&m, &["c", "d"]);
        assert_eq!(relevance(&q, &i).unwrap(), 0);

        let q = attrs(&m, &["a", "b", "c"]);
        let i = attrs(&m, &["b", "c", "d"]);
        assert_eq!(relevance(&q, &i).unwrap(), 2);

        let other = manifest(&["x", "y", "z", "w", "v"]);
        let j = attrs(&other, &["x"]);
        assert!(relevance(&q, &j).is_err());
    }

    #[test]
    fn dcg_hand_values() {
        assert_eq!(dcg_at_k(&[1], 1).unwrap(), 1.0);
        assert_eq!(dcg_at_k(&[0, 0, 0], 3).unwrap(), 0.0);
        let v = dcg_at_k(&[1, 3], 2).unwrap();
        assert!((v - 2.89279).abs() < 1e-5, "{v}");
        assert!(dcg_at_k(&[1], 2).is_err());
    }

    #[test]
    fn ndcg_hand_values_and_exclusion() {
        let perfect = ndcg_at_k(&[3, 1], &[3, 1], 2).unwrap();
        assert_eq!(perfect.value, 1.0);
        assert!(!perfect.excluded);

        let v = ndcg_at_k(&[1, 3], &[3, 1], 2).unwrap();
        assert!((v.value - 0.79671).abs() < 1e-5, "{}", v.value);

        let zero = ndcg_at_k(&[0, 0], &[0, 0], 2).unwrap();
        assert_eq!(zero.value, 0.0);
        assert!(zero.excluded);
    }

    fn small_index(metric: MetricMode) -> RetrievalIndex {
        let m = manifest(&["a", "b"]);
        RetrievalIndex::build(
            vec![
                (
                    "i0".into(),
                    EmbeddingVector(vec![1.0, 0.0]),
                    attrs(&m, &["a"]),
                ),
                (
                    "i1".into(),
                    EmbeddingVector(vec![0.0, 1.0]),
                    attrs(&m, &["b"]),
                ),
                (
                    "i2".into(),
                    EmbeddingVector(vec![1.0, 1.0]),
                    attrs(&m, &["a", "b"]),
                ),
            ],
            metric,
        )
        .unwrap()
    }

    #[test]
    fn topk_exact_match_comes_first() {
        let index = small_index(MetricMode::Cosine);
        let order = retrieve_topk(&[1.0, 0.0], &index, 3).unwrap();
        assert_eq!(order[0], 0);
    }

    #[test]
    fn topk_ties_break_by_ascending_id() {
        let m = manifest(&["a"]);
        let index = RetrievalIndex::build(
            vec![
                (
                    "z".into(),
                    EmbeddingVector(vec![1.0, 0.0]),
                    attrs(&m, &["a"]),
                ),
                (
                    "a".into(),
                    EmbeddingVector(vec![1.0, 0.0]),
                    attrs(&m, &["a"]),
                ),
            ],
            MetricMode::Euclidean,
        )
        .unwrap();
        let order = retrieve_topk(&[1.0, 0.0], &index, 2).unwrap();
        assert_eq!(index.items()[order[0]].id, "a");
        assert_eq!(index.items()[order[1]].id, "z");
    }

    #[test]
    fn topk_matches_selection_oracle_on_random_corpora() {
        use rand::Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let m = manifest(&["a"]);
        for trial in 0..100 {
            let n = rng.random_range(2..=50);
            let dim = rng.random_range(1..=6);
            let items: Vec<(String, EmbeddingVector, AttributeVector)> = (0..n)
                .map(|i| {
                    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                    (format!("id{i:03}"), EmbeddingVector(v), attrs(&m, &["a"]))
                })
                .collect();
            let metric = if trial % 2 == 0 {
                MetricMode::Cosine
            } else {
                MetricMode::Euclidean
            };
            let index = RetrievalIndex::build(items, metric).unwrap();
            let query: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            if query.iter().all(|&v| v == 0.0) {
                continue;
            }
            let got = retrieve_topk(&query, &index, n).unwrap();

            // oracle: repeated argmin selection with the same tie rule,
            // no sorting involved
            let score = |pos: usize| -> f64 {
                let e = &index.items()[pos].embedding;
                match metric {
                    MetricMode::Cosine => -cosine_similarity(&query, e).unwrap(),
                    MetricMode::Euclidean => euclidean_distance(&query, e),
                }
            };
            let mut remaining: Vec<usize> = (0..n).collect();
            let mut expected = Vec::new();
            while !remaining.is_empty() {
                let best = *remaining
                    .iter()
                    .min_by(|&&a, &&b| {
                        score(a)
                            .partial_cmp(&score(b))
                            .unwrap()
                            .then_with(|| index.items()[a].id.cmp(&index.items()[b].id))
                    })
                    .unwrap();
                expected.push(best);
                remaining.retain(|&p| p != best);
            }
            assert_eq!(got, expected, "trial {trial}");
        }
    }

    #[test]
    fn uniform_corpus_scores_one_for_every_method() {
        let m = manifest(&["a", "b"]);
        let same = attrs(&m, &["a", "b"]);
        let items: Vec<(String, EmbeddingVector, AttributeVector)> = (0..6)
            .map(|i| {
                (
                    format!("i{i}"),
                    EmbeddingVector(vec![i as f64 + 1.0, 1.0]),
                    same.clone(),
                )
            })
            .collect();
        let queries = vec![Query {
            attrs: same.clone(),
            description: "anyone".into(),
        }];
        let embeddings = vec![vec![0.4, 0.2]];

        for (metric, method) in [
            (MetricMode::Cosine, RetrievalMethod::Cosine),
            (MetricMode::Euclidean, RetrievalMethod::Euclidean),
            (MetricMode::Cosine, RetrievalMethod::Random),
        ] {
            let index = RetrievalIndex::build(items.clone(), metric).unwrap();
            let eval =
                evaluate_retrieval(&queries, &embeddings, &index, &[1, 3, 5], method, 9).unwrap();
            for v in eval.ndcg {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn random_baseline_matches_monte_carlo_expectation() {
        use rand::Rng;
        // fixed small corpus with binary-ish graded relevance
        let m = manifest(&["a", "b", "c"]);
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let all_names = ["a", "b", "c"];
        let items: Vec<(String, EmbeddingVector, AttributeVector)> = (0..12)
            .map(|i| {
                let active: Vec<&str> = all_names
                    .iter()
                    .filter(|_| rng.random_bool(0.5))
                    .cloned()
                    .collect();
                (
                    format!("i{i:02}"),
                    EmbeddingVector(vec![rng.random_range(-1.0..1.0)]),
                    attrs(&m, &active),
                )
            })
            .collect();
        let index = RetrievalIndex::build(items, MetricMode::Cosine).unwrap();
        let query = Query {
            attrs: attrs(&m, &["a", "b"]),
            description: "q".into(),
        };
        let k = 5;

        // Monte-Carlo estimate of E[NDCG@5] under uniform permutations
        let rels: Vec<u32> = index
            .items()
            .iter()
            .map(|item| relevance(&query.attrs, &item.attrs).unwrap())
            .collect();
        let mut ideal = rels.clone();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let idcg = dcg_at_k(&ideal, k).unwrap();
        let mut mc = 0.0;
        let mut order: Vec<usize> = (0..rels.len()).collect();
        for _ in 0..10_000 {
            order.shuffle(&mut rng);
            let perm_rel: Vec<u32> = order.iter().map(|&p| rels[p]).collect();
            mc += dcg_at_k(&perm_rel, k).unwrap() / idcg;
        }
        mc /= 10_000.0;

        // average the evaluator's one-draw-per-query estimate over seeds
        let queries = vec![query];
        let mut estimate = 0.0;
        let runs = 400;
        for seed in 0..runs {
            let eval =
                evaluate_retrieval(&queries, &[], &index, &[k], RetrievalMethod::Random, seed)
                    .unwrap();
            estimate += eval.ndcg[0];
        }
        estimate /= runs as f64;
        assert!(
            (estimate - mc).abs() < 0.02,
            "random baseline {estimate} vs MC {mc}"
        );
    }

    #[test]
    fn per_attribute_ndcg_hand_case() {
        // 6-item corpus, attribute "a" active in items 0, 2, 4; retrieval
        // order by euclidean distance to the query embedding is fixed by
        // construction: i0, i1, i2, i3, i4, i5
        let m = manifest(&["a", "b"]);
        let items: Vec<(String, EmbeddingVector, AttributeVector)> = (0..6)
            .map(|i| {
                let names: &[&str] = if i % 2 == 0 { &["a"] } else { &["b"] };
                (
                    format!("i{i}"),
                    EmbeddingVector(vec![i as f64]),
                    attrs(&m, names),
                )
            })
            .collect();
        let index = RetrievalIndex::build(items, MetricMode::Euclidean).unwrap();
        let queries = vec![Query {
            attrs: attrs(&m, &["a"]),
            description: "q".into(),
        }];
        let embeddings = vec![vec![-0.5]];
        let per = per_attribute_ndcg(
            &queries,
            &embeddings,
            &index,
            5,
            RetrievalMethod::Euclidean,
            0,
        )
        .unwrap();

        // retrieved binary rel for "a": [1,0,1,0,1]; ideal [1,1,1,0,0]
        let dcg = 1.0 / 2f64.log2() + 1.0 / 4f64.log2() + 1.0 / 6f64.log2();
        let idcg = 1.0 / 2f64.log2() + 1.0 / 3f64.log2() + 1.0 / 4f64.log2();
        let expected = dcg / idcg;
        assert!(
            (per["a"] - expected).abs() < 1e-12,
            "{} vs {expected}",
            per["a"]
        );
        assert!(!per.contains_key("b"), "b never active in any query");
    }

    #[test]
    fn per_attribute_is_one_when_attribute_everywhere() {
        let m = manifest(&["a"]);
        let everyone = attrs(&m, &["a"]);
        let items: Vec<(String, EmbeddingVector, AttributeVector)> = (0..5)
            .map(|i| {
                (
                    format!("i{i}"),
                    EmbeddingVector(vec![i as f64]),
                    everyone.clone(),
                )
            })
            .collect();
        let index = RetrievalIndex::build(items, MetricMode::Euclidean).unwrap();
        let queries = vec![Query {
            attrs: everyone.clone(),
            description: "q".into(),
        }];
        let per = per_attribute_ndcg(
            &queries,
            &[vec![2.0]],
            &index,
            5,
            RetrievalMethod::Euclidean,
            0,
        )
        .unwrap();
        assert_eq!(per["a"], 1.0);
    }

    #[test]
    fn action_topk_basics() {
        let classes = vec![
            ("jump".to_string(), vec![0.0, 1.0]),
            ("walk".to_string(), vec![1.0, 0.0]),
        ];
        let poses = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let labels = vec!["walk".to_string(), "jump".to_string()];
        let acc = action_topk_accuracy(&poses, &labels, &classes, MetricMode::Cosine, 1).unwrap();
        assert_eq!(acc, 1.0);

        // k = number of classes -> always 1.0
        let wrong_labels = vec!["jump".to_string(), "walk".to_string()];
        let acc =
            action_topk_accuracy(&poses, &wrong_labels, &classes, MetricMode::Cosine, 2).unwrap();
        assert_eq!(acc, 1.0);

        let unknown = vec!["fly".to_string(), "walk".to_string()];
        assert!(matches!(
            action_topk_accuracy(&poses, &unknown, &classes, MetricMode::Cosine, 1).unwrap_err(),
            CoreError::Validation(_)
        ));
    }

    #[test]
    fn synonym_rigged_to_identity_matches_exactly() {
        let provider = EmbeddingProvider::from_table_entries(
            2,
            vec![
                ("stroll".to_string(), vec![1.0, 0.0]),
                ("hop".to_string(), vec![0.0, 1.0]),
            ],
        )
        .unwrap();
        let classes = vec![
            ("jump".to_string(), vec![0.0, 1.0]),
            ("walk".to_string(), vec![1.0, 0.0]),
        ];
        let mut synonyms = BTreeMap::new();
        synonyms.insert("walk".to_string(), vec!["stroll".to_string()]);
        synonyms.insert("jump".to_string(), vec!["hop".to_string()]);

        let poses = Tensor::new(vec![3, 2], vec![0.9, 0.1, 0.2, 0.8, 0.7, 0.3]).unwrap();
        let labels = vec!["walk".to_string(), "jump".to_string(), "walk".to_string()];

        let base = action_topk_accuracy(&poses, &labels, &classes, MetricMode::Cosine, 1).unwrap();
        let zero_shot = synonym_zero_shot(
            &poses,
            &labels,
            &classes,
            &synonyms,
            &provider,
            MetricMode::Cosine,
            1,
        )
        .unwrap();
        assert_eq!(base, zero_shot);

        synonyms.remove("walk");
        assert!(matches!(
            synonym_zero_shot(
                &poses,
                &labels,
                &classes,
                &synonyms,
                &provider,
                MetricMode::Cosine,
                1
            )
            .unwrap_err(),
            CoreError::Validation(_)
        ));
    }

    #[test]
    fn multilabel_f1_hand_cases() {
        // perfect predictions
        let t = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let p = Tensor::new(vec![2, 2], vec![0.9, 0.1, 0.2, 0.8]).unwrap();
        let f1 = multilabel_f1(&p, &t, 0.5).unwrap();
        assert_eq!(f1.per_attribute, vec![1.0, 1.0]);
        assert_eq!(f1.macro_f1, 1.0);

        // all-negative predictions on an attribute with positives
        let p = Tensor::new(vec![2, 2], vec![0.1, 0.1, 0.2, 0.8]).unwrap();
        let f1 = multilabel_f1(&p, &t, 0.5).unwrap();
        assert_eq!(f1.per_attribute[0], 0.0);

        // TP=2, FP=1, FN=1 -> F1 = 2/3
        let t = Tensor::new(vec![4, 1], vec![1.0, 1.0, 1.0, 0.0]).unwrap();
        let p = Tensor::new(vec![4, 1], vec![0.9, 0.9, 0.1, 0.9]).unwrap();
        let f1 = multilabel_f1(&p, &t, 0.5).unwrap();
        assert!((f1.per_attribute[0] - 2.0 / 3.0).abs() < 1e-12);

        // attribute without positives is excluded from the macro
        let t = Tensor::new(vec![2, 2], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let p = Tensor::new(vec![2, 2], vec![0.9, 0.1, 0.9, 0.1]).unwrap();
        let f1 = multilabel_f1(&p, &t, 0.5).unwrap();
        assert_eq!(f1.macro_f1, 1.0);

        // strict threshold: probability exactly 0.5 is negative
        let t = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        let p = Tensor::new(vec![1, 1], vec![0.5]).unwrap();
        let f1 = multilabel_f1(&p, &t, 0.5).unwrap();
        assert_eq!(f1.per_attribute[0], 0.0);
    }

    #[test]
    fn ndcg_invariant_to_swapping_equal_relevance_items() {
        // swapping retrieved items of equal relevance leaves the relevance
        // sequence, and therefore the score, unchanged
        let rels = [2u32, 1, 2, 0, 1, 2];
        let mut ideal = rels.to_vec();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let base = ndcg_at_k(&rels, &ideal, 4).unwrap();

        let mut swapped = rels.to_vec();
        swapped.swap(0, 2); // both relevance 2
        swapped.swap(1, 4); // both relevance 1
        let other = ndcg_at_k(&swapped, &ideal, 4).unwrap();
        assert_eq!(base.value, other.value);
    }

    proptest::proptest! {
        #[test]
        fn ndcg_stays_in_unit_interval(
            rels in proptest::collection::vec(0u32..5, 5..=8),
            k in 1usize..5
        ) {
            let mut ideal = rels.clone();
            ideal.sort_unstable_by(|a, b| b.cmp(a));
            let ndcg = ndcg_at_k(&rels, &ideal, k).unwrap();
            proptest::prop_assert!((0.0..=1.0 + 1e-12).contains(&ndcg.value));
        }

        #[test]
        fn cosine_retrieval_is_scale_invariant(
            scale in 0.001f64..1000.0,
            qx in -1.0f64..1.0,
            qy in -1.0f64..1.0
        ) {
            proptest::prop_assume!(qx.abs() + qy.abs() > 0.01);
            let m = manifest(&["a"]);
            let items: Vec<(String, EmbeddingVector, AttributeVector)> = (0..8)
                .map(|i| {
                    let angle = i as f64;
                    (
                        format!("i{i}"),
                        EmbeddingVector(vec![angle.cos(), angle.sin()]),
                        attrs(&m, &["a"]),
                    )
                })
                .collect();
            let index = RetrievalIndex::build(items, MetricMode::Cosine).unwrap();
            let base = retrieve_topk(&[qx, qy], &index, 8).unwrap();
            let scaled = retrieve_topk(&[qx * scale, qy * scale], &index, 8).unwrap();
            proptest::prop_assert_eq!(base, scaled);
        }
    }
}
