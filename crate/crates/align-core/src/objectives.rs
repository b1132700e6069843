//! Alignment losses: masked contrastive, MSE, triplet (with negative
//! sampling and similarity masking) and multi-label BCE.
//!
//! Each loss exists twice: a graph builder used by the trainer, and a
//! value-level wrapper that evaluates the same graph on constants. The
//! wrappers are what the unit tests pin down.

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::numeric::{Graph, NodeId, Tensor};

pub const DEFAULT_TEMPERATURE: f64 = 0.07;
pub const DEFAULT_MASK_THRESHOLD: f64 = 0.9;
pub const DEFAULT_MARGIN: f64 = 0.2;

/// Additive logit mask; exp(x - max) underflows to exactly 0.0 at this
/// magnitude, so masked pairs drop out of the softmax identically.
const MASK_VALUE: f64 = -1e30;

// ── batch bundle ────────────────────────────────────────────────────────

/// One training batch: motion embeddings, text embeddings, class ids and
/// the text-text cosine similarity matrix used by both masking rules.
#[derive(Debug, Clone)]
pub struct BatchPair {
    pub zp: Tensor,
    pub zt: Tensor,
    pub class_of: Vec<String>,
    /// B x B row-major cosine similarities between text embeddings.
    pub tsim: Vec<f64>,
}

impl BatchPair {
    pub fn new(zp: Tensor, zt: Tensor, class_of: Vec<String>) -> Result<Self> {
        if zp.shape() != zt.shape() {
            return Err(CoreError::contract(format!(
                "batch: motion shape {:?} vs text shape {:?}",
                zp.shape(),
                zt.shape()
            )));
        }
        let (b, _) = zp.as_matrix_dims()?;
        if class_of.len() != b {
            return Err(CoreError::contract(format!(
                "batch: {} class ids for {b} rows",
                class_of.len()
            )));
        }
        let tsim = cosine_similarity_matrix(&zt)?;
        Ok(BatchPair {
            zp,
            zt,
            class_of,
            tsim,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.class_of.len()
    }
}

/// Row-by-row cosine similarity matrix; errors on zero-norm rows.
pub fn cosine_similarity_matrix(z: &Tensor) -> Result<Vec<f64>> {
    let (b, d) = z.as_matrix_dims()?;
    let mut normed = Vec::with_capacity(b * d);
    for r in 0..b {
        let row = z.row(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(CoreError::numeric(
                "cosine_similarity",
                format!("zero-norm embedding at row {r}"),
            ));
        }
        normed.extend(row.iter().map(|v| v / norm));
    }
    let mut out = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            out[i * b + j] = normed[i * d..(i + 1) * d]
                .iter()
                .zip(&normed[j * d..(j + 1) * d])
                .map(|(x, y)| x * y)
                .sum();
        }
    }
    Ok(out)
}

// ── MSE ─────────────────────────────────────────────────────────────────

/// Mean over all batch elements and dimensions of the squared difference.
pub fn mse_loss_node(g: &mut Graph, zp: NodeId, zt: NodeId) -> Result<NodeId> {
    let diff = g.sub(zp, zt)?;
    let sq = g.square(diff)?;
    g.mean(sq)
}

pub fn mse_loss(zp: &Tensor, zt: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let a = g.constant(zp.clone())?;
    let b = g.constant(zt.clone())?;
    let loss = mse_loss_node(&mut g, a, b)?;
    g.value(loss).item()
}

// ── negative sampling ───────────────────────────────────────────────────

/// Uniformly sample a negative index for anchor `i` among batch items of a
/// different class. Returns `None` when no other class is present, or when
/// the drawn negative's text is too similar to the anchor's (the
/// false-negative omission rule); the anchor then contributes nothing.
pub fn sample_negative(
    i: usize,
    class_of: &[String],
    tsim: &[f64],
    mask_threshold: f64,
    rng: &mut impl Rng,
) -> Option<usize> {
    let b = class_of.len();
    debug_assert_eq!(tsim.len(), b * b);
    let candidates: Vec<usize> = (0..b).filter(|&j| class_of[j] != class_of[i]).collect();
    if candidates.is_empty() {
        log::warn!("triplet anchor {i}: no other class in batch, anchor skipped");
        return None;
    }
    let j = candidates[rng.random_range(0..candidates.len())];
    if tsim[i * b + j] > mask_threshold {
        return None;
    }
    Some(j)
}

// ── triplet ─────────────────────────────────────────────────────────────

/// max(d(anchor, positive) - d(anchor, negative) + margin, 0) with
/// euclidean d, for a single anchor.
pub fn triplet_loss(zp_i: &[f64], zt_i: &[f64], zt_j: &[f64], margin: f64) -> Result<f64> {
    if zp_i.len() != zt_i.len() || zp_i.len() != zt_j.len() {
        return Err(CoreError::contract("triplet_loss: dimension mismatch"));
    }
    let d = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    Ok((d(zp_i, zt_i) - d(zp_i, zt_j) + margin).max(0.0))
}

/// Batch triplet loss over anchors with non-omitted negatives: mean of the
/// per-anchor hinge terms. Returns `None` when every anchor was omitted
/// (the caller then skips the optimizer step).
pub fn batch_triplet_loss_node(
    g: &mut Graph,
    zp: NodeId,
    zt: NodeId,
    negatives: &[Option<usize>],
    margin: f64,
) -> Result<Option<NodeId>> {
    let (b, _) = g.value(zp).as_matrix_dims()?;
    if negatives.len() != b {
        return Err(CoreError::contract(format!(
            "triplet: {} negatives for batch of {b}",
            negatives.len()
        )));
    }
    let mut terms: Vec<NodeId> = Vec::new();
    for (i, neg) in negatives.iter().enumerate() {
        let Some(j) = neg else { continue };
        let zp_i = g.slice_rows(zp, i, 1)?;
        let zt_i = g.slice_rows(zt, i, 1)?;
        let zt_j = g.slice_rows(zt, *j, 1)?;

        let d_pos = {
            let diff = g.sub(zp_i, zt_i)?;
            let sq = g.square(diff)?;
            let s = g.sum(sq)?;
            g.sqrt(s)?
        };
        let d_neg = {
            let diff = g.sub(zp_i, zt_j)?;
            let sq = g.square(diff)?;
            let s = g.sum(sq)?;
            g.sqrt(s)?
        };
        let gap = g.sub(d_pos, d_neg)?;
        let shifted = g.add_const(gap, margin)?;
        terms.push(g.relu(shifted)?);
    }
    if terms.is_empty() {
        return Ok(None);
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    Ok(Some(g.scale(total, 1.0 / terms.len() as f64)?))
}

// ── masked contrastive ──────────────────────────────────────────────────

/// Build the additive mask: −inf-like entries where i != j and the two
/// texts are more similar than the threshold. The diagonal stays open, so
/// every row keeps its positive logit.
fn contrastive_mask(tsim: &[f64], b: usize, mask_threshold: f64) -> Vec<f64> {
    let mut mask = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            if i != j && tsim[i * b + j] > mask_threshold {
                mask[i * b + j] = MASK_VALUE;
            }
        }
    }
    mask
}

/// Symmetric masked InfoNCE over the cosine similarity matrix:
/// 0.5 * (row-wise CE + column-wise CE) with the diagonal as targets.
/// Both embedding sets are L2-normalized inside the loss.
pub fn masked_contrastive_loss_node(
    g: &mut Graph,
    zp: NodeId,
    zt: NodeId,
    tsim: &[f64],
    temperature: f64,
    mask_threshold: f64,
) -> Result<NodeId> {
    if temperature <= 0.0 {
        return Err(CoreError::contract("contrastive: temperature must be > 0"));
    }
    let (b, _) = g.value(zp).as_matrix_dims()?;
    if g.value(zt).shape() != g.value(zp).shape() {
        return Err(CoreError::contract("contrastive: shape mismatch"));
    }

    let zp_n = g.l2_normalize_rows(zp)?;
    let zt_n = g.l2_normalize_rows(zt)?;
    let zt_t = g.transpose(zt_n)?;
    let sim = g.matmul(zp_n, zt_t)?;
    let logits = g.scale(sim, 1.0 / temperature)?;

    let mask = contrastive_mask(tsim, b, mask_threshold);
    let mask_node = g.constant(Tensor::new(vec![b, b], mask)?)?;
    let masked = g.add(logits, mask_node)?;

    // Diagonal as a column vector: sum over rows of (masked .* I).
    let eye = {
        let mut data = vec![0.0; b * b];
        for i in 0..b {
            data[i * b + i] = 1.0;
        }
        g.constant(Tensor::new(vec![b, b], data)?)?
    };
    let ones_col = g.constant(Tensor::new(vec![b, 1], vec![1.0; b])?)?;
    let diag_only = g.mul(masked, eye)?;
    let diag = g.matmul(diag_only, ones_col)?;

    let row_lse = g.row_logsumexp(masked)?;
    let row_ce = g.sub(row_lse, diag)?;
    let row_loss = g.mean(row_ce)?;

    let masked_t = g.transpose(masked)?;
    let col_lse = g.row_logsumexp(masked_t)?;
    let col_ce = g.sub(col_lse, diag)?;
    let col_loss = g.mean(col_ce)?;

    let total = g.add(row_loss, col_loss)?;
    g.scale(total, 0.5)
}

pub fn masked_contrastive_loss(
    batch: &BatchPair,
    temperature: f64,
    mask_threshold: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let zp = g.constant(batch.zp.clone())?;
    let zt = g.constant(batch.zt.clone())?;
    let loss =
        masked_contrastive_loss_node(&mut g, zp, zt, &batch.tsim, temperature, mask_threshold)?;
    g.value(loss).item()
}

// ── multi-label BCE ─────────────────────────────────────────────────────

/// Mean binary cross-entropy over all logits, log-sum-exp stable.
pub fn bce_multilabel_loss(logits: &Tensor, targets: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.constant(logits.clone())?;
    let t = g.constant(targets.clone())?;
    let loss = g.bce_with_logits(x, t)?;
    g.value(loss).item()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn mse_pins_hand_values() {
        let a = t(vec![1, 2], vec![1.0, 0.0]);
        assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);

        let b = t(vec![1, 2], vec![0.0, 1.0]);
        assert!((mse_loss(&a, &b).unwrap() - 1.0).abs() < 1e-15);

        let zp = t(vec![2, 1], vec![1.0, 3.0]);
        let zt = t(vec![2, 1], vec![0.0, 0.0]);
        assert!((mse_loss(&zp, &zt).unwrap() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn triplet_pins_hand_values() {
        // distances enter pre-computed through constructed points
        let zp = vec![0.0, 0.0];
        let zt_pos = vec![0.3, 0.0]; // d_pos = 0.3
        let zt_neg = vec![0.9, 0.0]; // d_neg = 0.9
        assert_eq!(triplet_loss(&zp, &zt_pos, &zt_neg, 0.5).unwrap(), 0.0);

        let zt_pos = vec![1.0, 0.0]; // d_pos = 1.0
        let zt_neg = vec![0.5, 0.0]; // d_neg = 0.5
        assert!((triplet_loss(&zp, &zt_pos, &zt_neg, 0.2).unwrap() - 0.7).abs() < 1e-15);

        // both distances zero -> loss = margin
        let v = vec![0.4, -0.2];
        assert!((triplet_loss(&v, &v, &v, 0.2).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn sample_negative_respects_classes_and_mask() {
        let classes: Vec<String> = vec!["a".into(), "b".into()];
        let mut rng = ChaCha12Rng::seed_from_u64(0);

        let tsim = vec![1.0, 0.2, 0.2, 1.0];
        for _ in 0..20 {
            assert_eq!(sample_negative(0, &classes, &tsim, 0.9, &mut rng), Some(1));
        }

        let tsim = vec![1.0, 0.95, 0.95, 1.0];
        for _ in 0..20 {
            assert_eq!(sample_negative(0, &classes, &tsim, 0.9, &mut rng), None);
        }

        // no other class
        let same: Vec<String> = vec!["a".into(), "a".into()];
        let tsim = vec![1.0, 1.0, 1.0, 1.0];
        assert_eq!(sample_negative(0, &same, &tsim, 0.9, &mut rng), None);
    }

    #[test]
    fn sample_negative_is_uniform_over_candidates() {
        // classes (a, b, b): anchor 0 draws 1 and 2 with probability 1/2
        let classes: Vec<String> = vec!["a".into(), "b".into(), "b".into()];
        let tsim = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.8, 0.0, 0.8, 1.0];
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut counts = [0usize; 3];
        for _ in 0..10_000 {
            let j = sample_negative(0, &classes, &tsim, 0.9, &mut rng).unwrap();
            counts[j] += 1;
        }
        assert_eq!(counts[0], 0);
        // chi-squared with 1 dof at alpha ~ 1e-4 allows |n - 5000| <~ 195
        assert!((counts[1] as i64 - 5000).abs() < 300, "{counts:?}");
        assert!((counts[2] as i64 - 5000).abs() < 300, "{counts:?}");
    }

    #[test]
    fn contrastive_identity_batch_matches_hand_softmax() {
        // Zp = Zt = I(2), tau = 1: per-row CE = ln(1 + e^-1)
        let eye = t(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let batch = BatchPair::new(eye.clone(), eye, vec!["a".into(), "b".into()]).unwrap();
        let loss = masked_contrastive_loss(&batch, 1.0, 0.999).unwrap();
        let expected = (1.0 + (-1.0_f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-9, "loss {loss} vs {expected}");
        assert!((loss - 0.31326).abs() < 1e-5);
    }

    #[test]
    fn single_item_batch_has_zero_loss() {
        let zp = t(vec![1, 3], vec![0.2, -0.4, 0.9]);
        let zt = t(vec![1, 3], vec![0.5, 0.5, 0.5]);
        let batch = BatchPair::new(zp, zt, vec!["a".into()]).unwrap();
        let loss = masked_contrastive_loss(&batch, 0.07, 0.9).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    /// Independent oracle: symmetric cross-entropy with the given
    /// (row, col) pairs removed from the logit sets entirely.
    fn contrastive_with_pairs_removed(
        zp: &Tensor,
        zt: &Tensor,
        temperature: f64,
        removed: &[(usize, usize)],
    ) -> f64 {
        let (b, d) = zp.as_matrix_dims().unwrap();
        let norm_rows = |z: &Tensor| -> Vec<f64> {
            let mut out = Vec::new();
            for r in 0..b {
                let row = z.row(r);
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                out.extend(row.iter().map(|v| v / n));
            }
            out
        };
        let p = norm_rows(zp);
        let q = norm_rows(zt);
        let logit = |i: usize, j: usize| -> f64 {
            p[i * d..(i + 1) * d]
                .iter()
                .zip(&q[j * d..(j + 1) * d])
                .map(|(x, y)| x * y)
                .sum::<f64>()
                / temperature
        };
        let is_removed = |i: usize, j: usize| removed.contains(&(i, j));
        let mut row_total = 0.0;
        for i in 0..b {
            let kept: Vec<f64> = (0..b)
                .filter(|&j| j == i || !is_removed(i, j))
                .map(|j| logit(i, j))
                .collect();
            let m = kept.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + kept.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            row_total += lse - logit(i, i);
        }
        let mut col_total = 0.0;
        for j in 0..b {
            let kept: Vec<f64> = (0..b)
                .filter(|&i| i == j || !is_removed(i, j))
                .map(|i| logit(i, j))
                .collect();
            let m = kept.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + kept.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            col_total += lse - logit(j, j);
        }
        0.5 * (row_total / b as f64 + col_total / b as f64)
    }

    #[test]
    fn duplicate_captions_mask_exactly_removes_their_pairs() {
        // items 0 and 1 share a caption (tsim = 1 > threshold)
        let zp = t(
            vec![3, 4],
            vec![
                0.9, 0.1, -0.2, 0.4, //
                -0.3, 0.8, 0.5, 0.1, //
                0.2, -0.6, 0.7, -0.1,
            ],
        );
        let shared = vec![0.5, -0.5, 0.5, 0.5];
        let mut zt_data = shared.clone();
        zt_data.extend(&shared);
        zt_data.extend(&[-0.7, 0.2, 0.1, 0.6]);
        let zt = t(vec![3, 4], zt_data);

        let batch = BatchPair::new(
            zp.clone(),
            zt.clone(),
            vec!["a".into(), "a".into(), "b".into()],
        )
        .unwrap();
        let masked = masked_contrastive_loss(&batch, 0.07, 0.9).unwrap();
        let oracle = contrastive_with_pairs_removed(&zp, &zt, 0.07, &[(0, 1), (1, 0)]);
        assert!(
            (masked - oracle).abs() < 1e-12,
            "masked {masked} vs oracle {oracle}"
        );
    }

    #[test]
    fn contrastive_is_permutation_invariant() {
        let zp = t(
            vec![4, 3],
            vec![
                0.5, 0.1, -0.9, 1.2, 0.4, 0.3, -0.5, 0.8, 0.2, 0.1, -0.2, 0.6,
            ],
        );
        let zt = t(
            vec![4, 3],
            vec![
                0.4, 0.2, -0.8, 1.0, 0.5, 0.4, -0.6, 0.7, 0.1, 0.2, -0.3, 0.5,
            ],
        );
        let classes: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
        let batch = BatchPair::new(zp.clone(), zt.clone(), classes.clone()).unwrap();
        let base = masked_contrastive_loss(&batch, 0.07, 0.9).unwrap();

        let perm = [2usize, 0, 3, 1];
        let permute = |z: &Tensor| -> Tensor {
            let rows: Vec<Vec<f64>> = perm.iter().map(|&i| z.row(i).to_vec()).collect();
            Tensor::from_rows(&rows).unwrap()
        };
        let batch_p = BatchPair::new(
            permute(&zp),
            permute(&zt),
            perm.iter().map(|&i| classes[i].clone()).collect(),
        )
        .unwrap();
        let permuted = masked_contrastive_loss(&batch_p, 0.07, 0.9).unwrap();
        assert!((base - permuted).abs() < 1e-12);
    }

    #[test]
    fn mask_set_grows_as_threshold_decreases() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let b = 6;
        let mut tsim = vec![0.0; b * b];
        for i in 0..b {
            for j in i..b {
                let v = if i == j {
                    1.0
                } else {
                    rng.random_range(-1.0..1.0)
                };
                tsim[i * b + j] = v;
                tsim[j * b + i] = v;
            }
        }
        let masked_set = |threshold: f64| -> Vec<usize> {
            contrastive_mask(&tsim, b, threshold)
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(k, _)| k)
                .collect()
        };
        let mut prev: Vec<usize> = Vec::new();
        for threshold in [0.9, 0.7, 0.5, 0.3, 0.1, -0.5] {
            let cur = masked_set(threshold);
            assert!(
                prev.iter().all(|k| cur.contains(k)),
                "mask shrank at {threshold}"
            );
            prev = cur;
        }
    }

    #[test]
    fn losses_are_nonnegative_and_gradients_check_out() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let b = 3;
        let d = 5;
        let rand_t = |rng: &mut ChaCha12Rng| {
            let data: Vec<f64> = (0..b * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            t(vec![b, d], data)
        };
        let zp = rand_t(&mut rng);
        let zt = rand_t(&mut rng);
        let tsim = cosine_similarity_matrix(&zt).unwrap();

        // finite differences on the contrastive loss w.r.t. zp
        let f = |zp: &Tensor| -> f64 {
            let mut g = Graph::new();
            let a = g.constant(zp.clone()).unwrap();
            let zt_node = g.constant(zt.clone()).unwrap();
            let l = masked_contrastive_loss_node(&mut g, a, zt_node, &tsim, 0.1, 0.95).unwrap();
            g.value(l).item().unwrap()
        };
        assert!(f(&zp) >= 0.0);

        let mut g = Graph::new();
        let a = g.param(zp.clone()).unwrap();
        let zt_node = g.constant(zt.clone()).unwrap();
        let loss = masked_contrastive_loss_node(&mut g, a, zt_node, &tsim, 0.1, 0.95).unwrap();
        let grads = g.backward_for(loss, &[a]).unwrap();
        let h = 1e-6;
        for e in 0..b * d {
            let mut plus = zp.clone();
            plus.data_mut()[e] += h;
            let mut minus = zp.clone();
            minus.data_mut()[e] -= h;
            let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
            let analytic = grads[0].data()[e];
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0);
            assert!(err < 1e-4, "elem {e}: err {err}");
        }
    }

    #[test]
    fn bce_value_wrapper() {
        let logits = Tensor::zeros(vec![2, 3]);
        let targets = t(vec![2, 3], vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let v = bce_multilabel_loss(&logits, &targets).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }
}
