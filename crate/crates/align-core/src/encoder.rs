//! The trainable pose encoder E_P: a transformer over flattened per-frame
//! skeletons producing one embedding per window.
//!
//! Pipeline: input projection -> prepend learned class token -> add learned
//! positional embeddings -> `depth` pre-norm blocks (multi-head self
//! attention + GELU MLP, residual connections) -> final layer norm -> class
//! token state -> output projection. Cosine mode L2-normalizes the output,
//! euclidean mode returns it raw.
//!
//! Batches are processed as one stacked (B*T)xH matrix; attention is
//! evaluated per sample, so every row's result is independent of what else
//! is in the batch.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::numeric::{Graph, NodeId, Tensor};

const INIT_STD: f64 = 0.02;
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricMode {
    Cosine,
    Euclidean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub depth: usize,
    pub hidden: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Window length + 1 (the class token).
    pub max_len: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    /// Small configuration that trains in seconds on a CPU.
    pub fn desk(input_dim: usize, output_dim: usize) -> Self {
        EncoderConfig {
            depth: 2,
            hidden: 64,
            heads: 4,
            mlp_ratio: 4.0,
            input_dim,
            output_dim,
            max_len: 61,
            dropout: 0.0,
        }
    }

    /// The full-scale configuration (depth 12, hidden 768); not exercised
    /// in CI.
    pub fn paper_scale(input_dim: usize, output_dim: usize) -> Self {
        EncoderConfig {
            depth: 12,
            hidden: 768,
            heads: 12,
            mlp_ratio: 4.0,
            input_dim,
            output_dim,
            max_len: 61,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.hidden == 0 || self.heads == 0 {
            return Err(CoreError::validation(
                "encoder config: depth, hidden and heads must be >= 1",
            ));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(CoreError::validation(format!(
                "encoder config: hidden {} not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        if self.max_len < 2 {
            return Err(CoreError::validation(
                "encoder config: max_len must be >= 2",
            ));
        }
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(CoreError::validation(
                "encoder config: input_dim and output_dim must be >= 1",
            ));
        }
        if self.mlp_dim() == 0 {
            return Err(CoreError::validation("encoder config: mlp_ratio too small"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CoreError::validation(
                "encoder config: dropout must be in [0, 1)",
            ));
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        self.max_len - 1
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn mlp_dim(&self) -> usize {
        (self.hidden as f64 * self.mlp_ratio).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Every trainable weight of the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub input_w: Tensor,
    pub input_b: Tensor,
    pub pos: Tensor,
    pub cls: Tensor,
    pub layers: Vec<LayerParams>,
    pub final_ln_gain: Tensor,
    pub final_ln_bias: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

fn normal_tensor(rng: &mut ChaCha12Rng, shape: Vec<usize>, std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("valid normal");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape, data).expect("generator shape")
}

/// Deterministic initialization: linear weights, positional embeddings and
/// the class token are N(0, 0.02^2); biases zero; layer-norm gains one.
pub fn init_encoder(config: &EncoderConfig, seed: u64) -> Result<EncoderParams> {
    config.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let h = config.hidden;
    let m = config.mlp_dim();

    let input_w = normal_tensor(&mut rng, vec![config.input_dim, h], INIT_STD);
    let input_b = Tensor::zeros(vec![h]);
    let pos = normal_tensor(&mut rng, vec![config.max_len, h], INIT_STD);
    let cls = normal_tensor(&mut rng, vec![1, h], INIT_STD);

    let mut layers = Vec::with_capacity(config.depth);
    for _ in 0..config.depth {
        layers.push(LayerParams {
            ln1_gain: Tensor::new(vec![h], vec![1.0; h])?,
            ln1_bias: Tensor::zeros(vec![h]),
            wq: normal_tensor(&mut rng, vec![h, h], INIT_STD),
            bq: Tensor::zeros(vec![h]),
            wk: normal_tensor(&mut rng, vec![h, h], INIT_STD),
            bk: Tensor::zeros(vec![h]),
            wv: normal_tensor(&mut rng, vec![h, h], INIT_STD),
            bv: Tensor::zeros(vec![h]),
            wo: normal_tensor(&mut rng, vec![h, h], INIT_STD),
            bo: Tensor::zeros(vec![h]),
            ln2_gain: Tensor::new(vec![h], vec![1.0; h])?,
            ln2_bias: Tensor::zeros(vec![h]),
            w1: normal_tensor(&mut rng, vec![h, m], INIT_STD),
            b1: Tensor::zeros(vec![m]),
            w2: normal_tensor(&mut rng, vec![m, h], INIT_STD),
            b2: Tensor::zeros(vec![h]),
        });
    }

    Ok(EncoderParams {
        input_w,
        input_b,
        pos,
        cls,
        layers,
        final_ln_gain: Tensor::new(vec![h], vec![1.0; h])?,
        final_ln_bias: Tensor::zeros(vec![h]),
        out_w: normal_tensor(&mut rng, vec![h, config.output_dim], INIT_STD),
        out_b: Tensor::zeros(vec![config.output_dim]),
    })
}

impl EncoderParams {
    /// Canonical (name, tensor) listing; the order is the serialization
    /// and optimizer-state order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("input_w".into(), &self.input_w),
            ("input_b".into(), &self.input_b),
            ("pos".into(), &self.pos),
            ("cls".into(), &self.cls),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            for (suffix, t) in [
                ("ln1_gain", &l.ln1_gain),
                ("ln1_bias", &l.ln1_bias),
                ("wq", &l.wq),
                ("bq", &l.bq),
                ("wk", &l.wk),
                ("bk", &l.bk),
                ("wv", &l.wv),
                ("bv", &l.bv),
                ("wo", &l.wo),
                ("bo", &l.bo),
                ("ln2_gain", &l.ln2_gain),
                ("ln2_bias", &l.ln2_bias),
                ("w1", &l.w1),
                ("b1", &l.b1),
                ("w2", &l.w2),
                ("b2", &l.b2),
            ] {
                out.push((format!("layer{i:02}.{suffix}"), t));
            }
        }
        out.push(("final_ln_gain".into(), &self.final_ln_gain));
        out.push(("final_ln_bias".into(), &self.final_ln_bias));
        out.push(("out_w".into(), &self.out_w));
        out.push(("out_b".into(), &self.out_b));
        out
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.named().into_iter().map(|(_, t)| t.clone()).collect()
    }

    /// Rebuild from tensors in `named()` order.
    pub fn from_tensors(config: &EncoderConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let template = init_encoder(config, 0)?;
        let expected = template.named().len();
        if tensors.len() != expected {
            return Err(CoreError::contract(format!(
                "from_tensors: {} tensors, expected {expected}",
                tensors.len()
            )));
        }
        let mut iter = tensors.into_iter();
        let mut take = |shape_of: &Tensor| -> Result<Tensor> {
            let t = iter.next().expect("length checked");
            if t.shape() != shape_of.shape() {
                return Err(CoreError::contract(format!(
                    "from_tensors: shape {:?}, expected {:?}",
                    t.shape(),
                    shape_of.shape()
                )));
            }
            Ok(t)
        };
        let input_w = take(&template.input_w)?;
        let input_b = take(&template.input_b)?;
        let pos = take(&template.pos)?;
        let cls = take(&template.cls)?;
        let mut layers = Vec::with_capacity(config.depth);
        for l in &template.layers {
            layers.push(LayerParams {
                ln1_gain: take(&l.ln1_gain)?,
                ln1_bias: take(&l.ln1_bias)?,
                wq: take(&l.wq)?,
                bq: take(&l.bq)?,
                wk: take(&l.wk)?,
                bk: take(&l.bk)?,
                wv: take(&l.wv)?,
                bv: take(&l.bv)?,
                wo: take(&l.wo)?,
                bo: take(&l.bo)?,
                ln2_gain: take(&l.ln2_gain)?,
                ln2_bias: take(&l.ln2_bias)?,
                w1: take(&l.w1)?,
                b1: take(&l.b1)?,
                w2: take(&l.w2)?,
                b2: take(&l.b2)?,
            });
        }
        Ok(EncoderParams {
            input_w,
            input_b,
            pos,
            cls,
            layers,
            final_ln_gain: take(&template.final_ln_gain)?,
            final_ln_bias: take(&template.final_ln_bias)?,
            out_w: take(&template.out_w)?,
            out_b: take(&template.out_b)?,
        })
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Closed-form parameter count for a configuration.
pub fn expected_param_count(config: &EncoderConfig) -> usize {
    let h = config.hidden;
    let m = config.mlp_dim();
    let per_layer = 2 * (2 * h) // two layer norms
        + 4 * (h * h + h)       // q, k, v, o projections
        + (h * m + m) + (m * h + h); // mlp
    config.input_dim * h + h    // input projection
        + config.max_len * h    // positional
        + h                     // class token
        + config.depth * per_layer
        + 2 * h                 // final layer norm
        + h * config.output_dim + config.output_dim // output projection
}

/// Graph-side handle to the encoder forward pass.
pub struct EncoderForward {
    /// Parameter leaves in `EncoderParams::named()` order (empty when the
    /// encoder was built frozen).
    pub param_nodes: Vec<NodeId>,
    /// B x output_dim embeddings.
    pub output: NodeId,
}

/// Build the encoder forward pass inside `graph`. `windows` must be a
/// (B*window_len) x input_dim constant already in the graph. When
/// `trainable` is set the parameters become gradient leaves; dropout masks
/// are drawn from `dropout_rng` only in that case.
#[allow(clippy::too_many_arguments)]
pub fn encode_batch_graph(
    graph: &mut Graph,
    windows: NodeId,
    batch: usize,
    params: &EncoderParams,
    config: &EncoderConfig,
    mode: MetricMode,
    trainable: bool,
    mut dropout_rng: Option<&mut ChaCha12Rng>,
) -> Result<EncoderForward> {
    config.validate()?;
    let t_in = config.window_len();
    let t_seq = config.max_len;
    let dh = config.head_dim();

    let wshape = graph.value(windows).shape().to_vec();
    if wshape != [batch * t_in, config.input_dim] {
        return Err(CoreError::contract(format!(
            "encode: windows shape {wshape:?}, expected [{} x {}]",
            batch * t_in,
            config.input_dim
        )));
    }

    // Parameters enter the graph in named() order.
    let tensors = params.tensors();
    let mut param_nodes = Vec::with_capacity(tensors.len());
    for t in tensors {
        let id = if trainable {
            graph.param(t)?
        } else {
            graph.constant(t)?
        };
        param_nodes.push(id);
    }
    let mut next = param_nodes.iter().copied();
    let mut grab = || next.next().expect("named order");
    let input_w = grab();
    let input_b = grab();
    let pos = grab();
    let cls = grab();
    struct LayerIds {
        ln1_gain: NodeId,
        ln1_bias: NodeId,
        wq: NodeId,
        bq: NodeId,
        wk: NodeId,
        bk: NodeId,
        wv: NodeId,
        bv: NodeId,
        wo: NodeId,
        bo: NodeId,
        ln2_gain: NodeId,
        ln2_bias: NodeId,
        w1: NodeId,
        b1: NodeId,
        w2: NodeId,
        b2: NodeId,
    }
    let mut layers = Vec::with_capacity(config.depth);
    for _ in 0..config.depth {
        layers.push(LayerIds {
            ln1_gain: grab(),
            ln1_bias: grab(),
            wq: grab(),
            bq: grab(),
            wk: grab(),
            bk: grab(),
            wv: grab(),
            bv: grab(),
            wo: grab(),
            bo: grab(),
            ln2_gain: grab(),
            ln2_bias: grab(),
            w1: grab(),
            b1: grab(),
            w2: grab(),
            b2: grab(),
        });
    }
    let final_ln_gain = grab();
    let final_ln_bias = grab();
    let out_w = grab();
    let out_b = grab();

    // Input projection, then interleave the class token ahead of every
    // sample's frames.
    let proj = graph.matmul(windows, input_w)?;
    let proj = graph.add_bias(proj, input_b)?;
    let mut pieces = Vec::with_capacity(2 * batch);
    for s in 0..batch {
        pieces.push(cls);
        pieces.push(graph.slice_rows(proj, s * t_in, t_in)?);
    }
    let mut x = graph.concat_rows(&pieces)?;

    // Positional embeddings, tiled across the batch.
    let pos_tiled = graph.concat_rows(&vec![pos; batch])?;
    x = graph.add(x, pos_tiled)?;

    let apply_dropout =
        |graph: &mut Graph, x: NodeId, rng: &mut Option<&mut ChaCha12Rng>| -> Result<NodeId> {
            if !trainable || config.dropout == 0.0 {
                return Ok(x);
            }
            let Some(rng) = rng.as_deref_mut() else {
                return Ok(x);
            };
            let keep = 1.0 - config.dropout;
            let shape = graph.value(x).shape().to_vec();
            let n: usize = shape.iter().product();
            let mask: Vec<f64> = (0..n)
                .map(|_| {
                    if rng.random_bool(keep) {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
                .collect();
            let mask = graph.constant(Tensor::new(shape, mask)?)?;
            graph.mul(x, mask)
        };

    let scale = 1.0 / (dh as f64).sqrt();
    for layer in &layers {
        // Pre-norm self-attention with residual.
        let normed = graph.layer_norm(x, layer.ln1_gain, layer.ln1_bias, LN_EPS)?;
        let q = graph.matmul(normed, layer.wq)?;
        let q = graph.add_bias(q, layer.bq)?;
        let k = graph.matmul(normed, layer.wk)?;
        let k = graph.add_bias(k, layer.bk)?;
        let v = graph.matmul(normed, layer.wv)?;
        let v = graph.add_bias(v, layer.bv)?;

        let mut sample_ctx = Vec::with_capacity(batch);
        for s in 0..batch {
            let qs = graph.slice_rows(q, s * t_seq, t_seq)?;
            let ks = graph.slice_rows(k, s * t_seq, t_seq)?;
            let vs = graph.slice_rows(v, s * t_seq, t_seq)?;
            let mut head_ctx_t = Vec::with_capacity(config.heads);
            for head in 0..config.heads {
                let qh = graph.slice_cols(qs, head * dh, dh)?;
                let kh = graph.slice_cols(ks, head * dh, dh)?;
                let vh = graph.slice_cols(vs, head * dh, dh)?;
                let kt = graph.transpose(kh)?;
                let scores = graph.matmul(qh, kt)?;
                let scores = graph.scale(scores, scale)?;
                let attn = graph.softmax(scores)?;
                let ctx = graph.matmul(attn, vh)?;
                head_ctx_t.push(graph.transpose(ctx)?);
            }
            // Heads stack along rows transposed, then flip back: T x H.
            let stacked = graph.concat_rows(&head_ctx_t)?;
            sample_ctx.push(graph.transpose(stacked)?);
        }
        let ctx = graph.concat_rows(&sample_ctx)?;
        let o = graph.matmul(ctx, layer.wo)?;
        let o = graph.add_bias(o, layer.bo)?;
        let o = apply_dropout(graph, o, &mut dropout_rng)?;
        x = graph.add(x, o)?;

        // Pre-norm MLP with residual.
        let normed = graph.layer_norm(x, layer.ln2_gain, layer.ln2_bias, LN_EPS)?;
        let hidden = graph.matmul(normed, layer.w1)?;
        let hidden = graph.add_bias(hidden, layer.b1)?;
        let hidden = graph.gelu(hidden)?;
        let mlp_out = graph.matmul(hidden, layer.w2)?;
        let mlp_out = graph.add_bias(mlp_out, layer.b2)?;
        let mlp_out = apply_dropout(graph, mlp_out, &mut dropout_rng)?;
        x = graph.add(x, mlp_out)?;
    }

    let x = graph.layer_norm(x, final_ln_gain, final_ln_bias, LN_EPS)?;

    // Class-token states, one row per sample.
    let cls_rows: Vec<NodeId> = (0..batch)
        .map(|s| graph.slice_rows(x, s * t_seq, 1))
        .collect::<Result<_>>()?;
    let pooled = graph.concat_rows(&cls_rows)?;
    let out = graph.matmul(pooled, out_w)?;
    let mut out = graph.add_bias(out, out_b)?;
    if mode == MetricMode::Cosine {
        out = graph.l2_normalize_rows(out)?;
    }

    Ok(EncoderForward {
        param_nodes: if trainable { param_nodes } else { Vec::new() },
        output: out,
    })
}

/// Value-level forward pass: `windows` is B x window_len x input_dim (or
/// 2-D for a single window); returns B x output_dim embeddings.
pub fn encode_batch(
    windows: &Tensor,
    params: &EncoderParams,
    config: &EncoderConfig,
    mode: MetricMode,
) -> Result<Tensor> {
    let t_in = config.window_len();
    let (batch, flat) = match windows.shape() {
        [b, t, d] if *t == t_in && *d == config.input_dim => {
            (*b, Tensor::new(vec![b * t, *d], windows.data().to_vec())?)
        }
        [t, d] if *t == t_in && *d == config.input_dim => (1, windows.clone()),
        other => {
            return Err(CoreError::contract(format!(
                "encode_batch: windows shape {other:?}, expected [B, {t_in}, {}]",
                config.input_dim
            )))
        }
    };
    let mut graph = Graph::new();
    let input = graph.constant(flat)?;
    let fwd = encode_batch_graph(&mut graph, input, batch, params, config, mode, false, None)?;
    Ok(graph.value(fwd.output).clone())
}
