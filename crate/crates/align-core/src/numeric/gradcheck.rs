//! Central finite-difference verification of backward rules.
//!
//! Every op the graph exposes is registered here with a point generator
//! and a builder, so the whole catalog can be swept mechanically. The
//! finite-difference side never touches `backward`, only repeated forward
//! evaluations, which keeps the check independent of the code it verifies.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{CoreError, Result};
use crate::numeric::graph::{Graph, NodeId};
use crate::numeric::tensor::Tensor;

pub const DEFAULT_FD_STEP: f64 = 1e-6;

type PointGen = fn(&mut ChaCha12Rng) -> Vec<Tensor>;
type OpBuilder = fn(&mut Graph, &[NodeId]) -> Result<NodeId>;

pub struct OpCheck {
    pub name: &'static str,
    /// Indices of inputs the op differentiates through.
    pub diff_inputs: &'static [usize],
    pub gen_point: PointGen,
    pub build: OpBuilder,
}

fn uniform(rng: &mut ChaCha12Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape, data).expect("generator shape")
}

fn pair_3x4(rng: &mut ChaCha12Rng) -> Vec<Tensor> {
    vec![
        uniform(rng, vec![3, 4], -2.0, 2.0),
        uniform(rng, vec![3, 4], -2.0, 2.0),
    ]
}

fn single_3x4(rng: &mut ChaCha12Rng) -> Vec<Tensor> {
    vec![uniform(rng, vec![3, 4], -2.0, 2.0)]
}

/// All ops with a registered backward rule.
pub fn registered_ops() -> Vec<OpCheck> {
    vec![
        OpCheck {
            name: "add",
            diff_inputs: &[0, 1],
            gen_point: pair_3x4,
            build: |g, ids| g.add(ids[0], ids[1]),
        },
        OpCheck {
            name: "sub",
            diff_inputs: &[0, 1],
            gen_point: pair_3x4,
            build: |g, ids| g.sub(ids[0], ids[1]),
        },
        OpCheck {
            name: "mul",
            diff_inputs: &[0, 1],
            gen_point: pair_3x4,
            build: |g, ids| g.mul(ids[0], ids[1]),
        },
        OpCheck {
            name: "add_bias",
            diff_inputs: &[0, 1],
            gen_point: |rng| {
                vec![
                    uniform(rng, vec![3, 4], -2.0, 2.0),
                    uniform(rng, vec![4], -1.0, 1.0),
                ]
            },
            build: |g, ids| g.add_bias(ids[0], ids[1]),
        },
        OpCheck {
            name: "matmul",
            diff_inputs: &[0, 1],
            gen_point: |rng| {
                vec![
                    uniform(rng, vec![3, 4], -2.0, 2.0),
                    uniform(rng, vec![4, 2], -2.0, 2.0),
                ]
            },
            build: |g, ids| g.matmul(ids[0], ids[1]),
        },
        OpCheck {
            name: "transpose",
            diff_inputs: &[0],
            gen_point: single_3x4,
            build: |g, ids| g.transpose(ids[0]),
        },
        OpCheck {
            name: "reshape",
            diff_inputs: &[0],
            gen_point: single_3x4,
            build: |g, ids| g.reshape(ids[0], vec![2, 6]),
        },
        OpCheck {
            name: "concat",
            diff_inputs: &[0, 1, 2],
            gen_point: |rng| {
                vec![
                    uniform(rng, vec![2, 3], -2.0, 2.0),
                    uniform(rng, vec![1, 3], -2.0, 2.0),
                    uniform(rng, vec![2, 3], -2.0, 2.0),
                ]
            },
            build: |g, ids| g.concat_rows(ids),
        },
        OpCheck {
            name: "slice_rows",
            diff_inputs: &[0],
            gen_point: |rng| vec![uniform(rng, vec![4, 3], -2.0, 2.0)],
            build: |g, ids| g.slice_rows(ids[0], 1, 2),
        },
        OpCheck {
            name: "slice_cols",
            diff_inputs: &[0],
            gen_point: |rng| vec![uniform(rng, vec![3, 5], -2.0, 2.0)],
            build: |g, ids| g.slice_cols(ids[0], 1, 3),
        },
        OpCheck {
            name: "sum",
            diff_inputs: &[0],
            gen_point: single_3x4,
            build: |g, ids| g.sum(ids[0]),
        },
        OpCheck {
            name: "mean",
            diff_inputs: &[0],
            gen_point: single_3x4,
            build: |g, ids| g.mean(ids[0]),
        },
        OpCheck {
            name: "softmax",
            diff_inputs: &[0],
            gen_point: |rng| vec![uniform(rng, vec![2, 5], -3.0, 3.0)],
            build: |g, ids| g.softmax(ids[0]),
        },
        OpCheck {
            name: "row_logsumexp",
            diff_inputs: &[0],
            gen_point: |rng| vec![uniform(rng, vec![2, 5], -3.0, 3.0)],
            build: |g, ids| g.row_logsumexp(ids[0]),
        },
        OpCheck {
            name: "layer_norm",
            diff_inputs: &[0, 1, 2],
            gen_point: |rng| {
                vec![
                    uniform(rng, vec![2, 8], -2.0, 2.0),
                    uniform(rng, vec![8], 0.5, 1.5),
                    uniform(rng, vec![8], -0.5, 0.5),
                ]
            },
            build: |g, ids| g.layer_norm(ids[0], ids[1], ids[2], 1e-5),
        },
        OpCheck {
            name: "gelu",
            diff_inputs: &[0],
            gen_point: single_3x4,
            build: |g, ids| g.gelu(ids[0]),
        },
        OpCheck {
            name: "sigmoid",
            diff_inputs: &[0],
            gen_point: single_3x4,
            build: |g, ids| g.sigmoid(ids[0]),
        },
        OpCheck {
            name: "relu",
            // keep points away from the kink at zero
            diff_inputs: &[0],
            gen_point: |rng| {
                let t = uniform(rng, vec![3, 4], 0.1, 2.0);
                let data = t
                    .data()
                    .iter()
                    .map(|&v| if rng.random_bool(0.5) { v } else { -v })
                    .collect();
                vec![Tensor::new(vec![3, 4], data).unwrap()]
            },
            build: |g, ids| g.relu(ids[0]),
        },
        OpCheck {
            name: "exp",
            diff_inputs: &[0],
            gen_point: single_3x4,
            build: |g, ids| g.exp(ids[0]),
        },
        OpCheck {
            name: "log",
            diff_inputs: &[0],
            gen_point: |rng| vec![uniform(rng, vec![3, 4], 0.1, 3.0)],
            build: |g, ids| g.log(ids[0]),
        },
        OpCheck {
            name: "sqrt",
            diff_inputs: &[0],
            gen_point: |rng| vec![uniform(rng, vec![3, 4], 0.1, 3.0)],
            build: |g, ids| g.sqrt(ids[0]),
        },
        OpCheck {
            name: "square",
            diff_inputs: &[0],
            gen_point: single_3x4,
            build: |g, ids| g.square(ids[0]),
        },
        OpCheck {
            name: "l2_normalize",
            diff_inputs: &[0],
            gen_point: |rng| vec![uniform(rng, vec![2, 6], -2.0, 2.0)],
            build: |g, ids| g.l2_normalize_rows(ids[0]),
        },
        OpCheck {
            name: "scale",
            diff_inputs: &[0],
            gen_point: single_3x4,
            build: |g, ids| g.scale(ids[0], -1.7),
        },
        OpCheck {
            name: "add_const",
            diff_inputs: &[0],
            gen_point: single_3x4,
            build: |g, ids| g.add_const(ids[0], 0.42),
        },
        OpCheck {
            name: "bce_with_logits",
            diff_inputs: &[0],
            gen_point: |rng| {
                let logits = uniform(rng, vec![2, 6], -3.0, 3.0);
                let targets: Vec<f64> = (0..12)
                    .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
                    .collect();
                vec![logits, Tensor::new(vec![2, 6], targets).unwrap()]
            },
            build: |g, ids| g.bce_with_logits(ids[0], ids[1]),
        },
    ]
}

fn scalar_loss(check: &OpCheck, point: &[Tensor]) -> Result<(Graph, NodeId, Vec<NodeId>)> {
    let mut g = Graph::new();
    let mut ids = Vec::with_capacity(point.len());
    for (i, t) in point.iter().enumerate() {
        let id = if check.diff_inputs.contains(&i) {
            g.param(t.clone())?
        } else {
            g.constant(t.clone())?
        };
        ids.push(id);
    }
    let out = (check.build)(&mut g, &ids)?;
    let loss = if g.value(out).is_scalar() {
        out
    } else {
        g.sum(out)?
    };
    let diff_ids: Vec<NodeId> = check.diff_inputs.iter().map(|&i| ids[i]).collect();
    Ok((g, loss, diff_ids))
}

fn forward_value(check: &OpCheck, point: &[Tensor]) -> Result<f64> {
    let (g, loss, _) = scalar_loss(check, point)?;
    g.value(loss).item()
}

/// Compare `backward` against central differences at `point`; returns the
/// max relative error over every element of every differentiable input.
pub fn grad_check(check: &OpCheck, point: &[Tensor], h: f64) -> Result<f64> {
    let (g, loss, diff_ids) = scalar_loss(check, point)?;
    let analytic = g.backward_for(loss, &diff_ids)?;

    let mut max_err: f64 = 0.0;
    for (slot, &input_idx) in check.diff_inputs.iter().enumerate() {
        for elem in 0..point[input_idx].numel() {
            let mut plus = point.to_vec();
            plus[input_idx].data_mut()[elem] += h;
            let mut minus = point.to_vec();
            minus[input_idx].data_mut()[elem] -= h;
            let numeric =
                (forward_value(check, &plus)? - forward_value(check, &minus)?) / (2.0 * h);
            let a = analytic[slot].data()[elem];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            max_err = max_err.max(err);
        }
    }
    Ok(max_err)
}

/// Look an op up by name, generate a random point from `seed`, and run
/// `grad_check` on it.
pub fn grad_check_by_name(name: &str, seed: u64, h: f64) -> Result<f64> {
    let ops = registered_ops();
    let check = ops
        .iter()
        .find(|c| c.name == name)
        .ok_or_else(|| CoreError::NotFound(format!("op '{name}' is not registered")))?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let point = (check.gen_point)(&mut rng);
    grad_check(check, &point, h)
}
