//! Desk-scale model fixtures used by the CLI, the acceptance suite and the
//! tuner tests: a two-layer MLP with ReLU and softmax on a synthetic
//! two-class dataset, a single toy transformer block, and a two-softmax
//! fixture with asymmetric approximation tolerance.

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::frontend::Annotation;
use crate::graph::{DType, Graph, GraphBuilder, NodeId, OpKind};
use crate::interp::interpret;
use crate::tensor::Tensor;
use crate::tuner::{Dataset, Sample};

#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: &'static str,
    /// Pre-approximation graph, not yet owner-annotated.
    pub graph: Graph,
    pub annotation: Annotation,
    /// Inputs shared by every sample (model weights).
    pub fixed_inputs: BTreeMap<String, Tensor>,
    /// Calibration samples with references from the exact plaintext model.
    pub dataset: Dataset,
    /// One complete input map (first sample) for single runs.
    pub run_inputs: BTreeMap<String, Tensor>,
}

/// Uniform in [-1, 1), deterministic across platforms.
fn urand(rng: &mut ChaCha20Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
}

fn rand_tensor(rng: &mut ChaCha20Rng, shape: Vec<usize>, amp: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| urand(rng) * amp).collect())
}

fn dataset_from(
    graph: &Graph,
    fixed: &BTreeMap<String, Tensor>,
    samples: Vec<BTreeMap<String, Tensor>>,
) -> Dataset {
    samples
        .into_iter()
        .map(|vars| {
            let mut inputs = fixed.clone();
            inputs.extend(vars);
            let references = interpret(graph, &inputs).expect("fixture graph interprets");
            Sample { inputs, references }
        })
        .collect()
}

/// Two-layer MLP: `softmax(relu(x W1 + b1) W2 + b2)`. The activation input
/// is owned by party 0 and the model by party 1; samples come from two
/// Gaussian-ish blobs so the model output carries class structure.
pub fn mlp(n_samples: usize, seed: u64) -> Fixture {
    let mut b = GraphBuilder::new();
    let x = b.input("x", vec![1, 4], DType::F64);
    let w1 = b.input("w1", vec![4, 8], DType::F64);
    let b1 = b.input("b1", vec![1, 8], DType::F64);
    let w2 = b.input("w2", vec![8, 2], DType::F64);
    let b2 = b.input("b2", vec![1, 2], DType::F64);
    let h = b.matmul(x, w1).unwrap();
    let h = b.add(h, b1);
    let h = b.relu(h);
    let o = b.matmul(h, w2).unwrap();
    let o = b.add(o, b2);
    let s = b.softmax(o, 1).unwrap();
    b.reveal(s);
    let graph = b.finish().unwrap();

    let annotation = Annotation::default()
        .secret("x", &[0])
        .secret("w1", &[1])
        .secret("b1", &[1])
        .secret("w2", &[1])
        .secret("b2", &[1]);

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut fixed = BTreeMap::new();
    fixed.insert("w1".to_string(), rand_tensor(&mut rng, vec![4, 8], 0.8));
    fixed.insert("b1".to_string(), rand_tensor(&mut rng, vec![1, 8], 0.2));
    fixed.insert("w2".to_string(), rand_tensor(&mut rng, vec![8, 2], 0.8));
    fixed.insert("b2".to_string(), rand_tensor(&mut rng, vec![1, 2], 0.2));

    let means = [[0.8, 0.8, -0.8, -0.8], [-0.8, -0.8, 0.8, 0.8]];
    let samples: Vec<BTreeMap<String, Tensor>> = (0..n_samples)
        .map(|i| {
            let mean = means[i % 2];
            let data: Vec<f64> = mean.iter().map(|&m| m + 0.3 * urand(&mut rng)).collect();
            let mut m = BTreeMap::new();
            m.insert("x".to_string(), Tensor::new(vec![1, 4], data));
            m
        })
        .collect();
    let dataset = dataset_from(&graph, &fixed, samples);
    let run_inputs = dataset[0].inputs.clone();
    Fixture { name: "mlp", graph, annotation, fixed_inputs: fixed, dataset, run_inputs }
}

fn affine_const(rng: &mut ChaCha20Rng, shape: Vec<usize>, base: f64, amp: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| base + amp * urand(rng)).collect())
}

/// One transformer block at toy dimensions (seq 8, d_model 16, one head,
/// d_ff 32): layernorm, scaled-dot-product attention with softmax,
/// residual, layernorm, GELU feed-forward, residual. Exercises every
/// approximation family.
pub fn transformer_block(n_samples: usize, seed: u64) -> Fixture {
    let (s, d, dff) = (8usize, 16usize, 32usize);
    let mut b = GraphBuilder::new();
    let x = b.input("x", vec![s, d], DType::F64);
    let g1 = b.input("ln1_g", vec![s, d], DType::F64);
    let be1 = b.input("ln1_b", vec![s, d], DType::F64);
    let wq = b.input("wq", vec![d, d], DType::F64);
    let wk = b.input("wk", vec![d, d], DType::F64);
    let wv = b.input("wv", vec![d, d], DType::F64);
    let wo = b.input("wo", vec![d, d], DType::F64);
    let g2 = b.input("ln2_g", vec![s, d], DType::F64);
    let be2 = b.input("ln2_b", vec![s, d], DType::F64);
    let wf1 = b.input("ff_w1", vec![d, dff], DType::F64);
    let wf2 = b.input("ff_w2", vec![dff, d], DType::F64);

    let n1 = b.op(OpKind::LayerNorm { axis: 1, eps: 1e-5 }, &[x, g1, be1]).unwrap();
    let q = b.matmul(n1, wq).unwrap();
    let k = b.matmul(n1, wk).unwrap();
    let v = b.matmul(n1, wv).unwrap();
    let kt = b.op(OpKind::Transpose, &[k]).unwrap();
    let scores = b.matmul(q, kt).unwrap();
    let inv_sqrt_d = b.float_const(0.25);
    let scaled = b.mul(scores, inv_sqrt_d);
    let attn = b.softmax(scaled, 1).unwrap();
    let ctx = b.matmul(attn, v).unwrap();
    let proj = b.matmul(ctx, wo).unwrap();
    let res1 = b.add(x, proj);
    let n2 = b.op(OpKind::LayerNorm { axis: 1, eps: 1e-5 }, &[res1, g2, be2]).unwrap();
    let f1 = b.matmul(n2, wf1).unwrap();
    let act = b.op(OpKind::Gelu, &[f1]).unwrap();
    let f2 = b.matmul(act, wf2).unwrap();
    let out = b.add(res1, f2);
    b.reveal(out);
    let graph = b.finish().unwrap();

    let mut annotation = Annotation::default().secret("x", &[0]);
    for w in ["ln1_g", "ln1_b", "wq", "wk", "wv", "wo", "ln2_g", "ln2_b", "ff_w1", "ff_w2"] {
        annotation = annotation.secret(w, &[1]);
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let amp = 1.0 / (d as f64).sqrt();
    let mut fixed = BTreeMap::new();
    fixed.insert("ln1_g".to_string(), affine_const(&mut rng, vec![s, d], 1.0, 0.1));
    fixed.insert("ln1_b".to_string(), affine_const(&mut rng, vec![s, d], 0.0, 0.1));
    for w in ["wq", "wk", "wv", "wo"] {
        fixed.insert(w.to_string(), rand_tensor(&mut rng, vec![d, d], amp));
    }
    fixed.insert("ln2_g".to_string(), affine_const(&mut rng, vec![s, d], 1.0, 0.1));
    fixed.insert("ln2_b".to_string(), affine_const(&mut rng, vec![s, d], 0.0, 0.1));
    fixed.insert("ff_w1".to_string(), rand_tensor(&mut rng, vec![d, dff], amp));
    fixed.insert("ff_w2".to_string(), rand_tensor(&mut rng, vec![dff, d], 1.0 / (dff as f64).sqrt()));

    let samples: Vec<BTreeMap<String, Tensor>> = (0..n_samples)
        .map(|_| {
            let mut m = BTreeMap::new();
            m.insert("x".to_string(), rand_tensor(&mut rng, vec![s, d], 1.0));
            m
        })
        .collect();
    let dataset = dataset_from(&graph, &fixed, samples);
    let run_inputs = dataset[0].inputs.clone();
    Fixture { name: "transformer_block", graph, annotation, fixed_inputs: fixed, dataset, run_inputs }
}

/// Two softmaxes over the same secret input at very different logit scales:
/// the narrow one tolerates aggressive exp approximation, the wide one does
/// not, so a per-site tuner must pick different knobs for the two sites.
pub fn two_softmax(n_samples: usize, seed: u64) -> Fixture {
    let mut b = GraphBuilder::new();
    let x = b.input("x", vec![4], DType::F64);
    let narrow_scale = b.float_const(0.25);
    let wide_scale = b.float_const(8.0);
    let narrow_in = b.mul(x, narrow_scale);
    let wide_in = b.mul(x, wide_scale);
    let narrow = b.softmax(narrow_in, 0).unwrap();
    let wide = b.softmax(wide_in, 0).unwrap();
    let both = b.op(OpKind::Stack, &[narrow, wide]).unwrap();
    b.reveal(both);
    let graph = b.finish().unwrap();

    let annotation = Annotation::default().secret("x", &[0]);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let samples: Vec<BTreeMap<String, Tensor>> = (0..n_samples)
        .map(|_| {
            let mut m = BTreeMap::new();
            m.insert("x".to_string(), rand_tensor(&mut rng, vec![4], 1.0));
            m
        })
        .collect();
    let dataset = dataset_from(&graph, &BTreeMap::new(), samples);
    let run_inputs = dataset[0].inputs.clone();
    Fixture { name: "two_softmax", graph, annotation, fixed_inputs: BTreeMap::new(), dataset, run_inputs }
}

/// Node id of the first node whose site id matches, for tests.
pub fn node_by_site(graph: &Graph, site: &str) -> Option<NodeId> {
    graph.nodes.values().find(|n| n.site_id.as_deref() == Some(site)).map(|n| n.id)
}

#[derive(Debug, Clone)]
pub struct RandomGraphCase {
    pub graph: Graph,
    pub annotation: Annotation,
    pub inputs: BTreeMap<String, Tensor>,
}

/// Deterministic random post-approximation graph (at most 12 nodes) with
/// value-range control: on the probe inputs every intermediate stays within
/// [-4, 4] and comparison operands keep at least 1/16 of clearance, so
/// fixed-point rounding cannot flip a comparison. Returns `None` when the
/// draw cannot be completed; callers resample with the next seed.
pub fn random_post_approx_graph(seed: u64) -> Option<RandomGraphCase> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut pick = move |n: usize| (rng.next_u64() % n as u64) as usize;
    let grid = |p: &mut dyn FnMut(usize) -> usize| (p(49) as f64 - 24.0) / 16.0;

    let mut b = GraphBuilder::new();
    let shape = vec![2, 2];
    let x0 = b.input("x0", shape.clone(), DType::F64);
    let x1 = b.input("x1", shape.clone(), DType::F64);
    let mut inputs = BTreeMap::new();
    let mut vals: BTreeMap<NodeId, Tensor> = BTreeMap::new();
    for (name, id) in [("x0", x0), ("x1", x1)] {
        let t = Tensor::new(shape.clone(), (0..4).map(|_| grid(&mut pick)).collect());
        vals.insert(id, t.clone());
        inputs.insert(name.to_string(), t);
    }
    let mut pool = vec![x0, x1];
    let target = 6 + pick(5);
    let mut guard = 0;
    while pool.len() < target {
        guard += 1;
        if guard > 200 {
            return None;
        }
        let a = pool[pick(pool.len())];
        let c = pool[pick(pool.len())];
        let (op, operands): (OpKind, Vec<NodeId>) = match pick(8) {
            0 => (OpKind::Add, vec![a, c]),
            1 => (OpKind::Sub, vec![a, c]),
            2 => (OpKind::Mul, vec![a, c]),
            3 => (OpKind::MatMul, vec![a, c]),
            4 => (OpKind::Ltz, vec![a]),
            5 => (OpKind::Max { axis: Some(pick(2)) }, vec![a]),
            6 => (OpKind::Sum { axis: Some(pick(2)) }, vec![a]),
            7 => {
                let cv = grid(&mut pick);
                let cid = b.float_const(cv);
                vals.insert(cid, Tensor::scalar(cv));
                (OpKind::Mul, vec![a, cid])
            }
            _ => unreachable!(),
        };
        let value = {
            let get = |i: usize| &vals[&operands[i]];
            match &op {
                OpKind::Add => get(0).zip(get(1), |p, q| p + q).ok()?,
                OpKind::Sub => get(0).zip(get(1), |p, q| p - q).ok()?,
                OpKind::Mul => get(0).zip(get(1), |p, q| p * q).ok()?,
                OpKind::MatMul => get(0).matmul(get(1)).ok()?,
                OpKind::Ltz => {
                    if get(0).data.iter().any(|v| v.abs() < 1.0 / 16.0) {
                        continue;
                    }
                    get(0).map(|v| f64::from(v < 0.0))
                }
                OpKind::Max { axis } => {
                    let t = get(0);
                    let decisive = match axis {
                        Some(0) => (0..2).all(|j| (t.data[j] - t.data[2 + j]).abs() >= 1.0 / 16.0),
                        _ => (0..2).all(|i| (t.data[2 * i] - t.data[2 * i + 1]).abs() >= 1.0 / 16.0),
                    };
                    if !decisive {
                        continue;
                    }
                    t.reduce_axis_keep(axis.unwrap(), f64::NEG_INFINITY, f64::max).ok()?
                }
                OpKind::Sum { axis } => get(0).reduce_axis_keep(axis.unwrap(), 0.0, |p, q| p + q).ok()?,
                _ => unreachable!(),
            }
        };
        if value.data.iter().any(|v| v.abs() > 4.0) {
            continue;
        }
        let id = b.op(op, &operands).ok()?;
        vals.insert(id, value);
        pool.push(id);
    }
    let out = *pool.last().unwrap();
    b.reveal(out);
    let graph = b.finish().ok()?;
    let annotation = Annotation::default().secret("x0", &[0]).secret("x1", &[1]);
    Some(RandomGraphCase { graph, annotation, inputs })
}
