//! Plaintext reference runtime: exact double-precision evaluation of a graph.
//!
//! Usable at any stage before lowering; approximation-expanded subgraphs
//! evaluate exactly as written, so approximation error is fully visible
//! without touching the MPC runtime. `encode`/`trunc` nodes evaluate their
//! integer-level definitions so fixed-point effects can be previewed.
//!
//! Callers are expected to pass a graph that already validates.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{topo_order, Graph, Node, OpKind};
use crate::tensor::Tensor;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Called with every comparison operand: the input of each `ltz` and of each
/// `max`/`max_pool` node. Used by calibration-based window selection.
pub type CmpHook<'a> = &'a mut dyn FnMut(&Node, &Tensor);

pub fn interpret(graph: &Graph, inputs: &BTreeMap<String, Tensor>) -> Result<Vec<Tensor>> {
    interpret_with_hook(graph, inputs, &mut |_, _| {})
}

pub fn interpret_with_hook(
    graph: &Graph,
    inputs: &BTreeMap<String, Tensor>,
    hook: CmpHook<'_>,
) -> Result<Vec<Tensor>> {
    let order = topo_order(graph)?;
    let mut vals: BTreeMap<crate::graph::NodeId, Tensor> = BTreeMap::new();
    for id in order {
        let node = &graph.nodes[&id];
        let get = |i: usize| -> &Tensor { &vals[&node.inputs[i]] };
        let out = match &node.op {
            OpKind::Input => {
                let name = graph
                    .inputs
                    .iter()
                    .find(|(_, nid)| *nid == id)
                    .map(|(n, _)| n.as_str())
                    .ok_or_else(|| Error::Eval(format!("input node {id} has no name")))?;
                let t = inputs
                    .get(name)
                    .ok_or_else(|| Error::Eval(format!("missing input tensor \"{name}\"")))?;
                if t.shape != node.meta.shape {
                    return Err(Error::Eval(format!(
                        "input \"{name}\" shape {:?} does not match declared {:?}",
                        t.shape, node.meta.shape
                    )));
                }
                t.clone()
            }
            OpKind::Const { data } => Tensor::new(node.meta.shape.clone(), data.clone()),
            OpKind::Add => get(0).zip(get(1), |a, b| a + b)?,
            OpKind::Sub => get(0).zip(get(1), |a, b| a - b)?,
            OpKind::Mul => get(0).zip(get(1), |a, b| a * b)?,
            OpKind::Sum { axis } => match axis {
                Some(a) => get(0).reduce_axis_keep(*a, 0.0, |x, y| x + y)?,
                None => get(0).reduce_all(0.0, |x, y| x + y),
            },
            OpKind::Mean { axis } => {
                let x = get(0);
                match axis {
                    Some(a) => {
                        let k = x.shape[*a] as f64;
                        x.reduce_axis_keep(*a, 0.0, |p, q| p + q)?.map(|v| v / k)
                    }
                    None => x.reduce_all(0.0, |p, q| p + q).map(|v| v / x.len() as f64),
                }
            }
            OpKind::AvgPool { kh, kw } => {
                let k = (kh * kw) as f64;
                get(0).pool2d(*kh, *kw, 0.0, |a, b| a + b)?.map(|v| v / k)
            }
            OpKind::MatMul => get(0).matmul(get(1))?,
            OpKind::Conv2d => get(0).conv2d(get(1))?,
            OpKind::Linear => {
                let y = get(0).matmul(get(1))?;
                y.zip(get(2), |a, b| a + b)?
            }
            OpKind::Ltz => {
                hook(node, get(0));
                get(0).map(|x| indicator(x < 0.0))
            }
            OpKind::Exp => get(0).map(f64::exp),
            OpKind::Gelu => get(0).map(gelu),
            OpKind::Silu => get(0).map(|x| x * sigmoid(x)),
            OpKind::Sigmoid => get(0).map(sigmoid),
            OpKind::Relu => get(0).map(|x| x.max(0.0)),
            OpKind::Reciprocal => get(0).map(|x| 1.0 / x),
            OpKind::Rsqrt => get(0).map(|x| 1.0 / x.sqrt()),
            OpKind::Softmax { axis } => {
                let x = get(0);
                let m = x.reduce_axis_keep(*axis, f64::NEG_INFINITY, f64::max)?;
                let e = x.zip(&m, |a, b| (a - b).exp())?;
                let s = e.reduce_axis_keep(*axis, 0.0, |a, b| a + b)?;
                e.zip(&s, |a, b| a / b)?
            }
            OpKind::LayerNorm { axis, eps } => {
                let x = get(0);
                let mu = x.reduce_axis_keep(*axis, 0.0, |a, b| a + b)?.map(|v| v / x.shape[*axis] as f64);
                let c = x.zip(&mu, |a, b| a - b)?;
                let var = c
                    .map(|v| v * v)
                    .reduce_axis_keep(*axis, 0.0, |a, b| a + b)?
                    .map(|v| v / x.shape[*axis] as f64);
                let n = c.zip(&var, |a, b| a / (b + eps).sqrt())?;
                if node.inputs.len() == 3 {
                    n.zip(get(1), |a, b| a * b)?.zip(get(2), |a, b| a + b)?
                } else {
                    n
                }
            }
            OpKind::Ge => get(0).zip(get(1), |a, b| indicator(a >= b))?,
            OpKind::Gt => get(0).zip(get(1), |a, b| indicator(a > b))?,
            OpKind::Le => get(0).zip(get(1), |a, b| indicator(a <= b))?,
            OpKind::Lt => get(0).zip(get(1), |a, b| indicator(a < b))?,
            OpKind::Max { axis } => {
                hook(node, get(0));
                match axis {
                    Some(a) => get(0).reduce_axis_keep(*a, f64::NEG_INFINITY, f64::max)?,
                    None => get(0).reduce_all(f64::NEG_INFINITY, f64::max),
                }
            }
            OpKind::MaxPool { kh, kw } => {
                hook(node, get(0));
                get(0).pool2d(*kh, *kw, f64::NEG_INFINITY, f64::max)?
            }
            OpKind::Reshape { shape } => get(0).reshape(shape.clone())?,
            OpKind::Transpose => get(0).transpose2()?,
            OpKind::Permute { perm } => get(0).permute(perm)?,
            OpKind::Flatten => get(0).reshape(vec![get(0).len()])?,
            OpKind::Stack => {
                let parts: Vec<&Tensor> = node.inputs.iter().map(|i| &vals[i]).collect();
                Tensor::stack(&parts)?
            }
            OpKind::ZerosLike => Tensor::zeros(get(0).shape.clone()),
            OpKind::FullLike { value } => Tensor::full(get(0).shape.clone(), *value),
            OpKind::Trunc { by } => {
                let s = by.value();
                get(0).map(|x| (x / s).floor())
            }
            OpKind::Encode { to, from } => {
                let f = to.value() / from.value();
                get(0).map(|x| (x * f).round())
            }
            OpKind::MulMpc | OpKind::LtzMpc => {
                return Err(Error::UnsupportedOp { op: node.op.tag().into(), node: id })
            }
            OpKind::Reveal => get(0).clone(),
        };
        vals.insert(id, out);
    }
    Ok(graph.outputs.iter().map(|id| vals[id].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{DType, GraphBuilder};

    fn run1(g: &Graph, x: Tensor) -> Tensor {
        let mut inputs = BTreeMap::new();
        inputs.insert("x".to_string(), x);
        interpret(g, &inputs).unwrap().remove(0)
    }

    #[test]
    fn relu_example() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", vec![2], DType::F64);
        let r = b.relu(x);
        b.reveal(r);
        let g = b.finish().unwrap();
        assert_eq!(run1(&g, Tensor::new(vec![2], vec![-1.0, 2.0])).data, vec![0.0, 2.0]);
    }

    #[test]
    fn softmax_symmetry() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", vec![2], DType::F64);
        let s = b.softmax(x, 0).unwrap();
        b.reveal(s);
        let g = b.finish().unwrap();
        let out = run1(&g, Tensor::new(vec![2], vec![0.0, 0.0]));
        assert_eq!(out.data, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", vec![3], DType::F64);
        let s = b.softmax(x, 0).unwrap();
        b.reveal(s);
        let g = b.finish().unwrap();
        let a = run1(&g, Tensor::new(vec![3], vec![0.3, -1.0, 2.0]));
        let c = run1(&g, Tensor::new(vec![3], vec![0.3 + 7.0, -1.0 + 7.0, 2.0 + 7.0]));
        assert!(a.max_abs_diff(&c) < 1e-12);
    }

    #[test]
    fn mpc_kinds_rejected() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", vec![2], DType::F64);
        let m = b.op(OpKind::MulMpc, &[x, x]).unwrap();
        b.mark_output(m);
        let g = b.graph().clone();
        let mut inputs = BTreeMap::new();
        inputs.insert("x".to_string(), Tensor::new(vec![2], vec![1.0, 2.0]));
        assert!(matches!(interpret(&g, &inputs), Err(Error::UnsupportedOp { .. })));
    }

    #[test]
    fn encode_trunc_preview() {
        use crate::fixedpoint::Scale;
        let mut b = GraphBuilder::new();
        let x = b.input("x", vec![1], DType::F64);
        let e = b.op(OpKind::Encode { to: Scale(4), from: Scale(0) }, &[x]).unwrap();
        let t = b.op(OpKind::Trunc { by: Scale(4) }, &[e]).unwrap();
        b.mark_output(e);
        b.mark_output(t);
        let g = b.graph().clone();
        let mut inputs = BTreeMap::new();
        inputs.insert("x".to_string(), Tensor::new(vec![1], vec![1.3]));
        let out = interpret(&g, &inputs).unwrap();
        assert_eq!(out[0].data, vec![21.0], "round(1.3 * 16)");
        assert_eq!(out[1].data, vec![1.0], "floor(21 / 16)");
    }
}
