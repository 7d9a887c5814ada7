//! Structural validation, shape inference, stage predicates and topological
//! ordering.

use std::collections::BTreeMap;

use super::{DType, Graph, NodeId, OpFamily, OpKind, TensorMeta};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub node: Option<NodeId>,
    pub msg: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.node {
            Some(id) => write!(f, "node {id}: {}", self.msg),
            None => write!(f, "{}", self.msg),
        }
    }
}

fn v(node: Option<NodeId>, msg: impl Into<String>) -> Violation {
    Violation { node, msg: msg.into() }
}

/// Pipeline stages with distinct operator-set constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    PreApprox,
    PostApprox,
    PostLowering,
}

fn family_allowed(stage: Stage, fam: OpFamily) -> bool {
    use OpFamily::*;
    match stage {
        Stage::PreApprox => !matches!(fam, FixedPoint | Mpc),
        Stage::PostApprox => matches!(
            fam,
            Input | Const | AddLike | MulLike | Ltz | MaxLike | ShapeOnly | ValueFree | Reveal
        ),
        Stage::PostLowering => !matches!(fam, Composite),
    }
}

/// Check the stage-appropriate operator-set constraint.
pub fn check_stage(graph: &Graph, stage: Stage) -> Vec<Violation> {
    graph
        .nodes
        .values()
        .filter(|n| !family_allowed(stage, n.op.family()))
        .map(|n| v(Some(n.id), format!("op {} not allowed at stage {:?}", n.op.tag(), stage)))
        .collect()
}

fn combine_dtype(a: DType, b: DType) -> DType {
    if a.is_float() || b.is_float() {
        DType::F64
    } else if a == DType::Bool && b == DType::Bool {
        DType::Bool
    } else {
        DType::I64
    }
}

/// Shapes combine elementwise, with scalar-vs-tensor broadcast only.
fn broadcast(a: &[usize], b: &[usize]) -> std::result::Result<Vec<usize>, String> {
    let numel = |s: &[usize]| s.iter().product::<usize>();
    if a == b || numel(b) == 1 {
        Ok(a.to_vec())
    } else if numel(a) == 1 {
        Ok(b.to_vec())
    } else {
        Err(format!("shape mismatch {a:?} vs {b:?} (only scalar broadcast supported)"))
    }
}

fn expect_inputs(n: usize, got: usize) -> std::result::Result<(), String> {
    if n == got {
        Ok(())
    } else {
        Err(format!("expected {n} inputs, got {got}"))
    }
}

/// Infer output metadata of an operator applied to the given input metas.
pub fn infer_meta(op: &OpKind, ins: &[&TensorMeta]) -> std::result::Result<TensorMeta, String> {
    use OpKind::*;
    let unary = || -> std::result::Result<TensorMeta, String> {
        expect_inputs(1, ins.len())?;
        Ok(ins[0].clone())
    };
    let unary_float = || -> std::result::Result<TensorMeta, String> {
        expect_inputs(1, ins.len())?;
        Ok(TensorMeta::new(ins[0].shape.clone(), DType::F64))
    };
    let binary = |out_dtype: Option<DType>| -> std::result::Result<TensorMeta, String> {
        expect_inputs(2, ins.len())?;
        let shape = broadcast(&ins[0].shape, &ins[1].shape)?;
        Ok(TensorMeta::new(shape, out_dtype.unwrap_or(combine_dtype(ins[0].dtype, ins[1].dtype))))
    };
    let axis_reduce = |axis: Option<usize>| -> std::result::Result<TensorMeta, String> {
        expect_inputs(1, ins.len())?;
        match axis {
            Some(a) if a >= ins[0].shape.len() => {
                Err(format!("axis {a} out of range for shape {:?}", ins[0].shape))
            }
            Some(_) => Ok(ins[0].clone()),
            None => Ok(TensorMeta::new(vec![1], ins[0].dtype)),
        }
    };
    let pool = |kh: usize, kw: usize| -> std::result::Result<TensorMeta, String> {
        expect_inputs(1, ins.len())?;
        match ins[0].shape.as_slice() {
            [n, c, h, w] if kh > 0 && kw > 0 && h % kh == 0 && w % kw == 0 => {
                Ok(TensorMeta::new(vec![*n, *c, h / kh, w / kw], ins[0].dtype))
            }
            s => Err(format!("pool window ({kh},{kw}) invalid for shape {s:?}")),
        }
    };

    match op {
        Input | Const { .. } => Err("input/const metadata is given, not inferred".into()),
        Add | Sub | Mul => binary(None),
        Ge | Gt | Le | Lt => binary(Some(DType::Bool)),
        Sum { axis } | Mean { axis } | Max { axis } => axis_reduce(*axis),
        AvgPool { kh, kw } | MaxPool { kh, kw } => pool(*kh, *kw),
        MatMul | MulMpc => {
            expect_inputs(2, ins.len())?;
            match (ins[0].shape.as_slice(), ins[1].shape.as_slice()) {
                _ if op == &MulMpc && ins[0].shape == ins[1].shape => {
                    Ok(TensorMeta::new(ins[0].shape.clone(), DType::I64))
                }
                ([a, b], [b2, c]) => {
                    if b != b2 {
                        Err(format!("shape mismatch: inner dims {b}≠{b2}"))
                    } else {
                        Ok(TensorMeta::new(vec![*a, *c], combine_dtype(ins[0].dtype, ins[1].dtype)))
                    }
                }
                (a, b) => Err(format!("matmul expects 2-d operands, got {a:?} x {b:?}")),
            }
        }
        Conv2d => {
            expect_inputs(2, ins.len())?;
            match (ins[0].shape.as_slice(), ins[1].shape.as_slice()) {
                ([n, cin, h, w], [cout, cin2, kh, kw]) => {
                    if cin != cin2 {
                        Err(format!("conv2d channel mismatch {cin}≠{cin2}"))
                    } else if kh > h || kw > w {
                        Err("conv2d kernel larger than input".into())
                    } else {
                        Ok(TensorMeta::new(
                            vec![*n, *cout, h - kh + 1, w - kw + 1],
                            combine_dtype(ins[0].dtype, ins[1].dtype),
                        ))
                    }
                }
                (a, b) => Err(format!("conv2d expects 4-d operands, got {a:?} x {b:?}")),
            }
        }
        Linear => {
            expect_inputs(3, ins.len())?;
            match (ins[0].shape.as_slice(), ins[1].shape.as_slice()) {
                ([a, b], [b2, c]) if b == b2 => {
                    let bias_ok = ins[2].numel() == 1 || ins[2].shape == vec![*a, *c];
                    if !bias_ok {
                        return Err(format!("linear bias shape {:?} not scalar or [{a}, {c}]", ins[2].shape));
                    }
                    Ok(TensorMeta::new(vec![*a, *c], DType::F64))
                }
                ([_, b], [b2, _]) => Err(format!("shape mismatch: inner dims {b}≠{b2}")),
                (a, b) => Err(format!("linear expects 2-d operands, got {a:?} x {b:?}")),
            }
        }
        Ltz | LtzMpc => {
            expect_inputs(1, ins.len())?;
            Ok(TensorMeta::new(ins[0].shape.clone(), DType::Bool))
        }
        Exp | Gelu | Silu | Sigmoid | Relu | Reciprocal | Rsqrt => unary_float(),
        Softmax { axis } => {
            expect_inputs(1, ins.len())?;
            if *axis >= ins[0].shape.len() {
                return Err(format!("softmax axis {axis} out of range for {:?}", ins[0].shape));
            }
            Ok(TensorMeta::new(ins[0].shape.clone(), DType::F64))
        }
        LayerNorm { axis, .. } => {
            if ins.len() != 1 && ins.len() != 3 {
                return Err(format!("layer_norm expects 1 or 3 inputs, got {}", ins.len()));
            }
            if *axis >= ins[0].shape.len() {
                return Err(format!("layer_norm axis {axis} out of range for {:?}", ins[0].shape));
            }
            for affine in &ins[1..] {
                if affine.shape != ins[0].shape {
                    return Err(format!(
                        "layer_norm affine shape {:?} must match input {:?}",
                        affine.shape, ins[0].shape
                    ));
                }
            }
            Ok(TensorMeta::new(ins[0].shape.clone(), DType::F64))
        }
        Reshape { shape } => {
            expect_inputs(1, ins.len())?;
            if shape.iter().product::<usize>() != ins[0].numel() {
                return Err(format!("reshape {:?} -> {shape:?} changes element count", ins[0].shape));
            }
            Ok(TensorMeta::new(shape.clone(), ins[0].dtype))
        }
        Transpose => {
            expect_inputs(1, ins.len())?;
            match ins[0].shape.as_slice() {
                [a, b] => Ok(TensorMeta::new(vec![*b, *a], ins[0].dtype)),
                s => Err(format!("transpose expects 2-d input, got {s:?}")),
            }
        }
        Permute { perm } => {
            expect_inputs(1, ins.len())?;
            if perm.len() != ins[0].shape.len() {
                return Err("permute rank mismatch".into());
            }
            let mut seen = vec![false; perm.len()];
            for &p in perm {
                if p >= perm.len() || seen[p] {
                    return Err(format!("invalid permutation {perm:?}"));
                }
                seen[p] = true;
            }
            Ok(TensorMeta::new(perm.iter().map(|&p| ins[0].shape[p]).collect(), ins[0].dtype))
        }
        Flatten => {
            expect_inputs(1, ins.len())?;
            Ok(TensorMeta::new(vec![ins[0].numel()], ins[0].dtype))
        }
        Stack => {
            if ins.is_empty() {
                return Err("stack expects at least one input".into());
            }
            for m in &ins[1..] {
                if m.shape != ins[0].shape {
                    return Err("stack shape mismatch".into());
                }
            }
            let mut shape = vec![ins.len()];
            shape.extend_from_slice(&ins[0].shape);
            Ok(TensorMeta::new(shape, ins[0].dtype))
        }
        ZerosLike => unary(),
        FullLike { .. } => unary_float(),
        Trunc { .. } | Encode { .. } => unary(),
        Reveal => unary(),
    }
}

/// Structural validation. Returns every violation found rather than failing
/// fast; an empty vector means the graph is well-formed.
pub fn validate(graph: &Graph) -> Vec<Violation> {
    let mut out = Vec::new();

    for (name, id) in &graph.inputs {
        match graph.get(*id) {
            None => out.push(v(None, format!("input \"{name}\" references missing node {id}"))),
            Some(n) if n.op != OpKind::Input => {
                out.push(v(Some(*id), format!("input \"{name}\" must point at an input node")))
            }
            _ => {}
        }
    }
    let mut names: Vec<&str> = graph.inputs.iter().map(|(n, _)| n.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    if names.len() != graph.inputs.len() {
        out.push(v(None, "duplicate input names"));
    }
    for id in &graph.outputs {
        if !graph.nodes.contains_key(id) {
            out.push(v(None, format!("output references missing node {id}")));
        }
    }

    let declared: Vec<NodeId> =
        graph.nodes.values().filter(|n| n.op == OpKind::Input).map(|n| n.id).collect();
    for id in declared {
        if !graph.inputs.iter().any(|(_, i)| *i == id) {
            out.push(v(Some(id), "input node not listed in graph inputs"));
        }
    }

    let mut sites: BTreeMap<&str, NodeId> = BTreeMap::new();
    for (&key, node) in graph.nodes.iter() {
        if node.id != key {
            out.push(v(Some(key), "node id differs from its map key"));
        }
        if let Some(site) = &node.site_id {
            if let Some(prev) = sites.insert(site.as_str(), node.id) {
                out.push(v(Some(node.id), format!("site_id \"{site}\" already used by node {prev}")));
            }
        }
        let mut metas = Vec::new();
        let mut dangling = false;
        for inp in &node.inputs {
            match graph.get(*inp) {
                None => {
                    out.push(v(Some(node.id), format!("dangling reference at node {}: input {inp}", node.id.0)));
                    dangling = true;
                }
                Some(src) => {
                    if src.id >= node.id {
                        out.push(v(
                            Some(node.id),
                            format!("input {inp} does not precede node {} in id order", node.id),
                        ));
                    }
                    metas.push(&src.meta);
                }
            }
        }
        if dangling {
            continue;
        }
        match &node.op {
            OpKind::Input | OpKind::Const { .. } => {
                if !node.inputs.is_empty() {
                    out.push(v(Some(node.id), "source node must have no inputs"));
                }
                if let OpKind::Const { data } = &node.op {
                    if data.len() != node.meta.numel() {
                        out.push(v(Some(node.id), "const data length differs from meta shape"));
                    }
                }
                if !node.meta.dtype.valid() || node.meta.shape.contains(&0) {
                    out.push(v(Some(node.id), "invalid tensor metadata"));
                }
            }
            op => match infer_meta(op, &metas) {
                Ok(meta) => {
                    if meta.shape != node.meta.shape {
                        out.push(v(
                            Some(node.id),
                            format!("stored shape {:?} differs from inferred {:?}", node.meta.shape, meta.shape),
                        ));
                    }
                }
                Err(msg) => out.push(v(Some(node.id), msg)),
            },
        }
    }
    out
}

/// Deterministic topological order: Kahn's algorithm with ties broken by
/// ascending node id.
pub fn topo_order(graph: &Graph) -> Result<Vec<NodeId>> {
    let mut indegree: BTreeMap<NodeId, usize> = graph.nodes.keys().map(|&k| (k, 0)).collect();
    for node in graph.nodes.values() {
        for inp in &node.inputs {
            if inp == &node.id {
                return Err(Error::Cycle(node.id));
            }
            if !graph.nodes.contains_key(inp) {
                return Err(Error::InvalidGraph(format!("dangling reference at node {}", node.id.0)));
            }
        }
        *indegree.get_mut(&node.id).unwrap() += node.inputs.len();
    }
    let consumers = graph.consumers();
    let mut ready: std::collections::BinaryHeap<std::cmp::Reverse<NodeId>> = indegree
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&id, _)| std::cmp::Reverse(id))
        .collect();
    let mut order = Vec::with_capacity(graph.nodes.len());
    while let Some(std::cmp::Reverse(id)) = ready.pop() {
        order.push(id);
        for next in consumers.get(&id).into_iter().flatten() {
            let d = indegree.get_mut(next).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.push(std::cmp::Reverse(*next));
            }
        }
    }
    if order.len() != graph.nodes.len() {
        let stuck = indegree.iter().find(|(_, &d)| d > 0).map(|(&id, _)| id).unwrap();
        return Err(Error::Cycle(stuck));
    }
    Ok(order)
}
