//! Pattern-rewrite engine and the built-in library of tunable
//! approximations.
//!
//! Passes match single nodes (kind plus optional predicates), optionally
//! filter on metadata such as operand secrecy, and splice in a replacement
//! subgraph parameterized by integer knobs. Decrementing a knob always
//! yields a variant that is cheaper (per the backend cost model) and no
//! more accurate.

mod passes;
pub mod polyfit;

pub use passes::{
    builtin_passes, build_exp, build_layernorm, build_newton_reciprocal, build_newton_rsqrt,
    build_poly, build_relu, build_softmax, pass_by_name, PolyOp,
};

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::repropagate;
use crate::graph::{
    check_stage, infer_meta, topo_order, Graph, Node, NodeId, OpFamily, OpKind, Stage, TensorMeta,
};
use crate::tensor::Tensor;

/// One tunable integer knob. The maximum value is the most accurate
/// variant; a boolean knob is the range [0, 1].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnobSpec {
    pub name: String,
    pub lo: i64,
    pub hi: i64,
    /// Value used when no assignment overrides it.
    pub current: i64,
    /// Whether the auto-tuner may move this knob.
    pub tunable: bool,
}

impl KnobSpec {
    pub fn new(name: &str, lo: i64, hi: i64) -> KnobSpec {
        KnobSpec { name: name.to_string(), lo, hi, current: hi, tunable: true }
    }

    pub fn is_boolean(&self) -> bool {
        self.lo == 0 && self.hi == 1
    }
}

/// Knob values in effect for one expansion.
pub type KnobValues = BTreeMap<String, i64>;

/// Per-site knob overrides: site id -> knob name -> value.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KnobAssignment {
    pub values: BTreeMap<String, BTreeMap<String, i64>>,
}

impl KnobAssignment {
    pub fn get(&self, site: &str, knob: &str) -> Option<i64> {
        self.values.get(site).and_then(|m| m.get(knob)).copied()
    }

    pub fn set(&mut self, site: &str, knob: &str, value: i64) {
        self.values.entry(site.to_string()).or_default().insert(knob.to_string(), value);
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("assignment serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<KnobAssignment> {
        serde_json::from_str(text).map_err(|e| Error::parse(&e))
    }
}

pub type NodePred = Arc<dyn Fn(&Graph, &Node) -> bool + Send + Sync>;
pub type BuildFn = Arc<dyn Fn(&mut Expander<'_>, &Node, &KnobValues) -> Result<NodeId> + Send + Sync>;

/// A rewrite pass: pattern, optional filter, knobbed replacement.
#[derive(Clone)]
pub struct PassDescriptor {
    pub name: String,
    pub pattern: NodePred,
    pub filter: Option<NodePred>,
    pub knobs: Vec<KnobSpec>,
    pub build: BuildFn,
}

impl std::fmt::Debug for PassDescriptor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PassDescriptor")
            .field("name", &self.name)
            .field("knobs", &self.knobs)
            .finish()
    }
}

impl PassDescriptor {
    fn matches(&self, g: &Graph, n: &Node) -> bool {
        (self.pattern)(g, n) && self.filter.as_ref().is_none_or(|f| f(g, n))
    }

    /// Resolve knob values for a site from the assignment, falling back to
    /// the pass defaults.
    pub fn knob_values(&self, site: &str, asg: &KnobAssignment) -> Result<KnobValues> {
        let mut out = KnobValues::new();
        for spec in &self.knobs {
            let v = asg.get(site, &spec.name).unwrap_or(spec.current);
            if v < spec.lo || v > spec.hi {
                return Err(Error::KnobOutOfRange {
                    site: site.to_string(),
                    knob: spec.name.clone(),
                    value: v,
                    lo: spec.lo,
                    hi: spec.hi,
                });
            }
            out.insert(spec.name.clone(), v);
        }
        Ok(out)
    }
}

/// Subgraph construction context handed to a pass's replacement builder.
/// Fresh nodes get hierarchical site ids `"<parent>.<k>"`; the replacement's
/// output node inherits the matched node's site id verbatim.
pub struct Expander<'g> {
    graph: &'g mut Graph,
    parent_site: String,
    next_id: u32,
    child_ordinal: usize,
    created: Vec<NodeId>,
}

impl Expander<'_> {
    pub fn push(&mut self, op: OpKind, inputs: &[NodeId]) -> Result<NodeId> {
        let metas: Vec<&TensorMeta> = inputs
            .iter()
            .map(|i| self.graph.get(*i).map(|n| &n.meta))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::InvalidGraph("expander input references unknown node".into()))?;
        let meta = match op {
            OpKind::Const { ref data } => {
                TensorMeta::new(vec![data.len()], crate::graph::DType::F64)
            }
            ref op => infer_meta(op, &metas).map_err(Error::InvalidGraph)?,
        };
        let id = NodeId(self.next_id);
        self.next_id += 1;
        let site = format!("{}.{}", self.parent_site, self.child_ordinal);
        self.child_ordinal += 1;
        self.graph.nodes.insert(
            id,
            Node { id, op, inputs: inputs.to_vec(), meta, owner: None, back_type: None, site_id: Some(site) },
        );
        self.created.push(id);
        Ok(id)
    }

    pub fn float_const(&mut self, v: f64) -> NodeId {
        let id = self.push(OpKind::Const { data: vec![v] }, &[]).expect("const");
        self.graph.nodes.get_mut(&id).unwrap().meta = TensorMeta::new(vec![1], crate::graph::DType::F64);
        id
    }

    pub fn int_const(&mut self, v: i64) -> NodeId {
        let id = self.push(OpKind::Const { data: vec![v as f64] }, &[]).expect("const");
        self.graph.nodes.get_mut(&id).unwrap().meta = TensorMeta::new(vec![1], crate::graph::DType::I64);
        id
    }

    pub fn tensor_const(&mut self, t: Tensor) -> NodeId {
        let meta = TensorMeta::new(t.shape, crate::graph::DType::F64);
        let id = self.push(OpKind::Const { data: t.data }, &[]).expect("const");
        self.graph.nodes.get_mut(&id).unwrap().meta = meta;
        id
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(OpKind::Add, &[a, b]).expect("add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(OpKind::Sub, &[a, b]).expect("sub")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(OpKind::Mul, &[a, b]).expect("mul")
    }

    pub fn ltz(&mut self, a: NodeId) -> NodeId {
        self.push(OpKind::Ltz, &[a]).expect("ltz")
    }

    pub fn meta_of(&self, id: NodeId) -> &TensorMeta {
        &self.graph.node(id).meta
    }
}

/// One applied rewrite, for the tuner's site discovery.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchEvent {
    pub site: String,
    pub pass: String,
    pub knobs: KnobValues,
}

/// Decomposition weight of an operator: every rewrite must strictly
/// decrease the graph's total weight, which bounds the fixpoint iteration.
fn op_rank(op: &OpKind) -> u64 {
    match op {
        OpKind::Softmax { .. } | OpKind::LayerNorm { .. } => 4,
        OpKind::Reciprocal | OpKind::Rsqrt => 2,
        OpKind::Gelu | OpKind::Silu | OpKind::Sigmoid => 2,
        _ if op.family() == OpFamily::Composite => 1,
        _ => 0,
    }
}

fn total_rank(g: &Graph) -> u64 {
    g.nodes.values().map(|n| op_rank(&n.op)).sum()
}

/// Remove nodes unreachable from the outputs (declared inputs are kept).
fn garbage_collect(g: &mut Graph) {
    let mut keep: std::collections::BTreeSet<NodeId> = g.inputs.iter().map(|(_, id)| *id).collect();
    let mut stack: Vec<NodeId> = g.outputs.clone();
    while let Some(id) = stack.pop() {
        if keep.insert(id) {
            stack.extend(g.nodes[&id].inputs.iter().copied());
        }
    }
    g.nodes.retain(|id, _| keep.contains(id));
}

/// Apply the pass list to a fixpoint: scan passes in order, nodes in
/// topological order, rewrite the first match, repeat until nothing
/// matches. Owner metadata is recomputed for new nodes after every splice
/// and node ids are renumbered to keep the id-order invariant.
///
/// The returned graph contains only post-approximation operators; a
/// leftover unsupported operator with no matching pass is an error.
pub fn rewrite_fixpoint(
    graph: &Graph,
    passes: &[PassDescriptor],
    knobs: &KnobAssignment,
) -> Result<(Graph, Vec<MatchEvent>)> {
    let mut g = graph.clone();
    let mut events = Vec::new();
    let mut iters = 0usize;

    loop {
        iters += 1;
        if iters > g.nodes.len() * passes.len().max(1) + 1 {
            return Err(Error::NonTermination(format!(
                "rewrite iteration count exceeded {} (nodes x passes)",
                g.nodes.len() * passes.len().max(1)
            )));
        }

        let mut matched: Option<(usize, NodeId)> = None;
        'scan: for (pi, pass) in passes.iter().enumerate() {
            for id in topo_order(&g)? {
                if pass.matches(&g, &g.nodes[&id]) {
                    matched = Some((pi, id));
                    break 'scan;
                }
            }
        }
        let Some((pi, id)) = matched else { break };
        let pass = &passes[pi];
        let node = g.nodes[&id].clone();
        let site = node.site();
        let values = pass.knob_values(&site, knobs)?;
        let rank_before = total_rank(&g);

        let mut ex = Expander {
            next_id: g.max_id(),
            graph: &mut g,
            parent_site: site.clone(),
            child_ordinal: 0,
            created: Vec::new(),
        };
        let out = (pass.build)(&mut ex, &node, &values)?;
        let created = std::mem::take(&mut ex.created);

        let out_meta = g.nodes[&out].meta.clone();
        if out_meta.shape != node.meta.shape {
            return Err(Error::InvalidGraph(format!(
                "pass {} replaced {} with shape {:?} (expected {:?})",
                pass.name, site, out_meta.shape, node.meta.shape
            )));
        }
        // Splice: redirect consumers and outputs, drop the matched node, and
        // hand its site id to the replacement's output node.
        for n in g.nodes.values_mut() {
            for inp in &mut n.inputs {
                if *inp == id {
                    *inp = out;
                }
            }
        }
        for o in &mut g.outputs {
            if *o == id {
                *o = out;
            }
        }
        g.nodes.remove(&id);
        if created.contains(&out) {
            g.nodes.get_mut(&out).unwrap().site_id = Some(site.clone());
        }
        garbage_collect(&mut g);
        repropagate(&mut g)?;
        g = g.renumbered()?;

        let rank_after = total_rank(&g);
        if rank_after >= rank_before {
            return Err(Error::NonTermination(format!(
                "pass {} did not reduce decomposition weight at {site}",
                pass.name
            )));
        }
        events.push(MatchEvent { site, pass: pass.name.clone(), knobs: values });
    }

    if let Some(bad) = check_stage(&g, Stage::PostApprox).first() {
        let node = bad.node.expect("stage violations name nodes");
        return Err(Error::NoApproximation {
            op: g.nodes[&node].op.tag().to_string(),
            site: g.nodes[&node].site(),
        });
    }
    Ok((g, events))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knob_values_respect_ranges() {
        let pass = super::passes::pass_by_name("ExpPass").unwrap();
        let mut asg = KnobAssignment::default();
        asg.set("exp/1", "t", 3);
        let values = pass.knob_values("exp/1", &asg).unwrap();
        assert_eq!(values["t"], 3);
        assert_eq!(values["clamp"], 1, "unset knobs use the pass default");

        asg.set("exp/1", "t", 99);
        let err = pass.knob_values("exp/1", &asg).unwrap_err();
        assert!(matches!(err, Error::KnobOutOfRange { value: 99, .. }), "{err}");
    }

    #[test]
    fn assignment_json_round_trip() {
        let mut asg = KnobAssignment::default();
        asg.set("softmax/3.2", "t", 5);
        asg.set("softmax/3.2", "clamp", 0);
        let back = KnobAssignment::from_json(&asg.to_json()).unwrap();
        assert_eq!(asg, back);
    }
}
