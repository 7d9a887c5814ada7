//! Tensor-operator graph intermediate representation.
//!
//! The same graph type flows through every stage. Stage boundaries are
//! expressed as predicates over the set of operator kinds present
//! (see [`validate::check_stage`]).

mod build;
mod validate;

pub use build::GraphBuilder;
pub use validate::{check_stage, infer_meta, topo_order, validate, Stage, Violation};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::BackType;
use crate::fixedpoint::Scale;
use crate::frontend::OwnerSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "%{}", self.0)
    }
}

/// Element type of a tensor. Serialized compactly as "f64", "i32", "bool", ...
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    Int(u8),
    Float(u8),
    Bool,
}

impl DType {
    pub const I64: DType = DType::Int(64);
    pub const F64: DType = DType::Float(64);

    pub fn is_float(self) -> bool {
        matches!(self, DType::Float(_))
    }

    pub fn valid(self) -> bool {
        match self {
            DType::Int(w) => matches!(w, 8 | 16 | 32 | 64),
            DType::Float(w) => matches!(w, 32 | 64),
            DType::Bool => true,
        }
    }

    fn as_str(self) -> String {
        match self {
            DType::Int(w) => format!("i{w}"),
            DType::Float(w) => format!("f{w}"),
            DType::Bool => "bool".into(),
        }
    }

    fn parse(s: &str) -> Option<DType> {
        if s == "bool" {
            return Some(DType::Bool);
        }
        let (head, width) = s.split_at(1);
        let w: u8 = width.parse().ok()?;
        let d = match head {
            "i" => DType::Int(w),
            "f" => DType::Float(w),
            _ => return None,
        };
        d.valid().then_some(d)
    }
}

impl Serialize for DType {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.as_str())
    }
}

impl<'de> Deserialize<'de> for DType {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        DType::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown dtype \"{s}\"")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub shape: Vec<usize>,
    pub dtype: DType,
}

impl TensorMeta {
    pub fn new(shape: Vec<usize>, dtype: DType) -> TensorMeta {
        TensorMeta { shape, dtype }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Operator kinds, with op-specific attributes carried as variant fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OpKind {
    Input,
    Const { data: Vec<f64> },

    // Add-like: communication-free on secret shares.
    Add,
    Sub,
    Sum { axis: Option<usize> },
    Mean { axis: Option<usize> },
    AvgPool { kh: usize, kw: usize },

    // Mul-like.
    Mul,
    MatMul,
    Conv2d,

    Ltz,

    // Composite / unsupported operators, decomposed or approximated before
    // lowering.
    Linear,
    Exp,
    Gelu,
    Silu,
    Sigmoid,
    Softmax { axis: usize },
    LayerNorm { axis: usize, eps: f64 },
    Relu,
    Reciprocal,
    Rsqrt,
    Ge,
    Gt,
    Le,
    Lt,

    // Max family: kept intact and lowered to the dedicated tree-reduction
    // kernel.
    Max { axis: Option<usize> },
    MaxPool { kh: usize, kw: usize },

    // Shape-only operators run directly on shares.
    Reshape { shape: Vec<usize> },
    Transpose,
    Permute { perm: Vec<usize> },
    Flatten,
    Stack,

    // Value-free operators: output depends only on shape/type.
    ZerosLike,
    FullLike { value: f64 },

    // Fixed-point preview operators (post-lowering graphs only).
    Trunc { by: Scale },
    Encode { to: Scale, from: Scale },

    // MPC-specific kinds (post-lowering graphs only).
    MulMpc,
    LtzMpc,

    Reveal,
}

/// Coarse operator families used by stage predicates and lowering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpFamily {
    Input,
    Const,
    AddLike,
    MulLike,
    Ltz,
    Composite,
    MaxLike,
    ShapeOnly,
    ValueFree,
    FixedPoint,
    Mpc,
    Reveal,
}

impl OpKind {
    pub fn family(&self) -> OpFamily {
        use OpKind::*;
        match self {
            Input => OpFamily::Input,
            Const { .. } => OpFamily::Const,
            Add | Sub | Sum { .. } | Mean { .. } | AvgPool { .. } => OpFamily::AddLike,
            Mul | MatMul | Conv2d => OpFamily::MulLike,
            Ltz => OpFamily::Ltz,
            Linear | Exp | Gelu | Silu | Sigmoid | Softmax { .. } | LayerNorm { .. } | Relu
            | Reciprocal | Rsqrt | Ge | Gt | Le | Lt => OpFamily::Composite,
            Max { .. } | MaxPool { .. } => OpFamily::MaxLike,
            Reshape { .. } | Transpose | Permute { .. } | Flatten | Stack => OpFamily::ShapeOnly,
            ZerosLike | FullLike { .. } => OpFamily::ValueFree,
            Trunc { .. } | Encode { .. } => OpFamily::FixedPoint,
            MulMpc | LtzMpc => OpFamily::Mpc,
            Reveal => OpFamily::Reveal,
        }
    }

    /// Short label used in site ids and error messages.
    pub fn tag(&self) -> &'static str {
        use OpKind::*;
        match self {
            Input => "input",
            Const { .. } => "const",
            Add => "add",
            Sub => "sub",
            Sum { .. } => "sum",
            Mean { .. } => "mean",
            AvgPool { .. } => "avg_pool",
            Mul => "mul",
            MatMul => "matmul",
            Conv2d => "conv2d",
            Ltz => "ltz",
            Linear => "linear",
            Exp => "exp",
            Gelu => "gelu",
            Silu => "silu",
            Sigmoid => "sigmoid",
            Softmax { .. } => "softmax",
            LayerNorm { .. } => "layer_norm",
            Relu => "relu",
            Reciprocal => "reciprocal",
            Rsqrt => "rsqrt",
            Ge => "ge",
            Gt => "gt",
            Le => "le",
            Lt => "lt",
            Max { .. } => "max",
            MaxPool { .. } => "max_pool",
            Reshape { .. } => "reshape",
            Transpose => "transpose",
            Permute { .. } => "permute",
            Flatten => "flatten",
            Stack => "stack",
            ZerosLike => "zeros_like",
            FullLike { .. } => "full_like",
            Trunc { .. } => "trunc",
            Encode { .. } => "encode",
            MulMpc => "mul_mpc",
            LtzMpc => "ltz_mpc",
            Reveal => "reveal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub op: OpKind,
    pub inputs: Vec<NodeId>,
    pub meta: TensorMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<OwnerSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub back_type: Option<BackType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site_id: Option<String>,
}

impl Node {
    pub fn site(&self) -> String {
        self.site_id.clone().unwrap_or_else(|| format!("{}/{}", self.op.tag(), self.id.0))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Graph {
    pub nodes: BTreeMap<NodeId, Node>,
    /// Named graph inputs, in declaration order.
    pub inputs: Vec<(String, NodeId)>,
    /// Graph outputs, in declaration order.
    pub outputs: Vec<NodeId>,
}

/// On-disk form: nodes as an explicit list ordered by id.
#[derive(Serialize, Deserialize)]
struct GraphRepr {
    nodes: Vec<Node>,
    inputs: Vec<(String, NodeId)>,
    outputs: Vec<NodeId>,
}

impl Serialize for Graph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GraphRepr {
            nodes: self.nodes.values().cloned().collect(),
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Graph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = GraphRepr::deserialize(d)?;
        let mut nodes = BTreeMap::new();
        for node in repr.nodes {
            if nodes.insert(node.id, node).is_some() {
                return Err(serde::de::Error::custom("duplicate node id"));
            }
        }
        Ok(Graph { nodes, inputs: repr.inputs, outputs: repr.outputs })
    }
}

impl Graph {
    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[&id]
    }

    pub fn get(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn input_id(&self, name: &str) -> Option<NodeId> {
        self.inputs.iter().find(|(n, _)| n == name).map(|(_, id)| *id)
    }

    pub fn max_id(&self) -> u32 {
        self.nodes.keys().map(|n| n.0).max().map_or(0, |m| m + 1)
    }

    /// Users of each node, in ascending node order.
    pub fn consumers(&self) -> BTreeMap<NodeId, Vec<NodeId>> {
        let mut map: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for node in self.nodes.values() {
            for &inp in &node.inputs {
                map.entry(inp).or_default().push(node.id);
            }
        }
        map
    }

    /// JSON text form. Round-trips through [`Graph::from_json`] to a
    /// structurally equal graph.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("graph serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> crate::Result<Graph> {
        let g: Graph = serde_json::from_str(text).map_err(|e| crate::Error::parse(&e))?;
        for (name, id) in &g.inputs {
            if !g.nodes.contains_key(id) {
                return Err(crate::Error::InvalidGraph(format!("input \"{name}\" references missing node {id}")));
            }
        }
        for id in &g.outputs {
            if !g.nodes.contains_key(id) {
                return Err(crate::Error::InvalidGraph(format!("missing \"outputs\" node {id}")));
            }
        }
        Ok(g)
    }

    /// Renumber nodes to consecutive ids in topological order, preserving
    /// site ids and all metadata. Used after rewrites so that the
    /// "inputs reference earlier ids" invariant keeps holding.
    pub fn renumbered(&self) -> crate::Result<Graph> {
        let order = topo_order(self)?;
        let remap: BTreeMap<NodeId, NodeId> =
            order.iter().enumerate().map(|(i, &id)| (id, NodeId(i as u32))).collect();
        let mut nodes = BTreeMap::new();
        for (&old, &new) in &remap {
            let mut node = self.nodes[&old].clone();
            node.id = new;
            node.inputs = node.inputs.iter().map(|i| remap[i]).collect();
            nodes.insert(new, node);
        }
        Ok(Graph {
            nodes,
            inputs: self.inputs.iter().map(|(n, id)| (n.clone(), remap[id])).collect(),
            outputs: self.outputs.iter().map(|id| remap[id]).collect(),
        })
    }
}
