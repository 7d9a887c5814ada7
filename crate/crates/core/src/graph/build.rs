//! Incremental graph construction with shape inference.

use super::{infer_meta, DType, Graph, Node, NodeId, OpKind, TensorMeta};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Default)]
pub struct GraphBuilder {
    graph: Graph,
    next: u32,
}

impl GraphBuilder {
    pub fn new() -> GraphBuilder {
        GraphBuilder::default()
    }

    fn fresh(&mut self) -> NodeId {
        let id = NodeId(self.next);
        self.next += 1;
        id
    }

    fn push(&mut self, op: OpKind, inputs: Vec<NodeId>, meta: TensorMeta) -> NodeId {
        let id = self.fresh();
        self.graph.nodes.insert(
            id,
            Node { id, op, inputs, meta, owner: None, back_type: None, site_id: None },
        );
        id
    }

    pub fn input(&mut self, name: &str, shape: Vec<usize>, dtype: DType) -> NodeId {
        let id = self.push(OpKind::Input, vec![], TensorMeta::new(shape, dtype));
        self.graph.inputs.push((name.to_string(), id));
        id
    }

    pub fn constant(&mut self, t: Tensor, dtype: DType) -> NodeId {
        let meta = TensorMeta::new(t.shape, dtype);
        self.push(OpKind::Const { data: t.data }, vec![], meta)
    }

    pub fn float_const(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v), DType::F64)
    }

    pub fn int_const(&mut self, v: i64) -> NodeId {
        self.constant(Tensor::scalar(v as f64), DType::I64)
    }

    pub fn op(&mut self, op: OpKind, inputs: &[NodeId]) -> Result<NodeId> {
        let metas: Vec<&TensorMeta> = inputs
            .iter()
            .map(|id| self.graph.get(*id).map(|n| &n.meta))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::InvalidGraph("builder op references unknown node".into()))?;
        let meta = infer_meta(&op, &metas).map_err(Error::InvalidGraph)?;
        Ok(self.push(op, inputs.to_vec(), meta))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.op(OpKind::Add, &[a, b]).expect("add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.op(OpKind::Sub, &[a, b]).expect("sub")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.op(OpKind::Mul, &[a, b]).expect("mul")
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.op(OpKind::MatMul, &[a, b])
    }

    pub fn ltz(&mut self, a: NodeId) -> NodeId {
        self.op(OpKind::Ltz, &[a]).expect("ltz")
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.op(OpKind::Relu, &[a]).expect("relu")
    }

    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        self.op(OpKind::Softmax { axis }, &[a])
    }

    pub fn reveal(&mut self, a: NodeId) -> NodeId {
        let id = self.op(OpKind::Reveal, &[a]).expect("reveal");
        self.graph.outputs.push(id);
        id
    }

    pub fn mark_output(&mut self, a: NodeId) {
        self.graph.outputs.push(a);
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn finish(self) -> Result<Graph> {
        let violations = super::validate(&self.graph);
        if violations.is_empty() {
            Ok(self.graph)
        } else {
            Err(Error::InvalidGraph(
                violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "),
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{check_stage, topo_order, validate, Stage};

    fn relu_chain() -> Graph {
        let mut b = GraphBuilder::new();
        let x = b.input("x", vec![2], DType::F64);
        let r = b.relu(x);
        b.reveal(r);
        b.finish().unwrap()
    }

    #[test]
    fn minimal_graph_validates() {
        let g = relu_chain();
        assert!(validate(&g).is_empty());
        assert!(check_stage(&g, Stage::PreApprox).is_empty());
    }

    #[test]
    fn dangling_reference_reported() {
        let mut g = relu_chain();
        g.nodes.get_mut(&NodeId(2)).unwrap().inputs = vec![NodeId(9)];
        let errs = validate(&g);
        assert!(errs.iter().any(|e| e.msg.contains("dangling reference at node 2")), "{errs:?}");
    }

    #[test]
    fn matmul_shape_mismatch_reported() {
        let mut b = GraphBuilder::new();
        let a = b.input("a", vec![2, 3], DType::F64);
        let c = b.input("c", vec![4, 5], DType::F64);
        let err = b.matmul(a, c).unwrap_err();
        assert!(err.to_string().contains("inner dims 3≠4"), "{err}");
    }

    #[test]
    fn topo_linear_and_diamond() {
        let g = relu_chain();
        assert_eq!(topo_order(&g).unwrap(), vec![NodeId(0), NodeId(1), NodeId(2)]);

        // Diamond a -> {b, c} -> d with id tie-break.
        let mut b = GraphBuilder::new();
        let a = b.input("a", vec![2], DType::F64);
        let l = b.relu(a);
        let r = b.relu(a);
        let d = b.add(l, r);
        b.mark_output(d);
        let g = b.finish().unwrap();
        assert_eq!(topo_order(&g).unwrap(), vec![NodeId(0), NodeId(1), NodeId(2), NodeId(3)]);
    }

    #[test]
    fn self_loop_is_cycle() {
        let mut g = relu_chain();
        g.nodes.get_mut(&NodeId(1)).unwrap().inputs = vec![NodeId(1)];
        assert!(matches!(topo_order(&g), Err(Error::Cycle(_))));
    }

    #[test]
    fn json_round_trip() {
        let g = relu_chain();
        let text = g.to_json();
        let back = Graph::from_json(&text).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn json_missing_outputs_is_parse_error() {
        let text = r#"{"nodes": [], "inputs": []}"#;
        let err = Graph::from_json(text).unwrap_err();
        assert!(err.to_string().contains("outputs"), "{err}");
    }
}
