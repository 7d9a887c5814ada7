//! Property-style invariants over the graph IR and the frontend.

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use mpcc_core::frontend::{propagate_ownership, Annotation, OwnerSet};
use mpcc_core::graph::{topo_order, validate, DType, Graph, GraphBuilder, NodeId, OpKind};
use mpcc_core::interp::interpret;
use mpcc_core::tensor::Tensor;

/// Direct recursive evaluation, independent of the interpreter's topological
/// traversal. Exponential on shared subgraphs, fine at ten nodes.
fn eval_recursive(g: &Graph, id: NodeId, inputs: &BTreeMap<String, Tensor>) -> Tensor {
    let node = g.node(id);
    let arg = |i: usize| eval_recursive(g, node.inputs[i], inputs);
    match &node.op {
        OpKind::Input => {
            let name = g.inputs.iter().find(|(_, nid)| *nid == id).map(|(n, _)| n).unwrap();
            inputs[name].clone()
        }
        OpKind::Const { data } => Tensor::new(node.meta.shape.clone(), data.clone()),
        OpKind::Add => arg(0).zip(&arg(1), |a, b| a + b).unwrap(),
        OpKind::Sub => arg(0).zip(&arg(1), |a, b| a - b).unwrap(),
        OpKind::Mul => arg(0).zip(&arg(1), |a, b| a * b).unwrap(),
        OpKind::MatMul => arg(0).matmul(&arg(1)).unwrap(),
        OpKind::Ltz => arg(0).map(|v| f64::from(v < 0.0)),
        OpKind::Sum { axis: Some(a) } => arg(0).reduce_axis_keep(*a, 0.0, |p, q| p + q).unwrap(),
        OpKind::Max { axis: Some(a) } => {
            arg(0).reduce_axis_keep(*a, f64::NEG_INFINITY, f64::max).unwrap()
        }
        OpKind::Reveal => arg(0),
        other => panic!("oracle does not model {}", other.tag()),
    }
}

/// Random graphs over the supported set, mirroring the spec's 10-node,
/// values-in-[-4,4] setting.
fn random_supported_graph(seed: u64) -> (Graph, BTreeMap<String, Tensor>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut pick = |n: usize| (rng.next_u64() % n as u64) as usize;
    let mut b = GraphBuilder::new();
    let x = b.input("x", vec![2, 2], DType::F64);
    let y = b.input("y", vec![2, 2], DType::F64);
    let mut pool = vec![x, y];
    let total = 4 + pick(5);
    let mut guard = 0;
    while pool.len() < total && guard < 100 {
        guard += 1;
        let a = pool[pick(pool.len())];
        let c = pool[pick(pool.len())];
        let id = match pick(6) {
            0 => b.add(a, c),
            1 => b.sub(a, c),
            2 => b.mul(a, c),
            3 => b.matmul(a, c).unwrap(),
            4 => b.ltz(a),
            _ => b.op(OpKind::Sum { axis: Some(pick(2)) }, &[a]).unwrap(),
        };
        pool.push(id);
    }
    let out = *pool.last().unwrap();
    b.mark_output(out);
    let g = b.finish().unwrap();

    let mut mk = |_: &str| {
        Tensor::new(vec![2, 2], (0..4).map(|_| (pick(129) as f64 - 64.0) / 16.0).collect())
    };
    let mut inputs = BTreeMap::new();
    inputs.insert("x".to_string(), mk("x"));
    inputs.insert("y".to_string(), mk("y"));
    (g, inputs)
}

#[test]
fn interpret_matches_recursive_oracle_on_100_graphs() {
    for seed in 0..100u64 {
        let (g, inputs) = random_supported_graph(seed);
        let got = interpret(&g, &inputs).unwrap();
        let want = eval_recursive(&g, g.outputs[0], &inputs);
        // Identical arithmetic, so bitwise equality is expected.
        assert_eq!(got[0], want, "seed {seed}");
    }
}

#[test]
fn interpret_invariant_under_renumbering() {
    for seed in 0..20u64 {
        let (g, inputs) = random_supported_graph(seed);
        // Renumbering with shifted ids preserves interpretation.
        let mut shifted = g.clone();
        let bump = 100u32;
        let mut nodes = BTreeMap::new();
        for (id, mut node) in shifted.nodes {
            node.id = NodeId(node.id.0 + bump);
            node.inputs = node.inputs.iter().map(|i| NodeId(i.0 + bump)).collect();
            nodes.insert(NodeId(id.0 + bump), node);
        }
        shifted.nodes = nodes;
        shifted.inputs = shifted.inputs.iter().map(|(n, i)| (n.clone(), NodeId(i.0 + bump))).collect();
        shifted.outputs = shifted.outputs.iter().map(|i| NodeId(i.0 + bump)).collect();
        assert!(validate(&shifted).is_empty());
        assert_eq!(interpret(&g, &inputs).unwrap(), interpret(&shifted, &inputs).unwrap());

        let renumbered = shifted.renumbered().unwrap();
        assert!(topo_order(&renumbered).unwrap().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(interpret(&g, &inputs).unwrap(), interpret(&renumbered, &inputs).unwrap());
    }
}

fn owner_strategy() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..2, 0..=2).prop_map(|mut v| {
        v.sort_unstable();
        v.dedup();
        v
    })
}

proptest! {
    #[test]
    fn serde_round_trip_structural_equality(seed in 0u64..500) {
        let (g, _) = random_supported_graph(seed);
        let text = g.to_json();
        let back = Graph::from_json(&text).unwrap();
        prop_assert_eq!(g, back);
    }

    #[test]
    fn ownership_monotone_and_idempotent(xa in owner_strategy(), ya in owner_strategy(), extra in 0u8..2) {
        // A small diamond: out = (x + y) * zeros_like(x).
        let mut b = GraphBuilder::new();
        let x = b.input("x", vec![2], DType::F64);
        let y = b.input("y", vec![2], DType::F64);
        let s = b.add(x, y);
        let z = b.op(OpKind::ZerosLike, &[x]).unwrap();
        let m = b.mul(s, z);
        b.mark_output(m);
        let g = b.finish().unwrap();

        let ann = Annotation::default().secret("x", &xa).secret("y", &ya);
        let ann = if xa.len() == 2 { Annotation::default().mark_public("x").secret("y", &ya) } else { ann };
        let ann = if ya.len() == 2 { ann.clone().mark_public("y") } else { ann };
        let Ok(once) = propagate_ownership(&g, &ann) else { return Ok(()) };
        let twice = propagate_ownership(&once, &ann).unwrap();
        prop_assert_eq!(&once, &twice, "propagation is a fixed point");
        prop_assert!(once.nodes.values().all(|n| n.owner.is_some()));
        prop_assert!(once.nodes[&z].owner.unwrap().is_public(), "value-free output is public");

        // Monotonicity: growing x's owner set never removes a party
        // downstream.
        let mut grown = xa.clone();
        if !grown.contains(&extra) {
            grown.push(extra);
            grown.sort_unstable();
        }
        let ann2 = Annotation::default().secret("x", &grown).secret("y", &ya);
        let ann2 = if grown.len() == 2 { Annotation::default().mark_public("x").secret("y", &ya) } else { ann2 };
        let ann2 = if ya.len() == 2 { ann2.clone().mark_public("y") } else { ann2 };
        if let Ok(bigger) = propagate_ownership(&g, &ann2) {
            for id in g.nodes.keys() {
                let small: OwnerSet = once.nodes[id].owner.unwrap();
                let big: OwnerSet = bigger.nodes[id].owner.unwrap();
                prop_assert_eq!(small.intersect(big), small, "owner sets only grow at {}", id);
            }
        }
    }
}
