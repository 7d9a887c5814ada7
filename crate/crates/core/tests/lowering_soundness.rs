//! Typing-rule structure of lowered programs, and end-to-end agreement of
//! MPC execution with the plaintext interpreter on randomized graphs.

use std::collections::BTreeMap;


use mpcc_core::backend::cost::static_cost;
use mpcc_core::backend::{lower_pair, typecheck_lowered, InstrOp, Label, LowerConfig, PartyProgram};
use mpcc_core::fixedpoint::Scale;
use mpcc_core::frontend::{propagate_ownership, Annotation};
use mpcc_core::graph::{DType, Graph, GraphBuilder};
use mpcc_core::interp::interpret;
use mpcc_core::runtime::{execute, ExecOptions, Seeds};
use mpcc_core::tensor::Tensor;

fn annotate(g: &Graph, ann: &Annotation) -> Graph {
    propagate_ownership(g, ann).unwrap()
}

fn default_cfg() -> LowerConfig {
    LowerConfig::default()
}

#[test]
fn equal_scales_insert_no_rescale() {
    // secret + secret at the same scale: one local add, no encode.
    let mut b = GraphBuilder::new();
    let x = b.input("x", vec![4], DType::F64);
    let y = b.input("y", vec![4], DType::F64);
    let s = b.add(x, y);
    b.reveal(s);
    let g = annotate(
        &b.finish().unwrap(),
        &Annotation::default().secret("x", &[0]).secret("y", &[1]),
    );
    let (p0, _) = lower_pair(&g, &default_cfg()).unwrap();
    assert!(!p0.instrs.iter().any(|i| matches!(i.op, InstrOp::Rescale { .. })));
    assert_eq!(p0.instrs.iter().filter(|i| matches!(i.op, InstrOp::Add { .. })).count(), 1);
}

#[test]
fn ltz_output_mul_truncates_by_one() {
    // secret(2^16) * ltz-output(scale 1): Beaver mul followed by the
    // explicit no-op truncation, result scale 2^16.
    let mut b = GraphBuilder::new();
    let x = b.input("x", vec![4], DType::F64);
    let m = b.ltz(x);
    let p = b.mul(x, m);
    b.reveal(p);
    let g = annotate(&b.finish().unwrap(), &Annotation::default().secret("x", &[0]));
    let (p0, p1) = lower_pair(&g, &default_cfg()).unwrap();
    assert!(typecheck_lowered(&p0, &p1).is_empty());

    let mul_at = p0.instrs.iter().position(|i| matches!(i.op, InstrOp::MulMpc { .. })).unwrap();
    let trunc = &p0.instrs[mul_at + 1];
    match trunc.op {
        InstrOp::Trunc { by, .. } => assert_eq!(by, Scale(0), "trunc by 1 is a no-op"),
        ref other => panic!("expected trunc after mul_mpc, got {other:?}"),
    }
    assert_eq!(trunc.ty.scale, Scale(16));
    let ltz = p0.instrs.iter().find(|i| matches!(i.op, InstrOp::LtzMpc { .. })).unwrap();
    assert_eq!(ltz.ty.scale, Scale(0), "comparison outputs carry scale 1");
}

#[test]
fn pub_float_addend_encodes_at_party_zero_only() {
    // secret(2^16) + 1.5: the float encodes to 1.5 * 65536 = 98304 in party
    // 0's program; party 1 never materializes the addend.
    let mut b = GraphBuilder::new();
    let x = b.input("x", vec![2], DType::F64);
    let c = b.float_const(1.5);
    let s = b.add(x, c);
    b.reveal(s);
    let g = annotate(&b.finish().unwrap(), &Annotation::default().secret("x", &[0]));
    let (p0, p1) = lower_pair(&g, &default_cfg()).unwrap();

    let enc_at = p0
        .instrs
        .iter()
        .position(|i| matches!(i.op, InstrOp::EncodeFloat { .. }) && i.ty.scale == Scale(16))
        .expect("party 0 encodes the addend");
    assert!(matches!(p1.instrs[enc_at].op, InstrOp::Nop), "party 1 slot is a placeholder");
    let add_at = p0
        .instrs
        .iter()
        .position(|i| matches!(i.op, InstrOp::Add { .. }) && i.ty.label == Label::Secret)
        .expect("party 0 folds the addend in");
    assert!(matches!(p1.instrs[add_at].op, InstrOp::Copy { .. }));

    // End to end the 1.5 survives at fixed-point precision.
    let mut inputs = BTreeMap::new();
    inputs.insert("x".to_string(), Tensor::new(vec![2], vec![0.25, -2.0]));
    let out = execute(&p0, &p1, &inputs, Seeds::default(), ExecOptions::default()).unwrap();
    let want = Tensor::new(vec![2], vec![1.75, -0.5]);
    assert!(out.outputs[0].max_abs_diff(&want) <= 1.0 / 65536.0);
}

#[test]
fn small_scale_secret_never_forces_lossy_encoding() {
    // The conversion-error rule: adding 1.5 to a scale-1 secret (an ltz
    // output) must encode the float at max(s, s_d) = 2^16, not at s = 1
    // (which would round 1.5 to 2).
    let mut b = GraphBuilder::new();
    let x = b.input("x", vec![2], DType::F64);
    let m = b.ltz(x);
    let c = b.float_const(1.5);
    let s = b.add(m, c);
    b.reveal(s);
    let g = annotate(&b.finish().unwrap(), &Annotation::default().secret("x", &[0]));
    let (p0, p1) = lower_pair(&g, &default_cfg()).unwrap();

    let enc = p0
        .instrs
        .iter()
        .find(|i| matches!(i.op, InstrOp::EncodeFloat { .. }))
        .expect("float addend is encoded");
    assert_eq!(enc.ty.scale, Scale(16), "encoded at max(s, s_d), never at s=1");

    let mut inputs = BTreeMap::new();
    inputs.insert("x".to_string(), Tensor::new(vec![2], vec![-3.0, 4.0]));
    let out = execute(&p0, &p1, &inputs, Seeds::default(), ExecOptions::default()).unwrap();
    // ltz gives [1, 0]; plus 1.5 -> [2.5, 1.5], with 1.5 intact.
    let want = Tensor::new(vec![2], vec![2.5, 1.5]);
    assert!(out.outputs[0].max_abs_diff(&want) <= 1.0 / 65536.0, "{:?}", out.outputs[0]);
}

#[test]
fn typecheck_catches_hand_built_violations() {
    let mut b = GraphBuilder::new();
    let x = b.input("x", vec![2], DType::F64);
    let y = b.input("y", vec![2], DType::F64);
    let s = b.mul(x, y);
    b.reveal(s);
    let g = annotate(
        &b.finish().unwrap(),
        &Annotation::default().secret("x", &[0]).secret("y", &[1]),
    );
    let (p0, p1) = lower_pair(&g, &default_cfg()).unwrap();
    assert!(typecheck_lowered(&p0, &p1).is_empty(), "lowered programs typecheck");

    // Mismatched add scales.
    let mut bad0 = p0.clone();
    let mul_at = bad0.instrs.iter().position(|i| matches!(i.op, InstrOp::MulMpc { .. })).unwrap();
    let (a, b_slot) = match bad0.instrs[mul_at].op {
        InstrOp::MulMpc { a, b, .. } => (a, b),
        _ => unreachable!(),
    };
    bad0.instrs[mul_at].op = InstrOp::Add { a, b: b_slot };
    let mut bad0_scaled = bad0.clone();
    bad0_scaled.instrs[a].ty.scale = Scale(4);
    let violations = typecheck_lowered(&bad0_scaled, &p1);
    assert!(violations.iter().any(|v| v.msg.contains("scale mismatch")), "{violations:?}");

    // A local mul on two secret operands.
    let mut plain0 = p0.clone();
    plain0.instrs[mul_at].op = InstrOp::MulLocal { a, b: b_slot, kind: mpcc_core::backend::MulKind::Elem };
    let violations = typecheck_lowered(&plain0, &p1);
    assert!(violations.iter().any(|v| v.msg.contains("plain mul on two secrets")), "{violations:?}");
}

#[test]
fn party_one_never_folds_public_addends() {
    // Structural asymmetry over a graph with several mixed additions.
    let mut b = GraphBuilder::new();
    let x = b.input("x", vec![3], DType::F64);
    let c1 = b.float_const(1.5);
    let c2 = b.int_const(2);
    let a1 = b.add(x, c1);
    let a2 = b.sub(c2, a1);
    let a3 = b.add(a2, c2);
    b.reveal(a3);
    let g = annotate(&b.finish().unwrap(), &Annotation::default().secret("x", &[0]));
    let (p0, p1) = lower_pair(&g, &default_cfg()).unwrap();
    assert!(typecheck_lowered(&p0, &p1).is_empty());

    let mixed_adds = |p: &PartyProgram| {
        p.instrs
            .iter()
            .filter(|i| {
                if i.ty.label != Label::Secret {
                    return false;
                }
                match i.op {
                    InstrOp::Add { a, b } | InstrOp::Sub { a, b } => {
                        (p.instrs[a].ty.label == Label::Pub) != (p.instrs[b].ty.label == Label::Pub)
                    }
                    _ => false,
                }
            })
            .count()
    };
    assert_eq!(mixed_adds(&p0), 3, "party 0 folds each public addend");
    assert_eq!(mixed_adds(&p1), 0, "party 1 folds none");
}

#[test]
fn single_mul_graph_breakdown_is_all_mul() {
    let mut b = GraphBuilder::new();
    let x = b.input("x", vec![100], DType::F64);
    let y = b.input("y", vec![100], DType::F64);
    let p = b.mul(x, y);
    b.reveal(p);
    let g = annotate(
        &b.finish().unwrap(),
        &Annotation::default().secret("x", &[0]).secret("y", &[1]),
    );
    let (p0, p1) = lower_pair(&g, &default_cfg()).unwrap();
    let cost = static_cost(&p0, &p1);
    use mpcc_core::backend::cost::Category;
    // All operator communication is the one Beaver multiplication; the rest
    // is input sharing and reveal.
    assert_eq!(cost.by_category[&Category::Mul].bytes, 2 * 1600);
    assert_eq!(cost.by_category[&Category::Linear].bytes, 0);
    assert_eq!(cost.by_category[&Category::Comparison].bytes, 0);
    assert_eq!(cost.by_category[&Category::Max].bytes, 0);
    assert_eq!(
        cost.total_bytes() - cost.by_category[&Category::Other].bytes,
        cost.by_category[&Category::Mul].bytes,
        "mul is 100% of the operator categories"
    );
}

#[test]
fn zero_mpc_op_graph_costs_only_sharing_and_reveal() {
    let mut b = GraphBuilder::new();
    let x = b.input("x", vec![5], DType::F64);
    let c = b.float_const(2.0);
    let s = b.add(x, c);
    b.reveal(s);
    let g = annotate(&b.finish().unwrap(), &Annotation::default().secret("x", &[0]));
    let (p0, p1) = lower_pair(&g, &default_cfg()).unwrap();
    let cost = static_cost(&p0, &p1);
    // Party 0 sends its input share; party 1 sends its share at reveal.
    assert_eq!(cost.bytes, [40, 40]);
    assert_eq!(cost.rounds, 2);
    assert_eq!(cost.triples.arithmetic + cost.triples.boolean + cost.triples.dabits, 0);
}

// ---------------------------------------------------------------------------
// Randomized lowering soundness (generator shared with the acceptance
// suite in mpcc_core::fixtures).
// ---------------------------------------------------------------------------

#[test]
fn random_graphs_mpc_matches_plaintext() {
    let mut accepted: u64 = 0;
    let mut seed = 0xC0FFEEu64;
    while accepted < 50 {
        seed += 1;
        assert!(seed < 0xC0FFEE + 2000, "generator failed to produce 50 graphs");
        let Some(case) = mpcc_core::fixtures::random_post_approx_graph(seed) else { continue };
        let annotated = annotate(&case.graph, &case.annotation);
        let (p0, p1) = lower_pair(&annotated, &default_cfg()).unwrap();
        assert!(typecheck_lowered(&p0, &p1).is_empty(), "graph {accepted} typechecks");

        let seeds = Seeds { dealer: 1000 + accepted, sharing: [2000 + accepted, 3000 + accepted] };
        let out = execute(&p0, &p1, &case.inputs, seeds, ExecOptions::default()).unwrap();
        let plain = interpret(&annotated, &case.inputs).unwrap();
        let dev = out.outputs[0].max_abs_diff(&plain[0]);
        assert!(
            dev <= 1.0 / 256.0,
            "graph {accepted}: MPC deviates from plaintext by {dev}\n{}",
            annotated.to_json()
        );
        assert_eq!(out.cost, static_cost(&p0, &p1), "graph {accepted}: counters match model");
        accepted += 1;
    }
}
