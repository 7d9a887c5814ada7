//! Post-hoc structural checks over a lowered program pair.

use super::{Instr, InstrOp, Label, PartyProgram, Slot};
use crate::fixedpoint::Scale;
use crate::graph::Violation;

fn v(index: Option<usize>, msg: impl Into<String>) -> Violation {
    Violation { node: index.map(|i| crate::graph::NodeId(i as u32)), msg: msg.into() }
}

fn secret(instrs: &[Instr], slot: Slot) -> bool {
    instrs[slot].ty.label == Label::Secret
}

fn scale(instrs: &[Instr], slot: Slot) -> Scale {
    instrs[slot].ty.scale
}

/// Check the scale and protocol discipline of a program pair:
/// matching communication points, Beaver multiplications followed by
/// truncation with the smaller scale, aligned addition scales, scale-1
/// comparison outputs, and public addends folded in at party 0 only.
pub fn typecheck_lowered(p0: &PartyProgram, p1: &PartyProgram) -> Vec<Violation> {
    let mut out = Vec::new();
    if p0.instrs.len() != p1.instrs.len() {
        out.push(v(None, format!("program lengths differ: {} vs {}", p0.instrs.len(), p1.instrs.len())));
        return out;
    }

    for (i, (i0, i1)) in p0.instrs.iter().zip(&p1.instrs).enumerate() {
        if i0.op.is_comm() || i1.op.is_comm() {
            let aligned = match (&i0.op, &i1.op) {
                (InstrOp::InputShare { name: n0, owner: o0 }, InstrOp::InputShare { name: n1, owner: o1 }) => {
                    n0 == n1 && o0 == o1
                }
                (InstrOp::MulMpc { kind: k0, .. }, InstrOp::MulMpc { kind: k1, .. }) => k0 == k1,
                (InstrOp::LtzMpc { window: w0, .. }, InstrOp::LtzMpc { window: w1, .. }) => w0 == w1,
                (
                    InstrOp::MaxKernel { dims: d0, window: w0, .. },
                    InstrOp::MaxKernel { dims: d1, window: w1, .. },
                ) => d0 == d1 && w0 == w1,
                (InstrOp::Reveal { to: t0, .. }, InstrOp::Reveal { to: t1, .. }) => t0 == t1,
                _ => false,
            };
            if !aligned || i0.shape != i1.shape {
                out.push(v(Some(i), format!("communication point misaligned: {:?} vs {:?}", i0.op, i1.op)));
                continue;
            }
        }
        if i0.ty != i1.ty {
            out.push(v(Some(i), "instruction types differ between parties"));
        }
    }

    for (party, prog) in [(0u8, p0), (1u8, p1)] {
        let instrs = &prog.instrs;
        for (i, instr) in instrs.iter().enumerate() {
            match &instr.op {
                InstrOp::MulMpc { a, b, .. } => {
                    if !secret(instrs, *a) || !secret(instrs, *b) {
                        out.push(v(Some(i), format!("party {party}: mul_mpc on non-secret operands")));
                    }
                    let followed = instrs.get(i + 1).is_some_and(|next| {
                        matches!(next.op, InstrOp::Trunc { src, by }
                            if src == i && by == scale(instrs, *a).min(scale(instrs, *b)))
                    });
                    if !followed {
                        out.push(v(
                            Some(i),
                            format!("party {party}: mul_mpc not followed by trunc with the smaller scale"),
                        ));
                    }
                }
                InstrOp::MulLocal { a, b, .. } => {
                    if secret(instrs, *a) && secret(instrs, *b) {
                        out.push(v(Some(i), format!("party {party}: plain mul on two secrets")));
                    }
                }
                InstrOp::Add { a, b } | InstrOp::Sub { a, b } => {
                    let (sa, sb) = (secret(instrs, *a), secret(instrs, *b));
                    if sa && sb && scale(instrs, *a) != scale(instrs, *b) {
                        out.push(v(
                            Some(i),
                            format!(
                                "party {party}: scale mismatch at add: {} vs {}",
                                scale(instrs, *a),
                                scale(instrs, *b)
                            ),
                        ));
                    }
                    // Mixed secret/public additions happen at party 0 only.
                    if (sa ^ sb) && instr.ty.label == Label::Secret && party == 1 {
                        out.push(v(Some(i), "party 1 folds in a public addend".to_string()));
                    }
                }
                InstrOp::LtzMpc { .. } => {
                    if instr.ty.scale != Scale::ONE {
                        out.push(v(Some(i), format!("party {party}: ltz output scale {} != 1", instr.ty.scale)));
                    }
                }
                InstrOp::Trunc { src, by } => {
                    let expect = Scale(scale(instrs, *src).exp().saturating_sub(by.exp()));
                    if instr.ty.scale != expect {
                        out.push(v(Some(i), format!("party {party}: trunc scale bookkeeping broken")));
                    }
                }
                _ => {}
            }
        }
    }
    out
}
