//! Built-in decompositions and tunable approximations.

use std::sync::Arc;

use super::polyfit::PolyTable;
use super::{Expander, KnobSpec, KnobValues, PassDescriptor};
use crate::error::{Error, Result};
use crate::graph::{Graph, Node, NodeId, OpKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolyOp {
    Gelu,
    Silu,
    Sigmoid,
}

impl PolyOp {
    fn name(self) -> &'static str {
        match self {
            PolyOp::Gelu => "gelu",
            PolyOp::Silu => "silu",
            PolyOp::Sigmoid => "sigmoid",
        }
    }
}

/// Iterative exponential: `y = (1 + x/2^t)^(2^t)`, optionally clamped to
/// zero below `x < -2^t` where the unclamped form diverges.
///
/// Emits `t+1` mul-like nodes, plus one ltz and one mul when clamped.
pub fn build_exp(ex: &mut Expander<'_>, x: NodeId, t: i64, clamp: bool) -> Result<NodeId> {
    let step = ex.float_const((-(t as f64)).exp2());
    let scaled = ex.mul(x, step);
    let one = ex.int_const(1);
    let mut y = ex.add(scaled, one);
    if clamp {
        let bound = ex.int_const(1i64 << t);
        let shifted = ex.add(x, bound);
        let below = ex.ltz(shifted);
        let mask = ex.sub(one, below);
        y = ex.mul(y, mask);
    }
    for _ in 0..t {
        y = ex.mul(y, y);
    }
    Ok(y)
}

/// `relu(x) = x * (1 - ltz(x))`.
pub fn build_relu(ex: &mut Expander<'_>, x: NodeId) -> Result<NodeId> {
    let below = ex.ltz(x);
    let one = ex.int_const(1);
    let mask = ex.sub(one, below);
    Ok(ex.mul(x, mask))
}

/// Piecewise polynomial for gelu/silu/sigmoid: asymptotes outside the fit
/// interval selected by two ltz masks, Horner evaluation inside. Degree 0
/// falls back to relu (gelu/silu) or the unit step (sigmoid).
pub fn build_poly(
    ex: &mut Expander<'_>,
    x: NodeId,
    op: PolyOp,
    degree: usize,
    table: &PolyTable,
) -> Result<NodeId> {
    if degree == 0 {
        return match op {
            PolyOp::Gelu | PolyOp::Silu => {
                // Leave a relu node for the relu decomposition.
                ex.push(OpKind::Relu, &[x])
            }
            PolyOp::Sigmoid => {
                let below = ex.ltz(x);
                let one = ex.int_const(1);
                Ok(ex.sub(one, below))
            }
        };
    }
    let entry = table.get(op.name(), degree)?;
    let b = entry.interval;

    let b_pos = ex.float_const(b);
    let xb = ex.add(x, b_pos);
    let lo = ex.ltz(xb); // x < -B
    let bx = ex.sub(b_pos, x);
    let hi = ex.ltz(bx); // x > B
    let one = ex.int_const(1);
    let no_lo = ex.sub(one, lo);
    let inside = ex.sub(no_lo, hi); // 1 - lo - hi; lo and hi are disjoint

    let mut p = ex.float_const(entry.coefficients[degree]);
    for k in (0..degree).rev() {
        let px = ex.mul(p, x);
        let ck = ex.float_const(entry.coefficients[k]);
        p = ex.add(px, ck);
    }
    let core = ex.mul(inside, p);
    Ok(match op {
        // Above the interval gelu/silu follow the identity, below they are 0.
        PolyOp::Gelu | PolyOp::Silu => {
            let upper = ex.mul(hi, x);
            ex.add(core, upper)
        }
        // Sigmoid saturates at 1 above and 0 below.
        PolyOp::Sigmoid => ex.add(core, hi),
    })
}

/// Numerically stabilized softmax skeleton; the inner exp and reciprocal
/// stay as nodes for their own passes.
pub fn build_softmax(ex: &mut Expander<'_>, x: NodeId, axis: usize) -> Result<NodeId> {
    let m = ex.push(OpKind::Max { axis: Some(axis) }, &[x])?;
    let centered = ex.sub(x, m);
    let e = ex.push(OpKind::Exp, &[centered])?;
    let s = ex.push(OpKind::Sum { axis: Some(axis) }, &[e])?;
    let r = ex.push(OpKind::Reciprocal, &[s])?;
    Ok(ex.mul(e, r))
}

/// Newton-Raphson reciprocal on a positive domain, seeded from a decaying
/// exponential (`y0 = 3 * exp(0.5 - x) + 0.003`). The seed's exp node is
/// approximated by the exp pass at its own site.
pub fn build_newton_reciprocal(ex: &mut Expander<'_>, x: NodeId, iters: i64) -> Result<NodeId> {
    let half = ex.float_const(0.5);
    let arg = ex.sub(half, x);
    let e = ex.push(OpKind::Exp, &[arg])?;
    let three = ex.float_const(3.0);
    let scaled = ex.mul(e, three);
    let offset = ex.float_const(0.003);
    let mut y = ex.add(scaled, offset);
    let two = ex.int_const(2);
    for _ in 0..iters {
        let xy = ex.mul(x, y);
        let corr = ex.sub(two, xy);
        y = ex.mul(y, corr);
    }
    Ok(y)
}

/// Newton-Raphson inverse square root with an exponential initial guess
/// (`y0 = 2.2 * exp(-(x/2 + 0.2)) + 0.15`); the guess's exp is expanded
/// inline with the `exp_t` knob and kept clamped.
///
/// The floor keeps the guess inside the Newton basin `(0, sqrt(3/x))` up to
/// x of about 133; a floor of 0.2 would leave the basin at x > 75 and lock
/// onto the negative root.
pub fn build_newton_rsqrt(ex: &mut Expander<'_>, x: NodeId, iters: i64, exp_t: i64) -> Result<NodeId> {
    let half = ex.float_const(0.5);
    let xh = ex.mul(x, half);
    let neg_off = ex.float_const(-0.2);
    let arg = ex.sub(neg_off, xh);
    let e = build_exp(ex, arg, exp_t, true)?;
    let amp = ex.float_const(2.2);
    let ea = ex.mul(e, amp);
    let floor = ex.float_const(0.15);
    let mut y = ex.add(ea, floor);
    let three = ex.int_const(3);
    for _ in 0..iters {
        let y2 = ex.mul(y, y);
        let xy2 = ex.mul(x, y2);
        let corr = ex.sub(three, xy2);
        let t1 = ex.mul(y, corr);
        y = ex.mul(t1, half);
    }
    Ok(y)
}

/// Layer normalization over one axis: mean/variance, epsilon, an rsqrt node
/// (left for the rsqrt pass) and the optional public affine tail.
pub fn build_layernorm(
    ex: &mut Expander<'_>,
    node: &Node,
    axis: usize,
    eps: f64,
) -> Result<NodeId> {
    let x = node.inputs[0];
    let mu = ex.push(OpKind::Mean { axis: Some(axis) }, &[x])?;
    let centered = ex.sub(x, mu);
    let sq = ex.mul(centered, centered);
    let var = ex.push(OpKind::Mean { axis: Some(axis) }, &[sq])?;
    let epsc = ex.float_const(eps);
    let stabilized = ex.add(var, epsc);
    let r = ex.push(OpKind::Rsqrt, &[stabilized])?;
    let normed = ex.mul(centered, r);
    if node.inputs.len() == 3 {
        let scaled = ex.mul(normed, node.inputs[1]);
        Ok(ex.add(scaled, node.inputs[2]))
    } else {
        Ok(normed)
    }
}

fn kind_is(f: impl Fn(&OpKind) -> bool + Send + Sync + 'static) -> super::NodePred {
    Arc::new(move |_g: &Graph, n: &Node| f(&n.op))
}

fn secret_input_filter() -> super::NodePred {
    Arc::new(|g: &Graph, n: &Node| {
        n.inputs
            .first()
            .and_then(|i| g.node(*i).owner)
            .is_none_or(|o| o.is_secret())
    })
}

fn knob(values: &KnobValues, name: &str) -> i64 {
    values[name]
}

pub fn pass_by_name(name: &str) -> Result<PassDescriptor> {
    builtin_passes()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::Config(format!("unknown pass \"{name}\"")))
}

/// The built-in pass registry, in default application order.
pub fn builtin_passes() -> Vec<PassDescriptor> {
    let table = PolyTable::builtin();
    let poly_pass = |name: &str, op: PolyOp| PassDescriptor {
        name: name.to_string(),
        pattern: kind_is(move |k| match op {
            PolyOp::Gelu => matches!(k, OpKind::Gelu),
            PolyOp::Silu => matches!(k, OpKind::Silu),
            PolyOp::Sigmoid => matches!(k, OpKind::Sigmoid),
        }),
        filter: Some(secret_input_filter()),
        knobs: vec![KnobSpec::new("degree", 0, 2)],
        build: Arc::new(move |ex, node, values| {
            let degree = [0usize, 2, 4][knob(values, "degree") as usize];
            build_poly(ex, node.inputs[0], op, degree, table)
        }),
    };

    vec![
        PassDescriptor {
            name: "LinearPass".to_string(),
            pattern: kind_is(|k| matches!(k, OpKind::Linear)),
            filter: None,
            knobs: vec![],
            build: Arc::new(|ex, node, _| {
                let y = ex.push(OpKind::MatMul, &[node.inputs[0], node.inputs[1]])?;
                Ok(ex.add(y, node.inputs[2]))
            }),
        },
        PassDescriptor {
            name: "CmpPass".to_string(),
            pattern: kind_is(|k| matches!(k, OpKind::Ge | OpKind::Gt | OpKind::Le | OpKind::Lt)),
            filter: None,
            knobs: vec![],
            build: Arc::new(|ex, node, _| {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                let one_minus = |ex: &mut Expander<'_>, lt: NodeId| {
                    let one = ex.int_const(1);
                    ex.sub(one, lt)
                };
                Ok(match node.op {
                    // a >= b  ==  1 - (a - b < 0)
                    OpKind::Ge => {
                        let d = ex.sub(a, b);
                        let lt = ex.ltz(d);
                        one_minus(ex, lt)
                    }
                    // a > b  ==  b - a < 0
                    OpKind::Gt => {
                        let d = ex.sub(b, a);
                        ex.ltz(d)
                    }
                    // a <= b  ==  1 - (b - a < 0)
                    OpKind::Le => {
                        let d = ex.sub(b, a);
                        let lt = ex.ltz(d);
                        one_minus(ex, lt)
                    }
                    // a < b  ==  a - b < 0
                    OpKind::Lt => {
                        let d = ex.sub(a, b);
                        ex.ltz(d)
                    }
                    _ => unreachable!(),
                })
            }),
        },
        PassDescriptor {
            name: "SoftmaxPass".to_string(),
            pattern: kind_is(|k| matches!(k, OpKind::Softmax { .. })),
            filter: None,
            knobs: vec![],
            build: Arc::new(|ex, node, _| {
                let OpKind::Softmax { axis } = node.op else { unreachable!() };
                build_softmax(ex, node.inputs[0], axis)
            }),
        },
        PassDescriptor {
            name: "LayerNormPass".to_string(),
            pattern: kind_is(|k| matches!(k, OpKind::LayerNorm { .. })),
            filter: None,
            knobs: vec![],
            build: Arc::new(|ex, node, _| {
                let OpKind::LayerNorm { axis, eps } = node.op else { unreachable!() };
                build_layernorm(ex, node, axis, eps)
            }),
        },
        poly_pass("GeluPass", PolyOp::Gelu),
        poly_pass("SiluPass", PolyOp::Silu),
        poly_pass("SigmoidPass", PolyOp::Sigmoid),
        PassDescriptor {
            name: "ReciprocalPass".to_string(),
            pattern: kind_is(|k| matches!(k, OpKind::Reciprocal)),
            filter: Some(secret_input_filter()),
            knobs: vec![KnobSpec::new("iters", 1, 12)],
            build: Arc::new(|ex, node, values| {
                build_newton_reciprocal(ex, node.inputs[0], knob(values, "iters"))
            }),
        },
        PassDescriptor {
            name: "RsqrtPass".to_string(),
            pattern: kind_is(|k| matches!(k, OpKind::Rsqrt)),
            filter: Some(secret_input_filter()),
            knobs: vec![KnobSpec::new("iters", 1, 12), KnobSpec::new("exp_t", 0, 8)],
            build: Arc::new(|ex, node, values| {
                build_newton_rsqrt(ex, node.inputs[0], knob(values, "iters"), knob(values, "exp_t"))
            }),
        },
        PassDescriptor {
            name: "ExpPass".to_string(),
            pattern: kind_is(|k| matches!(k, OpKind::Exp)),
            filter: Some(secret_input_filter()),
            knobs: vec![KnobSpec::new("t", 0, 8), KnobSpec::new("clamp", 0, 1)],
            build: Arc::new(|ex, node, values| {
                build_exp(ex, node.inputs[0], knob(values, "t"), knob(values, "clamp") != 0)
            }),
        },
        PassDescriptor {
            name: "ReluPass".to_string(),
            pattern: kind_is(|k| matches!(k, OpKind::Relu)),
            filter: None,
            knobs: vec![],
            build: Arc::new(|ex, node, _| build_relu(ex, node.inputs[0])),
        },
    ]
}
