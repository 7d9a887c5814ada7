//! The per-party translation from supported-set graphs to instruction
//! programs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Base, BackType, Instr, InstrOp, Label, MaxDims, MulKind, PartyProgram, Slot};
use crate::error::{Error, Result};
use crate::fixedpoint::{Ring, Scale};
use crate::frontend::{fully_annotated, PartyId};
use crate::graph::{check_stage, topo_order, validate, Graph, Node, OpKind, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerConfig {
    /// Ring width d in bits; all secrets live in `Z / 2^d`.
    pub ring_width: u32,
    /// Default fixed-point scale used when encoding floats.
    pub default_scale: Scale,
    /// Party that reconstructs revealed outputs.
    pub reveal_to: PartyId,
    /// Comparison window applied to every ltz/max site; range recording can
    /// override it per site afterwards.
    pub comparison_window: u32,
}

impl Default for LowerConfig {
    fn default() -> Self {
        LowerConfig { ring_width: 64, default_scale: Scale(16), reveal_to: 0, comparison_window: 64 }
    }
}

impl LowerConfig {
    /// Scale exponents of a product must leave 8 bits of headroom in the ring.
    pub fn scale_limit(&self) -> u32 {
        self.ring_width.saturating_sub(8)
    }
}

struct Emit {
    cfg: LowerConfig,
    p0: Vec<Instr>,
    p1: Vec<Instr>,
}

impl Emit {
    fn push2(&mut self, op0: InstrOp, op1: InstrOp, ty: BackType, shape: Vec<usize>, site: &str) -> Slot {
        debug_assert_eq!(self.p0.len(), self.p1.len());
        let slot = self.p0.len();
        self.p0.push(Instr { op: op0, ty, shape: shape.clone(), site: site.to_string() });
        self.p1.push(Instr { op: op1, ty, shape, site: site.to_string() });
        slot
    }

    fn push(&mut self, op: InstrOp, ty: BackType, shape: Vec<usize>, site: &str) -> Slot {
        self.push2(op.clone(), op, ty, shape, site)
    }

    fn ty(&self, slot: Slot) -> BackType {
        self.p0[slot].ty
    }

    fn shape(&self, slot: Slot) -> Vec<usize> {
        self.p0[slot].shape.clone()
    }

    fn is_secret(&self, slot: Slot) -> bool {
        self.ty(slot).is_secret()
    }

    fn is_pub_float(&self, slot: Slot) -> bool {
        let t = self.ty(slot);
        t.label == Label::Pub && t.base == Base::Float
    }

    /// Rescale an integer value (secret shares or public) to `target`.
    /// No instruction is emitted when the scale already matches.
    fn rescale_to(&mut self, v: Slot, target: Scale, site: &str) -> Slot {
        let ty = self.ty(v);
        debug_assert_eq!(ty.base, Base::Int);
        if ty.scale == target {
            return v;
        }
        let new_ty = BackType { scale: target, ..ty };
        let shape = self.shape(v);
        self.push(InstrOp::Rescale { src: v }, new_ty, shape, site)
    }

    /// Encode a public float at `scale`. With `party0_only`, party 1 never
    /// materializes the value (its aligned slot is a placeholder).
    fn encode_float(&mut self, v: Slot, scale: Scale, party0_only: bool, site: &str) -> Slot {
        let ty = BackType::pub_int(scale);
        let shape = self.shape(v);
        if party0_only {
            self.push2(InstrOp::EncodeFloat { src: v }, InstrOp::Nop, ty, shape, site)
        } else {
            self.push(InstrOp::EncodeFloat { src: v }, ty, shape, site)
        }
    }

    fn int_to_float(&mut self, v: Slot, site: &str) -> Slot {
        if self.is_pub_float(v) {
            return v;
        }
        let shape = self.shape(v);
        self.push(InstrOp::IntToFloat { src: v }, BackType::pub_float(), shape, site)
    }
}

/// Lower the graph for both parties at once; the two programs are aligned
/// instruction-by-instruction.
pub fn lower_pair(graph: &Graph, cfg: &LowerConfig) -> Result<(PartyProgram, PartyProgram)> {
    let violations = validate(graph);
    if !violations.is_empty() {
        return Err(Error::InvalidGraph(
            violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "),
        ));
    }
    let stage = check_stage(graph, Stage::PostApprox);
    if let Some(bad) = stage.first() {
        return Err(Error::Lower {
            site: bad.node.map(|id| graph.node(id).site()).unwrap_or_default(),
            msg: bad.msg.clone(),
        });
    }
    if !fully_annotated(graph) {
        return Err(Error::Lower { site: String::new(), msg: "graph is not owner-annotated".into() });
    }

    let ring = Ring::new(cfg.ring_width);
    let mut em = Emit { cfg: *cfg, p0: Vec::new(), p1: Vec::new() };
    let mut slots: BTreeMap<crate::graph::NodeId, Slot> = BTreeMap::new();
    let order = topo_order(graph)?;

    for id in order {
        let node = &graph.nodes[&id];
        let slot = lower_node(&mut em, graph, node, &slots)?;
        slots.insert(id, slot);
    }

    let mut outputs = Vec::new();
    for out in &graph.outputs {
        outputs.push(slots[out]);
    }

    let mk = |party: PartyId, instrs: Vec<Instr>| PartyProgram {
        party,
        ring,
        default_scale: cfg.default_scale,
        reveal_to: cfg.reveal_to,
        instrs,
        outputs: outputs.clone(),
    };
    Ok((mk(0, em.p0), mk(1, em.p1)))
}

/// Lower the graph for a single party. Mirrors [`lower_pair`]; generating
/// each party independently yields identical programs.
pub fn lower(graph: &Graph, party: PartyId, cfg: &LowerConfig) -> Result<PartyProgram> {
    let (p0, p1) = lower_pair(graph, cfg)?;
    Ok(if party == 0 { p0 } else { p1 })
}

fn owner_of(node: &Node) -> crate::frontend::OwnerSet {
    node.owner.expect("lowering requires owner annotations")
}

fn lower_node(
    em: &mut Emit,
    graph: &Graph,
    node: &Node,
    slots: &BTreeMap<crate::graph::NodeId, Slot>,
) -> Result<Slot> {
    let site = node.site();
    let cfg = em.cfg;
    let sd = cfg.default_scale;
    let width = cfg.ring_width;
    let shape = node.meta.shape.clone();
    let arg = |i: usize| slots[&node.inputs[i]];

    let slot = match &node.op {
        OpKind::Input => {
            let name = graph
                .inputs
                .iter()
                .find(|(_, nid)| *nid == node.id)
                .map(|(n, _)| n.clone())
                .expect("validated graph has named inputs");
            let owner = owner_of(node);
            if owner.is_public() {
                let ty = if node.meta.dtype.is_float() {
                    BackType::pub_float()
                } else {
                    BackType::pub_int(Scale::ONE)
                };
                em.push(InstrOp::InputPub { name }, ty, shape, &site)
            } else if let Some(p) = owner.sole_owner() {
                em.push(InstrOp::InputShare { name, owner: p }, BackType::secret(width, sd), shape, &site)
            } else {
                return Err(Error::Lower {
                    site,
                    msg: format!("input \"{name}\" has owner {owner}; only public or single-owner inputs can be sourced"),
                });
            }
        }
        OpKind::Const { data } => {
            if node.meta.dtype.is_float() {
                em.push(InstrOp::ConstF { data: data.clone() }, BackType::pub_float(), shape, &site)
            } else {
                let ints = data.iter().map(|&v| v.round() as i64).collect();
                em.push(InstrOp::ConstI { data: ints }, BackType::pub_int(Scale::ONE), shape, &site)
            }
        }
        OpKind::Add | OpKind::Sub => lower_addsub(em, node, arg(0), arg(1), &site)?,
        OpKind::Sum { axis } => {
            let src = arg(0);
            let ty = em.ty(src);
            em.push(InstrOp::SumAxis { src, axis: *axis }, ty, shape, &site)
        }
        // Mean is a local share sum followed by a public-float multiply by
        // 1/count (exact whenever the count is a power of two).
        OpKind::Mean { axis } => {
            let src = arg(0);
            let k = match axis {
                Some(a) => em.shape(src)[*a],
                None => em.shape(src).iter().product(),
            };
            let summed_ty = em.ty(src);
            let summed = em.push(InstrOp::SumAxis { src, axis: *axis }, summed_ty, shape.clone(), &site);
            let inv = em.push(
                InstrOp::ConstF { data: vec![1.0 / k as f64] },
                BackType::pub_float(),
                vec![1],
                &site,
            );
            lower_mul(em, node, summed, inv, MulKind::Elem, &site)?
        }
        OpKind::AvgPool { kh, kw } => {
            let src = arg(0);
            let summed_ty = em.ty(src);
            let summed =
                em.push(InstrOp::PoolSum { src, kh: *kh, kw: *kw }, summed_ty, shape.clone(), &site);
            let inv = em.push(
                InstrOp::ConstF { data: vec![1.0 / (kh * kw) as f64] },
                BackType::pub_float(),
                vec![1],
                &site,
            );
            lower_mul(em, node, summed, inv, MulKind::Elem, &site)?
        }
        OpKind::Mul => lower_mul(em, node, arg(0), arg(1), MulKind::Elem, &site)?,
        OpKind::MatMul => lower_mul(em, node, arg(0), arg(1), MulKind::MatMul, &site)?,
        OpKind::Conv2d => lower_mul(em, node, arg(0), arg(1), MulKind::Conv2d, &site)?,
        OpKind::Ltz => {
            let src = arg(0);
            if em.is_secret(src) {
                let ty = BackType::secret(width, Scale::ONE);
                em.push(InstrOp::LtzMpc { src, window: cfg.comparison_window }, ty, shape, &site)
            } else {
                em.push(InstrOp::LtzLocal { src }, BackType::pub_int(Scale::ONE), shape, &site)
            }
        }
        OpKind::Max { axis } => {
            let src = arg(0);
            let dims = MaxDims::Axis { axis: *axis };
            if em.is_secret(src) {
                let ty = em.ty(src);
                em.push(InstrOp::MaxKernel { src, dims, window: cfg.comparison_window }, ty, shape, &site)
            } else {
                let ty = em.ty(src);
                em.push(InstrOp::MaxLocal { src, dims }, ty, shape, &site)
            }
        }
        OpKind::MaxPool { kh, kw } => {
            let src = arg(0);
            let dims = MaxDims::Pool { kh: *kh, kw: *kw };
            if em.is_secret(src) {
                let ty = em.ty(src);
                em.push(InstrOp::MaxKernel { src, dims, window: cfg.comparison_window }, ty, shape, &site)
            } else {
                let ty = em.ty(src);
                em.push(InstrOp::MaxLocal { src, dims }, ty, shape, &site)
            }
        }
        OpKind::Reshape { .. } | OpKind::Transpose | OpKind::Permute { .. } | OpKind::Flatten => {
            let src = arg(0);
            let ty = em.ty(src);
            let op = match &node.op {
                OpKind::Reshape { .. } => InstrOp::Reshape { src },
                OpKind::Transpose => InstrOp::Transpose { src },
                OpKind::Permute { perm } => InstrOp::Permute { src, perm: perm.clone() },
                OpKind::Flatten => InstrOp::Flatten { src },
                _ => unreachable!(),
            };
            em.push(op, ty, shape, &site)
        }
        OpKind::Stack => {
            let srcs: Vec<Slot> = node.inputs.iter().map(|i| slots[i]).collect();
            let any_secret = srcs.iter().any(|&s| em.is_secret(s));
            if any_secret {
                if !srcs.iter().all(|&s| em.is_secret(s)) {
                    return Err(Error::Lower {
                        site,
                        msg: "stack of mixed public/secret operands is not supported".into(),
                    });
                }
                let smax = srcs.iter().map(|&s| em.ty(s).scale).max().unwrap();
                let srcs: Vec<Slot> = srcs.iter().map(|&s| em.rescale_to(s, smax, &site)).collect();
                let ty = BackType::secret(width, smax);
                em.push(InstrOp::StackOp { srcs }, ty, shape, &site)
            } else {
                let ty = em.ty(srcs[0]);
                em.push(InstrOp::StackOp { srcs }, ty, shape, &site)
            }
        }
        OpKind::ZerosLike => em.push(
            InstrOp::ConstF { data: vec![0.0; node.meta.numel()] },
            BackType::pub_float(),
            shape,
            &site,
        ),
        OpKind::FullLike { value } => em.push(
            InstrOp::ConstF { data: vec![*value; node.meta.numel()] },
            BackType::pub_float(),
            shape,
            &site,
        ),
        OpKind::Reveal => {
            let src = arg(0);
            if em.is_secret(src) {
                em.push(
                    InstrOp::Reveal { src, to: cfg.reveal_to },
                    BackType::pub_float(),
                    shape,
                    &site,
                )
            } else {
                em.push(InstrOp::Copy { src }, em.ty(src), shape, &site)
            }
        }
        other => {
            return Err(Error::Lower {
                site,
                msg: format!("op {} has no lowering rule (graph is not post-approximation)", other.tag()),
            })
        }
    };
    Ok(slot)
}

/// Add-like binary lowering. A public addend is folded in at party 0 only;
/// party 1 only tracks the (rescaled) secret share.
fn lower_addsub(em: &mut Emit, node: &Node, a: Slot, b: Slot, site: &str) -> Result<Slot> {
    let sub = node.op == OpKind::Sub;
    let width = em.cfg.ring_width;
    let sd = em.cfg.default_scale;
    let shape = node.meta.shape.clone();

    match (em.is_secret(a), em.is_secret(b)) {
        (true, true) => {
            let smax = em.ty(a).scale.max(em.ty(b).scale);
            let a = em.rescale_to(a, smax, site);
            let b = em.rescale_to(b, smax, site);
            let op = if sub { InstrOp::Sub { a, b } } else { InstrOp::Add { a, b } };
            Ok(em.push(op, BackType::secret(width, smax), shape, site))
        }
        (true, false) | (false, true) => {
            let (sec, pb, sec_first) = if em.is_secret(a) { (a, b, true) } else { (b, a, false) };
            let s_sec = em.ty(sec).scale;
            // Float addends are encoded at max(s, s_d); a small secret scale
            // must never force a lossy float encoding.
            let (pb, smax) = if em.is_pub_float(pb) {
                let smax = s_sec.max(sd);
                (em.encode_float(pb, smax, true, site), smax)
            } else {
                let smax = s_sec.max(em.ty(pb).scale);
                (em.rescale_to(pb, smax, site), smax)
            };
            let sec = em.rescale_to(sec, smax, site);
            let ty = BackType::secret(width, smax);
            let (op0, op1) = match (sub, sec_first) {
                (false, _) => (InstrOp::Add { a: sec, b: pb }, InstrOp::Copy { src: sec }),
                (true, true) => (InstrOp::Sub { a: sec, b: pb }, InstrOp::Copy { src: sec }),
                (true, false) => (InstrOp::Sub { a: pb, b: sec }, InstrOp::Neg { src: sec }),
            };
            Ok(em.push2(op0, op1, ty, shape, site))
        }
        (false, false) => {
            let (a, b, ty) = unify_pub(em, a, b, site);
            let op = if sub { InstrOp::Sub { a, b } } else { InstrOp::Add { a, b } };
            Ok(em.push(op, ty, shape, site))
        }
    }
}

/// Public operands of mixed base types meet in the float domain.
fn unify_pub(em: &mut Emit, a: Slot, b: Slot, site: &str) -> (Slot, Slot, BackType) {
    let (ta, tb) = (em.ty(a), em.ty(b));
    if ta.base == Base::Int && tb.base == Base::Int {
        let smax = ta.scale.max(tb.scale);
        let a = em.rescale_to(a, smax, site);
        let b = em.rescale_to(b, smax, site);
        (a, b, BackType::pub_int(smax))
    } else {
        let a = em.int_to_float(a, site);
        let b = em.int_to_float(b, site);
        (a, b, BackType::pub_float())
    }
}

fn lower_mul(em: &mut Emit, node: &Node, a: Slot, b: Slot, kind: MulKind, site: &str) -> Result<Slot> {
    let width = em.cfg.ring_width;
    let sd = em.cfg.default_scale;
    let shape = node.meta.shape.clone();

    match (em.is_secret(a), em.is_secret(b)) {
        (true, true) => {
            let (s1, s2) = (em.ty(a).scale, em.ty(b).scale);
            check_overflow(em, s1, s2, site)?;
            let prod_ty = BackType::secret(width, Scale(s1.exp() + s2.exp()));
            let prod = em.push(InstrOp::MulMpc { a, b, kind }, prod_ty, shape.clone(), site);
            let smin = s1.min(s2);
            let ty = BackType::secret(width, s1.max(s2));
            Ok(em.push(InstrOp::Trunc { src: prod, by: smin }, ty, shape, site))
        }
        (true, false) | (false, true) => {
            let (sec, pb) = if em.is_secret(a) { (a, b) } else { (b, a) };
            let pb = if em.is_pub_float(pb) { em.encode_float(pb, sd, false, site) } else { pb };
            let (s1, s2) = (em.ty(sec).scale, em.ty(pb).scale);
            check_overflow(em, s1, s2, site)?;
            // Operand order of the graph node is preserved for matmul/conv.
            let (a, b) = if em.is_secret(a) { (sec, pb) } else { (pb, sec) };
            let prod_ty = BackType::secret(width, Scale(s1.exp() + s2.exp()));
            let prod = em.push(InstrOp::MulLocal { a, b, kind }, prod_ty, shape.clone(), site);
            let smin = s1.min(s2);
            let ty = BackType::secret(width, s1.max(s2));
            Ok(em.push(InstrOp::Trunc { src: prod, by: smin }, ty, shape, site))
        }
        (false, false) => {
            let (ta, tb) = (em.ty(a), em.ty(b));
            if ta.base == Base::Int && tb.base == Base::Int {
                let ty = BackType::pub_int(Scale(ta.scale.exp() + tb.scale.exp()));
                Ok(em.push(InstrOp::MulLocal { a, b, kind }, ty, shape, site))
            } else {
                let a = em.int_to_float(a, site);
                let b = em.int_to_float(b, site);
                Ok(em.push(InstrOp::MulLocal { a, b, kind }, BackType::pub_float(), shape, site))
            }
        }
    }
}

fn check_overflow(em: &Emit, s1: Scale, s2: Scale, site: &str) -> Result<()> {
    let exp = s1.exp() + s2.exp();
    let limit = em.cfg.scale_limit();
    if exp > limit {
        Err(Error::ScaleOverflow { site: site.to_string(), exp, limit })
    } else {
        Ok(())
    }
}
