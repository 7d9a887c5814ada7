//! Static communication cost model.
//!
//! The model shares its sizing functions with the runtime: every message the
//! executor sends is sized by the same plan, so the static report equals the
//! measured counters byte-for-byte. Local operators cost nothing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Instr, InstrOp, MaxDims, MulKind, PartyProgram};
use crate::fixedpoint::Ring;

/// AND gates per element and per circuit level of the windowed comparison.
///
/// The sign bit of the share sum over the low `w` bits needs the carry into
/// bit `w-1`, computed by a Kogge-Stone prefix over the `m = w-1` low
/// positions: one level of `m` initial generate gates, then `2*(m-k)` gates
/// (generate and propagate combines) per doubling level `k`.
pub fn ltz_level_gates(window: u32) -> Vec<usize> {
    let m = window.saturating_sub(1) as usize;
    if m == 0 {
        return Vec::new();
    }
    let mut levels = vec![m];
    let mut k = 1;
    while k < m {
        levels.push(2 * (m - k));
        k *= 2;
    }
    levels
}

/// Boolean AND triples consumed per element by one windowed comparison.
pub fn ltz_and_gates(window: u32) -> usize {
    ltz_level_gates(window).iter().sum()
}

/// Bytes each party sends for one comparison over `n` elements: two masked
/// bits per AND gate plus one bit for the final bit-to-arithmetic opening,
/// packed per message.
pub fn ltz_bytes_per_party(n: usize, window: u32) -> u64 {
    let mut bytes = 0u64;
    for gates in ltz_level_gates(window) {
        bytes += ((2 * gates * n) as u64).div_ceil(8);
    }
    bytes + (n as u64).div_ceil(8)
}

/// Rounds of one comparison: one per circuit level plus the final opening.
pub fn ltz_rounds(window: u32) -> u64 {
    ltz_level_gates(window).len() as u64 + 1
}

/// Bytes each party sends for one Beaver multiplication over `n` products:
/// the masked left and right operands.
pub fn beaver_bytes_per_party(n_products: usize, ring: Ring) -> u64 {
    2 * n_products as u64 * ring.elem_bytes() as u64
}

/// Bytes of one share tensor on the wire.
pub fn share_bytes(n: usize, ring: Ring) -> u64 {
    n as u64 * ring.elem_bytes() as u64
}

/// Elementwise products behind a mul-like operation (matmul and conv expand
/// into elementwise products over the full index set).
pub fn mul_products(kind: MulKind, a_shape: &[usize], b_shape: &[usize]) -> usize {
    let numel = |s: &[usize]| s.iter().product::<usize>();
    match kind {
        MulKind::Elem => numel(a_shape).max(numel(b_shape)),
        MulKind::MatMul => match (a_shape, b_shape) {
            ([a, b], [_, c]) => a * b * c,
            _ => numel(a_shape).max(numel(b_shape)),
        },
        MulKind::Conv2d => match (a_shape, b_shape) {
            ([n, _cin, h, w], [cout, cin2, kh, kw]) => {
                let (oh, ow) = (h - kh + 1, w - kw + 1);
                n * cout * oh * ow * cin2 * kh * kw
            }
            _ => numel(a_shape).max(numel(b_shape)),
        },
    }
}

/// Pair counts per tree level of a max reduction over groups of `m`.
pub fn max_levels(m: usize) -> Vec<usize> {
    let mut levels = Vec::new();
    let mut cur = m;
    while cur > 1 {
        let pairs = cur / 2;
        levels.push(pairs);
        cur -= pairs;
    }
    levels
}

/// Resolve a max grouping into (number of groups, group size).
pub fn max_group_dims(dims: &MaxDims, shape: &[usize]) -> (usize, usize) {
    let numel: usize = shape.iter().product();
    match dims {
        MaxDims::Axis { axis: None } => (1, numel),
        MaxDims::Axis { axis: Some(a) } => {
            let m = shape[*a];
            (numel / m, m)
        }
        MaxDims::Pool { kh, kw } => {
            let m = kh * kw;
            (numel / m, m)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Linear,
    Mul,
    Comparison,
    Max,
    Other,
}

impl Category {
    pub fn all() -> [Category; 5] {
        [Category::Linear, Category::Mul, Category::Comparison, Category::Max, Category::Other]
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Linear => "linear",
            Category::Mul => "mul",
            Category::Comparison => "comparison",
            Category::Max => "max",
            Category::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatCost {
    pub bytes: u64,
    pub rounds: u64,
}

/// Correlated randomness demanded from the dealer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripleDemand {
    pub arithmetic: u64,
    pub boolean: u64,
    pub dabits: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub bytes: [u64; 2],
    pub rounds: u64,
    pub by_category: BTreeMap<Category, CatCost>,
    pub triples: TripleDemand,
}

impl CostReport {
    pub fn total_bytes(&self) -> u64 {
        self.bytes[0] + self.bytes[1]
    }

    fn charge(&mut self, cat: Category, bytes: [u64; 2], rounds: u64) {
        self.bytes[0] += bytes[0];
        self.bytes[1] += bytes[1];
        self.rounds += rounds;
        let c = self.by_category.entry(cat).or_default();
        c.bytes += bytes[0] + bytes[1];
        c.rounds += rounds;
    }
}

/// Per-instruction communication of one aligned instruction pair.
fn instr_cost(instr: &Instr, instrs: &[Instr], ring: Ring, report: &mut CostReport) {
    let n = instr.numel();
    match &instr.op {
        InstrOp::InputShare { owner, .. } => {
            let mut bytes = [0u64; 2];
            bytes[*owner as usize] = share_bytes(n, ring);
            report.charge(Category::Other, bytes, 1);
        }
        InstrOp::MulMpc { a, b, kind } => {
            let products = mul_products(*kind, &instrs[*a].shape, &instrs[*b].shape);
            let per_party = beaver_bytes_per_party(products, ring);
            let cat = match kind {
                MulKind::Elem => Category::Mul,
                MulKind::MatMul | MulKind::Conv2d => Category::Linear,
            };
            report.charge(cat, [per_party, per_party], 1);
            report.triples.arithmetic += products as u64;
        }
        InstrOp::LtzMpc { src, window } => {
            let n = instrs[*src].numel();
            let per_party = ltz_bytes_per_party(n, *window);
            report.charge(Category::Comparison, [per_party, per_party], ltz_rounds(*window));
            report.triples.boolean += (n * ltz_and_gates(*window)) as u64;
            report.triples.dabits += n as u64;
        }
        InstrOp::MaxKernel { src, dims, window } => {
            let (groups, m) = max_group_dims(dims, &instrs[*src].shape);
            for pairs in max_levels(m) {
                let cnt = groups * pairs;
                let per_party = ltz_bytes_per_party(cnt, *window) + beaver_bytes_per_party(cnt, ring);
                report.charge(Category::Max, [per_party, per_party], ltz_rounds(*window) + 1);
                report.triples.boolean += (cnt * ltz_and_gates(*window)) as u64;
                report.triples.dabits += cnt as u64;
                report.triples.arithmetic += cnt as u64;
            }
        }
        InstrOp::Reveal { src, to } => {
            let n = instrs[*src].numel();
            let mut bytes = [0u64; 2];
            bytes[(1 - *to) as usize] = share_bytes(n, ring);
            report.charge(Category::Other, bytes, 1);
        }
        _ => {}
    }
}

/// Price an aligned program pair. Equals the runtime counters byte-exactly.
pub fn static_cost(p0: &PartyProgram, p1: &PartyProgram) -> CostReport {
    debug_assert_eq!(p0.instrs.len(), p1.instrs.len());
    let mut report = CostReport::default();
    for cat in Category::all() {
        report.by_category.insert(cat, CatCost::default());
    }
    for instr in &p0.instrs {
        instr_cost(instr, &p0.instrs, p0.ring, &mut report);
    }
    let _ = p1;
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ltz_gate_counts() {
        // w=64: m=63: 63 + 2*(62+61+59+55+47+31) = 693
        assert_eq!(ltz_and_gates(64), 693);
        // w=33: m=32: 32 + 2*(31+30+28+24+16) = 290
        assert_eq!(ltz_and_gates(33), 290);
        assert_eq!(ltz_and_gates(1), 0);
        assert_eq!(ltz_and_gates(2), 1);
    }

    #[test]
    fn window_ratio_near_w_log_w() {
        // Bytes ratio w=33 vs w=64 tracks 33*log2(33) / (64*log2(64)).
        let n = 10_000;
        let ratio = ltz_bytes_per_party(n, 33) as f64 / ltz_bytes_per_party(n, 64) as f64;
        let model = 33.0 * (33.0f64).log2() / (64.0 * 6.0);
        assert!((ratio / model - 1.0).abs() < 0.05, "ratio {ratio} vs model {model}");
    }

    #[test]
    fn max_levels_tree() {
        assert_eq!(max_levels(4), vec![2, 1]);
        assert_eq!(max_levels(8), vec![4, 2, 1]);
        assert_eq!(max_levels(1), Vec::<usize>::new());
        assert_eq!(max_levels(5).iter().sum::<usize>(), 4);
    }

    #[test]
    fn beaver_bytes() {
        // One multiplication of 100 elements at N=64: 100 * 2 * 8 per party.
        assert_eq!(beaver_bytes_per_party(100, Ring::new(64)), 1600);
    }
}
