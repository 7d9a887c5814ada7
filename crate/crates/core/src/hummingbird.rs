//! Calibration-based comparison windows: record the value range flowing
//! into every comparison site on plaintext runs, then shrink each site's
//! comparison window to just cover the observed (margin-scaled) hull.
//!
//! A comparison with window `w` is only correct for values in
//! `[-2^(w-1), 2^(w-1))`; values outside may produce wrong results, so
//! windows trade communication for a calibration-backed range guess.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::{InstrOp, PartyProgram};
use crate::error::Result;
use crate::graph::{Graph, OpKind};
use crate::interp::interpret_with_hook;
use crate::tensor::Tensor;

/// The static conservative window: values guessed to lie in
/// `[-2^32, 2^32)`.
pub const STATIC_WINDOW: u32 = 33;

/// Raw observed range of comparison operands at one site, in real units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawRange {
    pub min: f64,
    pub max: f64,
}

impl RawRange {
    fn update(&mut self, v: f64) {
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }
}

/// Final per-site window assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteRange {
    pub site_id: String,
    /// Fixed-point hull actually observed (scaled by the lowered operand's
    /// scale, margin not included).
    pub observed_min: i64,
    pub observed_max: i64,
    pub margin_factor: f64,
    pub window: u32,
    /// Set when the margin leaves little headroom for deployment data
    /// outside the calibration distribution.
    pub violation_possible: bool,
}

/// Run the graph on every calibration sample and record min/max of each
/// comparison operand: the input of `ltz` sites, and the pairwise-difference
/// hull `±(max-min)` of `max`/`max_pool` sites (every tree comparison is a
/// difference of two group elements, so it lies in that hull).
///
/// Sites never executed are absent from the map and fall back to the static
/// window.
pub fn record_ranges(
    graph: &Graph,
    dataset: &[BTreeMap<String, Tensor>],
) -> Result<BTreeMap<String, RawRange>> {
    let mut ranges: BTreeMap<String, RawRange> = BTreeMap::new();
    for inputs in dataset {
        let mut hook = |node: &crate::graph::Node, t: &Tensor| {
            if t.is_empty() {
                return;
            }
            let site = node.site();
            let (lo, hi) = t
                .data
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let entry = ranges
                .entry(site)
                .or_insert(RawRange { min: f64::INFINITY, max: f64::NEG_INFINITY });
            match node.op {
                OpKind::Ltz => {
                    entry.update(lo);
                    entry.update(hi);
                }
                // Tree comparisons see differences of two group elements.
                _ => {
                    let span = hi - lo;
                    entry.update(-span);
                    entry.update(span);
                }
            }
        };
        interpret_with_hook(graph, inputs, &mut hook)?;
    }
    Ok(ranges)
}

/// Window covering `margin * hull` at fixed-point scale `2^scale_exp`:
/// the smallest `w` with `2^(w-1)` strictly above the scaled hull, clamped
/// to `[8, ring_width]`.
fn window_for(range: RawRange, margin: f64, scale_exp: u32, ring_width: u32) -> u32 {
    let hull = range.min.abs().max(range.max.abs());
    let needed = (margin * hull * (scale_exp as f64).exp2()).floor();
    let bits = if needed < 1.0 { 0 } else { 64 - (needed as u64).leading_zeros() };
    (bits + 1).clamp(8, ring_width)
}

/// Rewrite every comparison instruction's window from the recorded ranges;
/// unknown sites keep `static_default`. Returns the per-site report.
pub fn apply_windows(
    programs: (&PartyProgram, &PartyProgram),
    ranges: &BTreeMap<String, RawRange>,
    margin_factor: f64,
    static_default: u32,
) -> (PartyProgram, PartyProgram, Vec<SiteRange>) {
    let (p0, p1) = programs;
    let ring_width = p0.ring.width;
    let mut report: BTreeMap<String, SiteRange> = BTreeMap::new();

    let mut rewrite = |prog: &PartyProgram| -> PartyProgram {
        let mut out = prog.clone();
        for instr in out.instrs.iter_mut() {
            let scale_exp = match &instr.op {
                InstrOp::LtzMpc { src, .. } | InstrOp::MaxKernel { src, .. } => {
                    prog.instrs[*src].ty.scale.exp()
                }
                _ => continue,
            };
            let new_window = match ranges.get(&instr.site) {
                Some(range) => {
                    let w = window_for(*range, margin_factor, scale_exp, ring_width);
                    let scale = (scale_exp as f64).exp2();
                    report.entry(instr.site.clone()).or_insert(SiteRange {
                        site_id: instr.site.clone(),
                        observed_min: (range.min * scale).floor() as i64,
                        observed_max: (range.max * scale).ceil() as i64,
                        margin_factor,
                        window: w,
                        violation_possible: margin_factor < 2.0 && w < ring_width,
                    });
                    w
                }
                None => static_default,
            };
            match &mut instr.op {
                InstrOp::LtzMpc { window, .. } | InstrOp::MaxKernel { window, .. } => {
                    *window = new_window;
                }
                _ => unreachable!(),
            }
        }
        out
    };

    let q0 = rewrite(p0);
    let q1 = rewrite(p1);
    (q0, q1, report.into_values().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{builtin_passes, rewrite_fixpoint, KnobAssignment};
    use crate::backend::lower_pair;
    use crate::frontend::propagate_ownership;

    #[test]
    fn unrecorded_sites_keep_the_static_default() {
        let fx = crate::fixtures::mlp(2, 3);
        let annotated = propagate_ownership(&fx.graph, &fx.annotation).unwrap();
        let (rewritten, _) =
            rewrite_fixpoint(&annotated, &builtin_passes(), &KnobAssignment::default()).unwrap();
        let (p0, p1) = lower_pair(&rewritten, &Default::default()).unwrap();
        let (q0, _, report) = apply_windows((&p0, &p1), &BTreeMap::new(), 2.0, STATIC_WINDOW);
        assert!(report.is_empty());
        for instr in &q0.instrs {
            if let InstrOp::LtzMpc { window, .. } | InstrOp::MaxKernel { window, .. } = instr.op {
                assert_eq!(window, STATIC_WINDOW);
            }
        }
    }

    #[test]
    fn window_formula() {
        // Values spanning [-3, 3] at scale 2^16 with margin 2:
        // ceil stages give floor(2 * 3 * 65536) = 393216, 19 bits, w = 20.
        let r = RawRange { min: -3.0, max: 3.0 };
        assert_eq!(window_for(r, 2.0, 16, 64), 20);
        // Constant-zero input clamps to the floor window.
        let z = RawRange { min: 0.0, max: 0.0 };
        assert_eq!(window_for(z, 2.0, 16, 64), 8);
        // Huge ranges clamp to the ring width.
        let big = RawRange { min: -1e18, max: 1e18 };
        assert_eq!(window_for(big, 2.0, 16, 64), 64);
        // Ranges beyond +-2^31 grow the window past the static guess.
        let wide = RawRange { min: -70000.0, max: 70000.0 };
        assert!(window_for(wide, 2.0, 16, 64) > STATIC_WINDOW);
    }
}
