//! End-to-end compilation: frontend, approximation rewrites, optional
//! comparison-window recording, lowering and static pricing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::approx::{rewrite_fixpoint, KnobAssignment, MatchEvent, PassDescriptor};
use crate::backend::cost::{static_cost, CostReport};
use crate::backend::{lower_pair, typecheck_lowered, LowerConfig, PartyProgram};
use crate::error::{Error, Result};
use crate::frontend::{propagate_ownership, Annotation};
use crate::graph::Graph;
use crate::hummingbird::{apply_windows, record_ranges, SiteRange, STATIC_WINDOW};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HummingbirdMode {
    /// Full-width comparisons.
    Off,
    /// The conservative static guess `[-2^32, 2^32)`.
    #[default]
    Static,
    /// Per-site windows from calibration ranges; unrecorded sites fall back
    /// to the static guess.
    Recorded,
}

#[derive(Debug, Clone, Copy)]
pub struct PipelineConfig {
    pub lower: LowerConfig,
    pub hummingbird: HummingbirdMode,
    pub margin_factor: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            lower: LowerConfig::default(),
            hummingbird: HummingbirdMode::Static,
            margin_factor: 2.0,
        }
    }
}

/// Comparison window implied by a hummingbird mode before any per-site
/// recording is applied.
pub fn effective_window(mode: HummingbirdMode, ring_width: u32) -> u32 {
    match mode {
        HummingbirdMode::Off => ring_width,
        HummingbirdMode::Static | HummingbirdMode::Recorded => STATIC_WINDOW.min(ring_width),
    }
}

#[derive(Debug, Clone)]
pub struct Compiled {
    /// Owner-annotated post-approximation graph.
    pub graph: Graph,
    pub programs: (PartyProgram, PartyProgram),
    pub cost: CostReport,
    pub ranges: Vec<SiteRange>,
    pub events: Vec<MatchEvent>,
}

pub fn compile(
    graph: &Graph,
    annotation: &Annotation,
    passes: &[PassDescriptor],
    knobs: &KnobAssignment,
    cfg: &PipelineConfig,
    calibration: Option<&[BTreeMap<String, Tensor>]>,
) -> Result<Compiled> {
    let annotated = propagate_ownership(graph, annotation)?;
    let (rewritten, events) = rewrite_fixpoint(&annotated, passes, knobs)?;

    let mut lower_cfg = cfg.lower;
    lower_cfg.comparison_window = effective_window(cfg.hummingbird, lower_cfg.ring_width);
    let (mut p0, mut p1) = lower_pair(&rewritten, &lower_cfg)?;

    let mut ranges = Vec::new();
    if cfg.hummingbird == HummingbirdMode::Recorded {
        let data = calibration.ok_or_else(|| {
            Error::Config("hummingbird recorded mode needs a calibration dataset".into())
        })?;
        let raw = record_ranges(&rewritten, data)?;
        let (q0, q1, report) =
            apply_windows((&p0, &p1), &raw, cfg.margin_factor, lower_cfg.comparison_window);
        p0 = q0;
        p1 = q1;
        ranges = report;
    }

    let violations = typecheck_lowered(&p0, &p1);
    if let Some(first) = violations.first() {
        return Err(Error::Lower { site: String::new(), msg: format!("typecheck failed: {first}") });
    }
    let cost = static_cost(&p0, &p1);
    Ok(Compiled { graph: rewritten, programs: (p0, p1), cost, ranges, events })
}
