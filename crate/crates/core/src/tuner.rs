//! Per-site knob search: minimize communication cost subject to an output
//! quality budget, evaluating candidates on the plaintext runtime only.
//!
//! Quality is always measured relative to the maximally accurate
//! configuration (all knobs at their defaults); a candidate is admissible
//! while its loss exceeds the baseline loss by at most the threshold.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::approx::{rewrite_fixpoint, KnobAssignment, KnobSpec, PassDescriptor};
use crate::backend::cost::static_cost;
use crate::backend::{lower_pair, LowerConfig};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::interp::interpret;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    GreedyLinear,
    HillClimbing,
}

/// Quality metric over (outputs, references). Loss metrics change at a
/// finer granularity than accuracy, so the default is a loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossFn {
    #[default]
    Mse,
    CrossEntropy,
    /// Error rate (1 - accuracy) with the reference argmax as the label.
    Accuracy,
}

impl LossFn {
    pub fn eval(self, output: &Tensor, reference: &Tensor) -> f64 {
        match self {
            LossFn::Mse => {
                let n = output.data.len().max(1) as f64;
                output
                    .data
                    .iter()
                    .zip(&reference.data)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / n
            }
            LossFn::CrossEntropy => {
                let n = output.data.len().max(1) as f64;
                -output
                    .data
                    .iter()
                    .zip(&reference.data)
                    .map(|(p, q)| q * p.max(1e-12).ln())
                    .sum::<f64>()
                    / n
            }
            LossFn::Accuracy => {
                let argmax = |t: &Tensor| {
                    t.data
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.total_cmp(b.1))
                        .map(|(i, _)| i)
                        .unwrap_or(0)
                };
                if argmax(output) == argmax(reference) {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TunerConfig {
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub loss: LossFn,
    /// Maximum allowed quality-loss delta over the baseline, in loss units.
    pub threshold: f64,
    /// Candidate evaluation budget; defaults to 10x the number of tunable
    /// knobs.
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

/// One calibration sample: named inputs plus reference outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sample {
    pub inputs: BTreeMap<String, Tensor>,
    pub references: Vec<Tensor>,
}

pub type Dataset = Vec<Sample>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub site: String,
    pub knob: String,
    pub value: i64,
    pub quality: f64,
    pub cost_bytes: u64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiteKnobReport {
    pub site: String,
    pub pass: String,
    pub knob: String,
    pub lo: i64,
    pub hi: i64,
    pub initial: i64,
    pub chosen: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneReport {
    pub strategy: Strategy,
    pub loss: LossFn,
    pub threshold: f64,
    pub baseline_quality: f64,
    pub final_quality: f64,
    pub cost_before: u64,
    pub cost_after: u64,
    pub evaluations: usize,
    /// Set when the step budget ran out before the search finished.
    pub budget_exhausted: bool,
    pub sites: Vec<SiteKnobReport>,
    pub history: Vec<HistoryEntry>,
}

pub struct TuneResult {
    pub assignment: KnobAssignment,
    pub graph: Graph,
    pub report: TuneReport,
}

/// Mean loss over the dataset after rewriting with the given knobs, plus
/// the static communication bytes of the same graph. Pure and
/// deterministic; never touches the MPC runtime.
pub fn evaluate_candidate(
    graph: &Graph,
    passes: &[PassDescriptor],
    knobs: &KnobAssignment,
    dataset: &Dataset,
    loss: LossFn,
    lower_cfg: &LowerConfig,
) -> Result<(f64, u64)> {
    if dataset.is_empty() {
        return Err(Error::Tuner("empty tuning dataset".into()));
    }
    let (rewritten, _) = rewrite_fixpoint(graph, passes, knobs)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for sample in dataset {
        let outputs = interpret(&rewritten, &sample.inputs)?;
        if outputs.len() != sample.references.len() {
            return Err(Error::Tuner(format!(
                "sample has {} references for {} outputs",
                sample.references.len(),
                outputs.len()
            )));
        }
        for (o, r) in outputs.iter().zip(&sample.references) {
            if o.shape != r.shape {
                return Err(Error::Tuner(format!(
                    "reference shape {:?} does not match output {:?}",
                    r.shape, o.shape
                )));
            }
            total += loss.eval(o, r);
            count += 1;
        }
    }
    let (p0, p1) = lower_pair(&rewritten, lower_cfg)?;
    let cost = static_cost(&p0, &p1);
    Ok((total / count as f64, cost.total_bytes()))
}

/// A tunable knob instance discovered at a rewrite site.
#[derive(Debug, Clone)]
struct TunableKnob {
    site: String,
    pass: String,
    spec: KnobSpec,
}

/// Discover tunable (site, knob) pairs by rewriting at default knobs, then
/// order sites by the topological position of their node in the rewritten
/// graph. Within a site, boolean (clamp-style) knobs come last: removing a
/// clamp is the riskiest decrement.
fn discover_knobs(
    graph: &Graph,
    passes: &[PassDescriptor],
    defaults: &KnobAssignment,
) -> Result<Vec<TunableKnob>> {
    let (rewritten, events) = rewrite_fixpoint(graph, passes, defaults)?;
    let order = crate::graph::topo_order(&rewritten)?;
    let topo_pos: BTreeMap<String, usize> = order
        .iter()
        .enumerate()
        .map(|(pos, id)| (rewritten.nodes[id].site(), pos))
        .collect();

    let mut sites: Vec<(usize, String, String)> = Vec::new();
    for ev in &events {
        let pass = passes.iter().find(|p| p.name == ev.pass).expect("event names a pass");
        if pass.knobs.iter().any(|k| k.tunable) {
            // The replacement's output node carries the site id verbatim.
            let pos = topo_pos.get(&ev.site).copied().unwrap_or(usize::MAX);
            sites.push((pos, ev.site.clone(), ev.pass.clone()));
        }
    }
    sites.sort();

    let mut out = Vec::new();
    for (_, site, pass_name) in sites {
        let pass = passes.iter().find(|p| p.name == pass_name).unwrap();
        let (plain, boolean): (Vec<&KnobSpec>, Vec<&KnobSpec>) =
            pass.knobs.iter().filter(|k| k.tunable).partition(|k| !k.is_boolean());
        for spec in plain.into_iter().chain(boolean) {
            out.push(TunableKnob { site: site.clone(), pass: pass_name.clone(), spec: spec.clone() });
        }
    }
    Ok(out)
}

/// Search knob assignments under the quality budget.
///
/// Greedy-linear visits sites in topological order and decrements one knob
/// at a time, keeping every step whose quality delta stays within the
/// threshold and rolling back the first violating step before moving on.
/// Hill-climbing repeatedly applies the admissible single decrement with
/// the best cost-reduction per quality-delta ratio.
pub fn tune(
    graph: &Graph,
    passes: &[PassDescriptor],
    config: &TunerConfig,
    dataset: &Dataset,
    lower_cfg: &LowerConfig,
) -> Result<TuneResult> {
    if config.threshold < 0.0 {
        return Err(Error::Tuner("threshold must be non-negative".into()));
    }
    let knobs = discover_knobs(graph, passes, &KnobAssignment::default())?;
    let max_steps = config.max_steps.unwrap_or(10 * knobs.len().max(1));

    let mut current = KnobAssignment::default();
    for k in &knobs {
        current.set(&k.site, &k.spec.name, k.spec.current);
    }

    let (baseline_quality, cost_before) =
        evaluate_candidate(graph, passes, &current, dataset, config.loss, lower_cfg)?;
    let mut history = Vec::new();
    let mut evaluations = 0usize;
    let mut budget_exhausted = false;
    let mut quality_now = baseline_quality;
    let mut cost_now = cost_before;

    let eval = |asg: &KnobAssignment, evaluations: &mut usize| -> Result<(f64, u64)> {
        *evaluations += 1;
        evaluate_candidate(graph, passes, asg, dataset, config.loss, lower_cfg)
    };

    match config.strategy {
        Strategy::GreedyLinear => {
            'sites: for k in &knobs {
                loop {
                    let cur = current.get(&k.site, &k.spec.name).unwrap();
                    if cur <= k.spec.lo {
                        break;
                    }
                    if evaluations >= max_steps {
                        budget_exhausted = true;
                        break 'sites;
                    }
                    let mut cand = current.clone();
                    cand.set(&k.site, &k.spec.name, cur - 1);
                    let (q, c) = eval(&cand, &mut evaluations)?;
                    let accepted = q - baseline_quality <= config.threshold;
                    history.push(HistoryEntry {
                        site: k.site.clone(),
                        knob: k.spec.name.clone(),
                        value: cur - 1,
                        quality: q,
                        cost_bytes: c,
                        accepted,
                    });
                    if accepted {
                        current = cand;
                        quality_now = q;
                        cost_now = c;
                    } else {
                        // Roll back the violating step, move to the next knob.
                        break;
                    }
                }
            }
        }
        Strategy::HillClimbing => {
            loop {
                let mut best: Option<(f64, usize, KnobAssignment, f64, u64)> = None;
                for (ki, k) in knobs.iter().enumerate() {
                    let cur = current.get(&k.site, &k.spec.name).unwrap();
                    if cur <= k.spec.lo {
                        continue;
                    }
                    if evaluations >= max_steps {
                        budget_exhausted = true;
                        break;
                    }
                    let mut cand = current.clone();
                    cand.set(&k.site, &k.spec.name, cur - 1);
                    let (q, c) = eval(&cand, &mut evaluations)?;
                    let admissible = q - baseline_quality <= config.threshold;
                    history.push(HistoryEntry {
                        site: k.site.clone(),
                        knob: k.spec.name.clone(),
                        value: cur - 1,
                        quality: q,
                        cost_bytes: c,
                        accepted: false,
                    });
                    if !admissible {
                        continue;
                    }
                    // Best cost reduction per unit of quality loss; a free
                    // decrement scores by pure cost reduction.
                    let cost_red = cost_now.saturating_sub(c) as f64;
                    let quality_delta = (q - quality_now).max(0.0);
                    let score = if quality_delta <= f64::EPSILON {
                        cost_red * 1e18
                    } else {
                        cost_red / quality_delta
                    };
                    if best.as_ref().is_none_or(|(s, bi, ..)| score > *s || (score == *s && ki < *bi)) {
                        best = Some((score, ki, cand, q, c));
                    }
                }
                if budget_exhausted {
                    break;
                }
                match best {
                    Some((_, ki, cand, q, c)) => {
                        current = cand;
                        quality_now = q;
                        cost_now = c;
                        let k = &knobs[ki];
                        history.push(HistoryEntry {
                            site: k.site.clone(),
                            knob: k.spec.name.clone(),
                            value: current.get(&k.site, &k.spec.name).unwrap(),
                            quality: q,
                            cost_bytes: c,
                            accepted: true,
                        });
                    }
                    None => break,
                }
            }
        }
    }

    // The returned assignment is the last accepted state; re-derive the
    // rewritten graph and assert feasibility exactly.
    let (final_quality, cost_after) =
        evaluate_candidate(graph, passes, &current, dataset, config.loss, lower_cfg)?;
    debug_assert!(final_quality - baseline_quality <= config.threshold + f64::EPSILON);
    let _ = (quality_now, cost_now);
    let (rewritten, _) = rewrite_fixpoint(graph, passes, &current)?;

    let sites = knobs
        .iter()
        .map(|k| SiteKnobReport {
            site: k.site.clone(),
            pass: k.pass.clone(),
            knob: k.spec.name.clone(),
            lo: k.spec.lo,
            hi: k.spec.hi,
            initial: k.spec.current,
            chosen: current.get(&k.site, &k.spec.name).unwrap(),
        })
        .collect();

    Ok(TuneResult {
        assignment: current,
        graph: rewritten,
        report: TuneReport {
            strategy: config.strategy,
            loss: config.loss,
            threshold: config.threshold,
            baseline_quality,
            final_quality,
            cost_before,
            cost_after,
            evaluations,
            budget_exhausted,
            sites,
            history,
        },
    })
}
