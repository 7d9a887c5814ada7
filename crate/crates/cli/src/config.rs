//! Project configuration: one JSON file driving every command, with a few
//! CLI flag overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mpcc_core::approx::{builtin_passes, pass_by_name, PassDescriptor};
use mpcc_core::backend::LowerConfig;
use mpcc_core::error::{Error, Result};
use mpcc_core::fixedpoint::Scale;
use mpcc_core::frontend::Annotation;
use mpcc_core::pipeline::{HummingbirdMode, PipelineConfig};
use mpcc_core::runtime::Seeds;
use mpcc_core::tuner::TunerConfig;

/// Inline value or a path to a JSON file holding it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Loadable<T> {
    Path(String),
    Inline(T),
}

impl<T: serde::de::DeserializeOwned + Clone> Loadable<T> {
    pub fn load(&self, base: &Path) -> Result<T> {
        match self {
            Loadable::Inline(v) => Ok(v.clone()),
            Loadable::Path(p) => {
                let path = base.join(p);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::parse(&e))
            }
        }
    }
}

/// Per-knob declaration: pin a value or expose a (sub)range to the tuner.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnobDecl {
    Fixed(i64),
    Tune([i64; 2]),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PassConfig {
    pub name: String,
    #[serde(default)]
    pub knobs: BTreeMap<String, KnobDecl>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectConfig {
    pub graph: String,
    pub annotation: Loadable<Annotation>,
    /// Pass selection with fixed/tunable knob declarations; all built-in
    /// passes at their defaults when omitted.
    #[serde(default)]
    pub passes: Option<Vec<PassConfig>>,
    #[serde(default)]
    pub tuner: Option<TunerConfig>,
    /// Tuning / calibration dataset path.
    #[serde(default)]
    pub dataset: Option<String>,
    #[serde(default = "default_ring_width")]
    pub ring_width: u32,
    /// Fixed-point scale as a base-2 exponent.
    #[serde(default = "default_scale_exp")]
    pub scale: u32,
    #[serde(default)]
    pub hummingbird: HummingbirdMode,
    #[serde(default = "default_margin")]
    pub margin_factor: f64,
    /// Reveal target; defaults to the owner of the first annotated input.
    #[serde(default)]
    pub reveal_to: Option<u8>,
    #[serde(default)]
    pub seeds: Seeds,
    /// Inputs for `run`: name -> tensor or file path (.json/.bin/.csv).
    #[serde(default)]
    pub inputs: Option<Loadable<BTreeMap<String, crate::io::TensorRef>>>,
    /// Also interpret in plaintext during `run` and print the deviation.
    #[serde(default = "default_true")]
    pub compare_plaintext: bool,
}

fn default_ring_width() -> u32 {
    64
}

fn default_scale_exp() -> u32 {
    16
}

fn default_margin() -> f64 {
    2.0
}

fn default_true() -> bool {
    true
}

impl ProjectConfig {
    pub fn load(path: &Path) -> Result<(ProjectConfig, PathBuf)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ProjectConfig = serde_json::from_str(&text).map_err(|e| Error::parse(&e))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok((cfg, base))
    }

    /// Resolve the pass list: selected passes in config order (or every
    /// built-in), with knob declarations applied and validated.
    pub fn passes(&self) -> Result<Vec<PassDescriptor>> {
        let Some(configs) = &self.passes else {
            return Ok(builtin_passes());
        };
        let mut out = Vec::new();
        for pc in configs {
            let mut pass = pass_by_name(&pc.name)?;
            for (knob, decl) in &pc.knobs {
                let spec = pass
                    .knobs
                    .iter_mut()
                    .find(|s| &s.name == knob)
                    .ok_or_else(|| {
                        Error::Config(format!("pass {} has no knob \"{knob}\"", pc.name))
                    })?;
                match decl {
                    KnobDecl::Fixed(v) => {
                        if *v < spec.lo || *v > spec.hi {
                            return Err(Error::Config(format!(
                                "pass {} knob {knob}: fixed value {v} outside [{}, {}]",
                                pc.name, spec.lo, spec.hi
                            )));
                        }
                        spec.current = *v;
                        spec.tunable = false;
                    }
                    KnobDecl::Tune([lo, hi]) => {
                        if lo > hi || *lo < spec.lo || *hi > spec.hi {
                            return Err(Error::Config(format!(
                                "pass {} knob {knob}: range [{lo}, {hi}] outside [{}, {}]",
                                pc.name, spec.lo, spec.hi
                            )));
                        }
                        spec.lo = *lo;
                        spec.hi = *hi;
                        spec.current = *hi;
                        spec.tunable = true;
                    }
                }
            }
            out.push(pass);
        }
        Ok(out)
    }

    pub fn pipeline_config(&self, annotation: &Annotation, graph: &mpcc_core::Graph) -> PipelineConfig {
        let reveal_to = self.reveal_to.unwrap_or_else(|| annotation.default_reveal_to(graph));
        PipelineConfig {
            lower: LowerConfig {
                ring_width: self.ring_width,
                default_scale: Scale(self.scale),
                reveal_to,
                comparison_window: self.ring_width,
            },
            hummingbird: self.hummingbird,
            margin_factor: self.margin_factor,
        }
    }

    /// Lowering config for candidate pricing during tuning: the comparison
    /// window matches what compilation will use (per-site recorded windows
    /// are not known yet, so recorded mode prices at the static guess).
    pub fn lower_config(&self, annotation: &Annotation, graph: &mpcc_core::Graph) -> LowerConfig {
        let mut lower = self.pipeline_config(annotation, graph).lower;
        lower.comparison_window =
            mpcc_core::pipeline::effective_window(self.hummingbird, lower.ring_width);
        lower
    }
}
