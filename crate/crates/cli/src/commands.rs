//! The four batch commands: compile, tune, run, report.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use mpcc_core::approx::KnobAssignment;
use mpcc_core::backend::cost::{static_cost, Category, CostReport};
use mpcc_core::backend::PartyProgram;
use mpcc_core::error::Error;
use mpcc_core::graph::Graph;
use mpcc_core::interp::interpret;
use mpcc_core::pipeline::{compile, HummingbirdMode};
use mpcc_core::runtime::{execute, ExecOptions};
use mpcc_core::tuner::tune;

use crate::config::ProjectConfig;

/// Exit codes: 1 config, 2 compile, 3 protocol, 4 acceptance mismatch.
pub struct CmdError {
    pub code: u8,
    pub message: String,
}

type CmdResult = Result<(), CmdError>;

fn code_of(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::MissingAnnotation(_) | Error::Io(_) => 1,
        Error::Protocol { .. } | Error::Dealer(_) => 3,
        _ => 2,
    }
}

fn stage(st: &'static str) -> impl Fn(Error) -> CmdError {
    move |e| CmdError { code: code_of(&e), message: format!("stage {st}: {e}") }
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CmdError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CmdError { code: 1, message: format!("cannot create {}: {e}", dir.display()) })?;
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CmdError { code: 2, message: format!("serialize {name}: {e}") })?;
    text.push('\n');
    let path = dir.join(name);
    std::fs::write(&path, text)
        .map_err(|e| CmdError { code: 1, message: format!("cannot write {}: {e}", path.display()) })
}

fn read_json<T: serde::de::DeserializeOwned>(dir: &Path, name: &str) -> Result<T, CmdError> {
    let path = dir.join(name);
    let text = std::fs::read_to_string(&path).map_err(|e| CmdError {
        code: 1,
        message: format!("cannot read {} (compile first?): {e}", path.display()),
    })?;
    serde_json::from_str(&text)
        .map_err(|e| CmdError { code: 1, message: format!("parse {}: {e}", path.display()) })
}

struct Loaded {
    graph: Graph,
    annotation: mpcc_core::frontend::Annotation,
    passes: Vec<mpcc_core::approx::PassDescriptor>,
}

fn load_front(cfg: &ProjectConfig, base: &Path) -> Result<Loaded, CmdError> {
    let graph_path = base.join(&cfg.graph);
    let text = std::fs::read_to_string(&graph_path).map_err(|e| CmdError {
        code: 1,
        message: format!("stage config: cannot read graph {}: {e}", graph_path.display()),
    })?;
    let graph = Graph::from_json(&text).map_err(stage("parse-graph"))?;
    let annotation = cfg.annotation.load(base).map_err(stage("config"))?;
    let passes = cfg.passes().map_err(stage("config"))?;
    Ok(Loaded { graph, annotation, passes })
}

fn load_knobs(out_dir: &Path) -> KnobAssignment {
    std::fs::read_to_string(out_dir.join("knobs.json"))
        .ok()
        .and_then(|text| KnobAssignment::from_json(&text).ok())
        .unwrap_or_default()
}

pub fn cmd_compile(cfg: &ProjectConfig, base: &Path, out_dir: &Path) -> CmdResult {
    let front = load_front(cfg, base)?;
    let pipe_cfg = cfg.pipeline_config(&front.annotation, &front.graph);
    let knobs = load_knobs(out_dir);

    let calibration: Option<Vec<BTreeMap<String, mpcc_core::Tensor>>> =
        if pipe_cfg.hummingbird == HummingbirdMode::Recorded {
            let path = cfg.dataset.as_ref().ok_or_else(|| CmdError {
                code: 1,
                message: "stage config: hummingbird recorded mode needs \"dataset\"".into(),
            })?;
            let ds = crate::io::load_dataset(base, path).map_err(stage("config"))?;
            Some(ds.into_iter().map(|s| s.inputs).collect())
        } else {
            None
        };

    let compiled = compile(
        &front.graph,
        &front.annotation,
        &front.passes,
        &knobs,
        &pipe_cfg,
        calibration.as_deref(),
    )
    .map_err(stage("compile"))?;

    write_json(out_dir, "graph.json", &compiled.graph)?;
    write_json(out_dir, "party0.json", &compiled.programs.0)?;
    write_json(out_dir, "party1.json", &compiled.programs.1)?;
    write_json(out_dir, "cost.json", &compiled.cost)?;
    if !compiled.ranges.is_empty() {
        write_json(out_dir, "ranges.json", &compiled.ranges)?;
    }
    println!(
        "compiled {} nodes -> {} instructions/party, typecheck ok",
        compiled.graph.nodes.len(),
        compiled.programs.0.instrs.len()
    );
    println!(
        "static cost: {} + {} bytes, {} rounds",
        compiled.cost.bytes[0], compiled.cost.bytes[1], compiled.cost.rounds
    );
    Ok(())
}

pub fn cmd_tune(cfg: &ProjectConfig, base: &Path, out_dir: &Path) -> CmdResult {
    let front = load_front(cfg, base)?;
    let tuner_cfg = cfg.tuner.clone().ok_or_else(|| CmdError {
        code: 1,
        message: "stage config: \"tuner\" section is required for tune".into(),
    })?;
    let dataset_path = cfg.dataset.as_ref().ok_or_else(|| CmdError {
        code: 1,
        message: "stage config: \"dataset\" is required for tune".into(),
    })?;
    let dataset = crate::io::load_dataset(base, dataset_path).map_err(stage("config"))?;
    let lower = cfg.lower_config(&front.annotation, &front.graph);

    let annotated = mpcc_core::frontend::propagate_ownership(&front.graph, &front.annotation)
        .map_err(stage("frontend"))?;
    let result =
        tune(&annotated, &front.passes, &tuner_cfg, &dataset, &lower).map_err(stage("tune"))?;

    write_json(out_dir, "knobs.json", &result.assignment)?;
    write_json(out_dir, "tune_report.json", &result.report)?;
    let r = &result.report;
    println!(
        "tuned {} knobs in {} evaluations: quality {:.6} -> {:.6} (threshold {}), bytes {} -> {}",
        r.sites.len(),
        r.evaluations,
        r.baseline_quality,
        r.final_quality,
        r.threshold,
        r.cost_before,
        r.cost_after
    );
    if r.budget_exhausted {
        println!("warning: step budget exhausted, returning best assignment so far");
    }
    Ok(())
}

pub fn cmd_run(cfg: &ProjectConfig, base: &Path, out_dir: &Path) -> CmdResult {
    let p0: PartyProgram = read_json(out_dir, "party0.json")?;
    let p1: PartyProgram = read_json(out_dir, "party1.json")?;
    let predicted: CostReport = read_json(out_dir, "cost.json")?;

    let input_refs = cfg
        .inputs
        .as_ref()
        .ok_or_else(|| CmdError { code: 1, message: "stage config: \"inputs\" is required for run".into() })?
        .load(base)
        .map_err(stage("config"))?;
    let inputs = crate::io::load_inputs(base, &input_refs).map_err(stage("config"))?;

    let out = execute(&p0, &p1, &inputs, cfg.seeds, ExecOptions::default()).map_err(stage("run"))?;

    write_json(out_dir, "outputs.json", &out.outputs)?;
    write_json(out_dir, "run_cost.json", &out.cost)?;
    write_json(out_dir, "transcript.json", &out.transcript)?;
    println!(
        "ran {} instructions/party: {} + {} bytes, {} rounds",
        p0.instrs.len(),
        out.cost.bytes[0],
        out.cost.bytes[1],
        out.cost.rounds
    );

    if cfg.compare_plaintext {
        if let Ok(graph) = read_json::<Graph>(out_dir, "graph.json") {
            let plain = interpret(&graph, &inputs).map_err(stage("run"))?;
            let dev = plain
                .iter()
                .zip(&out.outputs)
                .map(|(a, b)| a.max_abs_diff(b))
                .fold(0.0, f64::max);
            println!("max abs deviation vs plaintext: {dev:.3e}");
        }
    }

    // The static model must price the execution byte-exactly.
    let recomputed = static_cost(&p0, &p1);
    if recomputed != predicted {
        return Err(CmdError {
            code: 4,
            message: "stage run: cost.json does not match the compiled programs".into(),
        });
    }
    if out.cost != predicted {
        return Err(CmdError {
            code: 4,
            message: format!(
                "stage run: measured cost diverges from static model: measured {:?} vs static {:?}",
                out.cost, predicted
            ),
        });
    }
    println!("measured counters match the static cost model");
    Ok(())
}

pub fn cmd_report(out_dir: &Path) -> CmdResult {
    let cost: CostReport = read_json(out_dir, "run_cost.json")
        .or_else(|_| read_json(out_dir, "cost.json"))?;
    let total_bytes = cost.total_bytes();
    let total_rounds = cost.rounds;

    println!("{:<12} {:>12} {:>8} {:>8} {:>8}", "category", "bytes", "bytes%", "rounds", "rounds%");
    let mut rows = Vec::new();
    for cat in Category::all() {
        let c = cost.by_category.get(&cat).copied().unwrap_or_default();
        if c.bytes == 0 && c.rounds == 0 {
            continue;
        }
        let bp = if total_bytes > 0 { 100.0 * c.bytes as f64 / total_bytes as f64 } else { 0.0 };
        let rp = if total_rounds > 0 { 100.0 * c.rounds as f64 / total_rounds as f64 } else { 0.0 };
        println!("{:<12} {:>12} {:>7.1}% {:>8} {:>7.1}%", cat.name(), c.bytes, bp, c.rounds, rp);
        rows.push((cat.name(), c.bytes, bp, c.rounds, rp));
    }
    println!("{:<12} {:>12} {:>8} {:>8}", "total", total_bytes, "", total_rounds);

    #[derive(Serialize)]
    struct ReportRow {
        category: &'static str,
        bytes: u64,
        bytes_pct: f64,
        rounds: u64,
        rounds_pct: f64,
    }
    #[derive(Serialize)]
    struct ReportFile {
        total_bytes: u64,
        total_rounds: u64,
        rows: Vec<ReportRow>,
    }
    let file = ReportFile {
        total_bytes,
        total_rounds,
        rows: rows
            .into_iter()
            .map(|(category, bytes, bytes_pct, rounds, rounds_pct)| ReportRow {
                category,
                bytes,
                bytes_pct,
                rounds,
                rounds_pct,
            })
            .collect(),
    };
    write_json(out_dir, "report.json", &file)
}
