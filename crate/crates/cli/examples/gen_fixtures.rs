//! Regenerates the checked-in fixture projects under `fixtures/`.
//!
//! Run with: `cargo run -p mpcc-cli --example gen_fixtures`

use std::collections::BTreeMap;
use std::path::Path;

use mpcc_cli::config::{Loadable, PassConfig, ProjectConfig};
use mpcc_cli::io::{write_binary_tensor, DatasetFile, SampleFile, TensorRef};
use mpcc_core::fixtures::{self, Fixture};
use mpcc_core::pipeline::HummingbirdMode;
use mpcc_core::runtime::Seeds;
use mpcc_core::tensor::Tensor;
use mpcc_core::tuner::{LossFn, Strategy, TunerConfig};

fn write_json<T: serde::Serialize>(path: &Path, value: &T) {
    let mut text = serde_json::to_string_pretty(value).unwrap();
    text.push('\n');
    std::fs::write(path, text).unwrap();
}

fn inline(t: &Tensor) -> TensorRef {
    TensorRef::Inline(t.clone())
}

/// Split a fixture's dataset into the shared fixed inputs and per-sample
/// varying inputs, and write the project files.
fn write_fixture(fx: &Fixture, dir: &Path, threshold: f64, run_input_files: bool) {
    std::fs::create_dir_all(dir).unwrap();
    write_json(&dir.join("graph.json"), &fx.graph);
    write_json(&dir.join("annotation.json"), &fx.annotation);

    let dataset = DatasetFile {
        fixed: fx.fixed_inputs.iter().map(|(k, v)| (k.clone(), inline(v))).collect(),
        samples: fx
            .dataset
            .iter()
            .map(|s| SampleFile {
                inputs: s
                    .inputs
                    .iter()
                    .filter(|(k, _)| !fx.fixed_inputs.contains_key(*k))
                    .map(|(k, v)| (k.clone(), inline(v)))
                    .collect(),
                references: s.references.iter().map(inline).collect(),
            })
            .collect(),
    };
    write_json(&dir.join("dataset.json"), &dataset);

    // Run inputs: optionally exercise the binary and csv loaders.
    let mut run_refs: BTreeMap<String, TensorRef> = BTreeMap::new();
    for (name, t) in &fx.run_inputs {
        run_refs.insert(name.clone(), inline(t));
    }
    if run_input_files {
        let x = &fx.run_inputs["x"];
        write_binary_tensor(&dir.join("x.bin"), x).unwrap();
        run_refs.insert("x".into(), TensorRef::Path("x.bin".into()));
        let w1 = &fx.run_inputs["w1"];
        let mut csv = String::new();
        for row in w1.data.chunks(w1.shape[1]) {
            let cells: Vec<String> = row.iter().map(f64::to_string).collect();
            csv.push_str(&cells.join(","));
            csv.push('\n');
        }
        std::fs::write(dir.join("w1.csv"), csv).unwrap();
        run_refs.insert("w1".into(), TensorRef::Path("w1.csv".into()));
    }
    write_json(&dir.join("run_inputs.json"), &run_refs);

    let config = ProjectConfig {
        graph: "graph.json".into(),
        annotation: Loadable::Path("annotation.json".into()),
        passes: Some(
            [
                "LinearPass",
                "CmpPass",
                "SoftmaxPass",
                "LayerNormPass",
                "GeluPass",
                "SiluPass",
                "SigmoidPass",
                "ReciprocalPass",
                "RsqrtPass",
                "ExpPass",
                "ReluPass",
            ]
            .iter()
            .map(|name| PassConfig { name: name.to_string(), knobs: BTreeMap::new() })
            .collect(),
        ),
        tuner: Some(TunerConfig {
            strategy: Strategy::GreedyLinear,
            loss: LossFn::Mse,
            threshold,
            max_steps: None,
            seed: 7,
        }),
        dataset: Some("dataset.json".into()),
        ring_width: 64,
        scale: 16,
        hummingbird: HummingbirdMode::Static,
        margin_factor: 2.0,
        reveal_to: None,
        seeds: Seeds { dealer: 11, sharing: [12, 13] },
        inputs: Some(Loadable::Path("run_inputs.json".into())),
        compare_plaintext: true,
    };
    write_json(&dir.join("config.json"), &config);
    eprintln!("wrote {} ({} samples)", dir.display(), fx.dataset.len());
}

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    write_fixture(&fixtures::mlp(64, 2024), &root.join("mlp"), 1e-4, true);
    write_fixture(&fixtures::transformer_block(256, 4096), &root.join("transformer_block"), 1e-3, false);
    write_fixture(&fixtures::two_softmax(48, 77), &root.join("two_softmax"), 2e-4, false);
}
