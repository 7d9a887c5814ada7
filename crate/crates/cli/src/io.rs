//! Tensor and dataset file formats: inline JSON, little-endian float64
//! binaries with a JSON sidecar, and CSV for small cases.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use mpcc_core::error::{Error, Result};
use mpcc_core::tensor::Tensor;
use mpcc_core::tuner::Dataset;

/// A tensor given inline or as a file reference.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TensorRef {
    Path(String),
    Inline(Tensor),
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    shape: Vec<usize>,
    dtype: String,
}

pub fn load_tensor(base: &Path, r: &TensorRef) -> Result<Tensor> {
    match r {
        TensorRef::Inline(t) => Ok(t.clone()),
        TensorRef::Path(p) => {
            let path = base.join(p);
            let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
            match ext {
                "json" => {
                    let text = read(&path)?;
                    serde_json::from_str(&text).map_err(|e| Error::parse(&e))
                }
                "bin" => {
                    let sidecar_path = path.with_extension("json");
                    let sidecar: Sidecar = serde_json::from_str(&read(&sidecar_path)?)
                        .map_err(|e| Error::parse(&e))?;
                    if sidecar.dtype != "f64" {
                        return Err(Error::Config(format!(
                            "binary tensor {} has dtype {}, only f64 is supported",
                            path.display(),
                            sidecar.dtype
                        )));
                    }
                    let bytes = std::fs::read(&path)
                        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                    if bytes.len() % 8 != 0 {
                        return Err(Error::Config(format!("{} is not a float64 array", path.display())));
                    }
                    let data: Vec<f64> = bytes
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    let expect: usize = sidecar.shape.iter().product();
                    if data.len() != expect {
                        return Err(Error::Config(format!(
                            "{}: {} values for shape {:?}",
                            path.display(),
                            data.len(),
                            sidecar.shape
                        )));
                    }
                    Ok(Tensor::new(sidecar.shape, data))
                }
                "csv" => {
                    let text = read(&path)?;
                    let mut rows = Vec::new();
                    let mut width = None;
                    for line in text.lines().filter(|l| !l.trim().is_empty()) {
                        let row: Vec<f64> = line
                            .split(',')
                            .map(|v| v.trim().parse::<f64>())
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                        if *width.get_or_insert(row.len()) != row.len() {
                            return Err(Error::Config(format!("{}: ragged csv rows", path.display())));
                        }
                        rows.push(row);
                    }
                    let width = width.unwrap_or(0);
                    let data: Vec<f64> = rows.into_iter().flatten().collect();
                    let shape = if data.len() == width {
                        vec![width]
                    } else {
                        vec![data.len() / width.max(1), width]
                    };
                    Ok(Tensor::new(shape, data))
                }
                other => Err(Error::Config(format!("unknown tensor format \".{other}\""))),
            }
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

pub fn load_inputs(base: &Path, refs: &BTreeMap<String, TensorRef>) -> Result<BTreeMap<String, Tensor>> {
    refs.iter()
        .map(|(name, r)| Ok((name.clone(), load_tensor(base, r)?)))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetFile {
    /// Inputs shared by every sample (model weights).
    #[serde(default)]
    pub fixed: BTreeMap<String, TensorRef>,
    pub samples: Vec<SampleFile>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SampleFile {
    pub inputs: BTreeMap<String, TensorRef>,
    pub references: Vec<TensorRef>,
}

pub fn load_dataset(base: &Path, path: &str) -> Result<Dataset> {
    let full = base.join(path);
    let file: DatasetFile =
        serde_json::from_str(&read(&full)?).map_err(|e| Error::parse(&e))?;
    let dir = full.parent().unwrap_or(Path::new(".")).to_path_buf();
    let fixed = load_inputs(&dir, &file.fixed)?;
    file.samples
        .into_iter()
        .map(|s| {
            let mut inputs = fixed.clone();
            inputs.extend(load_inputs(&dir, &s.inputs)?);
            Ok(mpcc_core::tuner::Sample {
                inputs,
                references: s
                    .references
                    .iter()
                    .map(|r| load_tensor(&dir, r))
                    .collect::<Result<_>>()?,
            })
        })
        .collect()
}

/// Write a tensor as a float64 binary plus its JSON sidecar.
pub fn write_binary_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut bytes = Vec::with_capacity(t.data.len() * 8);
    for v in &t.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    let sidecar = Sidecar { shape: t.shape.clone(), dtype: "f64".into() };
    let mut text = serde_json::to_string_pretty(&sidecar).unwrap();
    text.push('\n');
    std::fs::write(path.with_extension("json"), text)?;
    Ok(())
}
