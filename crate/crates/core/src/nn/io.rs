//! JSON model files.
//!
//! Layers are stored flat, in [`NetworkModel::layers`] order, with row-major
//! weights; `merge_topology` says which layers belong to which branch and
//! which form the trunk.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::layer::{Activation, DenseLayer};
use super::network::{Branch, Head, InputSpec, NetworkModel};
use crate::error::{Error, Result};
use crate::preprocess::VariantId;

pub const MODEL_FORMAT: &str = "rtp-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDocument {
    /// `[outputs, inputs]`.
    pub shape: [usize; 2],
    pub activation: Activation,
    pub l1: f64,
    pub l2: f64,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchTopology {
    pub input: InputSpec,
    pub layers: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeTopology {
    pub branches: Vec<BranchTopology>,
    pub aux: Vec<InputSpec>,
    pub trunk: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub format_version: u32,
    pub variant_id: Option<VariantId>,
    pub head: Head,
    pub layers: Vec<LayerDocument>,
    pub merge_topology: MergeTopology,
}

impl ModelDocument {
    pub fn from_model(model: &NetworkModel) -> Self {
        let layers: Vec<LayerDocument> = model
            .layers()
            .map(|l| LayerDocument {
                shape: [l.outputs(), l.inputs()],
                activation: l.activation,
                l1: l.l1,
                l2: l.l2,
                weights: l.weights.iter().copied().collect(),
                biases: l.biases.to_vec(),
            })
            .collect();
        let mut next = 0;
        let mut take = |n: usize| {
            let ids: Vec<usize> = (next..next + n).collect();
            next += n;
            ids
        };
        let branches = model
            .branches
            .iter()
            .map(|b| BranchTopology {
                input: b.input.clone(),
                layers: take(b.layers.len()),
            })
            .collect();
        let trunk = take(model.trunk.len());
        Self {
            format: MODEL_FORMAT.into(),
            format_version: FORMAT_VERSION,
            variant_id: model.variant_id,
            head: model.head,
            layers,
            merge_topology: MergeTopology {
                branches,
                aux: model.aux.clone(),
                trunk,
            },
        }
    }

    pub fn into_model(self) -> Result<NetworkModel> {
        let corrupt = |m: String| Error::Corrupt(m);
        let mut slots: Vec<Option<DenseLayer>> = Vec::with_capacity(self.layers.len());
        for (i, doc) in self.layers.into_iter().enumerate() {
            let [outputs, inputs] = doc.shape;
            let weights = Array2::from_shape_vec((outputs, inputs), doc.weights)
                .map_err(|e| corrupt(format!("layer {i} weights: {e}")))?;
            if doc.biases.len() != outputs {
                return Err(corrupt(format!(
                    "layer {i}: {} biases for {outputs} outputs",
                    doc.biases.len()
                )));
            }
            slots.push(Some(DenseLayer {
                weights,
                biases: Array1::from(doc.biases),
                activation: doc.activation,
                l1: doc.l1,
                l2: doc.l2,
            }));
        }
        let mut claim = |ids: &[usize]| -> Result<Vec<DenseLayer>> {
            ids.iter()
                .map(|&i| {
                    slots
                        .get_mut(i)
                        .and_then(Option::take)
                        .ok_or_else(|| corrupt(format!("layer {i} missing or used twice")))
                })
                .collect()
        };
        let topo = self.merge_topology;
        let branches = topo
            .branches
            .iter()
            .map(|b| {
                Ok(Branch {
                    input: b.input.clone(),
                    layers: claim(&b.layers)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let trunk = claim(&topo.trunk)?;
        if slots.iter().any(Option::is_some) {
            return Err(corrupt("layers not referenced by the topology".into()));
        }
        let model = NetworkModel {
            variant_id: self.variant_id,
            branches,
            aux: topo.aux,
            trunk,
            head: self.head,
        };
        model.validate().map_err(|e| corrupt(e.to_string()))?;
        Ok(model)
    }

    /// Parses a document, checking the format tag and version before the
    /// body.
    pub fn from_value(value: Value) -> Result<Self> {
        check_header(&value, MODEL_FORMAT, FORMAT_VERSION)?;
        serde_json::from_value(value).map_err(|e| Error::Corrupt(e.to_string()))
    }
}

/// Verifies the `format` tag and `format_version` of a parsed file.
pub(crate) fn check_header(value: &Value, format: &str, version: u32) -> Result<()> {
    let found = value.get("format").and_then(Value::as_str);
    if found != Some(format) {
        return Err(Error::Version(format!(
            "expected format `{format}`, found {}",
            found.map_or("none".to_string(), |f| format!("`{f}`"))
        )));
    }
    let found_version = value.get("format_version").and_then(Value::as_u64);
    if found_version != Some(version as u64) {
        return Err(Error::Version(format!(
            "expected format_version {version}, found {}",
            found_version.map_or("none".to_string(), |v| v.to_string())
        )));
    }
    Ok(())
}

pub(crate) fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Corrupt(format!("{}: {e}", path.display())))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn save_model(model: &NetworkModel, path: &Path) -> Result<()> {
    write_json(path, &ModelDocument::from_model(model))
}

pub fn load_model(path: &Path) -> Result<NetworkModel> {
    ModelDocument::from_value(read_json(path)?)?.into_model()
}
