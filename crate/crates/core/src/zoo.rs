//! The ten named model variants: six classifiers and four regressors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    Activation, Branch, Dataset, DenseLayer, Head, InputSpec, Monitor, NetworkModel,
};
use crate::preprocess::{EncodedSample, FeatureLayout, InputMode, RodFeature, Task, VariantId};
use crate::rng::{self, Stream};

/// Name of the auxiliary input carrying stage-one class probabilities.
pub const CLASS_PROBS_INPUT: &str = "class_probs";
pub const CLASS_COUNT: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub width: usize,
    /// Dense layers per input branch in separated models.
    pub branch_depth: usize,
    /// Dense layers after the merge in separated models.
    pub trunk_depth: usize,
    /// Dense layers in all-in-one models.
    pub aio_depth: usize,
    pub l1: f64,
    pub l2: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            width: 64,
            branch_depth: 2,
            trunk_depth: 2,
            aio_depth: 4,
            l1: 0.0,
            l2: 1e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub variant_id: VariantId,
    pub task: Task,
    pub layout: FeatureLayout,
    pub head: Head,
}

impl VariantSpec {
    pub fn of(variant_id: VariantId) -> Self {
        let task = variant_id.task();
        Self {
            variant_id,
            task,
            layout: FeatureLayout::for_variant(variant_id),
            head: match task {
                Task::Classifier => Head::Softmax5,
                Task::Regressor => Head::Sigmoid1,
            },
        }
    }

    /// Early-stopping monitor: validation accuracy for classifiers; for
    /// regressors, squared error on all-in-one inputs and loss on separated
    /// inputs.
    pub fn default_monitor(&self) -> Monitor {
        match (self.task, self.layout.input_mode) {
            (Task::Classifier, _) => Monitor::ValAccuracy,
            (Task::Regressor, InputMode::AllInOne) => Monitor::ValMse,
            (Task::Regressor, InputMode::Separated) => Monitor::ValLoss,
        }
    }

    /// Model inputs for one encoded sample. Regressors need the stage-one
    /// probability vector.
    pub fn inputs(&self, sample: &EncodedSample, class_probs: Option<&[f64]>) -> Result<Vec<Vec<f64>>> {
        let mut inputs = self.layout.inputs(sample);
        match (self.task, class_probs) {
            (Task::Classifier, _) => {}
            (Task::Regressor, Some(p)) => inputs.push(p.to_vec()),
            (Task::Regressor, None) => {
                return Err(Error::Config(format!(
                    "regressor {} needs classifier probabilities",
                    self.variant_id
                )))
            }
        }
        Ok(inputs)
    }

    pub fn target(&self, sample: &EncodedSample) -> Vec<f64> {
        match self.task {
            Task::Classifier => sample.class_onehot.clone(),
            Task::Regressor => vec![sample.regression_target],
        }
    }

    /// Training set for this variant. `class_probs` is row-aligned with
    /// `samples` and required for regressors.
    pub fn dataset(
        &self,
        samples: &[EncodedSample],
        class_probs: Option<&[Vec<f64>]>,
    ) -> Result<Dataset> {
        if let Some(p) = class_probs {
            if p.len() != samples.len() {
                return Err(Error::LengthMismatch {
                    left: samples.len(),
                    right: p.len(),
                });
            }
        }
        let rows = samples
            .iter()
            .enumerate()
            .map(|(i, s)| self.inputs(s, class_probs.map(|p| p[i].as_slice())))
            .collect::<Result<Vec<_>>>()?;
        let targets: Vec<Vec<f64>> = samples.iter().map(|s| self.target(s)).collect();
        Dataset::from_rows(&rows, &targets)
    }
}

pub fn build_variant(variant_id: VariantId, seed: u64) -> NetworkModel {
    build_variant_with(variant_id, &Architecture::default(), seed)
}

/// Builds an untrained network for `variant_id` with seeded Glorot weights.
pub fn build_variant_with(variant_id: VariantId, arch: &Architecture, seed: u64) -> NetworkModel {
    let spec = VariantSpec::of(variant_id);
    let layout = spec.layout;
    let widths = layout.input_widths();
    let mut rng = rng::stream(seed, Stream::Init, variant_id.index() as u64);
    let mut dense = |inputs: usize, outputs: usize, act: Activation| {
        DenseLayer::glorot(inputs, outputs, act, &mut rng).with_regularization(arch.l1, arch.l2)
    };

    let mut aux = Vec::new();
    let (branches, trunk_depth) = match layout.input_mode {
        InputMode::Separated => {
            let names = ["initial", "final"];
            let branches: Vec<Branch> = names
                .iter()
                .zip(&widths)
                .map(|(name, &w)| {
                    let mut layers = Vec::with_capacity(arch.branch_depth);
                    let mut inputs = w;
                    for _ in 0..arch.branch_depth {
                        layers.push(dense(inputs, arch.width, Activation::Relu));
                        inputs = arch.width;
                    }
                    Branch {
                        input: InputSpec::new(*name, w),
                        layers,
                    }
                })
                .collect();
            if layout.uses_direction {
                aux.push(InputSpec::new("direction", 1));
            }
            (branches, arch.trunk_depth)
        }
        InputMode::AllInOne => (
            vec![Branch {
                input: InputSpec::new("features", widths[0]),
                layers: Vec::new(),
            }],
            arch.aio_depth,
        ),
    };
    if spec.task == Task::Regressor {
        aux.push(InputSpec::new(CLASS_PROBS_INPUT, CLASS_COUNT));
    }

    let mut model = NetworkModel {
        variant_id: Some(variant_id),
        branches,
        aux,
        trunk: Vec::new(),
        head: spec.head,
    };
    let mut inputs = model.merge_width();
    let mut trunk = Vec::with_capacity(trunk_depth + 1);
    for _ in 0..trunk_depth {
        trunk.push(dense(inputs, arch.width, Activation::Relu));
        inputs = arch.width;
    }
    trunk.push(dense(inputs, spec.head.width(), spec.head.activation()));
    model.trunk = trunk;
    debug_assert!(model.validate().is_ok());
    model
}

/// Classifier whose inputs most closely match the regressor's: same rod
/// feature and input mode.
pub fn pair_for_regressor(regressor: VariantId) -> Result<VariantId> {
    if regressor.task() != Task::Regressor {
        return Err(Error::Unknown {
            kind: "regressor",
            value: regressor.to_string(),
            valid: VariantId::REGRESSORS.map(VariantId::as_str).join(", "),
        });
    }
    let want = FeatureLayout::for_variant(regressor);
    let matches = |c: &VariantId| {
        let l = FeatureLayout::for_variant(*c);
        l.input_mode == want.input_mode && l.rod_feature == want.rod_feature
    };
    // Prefer the classifier that also uses direction, as every regressor does.
    VariantId::CLASSIFIERS
        .into_iter()
        .filter(matches)
        .max_by_key(|c| FeatureLayout::for_variant(*c).uses_direction)
        .ok_or_else(|| Error::Config(format!("no classifier pairs with {regressor}")))
}

pub fn rod_feature_name(f: RodFeature) -> &'static str {
    match f {
        RodFeature::Heights => "heights",
        RodFeature::Reactivity => "reactivity",
    }
}
