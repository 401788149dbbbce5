//! Chains a trained classifier and regressor into one predictor.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{config_for_date, CoreConfiguration, PowerClassBins, TransientObservation};
use crate::error::{Error, Result};
use crate::nn::{argmax, check_header, load_model, read_json, write_json, Head, ModelDocument, NetworkModel};
use crate::preprocess::{denormalize_power, encode, EncodedSample, Task};
use crate::zoo::{VariantSpec, CLASS_COUNT, CLASS_PROBS_INPUT};

pub const TWO_STAGE_FORMAT: &str = "rtp-two-stage";
pub const TWO_STAGE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointPrediction {
    pub class_probs: Vec<f64>,
    pub predicted_class: usize,
    pub power_norm: f64,
    pub power_watts: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwoStageModel {
    stage1: NetworkModel,
    stage2: NetworkModel,
    spec1: VariantSpec,
    spec2: VariantSpec,
}

fn fail(msg: impl Into<String>) -> Error {
    Error::Composition(msg.into())
}

fn spec_of(model: &NetworkModel, stage: &str) -> Result<VariantSpec> {
    let id = model
        .variant_id
        .ok_or_else(|| fail(format!("{stage} model has no variant id")))?;
    let spec = VariantSpec::of(id);
    let widths: Vec<usize> = model.input_specs().iter().map(|s| s.width).collect();
    let mut want = spec.layout.input_widths();
    if spec.task == Task::Regressor {
        want.push(CLASS_COUNT);
    }
    if widths != want {
        return Err(fail(format!(
            "{stage} model inputs {widths:?} do not match variant {id} ({want:?})"
        )));
    }
    Ok(spec)
}

impl TwoStageModel {
    pub fn new(stage1: NetworkModel, stage2: NetworkModel) -> Result<Self> {
        stage1.validate()?;
        stage2.validate()?;
        if stage1.head != Head::Softmax5 {
            return Err(fail(format!(
                "stage 1 must have a softmax-5 head, found {}",
                stage1.head
            )));
        }
        if stage2.head != Head::Sigmoid1 {
            return Err(fail(format!(
                "stage 2 must have a sigmoid-1 head, found {}",
                stage2.head
            )));
        }
        if stage2.aux_width(CLASS_PROBS_INPUT) != Some(CLASS_COUNT) {
            return Err(fail(format!(
                "stage 2 needs a `{CLASS_PROBS_INPUT}` input of width {CLASS_COUNT}"
            )));
        }
        let spec1 = spec_of(&stage1, "stage 1")?;
        let spec2 = spec_of(&stage2, "stage 2")?;
        if !spec1.layout.shares_features_with(&spec2.layout) {
            return Err(fail(format!(
                "{} and {} read different features",
                spec1.variant_id, spec2.variant_id
            )));
        }
        Ok(Self {
            stage1,
            stage2,
            spec1,
            spec2,
        })
    }

    pub fn stage1(&self) -> &NetworkModel {
        &self.stage1
    }

    pub fn stage2(&self) -> &NetworkModel {
        &self.stage2
    }

    pub fn stage1_spec(&self) -> &VariantSpec {
        &self.spec1
    }

    pub fn stage2_spec(&self) -> &VariantSpec {
        &self.spec2
    }

    /// Runs both stages on a sample encoded with the stage-1 layout.
    pub fn predict(&self, sample: &EncodedSample) -> Result<JointPrediction> {
        let x1 = self.spec1.inputs(sample, None)?;
        let class_probs = self.stage1.forward_one(&as_slices(&x1))?;
        let x2 = self.spec2.inputs(sample, Some(&class_probs))?;
        let power_norm = self.stage2.forward_one(&as_slices(&x2))?[0];
        Ok(JointPrediction {
            predicted_class: argmax(class_probs.iter()),
            class_probs,
            power_norm,
            power_watts: denormalize_power(power_norm),
        })
    }

    pub fn predict_batch(&self, samples: &[EncodedSample]) -> Result<Vec<JointPrediction>> {
        samples.iter().map(|s| self.predict(s)).collect()
    }

    /// Encodes and predicts a raw observation. Only the final power's
    /// direction relative to the initial power is read from the final state.
    pub fn predict_observation(
        &self,
        obs: &TransientObservation,
        configs: &[CoreConfiguration],
        bins: &PowerClassBins,
    ) -> Result<JointPrediction> {
        let sample = encode(obs, &self.spec1.layout, config_for_date(obs.date, configs), bins)?;
        self.predict(&sample)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(
            path,
            &TwoStageDocument {
                format: TWO_STAGE_FORMAT.into(),
                format_version: TWO_STAGE_VERSION,
                stage1: ModelDocument::from_model(&self.stage1),
                stage2: ModelDocument::from_model(&self.stage2),
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let value = read_json(path)?;
        check_header(&value, TWO_STAGE_FORMAT, TWO_STAGE_VERSION)?;
        let doc: TwoStageDocument =
            serde_json::from_value(value).map_err(|e| Error::Corrupt(e.to_string()))?;
        Self::new(doc.stage1.into_model()?, doc.stage2.into_model()?)
    }
}

#[derive(Serialize, Deserialize)]
struct TwoStageDocument {
    format: String,
    format_version: u32,
    stage1: ModelDocument,
    stage2: ModelDocument,
}

fn as_slices(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(Vec::as_slice).collect()
}

/// Writes `row,prob_0..prob_4,predicted_class,power_norm,power_watts`.
pub fn write_predictions_csv<W: std::io::Write>(sink: W, preds: &[JointPrediction]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["row".to_string()];
    header.extend((0..CLASS_COUNT).map(|c| format!("prob_{c}")));
    header.extend(["predicted_class", "power_norm", "power_watts"].map(String::from));
    w.write_record(&header)?;
    for (row, p) in preds.iter().enumerate() {
        let mut rec = vec![row.to_string()];
        rec.extend(p.class_probs.iter().map(f64::to_string));
        rec.push(p.predicted_class.to_string());
        rec.push(p.power_norm.to_string());
        rec.push(p.power_watts.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_predictions_file(path: &Path, preds: &[JointPrediction]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_predictions_csv(std::io::BufWriter::new(file), preds)
}

/// Loads two single-stage model files and composes them.
pub fn compose(stage1_path: &Path, stage2_path: &Path) -> Result<TwoStageModel> {
    TwoStageModel::new(load_model(stage1_path)?, load_model(stage2_path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::VariantId;
    use crate::zoo::build_variant;

    fn sample_for(v: VariantId) -> EncodedSample {
        let layout = VariantSpec::of(v).layout;
        let widths = layout.input_widths();
        EncodedSample {
            variant_id: v,
            initial_branch: vec![0.4; widths[0]],
            final_branch: widths.get(1).map(|&w| vec![0.3; w]).unwrap_or_default(),
            direction: -1.0,
            class_onehot: vec![1.0, 0.0, 0.0, 0.0, 0.0],
            regression_target: 0.2,
        }
    }

    #[test]
    fn paired_stages_compose() {
        let m = TwoStageModel::new(build_variant(VariantId::A1, 1), build_variant(VariantId::B2, 1))
            .unwrap();
        let p = m.predict(&sample_for(VariantId::A1)).unwrap();
        assert_eq!(p.class_probs.len(), 5);
        assert!((p.class_probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.power_norm > 0.0 && p.power_norm < 1.0);
    }

    #[test]
    fn matches_manual_chaining() {
        let s1 = build_variant(VariantId::E1, 5);
        let s2 = build_variant(VariantId::D2, 5);
        let m = TwoStageModel::new(s1.clone(), s2.clone()).unwrap();
        let sample = sample_for(VariantId::E1);
        let probs = s1.forward_one(&[&sample.initial_branch]).unwrap();
        let power = s2.forward_one(&[&sample.initial_branch, &probs]).unwrap()[0];
        let p = m.predict(&sample).unwrap();
        assert_eq!(p.class_probs, probs);
        assert_eq!(p.power_norm.to_bits(), power.to_bits());
    }

    #[test]
    fn rejects_mismatched_stages() {
        let a1 = || build_variant(VariantId::A1, 1);
        let err = TwoStageModel::new(a1(), a1()).unwrap_err();
        assert!(matches!(err, Error::Composition(_)), "{err}");
        assert!(TwoStageModel::new(build_variant(VariantId::B2, 1), a1()).is_err());
        // heights classifier with a reactivity regressor
        assert!(TwoStageModel::new(build_variant(VariantId::B1, 1), build_variant(VariantId::B2, 1)).is_err());
        // all-in-one classifier with a separated regressor
        assert!(TwoStageModel::new(build_variant(VariantId::E1, 1), build_variant(VariantId::B2, 1)).is_err());
    }

    #[test]
    fn file_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("two_stage.json");
        let m = TwoStageModel::new(build_variant(VariantId::B1, 2), build_variant(VariantId::A2, 2))
            .unwrap();
        m.save(&path).unwrap();
        let back = TwoStageModel::load(&path).unwrap();
        assert_eq!(back, m);
        let s = sample_for(VariantId::B1);
        assert_eq!(back.predict(&s).unwrap(), m.predict(&s).unwrap());
    }

    #[test]
    fn single_model_file_is_not_a_two_stage_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("single.json");
        crate::nn::save_model(&build_variant(VariantId::A1, 1), &path).unwrap();
        assert!(TwoStageModel::load(&path).is_err());
    }
}
