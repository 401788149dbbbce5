//! End-to-end run: synthesize, filter, split, augment, balance, train every
//! variant, evaluate on held-out transients and compose the best pair.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{over_sample, Change, PerturbationPolicy};
use crate::compose::{write_predictions_file, TwoStageModel};
use crate::domain::{config_for_date, CoreConfiguration, PowerClassBins, TransientObservation};
use crate::error::{Error, Result};
use crate::evaluate::{
    confusion, write_error_csv_file, ClassMetrics, ConfusionMatrix, ErrorRow, RegressionReport,
};
use crate::ingest::{filter_observations, read_log_file, write_log_file, CorpusSpec, ExclusionCounts};
use crate::nn::{argmax, save_model, train, Monitor, NetworkModel, TrainingConfig, TrainingHistory};
use crate::preprocess::{classify_power, encode, undersample_indices, EncodedSample, Task, VariantId};
use crate::rng::{self, Stream};
use crate::zoo::{build_variant_with, pair_for_regressor, Architecture, VariantSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentPlan {
    pub n_up: usize,
    pub n_down: usize,
    pub n_none: usize,
    pub policy: PerturbationPolicy,
}

impl Default for AugmentPlan {
    fn default() -> Self {
        Self {
            n_up: 1000,
            n_down: 1000,
            n_none: 1000,
            policy: PerturbationPolicy::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Root of every random stream. Overrides `corpus.seed` and
    /// `training.seed`.
    pub seed: u64,
    pub corpus: CorpusSpec,
    /// Fraction of filtered observations held out for testing. Held-out
    /// transients are never augmented.
    pub test_fraction: f64,
    pub augment: AugmentPlan,
    pub bins: PowerClassBins,
    pub architecture: Architecture,
    pub training: TrainingConfig,
    pub classifiers: Vec<VariantId>,
    pub regressors: Vec<VariantId>,
    /// Regressor used as the second stage of the composed model.
    pub composite: VariantId,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 20140115,
            corpus: CorpusSpec::default(),
            test_fraction: 0.2,
            augment: AugmentPlan::default(),
            bins: PowerClassBins::default(),
            architecture: Architecture::default(),
            training: TrainingConfig::default(),
            classifiers: VariantId::CLASSIFIERS.to_vec(),
            regressors: VariantId::REGRESSORS.to_vec(),
            composite: VariantId::B2,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        PowerClassBins::new(self.bins.ceilings().to_vec())?;
        self.augment.policy.validate()?;
        self.training.validate()?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
        }
        if let Some(v) = self.classifiers.iter().find(|v| v.task() != Task::Classifier) {
            return Err(Error::Config(format!("{v} is not a classifier")));
        }
        for &r in &self.regressors {
            let c = pair_for_regressor(r)?;
            if !self.classifiers.contains(&c) {
                return Err(Error::Config(format!("regressor {r} needs classifier {c}")));
            }
        }
        if !self.regressors.contains(&self.composite) {
            return Err(Error::Config(format!(
                "composite stage {} is not among the regressors",
                self.composite
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub n_generated: usize,
    pub excluded: ExclusionCounts,
    pub n_test: usize,
    pub n_source: usize,
    pub n_augmented: usize,
    /// Per-class counts of source plus augmented transients.
    pub pool_class_counts: Vec<usize>,
    pub n_training: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub monitor: Monitor,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub best_val_loss: f64,
    pub best_val_metric: f64,
}

impl TrainingSummary {
    fn of(h: &TrainingHistory) -> Self {
        Self {
            monitor: h.monitor,
            epochs_run: h.epochs.len(),
            best_epoch: h.best_epoch + 1,
            stopped_early: h.stopped_early,
            best_val_loss: h.best().val_loss,
            best_val_metric: h.best().val_metric,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub variant_id: VariantId,
    pub training: TrainingSummary,
    pub test: ClassMetrics,
    pub confusion: ConfusionMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressorReport {
    pub variant_id: VariantId,
    pub classifier: VariantId,
    pub training: TrainingSummary,
    pub test: RegressionReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositeReport {
    pub stage1: VariantId,
    pub stage2: VariantId,
    pub classification: ClassMetrics,
    pub regression: RegressionReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub data: DataSummary,
    pub classifiers: Vec<ClassifierReport>,
    pub regressors: Vec<RegressorReport>,
    pub composite: CompositeReport,
}

impl PipelineReport {
    pub fn classifier(&self, v: VariantId) -> Option<&ClassifierReport> {
        self.classifiers.iter().find(|r| r.variant_id == v)
    }

    pub fn regressor(&self, v: VariantId) -> Option<&RegressorReport> {
        self.regressors.iter().find(|r| r.variant_id == v)
    }
}

/// Seeded (test, source) split of `n` rows, each in ascending order.
pub fn holdout_split(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, Stream::Split, 1));
    let n_test = (n as f64 * test_fraction).round() as usize;
    let mut source = idx.split_off(n_test.min(n));
    idx.sort_unstable();
    source.sort_unstable();
    (idx, source)
}

fn encode_all(
    observations: &[&TransientObservation],
    spec: &VariantSpec,
    configs: &[CoreConfiguration],
    bins: &PowerClassBins,
) -> Result<Vec<EncodedSample>> {
    observations
        .iter()
        .map(|o| encode(o, &spec.layout, config_for_date(o.date, configs), bins))
        .collect()
}

fn predict_rows(
    model: &NetworkModel,
    spec: &VariantSpec,
    samples: &[EncodedSample],
    class_probs: Option<&[Vec<f64>]>,
) -> Result<Array2<f64>> {
    let data = spec.dataset(samples, class_probs)?;
    model.forward(&data.views())
}

fn rows_of(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Runs everything and writes artifacts under `out_dir`:
/// `corpus.csv`, `test.csv`, `models/<id>.json`, `models/<id>.history.json`,
/// `errors/<id>.csv`, `composite.json`, `predictions.csv` and `report.json`.
pub fn run_pipeline(
    config: &PipelineConfig,
    out_dir: &Path,
    log: &mut dyn FnMut(&str),
) -> Result<PipelineReport> {
    config.validate()?;
    let seed = config.seed;
    let bins = &config.bins;
    let configs = CoreConfiguration::standard();
    let models_dir = out_dir.join("models");
    let errors_dir = out_dir.join("errors");
    create_dir(&models_dir)?;
    create_dir(&errors_dir)?;

    // Corpus goes through the same CSV reader and exclusion filter as a real log.
    let corpus_spec = CorpusSpec {
        seed,
        ..config.corpus.clone()
    };
    let generated = crate::ingest::synthesize_corpus(&corpus_spec, &configs)?;
    let corpus_path = out_dir.join("corpus.csv");
    write_log_file(&corpus_path, &generated)?;
    let filtered = filter_observations(&read_log_file(&corpus_path)?);
    let observations = filtered.observations;
    log(&format!(
        "corpus: {} generated, {} kept",
        generated.len(),
        observations.len()
    ));

    let (test_idx, source_idx) = holdout_split(observations.len(), config.test_fraction, seed);
    let test: Vec<TransientObservation> = test_idx.iter().map(|&i| observations[i].clone()).collect();
    let source: Vec<TransientObservation> =
        source_idx.iter().map(|&i| observations[i].clone()).collect();
    if test.is_empty() || source.is_empty() {
        return Err(Error::Empty("hold-out split left an empty side".into()));
    }
    write_log_file(&out_dir.join("test.csv"), &test)?;

    let plan = &config.augment;
    let mut pool = source.clone();
    for (change, n) in [
        (Change::Up, plan.n_up),
        (Change::Down, plan.n_down),
        (Change::None, plan.n_none),
    ] {
        pool.extend(over_sample(&source, &configs, n, change, &plan.policy, seed)?);
    }
    let labels = pool
        .iter()
        .map(|o| classify_power(o.final_state.power(), bins))
        .collect::<Result<Vec<_>>>()?;
    let mut pool_class_counts = vec![0; bins.len()];
    for &c in &labels {
        pool_class_counts[c] += 1;
    }
    let keep = undersample_indices(&labels, bins.len(), seed)?;
    let training_obs: Vec<&TransientObservation> = keep.iter().map(|&i| &pool[i]).collect();
    let test_refs: Vec<&TransientObservation> = test.iter().collect();
    let test_labels = test
        .iter()
        .map(|o| classify_power(o.final_state.power(), bins))
        .collect::<Result<Vec<_>>>()?;
    log(&format!(
        "pool: {} transients {:?}, {} after balancing, {} held out",
        pool.len(),
        pool_class_counts,
        training_obs.len(),
        test.len()
    ));

    let data = DataSummary {
        n_generated: generated.len(),
        excluded: filtered.excluded,
        n_test: test.len(),
        n_source: source.len(),
        n_augmented: pool.len() - source.len(),
        pool_class_counts,
        n_training: training_obs.len(),
    };

    let training = TrainingConfig {
        seed,
        ..config.training.clone()
    };

    struct Trained {
        model: NetworkModel,
        train_probs: Vec<Vec<f64>>,
        test_probs: Vec<Vec<f64>>,
    }
    let mut trained: Vec<(VariantId, Trained)> = Vec::new();
    let mut classifier_reports = Vec::new();
    for &v in &config.classifiers {
        let spec = VariantSpec::of(v);
        let train_samples = encode_all(&training_obs, &spec, &configs, bins)?;
        let test_samples = encode_all(&test_refs, &spec, &configs, bins)?;
        let model = build_variant_with(v, &config.architecture, seed);
        let (model, history) = train(model, &spec.dataset(&train_samples, None)?, &training)?;
        save_model(&model, &models_dir.join(format!("{v}.json")))?;
        crate::nn::write_json(&models_dir.join(format!("{v}.history.json")), &history)?;

        let test_out = predict_rows(&model, &spec, &test_samples, None)?;
        let pred: Vec<usize> = test_out.rows().into_iter().map(|r| argmax(r.iter())).collect();
        let cm = confusion(&test_labels, &pred, bins.len())?;
        let metrics = ClassMetrics::from_confusion(&cm);
        log(&format!(
            "{v}: {} epochs, test accuracy {:.4}, macro-F1 {:.4}",
            history.epochs.len(),
            metrics.accuracy,
            metrics.macro_f1
        ));
        classifier_reports.push(ClassifierReport {
            variant_id: v,
            training: TrainingSummary::of(&history),
            test: metrics,
            confusion: cm,
        });
        let train_probs = rows_of(&predict_rows(&model, &spec, &train_samples, None)?);
        trained.push((
            v,
            Trained {
                model,
                train_probs,
                test_probs: rows_of(&test_out),
            },
        ));
    }
    let classifier = |v: VariantId| {
        &trained
            .iter()
            .find(|(id, _)| *id == v)
            .expect("validated pairing")
            .1
    };

    let mut regressor_reports = Vec::new();
    let mut regressors: Vec<(VariantId, NetworkModel)> = Vec::new();
    for &v in &config.regressors {
        let spec = VariantSpec::of(v);
        let pair = pair_for_regressor(v)?;
        let stage1 = classifier(pair);
        let train_samples = encode_all(&training_obs, &spec, &configs, bins)?;
        let test_samples = encode_all(&test_refs, &spec, &configs, bins)?;
        let model = build_variant_with(v, &config.architecture, seed);
        let training = TrainingConfig {
            monitored_metric: training
                .monitored_metric
                .or(Some(spec.default_monitor())),
            ..training.clone()
        };
        let (model, history) = train(
            model,
            &spec.dataset(&train_samples, Some(&stage1.train_probs))?,
            &training,
        )?;
        save_model(&model, &models_dir.join(format!("{v}.json")))?;
        crate::nn::write_json(&models_dir.join(format!("{v}.history.json")), &history)?;

        let out = predict_rows(&model, &spec, &test_samples, Some(&stage1.test_probs))?;
        let truth: Vec<f64> = test_samples.iter().map(|s| s.regression_target).collect();
        let pred: Vec<f64> = out.column(0).to_vec();
        let stage1_class: Vec<usize> = stage1.test_probs.iter().map(|p| argmax(p.iter())).collect();
        let correct: Vec<bool> = stage1_class
            .iter()
            .zip(&test_labels)
            .map(|(p, t)| p == t)
            .collect();
        let report = RegressionReport::new(&truth, &pred, Some(&correct))?;
        let rows: Vec<ErrorRow> = (0..truth.len())
            .map(|i| ErrorRow {
                row: i,
                true_class: test_labels[i],
                predicted_class: stage1_class[i],
                true_norm: truth[i],
                predicted_norm: pred[i],
                abs_error: (truth[i] - pred[i]).abs(),
            })
            .collect();
        write_error_csv_file(&errors_dir.join(format!("{v}.csv")), &rows)?;
        log(&format!(
            "{v} (on {pair}): {} epochs, test MAE {:.4}, within 0.10: {:.4}",
            history.epochs.len(),
            report.mae,
            report.within_tolerance
        ));
        regressor_reports.push(RegressorReport {
            variant_id: v,
            classifier: pair,
            training: TrainingSummary::of(&history),
            test: report,
        });
        regressors.push((v, model));
    }

    let stage1_id = pair_for_regressor(config.composite)?;
    let stage2 = regressors
        .iter()
        .find(|(id, _)| *id == config.composite)
        .map(|(_, m)| m.clone())
        .expect("validated composite");
    let composite = TwoStageModel::new(classifier(stage1_id).model.clone(), stage2)?;
    composite.save(&out_dir.join("composite.json"))?;
    let samples = encode_all(&test_refs, composite.stage1_spec(), &configs, bins)?;
    let preds = composite.predict_batch(&samples)?;
    write_predictions_file(&out_dir.join("predictions.csv"), &preds)?;
    let pred_class: Vec<usize> = preds.iter().map(|p| p.predicted_class).collect();
    let truth: Vec<f64> = samples.iter().map(|s| s.regression_target).collect();
    let pred_norm: Vec<f64> = preds.iter().map(|p| p.power_norm).collect();
    let correct: Vec<bool> = pred_class.iter().zip(&test_labels).map(|(p, t)| p == t).collect();
    let composite_report = CompositeReport {
        stage1: stage1_id,
        stage2: config.composite,
        classification: ClassMetrics::from_confusion(&confusion(
            &test_labels,
            &pred_class,
            bins.len(),
        )?),
        regression: RegressionReport::new(&truth, &pred_norm, Some(&correct))?,
    };

    let report = PipelineReport {
        seed,
        data,
        classifiers: classifier_reports,
        regressors: regressor_reports,
        composite: composite_report,
    };
    crate::nn::write_json(&out_dir.join("report.json"), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holdout_is_a_partition() {
        let (t, s) = holdout_split(50, 0.2, 3);
        assert_eq!(t.len(), 10);
        let mut all: Vec<usize> = t.iter().chain(&s).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert_eq!(holdout_split(50, 0.2, 3), (t, s));
    }

    #[test]
    fn regressor_without_its_classifier_is_rejected() {
        let config = PipelineConfig {
            classifiers: vec![VariantId::A1],
            regressors: vec![VariantId::A2],
            composite: VariantId::A2,
            ..PipelineConfig::default()
        };
        assert!(matches!(config.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn config_json_defaults_fill_in() {
        let c: PipelineConfig = serde_json::from_str(r#"{"seed": 7, "test_fraction": 0.3}"#).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.classifiers.len(), 6);
        c.validate().unwrap();
    }
}
