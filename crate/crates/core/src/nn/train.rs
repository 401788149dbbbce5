use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::LossKind;
use super::network::{Head, NetworkModel};
use super::optim::{Optimizer, OptimizerKind};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Row-aligned model inputs (one matrix per declared input) and targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Array2<f64>>,
    pub targets: Array2<f64>,
}

impl Dataset {
    pub fn new(inputs: Vec<Array2<f64>>, targets: Array2<f64>) -> Result<Self> {
        if let Some(x) = inputs.iter().find(|x| x.nrows() != targets.nrows()) {
            return Err(Error::LengthMismatch {
                left: x.nrows(),
                right: targets.nrows(),
            });
        }
        Ok(Self { inputs, targets })
    }

    /// Builds a data set from per-sample input vectors.
    pub fn from_rows(rows: &[Vec<Vec<f64>>], targets: &[Vec<f64>]) -> Result<Self> {
        if rows.len() != targets.len() {
            return Err(Error::LengthMismatch {
                left: rows.len(),
                right: targets.len(),
            });
        }
        let first = rows
            .first()
            .ok_or_else(|| Error::Empty("data set has no rows".into()))?;
        let inputs = (0..first.len())
            .map(|k| stack_rows(rows.iter().map(|r| r[k].as_slice()), first[k].len()))
            .collect::<Result<Vec<_>>>()?;
        let targets = stack_rows(targets.iter().map(Vec::as_slice), targets[0].len())?;
        Self::new(inputs, targets)
    }

    pub fn len(&self) -> usize {
        self.targets.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn views(&self) -> Vec<ArrayView2<'_, f64>> {
        self.inputs.iter().map(|x| x.view()).collect()
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.iter().map(|x| x.select(Axis(0), rows)).collect(),
            targets: self.targets.select(Axis(0), rows),
        }
    }
}

fn stack_rows<'a>(rows: impl Iterator<Item = &'a [f64]>, width: usize) -> Result<Array2<f64>> {
    let mut flat = Vec::new();
    let mut n = 0;
    for r in rows {
        if r.len() != width {
            return Err(Error::LengthMismatch {
                left: r.len(),
                right: width,
            });
        }
        flat.extend_from_slice(r);
        n += 1;
    }
    Ok(Array2::from_shape_vec((n, width), flat).expect("sized"))
}

/// Quantity watched by early stopping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    ValAccuracy,
    ValLoss,
    ValMse,
}

impl Monitor {
    fn maximize(self) -> bool {
        matches!(self, Monitor::ValAccuracy)
    }

    pub fn default_min_delta(self) -> f64 {
        match self {
            Monitor::ValAccuracy => 0.005,
            Monitor::ValLoss => 5e-4,
            Monitor::ValMse => 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub check_fraction: f64,
    pub early_stop_patience: usize,
    /// Absolute improvement needed to reset patience. `None` picks the
    /// monitor's default.
    pub early_stop_min_delta: Option<f64>,
    /// `None`: validation accuracy for classifiers, validation loss for
    /// regressors.
    pub monitored_metric: Option<Monitor>,
    /// `None`: cross-entropy for softmax heads, absolute error for sigmoid.
    pub loss: Option<LossKind>,
    pub shuffle_each_epoch: bool,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            batch_size: 32,
            max_epochs: 1000,
            check_fraction: 0.33,
            early_stop_patience: 5,
            early_stop_min_delta: None,
            monitored_metric: None,
            loss: None,
            shuffle_each_epoch: true,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.check_fraction > 0.0 && self.check_fraction < 1.0) {
            return bad("check_fraction must lie in (0, 1)");
        }
        if self.early_stop_patience == 0 {
            return bad("early_stop_patience must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if matches!(self.early_stop_min_delta, Some(d) if !(d >= 0.0)) {
            return bad("early_stop_min_delta must be non-negative");
        }
        Ok(())
    }

    pub fn monitor_for(&self, head: Head) -> Monitor {
        self.monitored_metric.unwrap_or(match head {
            Head::Softmax5 => Monitor::ValAccuracy,
            Head::Sigmoid1 => Monitor::ValLoss,
        })
    }

    pub fn loss_for(&self, head: Head) -> LossKind {
        self.loss.unwrap_or(head.default_loss())
    }

    fn optimizer(&self) -> Optimizer {
        Optimizer::new(
            self.optimizer,
            self.learning_rate,
            self.adam_betas,
            self.adam_eps,
        )
    }
}

/// Secondary metric recorded per epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    Mse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub train_loss: f64,
    pub train_metric: f64,
    pub val_loss: f64,
    pub val_metric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub loss: LossKind,
    pub metric: MetricKind,
    pub monitor: Monitor,
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the restored weights.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainingHistory {
    pub fn monitored(&self, epoch: usize) -> f64 {
        let r = &self.epochs[epoch];
        match self.monitor {
            Monitor::ValAccuracy | Monitor::ValMse => r.val_metric,
            Monitor::ValLoss => r.val_loss,
        }
    }

    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch]
    }
}

/// Seeded split into (training, validation) row indices.
pub fn split_indices(n: usize, check_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, Stream::Split, 0));
    let n_val = ((n as f64 * check_fraction).round() as usize).clamp(1, n.saturating_sub(1));
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// Fraction of rows whose argmax matches the target's argmax.
pub fn accuracy(pred: &ArrayView2<f64>, target: &ArrayView2<f64>) -> f64 {
    let hits = pred
        .rows()
        .into_iter()
        .zip(target.rows())
        .filter(|(p, t)| argmax(p.iter()) == argmax(t.iter()))
        .count();
    hits as f64 / pred.nrows().max(1) as f64
}

/// Index of the first maximum.
pub fn argmax<'a>(values: impl Iterator<Item = &'a f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn metric(kind: MetricKind, pred: &ArrayView2<f64>, target: &ArrayView2<f64>) -> f64 {
    match kind {
        MetricKind::Accuracy => accuracy(pred, target),
        MetricKind::Mse => LossKind::MeanSquaredError.value(pred, target),
    }
}

/// Mini-batch training with a held-out check set and early stopping.
///
/// Patience resets only when the monitored value beats the reference by
/// more than `min_delta`; the weights returned are those of the epoch with
/// the best monitored value seen.
pub fn train(
    mut model: NetworkModel,
    data: &Dataset,
    config: &TrainingConfig,
) -> Result<(NetworkModel, TrainingHistory)> {
    config.validate()?;
    model.validate()?;
    if data.len() < 2 {
        return Err(Error::Empty(
            "training needs at least two samples (one for the check set)".into(),
        ));
    }
    let loss = config.loss_for(model.head);
    let monitor = config.monitor_for(model.head);
    let metric_kind = match model.head {
        Head::Softmax5 => MetricKind::Accuracy,
        Head::Sigmoid1 => MetricKind::Mse,
    };
    if monitor == Monitor::ValAccuracy && metric_kind != MetricKind::Accuracy
        || monitor == Monitor::ValMse && metric_kind != MetricKind::Mse
    {
        return Err(Error::Config(format!(
            "monitor {monitor:?} does not apply to a {:?} head",
            model.head
        )));
    }
    let min_delta = config
        .early_stop_min_delta
        .unwrap_or(monitor.default_min_delta());
    let maximize = monitor.maximize();
    let better = |a: f64, b: f64| if maximize { a > b } else { a < b };
    let improved = |a: f64, reference: f64| {
        if maximize {
            a - min_delta > reference
        } else {
            a + min_delta < reference
        }
    };

    let (mut order, val_idx) = split_indices(data.len(), config.check_fraction, config.seed);
    let val = data.select(&val_idx);
    let mut shuffle_rng = rng::stream(config.seed, Stream::Shuffle, 0);
    let mut optimizer = config.optimizer();

    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, NetworkModel)> = None;
    let mut reference = if maximize {
        f64::NEG_INFINITY
    } else {
        f64::INFINITY
    };
    let mut wait = 0;
    let mut stopped_early = false;

    for epoch in 0..config.max_epochs {
        if config.shuffle_each_epoch {
            order.shuffle(&mut shuffle_rng);
        }
        let mut loss_sum = 0.0;
        let mut metric_sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = data.select(chunk);
            let trace = model.forward_trace(&batch.views())?;
            let out = trace.output().view();
            let targets = batch.targets.view();
            let batch_loss = loss.value(&out, &targets) + model.penalty();
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    batch: b + 1,
                    loss: batch_loss,
                });
            }
            let rows = chunk.len() as f64;
            loss_sum += batch_loss * rows;
            metric_sum += metric(metric_kind, &out, &targets) * rows;
            let grads = model.backward_from(&trace, loss.gradient(&out, &targets));
            optimizer.step(&mut model, &grads);
        }

        let val_out = model.forward(&val.views())?;
        let val_loss = loss.value(&val_out.view(), &val.targets.view()) + model.penalty();
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch: epoch + 1,
                batch: 0,
                loss: val_loss,
            });
        }
        let record = EpochRecord {
            train_loss: loss_sum / order.len() as f64,
            train_metric: metric_sum / order.len() as f64,
            val_loss,
            val_metric: metric(metric_kind, &val_out.view(), &val.targets.view()),
        };
        let current = match monitor {
            Monitor::ValAccuracy | Monitor::ValMse => record.val_metric,
            Monitor::ValLoss => record.val_loss,
        };
        epochs.push(record);

        if best.as_ref().is_none_or(|(v, _, _)| better(current, *v)) {
            best = Some((current, epoch, model.clone()));
        }
        if improved(current, reference) {
            reference = current;
            wait = 0;
        } else {
            wait += 1;
            if wait >= config.early_stop_patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (_, best_epoch, best_model) = best.expect("at least one epoch ran");
    Ok((
        best_model,
        TrainingHistory {
            loss,
            metric: metric_kind,
            monitor,
            epochs,
            best_epoch,
            stopped_early,
        },
    ))
}

/// Validation rows used by [`train`] for this data size and config.
pub fn check_set(data: &Dataset, config: &TrainingConfig) -> Dataset {
    let (_, val) = split_indices(data.len(), config.check_fraction, config.seed);
    data.select(&val)
}
