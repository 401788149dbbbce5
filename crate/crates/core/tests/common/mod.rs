//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rtp_core::nn::{Activation, Branch, DenseLayer, Gradients, Head, InputSpec, LossKind, NetworkModel};

pub const FD_STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn flatten(grads: &Gradients) -> Vec<f64> {
    grads
        .iter()
        .flat_map(|g| g.weights.iter().chain(g.biases.iter()).copied())
        .collect()
}

/// Central-difference gradient of the full loss (data + penalty), in the
/// same parameter order as [`flatten`].
pub fn numeric_gradient(
    model: &NetworkModel,
    inputs: &[ArrayView2<f64>],
    targets: &ArrayView2<f64>,
    loss: LossKind,
    h: f64,
) -> Vec<f64> {
    let mut probe = model.clone();
    let mut out = Vec::new();
    let n_layers = model.layers().count();
    for li in 0..n_layers {
        let (n_w, n_b) = {
            let l = probe.layers().nth(li).unwrap();
            (l.weights.len(), l.biases.len())
        };
        for k in 0..n_w + n_b {
            let mut eval = |delta: f64| {
                let layer = probe.layers_mut().nth(li).unwrap();
                let p = if k < n_w {
                    layer.weights.as_slice_mut().unwrap().get_mut(k).unwrap()
                } else {
                    layer.biases.as_slice_mut().unwrap().get_mut(k - n_w).unwrap()
                };
                let saved = *p;
                *p = saved + delta;
                let v = probe.loss(inputs, targets, loss).unwrap();
                let layer = probe.layers_mut().nth(li).unwrap();
                if k < n_w {
                    layer.weights.as_slice_mut().unwrap()[k] = saved;
                } else {
                    layer.biases.as_slice_mut().unwrap()[k - n_w] = saved;
                }
                v
            };
            out.push((eval(h) - eval(-h)) / (2.0 * h));
        }
    }
    out
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// A small network of random shape with every hidden activation in play.
pub fn random_model(r: &mut ChaCha8Rng, head: Head) -> NetworkModel {
    let hidden = [Activation::Relu, Activation::Linear, Activation::Sigmoid];
    let reg = |r: &mut ChaCha8Rng| {
        if r.random_bool(0.5) {
            (r.random_range(0.0..1e-2), r.random_range(0.0..1e-2))
        } else {
            (0.0, 0.0)
        }
    };
    let n_branches = r.random_range(1..=2);
    let branches = (0..n_branches)
        .map(|b| {
            let width = r.random_range(1..=4);
            let depth = r.random_range(0..=2);
            let mut layers = Vec::new();
            let mut inputs = width;
            for _ in 0..depth {
                let outputs = r.random_range(1..=5);
                let act = hidden[r.random_range(0..hidden.len())];
                let (l1, l2) = reg(r);
                layers.push(DenseLayer::glorot(inputs, outputs, act, r).with_regularization(l1, l2));
                inputs = outputs;
            }
            Branch {
                input: InputSpec::new(format!("in{b}"), width),
                layers,
            }
        })
        .collect();
    let aux = if r.random_bool(0.5) {
        vec![InputSpec::new("aux", r.random_range(1..=3))]
    } else {
        Vec::new()
    };
    let mut model = NetworkModel {
        variant_id: None,
        branches,
        aux,
        trunk: Vec::new(),
        head,
    };
    let mut inputs = model.merge_width();
    for _ in 0..r.random_range(0..=2) {
        let outputs = r.random_range(1..=5);
        let act = hidden[r.random_range(0..hidden.len())];
        let (l1, l2) = reg(r);
        model
            .trunk
            .push(DenseLayer::glorot(inputs, outputs, act, r).with_regularization(l1, l2));
        inputs = outputs;
    }
    let (l1, l2) = reg(r);
    model.trunk.push(
        DenseLayer::glorot(inputs, head.width(), head.activation(), r).with_regularization(l1, l2),
    );
    // Non-zero biases keep pre-activations off the relu kink; with zero
    // biases a dead upstream layer puts them exactly on it.
    for layer in model.layers_mut() {
        layer.biases.mapv_inplace(|_| r.random_range(-0.5..0.5));
    }
    model.validate().unwrap();
    model
}

/// Random inputs matching `model`, `rows` samples each.
pub fn random_inputs(r: &mut ChaCha8Rng, model: &NetworkModel, rows: usize) -> Vec<Array2<f64>> {
    model
        .input_specs()
        .iter()
        .map(|s| Array2::from_shape_fn((rows, s.width), |_| r.random_range(-2.0..2.0)))
        .collect()
}

/// Targets suited to the loss: probability rows for cross-entropy, values in
/// (0, 1) otherwise.
pub fn random_targets(r: &mut ChaCha8Rng, loss: LossKind, rows: usize, width: usize) -> Array2<f64> {
    match loss {
        LossKind::CategoricalCrossEntropy => {
            let mut t = Array2::from_shape_fn((rows, width), |_| r.random_range(0.0..1.0));
            for mut row in t.rows_mut() {
                let s = row.sum();
                row.mapv_inplace(|v| v / s);
            }
            t
        }
        _ => Array2::from_shape_fn((rows, width), |_| r.random_range(0.05..0.95)),
    }
}

/// Brute-force per-class scores straight from the definitions, by scanning
/// the label lists once per class.
pub struct BruteMetrics {
    pub confusion: Vec<Vec<u64>>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_f1: f64,
    pub accuracy: f64,
}

#[allow(clippy::needless_range_loop)]
pub fn brute_metrics(truth: &[usize], pred: &[usize], n: usize) -> BruteMetrics {
    let mut confusion = vec![vec![0u64; n]; n];
    for t in 0..n {
        for p in 0..n {
            confusion[t][p] = truth
                .iter()
                .zip(pred)
                .filter(|(&a, &b)| a == t && b == p)
                .count() as u64;
        }
    }
    let (mut precision, mut recall, mut f1) = (Vec::new(), Vec::new(), Vec::new());
    for c in 0..n {
        let tp = truth.iter().zip(pred).filter(|(&a, &b)| a == c && b == c).count();
        let fp = truth.iter().zip(pred).filter(|(&a, &b)| a != c && b == c).count();
        let fn_ = truth.iter().zip(pred).filter(|(&a, &b)| a == c && b != c).count();
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        precision.push(p);
        recall.push(r);
        f1.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
    }
    let macro_f1 = f1.iter().sum::<f64>() / n as f64;
    let hits = truth.iter().zip(pred).filter(|(a, b)| a == b).count();
    BruteMetrics {
        confusion,
        precision,
        recall,
        f1,
        macro_f1,
        accuracy: hits as f64 / truth.len() as f64,
    }
}
