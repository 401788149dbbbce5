use serde::{Deserialize, Serialize};

use super::network::{Gradients, NetworkModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Stateful parameter updater. Moment buffers are created on first use.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    first: Option<Gradients>,
    second: Option<Gradients>,
}

impl Optimizer {
    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate, (0.9, 0.999), 1e-8)
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate, (0.9, 0.999), 1e-8)
    }

    pub fn new(kind: OptimizerKind, learning_rate: f64, betas: (f64, f64), eps: f64) -> Self {
        Self {
            kind,
            learning_rate,
            beta1: betas.0,
            beta2: betas.1,
            eps,
            step: 0,
            first: None,
            second: None,
        }
    }

    pub fn step(&mut self, model: &mut NetworkModel, grads: &Gradients) {
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = self.learning_rate;
                for (layer, g) in model.layers_mut().zip(grads) {
                    layer.weights.scaled_add(-lr, &g.weights);
                    layer.biases.scaled_add(-lr, &g.biases);
                }
            }
            OptimizerKind::Adam => {
                self.step += 1;
                let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.learning_rate);
                let c1 = 1.0 - b1.powi(self.step);
                let c2 = 1.0 - b2.powi(self.step);
                let m = self.first.get_or_insert_with(|| model.zero_gradients());
                let v = self.second.get_or_insert_with(|| model.zero_gradients());
                for (((layer, g), m), v) in model.layers_mut().zip(grads).zip(m).zip(v) {
                    let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    };
                    ndarray::Zip::from(&mut layer.weights)
                        .and(&mut m.weights)
                        .and(&mut v.weights)
                        .and(&g.weights)
                        .for_each(|p, m, v, &g| update(p, m, v, g));
                    ndarray::Zip::from(&mut layer.biases)
                        .and(&mut m.biases)
                        .and(&mut v.biases)
                        .and(&g.biases)
                        .for_each(|p, m, v, &g| update(p, m, v, g));
                }
            }
        }
    }
}
