use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
    Softmax,
    Sigmoid,
}

impl Activation {
    /// Applies the activation in place, row by row.
    pub fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Linear => {}
            // `f64::max` would turn NaN into 0 and hide a divergence.
            Activation::Relu => z.mapv_inplace(|v| if v > 0.0 || v.is_nan() { v } else { 0.0 }),
            Activation::Sigmoid => z.mapv_inplace(sigmoid),
            Activation::Softmax => {
                for mut row in z.axis_iter_mut(Axis(0)) {
                    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                    row.mapv_inplace(|v| (v - max).exp());
                    let sum = row.sum();
                    row.mapv_inplace(|v| v / sum);
                }
            }
        }
    }

    /// Maps the gradient w.r.t. the activation output `a` onto the
    /// pre-activation.
    pub fn backprop(self, a: &Array2<f64>, grad: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Linear => grad.clone(),
            // The subgradient at 0 is taken as 0.
            Activation::Relu => {
                let mut out = grad.clone();
                out.zip_mut_with(a, |g, &a| {
                    if a <= 0.0 {
                        *g = 0.0
                    }
                });
                out
            }
            Activation::Sigmoid => {
                let mut out = grad.clone();
                out.zip_mut_with(a, |g, &a| *g *= a * (1.0 - a));
                out
            }
            Activation::Softmax => {
                let mut out = grad.clone();
                for (mut g_row, a_row) in out.axis_iter_mut(Axis(0)).zip(a.axis_iter(Axis(0))) {
                    let dot = g_row.dot(&a_row);
                    g_row.zip_mut_with(&a_row, |g, &a| *g = a * (*g - dot));
                }
                out
            }
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Fully connected layer: `activation(x W^T + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    /// Shape `(outputs, inputs)`.
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub activation: Activation,
    pub l1: f64,
    pub l2: f64,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            weights: Array2::zeros((outputs, inputs)),
            biases: Array1::zeros(outputs),
            activation,
            l1: 0.0,
            l2: 0.0,
        }
    }

    /// Uniform init in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = Array2::from_shape_fn((outputs, inputs), |_| rng.random_range(-limit..limit));
        Self {
            weights,
            ..Self::zeros(inputs, outputs, activation)
        }
    }

    pub fn with_regularization(mut self, l1: f64, l2: f64) -> Self {
        self.l1 = l1;
        self.l2 = l2;
        self
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights.t());
        z += &self.biases;
        self.activation.apply(&mut z);
        z
    }

    pub fn penalty(&self) -> f64 {
        let mut p = 0.0;
        if self.l1 != 0.0 {
            p += self.l1 * self.weights.iter().map(|w| w.abs()).sum::<f64>();
        }
        if self.l2 != 0.0 {
            p += self.l2 * self.weights.iter().map(|w| w * w).sum::<f64>();
        }
        p
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}
