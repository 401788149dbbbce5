use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_FLOOR, 1]` before the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CategoricalCrossEntropy,
    MeanAbsoluteError,
    MeanSquaredError,
}

impl LossKind {
    /// Mean data loss over the batch (no regularization).
    pub fn value(self, pred: &ArrayView2<f64>, target: &ArrayView2<f64>) -> f64 {
        let rows = pred.nrows().max(1) as f64;
        let elems = pred.len().max(1) as f64;
        match self {
            LossKind::CategoricalCrossEntropy => {
                let mut total = 0.0;
                Zip::from(pred).and(target).for_each(|&p, &t| {
                    if t != 0.0 {
                        total -= t * p.clamp(PROB_FLOOR, 1.0).ln();
                    }
                });
                total / rows
            }
            LossKind::MeanAbsoluteError => {
                let mut total = 0.0;
                Zip::from(pred)
                    .and(target)
                    .for_each(|&p, &t| total += (p - t).abs());
                total / elems
            }
            LossKind::MeanSquaredError => {
                let mut total = 0.0;
                Zip::from(pred)
                    .and(target)
                    .for_each(|&p, &t| total += (p - t) * (p - t));
                total / elems
            }
        }
    }

    /// Gradient of [`Self::value`] w.r.t. `pred`.
    pub fn gradient(self, pred: &ArrayView2<f64>, target: &ArrayView2<f64>) -> Array2<f64> {
        let rows = pred.nrows().max(1) as f64;
        let elems = pred.len().max(1) as f64;
        let mut g = Array2::zeros(pred.raw_dim());
        match self {
            LossKind::CategoricalCrossEntropy => {
                Zip::from(&mut g).and(pred).and(target).for_each(|g, &p, &t| {
                    if t != 0.0 && (PROB_FLOOR..=1.0).contains(&p) {
                        *g = -t / (p * rows);
                    }
                });
            }
            LossKind::MeanAbsoluteError => {
                // Subgradient of |x| at 0 is 0.
                Zip::from(&mut g).and(pred).and(target).for_each(|g, &p, &t| {
                    let d = p - t;
                    *g = if d > 0.0 {
                        1.0 / elems
                    } else if d < 0.0 {
                        -1.0 / elems
                    } else {
                        0.0
                    };
                });
            }
            LossKind::MeanSquaredError => {
                Zip::from(&mut g)
                    .and(pred)
                    .and(target)
                    .for_each(|g, &p, &t| *g = 2.0 * (p - t) / elems);
            }
        }
        g
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::CategoricalCrossEntropy => "categorical_cross_entropy",
            LossKind::MeanAbsoluteError => "mean_absolute_error",
            LossKind::MeanSquaredError => "mean_squared_error",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "categorical_cross_entropy" | "cce" => Ok(LossKind::CategoricalCrossEntropy),
            "mean_absolute_error" | "mae" => Ok(LossKind::MeanAbsoluteError),
            "mean_squared_error" | "mse" => Ok(LossKind::MeanSquaredError),
            _ => Err(Error::Unknown {
                kind: "loss",
                value: s.to_string(),
                valid: "categorical_cross_entropy, mean_absolute_error, mean_squared_error"
                    .into(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cce_examples() {
        let onehot = array![[0.0, 0.0, 1.0, 0.0, 0.0]];
        let v = LossKind::CategoricalCrossEntropy.value(&onehot.view(), &onehot.view());
        assert!(v.abs() < 1e-10);
        let uniform = array![[0.2; 5]];
        let v = LossKind::CategoricalCrossEntropy.value(&uniform.view(), &onehot.view());
        assert!((v - 5f64.ln()).abs() < 1e-12);
        // a zero probability on the true class is clamped, not infinite
        let wrong = array![[1.0, 0.0, 0.0, 0.0, 0.0]];
        let v = LossKind::CategoricalCrossEntropy.value(&wrong.view(), &onehot.view());
        assert!((v + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn mae_examples() {
        let p = array![[0.7]];
        let t = array![[0.9]];
        assert!((LossKind::MeanAbsoluteError.value(&p.view(), &t.view()) - 0.2).abs() < 1e-15);
        let g = LossKind::MeanAbsoluteError.gradient(&t.view(), &t.view());
        assert_eq!(g[[0, 0]], 0.0);
    }

    #[test]
    fn unknown_kind_is_an_error() {
        assert!("hinge".parse::<LossKind>().is_err());
        assert_eq!("mae".parse::<LossKind>().unwrap(), LossKind::MeanAbsoluteError);
    }
}
