//! Classification and regression scoring.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute normalized-power error counted as a hit.
pub const REGRESSION_TOLERANCE: f64 = 0.10;

/// Counts indexed `[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }
}

pub fn confusion(truth: &[usize], pred: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: pred.len(),
        });
    }
    let mut counts = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= n_classes || p >= n_classes {
            return Err(Error::Domain(format!(
                "label {} outside 0..{n_classes}",
                t.max(p)
            )));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub support: Vec<u64>,
    pub macro_f1: f64,
    pub accuracy: f64,
}

/// `a / b`, or 0 when `b` is 0.
fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

impl ClassMetrics {
    /// Per-class scores. A class never predicted has precision 0; a class
    /// absent from the truth has recall 0.
    pub fn from_confusion(cm: &ConfusionMatrix) -> Self {
        let n = cm.n_classes();
        let mut m = ClassMetrics {
            precision: Vec::with_capacity(n),
            recall: Vec::with_capacity(n),
            f1: Vec::with_capacity(n),
            support: Vec::with_capacity(n),
            macro_f1: 0.0,
            accuracy: ratio(cm.correct() as f64, cm.total() as f64),
        };
        for c in 0..n {
            let tp = cm.counts[c][c] as f64;
            let support: u64 = cm.counts[c].iter().sum();
            let predicted: u64 = cm.counts.iter().map(|row| row[c]).sum();
            let p = ratio(tp, predicted as f64);
            let r = ratio(tp, support as f64);
            m.precision.push(p);
            m.recall.push(r);
            m.f1.push(ratio(2.0 * p * r, p + r));
            m.support.push(support);
        }
        m.macro_f1 = ratio(m.f1.iter().sum(), n as f64);
        m
    }
}

/// Summary of normalized-power regression error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub n: usize,
    pub mae: f64,
    pub rmse: f64,
    pub max_error: f64,
    pub within_tolerance: f64,
    /// Same statistics over samples whose stage-1 class was correct.
    pub conditional: Option<ConditionalStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalStats {
    pub n: usize,
    pub mae: f64,
    pub within_tolerance: f64,
}

fn summarize(errors: impl Iterator<Item = f64> + Clone) -> (usize, f64, f64, f64, f64) {
    let n = errors.clone().count();
    let sum: f64 = errors.clone().sum();
    let sq: f64 = errors.clone().map(|e| e * e).sum();
    let max = errors.clone().fold(0.0, f64::max);
    let hits = errors.filter(|&e| e <= REGRESSION_TOLERANCE).count();
    let nf = n as f64;
    (n, ratio(sum, nf), ratio(sq, nf).sqrt(), max, ratio(hits as f64, nf))
}

impl RegressionReport {
    /// `class_correct`, when given, is row-aligned and marks samples whose
    /// stage-1 prediction was right.
    pub fn new(truth: &[f64], pred: &[f64], class_correct: Option<&[bool]>) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::LengthMismatch {
                left: truth.len(),
                right: pred.len(),
            });
        }
        if let Some(c) = class_correct {
            if c.len() != truth.len() {
                return Err(Error::LengthMismatch {
                    left: truth.len(),
                    right: c.len(),
                });
            }
        }
        let errors: Vec<f64> = truth.iter().zip(pred).map(|(t, p)| (t - p).abs()).collect();
        let (n, mae, rmse, max_error, within_tolerance) = summarize(errors.iter().copied());
        let conditional = class_correct.map(|c| {
            let (n, mae, _, _, within_tolerance) = summarize(
                errors
                    .iter()
                    .zip(c)
                    .filter(|(_, &ok)| ok)
                    .map(|(&e, _)| e),
            );
            ConditionalStats {
                n,
                mae,
                within_tolerance,
            }
        });
        Ok(Self {
            n,
            mae,
            rmse,
            max_error,
            within_tolerance,
            conditional,
        })
    }
}

/// One row of a per-sample error table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub row: usize,
    pub true_class: usize,
    pub predicted_class: usize,
    pub true_norm: f64,
    pub predicted_norm: f64,
    pub abs_error: f64,
}

pub fn write_error_csv<W: Write>(sink: W, rows: &[ErrorRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_error_csv_file(path: &Path, rows: &[ErrorRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_error_csv(std::io::BufWriter::new(file), rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 3, 4, 0];
        let cm = confusion(&y, &y, 5).unwrap();
        let m = ClassMetrics::from_confusion(&cm);
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
        assert_eq!(m.support, vec![2, 1, 1, 1, 1]);
    }

    #[test]
    fn hand_worked_example() {
        // true: 0 0 1 1 ; pred: 0 1 1 1
        let cm = confusion(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1], vec![0, 2]]);
        let m = ClassMetrics::from_confusion(&cm);
        assert_eq!(m.precision, vec![1.0, 2.0 / 3.0]);
        assert_eq!(m.recall, vec![0.5, 1.0]);
        assert!((m.f1[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1[1] - 0.8).abs() < 1e-15);
        assert_eq!(m.accuracy, 0.75);
    }

    #[test]
    fn unpredicted_class_scores_zero() {
        let cm = confusion(&[0, 1], &[0, 0], 3).unwrap();
        let m = ClassMetrics::from_confusion(&cm);
        assert_eq!(m.precision[1], 0.0);
        assert_eq!(m.f1[2], 0.0);
    }

    #[test]
    fn mismatched_lengths_fail() {
        assert!(matches!(
            confusion(&[0, 1], &[0], 5),
            Err(Error::LengthMismatch { left: 2, right: 1 })
        ));
        assert!(confusion(&[7], &[0], 5).is_err());
    }

    #[test]
    fn regression_summary() {
        let r = RegressionReport::new(
            &[0.5, 0.5, 0.5, 0.5],
            &[0.55, 0.3, 0.5, 0.61],
            Some(&[true, false, true, true]),
        )
        .unwrap();
        assert_eq!(r.n, 4);
        assert!((r.mae - (0.05 + 0.2 + 0.0 + 0.11) / 4.0).abs() < 1e-12);
        assert_eq!(r.within_tolerance, 0.5);
        let c = r.conditional.unwrap();
        assert_eq!(c.n, 3);
        assert!((c.within_tolerance - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn error_csv_has_header() {
        let mut buf = Vec::new();
        write_error_csv(
            &mut buf,
            &[ErrorRow {
                row: 0,
                true_class: 1,
                predicted_class: 1,
                true_norm: 0.5,
                predicted_norm: 0.25,
                abs_error: 0.25,
            }],
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("row,true_class,predicted_class,true_norm,predicted_norm,abs_error\n"));
    }
}
