use serde::{Deserialize, Serialize};

use super::DetectError;

/// Binary confusion-matrix metrics. Ratios with a zero denominator are 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub tnr: f64,
    pub fnr: f64,
    /// Fraction of inputs that received a verdict.
    pub dcr: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Metrics of positive-class predictions against truth. `None` marks an
/// input the detector produced no verdict for: it lowers the coverage rate
/// and is left out of the confusion matrix.
pub fn evaluate(predictions: &[Option<bool>], truth: &[bool]) -> Result<Metrics, DetectError> {
    if predictions.len() != truth.len() {
        return Err(DetectError::LengthMismatch { predictions: predictions.len(), truth: truth.len() });
    }
    let mut m = Metrics::default();
    let mut covered = 0;
    for (p, &t) in predictions.iter().zip(truth) {
        let Some(p) = *p else { continue };
        covered += 1;
        match (p, t) {
            (true, true) => m.tp += 1,
            (true, false) => m.fp += 1,
            (false, false) => m.tn += 1,
            (false, true) => m.fn_ += 1,
        }
    }
    m.precision = ratio(m.tp, m.tp + m.fp);
    m.recall = ratio(m.tp, m.tp + m.fn_);
    m.f1 = if m.precision + m.recall > 0.0 { 2.0 * m.precision * m.recall / (m.precision + m.recall) } else { 0.0 };
    m.accuracy = ratio(m.tp + m.tn, covered);
    m.tpr = m.recall;
    m.fnr = ratio(m.fn_, m.tp + m.fn_);
    m.fpr = ratio(m.fp, m.fp + m.tn);
    m.tnr = ratio(m.tn, m.fp + m.tn);
    m.dcr = ratio(covered, truth.len());
    Ok(m)
}

/// [`evaluate`] with a verdict for every input.
pub fn binary_metrics(predictions: &[bool], truth: &[bool]) -> Result<Metrics, DetectError> {
    let p: Vec<Option<bool>> = predictions.iter().map(|&b| Some(b)).collect();
    evaluate(&p, truth)
}
