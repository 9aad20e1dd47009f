use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::nn::Network;
use crate::tensor::Float;

use super::dataset::Dataset;
use super::trainer::argmax;
use super::{Result, TrainError};

/// Counts with `bleached` as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn from_predictions(predicted: &[usize], actual: &[usize]) -> Self {
        let pos = Label::Bleached.index();
        let mut cm = Self::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p == pos, a == pos) {
                (true, true) => cm.tp += 1,
                (true, false) => cm.fp += 1,
                (false, true) => cm.fn_ += 1,
                (false, false) => cm.tn += 1,
            }
        }
        cm
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegenerateFlags {
    /// No positive predictions: precision reported as 0.
    pub precision: bool,
    /// No positive samples: recall reported as 0.
    pub recall: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub confusion: ConfusionMatrix,
    pub degenerate_flags: DegenerateFlags,
}

impl MetricsReport {
    pub fn from_confusion(model: impl Into<String>, cm: ConfusionMatrix) -> Result<Self> {
        let total = cm.total();
        if total == 0 {
            return Err(TrainError::Argument("no samples were evaluated".into()));
        }
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        Ok(Self {
            model: model.into(),
            accuracy: (cm.tp + cm.tn) as f64 / total as f64,
            precision: ratio(cm.tp, cm.tp + cm.fp),
            recall: ratio(cm.tp, cm.tp + cm.fn_),
            confusion: cm,
            degenerate_flags: DegenerateFlags {
                precision: cm.tp + cm.fp == 0,
                recall: cm.tp + cm.fn_ == 0,
            },
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Human-readable summary with two-decimal metrics.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let flag = |b: bool| if b { " (undefined)" } else { "" };
        let c = &self.confusion;
        writeln!(s, "model: {}", self.model).unwrap();
        writeln!(s, "accuracy: {:.2}", self.accuracy).unwrap();
        writeln!(s, "precision: {:.2}{}", self.precision, flag(self.degenerate_flags.precision)).unwrap();
        writeln!(s, "recall: {:.2}{}", self.recall, flag(self.degenerate_flags.recall)).unwrap();
        writeln!(s, "confusion: tp={} fp={} fn={} tn={}", c.tp, c.fp, c.fn_, c.tn).unwrap();
        s
    }
}

/// Samples per inference batch during evaluation.
pub const EVAL_BATCH: usize = 32;

/// Inference-mode argmax class for every sample, in dataset order.
pub fn predict_classes<T: Float>(network: &Network<T>, data: &Dataset<T>) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(data.len());
    let all: Vec<usize> = (0..data.len()).collect();
    for idx in all.chunks(EVAL_BATCH) {
        let (x, _) = data.batch(idx)?;
        let logits = network.predict(&x)?;
        let k = logits.shape()[1];
        out.extend(logits.data().chunks(k).map(argmax));
    }
    Ok(out)
}

pub fn evaluate<T: Float>(network: &Network<T>, data: &Dataset<T>, model: &str) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(TrainError::Argument("evaluation set is empty".into()));
    }
    let predicted = predict_classes(network, data)?;
    MetricsReport::from_confusion(model, ConfusionMatrix::from_predictions(&predicted, data.labels()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_confusion() {
        let cm = ConfusionMatrix {
            tp: 4,
            fp: 1,
            fn_: 2,
            tn: 3,
        };
        let r = MetricsReport::from_confusion("m", cm).unwrap();
        assert_eq!(r.accuracy, 0.7);
        assert_eq!(r.precision, 0.8);
        assert!((r.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!(r.to_text().contains("recall: 0.67"));
    }

    #[test]
    fn no_positive_predictions() {
        let cm = ConfusionMatrix::from_predictions(&[0, 0, 0], &[1, 0, 1]);
        let r = MetricsReport::from_confusion("m", cm).unwrap();
        assert!(r.degenerate_flags.precision);
        assert!(!r.degenerate_flags.recall);
        assert_eq!((r.precision, r.recall), (0.0, 0.0));
    }

    #[test]
    fn json_shape() {
        let r = MetricsReport::from_confusion("m", ConfusionMatrix::from_predictions(&[1], &[1])).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["confusion"]["fn"], 0);
        assert_eq!(v["degenerate_flags"]["precision"], false);
        assert_eq!(v["accuracy"], 1.0);
    }
}
