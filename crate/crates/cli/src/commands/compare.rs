use std::fmt::Write as _;

use anyhow::{anyhow, Result};
use reefgrad_core::train::{evaluate as score, ConfusionMatrix, DegenerateFlags, MetricsReport, TrainHistory};
use serde::{Deserialize, Serialize};

use super::run::{build_model, fit, load_dataset, load_split};
use super::{create_dir, write_text};
use crate::config::{model_label, ModelChoice, RunConfig};
use crate::RunArgs;

/// Row order and labels of the comparison table.
pub const COMPARISON_ROWS: [(&str, ModelChoice, bool); 5] = [
    ("ResNet101", ModelChoice::Resnet101, false),
    ("ResNet152", ModelChoice::Resnet152, false),
    ("ResNet50", ModelChoice::Resnet50, false),
    ("ResNet (Imitation)", ModelChoice::Imitation, false),
    ("ResNet (Imitation) + preprocessing", ModelChoice::Imitation, true),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub model: String,
    /// `scratch`, `random` (untrained backbone) or `pretrained` (weights file).
    pub init: String,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degenerate_flags: Option<DegenerateFlags>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CompareRow {
    fn succeeded(model: &str, init: &str, r: MetricsReport) -> Self {
        Self {
            model: model.to_string(),
            init: init.to_string(),
            status: "ok".into(),
            accuracy: Some(r.accuracy),
            precision: Some(r.precision),
            recall: Some(r.recall),
            confusion: Some(r.confusion),
            degenerate_flags: Some(r.degenerate_flags),
            error: None,
        }
    }

    fn failed(model: &str, init: &str, error: String) -> Self {
        Self {
            model: model.to_string(),
            init: init.to_string(),
            status: "failed".into(),
            accuracy: None,
            precision: None,
            recall: None,
            confusion: None,
            degenerate_flags: None,
            error: Some(error),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub seed: u64,
    pub train_images: usize,
    pub validation_images: usize,
    pub rows: Vec<CompareRow>,
}

impl ComparisonTable {
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
        let mut s = String::new();
        writeln!(s, "{:<width$}  Accuracy  Precision  Recall  Init", "Model").unwrap();
        for r in &self.rows {
            match (r.accuracy, r.precision, r.recall) {
                (Some(a), Some(p), Some(rc)) => {
                    writeln!(s, "{:<width$}  {a:<8.2}  {p:<9.2}  {rc:<6.2}  {}", r.model, r.init).unwrap()
                }
                _ => writeln!(
                    s,
                    "{:<width$}  failed: {}",
                    r.model,
                    r.error.as_deref().unwrap_or("unknown error")
                )
                .unwrap(),
            }
        }
        writeln!(
            s,
            "({} training / {} validation images, seed {})",
            self.train_images, self.validation_images, self.seed
        )
        .unwrap();
        s
    }
}

pub fn compare(args: &RunArgs) -> Result<()> {
    let run = RunConfig::resolve(args.config.as_deref(), args.run.clone())?;
    let out = run.out_dir();
    create_dir(&out)?;
    let root = run.data_dir()?;
    let (train_m, val_m) = load_split(&run)?;
    let config = run.train_config();
    let resolution = run.resolution();

    let plain = run.pipeline(resolution, false);
    let sharp = run.pipeline(resolution, true);
    let plain_sets = (load_dataset(root, &train_m, &plain)?, load_dataset(root, &val_m, &plain)?);
    let sharp_sets = (load_dataset(root, &train_m, &sharp)?, load_dataset(root, &val_m, &sharp)?);

    let mut rows = Vec::new();
    let mut first_error = None;
    for (label, choice, sharpen) in COMPARISON_ROWS {
        let weights = run.weights_for(choice);
        let init = match (choice, weights) {
            (ModelChoice::Imitation, _) => "scratch",
            (_, Some(_)) => "pretrained",
            (_, None) => "random",
        };
        let (train_set, val_set) = if sharpen { &sharp_sets } else { &plain_sets };
        let spec = run.model_spec(choice);
        debug_assert_eq!(model_label(&spec, sharpen), label);
        log::info!("compare: training {label} ({init})");
        let outcome = build_model(&spec, run.seed(), weights).and_then(|mut net| {
            fit(&mut net, train_set, &config, TrainHistory::default(), &spec, None)?;
            Ok(score(&net, val_set, label)?)
        });
        rows.push(match outcome {
            Ok(report) => CompareRow::succeeded(label, init, report),
            Err(e) => {
                log::warn!("compare: {label} failed: {e:#}");
                let row = CompareRow::failed(label, init, format!("{e:#}"));
                first_error.get_or_insert(e);
                row
            }
        });
    }
    let table = ComparisonTable {
        seed: run.seed(),
        train_images: train_m.len(),
        validation_images: val_m.len(),
        rows,
    };
    let text = table.to_text();
    write_text(&out.join("comparison.json"), &serde_json::to_string_pretty(&table)?)?;
    write_text(&out.join("comparison.txt"), &text)?;
    print!("{text}");
    if table.rows.iter().all(|r| r.status != "ok") {
        let e = first_error.unwrap_or_else(|| anyhow!("no comparison run succeeded"));
        return Err(e.context("every comparison run failed"));
    }
    Ok(())
}
