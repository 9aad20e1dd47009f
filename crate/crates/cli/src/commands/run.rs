use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use reefgrad_core::data::{
    bilinear_resample, encode_png, load_image, resize_max_dim, sharpen, split, to_tensor,
    DatasetManifest, Label,
};
use reefgrad_core::gradcam::{self, HeatMap};
use reefgrad_core::nn::{
    attach_transfer_head, build_resnet_backbone, load_weights_file, ModelSpec, Network,
};
use reefgrad_core::train::{
    checkpoint, evaluate as score, resume, Dataset, MetricsReport, PipelineConfig,
    TrainConfig, TrainHistory, Trainer,
};

use super::{create_dir, load_manifest, write_text};
use crate::config::{model_label, RunConfig};
use crate::{EvaluateArgs, ExplainArgs, RunArgs, Subset};

pub const CHECKPOINT_FILE: &str = "model.rnwt";

/// Builds a network for `spec`, loading backbone weights from `weights` when
/// given.
pub fn build_model(spec: &ModelSpec, seed: u64, weights: Option<&Path>) -> Result<Network<f32>> {
    match (spec, weights) {
        (_, None) => Ok(spec.build(seed)?),
        (
            ModelSpec::Resnet {
                depth,
                resolution,
                num_classes,
                transfer_head: Some(head),
            },
            Some(path),
        ) => {
            let mut backbone = build_resnet_backbone(*depth, *resolution, seed)?;
            load_weights_file(&mut backbone, path)
                .with_context(|| format!("loading backbone weights {}", path.display()))?;
            Ok(attach_transfer_head(
                backbone,
                head.hidden_units,
                *num_classes,
                head.freeze_backbone,
                seed.wrapping_add(1),
            )?)
        }
        (_, Some(_)) => bail!("backbone weights only apply to ResNet models with a transfer head"),
    }
}

pub fn load_split(run: &RunConfig) -> Result<(DatasetManifest, DatasetManifest)> {
    let data = run.data_dir()?;
    let manifest = load_manifest(data)?;
    Ok(split(&manifest, &run.split_spec())?)
}

pub fn load_dataset(root: &Path, manifest: &DatasetManifest, pipeline: &PipelineConfig) -> Result<Dataset<f32>> {
    Dataset::load(root, manifest, pipeline).with_context(|| format!("loading images under {}", root.display()))
}

/// Trains `net` for the configured epochs, writing a checkpoint after every
/// epoch when `checkpoint_path` is set.
pub fn fit(
    net: &mut Network<f32>,
    data: &Dataset<f32>,
    config: &TrainConfig,
    mut history: TrainHistory,
    spec: &ModelSpec,
    checkpoint_path: Option<&Path>,
) -> Result<TrainHistory> {
    let mut trainer = Trainer::new(config.clone())?.resume_at(history.len());
    while history.len() < config.epochs {
        let stats = trainer.run_epoch(net, data)?;
        history.epochs.push(stats);
        log::info!(
            "epoch {}/{}: loss {:.4}, accuracy {:.4}",
            history.len(),
            config.epochs,
            stats.loss,
            stats.accuracy
        );
        if let Some(path) = checkpoint_path {
            checkpoint(net, &history, Some(spec), path)?;
        }
    }
    Ok(history)
}

pub fn train(args: &RunArgs) -> Result<()> {
    let run = RunConfig::resolve(args.config.as_deref(), args.run.clone())?;
    let out = run.out_dir();
    create_dir(&out)?;
    let ckpt = run.checkpoint.clone().unwrap_or_else(|| out.join(CHECKPOINT_FILE));
    let choice = run.model();
    let spec = run.model_spec(choice);
    let sharpen = run.sharpen();
    let config = run.train_config();

    let (train_m, val_m) = load_split(&run)?;
    let pipeline = run.pipeline(spec.resolution(), sharpen);
    let root = run.data_dir()?;
    let train_set = load_dataset(root, &train_m, &pipeline)?;
    let val_set = load_dataset(root, &val_m, &pipeline)?;

    let (mut net, history) = if args.resume && ckpt.exists() {
        let (net, history, stored) = resume::<f32>(&ckpt)?;
        if stored != spec {
            bail!("checkpoint {} was trained with a different model configuration", ckpt.display());
        }
        (net, history)
    } else {
        (build_model(&spec, run.seed(), run.weights_for(choice))?, TrainHistory::default())
    };
    let label = model_label(&spec, sharpen);
    println!(
        "training {label}: {} parameters ({} trainable), {} train / {} validation images",
        net.num_parameters(),
        net.num_trainable_parameters(),
        train_set.len(),
        val_set.len()
    );
    let history = fit(&mut net, &train_set, &config, history, &spec, Some(&ckpt))?;
    if history.is_empty() {
        checkpoint(&net, &history, Some(&spec), &ckpt)?;
    }
    write_text(&out.join("history.json"), &serde_json::to_string_pretty(&history)?)?;
    train_m.save(out.join("train_manifest.csv"))?;
    val_m.save(out.join("val_manifest.csv"))?;
    write_text(&out.join("run_config.json"), &serde_json::to_string_pretty(&run)?)?;

    let report = score(&net, &val_set, &label)?;
    write_text(&out.join("metrics.json"), &report.to_json())?;
    print!("{}", report.to_text());
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}

fn require_checkpoint(run: &RunConfig) -> Result<PathBuf> {
    match &run.checkpoint {
        Some(p) if p.is_file() => Ok(p.clone()),
        Some(p) => bail!("checkpoint {} not found", p.display()),
        None => bail!("missing --checkpoint <file>"),
    }
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let run = RunConfig::resolve(args.config.as_deref(), args.run.clone())?;
    let ckpt = require_checkpoint(&run)?;
    let (net, _, spec) = resume::<f32>(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let root = run.data_dir()?;
    let manifest = match args.subset {
        Subset::All => load_manifest(root)?,
        Subset::Train => load_split(&run)?.0,
        Subset::Val => load_split(&run)?.1,
    };
    let sharpen = run.sharpen();
    let data = load_dataset(root, &manifest, &run.pipeline(spec.resolution(), sharpen))?;
    let report: MetricsReport = score(&net, &data, &model_label(&spec, sharpen))?;
    print!("{}", report.to_text());
    if let Some(out) = &run.out {
        create_dir(out)?;
        write_text(&out.join("metrics.json"), &report.to_json())?;
    }
    Ok(())
}

/// Stretches a heatmap to `width x height`, keeping values in `[0, 1]`.
fn resize_heatmap(hm: &HeatMap, width: usize, height: usize) -> HeatMap {
    let values = if (hm.width, hm.height) == (width, height) {
        hm.values.clone()
    } else {
        bilinear_resample(&hm.values, hm.width, hm.height, 1, width, height)
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect()
    };
    HeatMap { width, height, values }
}

pub fn explain(args: &ExplainArgs) -> Result<()> {
    let run = RunConfig::resolve(args.config.as_deref(), args.run.clone())?;
    let ckpt = require_checkpoint(&run)?;
    let (net, _, spec) = resume::<f32>(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let out = run.out_dir();
    create_dir(&out)?;
    let pipeline = run.pipeline(spec.resolution(), run.sharpen());
    for path in &args.images {
        let img = load_image(path)?;
        let mut shown = resize_max_dim(&img, pipeline.max_dim);
        if pipeline.sharpen {
            shown = sharpen(&shown);
        }
        let input = to_tensor::<f32>(&shown, pipeline.resolution, &pipeline.normalization);
        let r = pipeline.resolution;
        let logits = net.predict(&input.clone().reshape(&[1, 3, r, r])?)?;
        let predicted = argmax(logits.data());
        let target = run.class.map(Label::index).unwrap_or(predicted);
        let e = gradcam::explain(&net, &input, target, run.layer.as_deref())?;
        let heat = resize_heatmap(&e.heatmap, shown.width(), shown.height());
        let blended = gradcam::overlay(&heat, &shown, args.alpha)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        let png = out.join(format!("{stem}_gradcam.png"));
        std::fs::write(&png, encode_png(&blended)?).with_context(|| format!("writing {}", png.display()))?;
        write_text(&out.join(format!("{stem}_heatmap.csv")), &e.heatmap.to_csv())?;
        let name = |i: usize| Label::from_index(i).map(Label::as_str).unwrap_or("?");
        println!(
            "{}: predicted {} (p={:.3}); explained {} at layer {} -> {}",
            path.display(),
            name(predicted),
            e.probabilities[predicted],
            name(target),
            e.layer,
            png.display()
        );
    }
    Ok(())
}

fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
