use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;
use std::time::Duration;

use reefgrad::commands::ComparisonTable;
use reefgrad::{run_with, EXIT_CREDENTIALS, EXIT_DIVERGENCE, EXIT_FAILURE, EXIT_OK};
use reefgrad_core::data::{decode_image, encode_png, DatasetManifest, HttpResponse, HttpTransport, ImageRgb};
use reefgrad_core::nn::ModelSpec;
use reefgrad_core::tensor::Tensor;
use reefgrad_core::train::{checkpoint, read_meta, TrainHistory};
use tempfile::TempDir;

#[derive(Default)]
struct Mock {
    routes: Vec<(&'static str, Vec<HttpResponse>)>,
    requests: Mutex<Vec<String>>,
}

impl HttpTransport for Mock {
    fn get(&self, url: &str) -> Result<HttpResponse, String> {
        let (prefix, queue) = self
            .routes
            .iter()
            .find(|(p, _)| url.starts_with(p))
            .ok_or_else(|| format!("no route for {url}"))?;
        let mut log = self.requests.lock().unwrap();
        let n = log.iter().filter(|u| u.starts_with(prefix)).count();
        log.push(url.to_string());
        Ok(queue[n.min(queue.len() - 1)].clone())
    }

    fn sleep(&self, _: Duration) {}
}

const SEARCH: &str = "https://api.flickr.com/services/rest/";
const STATIC: &str = "https://live.staticflickr.com/";

fn three_photos() -> HttpResponse {
    HttpResponse::ok(
        r#"{"photos":{"page":1,"pages":1,"perpage":100,"total":"3","photo":[
            {"id":"1","secret":"a","server":"7"},{"id":"2","secret":"b","server":"7"},
            {"id":"3","secret":"c","server":"7"}]},"stat":"ok"}"#,
    )
}

fn run(args: &[&str]) -> i32 {
    run_with(std::iter::once("reefgrad").chain(args.iter().copied()), &Mock::default())
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Bright, noisy "bleached" images and dark "healthy" ones, `per_class` each.
fn synthetic_dataset(root: &Path, per_class: usize) {
    for (label, base) in [("bleached", 200u8), ("healthy", 40u8)] {
        fs::create_dir_all(root.join(label)).unwrap();
        for i in 0..per_class {
            let img = ImageRgb::from_fn(24 + i, 20, |x, y| {
                let v = base.wrapping_add(((x * 7 + y * 13 + i * 5) % 23) as u8);
                [v, v, v.saturating_sub(10)]
            });
            fs::write(root.join(label).join(format!("{label}{i:02}.png")), encode_png(&img).unwrap()).unwrap();
        }
    }
}

struct Workspace {
    _dir: TempDir,
    data: PathBuf,
    out: PathBuf,
}

fn workspace(per_class: usize) -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synthetic_dataset(&data, per_class);
    let out = dir.path().join("out");
    Workspace { _dir: dir, data, out }
}

#[test]
fn missing_key_exits_with_credentials_code() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_reefgrad"))
        .args(["fetch", "--out", path(dir.path()), "--count", "1"])
        .env_remove("FLICKR_API_KEY")
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(EXIT_CREDENTIALS));
    assert!(String::from_utf8_lossy(&status.stderr).contains("FLICKR_API_KEY"));
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(run(&["train", "--epochs", "many"]), EXIT_FAILURE);
    assert_eq!(run(&["nonsense"]), EXIT_FAILURE);
    assert_eq!(run(&["--help"]), EXIT_OK);
}

#[test]
fn fetch_writes_photos_into_class_directory() {
    let dir = tempfile::tempdir().unwrap();
    let mock = Mock {
        routes: vec![(SEARCH, vec![three_photos()]), (STATIC, vec![HttpResponse::ok(b"jpeg".to_vec())])],
        ..Mock::default()
    };
    let args = ["reefgrad", "fetch", "--out", path(dir.path()), "--api-key", "k", "--class", "bleached", "--count", "3"];
    assert_eq!(run_with(args, &mock), EXIT_OK);
    let mut files: Vec<_> = fs::read_dir(dir.path().join("bleached"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(files, ["1.jpg", "2.jpg", "3.jpg"]);
    assert!(!dir.path().join("healthy").exists());
}

#[test]
fn fetch_auth_failure_and_unwritable_destination() {
    let dir = tempfile::tempdir().unwrap();
    let denied = Mock {
        routes: vec![(SEARCH, vec![HttpResponse::ok(r#"{"stat":"fail","code":100,"message":"Invalid API Key"}"#)])],
        ..Mock::default()
    };
    let args = ["reefgrad", "fetch", "--out", path(dir.path()), "--api-key", "bad", "--count", "1"];
    assert_eq!(run_with(args, &denied), EXIT_CREDENTIALS);

    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let ok = Mock {
        routes: vec![(SEARCH, vec![three_photos()]), (STATIC, vec![HttpResponse::ok(b"jpeg".to_vec())])],
        ..Mock::default()
    };
    let args = ["reefgrad", "fetch", "--out", path(&blocker), "--api-key", "k", "--count", "3"];
    assert_eq!(run_with(args, &ok), EXIT_FAILURE);
}

#[test]
fn prepare_resizes_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("raw");
    for (label, w, h) in [("bleached", 600, 400), ("bleached", 50, 40), ("healthy", 100, 900), ("healthy", 300, 300)] {
        fs::create_dir_all(data.join(label)).unwrap();
        let img = ImageRgb::from_fn(w, h, |x, y| [(x % 256) as u8, (y % 256) as u8, 90]);
        fs::write(data.join(label).join(format!("{w}x{h}.png")), encode_png(&img).unwrap()).unwrap();
    }
    fs::write(data.join("healthy").join("notes.txt"), b"ignore me").unwrap();

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run(&["prepare", "--data", path(&data), "--out", path(&a)]), EXIT_OK);
    assert_eq!(run(&["prepare", "--data", path(&data), "--out", path(&b)]), EXIT_OK);

    let manifest = DatasetManifest::load(a.join("manifest.csv")).unwrap();
    assert_eq!(manifest.len(), 4);
    let mut dims = Vec::new();
    for e in manifest.entries() {
        let bytes = fs::read(a.join(&e.path)).unwrap();
        assert_eq!(bytes, fs::read(b.join(&e.path)).unwrap());
        let img = decode_image(&bytes).unwrap();
        assert!(img.width().max(img.height()) <= 300);
        dims.push((img.width(), img.height()));
    }
    dims.sort();
    assert_eq!(dims, [(33, 300), (50, 40), (300, 200), (300, 300)]);
}

#[test]
fn prepare_sharpen_keeps_constant_images() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("raw");
    for label in ["bleached", "healthy"] {
        fs::create_dir_all(data.join(label)).unwrap();
        let img = ImageRgb::filled(40, 30, [120, 80, 60]);
        fs::write(data.join(label).join("flat.png"), encode_png(&img).unwrap()).unwrap();
    }
    let plain = dir.path().join("plain");
    let sharp = dir.path().join("sharp");
    assert_eq!(run(&["prepare", "--data", path(&data), "--out", path(&plain)]), EXIT_OK);
    assert_eq!(run(&["prepare", "--data", path(&data), "--out", path(&sharp), "--sharpen"]), EXIT_OK);
    for label in ["bleached", "healthy"] {
        let rel = format!("{label}/flat.png");
        assert_eq!(fs::read(plain.join(&rel)).unwrap(), fs::read(sharp.join(&rel)).unwrap());
    }
}

#[test]
fn prepare_requires_class_directories() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("raw/bleached")).unwrap();
    let out = dir.path().join("out");
    assert_eq!(run(&["prepare", "--data", path(&dir.path().join("raw")), "--out", path(&out)]), EXIT_FAILURE);
}

#[test]
fn train_writes_checkpoint_and_history() {
    let ws = workspace(8);
    let code = run(&[
        "train", "--data", path(&ws.data), "--out", path(&ws.out), "--resolution", "32", "--epochs", "2",
        "--batch", "4", "--seed", "3",
    ]);
    assert_eq!(code, EXIT_OK);
    let ckpt = ws.out.join("model.rnwt");
    assert!(ckpt.is_file());
    let meta = read_meta(&ckpt).unwrap();
    assert_eq!(meta.epochs_completed, 2);
    assert_eq!(meta.history.len(), 2);
    let history: TrainHistory = serde_json::from_str(&fs::read_to_string(ws.out.join("history.json")).unwrap()).unwrap();
    assert_eq!(history, meta.history);
    let val = DatasetManifest::load(ws.out.join("val_manifest.csv")).unwrap();
    let train = DatasetManifest::load(ws.out.join("train_manifest.csv")).unwrap();
    assert_eq!((train.len(), val.len()), (12, 4));

    // Resuming a finished run trains nothing further.
    let code = run(&[
        "train", "--data", path(&ws.data), "--out", path(&ws.out), "--resolution", "32", "--epochs", "3",
        "--batch", "4", "--seed", "3", "--resume",
    ]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(read_meta(&ckpt).unwrap().history.epochs[..2], meta.history.epochs[..]);
    assert_eq!(read_meta(&ckpt).unwrap().epochs_completed, 3);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let ws = workspace(4);
    fs::create_dir_all(&ws.out).unwrap();
    let cfg = ws.out.join("run.json");
    let body = serde_json::json!({
        "data": ws.data, "out": ws.out, "resolution": 32, "epochs": 3, "batch": 4, "seed": 1
    });
    fs::write(&cfg, body.to_string()).unwrap();
    assert_eq!(run(&["train", "--config", path(&cfg), "--epochs", "1"]), EXIT_OK);
    assert_eq!(read_meta(ws.out.join("model.rnwt")).unwrap().epochs_completed, 1);

    fs::write(&cfg, r#"{"epochz": 3}"#).unwrap();
    assert_eq!(run(&["train", "--config", path(&cfg)]), EXIT_FAILURE);
}

#[test]
fn divergence_exits_three() {
    let ws = workspace(4);
    let code = run(&[
        "train", "--data", path(&ws.data), "--out", path(&ws.out), "--resolution", "32", "--epochs", "2",
        "--lr", "1e30", "--optimizer", "sgd", "--batch", "2",
    ]);
    assert_eq!(code, EXIT_DIVERGENCE);
}

#[test]
fn evaluate_reports_constant_classifier_metrics() {
    let ws = workspace(5);
    let spec = ModelSpec::Imitation { resolution: 32, num_classes: 2 };
    let mut net = spec.build::<f32>(0).unwrap();
    let fc = net.param("fc.weight").unwrap().value.shape().to_vec();
    net.param_mut("fc.weight").unwrap().value = Tensor::zeros(&fc);
    net.param_mut("fc.bias").unwrap().value = Tensor::new(&[2], vec![0.0, 1.0]).unwrap();
    fs::create_dir_all(&ws.out).unwrap();
    let ckpt = ws.out.join("bleached.rnwt");
    checkpoint(&net, &TrainHistory::default(), Some(&spec), &ckpt).unwrap();

    let code = run(&[
        "evaluate", "--data", path(&ws.data), "--checkpoint", path(&ckpt), "--subset", "all", "--out", path(&ws.out),
    ]);
    assert_eq!(code, EXIT_OK);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(ws.out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["accuracy"], 0.5);
    assert_eq!(m["precision"], 0.5);
    assert_eq!(m["recall"], 1.0);

    let missing = ws.out.join("nope.rnwt");
    assert_eq!(run(&["evaluate", "--data", path(&ws.data), "--checkpoint", path(&missing)]), EXIT_FAILURE);
}

#[test]
fn explain_writes_overlay_and_rejects_unknown_layers() {
    let ws = workspace(2);
    let spec = ModelSpec::Imitation { resolution: 32, num_classes: 2 };
    let net = spec.build::<f32>(4).unwrap();
    fs::create_dir_all(&ws.out).unwrap();
    let ckpt = ws.out.join("m.rnwt");
    checkpoint(&net, &TrainHistory::default(), Some(&spec), &ckpt).unwrap();
    let image = ws.data.join("bleached/bleached00.png");

    let code = run(&["explain", "--checkpoint", path(&ckpt), "--out", path(&ws.out), path(&image)]);
    assert_eq!(code, EXIT_OK);
    let overlay = decode_image(&fs::read(ws.out.join("bleached00_gradcam.png")).unwrap()).unwrap();
    assert_eq!((overlay.width(), overlay.height()), (24, 20));
    let csv = fs::read_to_string(ws.out.join("bleached00_heatmap.csv")).unwrap();
    for v in csv.split([',', '\n']).filter(|s| !s.is_empty()) {
        let v: f64 = v.parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }

    let code = run(&["explain", "--checkpoint", path(&ckpt), "--out", path(&ws.out), "--layer", "nope", path(&image)]);
    assert_eq!(code, EXIT_FAILURE);
}

#[test]
fn compare_is_deterministic_with_table_labels() {
    let ws = workspace(4);
    let args = |out: &Path| {
        vec![
            "compare".to_string(), "--data".into(), path(&ws.data).into(), "--out".into(), path(out).into(),
            "--resolution".into(), "32".into(), "--epochs".into(), "1".into(), "--batch".into(), "4".into(),
            "--hidden-units".into(), "8".into(),
        ]
    };
    let a = ws.out.join("a");
    let b = ws.out.join("b");
    let code_a = run_with(std::iter::once("reefgrad".to_string()).chain(args(&a)), &Mock::default());
    let code_b = run_with(std::iter::once("reefgrad".to_string()).chain(args(&b)), &Mock::default());
    assert_eq!((code_a, code_b), (EXIT_OK, EXIT_OK));
    let ja = fs::read(a.join("comparison.json")).unwrap();
    assert_eq!(ja, fs::read(b.join("comparison.json")).unwrap());
    let table: ComparisonTable = serde_json::from_slice(&ja).unwrap();
    let labels: Vec<_> = table.rows.iter().map(|r| r.model.as_str()).collect();
    assert_eq!(
        labels,
        ["ResNet101", "ResNet152", "ResNet50", "ResNet (Imitation)", "ResNet (Imitation) + preprocessing"]
    );
    assert!(table.rows.iter().all(|r| r.status == "ok"), "{table:?}");
    assert_eq!((table.train_images, table.validation_images), (6, 2));
}
