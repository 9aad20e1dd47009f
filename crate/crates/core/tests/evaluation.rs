use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reefgrad_core::nn::{
    build_imitation_resnet, Layer, LayerKind, ModelSpec, NetError, NetInit, Network,
};
use reefgrad_core::tensor::Tensor;
use reefgrad_core::train::{
    checkpoint, evaluate, predict_classes, read_meta, resume, resume_into, sidecar_path, train,
    ConfusionMatrix, Dataset, MetricsReport, OptimizerKind, TrainConfig, TrainError, Trainer,
};

fn tiny_net(seed: u64) -> Network<f32> {
    let mut init = NetInit::new(seed);
    Network::new(
        [3, 8, 8],
        vec![
            init.conv("conv", 3, 4, 3, 1, 1, false).unwrap(),
            init.batchnorm("bn", 4),
            Layer::new("relu", LayerKind::Relu),
            init.basic_block("block", 4, 4, 1).unwrap(),
            Layer::new("pool", LayerKind::GlobalAvgPool),
            init.dense("fc", 4, 2),
        ],
    )
    .unwrap()
}

fn random_data(seed: u64, n: usize) -> Dataset<f32> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let inputs = (0..n)
        .map(|_| Tensor::from_fn(&[3, 8, 8], |_| r.random_range(0.0..1.0)))
        .collect();
    let labels = (0..n).map(|i| i % 2).collect();
    Dataset::from_tensors(inputs, labels).unwrap()
}

fn same_state(a: &Network<f32>, b: &Network<f32>) -> bool {
    let (ra, rb) = (a.state_records(), b.state_records());
    ra.len() == rb.len() && ra.iter().zip(&rb).all(|((x, p), (y, q))| x == y && p.bitwise_eq(q))
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        learning_rate: 0.01,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_leave_network_unchanged() {
    let mut net = tiny_net(1);
    let before = net.clone();
    let history = train(&mut net, &random_data(0, 6), &config(0)).unwrap();
    assert!(history.is_empty());
    assert!(same_state(&before, &net));
}

#[test]
fn training_is_deterministic() {
    let data = random_data(2, 10);
    let run = || {
        let mut net = tiny_net(3);
        let h = train(&mut net, &data, &config(3)).unwrap();
        (net, h)
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(ha.len(), 3);
    assert_eq!(ha.last().unwrap().loss.to_bits(), hb.last().unwrap().loss.to_bits());
    assert!(same_state(&a, &b));
}

#[test]
fn shuffle_order_depends_on_seed_and_epoch() {
    let t = Trainer::<f32>::new(config(1)).unwrap();
    let a = t.epoch_order(0, 20);
    assert_eq!(a, t.epoch_order(0, 20));
    assert_ne!(a, t.epoch_order(1, 20));
    let mut sorted = a.clone();
    sorted.sort();
    assert_eq!(sorted, (0..20).collect::<Vec<_>>());
    let fixed = Trainer::<f32>::new(TrainConfig { shuffle_each_epoch: false, ..config(1) }).unwrap();
    assert_eq!(fixed.epoch_order(3, 5), vec![0, 1, 2, 3, 4]);
}

#[test]
fn non_finite_loss_reports_epoch_and_batch() {
    let mut inputs: Vec<Tensor<f32>> = (0..6).map(|_| Tensor::full(&[3, 8, 8], 0.5)).collect();
    inputs[4] = Tensor::full(&[3, 8, 8], f32::NAN);
    let data = Dataset::from_tensors(inputs, vec![0, 1, 0, 1, 0, 1]).unwrap();
    let cfg = TrainConfig {
        batch_size: 2,
        shuffle_each_epoch: false,
        ..config(2)
    };
    match train(&mut tiny_net(0), &data, &cfg) {
        Err(TrainError::Divergence { epoch, batch, loss }) => {
            assert_eq!((epoch, batch), (1, 3));
            assert!(!loss.is_finite());
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn invalid_configs_and_empty_data() {
    let mut net = tiny_net(0);
    let bad = TrainConfig { batch_size: 0, ..config(1) };
    assert!(matches!(train(&mut net, &random_data(0, 2), &bad), Err(TrainError::Argument(_))));
    let bad = TrainConfig { learning_rate: -1.0, ..config(1) };
    assert!(matches!(train(&mut net, &random_data(0, 2), &bad), Err(TrainError::Argument(_))));
    let empty = Dataset::<f32>::from_tensors(vec![], vec![]).unwrap();
    assert!(matches!(train(&mut net, &empty, &config(1)), Err(TrainError::Argument(_))));
    assert!(matches!(evaluate(&net, &empty, "x"), Err(TrainError::Argument(_))));
}

#[test]
fn hand_computed_metrics() {
    let cm = ConfusionMatrix { tp: 4, fp: 1, fn_: 2, tn: 3 };
    let r = MetricsReport::from_confusion("m", cm).unwrap();
    assert!((r.accuracy - 0.7).abs() <= 1e-9);
    assert!((r.precision - 0.8).abs() <= 1e-9);
    assert!((r.recall - 4.0 / 6.0).abs() <= 1e-9);
    assert!(!r.degenerate_flags.precision && !r.degenerate_flags.recall);

    let predicted = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
    let actual = [1, 1, 1, 1, 0, 1, 1, 0, 0, 0];
    assert_eq!(ConfusionMatrix::from_predictions(&predicted, &actual), cm);

    let perfect = MetricsReport::from_confusion("p", ConfusionMatrix { tp: 3, fp: 0, fn_: 0, tn: 2 }).unwrap();
    assert_eq!((perfect.accuracy, perfect.precision, perfect.recall), (1.0, 1.0, 1.0));

    let none = MetricsReport::from_confusion("n", ConfusionMatrix { tp: 0, fp: 0, fn_: 3, tn: 2 }).unwrap();
    assert!(none.degenerate_flags.precision && !none.degenerate_flags.recall);
    assert_eq!((none.precision, none.recall), (0.0, 0.0));
    assert!(none.to_text().contains("precision: 0.00 (undefined)"));
    assert!(MetricsReport::from_confusion("e", ConfusionMatrix::default()).is_err());
}

#[test]
fn report_json_layout() {
    let r = MetricsReport::from_confusion("m", ConfusionMatrix { tp: 4, fp: 1, fn_: 2, tn: 3 }).unwrap();
    let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(v["model"], "m");
    assert_eq!(v["confusion"]["fn"], 2);
    assert_eq!(v["degenerate_flags"]["precision"], false);
    assert_eq!(v["accuracy"], 0.7);
    assert!(r.to_text().contains("accuracy: 0.70"));
}

/// Pools to a vector and outputs a constant: logits (0, 1), so every sample is
/// predicted bleached.
fn constant_bleached() -> Network<f32> {
    let mut net = Network::new(
        [3, 8, 8],
        vec![Layer::new("pool", LayerKind::GlobalAvgPool), NetInit::new(0).dense::<f32>("fc", 3, 2)],
    )
    .unwrap();
    net.param_mut("fc.weight").unwrap().value = Tensor::zeros(&[3, 2]);
    net.param_mut("fc.bias").unwrap().value = Tensor::new(&[2], vec![0.0, 1.0]).unwrap();
    net
}

#[test]
fn constant_predictor_metrics() {
    let net = constant_bleached();
    let data = random_data(4, 10);
    assert!(predict_classes(&net, &data).unwrap().iter().all(|&c| c == 1));
    let r = evaluate(&net, &data, "constant").unwrap();
    assert_eq!((r.accuracy, r.precision, r.recall), (0.5, 0.5, 1.0));
    assert_eq!(r.confusion.total(), 10);
}

#[test]
fn checkpoint_resume_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.rnwt");
    let spec = ModelSpec::Imitation { resolution: 32, num_classes: 2 };
    let mut net: Network<f32> = spec.build(8).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let data = Dataset::from_tensors(
        (0..6).map(|_| Tensor::from_fn(&[3, 32, 32], |_| r.random_range(0.0..1.0))).collect(),
        vec![0, 1, 0, 1, 1, 0],
    )
    .unwrap();
    let history = train(&mut net, &data, &config(1)).unwrap();
    checkpoint(&net, &history, Some(&spec), &path).unwrap();
    assert!(sidecar_path(&path).ends_with("model.rnwt.json"));

    let meta = read_meta(&path).unwrap();
    assert_eq!(meta.epochs_completed, 1);
    assert_eq!(meta.history, history);

    let (restored, h, s) = resume::<f32>(&path).unwrap();
    assert!(same_state(&net, &restored));
    assert_eq!((h, s), (history.clone(), spec));
    assert_eq!(evaluate(&net, &data, "m").unwrap(), evaluate(&restored, &data, "m").unwrap());

    let mut other = build_imitation_resnet::<f32>(32, 2, 99).unwrap();
    assert_eq!(resume_into(&mut other, &path).unwrap(), history);
    assert!(same_state(&net, &other));
}

#[test]
fn resume_continues_an_sgd_run_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.rnwt");
    let data = random_data(6, 8);
    let cfg = TrainConfig { optimizer: OptimizerKind::Sgd, ..config(2) };

    let mut straight = tiny_net(2);
    let mut t = Trainer::new(cfg.clone()).unwrap();
    t.run_epoch(&mut straight, &data).unwrap();
    t.run_epoch(&mut straight, &data).unwrap();

    let mut first = tiny_net(2);
    let h = train(&mut first, &data, &TrainConfig { epochs: 1, ..cfg.clone() }).unwrap();
    checkpoint(&first, &h, None, &path).unwrap();
    let mut second = tiny_net(77);
    let h = resume_into(&mut second, &path).unwrap();
    Trainer::new(cfg).unwrap().resume_at(h.len()).run_epoch(&mut second, &data).unwrap();
    assert!(same_state(&straight, &second));
}

#[test]
fn resume_from_missing_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.rnwt");
    assert!(matches!(resume::<f32>(&missing), Err(TrainError::Net(NetError::Io(_)))));
    assert!(matches!(resume_into(&mut tiny_net(0), &missing), Err(TrainError::Io(_))));
}
