use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reefgrad_core::data::{to_tensor, ImageRgb, Normalization};
use reefgrad_core::gradcam::{
    colormap, default_layer, explain, gradcam, overlay, GradCamError, HeatMap, DEFAULT_ALPHA,
};
use reefgrad_core::nn::{build_imitation_resnet, Layer, LayerKind, NetInit, Network};
use reefgrad_core::tensor::Tensor;

/// 1x1 conv copying the red channel into a single feature map, global
/// pooling, and a dense head with weights `(w0, w1)` and zero bias.
fn red_channel_net(size: usize, w0: f64, w1: f64) -> Network<f64> {
    let mut init = NetInit::new(0);
    let mut net = Network::new(
        [3, size, size],
        vec![
            init.conv("feat", 3, 1, 1, 1, 0, false).unwrap(),
            Layer::new("pool", LayerKind::GlobalAvgPool),
            init.dense("fc", 1, 2),
        ],
    )
    .unwrap();
    net.param_mut("feat.weight").unwrap().value = Tensor::new(&[1, 3, 1, 1], vec![1.0, 0.0, 0.0]).unwrap();
    net.param_mut("fc.weight").unwrap().value = Tensor::new(&[1, 2], vec![w0, w1]).unwrap();
    net.param_mut("fc.bias").unwrap().value = Tensor::zeros(&[2]);
    net
}

fn dyadic_input(size: usize) -> Tensor<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    Tensor::from_fn(&[3, size, size], |_| r.random_range(1..=32) as f64 / 8.0)
}

#[test]
fn one_channel_map_has_closed_form() {
    let x = dyadic_input(4);
    let net = red_channel_net(4, 2.0, -1.0);
    let e = explain(&net, &x, 0, Some("feat")).unwrap();
    let red = &x.data()[..16];
    let max = red.iter().copied().fold(0.0, f64::max);
    let expected: Vec<f64> = red.iter().map(|v| v / max).collect();
    assert_eq!(e.heatmap.values, expected);
    assert_eq!((e.heatmap.width, e.heatmap.height), (4, 4));
    assert_eq!(e.layer, "feat");
}

#[test]
fn negative_class_weight_gives_zero_map() {
    let x = dyadic_input(4);
    let net = red_channel_net(4, 2.0, -1.0);
    let hm = gradcam(&net, &x, 1, Some("feat")).unwrap();
    assert!(hm.values.iter().all(|&v| v == 0.0));
    assert_eq!(hm.max(), 0.0);
    let zero_head = red_channel_net(4, 0.0, 0.0);
    let hm = gradcam(&zero_head, &x, 0, None).unwrap();
    assert!(hm.values.iter().all(|&v| v == 0.0));
}

/// Strided box filter responding to brightness above 0.5, then pooled into
/// class 1.
fn brightness_detector(size: usize) -> Network<f64> {
    let mut init = NetInit::new(0);
    let mut net = Network::new(
        [3, size, size],
        vec![
            init.conv("detect", 3, 1, 3, 2, 1, true).unwrap(),
            Layer::new("act", LayerKind::Relu),
            Layer::new("pool", LayerKind::GlobalAvgPool),
            init.dense("fc", 1, 2),
        ],
    )
    .unwrap();
    net.param_mut("detect.weight").unwrap().value = Tensor::full(&[1, 3, 3, 3], 1.0 / 27.0);
    net.param_mut("detect.bias").unwrap().value = Tensor::full(&[1], -0.5);
    net.param_mut("fc.weight").unwrap().value = Tensor::new(&[1, 2], vec![-1.0, 1.0]).unwrap();
    net.param_mut("fc.bias").unwrap().value = Tensor::zeros(&[2]);
    net
}

#[test]
fn bright_patch_is_localized() {
    let (x0, y0, side) = (18, 6, 8);
    let img = ImageRgb::from_fn(32, 32, |x, y| {
        if (x0..x0 + side).contains(&x) && (y0..y0 + side).contains(&y) {
            [250; 3]
        } else {
            [20; 3]
        }
    });
    let input: Tensor<f64> = to_tensor(&img, 32, &Normalization::UnitRange);
    let net = brightness_detector(32);
    let e = explain(&net, &input, 1, None).unwrap();
    assert_eq!(e.layer, "act");
    let (ax, ay) = e.heatmap.argmax();
    assert!((x0..x0 + side).contains(&ax) && (y0..y0 + side).contains(&ay), "argmax {ax},{ay}");
    assert_eq!(e.heatmap.max(), 1.0);
    assert!(e.heatmap.get(2, 28) == 0.0);
    assert!(e.confidence() > 0.5);
    assert!((e.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let other = gradcam(&net, &input, 0, None).unwrap();
    assert!(other.values.iter().all(|&v| v == 0.0));
}

#[test]
fn imitation_maps_are_normalized_and_read_only() {
    let net = build_imitation_resnet::<f32>(32, 2, 4).unwrap();
    let before = net.state_records();
    let mut r = ChaCha8Rng::seed_from_u64(8);
    let x = Tensor::<f32>::from_fn(&[3, 32, 32], |_| r.random_range(0.0..1.0));
    let layer = default_layer(&net).unwrap();
    assert_eq!(layer, net.last_spatial_layer().unwrap());
    for class in 0..2 {
        let a = explain(&net, &x, class, None).unwrap();
        let b = explain(&net, &x, class, None).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.heatmap.width, a.heatmap.height), (32, 32));
        assert!(a.heatmap.values.iter().all(|v| (0.0..=1.0).contains(v)));
        for name in net.spatial_layer_names() {
            let hm = gradcam(&net, &x, class, Some(&name)).unwrap();
            assert!(hm.values.iter().all(|v| (0.0..=1.0).contains(v)), "{name}");
        }
    }
    let after = net.state_records();
    assert!(before.iter().zip(&after).all(|((_, p), (_, q))| p.bitwise_eq(q)));
}

#[test]
fn selector_and_argument_errors() {
    let net = build_imitation_resnet::<f32>(32, 2, 0).unwrap();
    let x = Tensor::<f32>::zeros(&[3, 32, 32]);
    match gradcam(&net, &x, 0, Some("nope")) {
        Err(GradCamError::Selector { name, valid }) => {
            assert_eq!(name, "nope");
            assert!(valid.contains(&"stage2.block0".to_string()));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(gradcam(&net, &x, 0, Some("fc")), Err(GradCamError::NotSpatial(_))));
    assert!(matches!(gradcam(&net, &x, 2, None), Err(GradCamError::Class { class: 2, classes: 2 })));
    assert!(matches!(
        gradcam(&net, &Tensor::zeros(&[2, 3, 32, 32]), 0, None),
        Err(GradCamError::Dimension(_))
    ));
    assert!(gradcam(&net, &Tensor::zeros(&[1, 3, 32, 32]), 0, None).is_ok());
}

#[test]
fn overlay_anchor_colors() {
    let hm = HeatMap {
        width: 4,
        height: 1,
        values: vec![0.0, 0.5, 1.0, 0.25],
    };
    let black = ImageRgb::filled(4, 1, [0; 3]);
    let o = overlay(&hm, &black, DEFAULT_ALPHA).unwrap();
    assert_eq!(o.get(0, 0), [0, 0, 102]);
    assert_eq!(o.get(1, 0), [0, 102, 0]);
    assert_eq!(o.get(2, 0), [102, 0, 0]);
    assert_eq!(o.get(3, 0), [0, 51, 51]);

    let white = ImageRgb::filled(4, 1, [255; 3]);
    assert_eq!(overlay(&hm, &white, DEFAULT_ALPHA).unwrap().get(2, 0), [255, 153, 153]);
    let img = ImageRgb::from_fn(4, 1, |x, _| [x as u8 * 60, 7, 9]);
    assert_eq!(overlay(&hm, &img, 0.0).unwrap(), img);
    assert_eq!(colormap(0.75), [127.5, 127.5, 0.0]);
}

#[test]
fn heatmap_csv_rows() {
    let hm = HeatMap {
        width: 2,
        height: 2,
        values: vec![0.0, 1.0, 0.5, 0.25],
    };
    assert_eq!(hm.to_csv(), "0,1\n0.5,0.25\n");
}
