use deeprare::features::onnx::ModelProto;
use deeprare::features::{reference_vgg16, ModelError, NetworkTopology, Op, REFERENCE_SEED};
use deeprare::{FeatureExtractor, Tensor};

fn reference() -> FeatureExtractor {
    FeatureExtractor::from_net(reference_vgg16(REFERENCE_SEED), &NetworkTopology::vgg16_reference()).unwrap()
}

fn formula_image(w: usize, h: usize) -> Tensor {
    let mut data = Vec::with_capacity(3 * w * h);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                data.push(((x * 7 + y * 13 + c * 29) % 256) as f32 / 255.0);
            }
        }
    }
    Tensor::new(vec![3, h, w], data).unwrap()
}

/// Per-layer `(sum, sum of squares, channel sum at row 3 column 5)` of the
/// post-ReLU activations for `formula_image(224, 224)`, computed in float64
/// by PyTorch from the exported ONNX weights.
const GOLDEN: [(&str, f64, f64, f64); 13] = [
    ("block1_conv1", 1.8120684937e+06, 3.7405828859e+06, 1.9355699591e+01),
    ("block1_conv2", 1.8914940701e+06, 3.8404874035e+06, 1.7397607060e+01),
    ("block2_conv1", 1.2642729575e+06, 3.4580757711e+06, 9.0284822117e+01),
    ("block2_conv2", 1.5010712144e+06, 4.5012327053e+06, 1.1080303200e+02),
    ("block3_conv1", 9.9573951885e+05, 4.1092388652e+06, 3.0236532751e+02),
    ("block3_conv2", 1.1472246976e+06, 4.8171442646e+06, 3.5741471345e+02),
    ("block3_conv3", 1.0289266547e+06, 4.5342549013e+06, 3.3131472378e+02),
    ("block4_conv1", 6.4459324646e+05, 3.3511737492e+06, 8.9778826585e+02),
    ("block4_conv2", 6.5363471256e+05, 3.3894114587e+06, 8.7647799476e+02),
    ("block4_conv3", 5.6700499011e+05, 3.0223550747e+06, 7.5838052689e+02),
    ("block5_conv1", 1.8064330913e+05, 1.0070623807e+06, 9.9905483791e+02),
    ("block5_conv2", 1.8996897181e+05, 1.0577903586e+06, 1.0800265362e+03),
    ("block5_conv3", 1.8248417672e+05, 1.0023805969e+06, 1.0676818347e+03),
];

fn close(got: f64, want: f64, rel: f64) -> bool {
    (got - want).abs() <= rel * want.abs().max(1.0)
}

#[test]
fn activations_match_golden_checksums() {
    let ex = reference();
    let acts = ex.extract(&formula_image(224, 224), (224, 224)).unwrap();
    for ((spec, act), (name, sum, sq, px)) in ex.topology().layers.iter().zip(&acts).zip(GOLDEN) {
        assert_eq!(spec.name, name);
        let (c, _, w) = act.maps.dims3().unwrap();
        let plane = act.maps.len() / c;
        let d = act.maps.data();
        let got_sum: f64 = d.iter().map(|&v| v as f64).sum();
        let got_sq: f64 = d.iter().map(|&v| (v as f64).powi(2)).sum();
        let got_px: f64 = (0..c).map(|k| d[k * plane + 3 * w + 5] as f64).sum();
        assert!(close(got_sum, sum, 1e-4), "{name} sum {got_sum} vs {sum}");
        assert!(close(got_sq, sq, 1e-4), "{name} sum of squares {got_sq} vs {sq}");
        assert!(close(got_px, px, 1e-4), "{name} pixel (3,5) {got_px} vs {px}");
    }
}

#[test]
fn thirteen_layers_with_vgg16_shapes() {
    let ex = reference();
    let acts = ex.extract(&formula_image(640, 480), (224, 224)).unwrap();
    let channels: Vec<usize> = acts.iter().map(|a| a.channels()).collect();
    assert_eq!(
        channels,
        [64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512]
    );
    let side = |g: u32| 224 >> (g - 1);
    for a in &acts {
        assert_eq!((a.height(), a.width()), (side(a.group_index), side(a.group_index)));
    }
    assert_eq!(
        acts.iter().map(|a| a.layer_index).collect::<Vec<_>>(),
        ex.topology().conv_layer_indices()
    );
    // The face channel of the ImageNet topology exists at layer 15.
    let face = NetworkTopology::vgg16().face_channel.unwrap();
    let l15 = acts.iter().find(|a| a.layer_index == face.layer).unwrap();
    assert!(face.channel < l15.channels());
}

#[test]
fn zero_input_gives_bias_propagated_constants() {
    let mut net = reference_vgg16(REFERENCE_SEED);
    let mut k = 0.0f32;
    for node in &mut net.nodes {
        if let Op::Conv(c) = &mut node.op {
            for b in &mut c.bias {
                k += 1.0;
                *b = ((k * 0.37).sin()) * 0.5;
            }
        }
    }
    let first_bias = match &net.nodes[0].op {
        Op::Conv(c) => c.bias.clone(),
        _ => unreachable!(),
    };
    let ex = FeatureExtractor::from_net(net, &NetworkTopology::vgg16_reference()).unwrap();
    let out = ex.net().forward(Tensor::zeros(vec![3, 32, 32]), ex.taps()).unwrap();

    // First layer sees only zeros, padding included: ReLU(bias) everywhere.
    let l1 = &out[&ex.taps()[0]];
    for (c, &b) in first_bias.iter().enumerate() {
        assert!(l1.channel(c).iter().all(|&v| v == b.max(0.0)));
    }
    // Deeper layers are constant away from the zero padding.
    let l2 = &out[&ex.taps()[1]];
    let (c2, h, w) = l2.dims3().unwrap();
    for c in 0..c2 {
        let ch = l2.channel(c);
        let v0 = ch[w + 1];
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                assert_eq!(ch[y * w + x], v0);
            }
        }
    }
}

#[test]
fn zero_biases_keep_zero_input_at_zero() {
    let ex = reference();
    let out = ex.net().forward(Tensor::zeros(vec![3, 64, 64]), ex.taps()).unwrap();
    assert!(out.values().all(|t| t.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn fabricated_layer_name_is_a_topology_mismatch() {
    let mut topo = NetworkTopology::vgg16_reference();
    topo.layers[4].name = "convX".into();
    match FeatureExtractor::from_net(reference_vgg16(REFERENCE_SEED), &topo) {
        Err(ModelError::TopologyMismatch { layer, .. }) => assert_eq!(layer, "convX"),
        other => panic!("expected a topology mismatch, got {other:?}"),
    }

    let mut topo = NetworkTopology::vgg16_reference();
    topo.layers[0].channels = 32;
    assert!(matches!(
        FeatureExtractor::from_net(reference_vgg16(REFERENCE_SEED), &topo),
        Err(ModelError::TopologyMismatch { .. })
    ));
}

#[test]
fn onnx_round_trip_preserves_activations() {
    let net = reference_vgg16(11);
    let bytes = net.to_onnx("test").encode_bytes();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ref.onnx");
    std::fs::write(&path, &bytes).unwrap();

    let topo = NetworkTopology::vgg16_reference();
    let loaded = FeatureExtractor::load(&path, &topo).unwrap();
    let direct = FeatureExtractor::from_net(net, &topo).unwrap();
    let img = formula_image(48, 40);
    assert_eq!(
        loaded.extract(&img, (48, 40)).unwrap(),
        direct.extract(&img, (48, 40)).unwrap()
    );

    let decoded = ModelProto::decode_bytes(&bytes).unwrap();
    assert_eq!(decoded.encode_bytes(), bytes);
}

#[test]
fn missing_model_file() {
    let err = FeatureExtractor::load("/nonexistent/model.onnx", &NetworkTopology::vgg16()).unwrap_err();
    assert!(matches!(err, ModelError::MissingFile(_)));
}

#[test]
fn extraction_is_deterministic_and_rejects_non_rgb() {
    let ex = reference();
    let img = formula_image(64, 48);
    assert_eq!(ex.extract(&img, (64, 48)).unwrap(), ex.extract(&img, (64, 48)).unwrap());
    let gray = Tensor::zeros(vec![1, 8, 8]);
    assert!(matches!(ex.extract(&gray, (8, 8)), Err(ModelError::NotRgb(_))));
    assert!(matches!(
        ex.extract(&img, (0, 8)),
        Err(ModelError::BadWorkingSize(0, 8))
    ));
}
