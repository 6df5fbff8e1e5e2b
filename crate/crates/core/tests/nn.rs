use earbench::nn::{
    grad_check, grad_check_in, random_batch, Arch, ArchSpec, FreezePolicy, GradCheckOptions, LayerKind, LayerSpec, Model,
    NnError, PresetOptions,
};
use earbench::tensor::Tensor;

fn conv(name: &str, out_channels: usize, kernel: usize, stride: usize, pad: usize) -> LayerSpec {
    LayerSpec::new(
        name,
        LayerKind::Conv2d {
            out_channels,
            kernel,
            stride,
            pad,
        },
    )
}

fn micro(input: [usize; 3], classes: usize, layers: Vec<LayerSpec>, edges: &[(&str, &str)]) -> ArchSpec {
    let mut layers = layers;
    layers.push(LayerSpec::new("head", LayerKind::SoftmaxXentHead));
    ArchSpec {
        name: "micro".into(),
        input_shape: input,
        num_classes: classes,
        layers,
        residual_edges: edges.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
    }
}

fn fc(name: &str, n: usize) -> LayerSpec {
    LayerSpec::new(name, LayerKind::FullyConnected { out_features: n })
}

fn check(spec: &ArchSpec) -> f64 {
    let (x, y) = random_batch(spec, 2, 11);
    let r = grad_check(spec, &x, &y, GradCheckOptions::default()).unwrap();
    assert!(r.max_relative_error <= 1e-5, "{}: {} at {}", spec.name, r.max_relative_error, r.worst);
    r.max_relative_error
}

#[test]
fn grad_check_single_fc() {
    check(&micro([2, 3, 3], 4, vec![fc("fc", 4)], &[]));
}

#[test]
fn grad_check_conv_relu_maxpool() {
    check(&micro(
        [2, 6, 6],
        3,
        vec![
            conv("c1", 3, 3, 1, 1),
            LayerSpec::new("r1", LayerKind::Relu),
            LayerSpec::new("p1", LayerKind::Maxpool { kernel: 2, stride: 2 }),
            conv("c2", 2, 3, 2, 1),
            fc("fc", 3),
        ],
        &[],
    ));
}

#[test]
fn grad_check_lrn_and_global_avgpool() {
    check(&micro(
        [2, 5, 5],
        3,
        vec![
            conv("c1", 6, 3, 1, 0),
            LayerSpec::new("n1", LayerKind::lrn_default()),
            LayerSpec::new(
                "n2",
                LayerKind::Lrn {
                    size: 3,
                    alpha: 0.5,
                    beta: 0.75,
                    k: 2.0,
                },
            ),
            conv("c2", 3, 1, 1, 0),
            LayerSpec::new("gap", LayerKind::AvgpoolGlobal),
        ],
        &[],
    ));
}

#[test]
fn grad_check_fire_module() {
    check(&micro(
        [3, 4, 4],
        2,
        vec![
            LayerSpec::new(
                "f1",
                LayerKind::Fire {
                    squeeze: 2,
                    expand1x1: 2,
                    expand3x3: 3,
                },
            ),
            conv("c", 2, 1, 1, 0),
            LayerSpec::new("gap", LayerKind::AvgpoolGlobal),
        ],
        &[],
    ));
}

fn residual_net() -> ArchSpec {
    micro(
        [2, 4, 4],
        3,
        vec![
            conv("c1", 4, 3, 1, 1),
            LayerSpec::new("r1", LayerKind::Relu),
            conv("c2", 4, 3, 1, 1),
            LayerSpec::new("add", LayerKind::ResidualAdd),
            fc("fc", 3),
        ],
        &[("r1", "add")],
    )
}

#[test]
fn grad_check_residual_add() {
    check(&residual_net());
}

#[test]
fn grad_check_presets_on_two_samples() {
    for arch in Arch::ALL {
        let spec = arch.spec(PresetOptions::new(5).with_input_size(32)).unwrap();
        let (x, y) = random_batch(&spec, 2, 3);
        let opts = GradCheckOptions {
            max_entries_per_tensor: Some(6),
            ..GradCheckOptions::default()
        };
        let r = grad_check(&spec, &x, &y, opts).unwrap();
        assert!(r.max_relative_error <= 1e-5, "{arch}: {} at {}", r.max_relative_error, r.worst);
    }
}

#[test]
fn grad_check_in_f32_meets_looser_bound() {
    // Two parametric layers, no kinks.
    let spec = micro([2, 3, 3], 3, vec![conv("c", 3, 3, 1, 1), fc("fc", 3)], &[]);
    for seed in 0..5 {
        let (x, y) = random_batch(&spec, 2, seed);
        let opts = GradCheckOptions {
            epsilon: 1e-3,
            floor: 1e-1,
            ..GradCheckOptions::default()
        };
        let r = grad_check_in::<f32>(&spec, &x, &y, opts).unwrap();
        assert!(r.max_relative_error <= 1e-2, "{} at {}", r.max_relative_error, r.worst);
    }
}

#[test]
fn conv_of_ones_gives_nine() {
    let spec = micro([1, 3, 3], 1, vec![conv("c", 1, 3, 1, 0)], &[]);
    let mut m = Model::<f64>::random(spec, 0).unwrap();
    m.param_mut("c.weight").unwrap().fill(1.0);
    let out = m.forward(&Tensor::from_vec(&[1, 1, 3, 3], vec![1.0; 9]), None).unwrap();
    assert_eq!(out.logits.data(), &[9.0]);
}

#[test]
fn uniform_logits_over_166_classes() {
    let spec = micro([1, 1, 1], 166, vec![fc("fc", 166)], &[]);
    let mut m = Model::<f64>::random(spec, 0).unwrap();
    m.param_mut("fc.weight").unwrap().fill(0.0);
    let out = m.forward(&Tensor::from_vec(&[2, 1, 1, 1], vec![0.3, -2.0]), Some(&[0, 165])).unwrap();
    assert!((out.loss.unwrap() - 166f64.ln()).abs() < 1e-12);
    for row in out.probabilities().data().chunks(166) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn forward_rejects_bad_shapes_and_labels() {
    let spec = micro([1, 2, 2], 2, vec![fc("fc", 2)], &[]);
    let m = Model::<f32>::random(spec, 0).unwrap();
    let x = Tensor::zeros(&[1, 1, 2, 3]);
    assert!(matches!(m.forward(&x, None), Err(NnError::ShapeMismatch { .. })));
    let x = Tensor::zeros(&[1, 1, 2, 2]);
    assert!(matches!(m.forward(&x, Some(&[2])), Err(NnError::LabelOutOfRange { .. })));
}

#[test]
fn one_class_problem_has_zero_gradients() {
    let spec = micro([1, 2, 2], 1, vec![conv("c", 2, 1, 1, 0), fc("fc", 1)], &[]);
    let m = Model::<f64>::random(spec, 4).unwrap();
    let (x, y) = random_batch(m.spec(), 3, 1);
    let out = m.forward(&x, Some(&y)).unwrap();
    assert_eq!(out.loss.unwrap(), 0.0);
    let g = m.backward(&out.cache).unwrap();
    assert_eq!(g.len(), 4);
    assert!(g.values().all(|t| t.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn all_frozen_gives_empty_gradients_and_stale_cache_is_detected() {
    let mut m = Model::<f64>::random(residual_net(), 1).unwrap();
    let (x, y) = random_batch(m.spec(), 2, 2);
    let out = m.forward(&x, Some(&y)).unwrap();
    let grads = m.backward(&out.cache).unwrap();
    m.sgd_step(&grads, 0.1, 0.0, 0.0).unwrap();
    assert!(matches!(m.backward(&out.cache), Err(NnError::StaleCache)));
    for l in ["c1", "c2", "fc"] {
        m.set_trainable(l, false).unwrap();
    }
    let out = m.forward(&x, Some(&y)).unwrap();
    assert!(m.backward(&out.cache).unwrap().is_empty());
    let unlabeled = m.forward(&x, None).unwrap();
    assert!(matches!(m.backward(&unlabeled.cache), Err(NnError::MissingLabels)));
}

#[test]
fn frozen_middle_layer_still_passes_gradient_down() {
    let mut m = Model::<f64>::random(residual_net(), 1).unwrap();
    m.set_trainable("c2", false).unwrap();
    let (x, y) = random_batch(m.spec(), 2, 2);
    let out = m.forward(&x, Some(&y)).unwrap();
    let g = m.backward(&out.cache).unwrap();
    let mut keys: Vec<_> = g.keys().cloned().collect();
    keys.sort();
    assert_eq!(keys, ["c1.bias", "c1.weight", "fc.bias", "fc.weight"]);
    assert!(g["c1.weight"].data().iter().any(|&v| v != 0.0));
}

#[test]
fn residual_edge_matters_and_zero_source_matches_plain_net() {
    let with_edge = residual_net();
    let plain = ArchSpec {
        layers: with_edge.layers.iter().filter(|l| l.name != "add").cloned().collect(),
        residual_edges: vec![],
        ..with_edge.clone()
    };
    let mut a = Model::<f64>::random(with_edge, 8).unwrap();
    let mut b = Model::<f64>::random(plain, 8).unwrap();
    for name in ["c1.bias", "c2.bias"] {
        a.param_mut(name).unwrap().fill(0.05);
    }
    for (name, t) in a.params().clone() {
        *b.param_mut(&name).unwrap() = t;
    }
    let (x, _) = random_batch(a.spec(), 3, 9);
    let ya = a.forward(&x, None).unwrap().logits;
    let yb = b.forward(&x, None).unwrap().logits;
    assert!(ya.data().iter().zip(yb.data()).any(|(p, q)| (p - q).abs() > 1e-6));

    // Zero c1 so the bypass source (relu of c1) is identically zero.
    for m in [&mut a, &mut b] {
        m.param_mut("c1.weight").unwrap().fill(0.0);
        m.param_mut("c1.bias").unwrap().fill(0.0);
    }
    let ya = a.forward(&x, None).unwrap().logits;
    let yb = b.forward(&x, None).unwrap().logits;
    for (p, q) in ya.data().iter().zip(yb.data()) {
        assert!((p - q).abs() <= 1e-6);
    }
}

#[test]
fn shape_inference_matches_runtime_for_presets() {
    for arch in Arch::ALL {
        let spec = arch.spec(PresetOptions::new(7).with_input_size(32)).unwrap();
        let shapes = spec.infer_shapes().unwrap();
        let m = Model::<f32>::random(spec, 0).unwrap();
        for n in [1, 3] {
            let x = Tensor::zeros(&[n, 3, 32, 32]);
            let out = m.forward(&x, None).unwrap();
            assert_eq!(out.logits.shape(), &[n, 7]);
            assert_eq!(shapes.last().unwrap(), &[7, 1, 1]);
        }
    }
}

#[test]
fn freeze_policies() {
    let opts = PresetOptions::new(6).with_input_size(32);
    let mut alex = Model::<f32>::random(Arch::MiniAlexnet.spec(opts).unwrap(), 1).unwrap();
    let reinit = alex.apply_freeze_policy(FreezePolicy::SelectiveFc, 2).unwrap();
    assert_eq!(reinit, ["fc8"]);
    let trainable: Vec<_> = alex.spec().layers.iter().filter(|l| l.trainable && l.kind.is_parametric()).map(|l| l.name.as_str()).collect();
    assert_eq!(trainable, ["fc6", "fc7", "fc8"]);

    let mut sq = Model::<f32>::random(Arch::MiniSqueezenet.spec(opts).unwrap(), 1).unwrap();
    let before = sq.params().clone();
    let reinit = sq.apply_freeze_policy(FreezePolicy::SelectiveAllButHead, 2).unwrap();
    assert_eq!(reinit, ["conv10"]);
    assert!(sq.spec().layers.iter().all(|l| l.trainable));
    for (k, v) in sq.params() {
        assert_eq!(k.starts_with("conv10.weight"), v != &before[k], "{k}");
    }
    assert!(matches!(
        sq.apply_freeze_policy(FreezePolicy::SelectiveFc, 2),
        Err(NnError::PolicyMismatch { .. })
    ));
}
