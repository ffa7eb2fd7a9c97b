use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sap_core::angle::{ChannelDescriptor, FeatureTensor};
use sap_core::autodiff::{finite_difference_check, NodeId, Tensor};
use sap_core::sap::{SapConfig, Variant};
use sap_core::skeleton::{
    generate_synthetic_dataset, SkeletonLayout, SkeletonSequence, SyntheticTaskSpec,
};
use sap_core::train::{
    backbone_forward, evaluate, extract_features, lr_schedule, run_ablation, sgd_momentum_step,
    train, zero_velocity, AblationAxis, AblationTable, BackboneParams, Model, ModelSpec, ParamSet,
    Stream, TrainConfig, TrainError, STANDARDIZE_EPS,
};

fn random_sequence(rng: &mut ChaCha8Rng, t: usize, v: usize, label: u32) -> SkeletonSequence {
    let coords = (0..t * v * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    SkeletonSequence::new(t, v, coords, Some(label), Default::default()).unwrap()
}

fn small_config(streams: Vec<Stream>) -> TrainConfig {
    TrainConfig {
        streams,
        hidden: [6, 5],
        epochs: 3,
        batch_size: 4,
        eval_every: 0,
        fixed_anchors: Some(vec!["j0".into(), "j3".into(), "j1".into(), "j4".into()]),
        ..Default::default()
    }
}

fn small_sap() -> SapConfig {
    SapConfig {
        heads: 2,
        hidden: 3,
        ..Default::default()
    }
}

fn small_spec(streams: Vec<Stream>, classes: usize) -> ModelSpec {
    let layout = SkeletonLayout::chain(5).unwrap();
    ModelSpec::new(4, classes, layout, &small_config(streams), &small_sap()).unwrap()
}

fn tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_shape_vec(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

#[test]
fn lr_schedule_matches_recipe() {
    assert_eq!(lr_schedule(0), 0.05);
    assert_eq!(lr_schedule(29), 0.05);
    assert_eq!(lr_schedule(30), 0.005);
    assert_eq!(lr_schedule(39), 0.005);
    assert_eq!(lr_schedule(40), 0.0005);
    assert_eq!(lr_schedule(45), 0.0005);
    let mut values: Vec<f64> = (0..200).map(lr_schedule).collect();
    values.dedup();
    assert_eq!(values, vec![0.05, 0.005, 0.0005]);
}

fn single(name: &str, value: f64) -> ParamSet {
    BTreeMap::from([(name.to_string(), Tensor::scalar(value))])
}

#[test]
fn sgd_examples() {
    let mut p = single("p", 1.0);
    let mut v = zero_velocity(&p);
    sgd_momentum_step(&mut p, &single("p", 2.0), &mut v, 0.1, 0.0).unwrap();
    assert_eq!(p["p"].item(), 0.8);

    let mut p = single("p", 0.0);
    let mut v = zero_velocity(&p);
    sgd_momentum_step(&mut p, &single("p", 1.0), &mut v, 1.0, 0.9).unwrap();
    assert_eq!(p["p"].item(), -1.0);
    sgd_momentum_step(&mut p, &single("p", 0.0), &mut v, 1.0, 0.9).unwrap();
    assert_eq!(p["p"].item(), -1.9);
}

#[test]
fn sgd_rejects_shape_mismatch() {
    let mut p = BTreeMap::from([("p".to_string(), Tensor::zeros(&[2]))]);
    let mut v = zero_velocity(&p);
    let g = BTreeMap::from([("p".to_string(), Tensor::zeros(&[3]))]);
    assert!(matches!(
        sgd_momentum_step(&mut p, &g, &mut v, 0.1, 0.9),
        Err(TrainError::ShapeMismatch { .. })
    ));
}

proptest! {
    #[test]
    fn sgd_matches_scalar_loop(seed in any::<u64>(), lr in 0.0..1.0f64, mu in 0.0..0.99f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes: [&[usize]; 2] = [&[3, 2], &[4]];
        let mut params = ParamSet::new();
        let mut velocity = ParamSet::new();
        let mut grads = ParamSet::new();
        for (i, s) in shapes.iter().enumerate() {
            params.insert(format!("w{i}"), tensor(&mut rng, s));
            velocity.insert(format!("w{i}"), tensor(&mut rng, s));
            grads.insert(format!("w{i}"), tensor(&mut rng, s));
        }
        let mut expect_p = BTreeMap::new();
        let mut expect_v = BTreeMap::new();
        for (name, p) in &params {
            let (mut pp, mut vv) = (p.data().to_vec(), velocity[name].data().to_vec());
            let g = grads[name].data();
            for i in 0..pp.len() {
                vv[i] = mu * vv[i] + g[i];
                pp[i] -= lr * vv[i];
            }
            expect_p.insert(name.clone(), pp);
            expect_v.insert(name.clone(), vv);
        }
        sgd_momentum_step(&mut params, &grads, &mut velocity, lr, mu).unwrap();
        for (name, p) in &params {
            prop_assert_eq!(p.data(), &expect_p[name][..]);
            prop_assert_eq!(velocity[name].data(), &expect_v[name][..]);
        }
    }

    #[test]
    fn zero_momentum_is_gradient_descent(seed in any::<u64>(), lr in 0.0..1.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p0 = tensor(&mut rng, &[5]);
        let g = tensor(&mut rng, &[5]);
        let mut params = BTreeMap::from([("p".to_string(), p0.clone())]);
        let mut velocity = zero_velocity(&params);
        sgd_momentum_step(&mut params, &BTreeMap::from([("p".to_string(), g.clone())]), &mut velocity, lr, 0.0).unwrap();
        let expect: Vec<f64> = p0.data().iter().zip(g.data()).map(|(p, g)| p - lr * g).collect();
        prop_assert_eq!(params["p"].data(), &expect[..]);
    }
}

fn backbone(layers: [(Vec<usize>, Vec<f64>, Vec<f64>); 3]) -> BackboneParams {
    let [a, b, c] = layers.map(|(shape, w, bias)| {
        let n = bias.len();
        (
            Tensor::from_shape_vec(shape, w).unwrap(),
            Tensor::from_shape_vec(vec![n], bias).unwrap(),
        )
    });
    BackboneParams { layers: [a, b, c] }
}

fn heads(n: usize) -> Vec<ChannelDescriptor> {
    (0..n).map(ChannelDescriptor::AngleHead).collect()
}

#[test]
fn zero_weights_give_zero_logits() {
    let f = FeatureTensor::new(3, 2, vec![0.7; 12], heads(2)).unwrap();
    let p = backbone([
        (vec![4, 5], vec![0.0; 20], vec![0.0; 5]),
        (vec![5, 4], vec![0.0; 20], vec![0.0; 4]),
        (vec![4, 3], vec![0.0; 12], vec![0.0; 3]),
    ]);
    assert_eq!(backbone_forward(&f, &p).unwrap(), vec![0.0; 3]);
}

#[test]
fn single_frame_identity_layers_give_affine_map() {
    let f = FeatureTensor::new(1, 1, vec![1.0, 2.0], heads(2)).unwrap();
    let p = backbone([
        (vec![2, 2], vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]),
        (vec![2, 2], vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]),
        (
            vec![2, 3],
            vec![2.0, 0.0, 1.0, 0.0, -1.0, 1.0],
            vec![0.5, 0.0, -1.0],
        ),
    ]);
    assert_eq!(backbone_forward(&f, &p).unwrap(), vec![2.5, -2.0, 2.0]);
}

#[test]
fn backbone_rejects_wrong_width() {
    let f = FeatureTensor::new(1, 1, vec![1.0, 2.0, 3.0], heads(3)).unwrap();
    let p = backbone([
        (vec![2, 2], vec![0.0; 4], vec![0.0; 2]),
        (vec![2, 2], vec![0.0; 4], vec![0.0; 2]),
        (vec![2, 2], vec![0.0; 4], vec![0.0; 2]),
    ]);
    assert!(matches!(
        backbone_forward(&f, &p),
        Err(TrainError::ShapeMismatch { .. })
    ));
}

// Straight-line re-implementation: weights indexed as w[in][out], with the
// frame mean taken per unit after all frames are rectified.
fn backbone_oracle(values: &[f64], t: usize, width: usize, p: &BackboneParams) -> Vec<f64> {
    let [(w1, b1), (w2, b2), (w3, b3)] = &p.layers;
    let at = |w: &Tensor, i: usize, j: usize| w.data()[i * w.shape()[1] + j];
    let h1 = b1.numel();
    let mut hidden = vec![vec![0.0; h1]; t];
    for (frame, row) in hidden.iter_mut().enumerate() {
        for (j, h) in row.iter_mut().enumerate() {
            let mut z = b1.data()[j];
            for i in 0..width {
                z += values[frame * width + i] * at(w1, i, j);
            }
            *h = if z > 0.0 { z } else { 0.0 };
        }
    }
    let pooled: Vec<f64> = (0..h1)
        .map(|j| hidden.iter().map(|r| r[j]).sum::<f64>() / t as f64)
        .collect();
    let layer = |x: &[f64], w: &Tensor, b: &Tensor, relu: bool| -> Vec<f64> {
        (0..b.numel())
            .map(|j| {
                let z = b.data()[j] + (0..x.len()).map(|i| x[i] * at(w, i, j)).sum::<f64>();
                if relu {
                    z.max(0.0)
                } else {
                    z
                }
            })
            .collect()
    };
    let h2 = layer(&pooled, w2, b2, true);
    layer(&h2, w3, b3, false)
}

#[test]
fn backbone_matches_straight_line_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let (t, v, c, h1, h2, k) = (5, 4, 3, 7, 6, 4);
        let values: Vec<f64> = (0..t * v * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = FeatureTensor::new(t, v, values.clone(), heads(c)).unwrap();
        let p = BackboneParams {
            layers: [
                (tensor(&mut rng, &[v * c, h1]), tensor(&mut rng, &[h1])),
                (tensor(&mut rng, &[h1, h2]), tensor(&mut rng, &[h2])),
                (tensor(&mut rng, &[h2, k]), tensor(&mut rng, &[k])),
            ],
        };
        let got = backbone_forward(&f, &p).unwrap();
        let want = backbone_oracle(&values, t, v * c, &p);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
    }
}

#[test]
fn graph_logits_match_scalar_pipeline() {
    let all = vec![
        Stream::Coords,
        Stream::Bones,
        Stream::AnglesFixed,
        Stream::AnglesSap,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for streams in [
        vec![Stream::Coords],
        vec![Stream::AnglesFixed],
        vec![Stream::AnglesSap],
        all,
    ] {
        for (variant, standardize, center) in [
            (Variant::V1, true, false),
            (Variant::V2, false, true),
            (Variant::V3, true, true),
        ] {
            let mut cfg = small_config(streams.clone());
            cfg.standardize_angles = standardize;
            cfg.center = center;
            let sap = SapConfig {
                variant,
                ..small_sap()
            };
            let spec = ModelSpec::new(4, 3, SkeletonLayout::chain(5).unwrap(), &cfg, &sap).unwrap();
            let model = Model::build(&spec).unwrap();
            let params = spec.init_params(&mut rng).unwrap();
            let seq = random_sequence(&mut rng, 4, 5, 1);
            let graph = model.forward(&params, &seq, Some(1)).unwrap();
            let feats = extract_features(&spec, &params, &seq).unwrap();
            assert_eq!(feats.num_channels(), spec.channels());
            let scalar =
                backbone_forward(&feats, &BackboneParams::from_params(&params).unwrap()).unwrap();
            for (a, b) in graph.logits.iter().zip(&scalar) {
                assert!((a - b).abs() <= 1e-10, "{streams:?} {variant}: {a} vs {b}");
            }
            let graph_feats = model.features(&params, &seq).unwrap();
            for (a, b) in graph_feats.data().iter().zip(feats.values()) {
                assert!((a - b).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn angle_channels_are_standardized_per_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let streams = vec![Stream::AnglesSap, Stream::Coords];
    let spec = small_spec(streams.clone(), 3);
    let mut raw_cfg = small_config(streams);
    raw_cfg.standardize_angles = false;
    let raw_spec = ModelSpec::new(
        4,
        3,
        SkeletonLayout::chain(5).unwrap(),
        &raw_cfg,
        &small_sap(),
    )
    .unwrap();
    let params = spec.init_params(&mut rng).unwrap();
    for _ in 0..5 {
        let seq = random_sequence(&mut rng, 4, 5, 0);
        let f = extract_features(&spec, &params, &seq).unwrap();
        let raw = extract_features(&raw_spec, &params, &seq).unwrap();
        let cells: Vec<(usize, usize)> = (0..4).flat_map(|t| (0..5).map(move |v| (t, v))).collect();
        let n = cells.len() as f64;
        for c in 0..f.num_channels() {
            let x: Vec<f64> = cells.iter().map(|&(t, v)| raw.get(t, v, c)).collect();
            let want: Vec<f64> = if c < spec.sap.heads {
                let mean = x.iter().sum::<f64>() / n;
                let var = x.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
                x.iter()
                    .map(|a| (a - mean) / (var + STANDARDIZE_EPS).sqrt())
                    .collect()
            } else {
                x
            };
            for (&(t, v), w) in cells.iter().zip(want) {
                assert!((f.get(t, v, c) - w).abs() <= 1e-9 * w.abs().max(1.0));
            }
        }
    }
}

#[test]
fn uniform_logits_give_ln_k() {
    let spec = small_spec(vec![Stream::Coords], 4);
    let model = Model::build(&spec).unwrap();
    let mut params = spec.init_params(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    for t in params.values_mut() {
        t.data_mut().fill(0.0);
    }
    let seq = random_sequence(&mut ChaCha8Rng::seed_from_u64(1), 4, 5, 2);
    let out = model.forward(&params, &seq, Some(2)).unwrap();
    assert_eq!(out.logits, vec![0.0; 4]);
    assert!((out.loss - 4f64.ln()).abs() <= 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn cross_entropy_is_nonnegative(seed in any::<u64>(), label in 0u32..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = small_spec(vec![Stream::Coords, Stream::AnglesSap], 3);
        let model = Model::build(&spec).unwrap();
        let params = spec.init_params(&mut rng).unwrap();
        let seq = random_sequence(&mut rng, 4, 5, label);
        prop_assert!(model.forward(&params, &seq, Some(label)).unwrap().loss >= 0.0);
    }
}

fn grad_check(spec: &ModelSpec, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model::build(spec).unwrap();
    let params = spec.init_params(&mut rng).unwrap();
    let seq = spec.prepare(&random_sequence(&mut rng, 4, 5, 1)).unwrap();
    let (joints, target) = model.inputs(&seq, Some(1)).unwrap();
    let bindings = model.bindings(&params, &joints, &target).unwrap();
    let ids: Vec<NodeId> = model.param_nodes().iter().map(|p| p.1).collect();
    let report = finite_difference_check(
        model.graph(),
        &bindings,
        model.loss_node(),
        &ids,
        1e-6,
        1e-4,
    )
    .unwrap();
    assert_eq!(report.entries.len(), ids.len());
    report.max_rel_error()
}

#[test]
fn coords_only_model_has_no_sap_parameters() {
    let spec = small_spec(vec![Stream::Coords], 3);
    let model = Model::build(&spec).unwrap();
    let names: Vec<&str> = model.param_nodes().iter().map(|p| p.0.as_str()).collect();
    assert_eq!(names.len(), 6);
    assert!(names.iter().all(|n| n.starts_with("backbone.")));
    let params = spec.init_params(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(params.keys().all(|n| n.starts_with("backbone.")));
    let err = grad_check(&spec, 3);
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let spec = small_spec(
        vec![Stream::Coords, Stream::AnglesFixed, Stream::AnglesSap],
        3,
    );
    let err = grad_check(&spec, 4);
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn single_sample_single_class_is_memorized() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data = vec![random_sequence(&mut rng, 4, 5, 0)];
    let spec = small_spec(vec![Stream::AnglesSap], 1);
    let cfg = TrainConfig {
        epochs: 50,
        ..small_config(vec![Stream::AnglesSap])
    };
    let (state, report) = train(&spec, &data, Some(&data), &cfg).unwrap();
    let last = report.epochs.last().unwrap();
    assert!(last.train_loss < 1e-6);
    assert_eq!(last.train_accuracy, 1.0);
    let eval = report.final_test.unwrap();
    assert_eq!(eval.accuracy, 1.0);
    assert_eq!(eval.confusion, vec![vec![1]]);
    assert_eq!(state.epoch, 50);
}

#[test]
fn two_classes_are_memorized() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let data = vec![
        random_sequence(&mut rng, 4, 5, 0),
        random_sequence(&mut rng, 4, 5, 1),
    ];
    let spec = small_spec(vec![Stream::Coords], 2);
    let cfg = TrainConfig {
        epochs: 200,
        decay_epochs: vec![],
        ..small_config(vec![Stream::Coords])
    };
    let (_, report) = train(&spec, &data, Some(&data), &cfg).unwrap();
    let first = report.epochs[0].train_loss;
    let last = report.epochs.last().unwrap().train_loss;
    assert!(last < 0.05 && last < first, "{first} → {last}");
    let eval = report.final_test.unwrap();
    assert_eq!(eval.confusion, vec![vec![1, 0], vec![0, 1]]);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data: Vec<_> = (0..6)
        .map(|i| random_sequence(&mut rng, 4, 5, i % 3))
        .collect();
    let streams = vec![Stream::Bones, Stream::AnglesSap];
    let spec = small_spec(streams.clone(), 3);
    let cfg = TrainConfig {
        lr: 0.0,
        ..small_config(streams)
    };
    let initial = spec
        .init_params(&mut ChaCha8Rng::seed_from_u64(cfg.seed))
        .unwrap();
    let (state, report) = train(&spec, &data, None, &cfg).unwrap();
    assert_eq!(state.params, initial);
    assert_eq!(report.epochs.len(), 3);
    assert!(report.epochs.iter().all(|e| e.lr == 0.0));
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let data: Vec<_> = (0..9)
        .map(|i| random_sequence(&mut rng, 4, 5, i % 3))
        .collect();
    let streams = vec![Stream::AnglesSap, Stream::AnglesFixed];
    let spec = small_spec(streams.clone(), 3);
    let cfg = small_config(streams);
    let (a, ra) = train(&spec, &data, Some(&data), &cfg).unwrap();
    let (b, rb) = train(&spec, &data, Some(&data), &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra.epochs, rb.epochs);
    assert_eq!(ra.final_test, rb.final_test);
    let other = TrainConfig { seed: 1, ..cfg };
    let (c, _) = train(&spec, &data, Some(&data), &other).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn evaluation_matches_brute_force_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let data: Vec<_> = (0..12)
        .map(|i| random_sequence(&mut rng, 4, 5, i % 4))
        .collect();
    let streams = vec![Stream::Coords, Stream::AnglesSap];
    let spec = small_spec(streams.clone(), 4);
    let (state, _) = train(&spec, &data, None, &small_config(streams)).unwrap();
    let model = Model::build(&spec).unwrap();
    let eval = evaluate(&model, &state.params, &data).unwrap();
    let mut correct = 0;
    for (i, seq) in data.iter().enumerate() {
        let logits = model.forward(&state.params, seq, None).unwrap().logits;
        let mut best = 0;
        for k in 1..logits.len() {
            if logits[k] > logits[best] {
                best = k;
            }
        }
        assert_eq!(eval.predictions[i], best);
        correct += usize::from(best as u32 == seq.label.unwrap());
    }
    assert_eq!(eval.accuracy, correct as f64 / data.len() as f64);
    for (k, row) in eval.confusion.iter().enumerate() {
        assert_eq!(row.iter().sum::<usize>(), 3, "class {k}");
    }
}

#[test]
fn untrained_model_is_near_chance() {
    let mut task = SyntheticTaskSpec::new(4, 0.3, 3);
    task.train_per_class = 1;
    task.test_per_class = 25;
    let (_, test) = generate_synthetic_dataset(&task).unwrap();
    let cfg = TrainConfig {
        streams: vec![Stream::AnglesSap],
        hidden: [16, 8],
        ..Default::default()
    };
    let spec = ModelSpec::new(
        task.frames,
        4,
        task.layout().unwrap(),
        &cfg,
        &SapConfig::default(),
    )
    .unwrap();
    let model = Model::build(&spec).unwrap();
    let params = spec.init_params(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let acc = evaluate(&model, &params, &test).unwrap().accuracy;
    assert!((acc - 0.25).abs() <= 0.1, "{acc}");
}

#[test]
fn training_errors() {
    let spec = small_spec(vec![Stream::Coords], 3);
    let cfg = small_config(vec![Stream::Coords]);
    assert!(matches!(
        train(&spec, &[], None, &cfg),
        Err(TrainError::EmptyDataset)
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let bad_label = vec![random_sequence(&mut rng, 4, 5, 7)];
    assert!(matches!(
        train(&spec, &bad_label, None, &cfg),
        Err(TrainError::LabelOutOfRange { label: 7, .. })
    ));
    let wrong_frames = vec![random_sequence(&mut rng, 3, 5, 0)];
    assert!(matches!(
        train(&spec, &wrong_frames, None, &cfg),
        Err(TrainError::InputMismatch { what: "frames", .. })
    ));

    let data: Vec<_> = (0..4)
        .map(|i| random_sequence(&mut rng, 4, 5, i % 3))
        .collect();
    let huge = TrainConfig {
        lr: 1e300,
        momentum: 0.0,
        ..cfg.clone()
    };
    match train(&spec, &data, None, &huge) {
        Err(TrainError::DivergenceDetected { epoch, state, .. }) => {
            assert_eq!(state.epoch, epoch);
            assert!(state.params.values().all(|t| t.numel() > 0));
        }
        other => panic!("expected divergence, got {other:?}"),
    }

    let invalid = TrainConfig {
        momentum: 1.0,
        ..cfg
    };
    assert!(matches!(
        ModelSpec::new(
            4,
            3,
            SkeletonLayout::chain(5).unwrap(),
            &invalid,
            &small_sap()
        ),
        Err(TrainError::InvalidConfig(_))
    ));
}

fn tiny_task() -> (SkeletonLayout, Vec<SkeletonSequence>, Vec<SkeletonSequence>) {
    let mut task = SyntheticTaskSpec::new(4, 0.3, 1);
    task.train_per_class = 2;
    task.test_per_class = 2;
    let (train, test) = generate_synthetic_dataset(&task).unwrap();
    (task.layout().unwrap(), train, test)
}

#[test]
fn ablation_tables_are_well_formed() {
    let (layout, train_set, test_set) = tiny_task();
    let cfg = TrainConfig {
        epochs: 0,
        hidden: [8, 8],
        ..Default::default()
    };
    let sap = SapConfig::default();

    let table = run_ablation(
        AblationAxis::AnchorLocation,
        &[1, 2, 3],
        &layout,
        4,
        &train_set,
        &test_set,
        &cfg,
        &sap,
    )
    .unwrap();
    assert_eq!(table.rows.len(), 15);
    let arms: Vec<&str> = table
        .rows
        .iter()
        .step_by(3)
        .map(|r| r.arm.as_str())
        .collect();
    assert_eq!(arms, ["fixed-7", "v1", "v2-alpha20", "v2", "v3"]);

    let table = run_ablation(
        AblationAxis::HeadCount,
        &[1],
        &layout,
        4,
        &train_set,
        &test_set,
        &cfg,
        &sap,
    )
    .unwrap();
    let arms: Vec<&str> = table.rows.iter().map(|r| r.arm.as_str()).collect();
    assert_eq!(arms, ["heads-1", "heads-3", "heads-5", "heads-7"]);
    for row in &table.rows {
        assert!((0.0..=1.0).contains(&row.test_accuracy));
        assert_eq!(row.final_train_loss, None);
    }
    let json = serde_json::to_string(&table).unwrap();
    let back: AblationTable = serde_json::from_str(&json).unwrap();
    assert_eq!(back, table);
    assert_eq!(
        table.accuracy("heads-5", 1),
        Some(table.rows[2].test_accuracy)
    );
}

#[test]
fn stream_and_axis_names_round_trip() {
    for s in [
        Stream::Coords,
        Stream::Bones,
        Stream::AnglesFixed,
        Stream::AnglesSap,
    ] {
        assert_eq!(s.to_string().parse::<Stream>().unwrap(), s);
        assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{s}\""));
    }
    assert!("velocity".parse::<Stream>().is_err());
    assert_eq!(
        "anchor-location".parse::<AblationAxis>().unwrap(),
        AblationAxis::AnchorLocation
    );
}
