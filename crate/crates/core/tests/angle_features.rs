use std::path::PathBuf;

use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sap_core::angle::{
    angle_feature, angle_graph, bone_features, default_fixed_pair_names, featurize_sequence,
    fixed_anchor_pairs, read_features, write_features, AnchorPairSet, AngleError,
    ChannelDescriptor, FeatureSidecar, Provenance,
};
use sap_core::autodiff::{finite_difference_check, Bindings, Graph, Tensor};
use sap_core::skeleton::{
    apply_similarity_transform, parse_ntu_skeleton, SkeletonLayout, SkeletonSequence,
};

fn fixture_sequence() -> SkeletonSequence {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/S001C002P003R002A013_excerpt.skeleton");
    parse_ntu_skeleton(
        &std::fs::read_to_string(path).unwrap(),
        &SkeletonLayout::ntu25(),
    )
    .unwrap()
}

fn random_sequence(rng: &mut ChaCha8Rng, t: usize, v: usize) -> SkeletonSequence {
    let coords = (0..t * v * 3).map(|_| rng.gen_range(-2.0..2.0)).collect();
    SkeletonSequence::new(t, v, coords, None, Default::default()).unwrap()
}

fn point(rng: &mut ChaCha8Rng, r: f64) -> [f64; 3] {
    [
        rng.gen_range(-r..r),
        rng.gen_range(-r..r),
        rng.gen_range(-r..r),
    ]
}

/// cos² as an exact rational for integer inputs, then one rounding each for
/// the division and the square root.
fn integer_oracle(u: [i64; 3], w1: [i64; 3], w2: [i64; 3]) -> f64 {
    let a: Vec<i128> = (0..3).map(|k| (w1[k] - u[k]) as i128).collect();
    let b: Vec<i128> = (0..3).map(|k| (w2[k] - u[k]) as i128).collect();
    let d: i128 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let na: i128 = a.iter().map(|x| x * x).sum();
    let nb: i128 = b.iter().map(|x| x * x).sum();
    d.signum() as f64 * ((d * d) as f64 / (na * nb) as f64).sqrt()
}

#[test]
fn orthogonal_and_opposite_anchors() {
    assert_eq!(
        angle_feature([0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
        0.0
    );
    assert_eq!(
        angle_feature([0.0; 3], [1.0, 0.0, 0.0], [-2.0, 0.0, 0.0]),
        -1.0
    );
}

#[test]
fn joint_on_an_anchor_gives_zero() {
    assert_eq!(
        angle_feature([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], [9.0, 9.0, 9.0]),
        0.0
    );
    assert_eq!(
        angle_feature([1.0, 2.0, 3.0], [9.0, 9.0, 9.0], [1.0, 2.0, 3.0]),
        0.0
    );
    // anchors coincide with each other
    assert_eq!(
        angle_feature([0.0; 3], [1.0, 1.0, 0.0], [1.0, 1.0, 0.0]),
        0.0
    );
    assert_eq!(
        angle_feature([0.0; 3], [1.0, 1.0, 0.0], [1.0, 1.0, 5e-9]),
        0.0
    );
}

#[test]
fn integer_triplet_matches_high_precision_value() {
    let got = angle_feature([1.0, 1.0, 1.0], [2.0, 3.0, 1.0], [0.0, 1.0, 2.0]);
    // -1/sqrt(10), 50-digit decimal rounded to f64
    let frozen = -0.316_227_766_016_837_94;
    assert!((got - frozen).abs() <= 1e-15, "{got}");
    assert!((got - integer_oracle([1, 1, 1], [2, 3, 1], [0, 1, 2])).abs() <= 1e-15);
}

#[test]
fn integer_oracle_agrees_on_random_triplets() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..2000 {
        let mut p = || [0; 3].map(|_: i64| rng.gen_range(-50i64..50));
        let (u, w1, w2) = (p(), p(), p());
        if u == w1 || u == w2 || w1 == w2 {
            continue;
        }
        let f = |x: [i64; 3]| x.map(|c| c as f64);
        let got = angle_feature(f(u), f(w1), f(w2));
        assert!((got - integer_oracle(u, w1, w2)).abs() <= 1e-14);
    }
}

#[test]
fn output_stays_in_unit_range_on_many_triplets() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for i in 0..100_000 {
        // mix ordinary, tiny and huge magnitudes plus near-collinear cases
        let r = [1.0, 1e-6, 1e6][i % 3];
        let u = point(&mut rng, r);
        let w1 = point(&mut rng, r);
        let w2 = if i % 7 == 0 {
            let s = rng.gen_range(-3.0..3.0);
            [0, 1, 2].map(|k| u[k] + s * (w1[k] - u[k]))
        } else {
            point(&mut rng, r)
        };
        let c = angle_feature(u, w1, w2);
        assert!((-1.0..=1.0).contains(&c), "{u:?} {w1:?} {w2:?} -> {c}");
    }
}

#[test]
fn co_transformed_triplets_are_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..100 {
        let rot = Rotation3::from_euler_angles(
            rng.gen_range(-3.1..3.1),
            rng.gen_range(-1.5..1.5),
            rng.gen_range(-3.1..3.1),
        );
        let s = rng.gen_range(0.1..10.0);
        let tr = Vector3::from(point(&mut rng, 5.0));
        let map = |p: [f64; 3]| {
            let q = rot * Vector3::from(p) * s + tr;
            [q.x, q.y, q.z]
        };
        let (u, w1, w2) = (
            point(&mut rng, 1.0),
            point(&mut rng, 1.0),
            point(&mut rng, 1.0),
        );
        let before = angle_feature(u, w1, w2);
        let after = angle_feature(map(u), map(w1), map(w2));
        assert!((before - after).abs() <= 1e-9);
    }
}

#[test]
fn bones_scale_with_the_body() {
    let seq = fixture_sequence();
    let layout = SkeletonLayout::ntu25();
    let scaled =
        apply_similarity_transform(&seq, &nalgebra::Matrix3::identity(), &Vector3::zeros(), 2.0)
            .unwrap();
    let a = bone_features(&seq, &layout);
    let b = bone_features(&scaled, &layout);
    let max_change = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(max_change > 1e-3);
    for (x, y) in a.values().iter().zip(b.values()) {
        assert!((2.0 * x - y).abs() <= 1e-12);
    }
}

proptest! {
    #[test]
    fn swapping_anchors_is_exact(
        u in prop::array::uniform3(-10.0f64..10.0),
        w1 in prop::array::uniform3(-10.0f64..10.0),
        w2 in prop::array::uniform3(-10.0f64..10.0),
    ) {
        prop_assert_eq!(angle_feature(u, w1, w2).to_bits(), angle_feature(u, w2, w1).to_bits());
    }

    #[test]
    fn featurize_matches_brute_force(
        seed in any::<u64>(),
        t in 1usize..=8,
        v in 1usize..=8,
        h in 1usize..=8,
        shared in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seq = random_sequence(&mut rng, t, v);
        let frames = if shared { 1 } else { t };
        let coords: Vec<f64> = (0..frames * h * 6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let anchors = if shared {
            AnchorPairSet::shared(h, coords.clone(), Provenance::SapProposed).unwrap()
        } else {
            AnchorPairSet::per_frame(t, h, coords.clone(), Provenance::SapProposed).unwrap()
        };
        let f = featurize_sequence(&seq, &anchors).unwrap();
        prop_assert_eq!((f.frames(), f.joints(), f.num_channels()), (t, v, h));
        for ti in 0..t {
            for vi in 0..v {
                for hi in 0..h {
                    let base = ((if shared { 0 } else { ti }) * h + hi) * 6;
                    let w1 = [coords[base], coords[base + 1], coords[base + 2]];
                    let w2 = [coords[base + 3], coords[base + 4], coords[base + 5]];
                    let expect = angle_feature(seq.joint(ti, vi), w1, w2);
                    prop_assert_eq!(f.get(ti, vi, hi), expect);
                }
            }
        }
    }
}

#[test]
fn all_joints_at_origin_give_zero_features() {
    let seq = SkeletonSequence::new(3, 4, vec![0.0; 36], None, Default::default()).unwrap();
    let anchors = AnchorPairSet::shared(2, vec![0.0; 12], Provenance::SapProposed).unwrap();
    let f = featurize_sequence(&seq, &anchors).unwrap();
    assert!(f.values().iter().all(|&x| x == 0.0));
    assert_eq!(
        f.channels(),
        &[
            ChannelDescriptor::AngleHead(0),
            ChannelDescriptor::AngleHead(1)
        ]
    );
}

#[test]
fn single_joint_orthogonal_pair() {
    let seq = SkeletonSequence::from_frames(&[vec![[0.0; 3]]], None).unwrap();
    let anchors = AnchorPairSet::shared(
        1,
        vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        Provenance::FixedJoint,
    )
    .unwrap();
    assert_eq!(featurize_sequence(&seq, &anchors).unwrap().values(), &[0.0]);
}

#[test]
fn per_frame_anchors_must_match_frame_count() {
    let seq = SkeletonSequence::new(3, 1, vec![0.0; 9], None, Default::default()).unwrap();
    let anchors = AnchorPairSet::per_frame(2, 1, vec![1.0; 12], Provenance::FixedJoint).unwrap();
    assert_eq!(
        featurize_sequence(&seq, &anchors),
        Err(AngleError::FrameCountMismatch {
            anchors: 2,
            sequence: 3
        })
    );
}

#[test]
fn root_root_pair_is_degenerate() {
    let seq = fixture_sequence();
    let layout = SkeletonLayout::ntu25();
    let names = vec!["spine_base".to_string(), "spine_base".to_string()];
    let anchors = fixed_anchor_pairs(&layout, &seq, &names).unwrap();
    let f = featurize_sequence(&seq, &anchors).unwrap();
    assert!(f.values().iter().all(|&x| x == 0.0));
}

#[test]
fn hand_pair_reads_joint_coordinates() {
    let layout = SkeletonLayout::ntu25();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let seq = random_sequence(&mut rng, 1, 25);
    let names = vec!["left_hand".to_string(), "right_hand".to_string()];
    let anchors = fixed_anchor_pairs(&layout, &seq, &names).unwrap();
    assert_eq!(anchors.pair(0, 0), (seq.joint(0, 7), seq.joint(0, 11)));
    assert_eq!(anchors.provenance, Provenance::FixedJoint);
}

#[test]
fn default_fixed_set_matches_fixture_lookup() {
    let seq = fixture_sequence();
    let layout = SkeletonLayout::ntu25();
    let anchors = fixed_anchor_pairs(&layout, &seq, &default_fixed_pair_names(&layout)).unwrap();
    assert_eq!(anchors.heads(), 7);
    assert_eq!(anchors.frames(), Some(5));
    // frame 0 values pulled from the fixture with awk: head, hands, feet,
    // spine base, spine mid; every pair's second anchor is the spine base
    let expected = [
        [0.2397127, 0.8195906, 3.604983],
        [0.2319285, -0.4981163, 3.716292],
        [0.1508188, -0.1009721, 3.701383],
        [0.2341152, 0.3009484, 3.685621],
        [0.2081338, 0.6997677, 3.721341],
        [0.2200968, 0.1723626, 3.785031],
        [0.2337386, 0.4398738, 3.710168],
    ];
    for (h, e) in expected.iter().enumerate() {
        let (w1, w2) = anchors.pair(0, h);
        assert_eq!(&w1, e);
        assert_eq!(w2, [0.2200968, 0.1723626, 3.785031]);
    }
}

#[test]
fn fixed_pair_names_are_validated() {
    let layout = SkeletonLayout::ntu25();
    let seq = fixture_sequence();
    let names = vec!["head".to_string(), "tail".to_string()];
    assert_eq!(
        fixed_anchor_pairs(&layout, &seq, &names),
        Err(AngleError::UnknownJointName("tail".into()))
    );
    assert_eq!(
        fixed_anchor_pairs(&layout, &seq, &["head".to_string()]),
        Err(AngleError::OddNameCount(1))
    );
}

#[test]
fn bone_vectors_follow_edges() {
    let chain = SkeletonLayout::chain(2).unwrap();
    let seq =
        SkeletonSequence::from_frames(&[vec![[1.0, 1.0, 1.0], [1.0, 1.0, 2.0]]], None).unwrap();
    let b = bone_features(&seq, &chain);
    assert_eq!(b.values(), &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);

    let same = SkeletonSequence::from_frames(&[vec![[3.0, 3.0, 3.0]; 2]], None).unwrap();
    assert!(bone_features(&same, &chain)
        .values()
        .iter()
        .all(|&x| x == 0.0));

    let seq = fixture_sequence();
    let layout = SkeletonLayout::ntu25();
    let b = bone_features(&seq, &layout);
    let mut expect = vec![0.0; seq.coords().len()];
    for t in 0..seq.frames() {
        for &(p, c) in layout.edges() {
            for k in 0..3 {
                expect[(t * 25 + c) * 3 + k] = seq.joint(t, c)[k] - seq.joint(t, p)[k];
            }
        }
    }
    assert_eq!(b.values(), expect.as_slice());
}

fn anchor_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_shape_vec(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
    )
    .unwrap()
}

#[test]
fn graph_angles_match_scalar_features() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (t, v, h) = (3, 5, 2);
    for per_frame in [false, true] {
        let seq = random_sequence(&mut rng, t, v);
        let ashape: Vec<usize> = if per_frame { vec![t, h, 3] } else { vec![h, 3] };
        let w1 = anchor_tensor(&mut rng, &ashape);
        let mut w2 = anchor_tensor(&mut rng, &ashape);
        // make one pair degenerate and put one joint on an anchor
        w2.data_mut()[..3].copy_from_slice(&w1.data()[..3]);
        let mut coords = seq.coords().to_vec();
        coords[3..6].copy_from_slice(&w1.data()[3..6]);
        let seq = SkeletonSequence::new(t, v, coords, None, Default::default()).unwrap();

        let mut g = Graph::new();
        let x = g.input("x", &[t, v, 3]);
        let n1 = g.input("w1", &ashape);
        let n2 = g.input("w2", &ashape);
        let out = angle_graph(&mut g, x, n1, n2).unwrap();
        let xt = Tensor::from_shape_vec(vec![t, v, 3], seq.coords().to_vec()).unwrap();
        let mut b = Bindings::new();
        b.bind(x, &xt).bind(n1, &w1).bind(n2, &w2);
        let vals = g.evaluate(&b).unwrap();

        let flat = |w: &Tensor| w.data().to_vec();
        let mut pairs = Vec::new();
        let frames = if per_frame { t } else { 1 };
        for f in 0..frames {
            for hi in 0..h {
                let i = (f * h + hi) * 3;
                pairs.extend_from_slice(&flat(&w1)[i..i + 3]);
                pairs.extend_from_slice(&flat(&w2)[i..i + 3]);
            }
        }
        let anchors = if per_frame {
            AnchorPairSet::per_frame(t, h, pairs, Provenance::SapProposed).unwrap()
        } else {
            AnchorPairSet::shared(h, pairs, Provenance::SapProposed).unwrap()
        };
        let scalar = featurize_sequence(&seq, &anchors).unwrap();
        for (a, b) in vals.get(out).data().iter().zip(scalar.values()) {
            assert!((a - b).abs() <= 1e-14, "{a} vs {b}");
        }
    }
}

#[test]
fn graph_angles_have_correct_anchor_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (t, v, h) = (2, 4, 3);
    let seq = random_sequence(&mut rng, t, v);
    let mut g = Graph::new();
    let x = g.input("x", &[t, v, 3]);
    let w1 = g.parameter("w1", &[t, h, 3]);
    let w2 = g.parameter("w2", &[t, h, 3]);
    let out = angle_graph(&mut g, x, w1, w2).unwrap();
    let flat = g.reshape(out, &[t * v * h]).unwrap();
    let loss = g.mean_axis(flat, 0).unwrap();
    let xt = Tensor::from_shape_vec(vec![t, v, 3], seq.coords().to_vec()).unwrap();
    let a1 = anchor_tensor(&mut rng, &[t, h, 3]);
    let a2 = anchor_tensor(&mut rng, &[t, h, 3]);
    let mut b = Bindings::new();
    b.bind(x, &xt).bind(w1, &a1).bind(w2, &a2);
    let report = finite_difference_check(&g, &b, loss, &[w1, w2], 1e-6, 1e-6).unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn feature_container_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let seqs: Vec<_> = (0..3).map(|_| random_sequence(&mut rng, 2, 3)).collect();
    let anchors = AnchorPairSet::shared(
        2,
        vec![0.5; 6].into_iter().chain(vec![-0.5; 6]).collect(),
        Provenance::SapProposed,
    )
    .unwrap();
    let feats: Vec<_> = seqs
        .iter()
        .map(|s| featurize_sequence(s, &anchors).unwrap())
        .collect();
    let labels = vec![Some(0), None, Some(4)];
    let mut bytes = Vec::new();
    let sidecar = write_features(&mut bytes, &feats, &labels).unwrap();
    assert!(bytes.starts_with(b"SAPFT v1 2 3 2 3\n"));
    let json = serde_json::to_string(&sidecar).unwrap();
    assert!(json.contains("\"angle-head-1\""));
    let sidecar: FeatureSidecar = serde_json::from_str(&json).unwrap();
    let (back, back_labels) = read_features(bytes.as_slice(), &sidecar).unwrap();
    assert_eq!(back, feats);
    assert_eq!(back_labels, labels);
}
