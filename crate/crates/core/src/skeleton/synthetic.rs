//! Seeded synthetic action task whose classes differ only in joint-angle
//! trajectories.
//!
//! Every sample starts from a rest pose and drives a few joints with a
//! sinusoidal bend. The bend of the bone entering joint `j` is a rotation
//! about its parent `p`, around the axis normal to the rest-pose plane of
//! (grandparent, parent, joint). The interior angle at `p` then equals its
//! rest value minus the bend, whatever the rest of the body does. Samples are
//! then optionally scaled, rotated about the vertical axis and translated.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    apply_similarity_transform, SequenceMeta, SkeletonError, SkeletonLayout, SkeletonSequence,
};

/// Bend of the bone entering `joint`, in radians:
/// `bend + amplitude · sin(2π·frequency·t/T + phase)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Oscillator {
    pub joint: usize,
    pub bend: f64,
    pub amplitude: f64,
    pub frequency: u32,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMotion {
    pub oscillators: Vec<Oscillator>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    /// Random rotation about the vertical (y) axis.
    pub rotation: bool,
    /// Half-width of the uniform yaw range, in radians.
    pub max_yaw: f64,
    /// Uniform scale range, inclusive.
    pub scale: (f64, f64),
    /// Per-axis uniform translation half-width.
    pub translation: f64,
}

impl AugmentationPolicy {
    pub fn none() -> Self {
        Self {
            rotation: false,
            max_yaw: PI,
            scale: (1.0, 1.0),
            translation: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub classes: Vec<ClassMotion>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub frames: usize,
    pub joints: usize,
    pub train_augmentation: AugmentationPolicy,
    pub test_augmentation: AugmentationPolicy,
    pub noise_std: f64,
    /// Half-width of the per-sample uniform phase offset added to every
    /// oscillator.
    pub phase_jitter: f64,
    /// Bend difference between neighbouring classes on each driven joint.
    pub angle_separation: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

/// A generated sample before and after augmentation.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub base: SkeletonSequence,
    pub sequence: SkeletonSequence,
    pub scale: f64,
    pub yaw: f64,
    pub translation: [f64; 3],
}

const NTU_DRIVEN: [usize; 4] = [6, 10, 14, 18];

impl SyntheticTaskSpec {
    /// `num_classes` classes over four driven joints. Class `k` bends driven
    /// joint `m` by `0.4 + separation · ((k + m) mod num_classes)`, so any two
    /// classes differ by at least `separation` on every driven joint.
    pub fn new(num_classes: usize, angle_separation: f64, seed: u64) -> Self {
        let joints = 25;
        let classes = (0..num_classes)
            .map(|k| ClassMotion {
                oscillators: NTU_DRIVEN
                    .iter()
                    .enumerate()
                    .map(|(m, &joint)| Oscillator {
                        joint,
                        bend: 0.4 + angle_separation * ((k + m) % num_classes.max(1)) as f64,
                        amplitude: 0.25,
                        frequency: 1 + (m % 2) as u32,
                        phase: k as f64 * PI / 2.0,
                    })
                    .collect(),
            })
            .collect();
        Self {
            classes,
            train_per_class: 200,
            test_per_class: 100,
            frames: 20,
            joints,
            train_augmentation: AugmentationPolicy {
                rotation: false,
                max_yaw: PI,
                scale: (1.0, 1.0),
                translation: 0.5,
            },
            test_augmentation: AugmentationPolicy {
                rotation: true,
                max_yaw: PI,
                scale: (0.5, 2.0),
                translation: 0.5,
            },
            noise_std: 0.005,
            phase_jitter: PI,
            angle_separation,
            seed,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// The NTU layout for 25 joints, a chain otherwise.
    pub fn layout(&self) -> Result<SkeletonLayout, SkeletonError> {
        if self.joints == 25 {
            Ok(SkeletonLayout::ntu25())
        } else {
            SkeletonLayout::chain(self.joints)
        }
    }

    pub fn validate(&self) -> Result<(), SkeletonError> {
        let bad = |m: String| Err(SkeletonError::InvalidSpec(m));
        if self.classes.is_empty() {
            return bad("need at least one class".into());
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return bad("samples per class must be positive".into());
        }
        if self.frames == 0 {
            return bad("frame count must be positive".into());
        }
        if self.joints < 3 {
            return bad("need at least three joints".into());
        }
        for (name, aug) in [
            ("train", &self.train_augmentation),
            ("test", &self.test_augmentation),
        ] {
            let (lo, hi) = aug.scale;
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return bad(format!(
                    "{name} scale range ({lo}, {hi}) must be positive and ordered"
                ));
            }
            if !(aug.translation >= 0.0 && aug.translation.is_finite()) {
                return bad(format!("{name} translation must be nonnegative"));
            }
            if !(0.0..=PI).contains(&aug.max_yaw) {
                return bad(format!("{name} yaw half-width must lie in [0, π]"));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise stddev must be nonnegative".into());
        }
        let layout = self.layout()?;
        for c in &self.classes {
            for o in &c.oscillators {
                let has_grandparent = layout
                    .parent(o.joint)
                    .and_then(|p| layout.parent(p))
                    .is_some();
                if !has_grandparent {
                    return bad(format!(
                        "driven joint {} needs a parent and grandparent",
                        o.joint
                    ));
                }
            }
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream per (seed, split, class, index).
fn sample_seed(seed: u64, split: Split, class: usize, index: usize) -> u64 {
    let split = match split {
        Split::Train => 1,
        Split::Test => 2,
    };
    [split, class as u64, index as u64]
        .iter()
        .fold(splitmix64(seed), |acc, &x| {
            splitmix64(acc ^ x.wrapping_mul(0xD6E8_FEB8_6659_FD93))
        })
}

/// Rest pose in meters, y up.
pub fn rest_pose(layout: &SkeletonLayout) -> Vec<Vector3<f64>> {
    if layout.len() == 25 && *layout == SkeletonLayout::ntu25() {
        let left: [(usize, [f64; 3]); 11] = [
            (4, [-0.18, 0.50, 0.0]),
            (5, [-0.24, 0.24, 0.03]),
            (6, [-0.26, 0.00, 0.08]),
            (7, [-0.26, -0.07, 0.10]),
            (21, [-0.26, -0.13, 0.12]),
            (22, [-0.22, -0.06, 0.12]),
            (12, [-0.09, -0.02, 0.0]),
            (13, [-0.10, -0.44, 0.03]),
            (14, [-0.10, -0.84, -0.01]),
            (15, [-0.10, -0.88, 0.10]),
            (0, [0.0, 0.0, 0.0]),
        ];
        let mirror = [
            (4, 8),
            (5, 9),
            (6, 10),
            (7, 11),
            (21, 23),
            (22, 24),
            (12, 16),
            (13, 17),
            (14, 18),
            (15, 19),
        ];
        let mut pose = vec![Vector3::zeros(); 25];
        for (j, p) in left {
            pose[j] = Vector3::from(p);
        }
        for (l, r) in mirror {
            pose[r] = Vector3::new(-pose[l].x, pose[l].y, pose[l].z);
        }
        pose[1] = Vector3::new(0.0, 0.28, 0.0);
        pose[20] = Vector3::new(0.0, 0.52, 0.0);
        pose[2] = Vector3::new(0.0, 0.60, 0.0);
        pose[3] = Vector3::new(0.0, 0.75, 0.02);
        pose
    } else {
        (0..layout.len())
            .map(|i| Vector3::new(0.25 * i as f64, 0.1 * (i % 2) as f64, 0.0))
            .collect()
    }
}

/// Rotation axis that bends the bone entering `joint` in the rest-pose plane.
fn bend_axis(layout: &SkeletonLayout, rest: &[Vector3<f64>], joint: usize) -> Unit<Vector3<f64>> {
    let p = layout.parent(joint).expect("validated");
    let gp = layout.parent(p).expect("validated");
    let a = rest[gp] - rest[p];
    let b = rest[joint] - rest[p];
    let n = a.cross(&b);
    if n.norm() > 1e-9 {
        Unit::new_normalize(n)
    } else {
        // collinear rest bones: any axis normal to the bone works
        let helper = if a.x.abs() < 0.9 * a.norm() {
            Vector3::x()
        } else {
            Vector3::y()
        };
        Unit::new_normalize(a.cross(&helper))
    }
}

pub fn synthesize_sample(
    spec: &SyntheticTaskSpec,
    split: Split,
    class: usize,
    index: usize,
) -> Result<SyntheticSample, SkeletonError> {
    let layout = spec.layout()?;
    let rest = rest_pose(&layout);
    let order = layout.topological_order();
    let motion = spec
        .classes
        .get(class)
        .ok_or_else(|| SkeletonError::InvalidSpec(format!("class {class} out of range")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(spec.seed, split, class, index));

    let jitters: Vec<f64> = motion
        .oscillators
        .iter()
        .map(|_| {
            if spec.phase_jitter > 0.0 {
                rng.gen_range(-spec.phase_jitter..=spec.phase_jitter)
            } else {
                0.0
            }
        })
        .collect();
    let axes: Vec<Unit<Vector3<f64>>> = motion
        .oscillators
        .iter()
        .map(|o| bend_axis(&layout, &rest, o.joint))
        .collect();
    let noise = Normal::new(0.0, spec.noise_std.max(0.0))
        .map_err(|e| SkeletonError::InvalidSpec(e.to_string()))?;

    let v = layout.len();
    let mut coords = Vec::with_capacity(spec.frames * v * 3);
    for t in 0..spec.frames {
        let mut local = vec![Matrix3::identity(); v];
        for ((o, axis), jitter) in motion.oscillators.iter().zip(&axes).zip(&jitters) {
            let arg =
                2.0 * PI * o.frequency as f64 * t as f64 / spec.frames as f64 + o.phase + jitter;
            let bend = o.bend + o.amplitude * arg.sin();
            // +angle about a×b opens the joint; a bend closes it
            local[o.joint] = *Rotation3::from_axis_angle(axis, -bend).matrix();
        }
        let mut world = vec![Matrix3::identity(); v];
        let mut pos = vec![Vector3::zeros(); v];
        for &j in &order {
            match layout.parent(j) {
                None => {
                    world[j] = local[j];
                    pos[j] = rest[j];
                }
                Some(p) => {
                    world[j] = world[p] * local[j];
                    pos[j] = pos[p] + world[j] * (rest[j] - rest[p]);
                }
            }
        }
        for p in pos {
            for k in 0..3 {
                let n = if spec.noise_std > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                coords.push(p[k] + n);
            }
        }
    }
    let meta = SequenceMeta {
        source: "synthetic".into(),
        subject: format!(
            "{}-{class}-{index}",
            if split == Split::Train {
                "train"
            } else {
                "test"
            }
        ),
        camera: String::new(),
    };
    let base = SkeletonSequence::new(spec.frames, v, coords, Some(class as u32), meta)?;

    let aug = match split {
        Split::Train => &spec.train_augmentation,
        Split::Test => &spec.test_augmentation,
    };
    let scale = rng.gen_range(aug.scale.0..=aug.scale.1);
    let yaw = if aug.rotation {
        rng.gen_range(-aug.max_yaw..=aug.max_yaw)
    } else {
        0.0
    };
    let mut translation = [0.0; 3];
    if aug.translation > 0.0 {
        for t in &mut translation {
            *t = rng.gen_range(-aug.translation..=aug.translation);
        }
    }
    let rotation = *Rotation3::from_axis_angle(&Vector3::y_axis(), yaw).matrix();
    let sequence =
        apply_similarity_transform(&base, &rotation, &Vector3::from(translation), scale)?;
    Ok(SyntheticSample {
        base,
        sequence,
        scale,
        yaw,
        translation,
    })
}

/// Generates the train and test splits, class-major within each split.
pub fn generate_synthetic_dataset(
    spec: &SyntheticTaskSpec,
) -> Result<(Vec<SkeletonSequence>, Vec<SkeletonSequence>), SkeletonError> {
    spec.validate()?;
    let split = |which: Split, per_class: usize| -> Result<Vec<SkeletonSequence>, SkeletonError> {
        let mut out = Vec::with_capacity(per_class * spec.num_classes());
        for class in 0..spec.num_classes() {
            for i in 0..per_class {
                out.push(synthesize_sample(spec, which, class, i)?.sequence);
            }
        }
        Ok(out)
    };
    Ok((
        split(Split::Train, spec.train_per_class)?,
        split(Split::Test, spec.test_per_class)?,
    ))
}
