//! Triplet angle features, fixed-joint anchor baselines and bone vectors.
//!
//! The angle at joint `u` for an anchor pair `(w1, w2)` is the cosine of the
//! angle between `w1 - u` and `w2 - u`. It is defined as exactly zero when
//! `u` coincides with either anchor or the two anchors coincide.

mod container;
mod graph;

pub use container::{read_features, write_features, FeatureSidecar, FEATURES_MAGIC};
pub use graph::angle_graph;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::DEGENERACY_EPS;
use crate::skeleton::{SkeletonLayout, SkeletonSequence};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AngleError {
    #[error("anchors cover {anchors} frames but the sequence has {sequence}")]
    FrameCountMismatch { anchors: usize, sequence: usize },
    #[error("unknown joint name {0:?}")]
    UnknownJointName(String),
    #[error("anchor names must come in pairs, got {0}")]
    OddNameCount(usize),
    #[error("anchor set needs at least one head")]
    NoHeads,
    #[error("anchor buffer has {found} values, expected {expected}")]
    AnchorShape { expected: usize, found: usize },
    #[error("non-finite anchor coordinate")]
    NonFiniteAnchor,
    #[error("feature tensor has {found} values, expected {expected}")]
    FeatureShape { expected: usize, found: usize },
    #[error("cannot join features of shape {left:?} and {right:?}")]
    ConcatMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("unknown channel descriptor {0:?}")]
    UnknownChannel(String),
    #[error("feature file: {0}")]
    Format(String),
}

/// Cosine of the angle at `u` subtended by `w1` and `w2`.
pub fn angle_feature(u: [f64; 3], w1: [f64; 3], w2: [f64; 3]) -> f64 {
    let a = sub(w1, u);
    let b = sub(w2, u);
    let na = norm(a);
    let nb = norm(b);
    if na < DEGENERACY_EPS || nb < DEGENERACY_EPS || norm(sub(w1, w2)) < DEGENERACY_EPS {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    FixedJoint,
    SapProposed,
}

/// `H` anchor pairs, either one set per frame or shared by all frames.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorPairSet {
    heads: usize,
    /// `Some(T)` for per-frame anchors.
    frames: Option<usize>,
    /// `[T,] H, 2, 3` row-major.
    coords: Vec<f64>,
    pub provenance: Provenance,
}

impl AnchorPairSet {
    pub fn per_frame(
        frames: usize,
        heads: usize,
        coords: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self, AngleError> {
        Self::build(Some(frames), heads, coords, provenance)
    }

    pub fn shared(
        heads: usize,
        coords: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self, AngleError> {
        Self::build(None, heads, coords, provenance)
    }

    fn build(
        frames: Option<usize>,
        heads: usize,
        coords: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self, AngleError> {
        if heads == 0 {
            return Err(AngleError::NoHeads);
        }
        let expected = frames.unwrap_or(1) * heads * 6;
        if coords.len() != expected || frames == Some(0) {
            return Err(AngleError::AnchorShape {
                expected,
                found: coords.len(),
            });
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(AngleError::NonFiniteAnchor);
        }
        Ok(Self {
            heads,
            frames,
            coords,
            provenance,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// Frame count for per-frame anchors, `None` when shared.
    pub fn frames(&self) -> Option<usize> {
        self.frames
    }

    pub fn is_shared(&self) -> bool {
        self.frames.is_none()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Anchor pair of head `h` at frame `t` (the frame is ignored when shared).
    pub fn pair(&self, t: usize, h: usize) -> ([f64; 3], [f64; 3]) {
        let t = if self.frames.is_some() { t } else { 0 };
        let i = (t * self.heads + h) * 6;
        let c = &self.coords[i..i + 6];
        ([c[0], c[1], c[2]], [c[3], c[4], c[5]])
    }
}

/// What one feature channel holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelDescriptor {
    AngleHead(usize),
    Coord(Axis),
    Bone(Axis),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

const AXES: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

impl fmt::Display for ChannelDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let axis = |a: &Axis| match a {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        };
        match self {
            Self::AngleHead(h) => write!(f, "angle-head-{h}"),
            Self::Coord(a) => write!(f, "coord-{}", axis(a)),
            Self::Bone(a) => write!(f, "bone-d{}", axis(a)),
        }
    }
}

impl FromStr for ChannelDescriptor {
    type Err = AngleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let axis = |c: &str| match c {
            "x" => Some(Axis::X),
            "y" => Some(Axis::Y),
            "z" => Some(Axis::Z),
            _ => None,
        };
        let parsed = if let Some(h) = s.strip_prefix("angle-head-") {
            h.parse().ok().map(Self::AngleHead)
        } else if let Some(a) = s.strip_prefix("coord-") {
            axis(a).map(Self::Coord)
        } else if let Some(a) = s.strip_prefix("bone-d") {
            axis(a).map(Self::Bone)
        } else {
            None
        };
        parsed.ok_or_else(|| AngleError::UnknownChannel(s.to_string()))
    }
}

impl Serialize for ChannelDescriptor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ChannelDescriptor {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `T × V × C` per-joint features with one descriptor per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    frames: usize,
    joints: usize,
    values: Vec<f64>,
    channels: Vec<ChannelDescriptor>,
}

impl FeatureTensor {
    pub fn new(
        frames: usize,
        joints: usize,
        values: Vec<f64>,
        channels: Vec<ChannelDescriptor>,
    ) -> Result<Self, AngleError> {
        let expected = frames * joints * channels.len();
        if values.len() != expected {
            return Err(AngleError::FeatureShape {
                expected,
                found: values.len(),
            });
        }
        Ok(Self {
            frames,
            joints,
            values,
            channels,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> &[ChannelDescriptor] {
        &self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, t: usize, v: usize, c: usize) -> f64 {
        self.values[(t * self.joints + v) * self.channels.len() + c]
    }

    /// Stacks `other`'s channels after this tensor's channels.
    pub fn concat_channels(&self, other: &FeatureTensor) -> Result<FeatureTensor, AngleError> {
        if (self.frames, self.joints) != (other.frames, other.joints) {
            return Err(AngleError::ConcatMismatch {
                left: (self.frames, self.joints),
                right: (other.frames, other.joints),
            });
        }
        let (ca, cb) = (self.num_channels(), other.num_channels());
        let mut values = Vec::with_capacity(self.values.len() + other.values.len());
        for (a, b) in self
            .values
            .chunks_exact(ca.max(1))
            .zip(other.values.chunks_exact(cb.max(1)))
        {
            values.extend_from_slice(&a[..ca]);
            values.extend_from_slice(&b[..cb]);
        }
        let mut channels = self.channels.clone();
        channels.extend_from_slice(&other.channels);
        FeatureTensor::new(self.frames, self.joints, values, channels)
    }
}

/// Angle of every joint against every anchor pair, `T × V × H`.
pub fn featurize_sequence(
    seq: &SkeletonSequence,
    anchors: &AnchorPairSet,
) -> Result<FeatureTensor, AngleError> {
    if let Some(f) = anchors.frames() {
        if f != seq.frames() {
            return Err(AngleError::FrameCountMismatch {
                anchors: f,
                sequence: seq.frames(),
            });
        }
    }
    let h = anchors.heads();
    let mut values = Vec::with_capacity(seq.frames() * seq.joints() * h);
    for t in 0..seq.frames() {
        for v in 0..seq.joints() {
            let u = seq.joint(t, v);
            for head in 0..h {
                let (w1, w2) = anchors.pair(t, head);
                values.push(angle_feature(u, w1, w2));
            }
        }
    }
    FeatureTensor::new(
        seq.frames(),
        seq.joints(),
        values,
        (0..h).map(ChannelDescriptor::AngleHead).collect(),
    )
}

/// Default stand-in for the hand-picked anchor joints.
pub const DEFAULT_FIXED_ANCHORS: [&str; 7] = [
    "head",
    "left_hand",
    "right_hand",
    "left_foot",
    "right_foot",
    "spine_base",
    "spine_mid",
];

/// Flat name list pairing each default anchor with the layout root.
pub fn default_fixed_pair_names(layout: &SkeletonLayout) -> Vec<String> {
    let root = layout.names()[layout.root()].clone();
    DEFAULT_FIXED_ANCHORS
        .iter()
        .flat_map(|n| [n.to_string(), root.clone()])
        .collect()
}

/// Per-frame anchors read from named joints. `names` is consumed as
/// consecutive `(w1, w2)` pairs, one head per pair.
pub fn fixed_anchor_pairs(
    layout: &SkeletonLayout,
    seq: &SkeletonSequence,
    names: &[String],
) -> Result<AnchorPairSet, AngleError> {
    if names.len() % 2 != 0 {
        return Err(AngleError::OddNameCount(names.len()));
    }
    let idx = names
        .iter()
        .map(|n| {
            layout
                .index_of(n)
                .filter(|&i| i < seq.joints())
                .ok_or_else(|| AngleError::UnknownJointName(n.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut coords = Vec::with_capacity(seq.frames() * idx.len() * 3);
    for t in 0..seq.frames() {
        for &j in &idx {
            coords.extend_from_slice(&seq.joint(t, j));
        }
    }
    AnchorPairSet::per_frame(seq.frames(), idx.len() / 2, coords, Provenance::FixedJoint)
}

/// Raw coordinates as three channels.
pub fn coord_features(seq: &SkeletonSequence) -> FeatureTensor {
    FeatureTensor::new(
        seq.frames(),
        seq.joints(),
        seq.coords().to_vec(),
        AXES.iter().map(|&a| ChannelDescriptor::Coord(a)).collect(),
    )
    .expect("three coordinates per joint")
}

/// `child - parent` for each joint's incoming bone; the root gets zeros.
pub fn bone_features(seq: &SkeletonSequence, layout: &SkeletonLayout) -> FeatureTensor {
    let mut values = vec![0.0; seq.coords().len()];
    for t in 0..seq.frames() {
        for v in 0..seq.joints() {
            if let Some(p) = layout.parent(v).filter(|&p| p < seq.joints()) {
                let d = sub(seq.joint(t, v), seq.joint(t, p));
                let i = (t * seq.joints() + v) * 3;
                values[i..i + 3].copy_from_slice(&d);
            }
        }
    }
    FeatureTensor::new(
        seq.frames(),
        seq.joints(),
        values,
        AXES.iter().map(|&a| ChannelDescriptor::Bone(a)).collect(),
    )
    .expect("three components per bone")
}
