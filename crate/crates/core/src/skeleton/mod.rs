//! Skeleton sequences, joint layouts, file formats and the synthetic task.

mod dataset;
mod layout;
mod ntu;
pub mod synthetic;
mod transform;

pub use dataset::{read_dataset, write_dataset, DATASET_MAGIC};
pub(crate) use dataset::{read_f64s, read_header, read_labels};
pub use layout::SkeletonLayout;
pub use ntu::{
    parse_ntu_skeleton, parse_ntu_skeleton_with, write_ntu_skeleton, NtuError, ParseOptions,
};
pub use synthetic::{generate_synthetic_dataset, SyntheticTaskSpec};
pub use transform::{apply_similarity_transform, normalize_sequence};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum SkeletonError {
    #[error("sequence needs at least one frame and one joint (got T={frames}, V={joints})")]
    EmptySequence { frames: usize, joints: usize },
    #[error("coordinate buffer has {found} values, expected {expected}")]
    CoordinateCount { expected: usize, found: usize },
    #[error("non-finite coordinate at frame {frame}, joint {joint}")]
    NonFinite { frame: usize, joint: usize },
    #[error("joint index {index} out of range for {joints} joints")]
    JointOutOfRange { index: usize, joints: usize },
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("rotation is not orthonormal (max deviation {deviation:e})")]
    NonOrthonormalRotation { deviation: f64 },
    #[error("scale must be positive and finite, got {0}")]
    NonPositiveScale(f64),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("sequence has {frames} frames, fewer than the minimum {min}")]
    TooFewFrames { frames: usize, min: usize },
    #[error("dataset format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Free-form capture metadata.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub source: String,
    pub subject: String,
    pub camera: String,
}

/// A T×V×3 series of joint coordinates, stored frame-major then joint-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    frames: usize,
    joints: usize,
    coords: Vec<f64>,
    pub label: Option<u32>,
    pub meta: SequenceMeta,
}

impl SkeletonSequence {
    pub fn new(
        frames: usize,
        joints: usize,
        coords: Vec<f64>,
        label: Option<u32>,
        meta: SequenceMeta,
    ) -> Result<Self, SkeletonError> {
        if frames == 0 || joints == 0 {
            return Err(SkeletonError::EmptySequence { frames, joints });
        }
        if coords.len() != frames * joints * 3 {
            return Err(SkeletonError::CoordinateCount {
                expected: frames * joints * 3,
                found: coords.len(),
            });
        }
        if let Some(i) = coords.iter().position(|v| !v.is_finite()) {
            return Err(SkeletonError::NonFinite {
                frame: i / (joints * 3),
                joint: (i / 3) % joints,
            });
        }
        Ok(Self {
            frames,
            joints,
            coords,
            label,
            meta,
        })
    }

    /// Builds a sequence from per-frame joint lists.
    pub fn from_frames(
        frames: &[Vec<[f64; 3]>],
        label: Option<u32>,
    ) -> Result<Self, SkeletonError> {
        let joints = frames.first().map_or(0, Vec::len);
        if frames.iter().any(|f| f.len() != joints) {
            return Err(SkeletonError::CoordinateCount {
                expected: frames.len() * joints,
                found: frames.iter().map(Vec::len).sum(),
            });
        }
        let coords = frames.iter().flatten().flatten().copied().collect();
        Self::new(frames.len(), joints, coords, label, SequenceMeta::default())
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn joint(&self, frame: usize, joint: usize) -> [f64; 3] {
        let i = (frame * self.joints + joint) * 3;
        [self.coords[i], self.coords[i + 1], self.coords[i + 2]]
    }

    /// Returns a copy with every coordinate mapped through `f`. Fails if the
    /// mapping produces non-finite values.
    pub fn map_points(
        &self,
        mut f: impl FnMut([f64; 3]) -> [f64; 3],
    ) -> Result<SkeletonSequence, SkeletonError> {
        let coords = self
            .coords
            .chunks_exact(3)
            .flat_map(|p| f([p[0], p[1], p[2]]))
            .collect();
        Self::new(
            self.frames,
            self.joints,
            coords,
            self.label,
            self.meta.clone(),
        )
    }

    /// Axis-aligned bounding box diagonal over all frames and joints.
    pub fn bounding_diagonal(&self) -> f64 {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in self.coords.chunks_exact(3) {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (0..3).map(|k| (hi[k] - lo[k]).powi(2)).sum::<f64>().sqrt()
    }
}
