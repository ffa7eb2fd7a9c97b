use nalgebra::{Matrix3, Vector3};

use super::{SkeletonError, SkeletonLayout, SkeletonSequence};

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Maps every coordinate `x ↦ scale · R · x + t`.
pub fn apply_similarity_transform(
    seq: &SkeletonSequence,
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
    scale: f64,
) -> Result<SkeletonSequence, SkeletonError> {
    let deviation = (rotation.transpose() * rotation - Matrix3::identity()).amax();
    if !(deviation <= ORTHONORMAL_TOL) {
        return Err(SkeletonError::NonOrthonormalRotation { deviation });
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(SkeletonError::NonPositiveScale(scale));
    }
    seq.map_points(|p| {
        let q = rotation * Vector3::from(p) * scale + translation;
        [q.x, q.y, q.z]
    })
}

/// Subtracts the frame-0 root joint position from every coordinate.
pub fn normalize_sequence(
    seq: &SkeletonSequence,
    layout: &SkeletonLayout,
) -> Result<SkeletonSequence, SkeletonError> {
    let root = layout.root();
    if root >= seq.joints() {
        return Err(SkeletonError::JointOutOfRange {
            index: root,
            joints: seq.joints(),
        });
    }
    let origin = seq.joint(0, root);
    seq.map_points(|p| [p[0] - origin[0], p[1] - origin[1], p[2] - origin[2]])
}
