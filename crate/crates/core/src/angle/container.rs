//! Binary feature container: header `SAPFT v1 T V C N`, then `N·T·V·C`
//! little-endian `f64` values, then `N` little-endian `i32` labels. Channel
//! descriptors travel in a JSON sidecar.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{AngleError, ChannelDescriptor, FeatureTensor};
use crate::skeleton::{read_f64s, read_header, read_labels, SkeletonError};

pub const FEATURES_MAGIC: &str = "SAPFT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSidecar {
    pub frames: usize,
    pub joints: usize,
    pub samples: usize,
    pub channels: Vec<ChannelDescriptor>,
}

fn format_err(e: SkeletonError) -> AngleError {
    AngleError::Format(e.to_string())
}

/// Writes the tensors and returns the sidecar describing them.
pub fn write_features<W: Write>(
    mut w: W,
    features: &[FeatureTensor],
    labels: &[Option<u32>],
) -> Result<FeatureSidecar, AngleError> {
    if labels.len() != features.len() {
        return Err(AngleError::Format(format!(
            "{} labels for {} samples",
            labels.len(),
            features.len()
        )));
    }
    let first = features.first();
    let (t, v) = first.map_or((0, 0), |f| (f.frames(), f.joints()));
    let channels = first.map_or_else(Vec::new, |f| f.channels().to_vec());
    if features
        .iter()
        .any(|f| f.frames() != t || f.joints() != v || f.channels() != channels.as_slice())
    {
        return Err(AngleError::Format(
            "all samples must share shape and channels".into(),
        ));
    }
    let io = |e: std::io::Error| AngleError::Format(e.to_string());
    writeln!(
        w,
        "{FEATURES_MAGIC} v1 {t} {v} {} {}",
        channels.len(),
        features.len()
    )
    .map_err(io)?;
    let mut buf = Vec::new();
    for f in features {
        for x in f.values() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    for l in labels {
        buf.extend_from_slice(&l.map_or(-1, |l| l as i32).to_le_bytes());
    }
    w.write_all(&buf).map_err(io)?;
    Ok(FeatureSidecar {
        frames: t,
        joints: v,
        samples: features.len(),
        channels,
    })
}

pub fn read_features<R: BufRead>(
    mut r: R,
    sidecar: &FeatureSidecar,
) -> Result<(Vec<FeatureTensor>, Vec<Option<u32>>), AngleError> {
    let dims = read_header(&mut r, FEATURES_MAGIC, 4).map_err(format_err)?;
    let (t, v, c, n) = (dims[0], dims[1], dims[2], dims[3]);
    if (t, v, c, n)
        != (
            sidecar.frames,
            sidecar.joints,
            sidecar.channels.len(),
            sidecar.samples,
        )
    {
        return Err(AngleError::Format(
            "header disagrees with channel sidecar".into(),
        ));
    }
    let per = t * v * c;
    let values = read_f64s(&mut r, n * per).map_err(format_err)?;
    let labels = read_labels(&mut r, n).map_err(format_err)?;
    let features = (0..n)
        .map(|i| {
            FeatureTensor::new(
                t,
                v,
                values[i * per..(i + 1) * per].to_vec(),
                sidecar.channels.clone(),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((features, labels))
}
