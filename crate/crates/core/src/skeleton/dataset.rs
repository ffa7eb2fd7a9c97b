//! Binary dataset container.
//!
//! One ASCII header line `SAPDS v1 T V N`, then `N·T·V·3` little-endian
//! `f64` coordinates (sample, frame, joint, x/y/z), then `N` little-endian
//! `i32` labels (`-1` for unlabeled samples).

use std::io::{BufRead, Read, Write};

use super::{SequenceMeta, SkeletonError, SkeletonSequence};

pub const DATASET_MAGIC: &str = "SAPDS";

pub fn write_dataset<W: Write>(mut w: W, seqs: &[SkeletonSequence]) -> Result<(), SkeletonError> {
    let (t, v) = seqs.first().map_or((0, 0), |s| (s.frames(), s.joints()));
    if seqs.iter().any(|s| s.frames() != t || s.joints() != v) {
        return Err(SkeletonError::Format(
            "all samples in a dataset file must share T and V".into(),
        ));
    }
    writeln!(w, "{DATASET_MAGIC} v1 {t} {v} {}", seqs.len())?;
    let mut buf = Vec::with_capacity(seqs.len() * t * v * 24);
    for s in seqs {
        for x in s.coords() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    for s in seqs {
        let label = s.label.map_or(-1, |l| l as i32);
        buf.extend_from_slice(&label.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads and validates the header line; returns the numeric fields after the
/// version tag.
pub(crate) fn read_header<R: BufRead>(
    r: &mut R,
    magic: &str,
    fields: usize,
) -> Result<Vec<usize>, SkeletonError> {
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    let line =
        String::from_utf8(line).map_err(|_| SkeletonError::Format("header is not ASCII".into()))?;
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != fields + 2 || parts[0] != magic {
        return Err(SkeletonError::Format(format!(
            "bad header {:?}",
            line.trim()
        )));
    }
    if parts[1] != "v1" {
        return Err(SkeletonError::Format(format!(
            "unsupported version {}",
            parts[1]
        )));
    }
    parts[2..]
        .iter()
        .map(|p| {
            p.parse()
                .map_err(|_| SkeletonError::Format(format!("bad header field {p:?}")))
        })
        .collect()
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>, SkeletonError> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| SkeletonError::Format("file ends before all coordinates".into()))?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub(crate) fn read_labels<R: Read>(r: &mut R, n: usize) -> Result<Vec<Option<u32>>, SkeletonError> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| SkeletonError::Format("file ends before all labels".into()))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| {
            let l = i32::from_le_bytes(c.try_into().unwrap());
            (l >= 0).then_some(l as u32)
        })
        .collect())
}

pub fn read_dataset<R: BufRead>(mut r: R) -> Result<Vec<SkeletonSequence>, SkeletonError> {
    let dims = read_header(&mut r, DATASET_MAGIC, 3)?;
    let (t, v, n) = (dims[0], dims[1], dims[2]);
    let per = t * v * 3;
    let coords = read_f64s(&mut r, n * per)?;
    let labels = read_labels(&mut r, n)?;
    coords
        .chunks_exact(per.max(1))
        .take(n)
        .zip(labels)
        .enumerate()
        .map(|(i, (c, label))| {
            SkeletonSequence::new(
                t,
                v,
                c.to_vec(),
                label,
                SequenceMeta {
                    source: "sapds".into(),
                    subject: i.to_string(),
                    camera: String::new(),
                },
            )
        })
        .collect()
}
