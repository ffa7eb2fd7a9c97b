//! Reader and writer for the NTU RGB+D `.skeleton` text format.
//!
//! ```text
//! <frame count>
//! per frame:  <body count>
//!   per body: <10-field body info line>
//!             <joint count>
//!             <12-field joint line: x y z depthX depthY colorX colorY oW oX oY oZ state>
//! ```

use std::fmt::Write as _;

use super::{SequenceMeta, SkeletonLayout, SkeletonSequence};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NtuError {
    #[error("line {line}: expected an integer {what}, found {found:?}")]
    MalformedHeader {
        line: usize,
        what: &'static str,
        found: String,
    },
    #[error("line {line}: frame ended early (expected {expected})")]
    TruncatedFrame { line: usize, expected: &'static str },
    #[error("line {line}: non-finite coordinate")]
    NonFiniteCoordinate { line: usize },
    #[error("line {line}: malformed joint line")]
    MalformedJoint { line: usize },
    #[error("line {line}: body has {found} joints, layout expects {expected}")]
    JointCountMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("sequence has {frames} frames with a body, fewer than the minimum {min}")]
    TooFewFrames { frames: usize, min: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParseOptions {
    /// Sequences with fewer kept frames are rejected.
    pub min_frames: usize,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self { min_frames: 1 }
    }
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    /// Next non-blank line with its 1-based number.
    fn next(&mut self) -> Option<(usize, &'a str)> {
        for (i, l) in self.inner.by_ref() {
            self.last = i + 1;
            if !l.trim().is_empty() {
                return Some((i + 1, l.trim()));
            }
        }
        None
    }

    fn count(&mut self, what: &'static str) -> Result<(usize, usize), NtuError> {
        let (line, text) = self.next().ok_or(NtuError::TruncatedFrame {
            line: self.last + 1,
            expected: what,
        })?;
        let n = text.parse().map_err(|_| NtuError::MalformedHeader {
            line,
            what,
            found: text.to_string(),
        })?;
        Ok((line, n))
    }
}

pub fn parse_ntu_skeleton(
    text: &str,
    layout: &SkeletonLayout,
) -> Result<SkeletonSequence, NtuError> {
    parse_ntu_skeleton_with(text, layout, ParseOptions::default())
}

/// Parses one sample, keeping body 0 of every frame that has a body and
/// dropping frames without one.
pub fn parse_ntu_skeleton_with(
    text: &str,
    layout: &SkeletonLayout,
    options: ParseOptions,
) -> Result<SkeletonSequence, NtuError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let (_, frame_count) = lines.count("frame count")?;
    let v = layout.len();
    let mut coords = Vec::with_capacity(frame_count * v * 3);
    let mut kept = 0;

    for _ in 0..frame_count {
        let (_, bodies) = lines.count("body count")?;
        for body in 0..bodies {
            let (info_line, info) = lines.next().ok_or(NtuError::TruncatedFrame {
                line: lines.last + 1,
                expected: "body info line",
            })?;
            if info.split_whitespace().count() == 1 {
                return Err(NtuError::TruncatedFrame {
                    line: info_line,
                    expected: "body info line",
                });
            }
            let (count_line, joints) = lines.count("joint count")?;
            if body == 0 && joints != v {
                return Err(NtuError::JointCountMismatch {
                    line: count_line,
                    expected: v,
                    found: joints,
                });
            }
            for _ in 0..joints {
                let (line, text) = lines.next().ok_or(NtuError::TruncatedFrame {
                    line: lines.last + 1,
                    expected: "joint line",
                })?;
                let fields: Vec<&str> = text.split_whitespace().collect();
                // A count or body-info line where a joint should be means
                // the frame stopped short.
                if fields.len() == 1 || fields.len() == 10 {
                    return Err(NtuError::TruncatedFrame {
                        line,
                        expected: "joint line",
                    });
                }
                if fields.len() < 3 {
                    return Err(NtuError::MalformedJoint { line });
                }
                if body != 0 {
                    continue;
                }
                for f in &fields[..3] {
                    let x: f64 = f.parse().map_err(|_| NtuError::MalformedJoint { line })?;
                    if !x.is_finite() {
                        return Err(NtuError::NonFiniteCoordinate { line });
                    }
                    coords.push(x);
                }
            }
        }
        if bodies > 0 {
            kept += 1;
        }
    }

    if kept < options.min_frames.max(1) {
        return Err(NtuError::TooFewFrames {
            frames: kept,
            min: options.min_frames.max(1),
        });
    }
    Ok(SkeletonSequence::new(
        kept,
        v,
        coords,
        None,
        SequenceMeta {
            source: "ntu".into(),
            ..SequenceMeta::default()
        },
    )
    .expect("parser only admits finite coordinates of the declared size"))
}

/// Writes `seq` as a single-body NTU sample. Coordinates use the shortest
/// decimal form that parses back to the same `f64`.
pub fn write_ntu_skeleton(seq: &SkeletonSequence) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", seq.frames());
    for t in 0..seq.frames() {
        out.push_str("1\n");
        out.push_str("72057594037927936 0 1 1 1 1 0 0 0 2\n");
        let _ = writeln!(out, "{}", seq.joints());
        for j in 0..seq.joints() {
            let [x, y, z] = seq.joint(t, j);
            let _ = writeln!(out, "{x:?} {y:?} {z:?} 0 0 0 0 0 0 0 0 2");
        }
    }
    out
}
