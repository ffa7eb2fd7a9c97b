use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::angle::{AnchorPairSet, Provenance};

/// A frame index, or `"shared"` for anchors used by every frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameRef {
    Index(usize),
    Shared,
}

impl Serialize for FrameRef {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            FrameRef::Index(i) => s.serialize_u64(*i as u64),
            FrameRef::Shared => s.serialize_str("shared"),
        }
    }
}

impl<'de> Deserialize<'de> for FrameRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(s) if s == "shared" => Ok(FrameRef::Shared),
            serde_json::Value::Number(n) => n
                .as_u64()
                .map(|i| FrameRef::Index(i as usize))
                .ok_or_else(|| serde::de::Error::custom("frame must be a nonnegative integer")),
            other => Err(serde::de::Error::custom(format!(
                "frame must be an integer or \"shared\", got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorRecord {
    pub head: usize,
    pub bank: usize,
    pub frame: FrameRef,
    pub xyz: [f64; 3],
    pub provenance: Provenance,
}

/// Flattens a pair set into one record per anchor, frame-major.
pub fn anchor_records(set: &AnchorPairSet) -> Vec<AnchorRecord> {
    let frames = set.frames().unwrap_or(1);
    let mut out = Vec::with_capacity(frames * set.heads() * 2);
    for t in 0..frames {
        for head in 0..set.heads() {
            let (a, b) = set.pair(t, head);
            for (bank, xyz) in [(0, a), (1, b)] {
                out.push(AnchorRecord {
                    head,
                    bank,
                    frame: if set.is_shared() {
                        FrameRef::Shared
                    } else {
                        FrameRef::Index(t)
                    },
                    xyz,
                    provenance: set.provenance,
                });
            }
        }
    }
    out
}
