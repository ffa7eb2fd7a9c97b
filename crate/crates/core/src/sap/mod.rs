//! Self-attention anchor proposal.
//!
//! For every head and bank: temporal joint means `x̄`, logits
//! `s_i = α Σ_j θ(x̄_i)·φ(x̄_j)` with `θ = wθ x̄` and `φ = wφ x̄`, softmax
//! weights over joints, and an anchor built from the weighted joints. Two
//! banks produce the two anchors of each head's pair.

mod export;
mod graph;

pub use export::{anchor_records, AnchorRecord, FrameRef};
pub use graph::{build_sap_graph, SapNodes};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::angle::{featurize_sequence, AnchorPairSet, AngleError, FeatureTensor, Provenance};
use crate::autodiff::{AutodiffError, Tensor, DEGENERACY_EPS};
use crate::skeleton::SkeletonSequence;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SapError {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("variant V3 needs w_g for bank {bank}, head {head}")]
    VariantParamMissing { bank: usize, head: usize },
    #[error("invalid SAP parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Angle(#[from] AngleError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Where anchors are placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Per frame, a convex combination of that frame's joints.
    V1,
    /// A convex combination of frame-0 joints, reused for every frame.
    V2,
    /// Weighted sum of linearly transformed mean joints, shared by all frames.
    V3,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::V1 => "v1",
            Variant::V2 => "v2",
            Variant::V3 => "v3",
        })
    }
}

impl FromStr for Variant {
    type Err = SapError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "v1" => Ok(Variant::V1),
            "v2" => Ok(Variant::V2),
            "v3" => Ok(Variant::V3),
            _ => Err(SapError::InvalidParams(format!("unknown variant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SapConfig {
    pub heads: usize,
    pub hidden: usize,
    pub alpha: f64,
    pub variant: Variant,
    /// Both banks use one parameter set. Only useful for diagnostics, since
    /// the two anchors of every pair then coincide.
    pub share_banks: bool,
}

impl Default for SapConfig {
    fn default() -> Self {
        Self {
            heads: 5,
            hidden: 8,
            alpha: 1.0,
            variant: Variant::V3,
            share_banks: false,
        }
    }
}

impl SapConfig {
    pub fn validate(&self) -> Result<(), SapError> {
        if self.heads == 0 {
            return Err(SapError::InvalidParams("heads must be at least 1".into()));
        }
        if self.hidden == 0 {
            return Err(SapError::InvalidParams("hidden must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(SapError::InvalidParams(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Number of parameter banks actually stored.
    pub fn stored_banks(&self) -> usize {
        if self.share_banks {
            1
        } else {
            2
        }
    }
}

/// One head of one bank.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// `[d, 3]`
    pub w_theta: Tensor,
    /// `[d, 3]`
    pub w_phi: Tensor,
    /// `[3, 3]`, only for V3.
    pub w_g: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SapParams {
    pub config: SapConfig,
    /// `banks[b][h]`; a single bank when `share_banks` is set.
    pub banks: Vec<Vec<HeadParams>>,
}

const WG_NOISE: f64 = 0.01;

impl SapParams {
    /// `wθ`, `wφ` uniform in `±1/√(3d)`; `w_g` is the identity plus small noise.
    pub fn init<R: Rng>(config: &SapConfig, rng: &mut R) -> Result<Self, SapError> {
        config.validate()?;
        let d = config.hidden;
        let r = 1.0 / (3.0 * d as f64).sqrt();
        let mut uniform =
            |n: usize, r: f64| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-r..=r)).collect() };
        let mut banks = Vec::new();
        for _ in 0..config.stored_banks() {
            let mut heads = Vec::new();
            for _ in 0..config.heads {
                let w_theta = Tensor::from_shape_vec(vec![d, 3], uniform(d * 3, r))?;
                let w_phi = Tensor::from_shape_vec(vec![d, 3], uniform(d * 3, r))?;
                let w_g = (config.variant == Variant::V3).then(|| {
                    let mut g = uniform(9, WG_NOISE);
                    for k in 0..3 {
                        g[k * 4] += 1.0;
                    }
                    Tensor::from_shape_vec(vec![3, 3], g).expect("3x3")
                });
                heads.push(HeadParams {
                    w_theta,
                    w_phi,
                    w_g,
                });
            }
            banks.push(heads);
        }
        Ok(Self {
            config: config.clone(),
            banks,
        })
    }

    /// Parameters of `bank` (0 or 1), `head`.
    pub fn head(&self, bank: usize, head: usize) -> &HeadParams {
        &self.banks[bank.min(self.banks.len() - 1)][head]
    }

    /// Stable parameter names, in the order used by [`build_sap_graph`].
    pub fn names(config: &SapConfig) -> Vec<String> {
        let mut out = Vec::new();
        for b in 0..config.stored_banks() {
            for h in 0..config.heads {
                let p = format!("sap.bank{b}.head{h}");
                out.push(format!("{p}.w_theta"));
                out.push(format!("{p}.w_phi"));
                if config.variant == Variant::V3 {
                    out.push(format!("{p}.w_g"));
                }
            }
        }
        out
    }

    /// `(name, tensor)` for every stored parameter.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let names = Self::names(&self.config);
        let tensors = self.banks.iter().flatten().flat_map(|h| {
            [Some(&h.w_theta), Some(&h.w_phi), h.w_g.as_ref()]
                .into_iter()
                .flatten()
        });
        names.into_iter().zip(tensors).collect()
    }

    /// Rebuilds parameters from named tensors, checking shapes.
    pub fn from_named(
        config: &SapConfig,
        mut lookup: impl FnMut(&str) -> Option<Tensor>,
    ) -> Result<Self, SapError> {
        config.validate()?;
        let d = config.hidden;
        let mut take = |name: String, shape: [usize; 2]| -> Result<Tensor, SapError> {
            let t = lookup(&name)
                .ok_or_else(|| SapError::InvalidParams(format!("missing tensor {name}")))?;
            if t.shape() != shape {
                return Err(SapError::InvalidParams(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            Ok(t)
        };
        let mut banks = Vec::new();
        for b in 0..config.stored_banks() {
            let mut heads = Vec::new();
            for h in 0..config.heads {
                let p = format!("sap.bank{b}.head{h}");
                heads.push(HeadParams {
                    w_theta: take(format!("{p}.w_theta"), [d, 3])?,
                    w_phi: take(format!("{p}.w_phi"), [d, 3])?,
                    w_g: if config.variant == Variant::V3 {
                        Some(take(format!("{p}.w_g"), [3, 3])?)
                    } else {
                        None
                    },
                });
            }
            banks.push(heads);
        }
        Ok(Self {
            config: config.clone(),
            banks,
        })
    }
}

/// Mean position of every joint over time.
pub fn temporal_mean(seq: &SkeletonSequence) -> Vec<[f64; 3]> {
    let mut out = vec![[0.0; 3]; seq.joints()];
    for t in 0..seq.frames() {
        for (v, m) in out.iter_mut().enumerate() {
            let p = seq.joint(t, v);
            for k in 0..3 {
                m[k] += p[k];
            }
        }
    }
    let n = seq.frames() as f64;
    for m in &mut out {
        for c in m.iter_mut() {
            *c /= n;
        }
    }
    out
}

/// `w x` for a row-major `[d, 3]` matrix.
fn project(w: &[f64], x: [f64; 3]) -> Vec<f64> {
    w.chunks_exact(3)
        .map(|r| r[0] * x[0] + r[1] * x[1] + r[2] * x[2])
        .collect()
}

/// `s_i = α Σ_j θ(x̄_i)·φ(x̄_j)`, evaluated as the literal double sum.
pub fn similarity_logits(
    means: &[[f64; 3]],
    w_theta: &[f64],
    w_phi: &[f64],
    alpha: f64,
) -> Result<Vec<f64>, SapError> {
    if w_theta.len() != w_phi.len() || w_theta.len() % 3 != 0 || w_theta.is_empty() {
        return Err(SapError::ShapeMismatch {
            context: "similarity projections",
            expected: w_theta.len(),
            found: w_phi.len(),
        });
    }
    let theta: Vec<Vec<f64>> = means.iter().map(|&m| project(w_theta, m)).collect();
    let phi: Vec<Vec<f64>> = means.iter().map(|&m| project(w_phi, m)).collect();
    Ok(theta
        .iter()
        .map(|ti| {
            let s: f64 = phi
                .iter()
                .map(|pj| ti.iter().zip(pj).map(|(a, b)| a * b).sum::<f64>())
                .sum();
            alpha * s
        })
        .collect())
}

/// Softmax weights over joints. Entries are nonnegative and sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorWeights(Vec<f64>);

impl AnchorWeights {
    /// Accepts nonnegative weights summing to one within `1e-9`.
    pub fn from_vec(weights: Vec<f64>) -> Result<Self, SapError> {
        let sum: f64 = weights.iter().sum();
        if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(SapError::InvalidParams(
                "weights are not on the simplex".into(),
            ));
        }
        Ok(Self(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

pub fn anchor_weights(logits: &[f64]) -> AnchorWeights {
    AnchorWeights(crate::autodiff::softmax_row(logits))
}

fn weighted_sum(weights: &[f64], points: impl Iterator<Item = [f64; 3]>) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (w, p) in weights.iter().zip(points) {
        for k in 0..3 {
            out[k] += w * p[k];
        }
    }
    out
}

/// Anchor positions: one per frame for V1, a single one otherwise.
pub fn propose_anchor(
    seq: &SkeletonSequence,
    means: &[[f64; 3]],
    weights: &AnchorWeights,
    variant: Variant,
    w_g: Option<&[f64]>,
) -> Result<Vec<[f64; 3]>, SapError> {
    let w = weights.as_slice();
    if w.len() != seq.joints() || means.len() != seq.joints() {
        return Err(SapError::ShapeMismatch {
            context: "anchor weights",
            expected: seq.joints(),
            found: w.len(),
        });
    }
    Ok(match variant {
        Variant::V1 => (0..seq.frames())
            .map(|t| weighted_sum(w, (0..seq.joints()).map(|v| seq.joint(t, v))))
            .collect(),
        Variant::V2 => vec![weighted_sum(w, (0..seq.joints()).map(|v| seq.joint(0, v)))],
        Variant::V3 => {
            let g = w_g.ok_or(SapError::VariantParamMissing { bank: 0, head: 0 })?;
            if g.len() != 9 {
                return Err(SapError::ShapeMismatch {
                    context: "w_g",
                    expected: 9,
                    found: g.len(),
                });
            }
            let moved = means.iter().map(|&m| {
                let p = project(g, m);
                [p[0], p[1], p[2]]
            });
            vec![weighted_sum(w, moved)]
        }
    })
}

/// Anchor pairs for every head: bank 0 gives the first anchor, bank 1 the
/// second. Logs a warning when a pair coincides.
pub fn propose_anchor_pairs(
    seq: &SkeletonSequence,
    params: &SapParams,
) -> Result<AnchorPairSet, SapError> {
    let cfg = &params.config;
    cfg.validate()?;
    let means = temporal_mean(seq);
    let h = cfg.heads;
    let mut per_head = Vec::with_capacity(h);
    for head in 0..h {
        let mut pair = Vec::with_capacity(2);
        for bank in 0..2 {
            let p = params.head(bank, head);
            let logits = similarity_logits(&means, p.w_theta.data(), p.w_phi.data(), cfg.alpha)?;
            let w = anchor_weights(&logits);
            let anchors = propose_anchor(
                seq,
                &means,
                &w,
                cfg.variant,
                p.w_g.as_ref().map(|g| g.data()),
            )
            .map_err(|e| match e {
                SapError::VariantParamMissing { .. } => {
                    SapError::VariantParamMissing { bank, head }
                }
                other => other,
            })?;
            pair.push(anchors);
        }
        per_head.push(pair);
    }
    let frames = per_head[0][0].len();
    let mut coords = Vec::with_capacity(frames * h * 6);
    for t in 0..frames {
        for pair in &per_head {
            coords.extend_from_slice(&pair[0][t]);
            coords.extend_from_slice(&pair[1][t]);
        }
    }
    let set = if cfg.variant == Variant::V1 {
        AnchorPairSet::per_frame(frames, h, coords, Provenance::SapProposed)?
    } else {
        AnchorPairSet::shared(h, coords, Provenance::SapProposed)?
    };
    let coincident = coincident_pairs(&set);
    if coincident > 0 {
        log::warn!("{coincident} anchor pairs coincide; their angle features are all zero");
    }
    Ok(set)
}

/// Number of (frame, head) pairs whose two anchors are closer than the
/// degeneracy threshold.
pub fn coincident_pairs(set: &AnchorPairSet) -> usize {
    set.coords()
        .chunks_exact(6)
        .filter(|c| {
            let d2: f64 = (0..3).map(|k| (c[k] - c[k + 3]).powi(2)).sum();
            d2.sqrt() < DEGENERACY_EPS
        })
        .count()
}

/// Proposes anchors and returns the `T × V × H` angle features.
pub fn sap_forward(seq: &SkeletonSequence, params: &SapParams) -> Result<FeatureTensor, SapError> {
    let anchors = propose_anchor_pairs(seq, params)?;
    Ok(featurize_sequence(seq, &anchors)?)
}
