use super::{SapConfig, SapError, SapParams, Variant};
use crate::angle::angle_graph;
use crate::autodiff::{Bindings, Graph, NodeId};

/// Nodes created by [`build_sap_graph`].
#[derive(Debug, Clone)]
pub struct SapNodes {
    /// Parameter nodes, in [`SapParams::names`] order.
    pub params: Vec<(String, NodeId)>,
    /// Joint weights per head, `[bank 0, bank 1]`, each `[V]`.
    pub weights: Vec<[NodeId; 2]>,
    /// First and second anchors, `[T, H, 3]` for V1 and `[H, 3]` otherwise.
    pub w1: NodeId,
    pub w2: NodeId,
    /// `[T, V, H]` angle features.
    pub angles: NodeId,
}

impl SapNodes {
    /// Binds every parameter node to the matching tensor of `params`.
    pub fn bind<'a>(&self, params: &'a SapParams, bindings: &mut Bindings<'a>) {
        for ((name, id), (pname, tensor)) in self.params.iter().zip(params.named()) {
            debug_assert_eq!(name, &pname);
            bindings.bind(*id, tensor);
        }
    }
}

/// Adds anchor proposal and angle features for a `[T, V, 3]` joints node.
pub fn build_sap_graph(
    g: &mut Graph,
    joints: NodeId,
    config: &SapConfig,
) -> Result<SapNodes, SapError> {
    config.validate()?;
    let shape = g.shape(joints).to_vec();
    let (t, v) = match shape.as_slice() {
        [t, v, 3] => (*t, *v),
        _ => {
            return Err(SapError::ShapeMismatch {
                context: "SAP joints rank",
                expected: 3,
                found: shape.len(),
            })
        }
    };
    let d = config.hidden;
    let means = g.mean_axis(joints, 0)?;
    let bodies = match config.variant {
        // [V, T*3]: column t*3+k holds coordinate k of every joint at frame t
        Variant::V1 => {
            let mut idx = Vec::with_capacity(v * t * 3);
            for vi in 0..v {
                for ti in 0..t {
                    for k in 0..3 {
                        idx.push((ti * v + vi) * 3 + k);
                    }
                }
            }
            Some(g.gather(joints, idx, &[v, t * 3])?)
        }
        Variant::V2 => Some(g.gather(joints, (0..v * 3).collect(), &[v, 3])?),
        Variant::V3 => None,
    };

    let names = SapParams::names(config);
    let mut names = names.into_iter();
    let mut params = Vec::new();
    let mut anchors: Vec<Vec<NodeId>> = Vec::new();
    let mut weights: Vec<Vec<NodeId>> = Vec::new();
    for _ in 0..config.stored_banks() {
        let mut bank_anchors = Vec::new();
        let mut bank_weights = Vec::new();
        for _ in 0..config.heads {
            let mut param = |g: &mut Graph, shape: &[usize]| {
                let name = names.next().expect("names cover every parameter");
                let id = g.parameter(name.clone(), shape);
                params.push((name, id));
                id
            };
            let w_theta = param(g, &[d, 3]);
            let w_phi = param(g, &[d, 3]);
            let w_g = (config.variant == Variant::V3).then(|| param(g, &[3, 3]));

            let theta = g.matmul_t(means, w_theta, false, true)?;
            let phi = g.matmul_t(means, w_phi, false, true)?;
            let pairwise = g.matmul_t(theta, phi, false, true)?;
            let logits = g.sum_axis(pairwise, 1)?;
            let logits = g.scale(logits, config.alpha)?;
            let w = g.softmax(logits)?;
            let row = g.reshape(w, &[1, v])?;
            let anchor = match config.variant {
                Variant::V1 => {
                    let a = g.matmul(row, bodies.expect("V1 body view"))?;
                    g.reshape(a, &[t, 1, 3])?
                }
                Variant::V2 => g.matmul(row, bodies.expect("V2 body view"))?,
                Variant::V3 => {
                    let moved = g.matmul_t(means, w_g.expect("V3 w_g"), false, true)?;
                    g.matmul(row, moved)?
                }
            };
            bank_anchors.push(anchor);
            bank_weights.push(w);
        }
        anchors.push(bank_anchors);
        weights.push(bank_weights);
    }
    let last = anchors.len() - 1;
    let axis = if config.variant == Variant::V1 { 1 } else { 0 };
    let w1 = g.concat(&anchors[0], axis)?;
    let w2 = if last == 0 {
        w1
    } else {
        g.concat(&anchors[last], axis)?
    };
    let angles = angle_graph(g, joints, w1, w2)?;
    Ok(SapNodes {
        params,
        weights: (0..config.heads)
            .map(|h| [weights[0][h], weights[last][h]])
            .collect(),
        w1,
        w2,
        angles,
    })
}
