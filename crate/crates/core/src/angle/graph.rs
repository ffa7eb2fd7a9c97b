use crate::autodiff::{AutodiffError, Graph, NodeId};

/// Adds the angle computation to `g`.
///
/// `joints` has shape `[T, V, 3]`; `w1` and `w2` are either `[T, H, 3]`
/// (per frame) or `[H, 3]` (shared). Returns a `[T, V, H]` node matching
/// [`super::angle_feature`] element-wise.
pub fn angle_graph(
    g: &mut Graph,
    joints: NodeId,
    w1: NodeId,
    w2: NodeId,
) -> Result<NodeId, AutodiffError> {
    let js = g.shape(joints).to_vec();
    if js.len() != 3 || js[2] != 3 {
        return Err(AutodiffError::ShapeMismatch {
            context: "angle joints",
            expected: vec![0, 0, 3],
            found: js,
        });
    }
    let (t, v) = (js[0], js[1]);
    let ws = g.shape(w1).to_vec();
    if g.shape(w2) != ws.as_slice() {
        return Err(AutodiffError::ShapeMismatch {
            context: "angle anchor pair",
            expected: ws,
            found: g.shape(w2).to_vec(),
        });
    }
    let (per_frame, h) = match ws.as_slice() {
        [h, 3] => (false, *h),
        [tt, h, 3] if *tt == t => (true, *h),
        _ => {
            return Err(AutodiffError::ShapeMismatch {
                context: "angle anchors",
                expected: vec![t, 0, 3],
                found: ws,
            })
        }
    };
    let out = [t, v, h, 3];
    let n = t * v * h * 3;
    let mut x_idx = Vec::with_capacity(n);
    let mut w_idx = Vec::with_capacity(n);
    for ti in 0..t {
        for vi in 0..v {
            for hi in 0..h {
                for k in 0..3 {
                    x_idx.push((ti * v + vi) * 3 + k);
                    let frame = if per_frame { ti } else { 0 };
                    w_idx.push((frame * h + hi) * 3 + k);
                }
            }
        }
    }
    let xb = g.gather(joints, x_idx, &out)?;
    let w1b = g.gather(w1, w_idx.clone(), &out)?;
    let w2b = g.gather(w2, w_idx, &out)?;
    let a = g.sub(w1b, xb)?;
    let b = g.sub(w2b, xb)?;
    let c = g.sub(w1b, w2b)?;
    let na = g.norm(a)?;
    let nb = g.norm(b)?;
    let nc = g.norm(c)?;
    let num = g.dot(a, b)?;
    let den = g.mul(na, nb)?;
    g.div_guarded(num, den, &[na, nb, nc])
}
