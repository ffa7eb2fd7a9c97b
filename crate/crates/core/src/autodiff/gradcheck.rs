use super::{AutodiffError, Bindings, Graph, NodeId, Tensor};

/// Worst entry of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub node: NodeId,
    pub name: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub entries: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Compares reverse-mode gradients of `output` against central differences
/// `(f(p+h) - f(p-h)) / 2h` for every scalar entry of every parameter.
///
/// Each parameter in `params` must already be bound in `bindings`.
pub fn finite_difference_check(
    graph: &Graph,
    bindings: &Bindings<'_>,
    output: NodeId,
    params: &[NodeId],
    h: f64,
    tol: f64,
) -> Result<GradCheckReport, AutodiffError> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(AutodiffError::InvalidStep(h));
    }
    let values = graph.evaluate(bindings)?;
    let grads = graph.backward(&values, output, params)?;

    let mut entries = Vec::with_capacity(params.len());
    for &p in params {
        let base = bindings.get(p).ok_or_else(|| AutodiffError::UnboundInput {
            node: p.index(),
            name: graph.node(p).name().unwrap_or_default().to_string(),
        })?;
        let analytic = grads.get(p).expect("backward returns every parameter");
        let mut probe: Tensor = base.clone();
        let mut worst = ParamCheck {
            node: p,
            name: graph.node(p).name().unwrap_or_default().to_string(),
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            rel_error: 0.0,
        };
        for i in 0..base.numel() {
            let orig = base.data()[i];
            probe.data_mut()[i] = orig + h;
            let plus = eval_with(graph, bindings, p, &probe, output)?;
            probe.data_mut()[i] = orig - h;
            let minus = eval_with(graph, bindings, p, &probe, output)?;
            probe.data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[i];
            let err = relative_error(a, numeric);
            if i == 0 || err > worst.rel_error {
                worst.worst_index = i;
                worst.analytic = a;
                worst.numeric = numeric;
                worst.rel_error = err;
            }
        }
        entries.push(worst);
    }
    Ok(GradCheckReport {
        tolerance: tol,
        entries,
    })
}

fn eval_with(
    graph: &Graph,
    bindings: &Bindings<'_>,
    param: NodeId,
    value: &Tensor,
    output: NodeId,
) -> Result<f64, AutodiffError> {
    let mut local = bindings.clone();
    local.bind(param, value);
    Ok(graph.evaluate(&local)?.get(output).item())
}
