use std::collections::HashMap;

use super::tensor::{gemm, split_axis, MatView};
use super::{AutodiffError, Tensor, DEGENERACY_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive tag of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    Constant,
    Input,
    Parameter,
    Add,
    Sub,
    Mul,
    MatMul,
    Exp,
    Log,
    SumAxis,
    MeanAxis,
    Div,
    Dot,
    Norm,
    Concat,
    Relu,
    Softmax,
    SoftmaxCrossEntropy,
    Scale,
    Gather,
    Reshape,
}

#[derive(Debug, Clone)]
enum Op {
    Constant(Tensor),
    Input(String),
    Parameter(String),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MatMul {
        a: NodeId,
        b: NodeId,
        trans_a: bool,
        trans_b: bool,
    },
    Exp(NodeId),
    Log(NodeId),
    SumAxis(NodeId, usize),
    MeanAxis(NodeId, usize),
    Div {
        num: NodeId,
        den: NodeId,
        gates: Vec<NodeId>,
    },
    Dot(NodeId, NodeId),
    Norm(NodeId),
    Concat(Vec<NodeId>, usize),
    Relu(NodeId),
    Softmax(NodeId),
    SoftmaxCrossEntropy {
        logits: NodeId,
        target: NodeId,
    },
    Scale(NodeId, f64),
    Gather(NodeId, Vec<usize>),
    Reshape(NodeId),
}

#[derive(Debug, Clone)]
pub struct Node {
    op: Op,
    shape: Vec<usize>,
    requires_grad: bool,
}

impl Node {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn primitive(&self) -> Primitive {
        match &self.op {
            Op::Constant(_) => Primitive::Constant,
            Op::Input(_) => Primitive::Input,
            Op::Parameter(_) => Primitive::Parameter,
            Op::Add(..) => Primitive::Add,
            Op::Sub(..) => Primitive::Sub,
            Op::Mul(..) => Primitive::Mul,
            Op::MatMul { .. } => Primitive::MatMul,
            Op::Exp(_) => Primitive::Exp,
            Op::Log(_) => Primitive::Log,
            Op::SumAxis(..) => Primitive::SumAxis,
            Op::MeanAxis(..) => Primitive::MeanAxis,
            Op::Div { .. } => Primitive::Div,
            Op::Dot(..) => Primitive::Dot,
            Op::Norm(_) => Primitive::Norm,
            Op::Concat(..) => Primitive::Concat,
            Op::Relu(_) => Primitive::Relu,
            Op::Softmax(_) => Primitive::Softmax,
            Op::SoftmaxCrossEntropy { .. } => Primitive::SoftmaxCrossEntropy,
            Op::Scale(..) => Primitive::Scale,
            Op::Gather(..) => Primitive::Gather,
            Op::Reshape(_) => Primitive::Reshape,
        }
    }

    /// Name of an input or parameter node.
    pub fn name(&self) -> Option<&str> {
        match &self.op {
            Op::Input(n) | Op::Parameter(n) => Some(n),
            _ => None,
        }
    }

    pub fn parents(&self) -> Vec<NodeId> {
        op_parents(&self.op)
    }
}

fn op_parents(op: &Op) -> Vec<NodeId> {
    match op {
        Op::Constant(_) | Op::Input(_) | Op::Parameter(_) => vec![],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Dot(a, b) => vec![*a, *b],
        Op::MatMul { a, b, .. } => vec![*a, *b],
        Op::Exp(x)
        | Op::Log(x)
        | Op::SumAxis(x, _)
        | Op::MeanAxis(x, _)
        | Op::Norm(x)
        | Op::Relu(x)
        | Op::Softmax(x)
        | Op::Scale(x, _)
        | Op::Gather(x, _)
        | Op::Reshape(x) => vec![*x],
        Op::Div { num, den, gates } => {
            let mut p = vec![*num, *den];
            p.extend(gates);
            p
        }
        Op::Concat(parts, _) => parts.clone(),
        Op::SoftmaxCrossEntropy { logits, target } => vec![*logits, *target],
    }
}

/// Values bound to input and parameter nodes for one evaluation.
#[derive(Debug, Clone, Default)]
pub struct Bindings<'a> {
    map: HashMap<NodeId, &'a Tensor>,
}

impl<'a> Bindings<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, node: NodeId, value: &'a Tensor) -> &mut Self {
        self.map.insert(node, value);
        self
    }

    pub fn get(&self, node: NodeId) -> Option<&'a Tensor> {
        self.map.get(&node).copied()
    }
}

/// Forward values of every node, indexed by [`NodeId`].
#[derive(Debug, Clone)]
pub struct Values {
    values: Vec<Tensor>,
}

impl Values {
    pub fn get(&self, node: NodeId) -> &Tensor {
        &self.values[node.0]
    }

    pub fn scalar(&self, node: NodeId) -> f64 {
        self.values[node.0].item()
    }
}

/// Gradients of a scalar output with respect to parameter nodes.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    map: HashMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, node: NodeId) -> Option<&Tensor> {
        self.map.get(&node)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn into_map(self) -> HashMap<NodeId, Tensor> {
        self.map
    }
}

/// Static computation graph. Nodes are appended in topological order, so a
/// node's parents always carry smaller ids.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn mismatch(context: &'static str, expected: &[usize], found: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        context,
        expected: expected.to_vec(),
        found: found.to_vec(),
    }
}

fn last_axis_rows(shape: &[usize]) -> (usize, usize) {
    let n = *shape.last().unwrap_or(&1);
    let rows = if n == 0 {
        0
    } else {
        shape.iter().product::<usize>() / n
    };
    (rows, n)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        let requires_grad = match &op {
            Op::Parameter(_) => true,
            Op::Constant(_) | Op::Input(_) => false,
            Op::Div { num, den, .. } => {
                self.nodes[num.0].requires_grad || self.nodes[den.0].requires_grad
            }
            Op::SoftmaxCrossEntropy { logits, .. } => self.nodes[logits.0].requires_grad,
            other => op_parents(other)
                .iter()
                .any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            op,
            shape,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> Result<&[usize], AutodiffError> {
        self.nodes
            .get(id.0)
            .map(|n| n.shape.as_slice())
            .ok_or(AutodiffError::UnknownNode { node: id.0 })
    }

    fn same_shape(
        &self,
        context: &'static str,
        a: NodeId,
        b: NodeId,
    ) -> Result<Vec<usize>, AutodiffError> {
        let sa = self.check(a)?;
        let sb = self.check(b)?;
        if sa != sb {
            return Err(mismatch(context, sa, sb));
        }
        Ok(sa.to_vec())
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Constant(value), shape)
    }

    /// A non-differentiable slot bound at evaluation time.
    pub fn input(&mut self, name: impl Into<String>, shape: &[usize]) -> NodeId {
        self.push(Op::Input(name.into()), shape.to_vec())
    }

    pub fn parameter(&mut self, name: impl Into<String>, shape: &[usize]) -> NodeId {
        self.push(Op::Parameter(name.into()), shape.to_vec())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let shape = self.same_shape("add", a, b)?;
        Ok(self.push(Op::Add(a, b), shape))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let shape = self.same_shape("sub", a, b)?;
        Ok(self.push(Op::Sub(a, b), shape))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let shape = self.same_shape("mul", a, b)?;
        Ok(self.push(Op::Mul(a, b), shape))
    }

    /// Matrix product of two rank-2 nodes, each optionally transposed.
    pub fn matmul_t(
        &mut self,
        a: NodeId,
        b: NodeId,
        trans_a: bool,
        trans_b: bool,
    ) -> Result<NodeId, AutodiffError> {
        let sa = self.check(a)?.to_vec();
        let sb = self.check(b)?.to_vec();
        if sa.len() != 2 || sb.len() != 2 {
            return Err(mismatch("matmul rank", &[2, 2], &[sa.len(), sb.len()]));
        }
        let (m, ka) = if trans_a {
            (sa[1], sa[0])
        } else {
            (sa[0], sa[1])
        };
        let (kb, n) = if trans_b {
            (sb[1], sb[0])
        } else {
            (sb[0], sb[1])
        };
        if ka != kb {
            return Err(mismatch("matmul inner", &[ka], &[kb]));
        }
        Ok(self.push(
            Op::MatMul {
                a,
                b,
                trans_a,
                trans_b,
            },
            vec![m, n],
        ))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.matmul_t(a, b, false, false)
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let shape = self.check(x)?.to_vec();
        Ok(self.push(Op::Exp(x), shape))
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let shape = self.check(x)?.to_vec();
        Ok(self.push(Op::Log(x), shape))
    }

    fn reduced_shape(&self, x: NodeId, axis: usize) -> Result<Vec<usize>, AutodiffError> {
        let shape = self.check(x)?;
        if axis >= shape.len() {
            return Err(AutodiffError::InvalidAxis {
                axis,
                rank: shape.len(),
            });
        }
        let mut out = shape.to_vec();
        out.remove(axis);
        Ok(out)
    }

    pub fn sum_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId, AutodiffError> {
        let shape = self.reduced_shape(x, axis)?;
        Ok(self.push(Op::SumAxis(x, axis), shape))
    }

    pub fn mean_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId, AutodiffError> {
        if self.check(x)?.get(axis) == Some(&0) {
            return Err(AutodiffError::InvalidAxis { axis, rank: 0 });
        }
        let shape = self.reduced_shape(x, axis)?;
        Ok(self.push(Op::MeanAxis(x, axis), shape))
    }

    /// Element-wise division.
    pub fn div(&mut self, num: NodeId, den: NodeId) -> Result<NodeId, AutodiffError> {
        self.div_guarded(num, den, &[])
    }

    /// Element-wise division that yields exactly zero, with zero gradient,
    /// wherever any gate value is below [`DEGENERACY_EPS`]. Gates receive no
    /// gradient.
    pub fn div_guarded(
        &mut self,
        num: NodeId,
        den: NodeId,
        gates: &[NodeId],
    ) -> Result<NodeId, AutodiffError> {
        let shape = self.same_shape("div", num, den)?;
        for &g in gates {
            self.same_shape("div gate", num, g)?;
        }
        Ok(self.push(
            Op::Div {
                num,
                den,
                gates: gates.to_vec(),
            },
            shape,
        ))
    }

    /// Inner product along the last axis.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let mut shape = self.same_shape("dot", a, b)?;
        if shape.pop().is_none() {
            return Err(AutodiffError::InvalidAxis { axis: 0, rank: 0 });
        }
        Ok(self.push(Op::Dot(a, b), shape))
    }

    /// Euclidean norm along the last axis.
    pub fn norm(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let mut shape = self.check(x)?.to_vec();
        if shape.pop().is_none() {
            return Err(AutodiffError::InvalidAxis { axis: 0, rank: 0 });
        }
        Ok(self.push(Op::Norm(x), shape))
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId, AutodiffError> {
        let first = parts
            .first()
            .ok_or(AutodiffError::InvalidAxis { axis, rank: 0 })?;
        let mut shape = self.check(*first)?.to_vec();
        if axis >= shape.len() {
            return Err(AutodiffError::InvalidAxis {
                axis,
                rank: shape.len(),
            });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.check(p)?;
            let compatible = s.len() == shape.len()
                && s.iter()
                    .zip(&shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(mismatch("concat", &shape, s));
            }
            total += s[axis];
        }
        shape[axis] = total;
        Ok(self.push(Op::Concat(parts.to_vec(), axis), shape))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let shape = self.check(x)?.to_vec();
        Ok(self.push(Op::Relu(x), shape))
    }

    /// Softmax along the last axis, evaluated with max subtraction.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let shape = self.check(x)?.to_vec();
        if shape.is_empty() {
            return Err(AutodiffError::InvalidAxis { axis: 0, rank: 0 });
        }
        Ok(self.push(Op::Softmax(x), shape))
    }

    /// `-Σ target · log_softmax(logits)` for rank-1 logits; scalar output.
    /// The target receives no gradient.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        target: NodeId,
    ) -> Result<NodeId, AutodiffError> {
        let shape = self.same_shape("softmax cross-entropy", logits, target)?;
        if shape.len() != 1 {
            return Err(mismatch("softmax cross-entropy rank", &[0], &shape));
        }
        Ok(self.push(Op::SoftmaxCrossEntropy { logits, target }, vec![]))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId, AutodiffError> {
        let shape = self.check(x)?.to_vec();
        Ok(self.push(Op::Scale(x, factor), shape))
    }

    /// `out.flat[i] = x.flat[indices[i]]`, reshaped to `shape`. Covers
    /// selection, broadcasting and permutation.
    pub fn gather(
        &mut self,
        x: NodeId,
        indices: Vec<usize>,
        shape: &[usize],
    ) -> Result<NodeId, AutodiffError> {
        let n: usize = self.check(x)?.iter().product();
        if shape.iter().product::<usize>() != indices.len() {
            return Err(mismatch("gather", shape, &[indices.len()]));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(AutodiffError::IndexOutOfRange { index: bad, len: n });
        }
        Ok(self.push(Op::Gather(x, indices), shape.to_vec()))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, AutodiffError> {
        let s = self.check(x)?;
        if s.iter().product::<usize>() != shape.iter().product::<usize>() {
            return Err(mismatch("reshape", shape, s));
        }
        Ok(self.push(Op::Reshape(x), shape.to_vec()))
    }

    /// Computes every node's forward value in topological order.
    pub fn evaluate(&self, bindings: &Bindings<'_>) -> Result<Values, AutodiffError> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let v = self.forward_node(i, node, &values, bindings)?;
            if v.shape() != node.shape.as_slice() {
                return Err(mismatch("evaluate", &node.shape, v.shape()));
            }
            if !v.is_finite() {
                return Err(AutodiffError::NonFiniteIntermediate {
                    node: i,
                    primitive: node.primitive(),
                });
            }
            values.push(v);
        }
        Ok(Values { values })
    }

    fn forward_node(
        &self,
        index: usize,
        node: &Node,
        values: &[Tensor],
        bindings: &Bindings<'_>,
    ) -> Result<Tensor, AutodiffError> {
        let val = |id: NodeId| &values[id.0];
        let shape = node.shape.clone();
        let map1 = |x: NodeId, f: &dyn Fn(f64) -> f64| {
            let data = val(x).data().iter().map(|&v| f(v)).collect();
            Tensor::from_shape_vec(shape.clone(), data)
        };
        let zip2 = |a: NodeId, b: NodeId, f: &dyn Fn(f64, f64) -> f64| {
            let data = val(a)
                .data()
                .iter()
                .zip(val(b).data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            Tensor::from_shape_vec(shape.clone(), data)
        };
        match &node.op {
            Op::Constant(t) => Ok(t.clone()),
            Op::Input(name) | Op::Parameter(name) => {
                let id = NodeId(index);
                let bound = bindings
                    .get(id)
                    .ok_or_else(|| AutodiffError::UnboundInput {
                        node: index,
                        name: name.clone(),
                    })?;
                if bound.shape() != node.shape.as_slice() {
                    return Err(mismatch("binding", &node.shape, bound.shape()));
                }
                Ok(bound.clone())
            }
            Op::Add(a, b) => zip2(*a, *b, &|x, y| x + y),
            Op::Sub(a, b) => zip2(*a, *b, &|x, y| x - y),
            Op::Mul(a, b) => zip2(*a, *b, &|x, y| x * y),
            Op::MatMul {
                a,
                b,
                trans_a,
                trans_b,
            } => {
                let (sa, sb) = (val(*a).shape(), val(*b).shape());
                let va = MatView::row_major(val(*a).data(), sa[0], sa[1]).transposed_if(*trans_a);
                let vb = MatView::row_major(val(*b).data(), sb[0], sb[1]).transposed_if(*trans_b);
                let mut out = Tensor::zeros(&shape);
                gemm(va, vb, out.data_mut(), 0.0);
                Ok(out)
            }
            Op::Exp(x) => map1(*x, &f64::exp),
            Op::Log(x) => map1(*x, &f64::ln),
            Op::SumAxis(x, axis) | Op::MeanAxis(x, axis) => {
                let input = val(*x);
                let (outer, n, inner) = split_axis(input.shape(), *axis);
                let mut out = vec![0.0; outer * inner];
                let src = input.data();
                for o in 0..outer {
                    for k in 0..n {
                        let base = (o * n + k) * inner;
                        for i in 0..inner {
                            out[o * inner + i] += src[base + i];
                        }
                    }
                }
                if matches!(node.op, Op::MeanAxis(..)) {
                    let inv = 1.0 / n as f64;
                    out.iter_mut().for_each(|v| *v *= inv);
                }
                Tensor::from_shape_vec(shape, out)
            }
            Op::Div { num, den, gates } => {
                let n = val(*num).data();
                let d = val(*den).data();
                let data = (0..n.len())
                    .map(|i| {
                        if gates.iter().any(|g| val(*g).data()[i] < DEGENERACY_EPS) {
                            0.0
                        } else {
                            n[i] / d[i]
                        }
                    })
                    .collect();
                Tensor::from_shape_vec(shape, data)
            }
            Op::Dot(a, b) => {
                let (rows, n) = last_axis_rows(val(*a).shape());
                let (da, db) = (val(*a).data(), val(*b).data());
                let data = (0..rows)
                    .map(|r| {
                        da[r * n..(r + 1) * n]
                            .iter()
                            .zip(&db[r * n..(r + 1) * n])
                            .map(|(x, y)| x * y)
                            .sum()
                    })
                    .collect();
                Tensor::from_shape_vec(shape, data)
            }
            Op::Norm(x) => {
                let (rows, n) = last_axis_rows(val(*x).shape());
                let d = val(*x).data();
                let data = (0..rows)
                    .map(|r| {
                        d[r * n..(r + 1) * n]
                            .iter()
                            .map(|v| v * v)
                            .sum::<f64>()
                            .sqrt()
                    })
                    .collect();
                Tensor::from_shape_vec(shape, data)
            }
            Op::Concat(parts, axis) => {
                let (outer, _, inner) = split_axis(&shape, *axis);
                let mut out = Vec::with_capacity(shape.iter().product());
                for o in 0..outer {
                    for p in parts {
                        let t = val(*p);
                        let chunk = t.shape()[*axis] * inner;
                        out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
                    }
                }
                Tensor::from_shape_vec(shape, out)
            }
            Op::Relu(x) => map1(*x, &|v| v.max(0.0)),
            Op::Softmax(x) => {
                let (rows, n) = last_axis_rows(val(*x).shape());
                let d = val(*x).data();
                let mut out = Vec::with_capacity(d.len());
                for r in 0..rows {
                    out.extend(softmax_row(&d[r * n..(r + 1) * n]));
                }
                Tensor::from_shape_vec(shape, out)
            }
            Op::SoftmaxCrossEntropy { logits, target } => {
                let z = val(*logits).data();
                let t = val(*target).data();
                let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                let loss = z.iter().zip(t).map(|(zi, ti)| ti * (lse - zi)).sum();
                Ok(Tensor::scalar(loss))
            }
            Op::Scale(x, f) => {
                let f = *f;
                map1(*x, &move |v| v * f)
            }
            Op::Gather(x, idx) => {
                let d = val(*x).data();
                Tensor::from_shape_vec(shape, idx.iter().map(|&i| d[i]).collect())
            }
            Op::Reshape(x) => val(*x).clone().reshaped(&shape),
        }
    }

    /// Reverse-mode gradients of the scalar `output` with respect to `params`.
    /// Parameters the output does not depend on get zero tensors.
    pub fn backward(
        &self,
        values: &Values,
        output: NodeId,
        params: &[NodeId],
    ) -> Result<Gradients, AutodiffError> {
        let out_node = self
            .nodes
            .get(output.0)
            .ok_or(AutodiffError::UnknownNode { node: output.0 })?;
        if out_node.shape.iter().product::<usize>() != 1 {
            return Err(AutodiffError::NonScalarOutput {
                shape: out_node.shape.clone(),
            });
        }
        for p in params {
            match self.nodes.get(p.0) {
                Some(n) if n.primitive() == Primitive::Parameter => {}
                _ => return Err(AutodiffError::NotAParameter { node: p.0 }),
            }
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::filled(&out_node.shape, 1.0));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if node.primitive() == Primitive::Parameter {
                grads[i] = Some(g);
                continue;
            }
            self.backward_node(i, node, &g, values, &mut grads);
        }

        let mut map = HashMap::new();
        for &p in params {
            let g = grads
                .get_mut(p.0)
                .and_then(Option::take)
                .unwrap_or_else(|| Tensor::zeros(&self.nodes[p.0].shape));
            map.entry(p).or_insert(g);
        }
        Ok(Gradients { map })
    }

    fn backward_node(
        &self,
        index: usize,
        node: &Node,
        g: &Tensor,
        values: &Values,
        grads: &mut [Option<Tensor>],
    ) {
        let val = |id: NodeId| values.get(id);
        let needs = |id: NodeId| self.nodes[id.0].requires_grad;
        let gd = g.data();

        // Accumulates `f(i)` into the gradient buffer of `id`.
        fn accumulate(
            grads: &mut [Option<Tensor>],
            id: NodeId,
            shape: &[usize],
            f: impl Fn(&mut [f64]),
        ) {
            let buf = grads[id.0].get_or_insert_with(|| Tensor::zeros(shape));
            f(buf.data_mut());
        }
        let shape_of = |id: NodeId| self.nodes[id.0].shape.clone();

        match &node.op {
            Op::Constant(_) | Op::Input(_) | Op::Parameter(_) => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                if needs(*a) {
                    accumulate(grads, *a, &shape_of(*a), |buf| {
                        buf.iter_mut().zip(gd).for_each(|(o, g)| *o += g)
                    });
                }
                if needs(*b) {
                    accumulate(grads, *b, &shape_of(*b), |buf| {
                        buf.iter_mut().zip(gd).for_each(|(o, g)| *o += sign * g)
                    });
                }
            }
            Op::Mul(a, b) => {
                let (da, db) = (val(*a).data(), val(*b).data());
                if needs(*a) {
                    accumulate(grads, *a, &shape_of(*a), |buf| {
                        for i in 0..buf.len() {
                            buf[i] += gd[i] * db[i];
                        }
                    });
                }
                if needs(*b) {
                    accumulate(grads, *b, &shape_of(*b), |buf| {
                        for i in 0..buf.len() {
                            buf[i] += gd[i] * da[i];
                        }
                    });
                }
            }
            Op::MatMul {
                a,
                b,
                trans_a,
                trans_b,
            } => {
                let (sa, sb) = (shape_of(*a), shape_of(*b));
                let (m, n) = (node.shape[0], node.shape[1]);
                let gv = MatView::row_major(gd, m, n);
                let va = MatView::row_major(val(*a).data(), sa[0], sa[1]);
                let vb = MatView::row_major(val(*b).data(), sb[0], sb[1]);
                if needs(*a) {
                    // dA = dC · op(B)ᵀ, or its transpose when A enters transposed.
                    accumulate(grads, *a, &sa, |buf| {
                        if *trans_a {
                            gemm(vb.transposed_if(*trans_b), gv.t(), buf, 1.0);
                        } else {
                            gemm(gv, vb.transposed_if(*trans_b).t(), buf, 1.0);
                        }
                    });
                }
                if needs(*b) {
                    accumulate(grads, *b, &sb, |buf| {
                        if *trans_b {
                            gemm(gv.t(), va.transposed_if(*trans_a), buf, 1.0);
                        } else {
                            gemm(va.transposed_if(*trans_a).t(), gv, buf, 1.0);
                        }
                    });
                }
            }
            Op::Exp(x) => {
                let y = values.get(NodeId(index)).data();
                accumulate(grads, *x, &shape_of(*x), |buf| {
                    for i in 0..buf.len() {
                        buf[i] += gd[i] * y[i];
                    }
                });
            }
            Op::Log(x) => {
                let xv = val(*x).data();
                accumulate(grads, *x, &shape_of(*x), |buf| {
                    for i in 0..buf.len() {
                        buf[i] += gd[i] / xv[i];
                    }
                });
            }
            Op::SumAxis(x, axis) | Op::MeanAxis(x, axis) => {
                let xs = shape_of(*x);
                let (outer, n, inner) = split_axis(&xs, *axis);
                let f = if matches!(node.op, Op::MeanAxis(..)) {
                    1.0 / n as f64
                } else {
                    1.0
                };
                accumulate(grads, *x, &xs, |buf| {
                    for o in 0..outer {
                        for k in 0..n {
                            let base = (o * n + k) * inner;
                            for i in 0..inner {
                                buf[base + i] += f * gd[o * inner + i];
                            }
                        }
                    }
                });
            }
            Op::Div { num, den, gates } => {
                let (nv, dv) = (val(*num).data(), val(*den).data());
                let open = |i: usize| gates.iter().all(|gt| val(*gt).data()[i] >= DEGENERACY_EPS);
                if needs(*num) {
                    accumulate(grads, *num, &shape_of(*num), |buf| {
                        for i in 0..buf.len() {
                            if open(i) {
                                buf[i] += gd[i] / dv[i];
                            }
                        }
                    });
                }
                if needs(*den) {
                    accumulate(grads, *den, &shape_of(*den), |buf| {
                        for i in 0..buf.len() {
                            if open(i) {
                                buf[i] -= gd[i] * nv[i] / (dv[i] * dv[i]);
                            }
                        }
                    });
                }
            }
            Op::Dot(a, b) => {
                let (rows, n) = last_axis_rows(&shape_of(*a));
                let (da, db) = (val(*a).data(), val(*b).data());
                for (target, other) in [(*a, db), (*b, da)] {
                    if needs(target) {
                        accumulate(grads, target, &shape_of(target), |buf| {
                            for r in 0..rows {
                                for k in 0..n {
                                    buf[r * n + k] += gd[r] * other[r * n + k];
                                }
                            }
                        });
                    }
                }
            }
            Op::Norm(x) => {
                let (rows, n) = last_axis_rows(&shape_of(*x));
                let xv = val(*x).data();
                let y = values.get(NodeId(index)).data();
                accumulate(grads, *x, &shape_of(*x), |buf| {
                    for r in 0..rows {
                        // d|v| is undefined at v = 0; contribute nothing there.
                        if y[r] == 0.0 || gd[r] == 0.0 {
                            continue;
                        }
                        let s = gd[r] / y[r];
                        for k in 0..n {
                            buf[r * n + k] += s * xv[r * n + k];
                        }
                    }
                });
            }
            Op::Concat(parts, axis) => {
                let (outer, _, inner) = split_axis(&node.shape, *axis);
                let total = node.shape[*axis] * inner;
                let mut offset = 0;
                for p in parts {
                    let ps = shape_of(*p);
                    let chunk = ps[*axis] * inner;
                    if needs(*p) {
                        accumulate(grads, *p, &ps, |buf| {
                            for o in 0..outer {
                                let src = &gd[o * total + offset..o * total + offset + chunk];
                                buf[o * chunk..(o + 1) * chunk]
                                    .iter_mut()
                                    .zip(src)
                                    .for_each(|(b, s)| *b += s);
                            }
                        });
                    }
                    offset += chunk;
                }
            }
            Op::Relu(x) => {
                let xv = val(*x).data();
                accumulate(grads, *x, &shape_of(*x), |buf| {
                    for i in 0..buf.len() {
                        if xv[i] > 0.0 {
                            buf[i] += gd[i];
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let (rows, n) = last_axis_rows(&shape_of(*x));
                let y = values.get(NodeId(index)).data();
                accumulate(grads, *x, &shape_of(*x), |buf| {
                    for r in 0..rows {
                        let ys = &y[r * n..(r + 1) * n];
                        let gs = &gd[r * n..(r + 1) * n];
                        let inner: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                        for k in 0..n {
                            buf[r * n + k] += ys[k] * (gs[k] - inner);
                        }
                    }
                });
            }
            Op::SoftmaxCrossEntropy { logits, target } => {
                let p = softmax_row(val(*logits).data());
                let t = val(*target).data();
                let mass: f64 = t.iter().sum();
                let g0 = gd[0];
                accumulate(grads, *logits, &shape_of(*logits), |buf| {
                    for k in 0..buf.len() {
                        buf[k] += g0 * (p[k] * mass - t[k]);
                    }
                });
            }
            Op::Scale(x, f) => {
                accumulate(grads, *x, &shape_of(*x), |buf| {
                    buf.iter_mut().zip(gd).for_each(|(o, g)| *o += f * g)
                });
            }
            Op::Gather(x, idx) => {
                accumulate(grads, *x, &shape_of(*x), |buf| {
                    for (k, &i) in idx.iter().enumerate() {
                        buf[i] += gd[k];
                    }
                });
            }
            Op::Reshape(x) => {
                accumulate(grads, *x, &shape_of(*x), |buf| {
                    buf.iter_mut().zip(gd).for_each(|(o, g)| *o += g)
                });
            }
        }
    }

    /// Ids of every parameter node, in creation order.
    pub fn parameters(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.primitive() == Primitive::Parameter)
            .map(|(i, _)| NodeId(i))
            .collect()
    }
}

pub(crate) fn softmax_row(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
