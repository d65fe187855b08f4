//! Append-only computation graph over [`DenseTensor`] values.
//!
//! Nodes are only ever appended, so a node's parents always have smaller
//! indices and index order is a valid topological order. Existing nodes are
//! never modified: evaluating binds leaf values without touching structure,
//! and differentiating appends the derivative graph next to the original.

use std::collections::HashMap;

use super::tensor::DenseTensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Axis along which [`Op::Concat`] and [`Op::Select`] operate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

/// Reduction performed by [`Op::Sum`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    /// Sum of every element, `1×1`.
    All,
    /// Sum down each column, `1×cols`.
    OverRows,
    /// Sum along each row, `rows×1`.
    OverCols,
}

#[derive(Clone, Debug)]
pub enum Op {
    Input(String),
    Parameter(String),
    Constant(DenseTensor),
    Add(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    Transpose(NodeId),
    Softplus(NodeId),
    Relu(NodeId),
    /// Heaviside step with `step(0) = 0`; the derivative of ReLU.
    Step(NodeId),
    Sigmoid(NodeId),
    Sum(NodeId, Reduce),
    Square(NodeId),
    Concat(Vec<NodeId>, Axis),
    Select {
        of: NodeId,
        axis: Axis,
        start: usize,
        end: usize,
    },
}

impl Op {
    pub fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Input(_) | Op::Parameter(_) | Op::Constant(_) => vec![],
            Op::Add(a, b) | Op::MatMul(a, b) | Op::Hadamard(a, b) | Op::Div(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::Softplus(a)
            | Op::Relu(a)
            | Op::Step(a)
            | Op::Sigmoid(a)
            | Op::Sum(a, _)
            | Op::Square(a) => vec![*a],
            Op::Concat(parts, _) => parts.clone(),
            Op::Select { of, .. } => vec![*of],
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Op::Input(_) | Op::Parameter(_) | Op::Constant(_))
    }
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Op>,
}

/// Values for the input and parameter leaves of a graph.
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    values: HashMap<NodeId, DenseTensor>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, node: NodeId, value: DenseTensor) -> &mut Self {
        self.values.insert(node, value);
        self
    }

    pub fn get(&self, node: NodeId) -> Option<&DenseTensor> {
        self.values.get(&node)
    }

    pub fn get_mut(&mut self, node: NodeId) -> Option<&mut DenseTensor> {
        self.values.get_mut(&node)
    }
}

/// Node values produced by [`Graph::evaluate_many`].
#[derive(Clone, Debug)]
pub struct Values {
    slots: Vec<Option<DenseTensor>>,
}

impl Values {
    pub fn get(&self, node: NodeId) -> Option<&DenseTensor> {
        self.slots.get(node.0).and_then(Option::as_ref)
    }

    pub fn expect(&self, node: NodeId) -> Result<&DenseTensor> {
        self.get(node)
            .ok_or_else(|| Error::Usage(format!("node {} was not evaluated", node.0)))
    }
}

/// `∂root/∂target` for each requested target.
#[derive(Clone, Debug, Default)]
pub struct GradientMap {
    grads: HashMap<NodeId, DenseTensor>,
}

impl GradientMap {
    pub fn get(&self, node: NodeId) -> Option<&DenseTensor> {
        self.grads.get(&node)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Adds every gradient of `other` into `self`.
    pub fn merge(&mut self, other: &GradientMap) -> Result<()> {
        for (node, g) in &other.grads {
            match self.grads.get_mut(node) {
                Some(existing) => existing.accumulate(g)?,
                None => {
                    self.grads.insert(*node, g.clone());
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn step(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
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

    pub fn op(&self, node: NodeId) -> &Op {
        &self.nodes[node.0]
    }

    pub(crate) fn push(&mut self, op: Op) -> NodeId {
        debug_assert!(op.parents().iter().all(|p| p.0 < self.nodes.len()));
        self.nodes.push(op);
        NodeId(self.nodes.len() - 1)
    }

    pub(crate) fn check(&self, node: NodeId) -> Result<()> {
        if node.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::Usage(format!("node {} is not in this graph", node.0)))
        }
    }

    pub fn input(&mut self, name: impl Into<String>) -> NodeId {
        self.push(Op::Input(name.into()))
    }

    pub fn parameter(&mut self, name: impl Into<String>) -> NodeId {
        self.push(Op::Parameter(name.into()))
    }

    pub fn constant(&mut self, value: DenseTensor) -> NodeId {
        self.push(Op::Constant(value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Hadamard(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Div(a, b))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.push(Op::Scale(a, factor))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Transpose(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Softplus(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a))
    }

    pub fn step(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Step(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sigmoid(a))
    }

    pub fn sum(&mut self, a: NodeId, reduce: Reduce) -> NodeId {
        self.push(Op::Sum(a, reduce))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Square(a))
    }

    pub fn concat(&mut self, parts: Vec<NodeId>, axis: Axis) -> NodeId {
        self.push(Op::Concat(parts, axis))
    }

    pub fn select(&mut self, of: NodeId, axis: Axis, start: usize, end: usize) -> NodeId {
        self.push(Op::Select {
            of,
            axis,
            start,
            end,
        })
    }

    /// Single column `index` of `of`.
    pub fn column(&mut self, of: NodeId, index: usize) -> NodeId {
        self.select(of, Axis::Cols, index, index + 1)
    }

    /// Marks every ancestor of `roots` (inclusive).
    fn ancestors(&self, roots: &[NodeId]) -> Vec<bool> {
        let mut needed = vec![false; self.nodes.len()];
        for r in roots {
            needed[r.0] = true;
        }
        let top = roots.iter().map(|r| r.0).max().unwrap_or(0);
        for i in (0..=top.min(self.nodes.len().saturating_sub(1))).rev() {
            if needed[i] {
                for p in self.nodes[i].parents() {
                    needed[p.0] = true;
                }
            }
        }
        needed
    }

    pub fn evaluate(&self, root: NodeId, bindings: &Bindings) -> Result<DenseTensor> {
        let mut values = self.evaluate_many(&[root], bindings)?;
        Ok(values.slots[root.0].take().expect("root evaluated"))
    }

    /// Evaluates every ancestor of `roots`. Bound leaves are always present
    /// in the result so that [`Graph::backward`] can size unused gradients.
    pub fn evaluate_many(&self, roots: &[NodeId], bindings: &Bindings) -> Result<Values> {
        for r in roots {
            self.check(*r)?;
        }
        let needed = self.ancestors(roots);
        let mut slots: Vec<Option<DenseTensor>> = vec![None; self.nodes.len()];
        for (node, value) in &bindings.values {
            self.check(*node)?;
            if !matches!(self.nodes[node.0], Op::Input(_) | Op::Parameter(_)) {
                return Err(Error::Usage(format!(
                    "node {} is not an input or parameter",
                    node.0
                )));
            }
            slots[node.0] = Some(value.clone());
        }
        for i in 0..self.nodes.len() {
            if !needed[i] {
                continue;
            }
            let value = {
                let v = |n: &NodeId| slots[n.0].as_ref().expect("parent evaluated");
                match &self.nodes[i] {
                    Op::Input(name) | Op::Parameter(name) => {
                        if slots[i].is_none() {
                            return Err(Error::Usage(format!("leaf '{name}' (node {i}) is unbound")));
                        }
                        continue;
                    }
                    Op::Constant(t) => t.clone(),
                    Op::Add(a, b) => v(a).add(v(b))?,
                    Op::MatMul(a, b) => v(a).matmul(v(b))?,
                    Op::Hadamard(a, b) => v(a).hadamard(v(b))?,
                    Op::Div(a, b) => v(a).zip_with(v(b), |x, y| x / y)?,
                    Op::Scale(a, c) => v(a).scale(*c),
                    Op::Transpose(a) => v(a).transpose(),
                    Op::Softplus(a) => v(a).map(softplus),
                    Op::Relu(a) => v(a).map(|x| x.max(0.0)),
                    Op::Step(a) => v(a).map(step),
                    Op::Sigmoid(a) => v(a).map(sigmoid),
                    Op::Sum(a, Reduce::All) => DenseTensor::scalar(v(a).sum_all()),
                    Op::Sum(a, Reduce::OverRows) => v(a).sum_rows(),
                    Op::Sum(a, Reduce::OverCols) => v(a).sum_cols(),
                    Op::Square(a) => v(a).map(|x| x * x),
                    Op::Concat(parts, axis) => {
                        let parts: Vec<&DenseTensor> = parts.iter().map(v).collect();
                        match axis {
                            Axis::Rows => DenseTensor::concat_rows(&parts)?,
                            Axis::Cols => DenseTensor::concat_cols(&parts)?,
                        }
                    }
                    Op::Select {
                        of,
                        axis,
                        start,
                        end,
                    } => {
                        let t = v(of);
                        let limit = match axis {
                            Axis::Rows => t.rows(),
                            Axis::Cols => t.cols(),
                        };
                        if start > end || *end > limit {
                            return Err(Error::Shape(format!(
                                "select {start}..{end} out of range {limit}"
                            )));
                        }
                        match axis {
                            Axis::Rows => t.select_rows(*start, *end),
                            Axis::Cols => t.select_cols(*start, *end),
                        }
                    }
                }
            };
            slots[i] = Some(value);
        }
        Ok(Values { slots })
    }

    /// Reverse-mode accumulation of `∂root/∂target` for a scalar `root`.
    ///
    /// `values` must come from evaluating (at least) `root`. Targets that
    /// the root does not depend on receive zero tensors.
    pub fn backward(&self, values: &Values, root: NodeId, targets: &[NodeId]) -> Result<GradientMap> {
        self.check(root)?;
        let root_value = values.expect(root)?;
        if root_value.shape() != [1, 1] {
            return Err(Error::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        for t in targets {
            self.check(*t)?;
        }

        // Only nodes that both depend on a target and feed the root carry
        // useful adjoints.
        let feeds_root = self.ancestors(&[root]);
        let mut depends = vec![false; root.0 + 1];
        for t in targets {
            if t.0 <= root.0 {
                depends[t.0] = true;
            }
        }
        for i in 0..=root.0 {
            if !depends[i] && self.nodes[i].parents().iter().any(|p| depends[p.0]) {
                depends[i] = true;
            }
        }

        let mut adjoint: Vec<Option<DenseTensor>> = vec![None; root.0 + 1];
        adjoint[root.0] = Some(DenseTensor::scalar(1.0));

        fn push(adjoint: &mut [Option<DenseTensor>], node: NodeId, g: DenseTensor) -> Result<()> {
            match &mut adjoint[node.0] {
                Some(existing) => existing.accumulate(&g),
                slot @ None => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        }

        for i in (0..=root.0).rev() {
            if !feeds_root[i] || !depends[i] {
                continue;
            }
            let Some(g) = adjoint[i].take() else {
                continue;
            };
            let op = &self.nodes[i];
            if op.is_leaf() {
                adjoint[i] = Some(g);
                continue;
            }
            let val = |n: &NodeId| values.expect(*n);
            let wants = |n: &NodeId| depends[n.0];
            match op {
                Op::Input(_) | Op::Parameter(_) | Op::Constant(_) => unreachable!(),
                Op::Add(a, b) => {
                    if wants(a) {
                        push(&mut adjoint, *a, g.reduce_to(val(a)?.shape())?)?;
                    }
                    if wants(b) {
                        push(&mut adjoint, *b, g.reduce_to(val(b)?.shape())?)?;
                    }
                }
                Op::Hadamard(a, b) => {
                    if wants(a) {
                        let ga = g.hadamard(val(b)?)?.reduce_to(val(a)?.shape())?;
                        push(&mut adjoint, *a, ga)?;
                    }
                    if wants(b) {
                        let gb = g.hadamard(val(a)?)?.reduce_to(val(b)?.shape())?;
                        push(&mut adjoint, *b, gb)?;
                    }
                }
                Op::Div(a, b) => {
                    let vb = val(b)?;
                    if wants(a) {
                        let ga = g.zip_with(vb, |x, y| x / y)?.reduce_to(val(a)?.shape())?;
                        push(&mut adjoint, *a, ga)?;
                    }
                    if wants(b) {
                        // d(a/b)/db = -(a/b)/b
                        let quotient = val(&NodeId(i))?;
                        let gb = g
                            .hadamard(quotient)?
                            .zip_with(vb, |x, y| -x / y)?
                            .reduce_to(vb.shape())?;
                        push(&mut adjoint, *b, gb)?;
                    }
                }
                Op::MatMul(a, b) => {
                    if wants(a) {
                        push(&mut adjoint, *a, g.matmul(&val(b)?.transpose())?)?;
                    }
                    if wants(b) {
                        push(&mut adjoint, *b, val(a)?.transpose().matmul(&g)?)?;
                    }
                }
                Op::Scale(a, c) => push(&mut adjoint, *a, g.scale(*c))?,
                Op::Transpose(a) => push(&mut adjoint, *a, g.transpose())?,
                Op::Softplus(a) => {
                    let ga = g.zip_with(val(a)?, |gi, x| gi * sigmoid(x))?;
                    push(&mut adjoint, *a, ga)?;
                }
                Op::Relu(a) => {
                    let ga = g.zip_with(val(a)?, |gi, x| gi * step(x))?;
                    push(&mut adjoint, *a, ga)?;
                }
                Op::Step(_) => {}
                Op::Sigmoid(a) => {
                    let s = val(&NodeId(i))?;
                    let ga = g.zip_with(s, |gi, s| gi * s * (1.0 - s))?;
                    push(&mut adjoint, *a, ga)?;
                }
                Op::Sum(a, _) => {
                    let ga = g.broadcast_to(val(a)?.shape())?;
                    push(&mut adjoint, *a, ga)?;
                }
                Op::Square(a) => {
                    let ga = g.zip_with(val(a)?, |gi, x| 2.0 * x * gi)?;
                    push(&mut adjoint, *a, ga)?;
                }
                Op::Concat(parts, axis) => {
                    let mut offset = 0;
                    for p in parts {
                        let shape = val(p)?.shape();
                        let (piece, width) = match axis {
                            Axis::Rows => (g.select_rows(offset, offset + shape[0]), shape[0]),
                            Axis::Cols => (g.select_cols(offset, offset + shape[1]), shape[1]),
                        };
                        if wants(p) {
                            push(&mut adjoint, *p, piece)?;
                        }
                        offset += width;
                    }
                }
                Op::Select {
                    of,
                    axis,
                    start,
                    end: _,
                } => {
                    let source = val(of)?;
                    let mut ga = DenseTensor::zeros(source.rows(), source.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            let (sr, sc) = match axis {
                                Axis::Rows => (r + start, c),
                                Axis::Cols => (r, c + start),
                            };
                            ga.set(sr, sc, g.get(r, c));
                        }
                    }
                    push(&mut adjoint, *of, ga)?;
                }
            }
        }

        let mut grads = HashMap::new();
        for t in targets {
            let g = match adjoint.get_mut(t.0).and_then(Option::take) {
                Some(g) => g,
                None => {
                    let shape = values.expect(*t)?.shape();
                    DenseTensor::zeros(shape[0], shape[1])
                }
            };
            grads.insert(*t, g);
        }
        Ok(GradientMap { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_graph(build: impl FnOnce(&mut Graph, NodeId) -> NodeId) -> (Graph, NodeId, NodeId) {
        let mut g = Graph::new();
        let x = g.input("x");
        let root = build(&mut g, x);
        (g, x, root)
    }

    fn at(g: &Graph, x: NodeId, root: NodeId, value: f64) -> f64 {
        let mut b = Bindings::new();
        b.bind(x, DenseTensor::scalar(value));
        g.evaluate(root, &b).unwrap().item().unwrap()
    }

    #[test]
    fn softplus_at_zero_is_ln2() {
        let (g, x, root) = scalar_graph(|g, x| g.softplus(x));
        assert!((at(&g, x, root, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn relu_clamps() {
        let (g, x, root) = scalar_graph(|g, x| g.relu(x));
        assert_eq!(at(&g, x, root, -1.0), 0.0);
        assert_eq!(at(&g, x, root, 3.0), 3.0);
    }

    #[test]
    fn matmul_with_identity() {
        let mut g = Graph::new();
        let i = g.constant(DenseTensor::identity(2));
        let v = g.input("v");
        let out = g.matmul(i, v);
        let mut b = Bindings::new();
        b.bind(v, DenseTensor::column(&[1.0, 2.0]));
        assert_eq!(g.evaluate(out, &b).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn unbound_input_is_usage_error() {
        let (g, _, root) = scalar_graph(|g, x| g.square(x));
        let err = g.evaluate(root, &Bindings::new()).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut g = Graph::new();
        let a = g.input("a");
        let b = g.input("b");
        let out = g.matmul(a, b);
        let mut bind = Bindings::new();
        bind.bind(a, DenseTensor::zeros(2, 3));
        bind.bind(b, DenseTensor::zeros(2, 3));
        assert!(matches!(g.evaluate(out, &bind), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_sum_of_squares() {
        let mut g = Graph::new();
        let w = g.parameter("w");
        let sq = g.hadamard(w, w);
        let root = g.sum(sq, Reduce::All);
        let mut b = Bindings::new();
        b.bind(w, DenseTensor::row(&[1.0, 2.0, 3.0]));
        let values = g.evaluate_many(&[root], &b).unwrap();
        let grads = g.backward(&values, root, &[w]).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_unused_target_is_zero() {
        let mut g = Graph::new();
        let w = g.parameter("w");
        let unused = g.parameter("u");
        let root = g.sum(w, Reduce::All);
        let mut b = Bindings::new();
        b.bind(w, DenseTensor::row(&[1.0, 2.0]));
        b.bind(unused, DenseTensor::zeros(2, 2));
        let values = g.evaluate_many(&[root], &b).unwrap();
        let grads = g.backward(&values, root, &[unused]).unwrap();
        assert_eq!(grads.get(unused).unwrap(), &DenseTensor::zeros(2, 2));
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::new();
        let w = g.parameter("w");
        let root = g.square(w);
        let mut b = Bindings::new();
        b.bind(w, DenseTensor::row(&[1.0, 2.0]));
        let values = g.evaluate_many(&[root], &b).unwrap();
        assert!(matches!(g.backward(&values, root, &[w]), Err(Error::Usage(_))));
    }

    #[test]
    fn evaluation_is_bit_deterministic() {
        let mut g = Graph::new();
        let x = g.input("x");
        let w = g.parameter("w");
        let h = g.matmul(x, w);
        let s = g.softplus(h);
        let root = g.sum(s, Reduce::All);
        let mut b = Bindings::new();
        b.bind(x, DenseTensor::new(2, 2, vec![0.3, -1.2, 2.2, 0.7]).unwrap());
        b.bind(w, DenseTensor::new(2, 3, vec![0.1, 0.2, -0.3, 0.4, -0.5, 0.6]).unwrap());
        let first = g.evaluate(root, &b).unwrap();
        let second = g.evaluate(root, &b).unwrap();
        assert_eq!(first.data()[0].to_bits(), second.data()[0].to_bits());
    }
}
