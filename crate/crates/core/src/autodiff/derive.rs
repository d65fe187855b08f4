//! Symbolic differentiation by graph transformation.
//!
//! `derive` propagates tangents forward from a leaf and emits the tangent
//! of every dependent node as new nodes built from the same op set. The
//! result is an ordinary subgraph, so it can be evaluated, backpropagated
//! through, or differentiated again.

use std::collections::HashMap;

use super::graph::{Graph, NodeId, Op};
use super::tensor::DenseTensor;
use crate::error::{Error, Result};

impl Graph {
    /// `∂root/∂wrt` for a scalar leaf `wrt`.
    ///
    /// For a non-scalar `wrt` this is the directional derivative along the
    /// all-ones direction; use [`Graph::derive_along`] to pick a direction.
    pub fn derive(&mut self, root: NodeId, wrt: NodeId) -> Result<NodeId> {
        let seed = self.constant(DenseTensor::scalar(1.0));
        self.derive_along(root, wrt, seed)
    }

    /// Directional derivative of `root` with respect to leaf `wrt` along
    /// `seed` (broadcast to the shape of `wrt`).
    ///
    /// When `wrt` holds one sample per row and rows never interact, a seed
    /// row `e_k` yields `∂root[b, :]/∂wrt[b, k]` for every sample `b` at once.
    pub fn derive_along(&mut self, root: NodeId, wrt: NodeId, seed: NodeId) -> Result<NodeId> {
        Ok(self.derive_many(&[root], wrt, seed)?[0])
    }

    /// [`Graph::derive_along`] for several roots sharing one tangent sweep.
    pub fn derive_many(&mut self, roots: &[NodeId], wrt: NodeId, seed: NodeId) -> Result<Vec<NodeId>> {
        self.check(wrt)?;
        self.check(seed)?;
        for r in roots {
            self.check(*r)?;
        }
        if !matches!(self.op(wrt), Op::Input(_) | Op::Parameter(_)) {
            return Err(Error::Usage(format!(
                "can only differentiate with respect to an input or parameter, node {} is {:?}",
                wrt.index(),
                self.op(wrt)
            )));
        }

        let top = roots.iter().map(|r| r.index()).max().unwrap_or(0);
        let mut tangent: HashMap<usize, NodeId> = HashMap::new();
        if wrt.index() <= top {
            let zero = self.scale(wrt, 0.0);
            let t = self.add(zero, seed);
            tangent.insert(wrt.index(), t);
        }

        for i in wrt.index() + 1..=top {
            let op = self.op(NodeId(i)).clone();
            let t = |n: &NodeId| tangent.get(&n.index()).copied();
            let node = NodeId(i);
            let result = match op {
                Op::Input(_) | Op::Parameter(_) | Op::Constant(_) | Op::Step(_) => None,
                Op::Add(a, b) => match (t(&a), t(&b)) {
                    (None, None) => None,
                    (Some(ta), Some(tb)) => Some(self.add(ta, tb)),
                    // Pad with a zero of the other operand's shape so the
                    // tangent keeps the broadcast shape of the sum.
                    (Some(ta), None) => {
                        let z = self.scale(b, 0.0);
                        Some(self.add(ta, z))
                    }
                    (None, Some(tb)) => {
                        let z = self.scale(a, 0.0);
                        Some(self.add(z, tb))
                    }
                },
                Op::Hadamard(a, b) => {
                    let left = t(&a).map(|ta| (ta, b));
                    let right = t(&b).map(|tb| (a, tb));
                    self.sum_products(left, right, Graph::hadamard)
                }
                Op::MatMul(a, b) => {
                    let left = t(&a).map(|ta| (ta, b));
                    let right = t(&b).map(|tb| (a, tb));
                    self.sum_products(left, right, Graph::matmul)
                }
                Op::Div(a, b) => {
                    let da = t(&a).map(|ta| self.div(ta, b));
                    let db = t(&b).map(|tb| {
                        // -(a/b) * tb / b
                        let q = self.hadamard(node, tb);
                        let q = self.div(q, b);
                        self.scale(q, -1.0)
                    });
                    match (da, db) {
                        (None, None) => None,
                        (Some(x), None) => Some(x),
                        (None, Some(y)) => {
                            // Same broadcast padding as `Add`.
                            let z = self.scale(node, 0.0);
                            Some(self.add(z, y))
                        }
                        (Some(x), Some(y)) => Some(self.add(x, y)),
                    }
                }
                Op::Scale(a, c) => t(&a).map(|ta| self.scale(ta, c)),
                Op::Transpose(a) => t(&a).map(|ta| self.transpose(ta)),
                Op::Softplus(a) => t(&a).map(|ta| {
                    let s = self.sigmoid(a);
                    self.hadamard(s, ta)
                }),
                Op::Relu(a) => t(&a).map(|ta| {
                    let s = self.step(a);
                    self.hadamard(s, ta)
                }),
                Op::Sigmoid(a) => t(&a).map(|ta| {
                    // s - s^2
                    let sq = self.square(node);
                    let neg = self.scale(sq, -1.0);
                    let ds = self.add(node, neg);
                    self.hadamard(ds, ta)
                }),
                Op::Sum(a, reduce) => t(&a).map(|ta| self.sum(ta, reduce)),
                Op::Square(a) => t(&a).map(|ta| {
                    let p = self.hadamard(a, ta);
                    self.scale(p, 2.0)
                }),
                Op::Concat(parts, axis) => {
                    if parts.iter().any(|p| t(p).is_some()) {
                        let pieces = parts
                            .iter()
                            .map(|p| match t(p) {
                                Some(tp) => tp,
                                None => self.scale(*p, 0.0),
                            })
                            .collect();
                        Some(self.concat(pieces, axis))
                    } else {
                        None
                    }
                }
                Op::Select {
                    of,
                    axis,
                    start,
                    end,
                } => t(&of).map(|to| self.select(to, axis, start, end)),
            };
            if let Some(r) = result {
                tangent.insert(i, r);
            }
        }

        Ok(roots
            .iter()
            .map(|r| match tangent.get(&r.index()) {
                Some(t) => *t,
                None => self.scale(*r, 0.0),
            })
            .collect())
    }

    fn sum_products(
        &mut self,
        left: Option<(NodeId, NodeId)>,
        right: Option<(NodeId, NodeId)>,
        mul: fn(&mut Graph, NodeId, NodeId) -> NodeId,
    ) -> Option<NodeId> {
        let l = left.map(|(x, y)| mul(self, x, y));
        let r = right.map(|(x, y)| mul(self, x, y));
        match (l, r) {
            (Some(l), Some(r)) => Some(self.add(l, r)),
            (l, r) => l.or(r),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::graph::{Bindings, Reduce};
    use super::*;

    fn eval_scalar(g: &Graph, x: NodeId, root: NodeId, value: f64) -> f64 {
        let mut b = Bindings::new();
        b.bind(x, DenseTensor::scalar(value));
        g.evaluate(root, &b).unwrap().item().unwrap()
    }

    #[test]
    fn softplus_derivative_is_sigmoid() {
        let mut g = Graph::new();
        let x = g.input("x");
        let y = g.softplus(x);
        let dy = g.derive(y, x).unwrap();
        assert!((eval_scalar(&g, x, dy, 0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn power_rule() {
        let mut g = Graph::new();
        let x = g.input("x");
        let y = g.square(x);
        let dy = g.derive(y, x).unwrap();
        assert_eq!(eval_scalar(&g, x, dy, 3.0), 6.0);
    }

    #[test]
    fn second_derivative_of_cube() {
        let mut g = Graph::new();
        let x = g.input("x");
        let sq = g.square(x);
        let cube = g.hadamard(sq, x);
        let d1 = g.derive(cube, x).unwrap();
        let d2 = g.derive(d1, x).unwrap();
        assert_eq!(eval_scalar(&g, x, d1, 2.0), 12.0);
        assert_eq!(eval_scalar(&g, x, d2, 2.0), 12.0);
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        let mut g = Graph::new();
        let x = g.input("x");
        let y = g.relu(x);
        let dy = g.derive(y, x).unwrap();
        assert_eq!(eval_scalar(&g, x, dy, 0.0), 0.0);
        assert_eq!(eval_scalar(&g, x, dy, 1e-300), 1.0);
    }

    #[test]
    fn independent_root_gives_zero() {
        let mut g = Graph::new();
        let x = g.input("x");
        let y = g.input("y");
        let root = g.square(y);
        let d = g.derive(root, x).unwrap();
        let mut b = Bindings::new();
        b.bind(x, DenseTensor::scalar(1.0));
        b.bind(y, DenseTensor::scalar(4.0));
        assert_eq!(g.evaluate(d, &b).unwrap().item().unwrap(), 0.0);
    }

    #[test]
    fn derive_wrt_non_leaf_is_usage_error() {
        let mut g = Graph::new();
        let x = g.input("x");
        let y = g.square(x);
        let z = g.square(y);
        assert!(matches!(g.derive(z, y), Err(Error::Usage(_))));
        assert!(matches!(g.derive(z, NodeId(999)), Err(Error::Usage(_))));
    }

    #[test]
    fn per_row_jacobian_column() {
        // f(q) = sum_j softplus(q W)_j, one sample per row.
        let mut g = Graph::new();
        let q = g.input("q");
        let w = g.constant(DenseTensor::new(2, 3, vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75]).unwrap());
        let h = g.matmul(q, w);
        let s = g.softplus(h);
        let f = g.sum(s, Reduce::OverCols);
        let e1 = g.constant(DenseTensor::row(&[0.0, 1.0]));
        let df = g.derive_along(f, q, e1).unwrap();
        let mut b = Bindings::new();
        let qs = DenseTensor::new(2, 2, vec![0.1, 0.2, -0.4, 0.9]).unwrap();
        b.bind(q, qs.clone());
        let out = g.evaluate(df, &b).unwrap();
        assert_eq!(out.shape(), [2, 1]);
        for r in 0..2 {
            let z: Vec<f64> = (0..3)
                .map(|c| qs.get(r, 0) * [0.5, -1.0, 2.0][c] + qs.get(r, 1) * [1.5, 0.25, -0.75][c])
                .collect();
            let expected: f64 = (0..3)
                .map(|c| super::super::graph::sigmoid(z[c]) * [1.5, 0.25, -0.75][c])
                .sum();
            assert!((out.get(r, 0) - expected).abs() < 1e-14);
        }
    }
}
