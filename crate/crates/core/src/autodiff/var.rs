use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::graph::{Axis, Graph, NodeId, Reduce};
use super::tensor::DenseTensor;

/// Interior-mutable wrapper used while a graph is being built with
/// operator syntax through [`Var`] handles.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    cell: RefCell<Graph>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_graph(graph: Graph) -> Self {
        Self {
            cell: RefCell::new(graph),
        }
    }

    pub fn var(&self, id: NodeId) -> Var<'_> {
        Var {
            builder: self,
            id,
        }
    }

    pub fn input(&self, name: &str) -> Var<'_> {
        let id = self.cell.borrow_mut().input(name);
        self.var(id)
    }

    pub fn parameter(&self, name: &str) -> Var<'_> {
        let id = self.cell.borrow_mut().parameter(name);
        self.var(id)
    }

    pub fn constant(&self, value: DenseTensor) -> Var<'_> {
        let id = self.cell.borrow_mut().constant(value);
        self.var(id)
    }

    pub fn with<R>(&self, f: impl FnOnce(&mut Graph) -> R) -> R {
        f(&mut self.cell.borrow_mut())
    }

    pub fn into_graph(self) -> Graph {
        self.cell.into_inner()
    }
}

/// Handle to a node of a graph under construction.
#[derive(Clone, Copy)]
pub struct Var<'g> {
    builder: &'g GraphBuilder,
    id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.id.index())
    }
}

impl<'g> Var<'g> {
    pub fn id(self) -> NodeId {
        self.id
    }

    pub fn builder(self) -> &'g GraphBuilder {
        self.builder
    }

    fn unary(self, f: impl FnOnce(&mut Graph, NodeId) -> NodeId) -> Self {
        let id = self.builder.with(|g| f(g, self.id));
        self.builder.var(id)
    }

    fn binary(self, other: Self, f: impl FnOnce(&mut Graph, NodeId, NodeId) -> NodeId) -> Self {
        debug_assert!(std::ptr::eq(self.builder, other.builder));
        let id = self.builder.with(|g| f(g, self.id, other.id));
        self.builder.var(id)
    }

    pub fn matmul(self, other: Self) -> Self {
        self.binary(other, Graph::matmul)
    }

    pub fn transpose(self) -> Self {
        self.unary(Graph::transpose)
    }

    pub fn softplus(self) -> Self {
        self.unary(Graph::softplus)
    }

    pub fn relu(self) -> Self {
        self.unary(Graph::relu)
    }

    pub fn sigmoid(self) -> Self {
        self.unary(Graph::sigmoid)
    }

    pub fn square(self) -> Self {
        self.unary(Graph::square)
    }

    pub fn scale(self, factor: f64) -> Self {
        self.unary(|g, a| g.scale(a, factor))
    }

    pub fn sum(self, reduce: Reduce) -> Self {
        self.unary(|g, a| g.sum(a, reduce))
    }

    pub fn column(self, index: usize) -> Self {
        self.unary(|g, a| g.column(a, index))
    }

    pub fn select(self, axis: Axis, start: usize, end: usize) -> Self {
        self.unary(|g, a| g.select(a, axis, start, end))
    }

    pub fn concat(parts: &[Self], axis: Axis) -> Self {
        let builder = parts[0].builder;
        let id = builder.with(|g| g.concat(parts.iter().map(|p| p.id).collect(), axis));
        builder.var(id)
    }

    /// Directional derivative along `seed`; see [`Graph::derive_along`].
    pub fn derive_along(self, wrt: Self, seed: Self) -> crate::Result<Self> {
        let id = self.builder.with(|g| g.derive_along(self.id, wrt.id, seed.id))?;
        Ok(self.builder.var(id))
    }

    /// Several roots differentiated in one tangent sweep.
    pub fn derive_many(roots: &[Self], wrt: Self, seed: Self) -> crate::Result<Vec<Self>> {
        let builder = wrt.builder;
        let ids: Vec<NodeId> = roots.iter().map(|r| r.id).collect();
        let out = builder.with(|g| g.derive_many(&ids, wrt.id, seed.id))?;
        Ok(out.into_iter().map(|id| builder.var(id)).collect())
    }

    pub fn zeros_like(self) -> Self {
        self.scale(0.0)
    }

    pub fn add_scalar(self, value: f64) -> Self {
        let c = self.builder.constant(DenseTensor::scalar(value));
        self + c
    }
}

impl<'g> Add for Var<'g> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, Graph::add)
    }
}

impl<'g> Sub for Var<'g> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + rhs.scale(-1.0)
    }
}

impl<'g> Mul for Var<'g> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, Graph::hadamard)
    }
}

impl<'g> Div for Var<'g> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        self.binary(rhs, Graph::div)
    }
}

impl<'g> Neg for Var<'g> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl<'g> Mul<f64> for Var<'g> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.scale(rhs)
    }
}
