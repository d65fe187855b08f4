use super::graph::{Bindings, Graph, NodeId};
use crate::error::{Error, Result};

/// Compares the reverse-mode gradient of a scalar `root` with respect to the
/// bound leaf `node` against central differences with the given `step`.
///
/// Returns `max_i |analytic_i - fd_i| / (|analytic_i| + step)`.
pub fn finite_difference_check(
    graph: &Graph,
    root: NodeId,
    node: NodeId,
    bindings: &Bindings,
    step: f64,
) -> Result<f64> {
    if step <= 0.0 {
        return Err(Error::Usage("finite-difference step must be positive".into()));
    }
    let values = graph.evaluate_many(&[root], bindings)?;
    let analytic = graph.backward(&values, root, &[node])?;
    let analytic = analytic.get(node).expect("target present");

    let mut probe = bindings.clone();
    let mut worst = 0.0_f64;
    for i in 0..analytic.len() {
        let original = bindings
            .get(node)
            .ok_or_else(|| Error::Usage(format!("node {} is unbound", node.index())))?
            .data()[i];
        let mut at = |value: f64| -> Result<f64> {
            probe.get_mut(node).expect("bound").data_mut()[i] = value;
            graph.evaluate(root, &probe)?.item()
        };
        let plus = at(original + step)?;
        let minus = at(original - step)?;
        at(original)?;
        let fd = (plus - minus) / (2.0 * step);
        let a = analytic.data()[i];
        worst = worst.max((a - fd).abs() / (a.abs() + step));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::super::graph::Reduce;
    use super::super::tensor::DenseTensor;
    use super::*;

    #[test]
    fn polynomial_is_accurate() {
        // sum(x^3 + 2x^2)
        let mut g = Graph::new();
        let x = g.input("x");
        let sq = g.square(x);
        let cube = g.hadamard(sq, x);
        let two_sq = g.scale(sq, 2.0);
        let poly = g.add(cube, two_sq);
        let root = g.sum(poly, Reduce::All);
        let mut b = Bindings::new();
        b.bind(x, DenseTensor::row(&[0.3, -1.1, 2.0]));
        assert!(finite_difference_check(&g, root, x, &b, 1e-5).unwrap() < 1e-8);
    }

    #[test]
    fn constant_graph_has_zero_error() {
        let mut g = Graph::new();
        let x = g.input("x");
        let c = g.constant(DenseTensor::scalar(4.0));
        let zero = g.scale(x, 0.0);
        let root = g.add(zero, c);
        let mut b = Bindings::new();
        b.bind(x, DenseTensor::scalar(1.5));
        assert_eq!(finite_difference_check(&g, root, x, &b, 1e-5).unwrap(), 0.0);
    }

    #[test]
    fn rejects_non_positive_step() {
        let mut g = Graph::new();
        let x = g.input("x");
        let mut b = Bindings::new();
        b.bind(x, DenseTensor::scalar(1.0));
        assert!(finite_difference_check(&g, x, x, &b, 0.0).is_err());
    }
}
