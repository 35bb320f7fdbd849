//! Gauss-Legendre rules on arbitrary intervals.

use gauss_quad::legendre::GaussLegendre;
use std::num::NonZeroUsize;

/// Nodes (ascending) and weights of an `n`-point Gauss-Legendre rule.
#[derive(Clone, Debug)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    /// Rule on `[-1, 1]`.
    pub fn standard(n: usize) -> Self {
        let n = NonZeroUsize::new(n).expect("Gauss rule needs at least one node");
        let rule = GaussLegendre::new(n);
        let (nodes, weights) = rule.as_node_weight_pairs().iter().copied().unzip();
        Self { nodes, weights }
    }

    /// Rule on `[a, b]`.
    pub fn on_interval(n: usize, a: f64, b: f64) -> Self {
        let std = Self::standard(n);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        Self {
            nodes: std.nodes.iter().map(|x| mid + half * x).collect(),
            weights: std.weights.iter().map(|w| half * w).collect(),
        }
    }

    /// Rule on `[0, 1]`.
    pub fn unit(n: usize) -> Self {
        Self::on_interval(n, 0.0, 1.0)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Lagrange basis values `l_i(x)` for the given interpolation nodes.
pub fn lagrange_basis(nodes: &[f64], x: f64, out: &mut [f64]) {
    debug_assert_eq!(nodes.len(), out.len());
    for (i, li) in out.iter_mut().enumerate() {
        let mut v = 1.0;
        for (j, &xj) in nodes.iter().enumerate() {
            if j != i {
                v *= (x - xj) / (nodes[i] - xj);
            }
        }
        *li = v;
    }
}
