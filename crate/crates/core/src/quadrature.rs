//! Surface quadrature for the retarded single- and double-layer kernels.
//!
//! Off-surface targets use the native panel rule. On-surface targets at node
//! `i` split the surface into far panels (native rule) and the 3x3 block of
//! panels around the target's panel, which is integrated by a polar rule on
//! four triangles with apex at the target preimage in block coordinates
//! `(u, v) in [-3, 3]^2`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dspline::DSplineBasis;
use crate::gauss::GaussRule;
use crate::geometry::{SurfaceGrid, Vec3};
use crate::sources::PointSource;
use crate::{Error, Result};

/// Kernel values times a quadrature weight for one (target, source) pair:
/// `s = w/(4 pi r)`, `d = w n.(x-y)/(4 pi r^3)`, `w = w n.(x-y)/(4 pi r^2)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KernelWeights {
    pub s: f64,
    pub d: f64,
    pub w: f64,
}

impl KernelWeights {
    /// Weights for target `x`, source point `y` with unit normal `normal` and
    /// area weight `weight`. Also returns the distance.
    pub fn new(x: &Vec3, y: &Vec3, normal: &Vec3, weight: f64) -> Option<(Self, f64)> {
        let diff = x - y;
        let r = diff.norm();
        if r == 0.0 {
            return None;
        }
        let s = weight / (4.0 * PI * r);
        let proj = normal.dot(&diff) / r;
        Some((
            Self {
                s,
                d: s * proj / r,
                w: s * proj,
            },
            r,
        ))
    }

    /// Coefficients multiplying the density value and its time derivative in
    /// `D mu + S(a mu_t + b mu)`.
    pub fn combined(&self, a: f64, b: f64) -> (f64, f64) {
        (self.d + b * self.s, self.w + a * self.s)
    }
}

/// Native-rule weights for target `x` and source node `j`.
pub fn far_kernel_weights(grid: &SurfaceGrid, x: &Vec3, j: usize) -> Result<KernelWeights> {
    let node = grid.node(j);
    KernelWeights::new(x, &node.point.position, &node.point.normal, grid.weights()[j])
        .map(|(k, _)| k)
        .ok_or(Error::CoincidentPoints(j))
}

/// Whether source node `j` lies outside the 3x3 panel block of target node `i`.
pub fn is_far(grid: &SurfaceGrid, i: usize, j: usize) -> bool {
    let (ip, it) = grid.panel_coords(grid.panel_of_node(i));
    let (jp, jt) = grid.panel_coords(grid.panel_of_node(j));
    let cyclic = |a: usize, b: usize, n: usize| {
        let d = (a + n - b) % n;
        d.min(n - d)
    };
    cyclic(ip, jp, grid.n_phi()) > 1 || cyclic(it, jt, grid.n_theta()) > 1
}

/// Polar rule parameters for the near block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuxParams {
    pub n_r: usize,
    pub n_phi: usize,
}

impl AuxParams {
    /// Angular order tied to the radial order, `n_phi = 2 n_r`.
    pub fn new(n_r: usize) -> Self {
        Self { n_r, n_phi: 2 * n_r }
    }

    /// Nodes per target, `4 n_r n_phi`.
    pub fn len(&self) -> usize {
        4 * self.n_r * self.n_phi
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One auxiliary node of an on-surface target.
#[derive(Clone, Copy, Debug)]
pub struct AuxNode {
    pub position: Vec3,
    pub normal: Vec3,
    /// Block coordinates, target panel at `[-1, 1]^2`.
    pub uv: [f64; 2],
    pub weights: KernelWeights,
    /// Distance to the target.
    pub delay: f64,
}

#[derive(Clone, Debug)]
pub struct AuxNodeSet {
    pub target: usize,
    pub nodes: Vec<AuxNode>,
}

/// Precomputed 1D rules for building auxiliary nodes.
#[derive(Clone, Debug)]
pub struct AuxRule {
    params: AuxParams,
    radial: GaussRule,
    angular: GaussRule,
}

const BLOCK_CORNERS: [[f64; 2]; 4] = [[3.0, -3.0], [3.0, 3.0], [-3.0, 3.0], [-3.0, -3.0]];
/// Outward normals of the walls between consecutive corners.
const WALL_NORMALS: [[f64; 2]; 4] = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];

impl AuxRule {
    pub fn new(params: AuxParams) -> Self {
        assert!(params.n_r > 0 && params.n_phi > 0, "empty auxiliary rule");
        Self {
            params,
            radial: GaussRule::unit(params.n_r),
            angular: GaussRule::standard(params.n_phi),
        }
    }

    pub fn params(&self) -> AuxParams {
        self.params
    }

    /// Auxiliary nodes for target node `i`.
    pub fn build(&self, grid: &SurfaceGrid, i: usize) -> AuxNodeSet {
        let panel = grid.panel_of_node(i);
        let (a, b) = grid.index_in_panel(i);
        let u0 = grid.panel_rule().nodes[a];
        let v0 = grid.panel_rule().nodes[b];
        assert!(u0.abs() <= 1.0 && v0.abs() <= 1.0, "target preimage outside its panel");
        let x = grid.position(i);

        let mut angles = [0.0; 5];
        for (k, c) in BLOCK_CORNERS.iter().enumerate() {
            let mut ang = (c[1] - v0).atan2(c[0] - u0);
            if k > 0 {
                while ang <= angles[k - 1] {
                    ang += 2.0 * PI;
                }
            }
            angles[k] = ang;
        }
        angles[4] = angles[0] + 2.0 * PI;

        let mut nodes = Vec::with_capacity(self.params.len());
        for wall in 0..4 {
            let (phi0, phi1) = (angles[wall], angles[wall + 1]);
            let half = 0.5 * (phi1 - phi0);
            let normal = WALL_NORMALS[wall];
            let dist = 3.0 - (normal[0] * u0 + normal[1] * v0);
            for (&t, &xi) in self.angular.nodes.iter().zip(&self.angular.weights) {
                let phi = phi0 + half * (t + 1.0);
                let (sin, cos) = phi.sin_cos();
                let r_max = dist / (normal[0] * cos + normal[1] * sin);
                let outer = xi * half * r_max * r_max;
                for (&rho, &eta) in self.radial.nodes.iter().zip(&self.radial.weights) {
                    let u = u0 + rho * r_max * cos;
                    let v = v0 + rho * r_max * sin;
                    let (pt, jac) = grid.block_chart(panel, u, v);
                    let weight = outer * eta * rho * jac;
                    let (weights, delay) = KernelWeights::new(&x, &pt.position, &pt.normal, weight)
                        .expect("auxiliary nodes never coincide with the target");
                    nodes.push(AuxNode {
                        position: pt.position,
                        normal: pt.normal,
                        uv: [u, v],
                        weights,
                        delay,
                    });
                }
            }
        }
        AuxNodeSet { target: i, nodes }
    }
}

/// Auxiliary nodes for target node `i` with the given orders.
pub fn build_aux_nodes(grid: &SurfaceGrid, i: usize, n_r: usize, n_phi_aux: usize) -> AuxNodeSet {
    AuxRule::new(AuxParams {
        n_r,
        n_phi: n_phi_aux,
    })
    .build(grid, i)
}

/// Static on-surface integral `int K(x_i, y) f(y) dS_y` of the selected kernel
/// combination, with `f` sampled at `(position, normal)`.
pub fn on_surface_static(
    grid: &SurfaceGrid,
    rule: &AuxRule,
    i: usize,
    kernel: impl Fn(&KernelWeights) -> f64,
    f: impl Fn(&Vec3, &Vec3) -> f64,
) -> f64 {
    let x = grid.position(i);
    let far: f64 = (0..grid.len())
        .filter(|&j| is_far(grid, i, j))
        .map(|j| {
            let node = grid.node(j);
            let (k, _) = KernelWeights::new(&x, &node.point.position, &node.point.normal, grid.weights()[j])
                .expect("far nodes are distinct from the target");
            kernel(&k) * f(&node.point.position, &node.point.normal)
        })
        .sum();
    let near: f64 = rule
        .build(grid, i)
        .nodes
        .iter()
        .map(|n| kernel(&n.weights) * f(&n.position, &n.normal))
        .sum();
    far + near
}

/// Static off-surface integral with the native rule.
pub fn off_surface_static(
    grid: &SurfaceGrid,
    x: &Vec3,
    kernel: impl Fn(&KernelWeights) -> f64,
    f: impl Fn(&Vec3, &Vec3) -> f64,
) -> Result<f64> {
    (0..grid.len()).try_fold(0.0, |acc, j| {
        let k = far_kernel_weights(grid, x, j)?;
        let node = grid.node(j);
        Ok(acc + kernel(&k) * f(&node.point.position, &node.point.normal))
    })
}

/// Weights of `u(x, t_k) = [D mu + S(a mu_t + b mu)](x, t_k)` on the density
/// history: `u = sum (r, j, c) c * mu_j^{k-r}`.
#[derive(Clone, Debug, Default)]
pub struct ProbeRow {
    pub entries: Vec<(u32, u32, f64)>,
    /// Largest `r` referenced.
    pub depth: usize,
}

impl ProbeRow {
    /// Applies the row to a history accessor returning `mu^{k-r}`.
    pub fn apply<'a>(&self, history: impl Fn(usize) -> &'a [f64]) -> f64 {
        self.entries
            .iter()
            .map(|&(r, j, c)| c * history(r as usize)[j as usize])
            .sum()
    }
}

/// Retarded-potential row for an exterior target `x` with the native rule.
pub fn probe_row(grid: &SurfaceGrid, basis: &DSplineBasis, x: &Vec3, a: f64, b: f64) -> Result<ProbeRow> {
    let mut row = ProbeRow::default();
    for j in 0..grid.len() {
        let node = grid.node(j);
        let (k, delay) = KernelWeights::new(x, &node.point.position, &node.point.normal, grid.weights()[j])
            .ok_or(Error::CoincidentPoints(j))?;
        let (cv, cd) = k.combined(a, b);
        for (r, om, dom) in basis.stencil(delay).iter() {
            let c = cv * om + cd * dom;
            if c.abs() > 1e-300 {
                row.entries.push((r as u32, j as u32, c));
                row.depth = row.depth.max(r);
            }
        }
    }
    Ok(row)
}

/// Evaluates `[D mu + S(a mu_t + b mu)](x, t_k)` at an exterior point from a
/// density history with `history[r] = mu^{k-r}`.
pub fn eval_retarded_potential(
    grid: &SurfaceGrid,
    basis: &DSplineBasis,
    history: &[Vec<f64>],
    x: &Vec3,
    a: f64,
    b: f64,
) -> Result<f64> {
    let row = probe_row(grid, basis, x, a, b)?;
    if row.depth >= history.len() {
        return Err(Error::InsufficientHistory {
            needed: row.depth + 1,
            available: history.len(),
        });
    }
    Ok(row.apply(|r| &history[r]))
}

/// Where the representation formula is checked.
#[derive(Clone, Copy, Debug)]
pub enum GrfTarget {
    Exterior(Vec3),
    /// A grid node, using the near-block auxiliary rule.
    Node(usize),
}

/// `|D u+ - S u_n+ - c u(x, t)|` for the field of an interior point source,
/// with `c = 1` off the surface and `c = 1/2` on it. Surface traces are
/// sampled exactly at the retarded times.
pub fn grf_residual(
    grid: &SurfaceGrid,
    source: &PointSource,
    target: GrfTarget,
    t: f64,
    rule: &AuxRule,
) -> Result<f64> {
    let sample = |k: &KernelWeights, delay: f64, y: &Vec3, n: &Vec3| {
        let tr = t - delay;
        k.d * source.value(y, tr) + k.w * source.time_derivative(y, tr)
            - k.s * source.normal_derivative(y, n, tr)
    };
    let (x, sources, factor) = match target {
        GrfTarget::Exterior(x) => (x, None, 1.0),
        GrfTarget::Node(i) => (grid.position(i), Some(i), 0.5),
    };
    let mut total = 0.0;
    for j in 0..grid.len() {
        if let Some(i) = sources {
            if !is_far(grid, i, j) {
                continue;
            }
        }
        let node = grid.node(j);
        let (k, delay) = KernelWeights::new(&x, &node.point.position, &node.point.normal, grid.weights()[j])
            .ok_or(Error::CoincidentPoints(j))?;
        total += sample(&k, delay, &node.point.position, &node.point.normal);
    }
    if let Some(i) = sources {
        for n in &rule.build(grid, i).nodes {
            total += sample(&n.weights, n.delay, &n.position, &n.normal);
        }
    }
    Ok((total - factor * source.value(&x, t)).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SurfaceSpec;

    #[test]
    fn aligned_target_double_layer_weight() {
        let x = Vec3::new(0.0, 0.0, 2.0);
        let (k, r) = KernelWeights::new(&x, &Vec3::zeros(), &Vec3::z(), 0.3).unwrap();
        assert_eq!(r, 2.0);
        assert!((k.d - 0.3 / (4.0 * PI * 4.0)).abs() < 1e-16);
        assert!((k.w - 0.3 / (4.0 * PI * 2.0)).abs() < 1e-16);
    }

    #[test]
    fn coincident_points_are_rejected() {
        let grid = SurfaceGrid::new(SurfaceSpec::torus(), 3, 3, 2).unwrap();
        let x = grid.position(5);
        assert!(matches!(far_kernel_weights(&grid, &x, 5), Err(Error::CoincidentPoints(5))));
    }

    #[test]
    fn aux_nodes_cover_the_near_block() {
        let grid = SurfaceGrid::new(SurfaceSpec::torus(), 12, 8, 6).unwrap();
        for i in [0, 7, 21, 100] {
            let set = build_aux_nodes(&grid, i, 12, 24);
            assert_eq!(set.nodes.len(), 4 * 12 * 24);
            assert!(set.nodes.iter().all(|n| n.uv[0].abs() < 3.0 && n.uv[1].abs() < 3.0));
            // Recover the area weights from the single-layer weights.
            let aux_area: f64 = set.nodes.iter().map(|n| n.weights.s * 4.0 * PI * n.delay).sum();
            let native: f64 = (0..grid.len())
                .filter(|&j| !is_far(&grid, i, j))
                .map(|j| grid.weights()[j])
                .sum();
            assert!((aux_area - native).abs() < 1e-11 * native, "{aux_area} vs {native}");
        }
    }

    #[test]
    fn far_classification_matches_block() {
        let grid = SurfaceGrid::new(SurfaceSpec::torus(), 5, 4, 2).unwrap();
        let i = 0;
        let near: usize = (0..grid.len()).filter(|&j| !is_far(&grid, i, j)).count();
        assert_eq!(near, 9 * 4);
    }
}
