//! Torus-like surfaces and their panel quadrature grids.
//!
//! A surface in this family is the image of the doubly periodic chart
//!
//! ```text
//! z(phi, theta) = ((1 + H cos theta) cos phi, (1 + H cos theta) sin phi, H sin theta)
//! ```
//!
//! with a positive height modulation `H(phi, theta) = H0 + A cos(k_phi phi + k_theta theta)`.
//! The parameter square is cut into `n_phi x n_theta` panels, each carrying a
//! tensor-product `p x p` Gauss-Legendre rule.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::gauss::GaussRule;
use crate::{Error, Result};

pub type Vec3 = Vector3<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurfaceKind {
    PlainTorus,
    Cruller,
    GeneralCosModulation,
}

/// Height-modulation parameters of a torus-like surface (major radius 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSpec {
    pub kind: SurfaceKind,
    pub base_height: f64,
    pub mod_amplitude: f64,
    pub mod_wavenumbers: (i32, i32),
}

impl SurfaceSpec {
    /// Plain torus, `H = 0.5`.
    pub fn torus() -> Self {
        Self {
            kind: SurfaceKind::PlainTorus,
            base_height: 0.5,
            mod_amplitude: 0.0,
            mod_wavenumbers: (0, 0),
        }
    }

    /// The "cruller", `H = 0.5 + 0.1 cos(5 phi + 3 theta)`.
    pub fn cruller() -> Self {
        Self {
            kind: SurfaceKind::Cruller,
            base_height: 0.5,
            mod_amplitude: 0.1,
            mod_wavenumbers: (5, 3),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "torus" | "plain-torus" => Ok(Self::torus()),
            "cruller" => Ok(Self::cruller()),
            other => Err(Error::InvalidSurface(format!("unknown preset '{other}'"))),
        }
    }

    pub fn height(&self, phi: f64, theta: f64) -> f64 {
        let (kp, kt) = self.mod_wavenumbers;
        self.base_height + self.mod_amplitude * (kp as f64 * phi + kt as f64 * theta).cos()
    }

    /// `(H, dH/dphi, dH/dtheta)`.
    fn height_with_partials(&self, phi: f64, theta: f64) -> (f64, f64, f64) {
        let (kp, kt) = (self.mod_wavenumbers.0 as f64, self.mod_wavenumbers.1 as f64);
        let arg = kp * phi + kt * theta;
        let (s, c) = arg.sin_cos();
        (
            self.base_height + self.mod_amplitude * c,
            -self.mod_amplitude * kp * s,
            -self.mod_amplitude * kt * s,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_height.is_finite() && self.mod_amplitude.is_finite()) {
            return Err(Error::InvalidSurface("non-finite height parameters".into()));
        }
        if self.base_height - self.mod_amplitude.abs() <= 0.0 {
            return Err(Error::InvalidSurface(format!(
                "height modulation must stay positive (H0 = {}, A = {})",
                self.base_height, self.mod_amplitude
            )));
        }
        if self.base_height + self.mod_amplitude.abs() >= 1.0 {
            return Err(Error::InvalidSurface(
                "tube reaches the symmetry axis (H must stay below the major radius)".into(),
            ));
        }
        Ok(())
    }
}

/// A point of the chart with its tangent frame.
#[derive(Clone, Copy, Debug)]
pub struct SurfacePoint {
    pub position: Vec3,
    pub d_phi: Vec3,
    pub d_theta: Vec3,
    /// Unit normal pointing out of the obstacle.
    pub normal: Vec3,
    /// `|d_phi x d_theta|`.
    pub jacobian: f64,
}

/// A validated surface with its normal orientation fixed.
#[derive(Clone, Debug)]
pub struct Surface {
    spec: SurfaceSpec,
    orientation: f64,
}

impl Surface {
    pub fn new(spec: SurfaceSpec) -> Result<Self> {
        spec.validate()?;
        let mut surface = Self {
            spec,
            orientation: 1.0,
        };
        // On the outer equator (phi = theta = 0) the outward normal is +x.
        let reference = surface.eval(0.0, 0.0);
        if reference.normal.x < 0.0 {
            surface.orientation = -1.0;
        }
        Ok(surface)
    }

    pub fn spec(&self) -> &SurfaceSpec {
        &self.spec
    }

    pub fn eval(&self, phi: f64, theta: f64) -> SurfacePoint {
        let (h, h_phi, h_theta) = self.spec.height_with_partials(phi, theta);
        let (sp, cp) = phi.sin_cos();
        let (st, ct) = theta.sin_cos();
        let radial = 1.0 + h * ct;
        let position = Vec3::new(radial * cp, radial * sp, h * st);
        let radial_phi = h_phi * ct;
        let d_phi = Vec3::new(
            radial_phi * cp - radial * sp,
            radial_phi * sp + radial * cp,
            h_phi * st,
        );
        let radial_theta = h_theta * ct - h * st;
        let d_theta = Vec3::new(radial_theta * cp, radial_theta * sp, h_theta * st + h * ct);
        let cross = d_phi.cross(&d_theta);
        let jacobian = cross.norm();
        SurfacePoint {
            position,
            d_phi,
            d_theta,
            normal: cross * (self.orientation / jacobian),
            jacobian,
        }
    }

    /// Whether `x` lies strictly inside the obstacle.
    ///
    /// Each meridional cross-section is star-shaped about the tube center, so
    /// the test is exact for the whole family.
    pub fn contains(&self, x: &Vec3) -> bool {
        let phi = x.y.atan2(x.x);
        let rho = x.x.hypot(x.y) - 1.0;
        let theta = x.z.atan2(rho);
        rho.hypot(x.z) < self.spec.height(phi, theta)
    }
}

/// One quadrature node of a [`SurfaceGrid`].
#[derive(Clone, Copy, Debug)]
pub struct GridNode {
    pub phi: f64,
    pub theta: f64,
    pub point: SurfacePoint,
}

/// Panelized Gauss-Legendre quadrature grid on a surface.
///
/// Nodes are ordered fast within panels and slow between panels; panel
/// `(ip, it)` has index `ip * n_theta + it`, and within a panel node `(a, b)`
/// (phi index, theta index) has local index `a * p + b`.
#[derive(Clone, Debug)]
pub struct SurfaceGrid {
    surface: Surface,
    n_phi: usize,
    n_theta: usize,
    p: usize,
    rule: GaussRule,
    nodes: Vec<GridNode>,
    weights: Vec<f64>,
}

impl SurfaceGrid {
    pub fn new(spec: SurfaceSpec, n_phi: usize, n_theta: usize, p: usize) -> Result<Self> {
        if n_phi < 3 || n_theta < 3 {
            return Err(Error::InvalidGrid(format!(
                "panel counts must be at least 3 (got {n_phi} x {n_theta})"
            )));
        }
        if p < 2 {
            return Err(Error::InvalidGrid(format!("p must be at least 2 (got {p})")));
        }
        let surface = Surface::new(spec)?;
        let rule = GaussRule::standard(p);
        let scale = (2.0 * PI).powi(2) / (n_phi * n_theta) as f64;
        let n = n_phi * n_theta * p * p;
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for ip in 0..n_phi {
            for it in 0..n_theta {
                for a in 0..p {
                    for b in 0..p {
                        let phi = PI * (2.0 * ip as f64 + rule.nodes[a] + 1.0) / n_phi as f64;
                        let theta = PI * (2.0 * it as f64 + rule.nodes[b] + 1.0) / n_theta as f64;
                        let point = surface.eval(phi, theta);
                        // Weights of the [-1,1] rule are twice those on [0,1].
                        let eta = 0.25 * rule.weights[a] * rule.weights[b];
                        weights.push(scale * eta * point.jacobian);
                        nodes.push(GridNode { phi, theta, point });
                    }
                }
            }
        }
        Ok(Self {
            surface,
            n_phi,
            n_theta,
            p,
            rule,
            nodes,
            weights,
        })
    }

    /// Default theta panel count used by the presets, `round(2 n_phi / 3)`.
    pub fn default_n_theta(n_phi: usize) -> usize {
        ((2 * n_phi) as f64 / 3.0).round().max(3.0) as usize
    }

    pub fn surface(&self) -> &Surface {
        &self.surface
    }

    pub fn spec(&self) -> &SurfaceSpec {
        self.surface.spec()
    }

    pub fn n_phi(&self) -> usize {
        self.n_phi
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_panels(&self) -> usize {
        self.n_phi * self.n_theta
    }

    pub fn nodes_per_panel(&self) -> usize {
        self.p * self.p
    }

    pub fn nodes(&self) -> &[GridNode] {
        &self.nodes
    }

    pub fn node(&self, j: usize) -> &GridNode {
        &self.nodes[j]
    }

    pub fn position(&self, j: usize) -> Vec3 {
        self.nodes[j].point.position
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Standard Gauss-Legendre nodes on `[-1, 1]` used inside every panel.
    pub fn panel_rule(&self) -> &GaussRule {
        &self.rule
    }

    pub fn panel_of_node(&self, j: usize) -> usize {
        j / (self.p * self.p)
    }

    /// `(phi index, theta index)` of node `j` inside its panel.
    pub fn index_in_panel(&self, j: usize) -> (usize, usize) {
        let local = j % (self.p * self.p);
        (local / self.p, local % self.p)
    }

    pub fn panel_coords(&self, panel: usize) -> (usize, usize) {
        (panel / self.n_theta, panel % self.n_theta)
    }

    pub fn panel_index(&self, ip: isize, it: isize) -> usize {
        let ip = ip.rem_euclid(self.n_phi as isize) as usize;
        let it = it.rem_euclid(self.n_theta as isize) as usize;
        ip * self.n_theta + it
    }

    /// Range of node indices belonging to `panel`.
    pub fn panel_nodes(&self, panel: usize) -> std::ops::Range<usize> {
        let pp = self.p * self.p;
        panel * pp..(panel + 1) * pp
    }

    /// The 3x3 block of panels around `panel` as `(panel, du, dv)` with
    /// offsets in `{-1, 0, 1}`, ordered by `du` then `dv`.
    pub fn near_block(&self, panel: usize) -> [(usize, i32, i32); 9] {
        let (ip, it) = self.panel_coords(panel);
        let mut out = [(0, 0, 0); 9];
        let mut k = 0;
        for du in -1..=1 {
            for dv in -1..=1 {
                out[k] = (
                    self.panel_index(ip as isize + du as isize, it as isize + dv as isize),
                    du,
                    dv,
                );
                k += 1;
            }
        }
        out
    }

    /// The eight wrap-around neighbors of `panel`.
    pub fn neighbors(&self, panel: usize) -> [usize; 8] {
        let block = self.near_block(panel);
        let mut out = [0; 8];
        let mut k = 0;
        for &(q, du, dv) in &block {
            if du != 0 || dv != 0 {
                out[k] = q;
                k += 1;
            }
        }
        out
    }

    /// Evaluates the chart of the 3x3 block centered on `panel` at standard
    /// coordinates `(u, v)` in `[-3, 3]^2`. Returns the surface point and the
    /// Jacobian of the composed map `(u, v) -> R^3`.
    pub fn block_chart(&self, panel: usize, u: f64, v: f64) -> (SurfacePoint, f64) {
        let (ip, it) = self.panel_coords(panel);
        let phi = PI * (2.0 * ip as f64 + u + 1.0) / self.n_phi as f64;
        let theta = PI * (2.0 * it as f64 + v + 1.0) / self.n_theta as f64;
        let point = self.surface.eval(phi, theta);
        let affine = PI * PI / (self.n_phi * self.n_theta) as f64;
        (point, point.jacobian * affine)
    }

    /// Quadrature approximation of the surface area.
    pub fn area(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `sum_j w_j f(x_j)`.
    pub fn integrate(&self, mut f: impl FnMut(&GridNode) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(node, &w)| w * f(node))
            .sum()
    }

    /// Mean node spacing `sqrt(area / N)`, with the area from the grid's own rule.
    pub fn resolution(&self) -> f64 {
        (self.area() / self.len() as f64).sqrt()
    }

    /// Largest distance between any two nodes.
    pub fn max_node_distance(&self) -> f64 {
        use rayon::prelude::*;
        let pos: Vec<Vec3> = self.nodes.iter().map(|n| n.point.position).collect();
        pos.par_iter()
            .enumerate()
            .map(|(i, xi)| {
                pos[i + 1..]
                    .iter()
                    .map(|xj| (xi - xj).norm_squared())
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
            .sqrt()
    }

    /// Smallest distance from `x` to any node.
    pub fn min_node_distance(&self, x: &Vec3) -> f64 {
        self.nodes
            .iter()
            .map(|n| (n.point.position - x).norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// A representative panel diameter in space (largest over panels of the
    /// distance between opposite parameter corners).
    pub fn panel_size(&self) -> f64 {
        let mut size: f64 = 0.0;
        for panel in 0..self.n_panels() {
            let (a, _) = self.block_chart(panel, -1.0, -1.0);
            let (b, _) = self.block_chart(panel, 1.0, 1.0);
            let (c, _) = self.block_chart(panel, -1.0, 1.0);
            let (d, _) = self.block_chart(panel, 1.0, -1.0);
            size = size
                .max((a.position - b.position).norm())
                .max((c.position - d.position).norm());
        }
        size
    }
}

/// Chooses panel counts whose resolution is closest to `target_dx`, keeping
/// `n_theta` between `n_phi / 2` and `2 n_phi / 3` so panels stay close to
/// square.
pub fn grid_for_resolution(
    spec: &SurfaceSpec,
    p: usize,
    target_dx: f64,
) -> Result<(usize, usize)> {
    let surface_area = SurfaceGrid::new(spec.clone(), 12, 8, 8.max(p))?.area();
    let mut best = None;
    for n_phi in 3..=120usize {
        let lo = (n_phi as f64 / 2.0).ceil().max(3.0) as usize;
        let hi = SurfaceGrid::default_n_theta(n_phi).max(lo);
        for n_theta in lo..=hi {
            let n = (n_phi * n_theta * p * p) as f64;
            let dx = (surface_area / n).sqrt();
            let err = (dx / target_dx).ln().abs();
            if best.is_none_or(|(e, _, _)| err < e) {
                best = Some((err, n_phi, n_theta));
            }
        }
    }
    let (_, n_phi, n_theta) = best.expect("search range is non-empty");
    Ok((n_phi, n_theta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_vec_close(a: Vec3, b: Vec3, tol: f64) {
        assert!((a - b).norm() < tol, "{a:?} vs {b:?}");
    }

    #[test]
    fn torus_reference_points() {
        let s = Surface::new(SurfaceSpec::torus()).unwrap();
        assert_vec_close(s.eval(0.0, 0.0).position, Vec3::new(1.5, 0.0, 0.0), 1e-15);
        assert_vec_close(s.eval(0.0, PI).position, Vec3::new(0.5, 0.0, 0.0), 1e-15);
        let c = Surface::new(SurfaceSpec::cruller()).unwrap();
        assert!((c.spec().height(0.0, 0.0) - 0.6).abs() < 1e-15);
        assert_vec_close(c.eval(0.0, 0.0).position, Vec3::new(1.6, 0.0, 0.0), 1e-15);
    }

    #[test]
    fn normal_points_away_from_tube_axis() {
        let s = Surface::new(SurfaceSpec::cruller()).unwrap();
        for k in 0..50 {
            let phi = 0.37 * k as f64;
            let theta = 1.13 * k as f64;
            let pt = s.eval(phi, theta);
            let axis = Vec3::new(phi.cos(), phi.sin(), 0.0);
            assert!(pt.normal.dot(&(pt.position - axis)) > 0.0);
            assert!(!s.contains(&(pt.position + 0.01 * pt.normal)));
            assert!(s.contains(&(pt.position - 0.01 * pt.normal)));
        }
    }

    #[test]
    fn partials_match_central_differences() {
        let s = Surface::new(SurfaceSpec::cruller()).unwrap();
        let delta = 1e-5;
        for k in 0..40 {
            let (phi, theta) = (0.71 * k as f64, 2.3 + 0.53 * k as f64);
            let pt = s.eval(phi, theta);
            let fd_phi = (s.eval(phi + delta, theta).position
                - s.eval(phi - delta, theta).position)
                / (2.0 * delta);
            let fd_theta = (s.eval(phi, theta + delta).position
                - s.eval(phi, theta - delta).position)
                / (2.0 * delta);
            assert_vec_close(pt.d_phi, fd_phi, 1e-8);
            assert_vec_close(pt.d_theta, fd_theta, 1e-8);
            assert!((pt.jacobian - pt.d_phi.cross(&pt.d_theta).norm()).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_small_panel_counts() {
        assert!(SurfaceGrid::new(SurfaceSpec::torus(), 2, 6, 4).is_err());
        assert!(SurfaceGrid::new(SurfaceSpec::torus(), 6, 2, 4).is_err());
        assert!(SurfaceGrid::new(SurfaceSpec::torus(), 6, 4, 1).is_err());
    }

    #[test]
    fn rejects_non_positive_height() {
        let mut spec = SurfaceSpec::cruller();
        spec.mod_amplitude = 0.6;
        assert!(Surface::new(spec).is_err());
    }

    #[test]
    fn node_count_and_torus_area() {
        let grid = SurfaceGrid::new(SurfaceSpec::torus(), 9, 6, 6).unwrap();
        assert_eq!(grid.len(), 1944);
        assert!(grid.weights().iter().all(|&w| w > 0.0));
        assert!((grid.area() - 2.0 * PI * PI).abs() < 1e-12);
        // sqrt(2 pi^2 / 1944)
        assert!((grid.resolution() - 0.100_766).abs() < 1e-5);
    }

    #[test]
    fn resolution_halves_when_panels_double() {
        let a = SurfaceGrid::new(SurfaceSpec::torus(), 6, 4, 4).unwrap();
        let b = SurfaceGrid::new(SurfaceSpec::torus(), 12, 8, 4).unwrap();
        assert!((a.resolution() / b.resolution() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cruller_area_self_converges() {
        let areas: Vec<f64> = [12, 18, 24]
            .iter()
            .map(|&n| {
                SurfaceGrid::new(SurfaceSpec::cruller(), n, SurfaceGrid::default_n_theta(n), 8)
                    .unwrap()
                    .area()
            })
            .collect();
        assert!((areas[2] - areas[1]).abs() < 1e-8, "{areas:?}");
        assert!((areas[2] - areas[1]).abs() < (areas[1] - areas[0]).abs());
    }

    #[test]
    fn smooth_integrand_converges_at_high_order() {
        // Periodic, non-polynomial test integrand on the cruller.
        let f = |n: &GridNode| (n.point.position.x + 0.3 * n.point.position.z).exp();
        let p = 3;
        let errs: Vec<(f64, f64)> = {
            let reference = SurfaceGrid::new(SurfaceSpec::cruller(), 30, 20, 10)
                .unwrap()
                .integrate(f);
            [12usize, 18, 24]
                .iter()
                .map(|&n| {
                    let g = SurfaceGrid::new(SurfaceSpec::cruller(), n, 2 * n / 3, p).unwrap();
                    (g.resolution(), (g.integrate(f) - reference).abs())
                })
                .collect()
        };
        let slope = (errs[2].1 / errs[0].1).ln() / (errs[2].0 / errs[0].0).ln();
        assert!(slope >= (2 * p - 1) as f64, "observed order {slope}, errors {errs:?}");
    }

    #[test]
    fn neighbor_table_is_symmetric_and_periodic() {
        let grid = SurfaceGrid::new(SurfaceSpec::torus(), 5, 3, 2).unwrap();
        for panel in 0..grid.n_panels() {
            let nb = grid.neighbors(panel);
            assert!(!nb.contains(&panel));
            for q in nb {
                assert!(grid.neighbors(q).contains(&panel));
            }
        }
        assert_eq!(grid.panel_index(-1, -1), grid.panel_index(4, 2));
    }

    #[test]
    fn block_chart_reproduces_nodes() {
        let grid = SurfaceGrid::new(SurfaceSpec::cruller(), 6, 4, 5).unwrap();
        let x = &grid.panel_rule().nodes;
        let panel = grid.panel_index(5, 3);
        for &(q, du, dv) in &grid.near_block(panel) {
            for j in grid.panel_nodes(q) {
                let (a, b) = grid.index_in_panel(j);
                let (pt, _) = grid.block_chart(panel, x[a] + 2.0 * du as f64, x[b] + 2.0 * dv as f64);
                assert_vec_close(pt.position, grid.position(j), 1e-12);
            }
        }
    }

    #[test]
    fn grid_search_hits_target_resolution() {
        let (n_phi, n_theta) = grid_for_resolution(&SurfaceSpec::torus(), 4, 0.21).unwrap();
        let g = SurfaceGrid::new(SurfaceSpec::torus(), n_phi, n_theta, 4).unwrap();
        assert!((g.resolution() - 0.21).abs() < 0.01, "{n_phi}x{n_theta}");
    }
}
