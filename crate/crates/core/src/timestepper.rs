//! Time marching of the discretized boundary integral equation
//!
//! ```text
//! (1/2 I + A^0) mu^k = g^k - sum_{r >= 1} A^r mu^{k-r}
//! ```
//!
//! either by extrapolation plus shifted Jacobi sweeps or by a direct solve.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::HistoryOperator;
use crate::quadrature::ProbeRow;
use crate::{Error, Result};

/// Ring buffer of past densities with zero prehistory.
#[derive(Clone, Debug)]
pub struct DensityHistory {
    slots: Vec<Vec<f64>>,
    zeros: Vec<f64>,
    /// Index of the most recently stored step; `mu^0 = 0` is step 0.
    last: usize,
}

impl DensityHistory {
    /// Holds `mu^{k}, ..., mu^{k - capacity + 1}`.
    pub fn new(n_nodes: usize, capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Self {
            slots: vec![vec![0.0; n_nodes]; capacity],
            zeros: vec![0.0; n_nodes],
            last: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    /// Most recently stored step index.
    pub fn last_step(&self) -> usize {
        self.last
    }

    /// `mu^{last - r}`, zero before the start.
    pub fn back(&self, r: usize) -> &[f64] {
        assert!(r < self.slots.len(), "history lookback {r} exceeds capacity {}", self.slots.len());
        if r > self.last {
            &self.zeros
        } else {
            &self.slots[(self.last - r) % self.slots.len()]
        }
    }

    /// Stores `mu^{last + 1}`.
    pub fn push(&mut self, mu: &[f64]) {
        self.last += 1;
        let n = self.slots.len();
        self.slots[self.last % n].copy_from_slice(mu);
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMode {
    #[default]
    Explicit,
    Implicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarchConfig {
    pub dt: f64,
    pub t_final: f64,
    /// Jacobi sweeps per step.
    pub n_c: usize,
    /// Diagonal shift of the Jacobi preconditioner.
    pub d: f64,
    /// Extrapolation order; `None` means `2q`.
    pub m: Option<usize>,
    pub mode: SolveMode,
    /// The run stops once `||mu||_inf` exceeds this value.
    pub blowup_cap: f64,
    /// Times at which the full density is recorded.
    pub snapshot_times: Vec<f64>,
}

impl MarchConfig {
    pub fn new(dt: f64, t_final: f64) -> Self {
        Self {
            dt,
            t_final,
            n_c: 8,
            d: 0.25,
            m: None,
            mode: SolveMode::Explicit,
            blowup_cap: 1e6,
            snapshot_times: Vec::new(),
        }
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.t_final >= 0.0) {
            return Err(Error::Config(format!("invalid time grid dt={} T={}", self.dt, self.t_final)));
        }
        if self.m == Some(0) {
            return Err(Error::Config("extrapolation order must be at least 1".into()));
        }
        Ok(())
    }
}

/// `c_r = prod_{s != r} s / (s - r)`, `r = 1..=m`: Lagrange polynomials on
/// `t_{k-1}, ..., t_{k-m}` evaluated at `t_k`.
pub fn extrapolation_coefficients(m: usize) -> Vec<f64> {
    (1..=m)
        .map(|r| {
            (1..=m)
                .filter(|&s| s != r)
                .map(|s| s as f64 / (s as f64 - r as f64))
                .product()
        })
        .collect()
}

/// `sum_r c_r mu^{k-r}` where `history.back(0)` is `mu^{k-1}`.
pub fn predict(history: &DensityHistory, coeffs: &[f64]) -> Result<Vec<f64>> {
    if coeffs.len() > history.capacity() {
        return Err(Error::InsufficientHistory {
            needed: coeffs.len(),
            available: history.capacity(),
        });
    }
    let n = history.back(0).len();
    let mut out = vec![0.0; n];
    for (r, &c) in coeffs.iter().enumerate() {
        for (o, &v) in out.iter_mut().zip(history.back(r)) {
            *o += c * v;
        }
    }
    Ok(out)
}

/// `g - sum_{r >= 1} A^r mu^{k-r}` where `history.back(0)` is `mu^{k-1}`.
pub fn rhs_history(op: &HistoryOperator, history: &DensityHistory, g: &[f64]) -> Result<Vec<f64>> {
    if op.depth() > history.capacity() {
        return Err(Error::InsufficientHistory {
            needed: op.depth(),
            available: history.capacity(),
        });
    }
    let mut out = g.to_vec();
    op.subtract_history(|r| history.back(r - 1), &mut out);
    Ok(out)
}

/// Shifted Jacobi iteration for `(1/2 I + A^0) mu = g`.
#[derive(Clone, Debug)]
pub struct JacobiCorrector {
    /// `B_jj = 1/2 + A^0_jj + d`.
    pub pivots: Vec<f64>,
    pub sweeps: usize,
}

impl JacobiCorrector {
    pub fn new(op: &HistoryOperator, d: f64, sweeps: usize) -> Result<Self> {
        let pivots: Vec<f64> = op.matrix(0).diagonal().iter().map(|a| 0.5 + a + d).collect();
        if let Some((index, &value)) = pivots.iter().enumerate().find(|(_, v)| v.abs() < 1e-14) {
            return Err(Error::SingularPivot { index, value });
        }
        Ok(Self { pivots, sweeps })
    }

    /// `mu <- (g - (1/2 I + A^0 - B) mu) / B`, `sweeps` times.
    pub fn correct(&self, op: &HistoryOperator, g: &[f64], mut mu: Vec<f64>) -> Vec<f64> {
        let a0 = op.matrix(0);
        let mut next = vec![0.0; mu.len()];
        for _ in 0..self.sweeps {
            next.par_iter_mut().enumerate().for_each(|(j, out)| {
                let b = self.pivots[j];
                let off = 0.5 * mu[j] + a0.row_dot(j, &mu) - b * mu[j];
                *out = (g[j] - off) / b;
            });
            std::mem::swap(&mut mu, &mut next);
        }
        mu
    }
}

/// Dense LU factorization of `1/2 I + A^0`.
pub struct DirectSolver {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl DirectSolver {
    pub fn new(op: &HistoryOperator) -> Result<Self> {
        let n = op.len();
        let a0 = op.matrix(0);
        let mut m = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 0.5;
            let (cols, vals) = a0.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                m[(i, j as usize)] += v;
            }
        }
        let lu = m.lu();
        let diag = lu.u().diagonal();
        let scale = diag.amax().max(f64::MIN_POSITIVE);
        if let Some((index, &value)) = diag.iter().enumerate().find(|(_, v)| v.abs() <= 1e-14 * scale) {
            return Err(Error::SingularPivot { index, value });
        }
        Ok(Self { lu })
    }

    pub fn solve(&self, g: &[f64]) -> Vec<f64> {
        let x = self
            .lu
            .solve(&DVector::from_column_slice(g))
            .expect("factorization checked for singular pivots");
        x.as_slice().to_vec()
    }
}

/// Solves one step directly.
pub fn implicit_step(op: &HistoryOperator, g_tilde: &[f64]) -> Result<Vec<f64>> {
    Ok(DirectSolver::new(op)?.solve(g_tilde))
}

/// Per-step records of a run; index 0 is `t = 0`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MarchResult {
    pub dt: f64,
    pub times: Vec<f64>,
    pub mu_inf: Vec<f64>,
    pub g_inf: Vec<f64>,
    /// `probes[p][k]` is the retarded potential at probe `p` and step `k`.
    pub probes: Vec<Vec<f64>>,
    pub snapshots: Vec<(f64, Vec<f64>)>,
    /// Set when the run stopped at the blow-up cap.
    pub blew_up: bool,
}

impl MarchResult {
    /// Slope of `ln ||mu||_inf` against `t` over `[t0, t1]`.
    pub fn growth_rate(&self, t0: f64, t1: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .times
            .iter()
            .zip(&self.mu_inf)
            .filter(|(t, m)| **t >= t0 && **t <= t1 && **m > 0.0)
            .map(|(&t, &m)| (t, m.ln()))
            .collect();
        fit_slope(&pts)
    }

    /// Growth rate over the final 20% of the recorded steps.
    pub fn final_growth_rate(&self) -> Option<f64> {
        let t_end = *self.times.last()?;
        self.growth_rate(0.8 * t_end, t_end)
    }

    /// Slope of `||mu||_inf` against `t` over `[t0, t1]`.
    pub fn linear_trend(&self, t0: f64, t1: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .times
            .iter()
            .zip(&self.mu_inf)
            .filter(|(t, _)| **t >= t0 && **t <= t1)
            .map(|(&t, &m)| (t, m))
            .collect();
        fit_slope(&pts)
    }
}

/// Least-squares slope, `None` with fewer than two points.
pub fn fit_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Marches `k = 1..=T/dt`. `data(t, g)` fills the Dirichlet data at all nodes.
/// Probes are evaluated from `mu^{k}, mu^{k-1}, ...` after each step.
pub fn march(
    op: &HistoryOperator,
    config: &MarchConfig,
    data: impl Fn(f64, &mut [f64]),
    probes: &[ProbeRow],
) -> Result<MarchResult> {
    config.validate()?;
    let n = op.len();
    let m = config.m.unwrap_or(2 * op.meta.q);
    let coeffs = extrapolation_coefficients(m);
    let probe_depth = probes.iter().map(|p| p.depth + 1).max().unwrap_or(0);
    let mut history = DensityHistory::new(n, op.depth().max(m).max(probe_depth));

    let (jacobi, direct) = match config.mode {
        SolveMode::Explicit => (Some(JacobiCorrector::new(op, config.d, config.n_c)?), None),
        SolveMode::Implicit => (None, Some(DirectSolver::new(op)?)),
    };

    let steps = config.steps();
    let mut result = MarchResult {
        dt: config.dt,
        times: vec![0.0],
        mu_inf: vec![0.0],
        g_inf: vec![0.0],
        probes: vec![vec![0.0]; probes.len()],
        ..Default::default()
    };
    let mut snapshots: Vec<f64> = config.snapshot_times.clone();
    snapshots.sort_by(f64::total_cmp);
    let mut next_snapshot = 0;

    let mut g = vec![0.0; n];
    for k in 1..=steps {
        let t = k as f64 * config.dt;
        data(t, &mut g);
        let g_tilde = rhs_history(op, &history, &g)?;
        let mu = match (&jacobi, &direct) {
            (Some(j), _) => j.correct(op, &g_tilde, predict(&history, &coeffs)?),
            (_, Some(d)) => d.solve(&g_tilde),
            _ => unreachable!("one solver is always configured"),
        };
        history.push(&mu);

        let mu_inf = max_abs(&mu);
        result.times.push(t);
        result.mu_inf.push(mu_inf);
        result.g_inf.push(max_abs(&g));
        for (row, out) in probes.iter().zip(result.probes.iter_mut()) {
            out.push(row.apply(|r| history.back(r)));
        }
        while next_snapshot < snapshots.len() && snapshots[next_snapshot] <= t + 0.5 * config.dt {
            result.snapshots.push((t, mu.clone()));
            next_snapshot += 1;
        }
        if !mu_inf.is_finite() || mu_inf > config.blowup_cap {
            result.blew_up = true;
            break;
        }
    }
    Ok(result)
}
