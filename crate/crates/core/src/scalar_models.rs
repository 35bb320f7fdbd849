//! Scalar testbeds for the temporal discretization.
//!
//! * The Volterra equation `u(t) + int_0^1 u(t - s) ds = f(t)`.
//! * The modal problem on the unit sphere,
//!   `mu_n/2 + 1/4 int_0^2 P_n(1 - s^2/2) (mu_n(t - s) + (2 - s) mu_n'(t - s)) ds = g_n(t)`,
//!   whose time-derivative term produces a minimum stable time step.
//!
//! Both reduce to lower-triangular Toeplitz systems marched one step at a time.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dspline::DSplineBasis;
use crate::gauss::GaussRule;
use crate::{Error, Result};

/// Legendre polynomial `P_n(x)` by the three-term recurrence.
pub fn legendre_p(n: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if n == 0 {
        return prev;
    }
    for k in 1..n {
        let k = k as f64;
        let next = ((2.0 * k + 1.0) * x * cur - k * prev) / (k + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Convolution weights of a discretized delay operator: `weights[r]` multiplies
/// the unknown `r` steps in the past.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvolutionWeights {
    pub weights: Vec<f64>,
    /// Number of quadrature nodes.
    pub p: usize,
    pub q: usize,
    /// Mode index for the sphere problem.
    pub n: Option<usize>,
}

impl ConvolutionWeights {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Quadrature-weighted samples `sum_l w_l * f(tau_l, stencil)` accumulated into
/// a weight vector long enough for the largest delay.
fn accumulate(
    rule: &GaussRule,
    basis: &DSplineBasis,
    mut f: impl FnMut(f64, f64, f64) -> f64,
) -> Vec<f64> {
    let max_tau = rule.nodes.iter().cloned().fold(0.0, f64::max);
    let mut out = vec![0.0; basis.max_node_for_delay(max_tau) + 1];
    for (&tau, &w) in rule.nodes.iter().zip(&rule.weights) {
        for (r, v, d) in basis.stencil(tau).iter() {
            out[r] += w * f(tau, v, d);
        }
    }
    out
}

/// `W^r = sum_l w_l omega_r(tau_l)` with the `p`-point Gauss rule on `[0, 1]`.
pub fn volterra_weights(p: usize, basis: &DSplineBasis) -> ConvolutionWeights {
    assert!(p >= 1, "need at least one quadrature node");
    let rule = GaussRule::unit(p);
    ConvolutionWeights {
        weights: accumulate(&rule, basis, |_, v, _| v),
        p,
        q: basis.q(),
        n: None,
    }
}

/// Weights `V^r` of mode `n` of the sphere problem with the `p`-point Gauss
/// rule on `[0, 2]`.
pub fn modal_weights(n: usize, p: usize, basis: &DSplineBasis) -> ConvolutionWeights {
    assert!(p >= 1, "need at least one quadrature node");
    let rule = GaussRule::on_interval(p, 0.0, 2.0);
    ConvolutionWeights {
        weights: accumulate(&rule, basis, |tau, v, d| {
            0.25 * legendre_p(n, 1.0 - 0.5 * tau * tau) * (v + (2.0 - tau) * d)
        }),
        p,
        q: basis.q(),
        n: Some(n),
    }
}

/// Solves `diag * u^k + sum_r W^r u^{k-r} = f(t_k)` for `k = 1..=steps`.
///
/// `history` must hold the prehistory `u^{1-len}, .., u^0` (oldest first, at
/// least `len - 1` values); solved values are appended to it. `monitor` sees
/// each new value and may stop the march early by returning `false`.
fn march_toeplitz(
    diag: f64,
    w: &[f64],
    rhs: impl Fn(usize) -> f64,
    steps: usize,
    history: &mut Vec<f64>,
    mut monitor: impl FnMut(f64) -> bool,
) -> Result<()> {
    let pivot = diag + w[0];
    if pivot.abs() < 1e-12 {
        return Err(Error::SingularPivot {
            index: 0,
            value: pivot,
        });
    }
    let depth = w.len() - 1;
    if history.len() < depth {
        return Err(Error::InsufficientHistory {
            needed: depth,
            available: history.len(),
        });
    }
    history.reserve(steps);
    for k in 1..=steps {
        let end = history.len();
        let past = &history[end - depth..];
        let conv: f64 = w[1..].iter().zip(past.iter().rev()).map(|(a, b)| a * b).sum();
        let u = (rhs(k) - conv) / pivot;
        history.push(u);
        if !monitor(u) {
            break;
        }
    }
    Ok(())
}

/// Discrete solution `u^k = u(k dt)` for `k = 0..=steps`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    pub dt: f64,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn march_with_prehistory(
    diag: f64,
    weights: &ConvolutionWeights,
    f: impl Fn(f64) -> f64,
    t_final: f64,
    dt: f64,
    prehistory: impl Fn(f64) -> f64,
) -> Result<TimeSeries> {
    let depth = weights.len().saturating_sub(1).max(1);
    let steps = (t_final / dt).round() as usize;
    let mut history: Vec<f64> = (0..depth)
        .map(|i| prehistory(-((depth - 1 - i) as f64) * dt))
        .collect();
    march_toeplitz(diag, &weights.weights, |k| f(k as f64 * dt), steps, &mut history, |_| true)?;
    Ok(TimeSeries {
        dt,
        values: history[depth - 1..].to_vec(),
    })
}

/// Marches the Volterra equation to `t_final`; `prehistory(t)` supplies
/// `u(t)` for `t <= 0`.
pub fn volterra_march(
    weights: &ConvolutionWeights,
    f: impl Fn(f64) -> f64,
    t_final: f64,
    dt: f64,
    prehistory: impl Fn(f64) -> f64,
) -> Result<TimeSeries> {
    march_with_prehistory(1.0, weights, f, t_final, dt, prehistory)
}

/// Marches mode `weights.n` of the sphere problem from zero prehistory.
pub fn modal_march(
    weights: &ConvolutionWeights,
    g: impl Fn(f64) -> f64,
    t_final: f64,
    dt: f64,
) -> Result<TimeSeries> {
    march_with_prehistory(0.5, weights, g, t_final, dt, |_| 0.0)
}

/// Pulse used as boundary data for every mode in the stability scan.
pub fn modal_pulse(t: f64) -> f64 {
    10.0 * (-10.0 * (t - 2.0) * (t - 2.0)).exp()
}

/// Largest `|mu_n|` over a march, stopping as soon as `limit` is exceeded.
fn modal_peak(n: usize, p: usize, basis: &DSplineBasis, t_final: f64, limit: f64) -> Result<f64> {
    let weights = modal_weights(n, p, basis);
    let dt = basis.dt();
    let steps = (t_final / dt).round() as usize;
    let mut history = vec![0.0; weights.len().max(2) - 1];
    let mut peak = 0.0f64;
    march_toeplitz(
        0.5,
        &weights.weights,
        |k| modal_pulse(k as f64 * dt),
        steps,
        &mut history,
        |u| {
            peak = peak.max(u.abs());
            peak.is_finite() && peak <= limit
        },
    )?;
    Ok(if peak.is_finite() { peak } else { f64::INFINITY })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScanOptions {
    pub t_final: f64,
    /// CFL number `dt/h` of the run that defines the expected peak of each mode.
    pub reference_cfl: f64,
    /// A run is unstable if some mode exceeds this multiple of its expected peak.
    pub growth_factor: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            t_final: 100.0,
            reference_cfl: 3.0,
            growth_factor: 1.1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScanEntry {
    pub p: usize,
    pub cfl: f64,
    pub stable: bool,
    /// First mode found to exceed the growth limit.
    pub unstable_mode: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScanResult {
    pub q: usize,
    pub entries: Vec<ScanEntry>,
    /// Lower edge of the stable CFL range containing the reference CFL, for
    /// each `p`; `None` if the grid value closest to the reference is unstable.
    pub min_stable_cfl: Vec<(usize, Option<f64>)>,
}

impl ScanResult {
    pub fn is_stable(&self, p: usize, cfl: f64) -> Option<bool> {
        self.entries
            .iter()
            .find(|e| e.p == p && (e.cfl - cfl).abs() < 1e-9)
            .map(|e| e.stable)
    }

    pub fn min_stable(&self, p: usize) -> Option<f64> {
        self.min_stable_cfl.iter().find(|(pp, _)| *pp == p).and_then(|(_, c)| *c)
    }
}

/// Walks down from the grid value nearest `reference` while runs stay stable.
fn lower_stable_edge(row: &[ScanEntry], reference: f64) -> Option<f64> {
    let mut sorted: Vec<&ScanEntry> = row.iter().collect();
    sorted.sort_by(|a, b| a.cfl.total_cmp(&b.cfl));
    let start = sorted
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1.cfl - reference).abs().total_cmp(&(b.1.cfl - reference).abs()))?
        .0;
    let mut edge = None;
    for e in sorted[..=start].iter().rev() {
        if !e.stable {
            break;
        }
        edge = Some(e.cfl);
    }
    edge
}

fn basis_for(q: usize, dt: f64) -> Result<DSplineBasis> {
    if q == 4 {
        DSplineBasis::new_experimental(q, dt)
    } else {
        DSplineBasis::new(q, dt)
    }
}

/// Stability scan of the sphere problem over CFL numbers `dt/h`, `h = 2/p`,
/// for all modes `n = 0..=p/2`.
pub fn cfl_scan(
    q: usize,
    p_list: &[usize],
    cfl_grid: &[f64],
    options: &ScanOptions,
) -> Result<ScanResult> {
    let mut entries = Vec::new();
    let mut min_stable_cfl = Vec::new();
    for &p in p_list {
        let h = 2.0 / p as f64;
        let modes: Vec<usize> = (0..=p / 2).collect();
        let reference = basis_for(q, options.reference_cfl * h)?;
        let expected: Vec<f64> = modes
            .par_iter()
            .map(|&n| modal_peak(n, p, &reference, options.t_final, f64::INFINITY))
            .collect::<Result<_>>()?;
        let row: Vec<ScanEntry> = cfl_grid
            .iter()
            .map(|&cfl| {
                let basis = basis_for(q, cfl * h)?;
                let unstable_mode = modes
                    .par_iter()
                    .map(|&n| {
                        let limit = options.growth_factor * expected[n];
                        modal_peak(n, p, &basis, options.t_final, limit).map(|peak| (n, peak > limit))
                    })
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .find(|&(_, bad)| bad)
                    .map(|(n, _)| n);
                Ok(ScanEntry {
                    p,
                    cfl,
                    stable: unstable_mode.is_none(),
                    unstable_mode,
                })
            })
            .collect::<Result<_>>()?;
        min_stable_cfl.push((p, lower_stable_edge(&row, options.reference_cfl)));
        entries.extend(row);
    }
    Ok(ScanResult {
        q,
        entries,
        min_stable_cfl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_low_degrees() {
        assert_eq!(legendre_p(0, 0.7), 1.0);
        assert_eq!(legendre_p(1, 0.3), 0.3);
        assert!((legendre_p(2, 0.5) + 0.125).abs() < 1e-15);
    }

    #[test]
    fn volterra_weights_sum_to_one() {
        for q in 1..=3 {
            for &dt in &[0.013, 0.1, 0.7, 2.5] {
                let basis = DSplineBasis::new(q, dt).unwrap();
                let w = volterra_weights(16, &basis);
                let sum: f64 = w.weights.iter().sum();
                assert!((sum - 1.0).abs() < 1e-13, "q={q} dt={dt}: {sum}");
            }
        }
    }

    #[test]
    fn large_step_touches_only_boundary_nodes() {
        let basis = DSplineBasis::new(2, 3.0).unwrap();
        let w = volterra_weights(16, &basis);
        assert!(w.len() <= 2 * 2 + 1);
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let basis = DSplineBasis::new(2, 0.05).unwrap();
        let w = volterra_weights(16, &basis);
        let u = volterra_march(&w, |_| 0.0, 3.0, 0.05, |_| 0.0).unwrap();
        assert!(u.values.iter().all(|&v| v == 0.0));
        let mw = modal_weights(3, 8, &basis);
        let mu = modal_march(&mw, |_| 0.0, 3.0, 0.05).unwrap();
        assert!(mu.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_fixed_point() {
        let dt = 0.04;
        let basis = DSplineBasis::new(2, dt).unwrap();
        let w = volterra_weights(16, &basis);
        let u = volterra_march(&w, |_| 2.0, 5.0, dt, |_| 1.0).unwrap();
        for v in &u.values {
            assert!((v - 1.0).abs() < 1e-12, "{v}");
        }
        assert_eq!(u.values.len(), 126);
    }

    #[test]
    fn singular_pivot_is_reported() {
        let w = ConvolutionWeights {
            weights: vec![-1.0, 0.5],
            p: 1,
            q: 1,
            n: None,
        };
        let err = volterra_march(&w, |_| 1.0, 1.0, 0.1, |_| 0.0).unwrap_err();
        assert!(matches!(err, Error::SingularPivot { .. }));
    }
}
