//! Experiment orchestration: configuration, the boundary value and
//! scattering runs, parameter studies, and CSV/JSON result files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::assembly::{assemble, assemble_cached, estimate_memory, history_depth, AssemblyParams, HistoryOperator};
use crate::dspline::DSplineBasis;
use crate::gauss::GaussRule;
use crate::geometry::{grid_for_resolution, SurfaceGrid, SurfaceKind, SurfaceSpec, Vec3};
use crate::quadrature::{eval_retarded_potential, grf_residual, probe_row, AuxParams, AuxRule, GrfTarget};
use crate::scalar_models::{cfl_scan, volterra_march, volterra_weights, ScanOptions, ScanResult};
use crate::sources::{PlaneWave, PointSource, Signal};
use crate::timestepper::{fit_slope, march, MarchConfig, MarchResult, SolveMode};
use crate::{Error, Result};

/// Boundary data generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SourceConfig {
    /// Interior monopole; its field is the exact exterior solution.
    Point(PointSource),
    /// Incident plane wave scattered by a sound-soft obstacle.
    PlaneWave(PlaneWave),
}

/// Planar evaluation grid `y = 0`, `(x, z) in [-half_width, half_width]^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceConfig {
    pub n_x: usize,
    pub n_z: usize,
    pub half_width: f64,
}

impl Default for SliceConfig {
    fn default() -> Self {
        Self {
            n_x: 60,
            n_z: 60,
            half_width: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub surface: SurfaceSpec,
    pub n_phi: usize,
    /// Defaults to `round(2 n_phi / 3)`.
    pub n_theta: Option<usize>,
    pub p: usize,
    /// Auxiliary radial order; defaults to `2p` on the torus and `2p + 4` otherwise.
    pub n_r: Option<usize>,
    pub q: usize,
    pub dt: f64,
    pub t_final: f64,
    pub a: f64,
    pub b: f64,
    pub n_c: usize,
    pub d: f64,
    pub mode: SolveMode,
    pub source: SourceConfig,
    pub probes: Vec<[f64; 3]>,
    /// Field-slice times for scattering runs.
    pub snapshot_times: Vec<f64>,
    pub slice: SliceConfig,
    pub blowup_cap: f64,
    pub memory_cap: Option<u64>,
    pub cache_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            surface: SurfaceSpec::torus(),
            n_phi: 9,
            n_theta: None,
            p: 6,
            n_r: None,
            q: 2,
            dt: 0.1,
            t_final: 30.0,
            a: 1.0,
            b: 2.0,
            n_c: 8,
            d: 0.25,
            mode: SolveMode::Explicit,
            source: SourceConfig::Point(default_point_source()),
            probes: vec![[1.3, 0.1, 0.8]],
            snapshot_times: Vec::new(),
            slice: SliceConfig::default(),
            blowup_cap: 1e6,
            memory_cap: Some(16_000_000_000),
            cache_dir: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Monopole at `(0.9, -0.2, 0.1)` with signal `5 exp(-(t - 6)^2 / 2)`.
pub fn default_point_source() -> PointSource {
    PointSource {
        center: [0.9, -0.2, 0.1],
        signal: Signal::Gaussian {
            amplitude: 5.0,
            center: 6.0,
            width: 1.0,
        },
    }
}

/// Plane wave along `(-0.2, 0.1, -1)` with a Gaussian pulse of width 0.15 at `t = 3`.
pub fn default_plane_wave() -> PlaneWave {
    PlaneWave {
        direction: [-0.2, 0.1, -1.0],
        signal: Signal::Gaussian {
            amplitude: 1.0,
            center: 3.0,
            width: 0.15,
        },
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta.unwrap_or_else(|| SurfaceGrid::default_n_theta(self.n_phi))
    }

    pub fn aux_order(&self) -> usize {
        self.n_r.unwrap_or(match self.surface.kind {
            SurfaceKind::PlainTorus => 2 * self.p,
            _ => 2 * self.p + 4,
        })
    }

    pub fn grid(&self) -> Result<SurfaceGrid> {
        SurfaceGrid::new(self.surface.clone(), self.n_phi, self.n_theta(), self.p)
    }

    pub fn basis(&self) -> Result<DSplineBasis> {
        DSplineBasis::new(self.q, self.dt)
    }

    pub fn assembly_params(&self) -> AssemblyParams {
        AssemblyParams {
            a: self.a,
            b: self.b,
            aux: AuxParams::new(self.aux_order()),
            memory_cap: self.memory_cap,
        }
    }

    pub fn march_config(&self) -> MarchConfig {
        MarchConfig {
            n_c: self.n_c,
            d: self.d,
            mode: self.mode,
            blowup_cap: self.blowup_cap,
            ..MarchConfig::new(self.dt, self.t_final)
        }
    }

    /// Sets a field addressed by a dotted path, e.g. `source.signal.amplitude=3`.
    /// The value is parsed as JSON and otherwise taken as a string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut root = serde_json::to_value(&*self)?;
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = match slot {
                Value::Object(map) => map
                    .get_mut(part)
                    .ok_or_else(|| Error::Config(format!("unknown field '{part}' in '{key}'")))?,
                Value::Array(items) => part
                    .parse::<usize>()
                    .ok()
                    .and_then(|i| items.get_mut(i))
                    .ok_or_else(|| Error::Config(format!("bad index '{part}' in '{key}'")))?,
                _ => return Err(Error::Config(format!("'{key}' does not name a field"))),
            };
        }
        *slot = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        *self = serde_json::from_value(root).map_err(|e| Error::Config(format!("{key}={value}: {e}")))?;
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for item in overrides {
            let (key, value) = item
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{}' is not key=value", item.as_ref())))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }
}

/// Grid, basis and assembled operator of one run.
pub struct Prepared {
    pub grid: SurfaceGrid,
    pub basis: DSplineBasis,
    pub op: HistoryOperator,
    pub memory_estimate: u64,
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    let grid = config.grid()?;
    let basis = config.basis()?;
    let params = config.assembly_params();
    let memory_estimate = estimate_memory(&grid, &basis, history_depth(&grid, basis.dt(), basis.q()));
    let op = match &config.cache_dir {
        Some(dir) => assemble_cached(&grid, &basis, &params, dir)?,
        None => assemble(&grid, &basis, &params)?,
    };
    Ok(Prepared {
        grid,
        basis,
        op,
        memory_estimate,
    })
}

/// Rejects targets inside the surface or within one grid spacing of it.
fn check_probe(grid: &SurfaceGrid, x: &Vec3) -> Result<()> {
    if grid.surface().contains(x) || grid.min_node_distance(x) < grid.resolution() {
        return Err(Error::TargetTooClose([x.x, x.y, x.z]));
    }
    Ok(())
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Final-window growth above this rate marks a run unstable.
const GROWTH_TOLERANCE: f64 = 1e-3;

/// Unstable if the run blew up, the error reached 1, or the density is still
/// growing at the end while above round-off relative to its peak.
pub fn classify_stable(result: &MarchResult, max_error: f64) -> bool {
    if result.blew_up || !max_error.is_finite() || max_error >= 1.0 {
        return false;
    }
    let peak = max_abs(&result.mu_inf);
    let last = result.mu_inf.last().copied().unwrap_or(0.0);
    match result.final_growth_rate() {
        Some(rate) if rate > GROWTH_TOLERANCE => last <= 1e-10 * peak,
        _ => true,
    }
}

/// Numerical and reference values at one exterior target.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeSeries {
    pub target: [f64; 3],
    pub numerical: Vec<f64>,
    /// Exact field for point-source runs, incident field for scattering.
    pub reference: Vec<f64>,
}

impl ProbeSeries {
    pub fn max_error(&self) -> f64 {
        self.numerical
            .iter()
            .zip(&self.reference)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub n_nodes: usize,
    pub dx: f64,
    pub history_depth: usize,
    pub max_error: f64,
    pub digits: Option<f64>,
    pub growth_rate: Option<f64>,
    pub stable: bool,
    pub blew_up: bool,
    pub wall_seconds: f64,
    pub memory_estimate: u64,
    pub operator_bytes: u64,
}

#[derive(Clone, Debug)]
pub struct BvpResult {
    pub march: MarchResult,
    pub probes: Vec<ProbeSeries>,
    pub summary: RunSummary,
}

impl BvpResult {
    /// Columns `t, u_num, u_exact, err, mu_inf, g_inf`, with a `_k` suffix per
    /// probe when there are several.
    pub fn to_csv(&self) -> String {
        let suffix = |k: usize| if self.probes.len() > 1 { format!("_{k}") } else { String::new() };
        let mut header = vec!["t".to_string()];
        for k in 0..self.probes.len() {
            let s = suffix(k);
            header.extend([format!("u_num{s}"), format!("u_exact{s}"), format!("err{s}")]);
        }
        header.extend(["mu_inf".to_string(), "g_inf".to_string()]);
        let mut out = header.join(",");
        out.push('\n');
        for (i, t) in self.march.times.iter().enumerate() {
            let _ = write!(out, "{t}");
            for p in &self.probes {
                let (u, e) = (p.numerical[i], p.reference[i]);
                let _ = write!(out, ",{u:e},{e:e},{:e}", (u - e).abs());
            }
            let _ = writeln!(out, ",{:e},{:e}", self.march.mu_inf[i], self.march.g_inf[i]);
        }
        out
    }
}

fn run_with_data(
    config: &ExperimentConfig,
    prepared: &Prepared,
    march_config: &MarchConfig,
    data: impl Fn(&Vec3, f64) -> f64 + Sync,
    reference: impl Fn(&Vec3, f64) -> f64,
    probe_offset: impl Fn(&Vec3, f64) -> f64,
) -> Result<(MarchResult, Vec<ProbeSeries>)> {
    let grid = &prepared.grid;
    let targets: Vec<Vec3> = config.probes.iter().map(|&p| Vec3::from(p)).collect();
    for x in &targets {
        check_probe(grid, x)?;
    }
    let rows = targets
        .iter()
        .map(|x| probe_row(grid, &prepared.basis, x, config.a, config.b))
        .collect::<Result<Vec<_>>>()?;
    let positions: Vec<Vec3> = (0..grid.len()).map(|j| grid.position(j)).collect();
    let result = march(
        &prepared.op,
        march_config,
        |t, g| {
            g.par_iter_mut()
                .zip(&positions)
                .for_each(|(gj, y)| *gj = data(y, t));
        },
        &rows,
    )?;
    let probes = targets
        .iter()
        .zip(&result.probes)
        .map(|(x, values)| ProbeSeries {
            target: [x.x, x.y, x.z],
            numerical: values
                .iter()
                .zip(&result.times)
                .map(|(v, &t)| v + probe_offset(x, t))
                .collect(),
            reference: result.times.iter().map(|&t| reference(x, t)).collect(),
        })
        .collect();
    Ok((result, probes))
}

fn summarize(prepared: &Prepared, march: &MarchResult, probes: &[ProbeSeries], started: Instant) -> RunSummary {
    let max_error = probes.iter().map(ProbeSeries::max_error).fold(0.0, f64::max);
    RunSummary {
        n_nodes: prepared.grid.len(),
        dx: prepared.grid.resolution(),
        history_depth: prepared.op.depth(),
        max_error,
        digits: (max_error > 0.0 && max_error.is_finite()).then(|| -max_error.log10()),
        growth_rate: march.final_growth_rate(),
        stable: classify_stable(march, max_error),
        blew_up: march.blew_up,
        wall_seconds: started.elapsed().as_secs_f64(),
        memory_estimate: prepared.memory_estimate,
        operator_bytes: prepared.op.memory_bytes(),
    }
}

/// Dirichlet problem whose exact solution is the field of an interior point source.
pub fn run_bvp(config: &ExperimentConfig) -> Result<BvpResult> {
    let started = Instant::now();
    let SourceConfig::Point(source) = &config.source else {
        return Err(Error::Config("bvp needs a point source".into()));
    };
    if !config.grid()?.surface().contains(&Vec3::from(source.center)) {
        return Err(Error::Config("point source must lie inside the surface".into()));
    }
    let prepared = prepare(config)?;
    let (march, probes) = run_with_data(
        config,
        &prepared,
        &config.march_config(),
        |y, t| source.value(y, t),
        |x, t| source.value(x, t),
        |_, _| 0.0,
    )?;
    let summary = summarize(&prepared, &march, &probes, started);
    Ok(BvpResult { march, probes, summary })
}

/// Total field on the slice at one time; `None` marks masked points.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FieldSnapshot {
    pub t: f64,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    /// Row-major over `(x, z)`.
    pub u_total: Vec<Option<f64>>,
}

#[derive(Clone, Debug)]
pub struct ScatterResult {
    pub march: MarchResult,
    /// Total field `u_inc + u` at the probes; `reference` holds `u_inc`.
    pub probes: Vec<ProbeSeries>,
    pub snapshots: Vec<FieldSnapshot>,
    pub summary: RunSummary,
}

impl ScatterResult {
    pub fn probes_csv(&self) -> String {
        let mut out = String::from("t");
        for k in 0..self.probes.len() {
            let _ = write!(out, ",u_tot_{k},u_inc_{k}");
        }
        out.push_str(",mu_inf,g_inf\n");
        for (i, t) in self.march.times.iter().enumerate() {
            let _ = write!(out, "{t}");
            for p in &self.probes {
                let _ = write!(out, ",{:e},{:e}", p.numerical[i], p.reference[i]);
            }
            let _ = writeln!(out, ",{:e},{:e}", self.march.mu_inf[i], self.march.g_inf[i]);
        }
        out
    }

    pub fn field_csv(&self) -> String {
        let mut out = String::from("t,x,z,u_tot\n");
        for s in &self.snapshots {
            for (ix, x) in s.x.iter().enumerate() {
                for (iz, z) in s.z.iter().enumerate() {
                    if let Some(u) = s.u_total[ix * s.z.len() + iz] {
                        let _ = writeln!(out, "{},{x},{z},{u:e}", s.t);
                    }
                }
            }
        }
        out
    }
}

fn linspace(half: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.0];
    }
    (0..n).map(|i| -half + 2.0 * half * i as f64 / (n - 1) as f64).collect()
}

/// Sound-soft scattering of a plane wave: `g = -u_inc` on the surface.
pub fn run_scatter(config: &ExperimentConfig) -> Result<ScatterResult> {
    let started = Instant::now();
    let SourceConfig::PlaneWave(wave) = &config.source else {
        return Err(Error::Config("scatter needs a plane-wave source".into()));
    };
    let prepared = prepare(config)?;
    let grid = &prepared.grid;
    let dt = config.dt;

    let xs = linspace(config.slice.half_width, config.slice.n_x);
    let zs = linspace(config.slice.half_width, config.slice.n_z);
    let points: Vec<Option<Vec3>> = xs
        .iter()
        .flat_map(|&x| zs.iter().map(move |&z| Vec3::new(x, 0.0, z)))
        .map(|x| check_probe(grid, &x).ok().map(|_| x))
        .collect();
    let reach = points
        .iter()
        .flatten()
        .map(|x| (0..grid.len()).map(|j| (x - grid.position(j)).norm()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    let window = (reach / dt).ceil() as usize + config.q + 2;

    let snap_steps: Vec<usize> = config
        .snapshot_times
        .iter()
        .map(|&t| (t / dt).round() as usize)
        .collect();
    let mut march_config = config.march_config();
    let mut record: Vec<usize> = snap_steps
        .iter()
        .flat_map(|&k| k.saturating_sub(window)..=k)
        .collect();
    record.sort_unstable();
    record.dedup();
    march_config.snapshot_times = record.iter().map(|&k| k as f64 * dt).collect();

    let (march, probes) = run_with_data(
        config,
        &prepared,
        &march_config,
        |y, t| -wave.value(y, t),
        |x, t| wave.value(x, t),
        |x, t| wave.value(x, t),
    )?;

    let stored: std::collections::HashMap<usize, &Vec<f64>> = march
        .snapshots
        .iter()
        .map(|(t, mu)| ((t / dt).round() as usize, mu))
        .collect();
    let zeros = vec![0.0; grid.len()];
    let mut snapshots = Vec::new();
    for &k in &snap_steps {
        if k >= march.times.len() {
            continue;
        }
        let history: Vec<Vec<f64>> = (0..=window)
            .map(|r| {
                k.checked_sub(r)
                    .and_then(|s| stored.get(&s).copied())
                    .unwrap_or(&zeros)
                    .clone()
            })
            .collect();
        let t = k as f64 * dt;
        let u_total = points
            .par_iter()
            .map(|x| match x {
                Some(x) => eval_retarded_potential(grid, &prepared.basis, &history, x, config.a, config.b)
                    .map(|u| Some(u + wave.value(x, t))),
                None => Ok(None),
            })
            .collect::<Result<Vec<_>>>()?;
        snapshots.push(FieldSnapshot {
            t,
            x: xs.clone(),
            z: zs.clone(),
            u_total,
        });
    }

    // Error against the incident field is meaningless here; report zero.
    let mut summary = summarize(&prepared, &march, &[], started);
    summary.digits = None;
    Ok(ScatterResult {
        march,
        probes,
        snapshots,
        summary,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepCell {
    pub dx_target: f64,
    pub dt: f64,
    pub n_phi: usize,
    pub n_theta: usize,
    pub dx: f64,
    pub digits: Option<f64>,
    pub max_error: Option<f64>,
    pub stable: bool,
    pub growth_rate: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepResult {
    pub p: usize,
    pub q: usize,
    pub surface: SurfaceSpec,
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dx,dt,digits,stable,growth_rate,n_phi,n_theta,dx_target\n");
        let opt = |v: Option<f64>| v.map_or(String::from("nan"), |v| format!("{v}"));
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                c.dx,
                c.dt,
                opt(c.digits),
                c.stable as u8,
                opt(c.growth_rate),
                c.n_phi,
                c.n_theta,
                c.dx_target
            );
        }
        out
    }

    pub fn cell(&self, dx_target: f64, dt: f64) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| (c.dx_target - dx_target).abs() < 1e-12 && (c.dt - dt).abs() < 1e-12)
    }
}

/// Point-source BVP at every `(dx, dt)` pair; failed cells are recorded.
pub fn run_sweep(base: &ExperimentConfig, dx_list: &[f64], dt_list: &[f64]) -> Result<SweepResult> {
    let grids = dx_list
        .iter()
        .map(|&dx| grid_for_resolution(&base.surface, base.p, dx).map(|g| (dx, g)))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(f64, (usize, usize), f64)> = grids
        .iter()
        .flat_map(|&(dx, g)| dt_list.iter().map(move |&dt| (dx, g, dt)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(dx_target, (n_phi, n_theta), dt)| {
            let config = ExperimentConfig {
                n_phi,
                n_theta: Some(n_theta),
                dt,
                ..base.clone()
            };
            let dx = SurfaceGrid::new(base.surface.clone(), n_phi, n_theta, base.p)
                .map(|g| g.resolution())
                .unwrap_or(f64::NAN);
            let mut cell = SweepCell {
                dx_target,
                dt,
                n_phi,
                n_theta,
                dx,
                digits: None,
                max_error: None,
                stable: false,
                growth_rate: None,
                failure: None,
            };
            match run_bvp(&config) {
                Ok(r) => {
                    cell.digits = r.summary.digits;
                    cell.max_error = Some(r.summary.max_error);
                    cell.stable = r.summary.stable;
                    cell.growth_rate = r.summary.growth_rate;
                }
                Err(e) => cell.failure = Some(e.to_string()),
            }
            cell
        })
        .collect();
    Ok(SweepResult {
        p: base.p,
        q: base.q,
        surface: base.surface.clone(),
        cells,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub dx: f64,
    pub dt: f64,
    pub max_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DxConvergence {
    pub rows: Vec<ConvergenceRow>,
    /// Fitted slope of `log err` against `log dx`; `None` for a single grid.
    pub order: Option<f64>,
}

impl DxConvergence {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dx,dt,max_err\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{:e}", r.dx, r.dt, r.max_error);
        }
        out
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    fit_slope(&logs)
}

/// Spatial convergence with `dt = dt_factor * dx`. Point-source runs compare
/// with the exact field; plane-wave runs compare with the finest grid.
pub fn run_dx_convergence(base: &ExperimentConfig, dx_list: &[f64], dt_factor: f64) -> Result<DxConvergence> {
    let mut runs = Vec::new();
    for &dx_target in dx_list {
        let (n_phi, n_theta) = grid_for_resolution(&base.surface, base.p, dx_target)?;
        let mut config = ExperimentConfig {
            n_phi,
            n_theta: Some(n_theta),
            ..base.clone()
        };
        let dx = config.grid()?.resolution();
        config.dt = dt_factor * dx;
        let (probe, march_dt) = match &base.source {
            SourceConfig::Point(_) => {
                let r = run_bvp(&config)?;
                (r.probes[0].clone(), r.march.dt)
            }
            SourceConfig::PlaneWave(_) => {
                let r = run_scatter(&config)?;
                (r.probes[0].clone(), r.march.dt)
            }
        };
        runs.push((dx, march_dt, probe));
    }
    let rows: Vec<ConvergenceRow> = match &base.source {
        SourceConfig::Point(_) => runs
            .iter()
            .map(|(dx, dt, p)| ConvergenceRow {
                dx: *dx,
                dt: *dt,
                max_error: p.max_error(),
            })
            .collect(),
        SourceConfig::PlaneWave(_) => {
            let finest = runs
                .iter()
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .ok_or_else(|| Error::Config("empty dx list".into()))?;
            runs.iter()
                .filter(|r| r.0 > finest.0)
                .map(|(dx, dt, p)| ConvergenceRow {
                    dx: *dx,
                    dt: *dt,
                    max_error: compare_on_common_times(p, *dt, &finest.2, finest.1),
                })
                .collect()
        }
    };
    let order = log_log_slope(&rows.iter().map(|r| (r.dx, r.max_error)).collect::<Vec<_>>());
    Ok(DxConvergence { rows, order })
}

/// Max difference between two probe series at the coarse run's times,
/// linearly interpolating the fine one.
fn compare_on_common_times(coarse: &ProbeSeries, dt_c: f64, fine: &ProbeSeries, dt_f: f64) -> f64 {
    coarse
        .numerical
        .iter()
        .enumerate()
        .filter_map(|(k, &u)| {
            let s = k as f64 * dt_c / dt_f;
            let i = s.floor() as usize;
            let w = s - i as f64;
            let a = *fine.numerical.get(i)?;
            let b = fine.numerical.get(i + 1).copied().unwrap_or(a);
            Some((u - (a + w * (b - a))).abs())
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GrfRow {
    pub n_phi: usize,
    pub n_theta: usize,
    pub dx: f64,
    pub exterior: f64,
    pub on_surface: f64,
}

/// Representation-formula residuals for the field of `source`, at the first
/// probe and at node 0 (a panel corner), maximized over `times`.
pub fn run_grf_test(
    surface: &SurfaceSpec,
    p: usize,
    n_r: usize,
    grids: &[(usize, usize)],
    source: &PointSource,
    target: [f64; 3],
    times: &[f64],
) -> Result<Vec<GrfRow>> {
    let rule = AuxRule::new(AuxParams::new(n_r));
    grids
        .iter()
        .map(|&(n_phi, n_theta)| {
            let grid = SurfaceGrid::new(surface.clone(), n_phi, n_theta, p)?;
            let mut row = GrfRow {
                n_phi,
                n_theta,
                dx: grid.resolution(),
                exterior: 0.0,
                on_surface: 0.0,
            };
            for &t in times {
                let ext = grf_residual(&grid, source, GrfTarget::Exterior(Vec3::from(target)), t, &rule)?;
                let on = grf_residual(&grid, source, GrfTarget::Node(0), t, &rule)?;
                row.exterior = row.exterior.max(ext);
                row.on_surface = row.on_surface.max(on);
            }
            Ok(row)
        })
        .collect()
}

pub fn grf_csv(rows: &[GrfRow]) -> String {
    let mut out = String::from("n_phi,n_theta,dx,exterior_residual,surface_residual\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{:e},{:e}", r.n_phi, r.n_theta, r.dx, r.exterior, r.on_surface);
    }
    out
}

/// `cos 5t` monopole at `(0.9, -0.2, 0.1)`.
pub fn grf_source() -> PointSource {
    PointSource {
        center: [0.9, -0.2, 0.1],
        signal: Signal::Cosine {
            amplitude: 1.0,
            omega: 5.0,
        },
    }
}

/// Manufactured solution of the top-hat Volterra equation.
pub fn volterra_solution(t: f64) -> f64 {
    (-(t - 6.0) * (t - 6.0)).exp() * (4.0 * t).cos()
}

/// `f(t) = u(t) + int_0^1 u(t - s) ds` for the manufactured `u`.
pub fn volterra_rhs(t: f64) -> f64 {
    let rule = GaussRule::on_interval(48, 0.0, 1.0);
    volterra_solution(t) + rule.integrate(|s| volterra_solution(t - s))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VolterraStudy {
    pub p: usize,
    /// `(q, dt, max error)`.
    pub rows: Vec<(usize, f64, f64)>,
    /// `(q, fitted order)`.
    pub orders: Vec<(usize, Option<f64>)>,
}

impl VolterraStudy {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("q,dt,max_err\n");
        for (q, dt, e) in &self.rows {
            let _ = writeln!(out, "{q},{dt},{e:e}");
        }
        out
    }

    pub fn order(&self, q: usize) -> Option<f64> {
        self.orders.iter().find(|o| o.0 == q).and_then(|o| o.1)
    }
}

/// Max-error convergence of the Volterra scheme on `[0, t_final]`.
pub fn run_volterra(q_list: &[usize], dt_list: &[f64], p: usize, t_final: f64) -> Result<VolterraStudy> {
    let mut rows = Vec::new();
    let mut orders = Vec::new();
    for &q in q_list {
        let mut pts = Vec::new();
        for &dt in dt_list {
            let basis = DSplineBasis::new(q, dt)?;
            let weights = volterra_weights(p, &basis);
            let series = volterra_march(&weights, volterra_rhs, t_final, dt, volterra_solution)?;
            let err = series
                .values
                .iter()
                .enumerate()
                .map(|(k, u)| (u - volterra_solution(series.time(k))).abs())
                .fold(0.0, f64::max);
            rows.push((q, dt, err));
            pts.push((dt, err));
        }
        orders.push((q, log_log_slope(&pts)));
    }
    Ok(VolterraStudy { p, rows, orders })
}

pub fn sphere_scan_csv(scan: &ScanResult) -> String {
    let mut out = String::from("q,p,cfl,stable,unstable_mode\n");
    for e in &scan.entries {
        let mode = e.unstable_mode.map_or(String::new(), |n| n.to_string());
        let _ = writeln!(out, "{},{},{},{},{}", scan.q, e.p, e.cfl, e.stable as u8, mode);
    }
    out
}

/// Sphere modal stability scan; see [`cfl_scan`].
pub fn run_sphere_modal(q: usize, p_list: &[usize], cfl_grid: &[f64], options: &ScanOptions) -> Result<ScanResult> {
    cfl_scan(q, p_list, cfl_grid, options)
}

/// Writes `<dir>/<name>.csv` and a `<name>.json` sidecar holding `config`,
/// `summary` and a generation timestamp.
pub fn write_outputs(dir: &Path, name: &str, csv: &str, config: &impl Serialize, summary: &impl Serialize) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{name}.csv"));
    std::fs::write(&csv_path, csv)?;
    let generated = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let sidecar = json!({
        "config": config,
        "summary": summary,
        "generated_unix": generated,
    });
    std::fs::write(dir.join(format!("{name}.json")), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(csv_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_fields() {
        let mut c = ExperimentConfig::default();
        c.apply_overrides(&["dt=0.2", "source.signal.amplitude=3", "probes.0.2=0.9", "mode=implicit"])
            .unwrap();
        assert_eq!(c.dt, 0.2);
        assert_eq!(c.probes[0][2], 0.9);
        assert_eq!(c.mode, SolveMode::Implicit);
        let SourceConfig::Point(src) = &c.source else { panic!() };
        assert!(matches!(src.signal, Signal::Gaussian { amplitude, .. } if amplitude == 3.0));
        assert!(c.set("no_such_field", "1").is_err());
        assert!(c.set("dt", "\"fast\"").is_err());
        assert!(c.apply_overrides(&["dt"]).is_err());
    }

    #[test]
    fn aux_order_defaults_by_surface() {
        let mut c = ExperimentConfig::default();
        assert_eq!(c.aux_order(), 12);
        c.surface = SurfaceSpec::cruller();
        assert_eq!(c.aux_order(), 16);
        c.n_r = Some(5);
        assert_eq!(c.aux_order(), 5);
    }

    #[test]
    fn close_probe_is_rejected() {
        let c = ExperimentConfig {
            n_phi: 6,
            p: 3,
            ..Default::default()
        };
        let grid = c.grid().unwrap();
        assert!(check_probe(&grid, &Vec3::new(1.3, 0.1, 0.8)).is_ok());
        assert!(matches!(check_probe(&grid, &Vec3::new(1.52, 0.0, 0.0)), Err(Error::TargetTooClose(_))));
        assert!(check_probe(&grid, &Vec3::new(1.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn manufactured_volterra_data() {
        // Far from the pulse both sides vanish.
        assert!(volterra_rhs(-3.0).abs() < 1e-15);
        let h = 1e-4;
        let t = 5.3;
        // f'(t) = u'(t) + u(t) - u(t - 1).
        let df = (volterra_rhs(t + h) - volterra_rhs(t - h)) / (2.0 * h);
        let du = (volterra_solution(t + h) - volterra_solution(t - h)) / (2.0 * h);
        assert!((df - (du + volterra_solution(t) - volterra_solution(t - 1.0))).abs() < 1e-6);
    }
}
