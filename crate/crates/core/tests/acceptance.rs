//! Acceptance suite: runs every headline criterion at its stated tolerance and
//! prints one PASS/FAIL line per criterion. Exits non-zero if any fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use rayon::prelude::*;
use tdbie::driver::{
    default_point_source, grf_source, log_log_slope, prepare, run_bvp, run_grf_test, run_sweep, run_volterra,
    ExperimentConfig, SourceConfig,
};
use tdbie::dspline::DSplineBasis;
use tdbie::geometry::{SurfaceGrid, SurfaceSpec, Vec3};
use tdbie::quadrature::{off_surface_static, on_surface_static, AuxParams, AuxRule};
use tdbie::scalar_models::{cfl_scan, ScanOptions};
use tdbie::timestepper::{march, SolveMode};

type Check = Result<(bool, String), String>;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
    seconds: f64,
}

fn run(name: &'static str, check: impl FnOnce() -> Check) -> Outcome {
    let start = Instant::now();
    let (pass, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
    let outcome = Outcome {
        name,
        pass,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    };
    println!(
        "[{}] {} ({:.1} s): {}",
        if outcome.pass { "PASS" } else { "FAIL" },
        outcome.name,
        outcome.seconds,
        outcome.detail
    );
    outcome
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Derivative of order `l` at `y` of the polynomial with coefficients `coef`.
fn poly_deriv(coef: &[f64], l: usize, y: f64) -> f64 {
    (l..coef.len())
        .map(|i| {
            let falling: f64 = ((i - l + 1)..=i).map(|v| v as f64).product();
            coef[i] * falling * y.powi((i - l) as i32)
        })
        .sum()
}

fn dspline_suite() -> Check {
    let start = Instant::now();
    let (mut card, mut cont, mut mono) = (0.0f64, 0.0f64, 0.0f64);
    for q in 1..=3 {
        let dt = 0.13;
        let basis = DSplineBasis::new(q, dt).map_err(err)?;
        let n = 4 * q + 6;
        for r in 0..n {
            for k in 0..n {
                let v = basis.eval(r, k as f64 * dt).map_err(err)?;
                card = card.max((v - if r == k { 1.0 } else { 0.0 }).abs());
            }
        }
        let unit = DSplineBasis::new(q, 1.0).map_err(err)?;
        for knot in 1..(3 * q + 4) {
            for r in 0..n {
                let (left, right) = (unit.piece(knot - 1, r), unit.piece(knot, r));
                for l in 0..=2 * q {
                    let lv = left.map_or(0.0, |c| poly_deriv(c, l, 0.5));
                    let rv = right.map_or(0.0, |c| poly_deriv(c, l, -0.5));
                    cont = cont.max((lv - rv).abs() / lv.abs().max(rv.abs()).max(1.0));
                }
            }
        }
        let t0 = 0.4;
        for m in 0..=2 * q as i32 {
            let hist: Vec<f64> = (0..80).map(|r| (t0 - r as f64 * dt).powi(m)).collect();
            for i in 0..300 {
                let tau = 0.01 * i as f64;
                let (v, _) = basis.interpolate(&hist, tau).map_err(err)?;
                let exact = (t0 - tau).powi(m);
                mono = mono.max((v - exact).abs() / exact.abs().max(1.0));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = card < 1e-12 && cont < 1e-10 && mono < 1e-12 && secs < 1.0;
    Ok((
        pass,
        format!("cardinality {card:.1e}, knot jump {cont:.1e} (< 1e-10), monomial {mono:.1e} (< 1e-12), {secs:.2} s (< 1 s)"),
    ))
}

fn volterra() -> Check {
    let start = Instant::now();
    let dts = [0.08, 0.04, 0.02, 0.01];
    let study = run_volterra(&[1, 2, 3], &dts, 16, 10.0).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let mut pass = secs < 10.0;
    let mut parts = Vec::new();
    for q in 1..=3usize {
        let target = (2 * q + 2) as f64;
        let order = study.order(q).unwrap_or(f64::NAN);
        let finest = study
            .rows
            .iter()
            .find(|r| r.0 == q && r.1 == 0.01)
            .map_or(f64::NAN, |r| r.2);
        let ok = (order - target).abs() <= 0.5 && finest.is_finite() && finest < 1.0;
        pass &= ok;
        parts.push(format!("2q={} order {order:.2} (target {target} ± 0.5, err@0.01 {finest:.1e})", 2 * q));
    }
    Ok((pass, format!("{}; {secs:.1} s (< 10 s)", parts.join("; "))))
}

fn sphere_modal() -> Check {
    let p_list = [64, 128, 256, 512, 640];
    let largest = 640;
    let grid: Vec<f64> = (0..=16).map(|i| 1.8 + 0.1 * i as f64).collect();
    let options = ScanOptions::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for q in [1, 2] {
        let scan = cfl_scan(q, &p_list, &grid, &options).map_err(err)?;
        let edge = scan.min_stable(largest);
        let ok = edge.is_some_and(|c| (2.3 - 1e-9..=2.8 + 1e-9).contains(&c));
        pass &= ok;
        let all: Vec<String> = scan
            .min_stable_cfl
            .iter()
            .map(|(p, c)| format!("{p}:{}", c.map_or("-".into(), |c| format!("{c:.1}"))))
            .collect();
        parts.push(format!("2q={} min CFL {} [{}]", 2 * q, edge.map_or("none".into(), |c| format!("{c:.1}")), all.join(" ")));
    }
    let q4 = ScanOptions {
        reference_cfl: 2.75,
        ..options
    };
    let scan = cfl_scan(4, &[largest], &[3.5], &q4).map_err(err)?;
    let unstable = scan.is_stable(largest, 3.5) == Some(false);
    pass &= unstable;
    parts.push(format!("2q=8 at CFL 3.5: {}", if unstable { "unstable" } else { "stable" }));
    Ok((pass, format!("{} (target [2.3, 2.8] at p={largest})", parts.join("; "))))
}

fn gauss_identity() -> Check {
    let start = Instant::now();
    let grid = SurfaceGrid::new(SurfaceSpec::torus(), 12, 8, 8).map_err(err)?;
    let rule = AuxRule::new(AuxParams::new(20));
    let on = (0..grid.len())
        .into_par_iter()
        .map(|i| (on_surface_static(&grid, &rule, i, |k| k.d, |_, _| 1.0) + 0.5).abs())
        .reduce(|| 0.0, f64::max);
    let golden = PI * (3.0 - 5f64.sqrt());
    let mut off = 0.0f64;
    for k in 0..10 {
        let z = 1.0 - (2 * k + 1) as f64 / 10.0;
        let rho = (1.0 - z * z).sqrt();
        let ang = golden * k as f64;
        let x = 2.2 * Vec3::new(rho * ang.cos(), rho * ang.sin(), z);
        off = off.max(off_surface_static(&grid, &x, |k| k.d, |_, _| 1.0).map_err(err)?.abs());
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        on < 1e-8 && off < 1e-8 && secs < 60.0,
        format!("surface max |D[1] + 1/2| {on:.1e} over {} nodes, exterior max |D[1]| {off:.1e} (< 1e-8), {secs:.1} s", grid.len()),
    ))
}

fn grf() -> Check {
    let start = Instant::now();
    let source = grf_source();
    let target = [1.3, 0.1, 0.8];
    let times = [1.0, 1.37, 1.74];
    let mut pass = true;
    let mut parts = Vec::new();
    for (p, n_phi) in [(4usize, [18usize, 24, 30]), (8, [12, 15, 18])] {
        let grids: Vec<(usize, usize)> = n_phi.iter().map(|&n| (n, 2 * n / 3)).collect();
        let rows = run_grf_test(&SurfaceSpec::torus(), p, 2 * p, &grids, &source, target, &times).map_err(err)?;
        let order = log_log_slope(&rows.iter().map(|r| (r.dx, r.exterior)).collect::<Vec<_>>()).unwrap_or(f64::NAN);
        let need = (2 * p - 2) as f64;
        pass &= order >= need;
        let res: Vec<String> = rows.iter().map(|r| format!("{:.1e}", r.exterior)).collect();
        parts.push(format!("torus p={p} order {order:.2} (>= {need}) residuals [{}]", res.join(", ")));
    }
    let rows = run_grf_test(&SurfaceSpec::cruller(), 4, 12, &[(18, 12)], &source, target, &times).map_err(err)?;
    let cruller = rows[0].on_surface;
    pass &= cruller <= 1e-6;
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 1800.0;
    parts.push(format!(
        "cruller p=4 surface residual {cruller:.1e} (<= 1e-6; exterior {:.1e})",
        rows[0].exterior
    ));
    Ok((pass, format!("{}; {secs:.0} s", parts.join("; "))))
}

fn headline_config(a: f64, b: f64) -> ExperimentConfig {
    ExperimentConfig {
        a,
        b,
        t_final: 30.0,
        ..ExperimentConfig::default()
    }
}

fn bvp_headline(result: &tdbie::driver::BvpResult) -> Check {
    let s = &result.summary;
    let rate = result.march.growth_rate(12.0, 19.0).unwrap_or(f64::NAN);
    let pass = s.n_nodes == 1944 && s.max_error <= 2e-5 && rate < 0.0 && s.wall_seconds <= 300.0 && s.memory_estimate <= 16_000_000_000;
    Ok((
        pass,
        format!(
            "N={} max error {:.2e} (<= 2e-5), rate on [12,19] {rate:.3} (< 0), {:.1} s, memory estimate {:.0} MB",
            s.n_nodes,
            s.max_error,
            s.wall_seconds,
            s.memory_estimate as f64 / 1e6
        ),
    ))
}

fn mu_at(result: &tdbie::driver::BvpResult, t: f64) -> f64 {
    let k = (t / result.march.dt).round() as usize;
    result.march.mu_inf.get(k).copied().unwrap_or(f64::NAN)
}

fn coupling(r12: &tdbie::driver::BvpResult) -> Check {
    let r00 = run_bvp(&headline_config(0.0, 0.0)).map_err(err)?;
    let r10 = run_bvp(&headline_config(1.0, 0.0)).map_err(err)?;

    let trend = r00.march.linear_trend(15.0, 30.0).unwrap_or(f64::NAN);
    let grows = trend > 0.0 && !r00.march.blew_up;

    let peak10 = r10.march.mu_inf.iter().fold(0.0f64, |m, v| m.max(*v));
    let (m25, m30) = (mu_at(&r10, 25.0), mu_at(&r10, 30.0));
    let change = (m30 - m25).abs() / m30;
    let constant = m30 > 1e-2 * peak10 && change < 0.05;

    let peak12 = r12.march.mu_inf.iter().fold(0.0f64, |m, v| m.max(*v));
    let rate12 = r12.march.growth_rate(15.0, 30.0).unwrap_or(f64::NAN);
    let m12 = mu_at(r12, 30.0);
    let decays = rate12 < 0.0 && m12 < 1e-6 * peak12;

    Ok((
        grows && constant && decays,
        format!(
            "(0,0) trend on [15,30] {trend:.3}/unit t (> 0); (1,0) |mu| {m25:.4} -> {m30:.4} at t=25,30, change {:.1}% (< 5%, nonzero); (1,2) rate {rate12:.2}, |mu(30)|/peak {:.1e}",
            100.0 * change,
            m12 / peak12
        ),
    ))
}

fn inverse_cfl() -> Check {
    let base = ExperimentConfig {
        p: 4,
        q: 1,
        ..ExperimentConfig::default()
    };
    let dts: Vec<f64> = (1..=8).map(|i| 0.05 * i as f64).collect();
    let sweep = run_sweep(&base, &[0.15, 0.21], &dts).map_err(err)?;
    let mut pass = true;
    let mut parts = Vec::new();
    for dx_target in [0.15, 0.21] {
        let cells: Vec<_> = sweep.cells.iter().filter(|c| c.dx_target == dx_target).collect();
        let dx = cells[0].dx;
        let pattern: String = cells.iter().map(|c| if c.stable { 'S' } else { 'U' }).collect();
        let first_stable = cells.iter().position(|c| c.stable);
        let monotone = first_stable.is_some_and(|i| cells[i..].iter().all(|c| c.stable) && i > 0);
        let flip = first_stable
            .filter(|_| monotone)
            .map(|i| 0.5 * (cells[i - 1].dt + cells[i].dt) / dx)
            .unwrap_or(f64::NAN);
        let at_02 = sweep.cell(dx_target, 0.2).is_some_and(|c| c.stable);
        pass &= monotone && (flip - 0.8).abs() <= 0.3 && at_02;
        parts.push(format!("dx={dx:.3} [{pattern}] flip dt/dx {flip:.2}, dt=0.2 {}", if at_02 { "stable" } else { "unstable" }));
    }
    Ok((pass, format!("{} (flip 0.8 ± 0.3)", parts.join("; "))))
}

/// Max over the run of `|mu_explicit - mu_implicit|_inf / max |mu_implicit|_inf`.
fn explicit_implicit_difference(q: usize, d: f64) -> Result<(f64, bool), String> {
    let mut config = ExperimentConfig {
        n_phi: 6,
        n_theta: Some(4),
        p: 4,
        q,
        dt: 0.2,
        t_final: 20.0,
        n_c: 8,
        d,
        probes: Vec::new(),
        source: SourceConfig::Point(default_point_source()),
        ..ExperimentConfig::default()
    };
    let prepared = prepare(&config).map_err(err)?;
    let positions: Vec<Vec3> = (0..prepared.grid.len()).map(|j| prepared.grid.position(j)).collect();
    let SourceConfig::Point(src) = config.source.clone() else { unreachable!() };
    let data = |t: f64, g: &mut [f64]| {
        for (gj, y) in g.iter_mut().zip(&positions) {
            *gj = src.value(y, t);
        }
    };
    let mut run_mode = |mode: SolveMode| {
        config.mode = mode;
        let mut mc = config.march_config();
        mc.snapshot_times = (0..=mc.steps()).map(|k| k as f64 * config.dt).collect();
        march(&prepared.op, &mc, data, &[]).map_err(err)
    };
    let explicit = run_mode(SolveMode::Explicit)?;
    let implicit = run_mode(SolveMode::Implicit)?;
    if explicit.blew_up || explicit.snapshots.len() != implicit.snapshots.len() {
        return Ok((f64::INFINITY, implicit.blew_up));
    }
    let scale = implicit.mu_inf.iter().fold(0.0f64, |m, v| m.max(*v));
    let diff = explicit
        .snapshots
        .iter()
        .zip(&implicit.snapshots)
        .map(|(e, i)| e.1.iter().zip(&i.1).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
        .fold(0.0, f64::max);
    Ok((diff / scale, implicit.blew_up))
}

fn explicit_implicit() -> Check {
    let (rel, implicit_blew_up) = explicit_implicit_difference(2, -0.25)?;
    let mut info = Vec::new();
    for q in 1..=3 {
        let (r, _) = explicit_implicit_difference(q, 0.25)?;
        info.push(format!("2q={} {r:.1e}", 2 * q));
    }
    Ok((
        rel < 1e-8 && !implicit_blew_up,
        format!(
            "torus 6x4 p=4 2q=4 dt=0.2 n_c=8 d=-0.25: rel. difference {rel:.1e} (< 1e-8); info, same run with d=+0.25: {}",
            info.join(", ")
        ),
    ))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut outcomes = vec![
        run("D-spline unit suite", dspline_suite),
        run("Volterra convergence", volterra),
        run("Sphere modal CFL", sphere_modal),
        run("Gauss identity", gauss_identity),
        run("Representation formula convergence", grf),
    ];
    match run_bvp(&headline_config(1.0, 2.0)) {
        Ok(r12) => {
            outcomes.push(run("BVP headline", || bvp_headline(&r12)));
            outcomes.push(run("Coupling-parameter behavior", || coupling(&r12)));
        }
        Err(e) => {
            outcomes.push(run("BVP headline", || Err(err(&e))));
            outcomes.push(run("Coupling-parameter behavior", || Err(err(&e))));
        }
    }
    outcomes.push(run("Inverse-CFL detection", inverse_cfl));
    outcomes.push(run("Explicit/implicit agreement", explicit_implicit));

    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.pass).map(|o| o.name).collect();
    println!(
        "acceptance: {} of {} criteria passed in {:.0} s",
        outcomes.len() - failed.len(),
        outcomes.len(),
        start.elapsed().as_secs_f64()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
