use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use tdbie::driver::{self, ExperimentConfig, SourceConfig};
use tdbie::scalar_models::ScanOptions;
use tdbie::Result;

/// Time-domain boundary integral solver for exterior scalar wave problems.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// JSON experiment configuration; missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration field, e.g. `--set dt=0.05 --set source.signal.amplitude=2`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convergence of the scalar Volterra model.
    Volterra {
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        q: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0.08,0.04,0.02,0.01")]
        dt: Vec<f64>,
        #[arg(long, default_value_t = 16)]
        p: usize,
        #[arg(long, default_value_t = 10.0)]
        t_final: f64,
    },
    /// Minimum stable CFL of the sphere modal model.
    SphereModal {
        #[arg(long, default_value_t = 2)]
        q: usize,
        #[arg(long, value_delimiter = ',', default_value = "64,128,256")]
        p: Vec<usize>,
        #[arg(long, default_value_t = 1.8)]
        cfl_min: f64,
        #[arg(long, default_value_t = 3.4)]
        cfl_max: f64,
        #[arg(long, default_value_t = 0.1)]
        cfl_step: f64,
        #[arg(long, default_value_t = 100.0)]
        t_final: f64,
        #[arg(long, default_value_t = 3.0)]
        reference_cfl: f64,
    },
    /// Representation-formula residuals under grid refinement.
    GrfTest {
        #[arg(long, value_delimiter = ',', default_value = "12,18,24")]
        n_phi: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,1.37,1.74")]
        times: Vec<f64>,
    },
    /// Dirichlet problem with a known point-source solution.
    Bvp,
    /// Sound-soft plane-wave scattering.
    Scatter,
    /// Stability and accuracy over a (dx, dt) grid.
    Sweep {
        #[arg(long, value_delimiter = ',', required = true)]
        dx: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        dt: Vec<f64>,
    },
    /// Error against dx with dt proportional to dx.
    DxConvergence {
        #[arg(long, value_delimiter = ',', required = true)]
        dx: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        dt_factor: f64,
    },
}

fn run(cli: Cli) -> Result<PathBuf> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    config.apply_overrides(&cli.overrides)?;
    if let Some(out) = cli.out {
        config.output_dir = out;
    }
    let dir = config.output_dir.clone();
    match cli.command {
        Command::Volterra { q, dt, p, t_final } => {
            let study = driver::run_volterra(&q, &dt, p, t_final)?;
            let params = json!({ "q": q, "dt": dt, "p": p, "t_final": t_final });
            driver::write_outputs(&dir, "volterra", &study.to_csv(), &params, &json!({ "orders": study.orders }))
        }
        Command::SphereModal {
            q,
            p,
            cfl_min,
            cfl_max,
            cfl_step,
            t_final,
            reference_cfl,
        } => {
            let n = ((cfl_max - cfl_min) / cfl_step).round() as usize;
            let grid: Vec<f64> = (0..=n).map(|i| cfl_min + i as f64 * cfl_step).collect();
            let options = ScanOptions {
                t_final,
                reference_cfl,
                ..ScanOptions::default()
            };
            let scan = driver::run_sphere_modal(q, &p, &grid, &options)?;
            let params = json!({ "q": q, "p": p, "cfl": grid, "options": options });
            let summary = json!({ "min_stable_cfl": scan.min_stable_cfl });
            driver::write_outputs(&dir, &format!("sphere_modal_q{q}"), &driver::sphere_scan_csv(&scan), &params, &summary)
        }
        Command::GrfTest { n_phi, times } => {
            let grids: Vec<(usize, usize)> = n_phi
                .iter()
                .map(|&n| (n, tdbie::geometry::SurfaceGrid::default_n_theta(n)))
                .collect();
            let source = match &config.source {
                SourceConfig::Point(src) => src.clone(),
                SourceConfig::PlaneWave(_) => driver::grf_source(),
            };
            let target = config.probes.first().copied().unwrap_or([1.3, 0.1, 0.8]);
            let rows = driver::run_grf_test(&config.surface, config.p, config.aux_order(), &grids, &source, target, &times)?;
            let fit = |f: fn(&driver::GrfRow) -> f64| {
                driver::log_log_slope(&rows.iter().map(|r| (r.dx, f(r))).collect::<Vec<_>>())
            };
            let summary = json!({ "exterior_order": fit(|r| r.exterior), "surface_order": fit(|r| r.on_surface) });
            driver::write_outputs(&dir, "grf", &driver::grf_csv(&rows), &config, &summary)
        }
        Command::Bvp => {
            let result = driver::run_bvp(&config)?;
            let mut summary = serde_json::to_value(&result.summary)?;
            summary["decay_rate_12_19"] = json!(result.march.growth_rate(12.0, 19.0));
            driver::write_outputs(&dir, "bvp", &result.to_csv(), &config, &summary)
        }
        Command::Scatter => {
            let result = driver::run_scatter(&config)?;
            if !result.snapshots.is_empty() {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("scatter_field.csv"), result.field_csv())?;
            }
            driver::write_outputs(&dir, "scatter", &result.probes_csv(), &config, &result.summary)
        }
        Command::Sweep { dx, dt } => {
            let result = driver::run_sweep(&config, &dx, &dt)?;
            let summary = json!({ "cells": result.cells });
            driver::write_outputs(&dir, "sweep", &result.to_csv(), &config, &summary)
        }
        Command::DxConvergence { dx, dt_factor } => {
            let result = driver::run_dx_convergence(&config, &dx, dt_factor)?;
            let summary = json!({ "order": result.order, "dt_factor": dt_factor });
            driver::write_outputs(&dir, "dx_convergence", &result.to_csv(), &config, &summary)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
