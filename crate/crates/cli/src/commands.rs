use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use jacspec::activations::ActivationSpec;
use jacspec::density::{Domain, SpectralDensity};
use jacspec::free_prob::{jacobian_moments, moments_from_density, EnsembleKind};
use jacspec::limit_dist::{limit_density, limit_grid, LimitClass, LimitSpec};
use jacspec::master_solver::{density_with, hybrid_grid, SolverSettings};
use jacspec::rmt_sim::{empirical_density, ks_distance, simulate, EmpiricalSpectrum};
use jacspec::signal_prop::{critical_sigma_w, phase_grid, qstar_fixed_point, AxisRange, FixedPointSettings};
use jacspec::{io, Execution, NetworkConfig};

/// Network description as written in config files. `sigma_w` defaults to
/// the critical value; `sigma0_sq` switches to the double-scaling schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub activation: ActivationSpec,
    #[serde(default = "default_ensemble")]
    pub ensemble: EnsembleKind,
    pub depth: usize,
    #[serde(default)]
    pub sigma_w: Option<f64>,
    #[serde(default)]
    pub sigma_b: f64,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default)]
    pub sigma0_sq: Option<f64>,
    #[serde(default)]
    pub fixed_point: FixedPointSettings,
}

fn default_ensemble() -> EnsembleKind {
    EnsembleKind::Orthogonal
}

fn default_width() -> usize {
    1000
}

impl NetworkSpec {
    pub fn resolve(&self) -> Result<NetworkConfig> {
        let mut cfg = if let Some(s0) = self.sigma0_sq {
            if self.ensemble != EnsembleKind::Orthogonal {
                bail!("the double-scaling schedule is defined for orthogonal weights");
            }
            NetworkConfig::double_scaled(self.activation.clone(), self.depth, s0)?
        } else {
            let sigma_w = match self.sigma_w {
                Some(sw) => sw,
                None => critical_sigma_w(&self.activation, self.sigma_b, &self.fixed_point)?.0,
            };
            NetworkConfig::new(
                self.activation.clone(),
                self.ensemble,
                self.depth,
                sigma_w,
                self.sigma_b,
            )
        };
        cfg.width = self.width;
        cfg.fixed_point = self.fixed_point;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn default_domain() -> Domain {
    Domain::Singular
}

fn default_points() -> usize {
    600
}

fn default_trials() -> usize {
    30
}

fn in_domain(d: SpectralDensity, domain: Domain) -> Result<SpectralDensity> {
    Ok(match domain {
        Domain::SquaredSingular => d,
        Domain::Singular => d.to_singular_domain()?,
    })
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub struct Outcome {
    pub config: Value,
    pub result: Value,
}

fn outcome<C: Serialize, R: Serialize>(config: &C, result: R) -> Result<Outcome> {
    Ok(Outcome {
        config: serde_json::to_value(config)?,
        result: serde_json::to_value(result)?,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedPointCmd {
    pub activation: ActivationSpec,
    /// Omit to solve for the critical value at `sigma_b`.
    #[serde(default)]
    pub sigma_w: Option<f64>,
    #[serde(default)]
    pub sigma_b: f64,
    #[serde(default)]
    pub settings: FixedPointSettings,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

pub fn fixed_point(cmd: FixedPointCmd) -> Result<Outcome> {
    let sigma_w = match cmd.sigma_w {
        Some(sw) => sw,
        None => critical_sigma_w(&cmd.activation, cmd.sigma_b, &cmd.settings)?.0,
    };
    let fp = qstar_fixed_point(&cmd.activation, sigma_w, cmd.sigma_b, &cmd.settings)?.require()?;
    let report = json!({
        "sigma_w": sigma_w,
        "sigma_b": cmd.sigma_b,
        "qstar": fp.qstar,
        "chi": fp.chi,
        "iterations": fp.iterations,
        "converged": fp.converged,
        "residual": fp.residual,
        "degenerate": fp.degenerate,
    });
    if let Some(p) = &cmd.output {
        io::write_json(&report, p)?;
    }
    outcome(&cmd, report)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseGridCmd {
    pub activation: ActivationSpec,
    pub sigma_w: AxisRange,
    pub sigma_b: AxisRange,
    #[serde(default)]
    pub settings: FixedPointSettings,
    pub output: PathBuf,
}

pub fn phase_grid_cmd(cmd: PhaseGridCmd, exec: Execution) -> Result<Outcome> {
    let cells = phase_grid(&cmd.activation, &cmd.sigma_w, &cmd.sigma_b, &cmd.settings, exec);
    io::write_phase_grid(&cells, &cmd.output)?;
    let flagged = cells.iter().filter(|c| !c.converged).count();
    outcome(
        &cmd,
        json!({ "cells": cells.len(), "unconverged": flagged, "output": cmd.output }),
    )
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Largest squared singular value. Ignored when `from_spectrum` is set.
    #[serde(default = "default_grid_max")]
    pub max: f64,
    #[serde(default = "default_points")]
    pub points: usize,
    /// Size the grid to 1.5x the largest squared value in this spectrum CSV.
    #[serde(default)]
    pub from_spectrum: Option<PathBuf>,
}

fn default_grid_max() -> f64 {
    4.0
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            max: default_grid_max(),
            points: default_points(),
            from_spectrum: None,
        }
    }
}

impl GridSpec {
    fn build(&self) -> Result<Vec<f64>> {
        let max = match &self.from_spectrum {
            Some(p) => {
                let sv = io::read_spectrum_csv(p)?;
                let top = sv.iter().cloned().fold(0.0f64, f64::max);
                1.5 * top * top
            }
            None => self.max,
        };
        Ok(hybrid_grid(max, self.points))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySpectrumCmd {
    pub network: NetworkSpec,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_domain")]
    pub domain: Domain,
    pub output: PathBuf,
    #[serde(default)]
    pub json_output: Option<PathBuf>,
}

pub fn theory_spectrum(cmd: TheorySpectrumCmd, exec: Execution) -> Result<Outcome> {
    let cfg = cmd.network.resolve()?;
    let grid = cmd.grid.build()?;
    let d = density_with(&cfg, &grid, &cmd.solver, exec)?;
    let d = in_domain(d, cmd.domain)?;
    io::write_density(&d, &cmd.output, cmd.json_output.as_deref())?;
    let result = json!({
        "resolved_network": cfg,
        "points": grid.len(),
        "failed_points": d.failed_points(),
        "atoms": d.atoms,
        "total_mass": d.total_mass(),
        "output": cmd.output,
    });
    outcome(&cmd, result)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSpec {
    pub bins: usize,
    pub output: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateCmd {
    pub network: NetworkSpec,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    pub output: PathBuf,
    #[serde(default)]
    pub histogram: Option<HistogramSpec>,
}

fn spectrum_stats(sp: &EmpiricalSpectrum) -> Value {
    json!({
        "values": sp.singular_values.len(),
        "mean_squared": sp.mean_squared(),
        "variance_squared": sp.variance_squared(),
        "qstar": sp.qstar,
    })
}

pub fn simulate_cmd(cmd: SimulateCmd, exec: Execution) -> Result<Outcome> {
    let cfg = cmd.network.resolve()?;
    let sp = simulate(&cfg, cmd.trials, cmd.seed, exec)?;
    io::write_spectrum(&sp, &cmd.output, &sidecar(&cmd.output))?;
    if let Some(h) = &cmd.histogram {
        let d = empirical_density(&sp, h.bins)?;
        io::write_density(&d, &h.output, None)?;
    }
    outcome(
        &cmd,
        json!({ "resolved_network": cfg, "spectrum": spectrum_stats(&sp), "output": cmd.output }),
    )
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareCmd {
    pub network: NetworkSpec,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_points")]
    pub grid_points: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

pub fn compare(cmd: CompareCmd, exec: Execution) -> Result<Outcome> {
    let cfg = cmd.network.resolve()?;
    let sp = simulate(&cfg, cmd.trials, cmd.seed, exec)?;
    let top = sp.singular_values.last().copied().unwrap_or(1.0);
    let grid = hybrid_grid(1.5 * top * top, cmd.grid_points);
    let d = density_with(&cfg, &grid, &cmd.solver, exec)?;
    let ds = d.to_singular_domain()?;
    let ks = ks_distance(&sp, &ds)?;
    let m = jacobian_moments(&cfg)?;
    let report = json!({
        "ks": ks,
        "empirical_mean_squared": sp.mean_squared(),
        "empirical_variance_squared": sp.variance_squared(),
        "theory_m1": m.m1,
        "theory_variance": m.variance,
        "density_m1": moments_from_density(&d, 1),
        "m1_delta": sp.mean_squared() - m.m1,
        "variance_delta": sp.variance_squared() - m.variance,
        "failed_points": d.failed_points(),
        "resolved_network": cfg,
    });
    if let Some(p) = &cmd.output {
        io::write_json(&report, p)?;
    }
    outcome(&cmd, report)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitCmd {
    pub class: LimitClass,
    pub sigma0_sq: f64,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_domain")]
    pub domain: Domain,
    pub output: PathBuf,
    #[serde(default)]
    pub json_output: Option<PathBuf>,
}

pub fn limit(cmd: LimitCmd, exec: Execution) -> Result<Outcome> {
    let spec = LimitSpec {
        class: cmd.class,
        sigma0_sq: cmd.sigma0_sq,
    };
    let grid = limit_grid(&spec, cmd.points)?;
    let d = in_domain(limit_density(&spec, &grid, exec)?, cmd.domain)?;
    io::write_density(&d, &cmd.output, cmd.json_output.as_deref())?;
    outcome(
        &cmd,
        json!({ "atoms": d.atoms, "total_mass": d.total_mass(), "output": cmd.output }),
    )
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsCmd {
    pub network: NetworkSpec,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

pub fn moments(cmd: MomentsCmd) -> Result<Outcome> {
    let cfg = cmd.network.resolve()?;
    let m = jacobian_moments(&cfg).context("moment formulas")?;
    let report = json!({
        "m1": m.m1,
        "m2": m.m2,
        "variance": m.variance,
        "chi": m.chi,
        "qstar": m.qstar,
    });
    if let Some(p) = &cmd.output {
        io::write_json(&report, p)?;
    }
    outcome(&cmd, report)
}
