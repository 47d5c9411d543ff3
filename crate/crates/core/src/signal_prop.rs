//! Mean-field signal propagation: the variance fixed point `q*`, the
//! per-layer gain `chi`, the critical line and the double-scaling schedule.

use serde::{Deserialize, Serialize};

use crate::activations::ActivationSpec;
use crate::error::{Result, SpectraError};
use crate::free_prob::{EnsembleKind, WeightEnsemble};
use crate::parallel::{map_indexed, Execution};
use crate::special::erf_inv;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixedPointSettings {
    pub damping: f64,
    pub max_iter: usize,
    pub initial_q: f64,
    pub tol: f64,
    pub ceiling: f64,
}

impl Default for FixedPointSettings {
    fn default() -> Self {
        FixedPointSettings {
            damping: 0.5,
            max_iter: 10_000,
            initial_q: 1.0,
            tol: 1e-12,
            ceiling: 1e8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub qstar: f64,
    pub chi: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
    /// `q* = 0` because the variance map is linear through the origin with
    /// unit slope; any input scale is a fixed point.
    pub degenerate: bool,
}

impl FixedPoint {
    pub fn require(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(SpectraError::Convergence {
                what: "variance fixed point".into(),
                detail: format!(
                    "stopped after {} iterations at q = {:e}, residual {:e}",
                    self.iterations, self.qstar, self.residual
                ),
            })
        }
    }
}

/// A random feed-forward network at initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub depth: usize,
    pub sigma_w: f64,
    #[serde(default)]
    pub sigma_b: f64,
    pub activation: ActivationSpec,
    pub ensemble: EnsembleKind,
    #[serde(default = "default_width")]
    pub width: usize,
    /// Pins `q*` instead of solving for it from `sigma_b`. Used by
    /// double-scaled networks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qstar: Option<f64>,
    #[serde(default)]
    pub fixed_point: FixedPointSettings,
}

fn default_width() -> usize {
    1000
}

impl NetworkConfig {
    pub fn new(activation: ActivationSpec, ensemble: EnsembleKind, depth: usize, sigma_w: f64, sigma_b: f64) -> Self {
        NetworkConfig {
            depth,
            sigma_w,
            sigma_b,
            activation,
            ensemble,
            width: default_width(),
            qstar: None,
            fixed_point: FixedPointSettings::default(),
        }
    }

    /// Network at the critical `sigma_w` for the given `sigma_b`.
    pub fn critical(activation: ActivationSpec, ensemble: EnsembleKind, depth: usize, sigma_b: f64) -> Result<Self> {
        let settings = FixedPointSettings::default();
        let (sigma_w, _) = critical_sigma_w(&activation, sigma_b, &settings)?;
        Ok(Self::new(activation, ensemble, depth, sigma_w, sigma_b))
    }

    /// Orthogonal network on the double-scaling schedule with limiting
    /// spectral variance `sigma0_sq`.
    pub fn double_scaled(activation: ActivationSpec, depth: usize, sigma0_sq: f64) -> Result<Self> {
        let ds = double_scaling_qstar(&activation, depth, sigma0_sq)?;
        let mut cfg = Self::new(activation, EnsembleKind::Orthogonal, depth, ds.sigma_w, 0.0);
        cfg.sigma_b = ds.sigma_b_sq.map(f64::sqrt).unwrap_or(0.0);
        cfg.qstar = Some(ds.qstar);
        Ok(cfg)
    }

    pub fn with_width(mut self, width: usize) -> Self {
        self.width = width;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(SpectraError::Invalid("depth must be at least 1".into()));
        }
        if !(self.sigma_w >= 0.0 && self.sigma_w.is_finite()) {
            return Err(SpectraError::Invalid(format!("sigma_w = {}", self.sigma_w)));
        }
        if !(self.sigma_b >= 0.0 && self.sigma_b.is_finite()) {
            return Err(SpectraError::Invalid(format!("sigma_b = {}", self.sigma_b)));
        }
        if let Some(q) = self.qstar {
            if !(q >= 0.0 && q.is_finite()) {
                return Err(SpectraError::Invalid(format!("qstar = {q}")));
            }
        }
        Ok(())
    }

    pub fn weights(&self) -> WeightEnsemble {
        WeightEnsemble::new(self.ensemble, self.sigma_w)
    }

    pub fn fixed_point(&self) -> Result<FixedPoint> {
        self.validate()?;
        if let Some(q) = self.qstar {
            return Ok(FixedPoint {
                qstar: q,
                chi: chi(&self.activation, self.sigma_w, q),
                iterations: 0,
                converged: true,
                residual: 0.0,
                degenerate: false,
            });
        }
        qstar_fixed_point(&self.activation, self.sigma_w, self.sigma_b, &self.fixed_point)?.require()
    }

    pub fn resolve_qstar(&self) -> Result<f64> {
        Ok(self.fixed_point()?.qstar)
    }
}

/// One step of the variance map `q -> sigma_w^2 E[phi(sqrt(q) h)^2] + sigma_b^2`.
pub fn variance_map(activation: &ActivationSpec, sigma_w: f64, sigma_b: f64, q: f64) -> f64 {
    sigma_w * sigma_w * activation.mean_phi_sq(q) + sigma_b * sigma_b
}

pub fn qstar_fixed_point(
    activation: &ActivationSpec,
    sigma_w: f64,
    sigma_b: f64,
    settings: &FixedPointSettings,
) -> Result<FixedPoint> {
    if !(sigma_w > 0.0) || !(sigma_b >= 0.0) {
        return Err(SpectraError::Domain(format!(
            "need sigma_w > 0 and sigma_b >= 0, got ({sigma_w}, {sigma_b})"
        )));
    }
    let sw2 = sigma_w * sigma_w;

    // Homogeneous activations without bias: the map is q -> slope * q.
    if activation.is_scale_degenerate() && sigma_b == 0.0 {
        let slope = sw2 * activation.mean_phi_sq(1.0);
        if slope > 1.0 + 1e-12 {
            return Err(SpectraError::Divergence {
                last_q: f64::INFINITY,
                ceiling: settings.ceiling,
            });
        }
        return Ok(FixedPoint {
            qstar: 0.0,
            chi: chi(activation, sigma_w, 0.0),
            iterations: 0,
            converged: true,
            residual: 0.0,
            degenerate: (slope - 1.0).abs() <= 1e-12,
        });
    }

    let d = settings.damping;
    let mut q = settings.initial_q;
    let mut residual = f64::INFINITY;
    for it in 0..settings.max_iter {
        let t = variance_map(activation, sigma_w, sigma_b, q);
        residual = (t - q).abs();
        if residual <= settings.tol * (1.0 + q) {
            return Ok(FixedPoint {
                qstar: q,
                chi: chi(activation, sigma_w, q),
                iterations: it,
                converged: true,
                residual,
                degenerate: false,
            });
        }
        // The last undamped image of a converged iterate is taken as is.
        let next = if residual <= 1e3 * settings.tol * (1.0 + q) {
            t
        } else {
            (1.0 - d) * q + d * t
        };
        q = next;
        if !q.is_finite() || q > settings.ceiling {
            return Err(SpectraError::Divergence {
                last_q: q,
                ceiling: settings.ceiling,
            });
        }
    }
    Ok(FixedPoint {
        qstar: q,
        chi: chi(activation, sigma_w, q),
        iterations: settings.max_iter,
        converged: false,
        residual,
        degenerate: false,
    })
}

pub fn chi(activation: &ActivationSpec, sigma_w: f64, qstar: f64) -> f64 {
    sigma_w * sigma_w * activation.mu_k(qstar, 1)
}

/// `sigma_w` on the critical line `chi = 1` at the given bias scale, with
/// the matching `q*`. `chi` is within `1e-8` of one; otherwise a bracket
/// error is returned.
pub fn critical_sigma_w(
    activation: &ActivationSpec,
    sigma_b: f64,
    settings: &FixedPointSettings,
) -> Result<(f64, f64)> {
    const LO_LIMIT: f64 = 1e-6;
    const HI_LIMIT: f64 = 1e3;

    // chi - 1 together with the q* it was evaluated at. A diverging
    // variance sits on the chaotic side.
    let g = |sw: f64| -> Result<(f64, f64)> {
        match qstar_fixed_point(activation, sw, sigma_b, settings) {
            Ok(fp) => Ok((fp.chi - 1.0, fp.qstar)),
            Err(SpectraError::Divergence { .. }) => Ok((1.0, f64::INFINITY)),
            Err(e) => Err(e),
        }
    };

    let (mut lo, mut hi) = (0.5, 2.0);
    let mut g_lo = g(lo)?.0;
    while g_lo > 0.0 {
        lo *= 0.5;
        if lo < LO_LIMIT {
            return Err(SpectraError::Bracket(format!(
                "chi > 1 for all sigma_w down to {LO_LIMIT:e} at sigma_b = {sigma_b}"
            )));
        }
        g_lo = g(lo)?.0;
    }
    let mut g_hi = g(hi)?.0;
    while g_hi < 0.0 {
        hi *= 2.0;
        if hi > HI_LIMIT {
            return Err(SpectraError::Bracket(format!(
                "chi < 1 for all sigma_w up to {HI_LIMIT:e} at sigma_b = {sigma_b}"
            )));
        }
        g_hi = g(hi)?.0;
    }
    if g_lo == 0.0 {
        return Ok((lo, g(lo)?.1));
    }

    let mut best = (hi, g(hi)?);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (gm, qm) = g(mid)?;
        if gm.abs() < best.1 .0.abs() {
            best = (mid, (gm, qm));
        }
        if gm == 0.0 || (hi - lo) <= 4.0 * f64::EPSILON * mid {
            break;
        }
        if gm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (sw, (gap, q)) = best;
    if !q.is_finite() {
        return Err(SpectraError::Bracket(format!(
            "critical line at sigma_b = {sigma_b} lies on a diverging fixed point"
        )));
    }
    // a jump in chi (a fixed point appearing or vanishing) brackets no root
    if gap.abs() > 1e-8 {
        return Err(SpectraError::Bracket(format!(
            "chi jumps across 1 near sigma_w = {sw} at sigma_b = {sigma_b} (chi - 1 = {gap:e} there)"
        )));
    }
    Ok((sw, q))
}

/// Critical parameters on the double-scaling schedule at depth `L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoubleScaling {
    pub qstar: f64,
    pub sigma_w: f64,
    /// Bias variance that makes `qstar` a fixed point at `sigma_w`, when it
    /// is nonnegative.
    pub sigma_b_sq: Option<f64>,
}

/// `q*(L)` solving `mu2/mu1^2 = 1 + sigma0^2 / L`, with `sigma_w^2 = 1/mu1`.
pub fn double_scaling_qstar(activation: &ActivationSpec, depth: usize, sigma0_sq: f64) -> Result<DoubleScaling> {
    if activation.is_scale_degenerate() {
        return Err(SpectraError::Unsupported(format!(
            "{} has q*-independent derivative moments; its spectral variance cannot be held fixed",
            activation.name()
        )));
    }
    if depth == 0 || !(sigma0_sq > 0.0) {
        return Err(SpectraError::Domain(format!(
            "need depth >= 1 and sigma0_sq > 0, got ({depth}, {sigma0_sq})"
        )));
    }
    let target = sigma0_sq / depth as f64;

    let qstar = if activation.name() == "hard_tanh" {
        let p = depth as f64 / (depth as f64 + sigma0_sq);
        let x = erf_inv(p)?;
        1.0 / (2.0 * x * x)
    } else {
        let f = |q: f64| activation.moment_excess(q) - target;
        let (mut lo, mut hi) = (1e-12f64, 1e2f64);
        let (f_lo, f_hi) = (f(lo), f(hi));
        if !(f_lo <= 0.0 && f_hi >= 0.0) {
            return Err(SpectraError::Bracket(format!(
                "moment excess {f_lo:e}..{f_hi:e} does not bracket sigma0^2/L = {target:e} on q in [1e-12, 100]"
            )));
        }
        for _ in 0..400 {
            let mid = (lo * hi).sqrt();
            let fm = f(mid);
            if fm.abs() <= 1e-12 * target || (hi / lo - 1.0) <= 4.0 * f64::EPSILON {
                lo = mid;
                hi = mid;
                break;
            }
            if fm < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo * hi).sqrt()
    };

    let mu1 = activation.mu_k(qstar, 1);
    let sigma_w = (1.0 / mu1).sqrt();
    let sigma_b_sq = qstar - sigma_w * sigma_w * activation.mean_phi_sq(qstar);
    Ok(DoubleScaling {
        qstar,
        sigma_w,
        sigma_b_sq: (sigma_b_sq >= 0.0).then_some(sigma_b_sq),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisRange {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl AxisRange {
    pub fn values(&self) -> Vec<f64> {
        match self.points {
            0 => Vec::new(),
            1 => vec![self.min],
            n => (0..n)
                .map(|i| self.min + (self.max - self.min) * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    pub sigma_w: f64,
    pub sigma_b: f64,
    pub qstar: f64,
    pub chi: f64,
    pub converged: bool,
}

/// Fixed point and `chi` over a `(sigma_w, sigma_b)` grid, `sigma_b` major.
/// Cells that fail to converge or diverge keep their last values with
/// `converged = false`.
pub fn phase_grid(
    activation: &ActivationSpec,
    sigma_w: &AxisRange,
    sigma_b: &AxisRange,
    settings: &FixedPointSettings,
    exec: Execution,
) -> Vec<PhaseCell> {
    let ws = sigma_w.values();
    let bs = sigma_b.values();
    let nw = ws.len();
    map_indexed(ws.len() * bs.len(), exec, |i| {
        let (sw, sb) = (ws[i % nw], bs[i / nw]);
        match qstar_fixed_point(activation, sw, sb, settings) {
            Ok(fp) => PhaseCell {
                sigma_w: sw,
                sigma_b: sb,
                qstar: fp.qstar,
                chi: fp.chi,
                converged: fp.converged,
            },
            Err(SpectraError::Divergence { last_q, .. }) => PhaseCell {
                sigma_w: sw,
                sigma_b: sb,
                qstar: last_q,
                chi: f64::NAN,
                converged: false,
            },
            Err(_) => PhaseCell {
                sigma_w: sw,
                sigma_b: sb,
                qstar: f64::NAN,
                chi: f64::NAN,
                converged: false,
            },
        }
    })
}
