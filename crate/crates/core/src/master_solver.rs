//! Stieltjes transform of the Jacobian spectrum from the implicit master
//! equation
//!
//! ```text
//! z G - 1 = M_{D^2}( z^{1/L} F(z G - 1) ),   F(x) = S_W(x) ((1 + x) / x)^{1 - 1/L}
//! ```
//!
//! tracked from far above the real axis down to `lambda + i eps`.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::activations::ActivationSpec;
use crate::density::{Atom, Domain, SpectralDensity};
use crate::error::{Result, SpectraError};
use crate::free_prob::WeightEnsemble;
use crate::parallel::{map_indexed, Execution};
use crate::signal_prop::NetworkConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub step_base: f64,
    pub half_steps: u32,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub final_epsilon: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            step_base: 1.5,
            half_steps: 40,
            newton_tol: 1e-11,
            newton_max_iter: 100,
            final_epsilon: 1e-6,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        let top = self.step_base.powi(self.half_steps as i32);
        if !(self.step_base > 1.0) {
            return Err(SpectraError::Invalid(format!(
                "step_base = {} must exceed 1",
                self.step_base
            )));
        }
        if self.half_steps == 0 || self.newton_max_iter == 0 || !(self.newton_tol > 0.0) {
            return Err(SpectraError::Invalid(
                "half_steps, newton_max_iter and newton_tol must be positive".into(),
            ));
        }
        if !(self.final_epsilon >= 1.0 / top && self.final_epsilon <= top) {
            return Err(SpectraError::Invalid(format!(
                "final_epsilon = {:e} outside [b^-N, b^N] = [{:e}, {:e}]",
                self.final_epsilon,
                1.0 / top,
                top
            )));
        }
        Ok(())
    }

    /// Imaginary parts visited by the continuation, top excluded.
    fn heights(&self) -> Vec<f64> {
        let n = self.half_steps as i32;
        let mut ys: Vec<f64> = (1..=2 * n)
            .map(|k| self.step_base.powi(n - k))
            .take_while(|&y| y > self.final_epsilon)
            .collect();
        ys.push(self.final_epsilon);
        ys
    }
}

/// The master equation with `q*` resolved.
#[derive(Debug, Clone)]
pub struct MasterEquation {
    pub activation: ActivationSpec,
    pub qstar: f64,
    pub weights: WeightEnsemble,
    pub depth: usize,
}

impl MasterEquation {
    pub fn from_config(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        Ok(MasterEquation {
            activation: config.activation.clone(),
            qstar: config.resolve_qstar()?,
            weights: config.weights(),
            depth: config.depth,
        })
    }

    pub fn residual(&self, g: Complex64, z: Complex64) -> Result<Complex64> {
        let x = z * g - 1.0;
        let one_plus = 1.0 + x;
        if x.norm() < 1e-300 || one_plus.norm() < 1e-300 {
            return Err(SpectraError::Pole(format!("zG - 1 = {x} at z = {z}")));
        }
        let inv_l = 1.0 / self.depth as f64;
        let s = self.weights.s_transform(x)?;
        let f = s * ratio_power(one_plus, x, 1.0 - inv_l);
        let w = z.powf(inv_l) * f;
        Ok(x - self.activation.m_d2(self.qstar, w)?)
    }

    /// Central difference of the residual in `G`. The step is relative since
    /// `G ~ 1/z` far from the axis, and grows while rounding noise (a second
    /// difference comparable to the first) swamps the slope, as happens next
    /// to an atom where the residual is nearly flat.
    fn derivative(&self, z: Complex64, g: Complex64, r: Complex64) -> std::result::Result<Complex64, String> {
        let mut best: Option<(f64, Complex64)> = None;
        let mut h = 1e-7 * g.norm().max(1e-300);
        for _ in 0..6 {
            let (rp, rm) = match (self.residual(g + h, z), self.residual(g - h, z)) {
                (Ok(a), Ok(b)) => (a, b),
                _ => break,
            };
            let first = (rp - rm).norm();
            let ratio = (rp + rm - 2.0 * r).norm() / first;
            let d = (rp - rm) / (2.0 * h);
            if ratio <= 1e-2 {
                return Ok(d);
            }
            if ratio.is_finite() && best.is_none_or(|(b, _)| ratio < b) {
                best = Some((ratio, d));
            }
            h *= 10.0;
        }
        best.map(|(_, d)| d)
            .ok_or_else(|| format!("derivative undefined at G = {g}"))
    }

    fn newton(&self, z: Complex64, seed: Complex64, s: &SolverSettings) -> std::result::Result<Complex64, String> {
        let res = |g: Complex64| self.residual(g, z);
        let mut g = seed;
        let mut r = res(g).map_err(|e| format!("residual at seed: {e}"))?;
        for _ in 0..s.newton_max_iter {
            let scale = 1.0 + (z * g).norm();
            if r.norm() <= s.newton_tol * scale {
                return Ok(g);
            }
            let d = self.derivative(z, g, r)?;
            if !(d.norm() > 0.0) || !d.re.is_finite() {
                return Err(format!("singular derivative at G = {g}"));
            }
            let mut step = r / d;
            let mut accepted = None;
            for _ in 0..=8 {
                if let Ok(rn) = res(g - step) {
                    if rn.norm() < r.norm() {
                        accepted = Some((g - step, rn));
                        break;
                    }
                }
                step *= 0.5;
            }
            match accepted {
                Some((gn, rn)) => {
                    let moved = (gn - g).norm();
                    g = gn;
                    r = rn;
                    if moved <= 1e-15 * (1.0 + g.norm()) && r.norm() <= 1e3 * s.newton_tol * scale {
                        return Ok(g);
                    }
                }
                None => {
                    if r.norm() <= 1e3 * s.newton_tol * scale {
                        return Ok(g);
                    }
                    return Err(format!("no descent from G = {g}, |residual| = {:e}", r.norm()));
                }
            }
        }
        let scale = 1.0 + (z * g).norm();
        if r.norm() <= s.newton_tol * scale {
            Ok(g)
        } else {
            Err(format!(
                "{} Newton iterations, |residual| = {:e} at G = {g}",
                s.newton_max_iter,
                r.norm()
            ))
        }
    }

    /// Continuation along `Re z = lambda`; returns every `(y, G)` visited.
    pub fn track(&self, lambda: f64, settings: &SolverSettings) -> Result<Vec<(f64, Complex64)>> {
        settings.validate()?;
        let top = settings.step_base.powi(settings.half_steps as i32);
        let z0 = Complex64::new(lambda, top);
        let mut g = self.far_field(z0);
        let mut y_prev = top;
        let mut path = Vec::with_capacity(2 * settings.half_steps as usize + 1);
        path.push((top, g));
        for (k, y) in settings.heights().into_iter().enumerate() {
            let next =
                self.advance(lambda, (y_prev, g), y, settings, 8)
                    .map_err(|detail| SpectraError::BranchLoss {
                        step: k + 1,
                        z: Complex64::new(lambda, y).to_string(),
                        detail,
                    })?;
            g = next;
            y_prev = y;
            path.push((y, g));
        }
        Ok(path)
    }

    /// One continuation step from height `from.0` down to `y`, split at the
    /// geometric midpoint when the root found is not admissible.
    fn advance(
        &self,
        lambda: f64,
        from: (f64, Complex64),
        y: f64,
        settings: &SolverSettings,
        splits: u32,
    ) -> std::result::Result<Complex64, String> {
        let (y_prev, g) = from;
        let z_prev = Complex64::new(lambda, y_prev);
        let z = Complex64::new(lambda, y);
        let admissible = |next: Complex64| -> std::result::Result<Complex64, String> {
            if next.im > 1e-10 * next.norm() {
                return Err(format!("left the lower half-plane: G = {next}"));
            }
            // |G'(z)| <= int rho / |z - x|^2 = -Im G / Im z, which decreases in
            // Im z, so it bounds the whole step by its value at the bottom.
            let jump = (next - g).norm();
            let bound = (y_prev - y) * (-next.im / y).min(1.0 / (y * y));
            if jump > 2.0 * bound + 1e-12 * next.norm() {
                return Err(format!("root jumped by {jump:e} from {g} to {next}"));
            }
            Ok(next)
        };
        // zG - 1 ~ m1 / z, carried over from the previous height
        let predicted = (1.0 + (z_prev * g - 1.0) * z_prev / z) / z;
        let attempt = self
            .newton(z, predicted, settings)
            .and_then(admissible)
            .or_else(|_| self.newton(z, g, settings).and_then(admissible));
        match attempt {
            Err(_) if splits > 0 => {
                let mid = (y_prev * y).sqrt();
                let g_mid = self.advance(lambda, from, mid, settings, splits - 1)?;
                self.advance(lambda, (mid, g_mid), y, settings, splits - 1)
            }
            other => other,
        }
    }

    /// `(1 + m1 / z) / z`, with `m1 = chi^L` the mean squared singular value.
    fn far_field(&self, z: Complex64) -> Complex64 {
        let chi = self.weights.sigma_w.powi(2) * self.activation.mu_k(self.qstar, 1);
        let m1 = chi.powi(self.depth as i32);
        if m1.is_finite() {
            (1.0 + m1 / z) / z
        } else {
            1.0 / z
        }
    }

    pub fn solve_g_at(&self, lambda: f64, settings: &SolverSettings) -> Result<Complex64> {
        Ok(self.track(lambda, settings)?.last().unwrap().1)
    }

    /// Spectral mass in `[0, a]`, point masses at the origin included.
    ///
    /// `-(1/pi) Im int_{-a}^{a} G(x + i0) dx`, with the real segment pushed
    /// onto the rectangle through `-a + iY` and `a + iY`. Both vertical
    /// sides are continuation tracks, integrated by trapezoid in `log y`.
    pub fn mass_below(&self, a: f64, settings: &SolverSettings) -> Result<f64> {
        let side = |x: f64| -> Result<f64> {
            let path = self.track(x, settings)?;
            let mut acc = 0.0;
            for w in path.windows(2) {
                let (y0, g0) = w[0];
                let (y1, g1) = w[1];
                acc += 0.5 * (y0.ln() - y1.ln()) * (y0 * g0.re + y1 * g1.re);
            }
            let (y_last, g_last) = *path.last().unwrap();
            Ok(acc + y_last * g_last.re)
        };
        let top = settings.step_base.powi(settings.half_steps as i32);
        let across = (Complex64::new(a, top) / Complex64::new(-a, top)).ln();
        let total = -(side(-a)? - side(a)? + across.im) / std::f64::consts::PI;
        Ok(total)
    }

    /// Locations worth probing for point masses.
    pub fn atom_candidates(&self) -> Vec<f64> {
        let mut c = vec![0.0];
        if self.weights.kind == crate::free_prob::EnsembleKind::Orthogonal && self.activation.is_piecewise_linear() {
            let dmax = self.activation.slope_support().max();
            let top = (self.weights.sigma_w.powi(2) * dmax).powi(self.depth as i32);
            if top > 0.0 && top.is_finite() {
                c.push(top);
            }
        }
        c
    }

    /// `eps * |Im G|` over the final continuation steps. Returns the mass at
    /// the smallest `eps` when the sequence has settled to a positive value.
    pub fn probe_atom(&self, lambda: f64, settings: &SolverSettings) -> Result<Option<f64>> {
        let path = self.track(lambda, settings)?;
        let tail: Vec<f64> = path.iter().rev().take(5).map(|(y, g)| y * g.im.abs()).collect();
        if tail.len() < 5 {
            return Ok(None);
        }
        let hi = tail.iter().cloned().fold(f64::MIN, f64::max);
        let lo = tail.iter().cloned().fold(f64::MAX, f64::min);
        if lo > 1e-6 && (hi - lo) <= 0.05 * hi {
            Ok(Some(tail[0]))
        } else {
            Ok(None)
        }
    }
}

/// Argument in `(-3pi/2, pi/2]`. `zG - 1` lies in the lower half-plane for
/// `Im z > 0`, so the cut sits on the positive imaginary axis, away from it.
fn arg_lower(x: Complex64) -> f64 {
    let t = x.arg();
    if t > FRAC_PI_2 {
        t - 2.0 * PI
    } else {
        t
    }
}

/// `(a / b)^p` on the branch of `a^p b^-p`, both taken with `arg_lower`.
/// The ratio itself can cross the negative real axis along a track.
fn ratio_power(a: Complex64, b: Complex64, p: f64) -> Complex64 {
    let r = a / b;
    let want = arg_lower(a) - arg_lower(b);
    let turns = ((want - r.arg()) / (2.0 * PI)).round();
    Complex64::from_polar(r.norm().powf(p), p * (r.arg() + 2.0 * PI * turns))
}

pub fn master_residual(config: &NetworkConfig, g: Complex64, z: Complex64) -> Result<Complex64> {
    MasterEquation::from_config(config)?.residual(g, z)
}

pub fn solve_g_at(config: &NetworkConfig, lambda: f64, settings: &SolverSettings) -> Result<Complex64> {
    MasterEquation::from_config(config)?.solve_g_at(lambda, settings)
}

pub fn density(config: &NetworkConfig, grid: &[f64], settings: &SolverSettings) -> Result<SpectralDensity> {
    density_with(config, grid, settings, Execution::default())
}

/// Density of squared singular values on `grid`. Atoms found at candidate
/// locations are reported separately and their Lorentzian shadow at the
/// readout offset is removed from the continuum.
pub fn density_with(
    config: &NetworkConfig,
    grid: &[f64],
    settings: &SolverSettings,
    exec: Execution,
) -> Result<SpectralDensity> {
    settings.validate()?;
    if grid.iter().any(|&x| !(x >= 0.0)) {
        return Err(SpectraError::Invalid("grid must be nonnegative".into()));
    }
    let eq = MasterEquation::from_config(config)?;
    let solved = map_indexed(grid.len(), exec, |i| eq.solve_g_at(grid[i], settings));

    for (x, r) in grid.iter().zip(&solved) {
        if let Err(e) = r {
            log::warn!("density point lambda = {x} failed: {e}");
        }
    }
    let failed = solved.iter().filter(|r| r.is_err()).count();
    if failed * 20 > grid.len() {
        return Err(SpectraError::TooManyFailures {
            failed,
            total: grid.len(),
        });
    }

    let mut atoms = Vec::new();
    for c in eq.atom_candidates() {
        match eq.probe_atom(c, settings) {
            Ok(Some(mass)) => atoms.push(Atom { location: c, mass }),
            Ok(None) => {}
            Err(e) => log::warn!("atom probe at {c} failed: {e}"),
        }
    }

    let eps = settings.final_epsilon;
    let rho: Vec<f64> = grid
        .iter()
        .zip(&solved)
        .map(|(&x, r)| match r {
            Ok(g) => {
                let shadow: f64 = atoms
                    .iter()
                    .map(|a| a.mass * eps / (std::f64::consts::PI * ((x - a.location).powi(2) + eps * eps)))
                    .sum();
                (-g.im / std::f64::consts::PI - shadow).max(0.0)
            }
            Err(_) => f64::NAN,
        })
        .collect();

    let mut d = SpectralDensity::new(Domain::SquaredSingular, grid.to_vec(), rho)?;
    if let Some(&a) = grid.first().filter(|&&a| a > 0.0) {
        match eq.mass_below(a, settings) {
            Ok(m) => {
                let inside: f64 = atoms.iter().filter(|at| at.location < a).map(|at| at.mass).sum();
                d.lower_tail = (m - inside).max(0.0);
            }
            Err(e) => log::warn!("mass below lambda = {a} unavailable: {e}"),
        }
    }
    for a in atoms {
        d.push_atom(a);
    }
    let flags: Vec<serde_json::Value> = solved
        .iter()
        .map(|r| match r {
            Ok(_) => serde_json::Value::Null,
            Err(e) => serde_json::Value::String(e.to_string()),
        })
        .collect();
    d.metadata = serde_json::json!({
        "source": "master_equation",
        "config": config,
        "qstar": eq.qstar,
        "settings": settings,
        "point_errors": flags,
    });
    Ok(d)
}

pub fn to_singular_domain(density: &SpectralDensity) -> Result<SpectralDensity> {
    density.to_singular_domain()
}

/// Geometric grid from `1e-4` up to one tenth of `max`, then linear to
/// `max`, for resolving divergences at the origin.
pub fn hybrid_grid(max: f64, points: usize) -> Vec<f64> {
    let lo = 1e-4f64;
    if points < 4 || !(max > lo) {
        return vec![lo, max.max(2.0 * lo)];
    }
    let knee = (0.1 * max).max(lo * 10.0).min(max * 0.5);
    let n_geo = points / 3;
    let n_lin = points - n_geo;
    let mut g: Vec<f64> = (0..n_geo)
        .map(|i| lo * (knee / lo).powf(i as f64 / n_geo as f64))
        .collect();
    g.extend((0..n_lin).map(|i| knee + (max - knee) * i as f64 / (n_lin - 1) as f64));
    g
}
