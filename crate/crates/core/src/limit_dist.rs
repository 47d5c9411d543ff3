//! Infinite-depth limits of the Jacobian spectrum on the double-scaling
//! schedule, for activations whose squared derivative is Bernoulli and for
//! smooth activations.

use std::f64::consts::{E, FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::density::{Atom, Domain, SpectralDensity};
use crate::error::{Result, SpectraError};
use crate::parallel::{map_indexed, Execution};
use crate::special::{lambert_w0, r_lambert, r_lambert_newton};

/// Imaginary offset, relative to `x`, used to read densities off the closed
/// forms at `x + i eps x`.
pub const READOUT_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitClass {
    Bernoulli,
    Smooth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitSpec {
    pub class: LimitClass,
    pub sigma0_sq: f64,
}

impl LimitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0_sq > 0.0 && self.sigma0_sq.is_finite()) {
            return Err(SpectraError::Domain(format!("sigma0_sq = {}", self.sigma0_sq)));
        }
        Ok(())
    }

    pub fn g(&self, z: Complex64) -> Result<Complex64> {
        match self.class {
            LimitClass::Bernoulli => bernoulli_g(self.sigma0_sq, z),
            LimitClass::Smooth => smooth_g(self.sigma0_sq, z),
        }
    }
}

fn check_z(z: Complex64) -> Result<()> {
    if z.norm() == 0.0 {
        return Err(SpectraError::Pole("Stieltjes transform at z = 0".into()));
    }
    Ok(())
}

/// `G(z) = sigma0^2 / (z (sigma0^2 + W(-sigma0^2 / z)))` with principal W.
pub fn bernoulli_g(sigma0_sq: f64, z: Complex64) -> Result<Complex64> {
    check_z(z)?;
    let u = lambert_w0(-sigma0_sq / z)?;
    let d = sigma0_sq + u;
    if d.norm() == 0.0 {
        return Err(SpectraError::Pole(format!("Bernoulli limit at z = {z}")));
    }
    Ok(sigma0_sq / (z * d))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BernoulliEdges {
    pub lambda0: f64,
    /// Right edge of the bulk.
    pub lambda1: f64,
    pub lambda2: f64,
    pub mass_lambda0: f64,
    pub mass_lambda2: f64,
}

impl BernoulliEdges {
    pub fn atoms(&self) -> Vec<Atom> {
        [(self.lambda0, self.mass_lambda0), (self.lambda2, self.mass_lambda2)]
            .into_iter()
            .filter(|&(_, m)| m > 0.0)
            .map(|(location, mass)| Atom { location, mass })
            .collect()
    }
}

const PROBE_EPS: [f64; 4] = [1e-6, 1e-7, 1e-8, 1e-9];

/// `eps |Im G(x + i eps)|` over shrinking `eps`. A settled positive value
/// is a point mass; a drifting one is a divergence of the density.
fn residue_probe<F: Fn(Complex64) -> Result<Complex64>>(g: F, x: f64) -> Result<f64> {
    let mut vals = Vec::with_capacity(PROBE_EPS.len());
    for eps in PROBE_EPS {
        vals.push(eps * g(Complex64::new(x, eps))?.im.abs());
    }
    let last = *vals.last().unwrap();
    let first = vals[0];
    if last > 1e-8 && (first - last).abs() <= 1e-2 * last {
        Ok(last)
    } else {
        Ok(0.0)
    }
}

pub fn bernoulli_edges_atoms(sigma0_sq: f64) -> Result<BernoulliEdges> {
    if !(sigma0_sq > 0.0) {
        return Err(SpectraError::Domain(format!("sigma0_sq = {sigma0_sq}")));
    }
    let g = |z: Complex64| bernoulli_g(sigma0_sq, z);
    let lambda2 = sigma0_sq.exp();
    let mass_lambda2 = if sigma0_sq <= 1.0 {
        residue_probe(g, lambda2)?
    } else {
        0.0
    };
    Ok(BernoulliEdges {
        lambda0: 0.0,
        lambda1: sigma0_sq * E,
        lambda2,
        mass_lambda0: residue_probe(g, 0.0)?,
        mass_lambda2,
    })
}

/// Bernoulli-limit mass in `(0, a]`, from the antiderivative
/// `-log u - (sigma0^2 - 1) log(sigma0^2 + u)` of `G` with `u = W(-sigma0^2/z)`.
pub fn bernoulli_mass_below(sigma0_sq: f64, a: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Ok(0.0);
    }
    let z = Complex64::new(a, 1e-14 * a);
    let u = lambert_w0(-sigma0_sq / z)?;
    Ok((u.arg() + (sigma0_sq - 1.0) * (sigma0_sq + u).arg()) / PI)
}

/// Stieltjes transform of the smooth-class limit,
/// `G(z) = W_r(x) / (z sigma0^2)` with `r = -e^{sigma0^2} z` and
/// `x = -sigma0^2 z e^{sigma0^2}`.
///
/// The root is taken at `i Y` for large `Y` from the straight continuation
/// in `x`, walked down the imaginary axis to `i |z|`, then along the arc of
/// radius `|z|` to `z`. Each step is a Newton solve from the previous root.
pub fn smooth_g(sigma0_sq: f64, z: Complex64) -> Result<Complex64> {
    check_z(z)?;
    if z.im < 0.0 {
        return Ok(smooth_g(sigma0_sq, z.conj())?.conj());
    }
    let es = sigma0_sq.exp();
    let coeffs = |z: Complex64| (-es * z, -sigma0_sq * es * z);

    let radius = z.norm();
    let top = radius.max(10.0 * (1.0 + sigma0_sq));
    let start = Complex64::new(0.0, top);
    let (r0, x0) = coeffs(start);
    let mut w = r_lambert(r0, x0)?;

    let walk = |zk: Complex64, w: &mut Complex64| -> Result<()> {
        let (r, x) = coeffs(zk);
        *w = r_lambert_newton(r, x, *w)?;
        Ok(())
    };

    let mut y = top;
    while y > radius * 1.5 {
        y /= 1.5;
        walk(Complex64::new(0.0, y), &mut w)?;
    }
    walk(Complex64::new(0.0, radius), &mut w)?;

    // arc from the imaginary axis to arg z, refining toward the end
    let target = z.arg();
    let mut gap = FRAC_PI_2 - target;
    let floor = 1e-3 * target.min(PI - target).max(1e-300);
    while gap.abs() > floor {
        gap /= 1.5;
        walk(Complex64::from_polar(radius, target + gap), &mut w)?;
    }
    walk(z, &mut w)?;
    Ok(w / (z * sigma0_sq))
}

fn sigma_pm_sq(sigma0_sq: f64) -> (f64, f64) {
    let s0 = sigma0_sq.sqrt();
    let root = (sigma0_sq + 4.0).sqrt();
    (s0 * (s0 + root), s0 * (s0 - root))
}

/// Support edges `(lower, upper)` of the smooth-class limit in `lambda`.
///
/// Evaluates `1/2 e^{-s_a/2} (2 + s_b)` at both sign pairings. The pairing
/// with `s_a = sigma_+^2` gives the lower edge.
pub fn smooth_edges(sigma0_sq: f64) -> Result<(f64, f64)> {
    if !(sigma0_sq > 0.0) {
        return Err(SpectraError::Domain(format!("sigma0_sq = {sigma0_sq}")));
    }
    let (sp, sm) = sigma_pm_sq(sigma0_sq);
    let a = 0.5 * (-0.5 * sp).exp() * (2.0 + sm);
    let b = 0.5 * (-0.5 * sm).exp() * (2.0 + sp);
    Ok((a.min(b), a.max(b)))
}

/// Edges in singular values from `e^{-s_a/4} sqrt(1 + s_b/2)`.
pub fn smooth_edges_singular(sigma0_sq: f64) -> Result<(f64, f64)> {
    if !(sigma0_sq > 0.0) {
        return Err(SpectraError::Domain(format!("sigma0_sq = {sigma0_sq}")));
    }
    let (sp, sm) = sigma_pm_sq(sigma0_sq);
    let a = (-0.25 * sp).exp() * (1.0 + 0.5 * sm).sqrt();
    let b = (-0.25 * sm).exp() * (1.0 + 0.5 * sp).sqrt();
    Ok((a.min(b), a.max(b)))
}

/// Limiting density of squared singular values on `grid`.
pub fn limit_density(spec: &LimitSpec, grid: &[f64], exec: Execution) -> Result<SpectralDensity> {
    spec.validate()?;
    if grid.iter().any(|&x| !(x > 0.0)) {
        return Err(SpectraError::Invalid("limit grid must be positive".into()));
    }
    let atoms = match spec.class {
        LimitClass::Bernoulli => bernoulli_edges_atoms(spec.sigma0_sq)?.atoms(),
        LimitClass::Smooth => Vec::new(),
    };
    let values = map_indexed(grid.len(), exec, |i| {
        let x = grid[i];
        let eps = READOUT_EPSILON * x;
        spec.g(Complex64::new(x, eps)).map(|g| {
            let shadow: f64 = atoms
                .iter()
                .map(|a| a.mass * eps / (PI * ((x - a.location).powi(2) + eps * eps)))
                .sum();
            (-g.im / PI - shadow).max(0.0)
        })
    });
    let rho = values.into_iter().collect::<Result<Vec<f64>>>()?;
    let mut d = SpectralDensity::new(Domain::SquaredSingular, grid.to_vec(), rho)?;
    for a in atoms {
        d.push_atom(a);
    }
    if spec.class == LimitClass::Bernoulli {
        d.lower_tail = bernoulli_mass_below(spec.sigma0_sq, grid[0])?;
    }
    d.metadata = serde_json::json!({
        "source": "limit",
        "class": spec.class,
        "sigma0_sq": spec.sigma0_sq,
        "readout_epsilon_relative": READOUT_EPSILON,
    });
    Ok(d)
}

/// Grid for a limit density: geometric near the origin, then dense linear
/// up to a little past the largest edge or atom.
pub fn limit_grid(spec: &LimitSpec, points: usize) -> Result<Vec<f64>> {
    spec.validate()?;
    let top = match spec.class {
        LimitClass::Bernoulli => {
            let e = bernoulli_edges_atoms(spec.sigma0_sq)?;
            e.lambda1.max(e.lambda2)
        }
        LimitClass::Smooth => smooth_edges(spec.sigma0_sq)?.1,
    };
    Ok(crate::master_solver::hybrid_grid(1.2 * top, points))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fine_grid(top: f64, n: usize) -> Vec<f64> {
        // log-spaced near 0, uniform after
        let mut g: Vec<f64> = (0..n / 4)
            .map(|i| 1e-8 * (1e-2f64 / 1e-8).powf(i as f64 / (n / 4) as f64))
            .collect();
        g.extend((0..=3 * n / 4).map(|i| 1e-2 + (top - 1e-2) * i as f64 / (3 * n / 4) as f64));
        g
    }

    #[test]
    fn bernoulli_vanishing_variance() {
        let g = bernoulli_g(1e-9, Complex64::new(2.0, 0.0)).unwrap();
        assert!((g.re - 1.0).abs() < 1e-6);
    }

    #[test]
    fn smooth_vanishing_variance_and_far_field() {
        let g = smooth_g(1e-9, Complex64::new(2.0, 1e-3)).unwrap();
        assert!((g - 1.0 / Complex64::new(1.0, 1e-3)).norm() < 1e-5, "{g}");
        let z = Complex64::new(1e4, 0.0);
        let g = smooth_g(0.25, z + Complex64::new(0.0, 1e-9)).unwrap();
        assert!((g - 1.0 / z).norm() < 1e-3);
    }

    #[test]
    fn bernoulli_edges_quarter() {
        let e = bernoulli_edges_atoms(0.25).unwrap();
        assert!((e.lambda1.sqrt() - E.sqrt() / 2.0).abs() < 1e-12);
        assert!((e.lambda2.sqrt() - (0.125f64).exp()).abs() < 1e-12);
        assert!(e.mass_lambda2 > 0.0);
        assert_eq!(e.mass_lambda0, 0.0);
        assert_eq!(bernoulli_edges_atoms(2.0).unwrap().mass_lambda2, 0.0);
    }

    #[test]
    fn bernoulli_edge_behavior() {
        let l1 = 0.25 * E;
        let below = -bernoulli_g(0.25, Complex64::new(0.95 * l1, 1e-12)).unwrap().im / PI;
        let above = -bernoulli_g(0.25, Complex64::new(1.05 * l1, 1e-12)).unwrap().im / PI;
        assert!(below > 1e-2);
        assert!(above < 1e-9);
    }

    #[test]
    fn bernoulli_mass_below_matches_density() {
        for s in [0.1, 0.25, 1.0] {
            for a in [1e-6, 1e-3, 0.05] {
                let h = 1e-4 * a;
                let d = (bernoulli_mass_below(s, a + h).unwrap() - bernoulli_mass_below(s, a - h).unwrap()) / (2.0 * h);
                let rho = -bernoulli_g(s, Complex64::new(a, 1e-14 * a)).unwrap().im / PI;
                assert!((d - rho).abs() < 1e-5 * rho.max(1.0), "{s} {a}: {d} vs {rho}");
            }
        }
    }

    fn check_moments(spec: LimitSpec) {
        let top = match spec.class {
            LimitClass::Bernoulli => spec.sigma0_sq * E * 1.01,
            LimitClass::Smooth => smooth_edges(spec.sigma0_sq).unwrap().1 * 1.01,
        };
        // cluster geometrically at the edges, where the density may have an
        // integrable inverse-square-root singularity
        let edges: Vec<f64> = match spec.class {
            LimitClass::Bernoulli => vec![spec.sigma0_sq * E, spec.sigma0_sq.exp()],
            LimitClass::Smooth => {
                let (lo, hi) = smooth_edges(spec.sigma0_sq).unwrap();
                vec![lo, hi]
            }
        };
        let mut grid = fine_grid(top, 40_000);
        for c in edges {
            for k in 0..400 {
                let off = 10f64.powf(-2.0 - 6.0 * k as f64 / 400.0);
                grid.extend([c - off, c + off].into_iter().filter(|&x| x > 0.0 && x <= top));
            }
        }
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        grid.dedup();
        let d = limit_density(&spec, &grid, Execution::Parallel).unwrap();
        let m0 = d.total_mass();
        assert!((m0 - 1.0).abs() < 1e-3, "{spec:?} mass {m0}");
        assert!((d.moment(1) - 1.0).abs() < 1e-3, "{spec:?} m1 {}", d.moment(1));
        assert!(
            (d.moment(2) - 1.0 - spec.sigma0_sq).abs() < 1e-3,
            "{spec:?} m2 {}",
            d.moment(2)
        );
    }

    #[test]
    fn bernoulli_moments() {
        for s in [0.1, 0.25, 1.0] {
            check_moments(LimitSpec {
                class: LimitClass::Bernoulli,
                sigma0_sq: s,
            });
        }
    }

    #[test]
    fn smooth_moments() {
        for s in [0.1, 0.25, 1.0] {
            check_moments(LimitSpec {
                class: LimitClass::Smooth,
                sigma0_sq: s,
            });
        }
    }

    #[test]
    fn smooth_edge_formulations_agree() {
        for i in 1..=400 {
            let s = 4.0 * i as f64 / 400.0;
            let (lo, hi) = smooth_edges(s).unwrap();
            let (slo, shi) = smooth_edges_singular(s).unwrap();
            assert!((lo.sqrt() - slo).abs() < 1e-12);
            assert!((hi.sqrt() - shi).abs() < 1e-12);
        }
        let (lo, hi) = smooth_edges_singular(0.25).unwrap();
        assert!((lo - 0.57).abs() < 5e-3 && (hi - 1.56).abs() < 5e-3, "{lo} {hi}");
        let (lo, hi) = smooth_edges(1e-8).unwrap();
        assert!((lo - 1.0).abs() < 1e-3 && (hi - 1.0).abs() < 1e-3);
    }

    #[test]
    fn smooth_edges_match_support_scan() {
        for s in [0.25, 1.0] {
            let (lo, hi) = smooth_edges(s).unwrap();
            let n = 4000;
            let xs: Vec<f64> = (1..n).map(|i| 1.5 * hi * i as f64 / n as f64).collect();
            let rho: Vec<f64> = xs
                .iter()
                .map(|&x| -smooth_g(s, Complex64::new(x, READOUT_EPSILON * x)).unwrap().im / PI)
                .collect();
            let inside: Vec<f64> = xs
                .iter()
                .zip(&rho)
                .filter(|(_, r)| **r > 1e-4)
                .map(|(x, _)| *x)
                .collect();
            let (a, b) = (inside[0].sqrt(), inside.last().unwrap().sqrt());
            assert!((a - lo.sqrt()).abs() < 1e-2, "{s}: lower {a} vs {}", lo.sqrt());
            assert!((b - hi.sqrt()).abs() < 1e-2, "{s}: upper {b} vs {}", hi.sqrt());
        }
    }

    #[test]
    fn bernoulli_satisfies_limit_relation() {
        // with M = zG - 1, z = (1 + M)/M * exp(sigma0^2 M/(1 + M))
        let s = 0.25;
        for i in 0..100 {
            let z = Complex64::from_polar(0.2 + 0.05 * i as f64, 0.05 + 3.0 * i as f64 / 100.0);
            let m = z * bernoulli_g(s, z).unwrap() - 1.0;
            let back = (1.0 + m) / m * (s * m / (1.0 + m)).exp();
            assert!((back - z).norm() < 1e-8 * (1.0 + z.norm()), "{z}: {back}");
        }
    }

    #[test]
    fn smooth_satisfies_limit_relation() {
        let s = 0.25;
        for i in 0..50 {
            let z = Complex64::from_polar(0.2 + 0.05 * i as f64, 0.05 + 3.0 * i as f64 / 50.0);
            let m = z * smooth_g(s, z).unwrap() - 1.0;
            let back = (1.0 + m) / m * (s * m).exp();
            assert!((back - z).norm() < 1e-8 * (1.0 + z.norm()), "{z}: {back}");
        }
    }
}
