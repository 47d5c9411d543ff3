//! Spectral densities on a grid with explicit atoms.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpectraError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// Squared singular values `lambda = s^2`.
    SquaredSingular,
    /// Singular values `s`.
    Singular,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::SquaredSingular => "squared_singular",
            Domain::Singular => "singular",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub location: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatus {
    Ok,
    /// The continuation failed; `rho` is NaN at this point.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDensity {
    pub domain: Domain,
    grid: Vec<f64>,
    rho: Vec<f64>,
    pub atoms: Vec<Atom>,
    pub status: Vec<PointStatus>,
    /// Mass strictly between 0 and the first grid point, when known
    /// independently of the grid.
    #[serde(default)]
    pub lower_tail: f64,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

const NEGATIVE_CLAMP: f64 = 1e-8;

impl SpectralDensity {
    /// Density from grid values. Negative noise above `-1e-8` is clamped to
    /// zero; NaN entries mark failed points.
    pub fn new(domain: Domain, grid: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        if grid.len() != rho.len() {
            return Err(SpectraError::Invalid(format!(
                "grid has {} points, rho has {}",
                grid.len(),
                rho.len()
            )));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SpectraError::Invalid("grid must be strictly increasing".into()));
        }
        let mut status = Vec::with_capacity(rho.len());
        let mut clean = Vec::with_capacity(rho.len());
        for (&x, &r) in grid.iter().zip(&rho) {
            if r.is_nan() {
                status.push(PointStatus::Failed);
                clean.push(f64::NAN);
            } else if r < -NEGATIVE_CLAMP {
                return Err(SpectraError::Invalid(format!("negative density {r:e} at {x}")));
            } else {
                status.push(PointStatus::Ok);
                clean.push(r.max(0.0));
            }
        }
        Ok(SpectralDensity {
            domain,
            grid,
            rho: clean,
            atoms: Vec::new(),
            status,
            lower_tail: 0.0,
            metadata: serde_json::Value::Null,
        })
    }

    pub fn atoms_only(domain: Domain, atoms: Vec<Atom>) -> Self {
        SpectralDensity {
            domain,
            grid: Vec::new(),
            rho: Vec::new(),
            atoms,
            status: Vec::new(),
            lower_tail: 0.0,
            metadata: serde_json::Value::Null,
        }
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn push_atom(&mut self, atom: Atom) {
        self.atoms.push(atom);
        self.atoms.sort_by(|a, b| a.location.partial_cmp(&b.location).unwrap());
    }

    pub fn failed_points(&self) -> usize {
        self.status.iter().filter(|s| **s == PointStatus::Failed).count()
    }

    /// Grid points with a valid density value.
    pub fn valid_points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.grid
            .iter()
            .zip(&self.rho)
            .filter(|(_, r)| !r.is_nan())
            .map(|(&x, &r)| (x, r))
    }

    fn trapezoid<F: Fn(f64) -> f64>(&self, weight: F) -> f64 {
        let pts: Vec<(f64, f64)> = self.valid_points().collect();
        pts.windows(2)
            .map(|w| 0.5 * (w[1].0 - w[0].0) * (weight(w[0].0) * w[0].1 + weight(w[1].0) * w[1].1))
            .sum()
    }

    pub fn continuum_mass(&self) -> f64 {
        self.trapezoid(|_| 1.0)
    }

    pub fn atom_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.continuum_mass() + self.atom_mass() + self.lower_tail
    }

    /// `int x^k rho dx + sum mass * location^k`, without a normalization check.
    /// The lower tail is counted at the origin.
    pub fn moment(&self, k: u32) -> f64 {
        let kk = k as i32;
        let tail = if k == 0 { self.lower_tail } else { 0.0 };
        tail + self.trapezoid(|x| x.powi(kk)) + self.atoms.iter().map(|a| a.mass * a.location.powi(kk)).sum::<f64>()
    }

    /// Linear interpolation of the continuum; zero outside the grid.
    pub fn rho_at(&self, x: f64) -> f64 {
        let g = &self.grid;
        if g.is_empty() || x < g[0] || x > g[g.len() - 1] {
            return 0.0;
        }
        let i = g.partition_point(|&v| v <= x);
        if i == 0 {
            return self.rho[0];
        }
        if i >= g.len() {
            return self.rho[g.len() - 1];
        }
        let t = (x - g[i - 1]) / (g[i] - g[i - 1]);
        (1.0 - t) * self.rho[i - 1] + t * self.rho[i]
    }

    /// Change of variables `s = sqrt(lambda)`: `rho_s(s) = 2 s rho(s^2)`.
    pub fn to_singular_domain(&self) -> Result<SpectralDensity> {
        if self.domain != Domain::SquaredSingular {
            return Err(SpectraError::Invalid("density is already over singular values".into()));
        }
        let grid: Vec<f64> = self.grid.iter().map(|l| l.sqrt()).collect();
        let rho: Vec<f64> = grid.iter().zip(&self.rho).map(|(s, r)| 2.0 * s * r).collect();
        Ok(SpectralDensity {
            domain: Domain::Singular,
            grid,
            rho,
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    location: a.location.sqrt(),
                    mass: a.mass,
                })
                .collect(),
            status: self.status.clone(),
            lower_tail: self.lower_tail,
            metadata: self.metadata.clone(),
        })
    }

    /// Cumulative distribution on the grid range, anchored at the top:
    /// `F(x) = 1 - int_x^max rho - (atoms above x)`. Mass below the first
    /// grid point is whatever is left over, so a density that cannot
    /// resolve a divergence at the origin still has an accurate upper CDF.
    pub fn cdf(&self) -> TopAnchoredCdf<'_> {
        let pts: Vec<(f64, f64)> = self.valid_points().collect();
        let mut tail = vec![0.0; pts.len()];
        for i in (0..pts.len().saturating_sub(1)).rev() {
            let (x0, r0) = pts[i];
            let (x1, r1) = pts[i + 1];
            tail[i] = tail[i + 1] + 0.5 * (x1 - x0) * (r0 + r1);
        }
        TopAnchoredCdf {
            density: self,
            pts,
            tail,
        }
    }
}

pub struct TopAnchoredCdf<'a> {
    density: &'a SpectralDensity,
    pts: Vec<(f64, f64)>,
    tail: Vec<f64>,
}

impl TopAnchoredCdf<'_> {
    pub fn lower(&self) -> f64 {
        self.pts.first().map(|p| p.0).unwrap_or(0.0)
    }

    fn continuum_above(&self, x: f64) -> f64 {
        let p = &self.pts;
        if p.is_empty() || x >= p[p.len() - 1].0 {
            return 0.0;
        }
        if x <= p[0].0 {
            return self.tail[0];
        }
        let i = p.partition_point(|v| v.0 <= x);
        let (x0, r0) = p[i - 1];
        let (x1, r1) = p[i];
        let rx = r0 + (r1 - r0) * (x - x0) / (x1 - x0);
        self.tail[i] + 0.5 * (x1 - x) * (rx + r1)
    }

    fn atoms_above(&self, x: f64, inclusive: bool) -> f64 {
        self.density
            .atoms
            .iter()
            .filter(|a| if inclusive { a.location >= x } else { a.location > x })
            .map(|a| a.mass)
            .sum()
    }

    /// `P(X <= x)`.
    pub fn at(&self, x: f64) -> f64 {
        1.0 - self.continuum_above(x) - self.atoms_above(x, false)
    }

    /// `P(X < x)`.
    pub fn below(&self, x: f64) -> f64 {
        1.0 - self.continuum_above(x) - self.atoms_above(x, true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_noise_and_rejects_negative() {
        let d = SpectralDensity::new(Domain::SquaredSingular, vec![0.0, 1.0], vec![-1e-10, 1.0]).unwrap();
        assert_eq!(d.rho()[0], 0.0);
        assert!(SpectralDensity::new(Domain::SquaredSingular, vec![0.0, 1.0], vec![-1e-3, 1.0]).is_err());
        assert!(SpectralDensity::new(Domain::SquaredSingular, vec![1.0, 0.0], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn singular_domain_maps() {
        let mut d = SpectralDensity::atoms_only(Domain::SquaredSingular, vec![]);
        d.push_atom(Atom {
            location: 1.0,
            mass: 1.0,
        });
        let s = d.to_singular_domain().unwrap();
        assert_eq!(
            s.atoms,
            vec![Atom {
                location: 1.0,
                mass: 1.0
            }]
        );

        let e = (0.25f64).exp();
        let a = SpectralDensity::atoms_only(Domain::SquaredSingular, vec![Atom { location: e, mass: 0.5 }]);
        let s = a.to_singular_domain().unwrap();
        assert!((s.atoms[0].location - 1.1331).abs() < 1e-4);

        let n = 10_000;
        let grid: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let u = SpectralDensity::new(Domain::SquaredSingular, grid, vec![1.0; n + 1]).unwrap();
        let s = u.to_singular_domain().unwrap();
        assert!((s.rho_at(0.5) - 1.0).abs() < 1e-3);
        assert!((s.total_mass() - 1.0).abs() < 1e-6);
        assert!(s.to_singular_domain().is_err());
    }

    #[test]
    fn cdf_with_atoms() {
        let n = 1000;
        let grid: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let mut d = SpectralDensity::new(Domain::Singular, grid, vec![0.5; n + 1]).unwrap();
        d.push_atom(Atom {
            location: 2.0,
            mass: 0.5,
        });
        let f = d.cdf();
        assert!((f.at(0.5) - 0.25).abs() < 1e-12);
        assert!((f.at(1.5) - 0.5).abs() < 1e-12);
        assert!((f.below(2.0) - 0.5).abs() < 1e-12);
        assert!((f.at(2.0) - 1.0).abs() < 1e-12);
    }
}
