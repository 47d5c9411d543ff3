//! Weight-ensemble S-transforms and exact Jacobian spectrum moments.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::density::SpectralDensity;
use crate::error::{Result, SpectraError};
use crate::signal_prop::NetworkConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    /// Haar orthogonal scaled so that `W^T W = sigma_w^2 I`.
    Orthogonal,
    /// i.i.d. entries of variance `sigma_w^2 / N`.
    Gaussian,
}

impl EnsembleKind {
    /// First coefficient of the S-transform series.
    pub fn s1(self) -> f64 {
        match self {
            EnsembleKind::Orthogonal => 0.0,
            EnsembleKind::Gaussian => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightEnsemble {
    pub kind: EnsembleKind,
    pub sigma_w: f64,
    pub s1: f64,
}

impl WeightEnsemble {
    pub fn new(kind: EnsembleKind, sigma_w: f64) -> Self {
        WeightEnsemble {
            kind,
            sigma_w,
            s1: kind.s1(),
        }
    }

    pub fn s_transform(&self, z: Complex64) -> Result<Complex64> {
        s_transform_weights(self, z)
    }
}

/// S-transform of `W^T W`.
pub fn s_transform_weights(ensemble: &WeightEnsemble, z: Complex64) -> Result<Complex64> {
    let scale = 1.0 / (ensemble.sigma_w * ensemble.sigma_w);
    match ensemble.kind {
        EnsembleKind::Orthogonal => Ok(Complex64::new(scale, 0.0)),
        EnsembleKind::Gaussian => {
            let d = 1.0 + z;
            if d.norm() < 1e-300 {
                return Err(SpectraError::Pole(format!("Gaussian weight S-transform at z = {z}")));
            }
            Ok(scale / d)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub m1: f64,
    pub m2: f64,
    pub variance: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub chi: f64,
    pub qstar: f64,
}

/// First two moments of the squared singular values of the depth-L
/// Jacobian.
pub fn jacobian_moments(config: &NetworkConfig) -> Result<MomentSummary> {
    config.validate()?;
    let qstar = config.resolve_qstar()?;
    let act = &config.activation;
    let mu1 = act.mu_k(qstar, 1);
    let mu2 = act.mu_k(qstar, 2);
    let chi = config.sigma_w * config.sigma_w * mu1;
    let l = config.depth as f64;
    let s1 = config.ensemble.s1();
    let m1 = chi.powf(l);
    let chi2l = chi.powf(2.0 * l);
    // mu2/mu1^2 + 1/L - 1 - s1, with the excess taken without cancellation
    let variance = chi2l * l * (act.moment_excess(qstar) - s1);
    let m2 = chi2l + variance;
    Ok(MomentSummary {
        m1,
        m2,
        variance,
        mu1,
        mu2,
        chi,
        qstar,
    })
}

/// `k`-th moment of a density: trapezoid over the continuum plus atoms.
pub fn moments_from_density(density: &SpectralDensity, k: u32) -> f64 {
    let total = density.total_mass();
    if (total - 1.0).abs() > 1e-2 {
        log::warn!("density mass is {total:.6}, moments may be inaccurate");
    }
    density.moment(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::ActivationSpec;
    use crate::density::{Atom, Domain};

    #[test]
    fn weight_transforms() {
        let o = WeightEnsemble::new(EnsembleKind::Orthogonal, 1.0);
        assert_eq!(
            o.s_transform(Complex64::new(3.0, 2.0)).unwrap(),
            Complex64::new(1.0, 0.0)
        );
        let g = WeightEnsemble::new(EnsembleKind::Gaussian, 1.0);
        assert_eq!(g.s_transform(Complex64::new(1.0, 0.0)).unwrap().re, 0.5);
        let g2 = WeightEnsemble::new(EnsembleKind::Gaussian, 2.0);
        assert_eq!(g2.s_transform(Complex64::new(0.0, 0.0)).unwrap().re, 0.25);
        assert!(g.s_transform(Complex64::new(-1.0, 0.0)).is_err());
        assert_eq!(o.s1, 0.0);
        assert_eq!(g.s1, -1.0);
    }

    fn critical(name: &str, kind: EnsembleKind, depth: usize) -> NetworkConfig {
        NetworkConfig::critical(ActivationSpec::named(name).unwrap(), kind, depth, 0.0).unwrap()
    }

    #[test]
    fn table_variances() {
        for l in [1usize, 8, 64] {
            let lf = l as f64;
            let m = jacobian_moments(&critical("linear", EnsembleKind::Gaussian, l)).unwrap();
            assert!((m.variance - lf).abs() < 1e-10 * lf);
            let m = jacobian_moments(&critical("relu", EnsembleKind::Orthogonal, l)).unwrap();
            assert!((m.variance - lf).abs() < 1e-10 * lf);
            let m = jacobian_moments(&critical("relu", EnsembleKind::Gaussian, l)).unwrap();
            assert!((m.variance - 2.0 * lf).abs() < 1e-10 * lf);
            let m = jacobian_moments(&critical("linear", EnsembleKind::Orthogonal, l)).unwrap();
            assert!(m.variance.abs() < 1e-12);
            assert!((m.m1 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_atom_moments() {
        let d = SpectralDensity::atoms_only(
            Domain::SquaredSingular,
            vec![Atom {
                location: 1.0,
                mass: 1.0,
            }],
        );
        assert_eq!(moments_from_density(&d, 3), 1.0);
    }

    #[test]
    fn marchenko_pastur_moments() {
        // squared singular values of X with i.i.d. N(0, 1/N) entries:
        // E[lambda] = 1, E[lambda^2] = 2 in the large-N limit
        let n = 20_000;
        let grid: Vec<f64> = (0..=n).map(|i| 4.0 * i as f64 / n as f64).collect();
        let rho: Vec<f64> = grid
            .iter()
            .map(|&x| {
                if x <= 0.0 || x >= 4.0 {
                    0.0
                } else {
                    (x * (4.0 - x)).sqrt() / (2.0 * std::f64::consts::PI * x)
                }
            })
            .collect();
        let mut d = SpectralDensity::new(Domain::SquaredSingular, grid, rho).unwrap();
        // the 1/sqrt(x) endpoint is underresolved by the trapezoid; add the
        // missing mass of the first cell analytically
        let x1 = 4.0 / n as f64;
        let head = 2.0 * x1.sqrt() / std::f64::consts::PI - d.rho()[1] * x1 / 2.0;
        d.push_atom(Atom {
            location: 0.0,
            mass: head,
        });
        assert!((moments_from_density(&d, 1) - 1.0).abs() < 1e-4);
        assert!((moments_from_density(&d, 2) - 2.0).abs() < 1e-4);
    }
}
