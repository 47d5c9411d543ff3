//! Monte Carlo spectra of input-output Jacobians of random networks.

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::density::{Atom, Domain, SpectralDensity};
use crate::error::{Result, SpectraError};
use crate::free_prob::EnsembleKind;
use crate::parallel::{map_indexed, Execution};
use crate::signal_prop::NetworkConfig;

/// Singular values below this are pooled into an atom at 0.
pub const ZERO_THRESHOLD: f64 = 1e-8;

const OVERFLOW_LIMIT: f64 = 1e100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Input = 0,
    Weight = 1,
    Bias = 2,
}

/// Independent generator for one `(trial, layer, purpose)` triple.
pub fn stream(seed: u64, trial: u64, layer: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((trial << 32) | (layer << 2) | purpose as u64);
    rng
}

fn gaussian_matrix<R: Rng>(n: usize, scale: f64, rng: &mut R) -> Mat<f64> {
    let vals: Vec<f64> = (0..n * n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Mat::from_fn(n, n, |i, j| vals[j * n + i])
}

/// Haar orthogonal matrix times `sigma_w`.
pub fn sample_orthogonal<R: Rng>(n: usize, sigma_w: f64, rng: &mut R) -> Mat<f64> {
    let a = gaussian_matrix(n, 1.0, rng);
    let qr = a.qr();
    let r = qr.R();
    let mut q = qr.compute_Q();
    for j in 0..n {
        let s = if r[(j, j)] < 0.0 { -sigma_w } else { sigma_w };
        for i in 0..n {
            q[(i, j)] *= s;
        }
    }
    q
}

pub fn sample_gaussian<R: Rng>(n: usize, sigma_w: f64, rng: &mut R) -> Mat<f64> {
    gaussian_matrix(n, sigma_w / (n as f64).sqrt(), rng)
}

fn sample_weights(config: &NetworkConfig, rng: &mut ChaCha8Rng) -> Mat<f64> {
    match config.ensemble {
        EnsembleKind::Orthogonal => sample_orthogonal(config.width, config.sigma_w, rng),
        EnsembleKind::Gaussian => sample_gaussian(config.width, config.sigma_w, rng),
    }
}

/// Sorted singular values of the Jacobian of one network, at each requested
/// depth. All depths come from one forward pass, so a depth `l` result is
/// identical to a single-depth run with `depth = l`.
pub fn jacobian_singular_values_at_depths(
    config: &NetworkConfig,
    qstar: f64,
    depths: &[usize],
    seed: u64,
    trial: u64,
) -> Result<Vec<Vec<f64>>> {
    let n = config.width;
    if n < 2 {
        return Err(SpectraError::Invalid(format!("width {n} < 2")));
    }
    let deepest = depths.iter().copied().max().unwrap_or(0);
    if deepest == 0 || depths.contains(&0) {
        return Err(SpectraError::Invalid("depths must be positive".into()));
    }
    let act = &config.activation;
    let sw = config.sigma_w;
    let sb = config.sigma_b;

    let mut rng = stream(seed, trial, 0, Purpose::Input);
    let radius_sq = if sw > 0.0 {
        (n as f64 * (qstar - sb * sb) / (sw * sw)).max(0.0)
    } else {
        0.0
    };
    let mut x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut x {
        *v *= radius_sq.sqrt() / norm;
    }

    let mut out = vec![Vec::new(); depths.len()];
    let mut jac: Option<Mat<f64>> = None;
    for layer in 1..=deepest {
        let w = sample_weights(config, &mut stream(seed, trial, layer as u64, Purpose::Weight));
        let mut brng = stream(seed, trial, layer as u64, Purpose::Bias);
        let h: Vec<f64> = (0..n)
            .map(|i| {
                let wx: f64 = (0..n).map(|j| w[(i, j)] * x[j]).sum();
                wx + sb * brng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        if h.iter().any(|v| !(v.abs() <= OVERFLOW_LIMIT)) {
            return Err(SpectraError::Overflow(format!(
                "pre-activation exceeded {OVERFLOW_LIMIT:e} at layer {layer}"
            )));
        }
        let d: Vec<f64> = h.iter().map(|&v| act.dphi(v)).collect();
        x = h.iter().map(|&v| act.phi(v)).collect();

        let mut next = match &jac {
            None => w,
            Some(j) => &w * j,
        };
        for c in 0..n {
            for (r, dr) in d.iter().enumerate() {
                next[(r, c)] *= dr;
            }
        }
        for (k, &depth) in depths.iter().enumerate() {
            if depth == layer {
                out[k] = singular_values(&next)?;
            }
        }
        jac = Some(next);
    }
    Ok(out)
}

pub fn jacobian_singular_values(config: &NetworkConfig, qstar: f64, seed: u64, trial: u64) -> Result<Vec<f64>> {
    Ok(jacobian_singular_values_at_depths(config, qstar, &[config.depth], seed, trial)?.remove(0))
}

fn singular_values(m: &Mat<f64>) -> Result<Vec<f64>> {
    if m.col_iter().any(|c| c.iter().any(|v| !v.is_finite())) {
        return Err(SpectraError::Overflow("non-finite Jacobian entry".into()));
    }
    let mut s = m.singular_values().map_err(|e| SpectraError::Convergence {
        what: "singular value decomposition".into(),
        detail: format!("{e:?}"),
    })?;
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalSpectrum {
    /// Pooled over trials, ascending.
    #[serde(skip)]
    pub singular_values: Vec<f64>,
    pub width: usize,
    pub depth: usize,
    pub trials: usize,
    pub seed: u64,
    pub qstar: f64,
    pub config: NetworkConfig,
}

impl EmpiricalSpectrum {
    pub fn mean_squared(&self) -> f64 {
        let n = self.singular_values.len() as f64;
        self.singular_values.iter().map(|s| s * s).sum::<f64>() / n
    }

    pub fn variance_squared(&self) -> f64 {
        let n = self.singular_values.len() as f64;
        let m = self.mean_squared();
        self.singular_values.iter().map(|s| (s * s - m).powi(2)).sum::<f64>() / n
    }
}

/// Input scale used for simulation. A degenerate fixed point (`q* = 0` with
/// any scale invariant) is simulated at unit variance.
pub fn simulation_qstar(config: &NetworkConfig) -> Result<f64> {
    let fp = config.fixed_point()?;
    Ok(if fp.degenerate { 1.0 } else { fp.qstar })
}

/// Independent trials at several depths, pooled per depth.
pub fn simulate_depths(
    config: &NetworkConfig,
    depths: &[usize],
    trials: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<EmpiricalSpectrum>> {
    config.validate()?;
    if trials == 0 {
        return Err(SpectraError::Invalid("trials must be positive".into()));
    }
    let qstar = simulation_qstar(config)?;
    // trial-level parallelism only; keeps the linear algebra reproducible
    faer::set_global_parallelism(faer::Par::Seq);
    let runs = map_indexed(trials, exec, |t| {
        jacobian_singular_values_at_depths(config, qstar, depths, seed, t as u64)
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(depths
        .iter()
        .enumerate()
        .map(|(k, &depth)| {
            let mut sv: Vec<f64> = runs.iter().flat_map(|r| r[k].iter().copied()).collect();
            sv.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut cfg = config.clone();
            cfg.depth = depth;
            EmpiricalSpectrum {
                singular_values: sv,
                width: config.width,
                depth,
                trials,
                seed,
                qstar,
                config: cfg,
            }
        })
        .collect())
}

pub fn simulate(config: &NetworkConfig, trials: usize, seed: u64, exec: Execution) -> Result<EmpiricalSpectrum> {
    Ok(simulate_depths(config, &[config.depth], trials, seed, exec)?.remove(0))
}

/// Normalized histogram over singular values with `bins` equal bins.
pub fn empirical_density(spectrum: &EmpiricalSpectrum, bins: usize) -> Result<SpectralDensity> {
    let sv = &spectrum.singular_values;
    if sv.is_empty() || bins == 0 {
        return Err(SpectraError::Invalid("empty spectrum or zero bins".into()));
    }
    let total = sv.len() as f64;
    let split = sv.partition_point(|&s| s < ZERO_THRESHOLD);
    let rest = &sv[split..];
    let mut atoms = Vec::new();
    if split > 0 {
        atoms.push(Atom {
            location: 0.0,
            mass: split as f64 / total,
        });
    }
    let mut d = if rest.is_empty() {
        SpectralDensity::atoms_only(Domain::Singular, Vec::new())
    } else {
        let (lo, hi) = (rest[0], rest[rest.len() - 1]);
        if hi - lo <= 1e-12 * hi {
            atoms.push(Atom {
                location: 0.5 * (lo + hi),
                mass: rest.len() as f64 / total,
            });
            SpectralDensity::atoms_only(Domain::Singular, Vec::new())
        } else {
            let width = (hi - lo) / bins as f64;
            let mut counts = vec![0usize; bins];
            for &s in rest {
                let b = (((s - lo) / width) as usize).min(bins - 1);
                counts[b] += 1;
            }
            let grid: Vec<f64> = (0..bins).map(|b| lo + (b as f64 + 0.5) * width).collect();
            let rho: Vec<f64> = counts.iter().map(|&c| c as f64 / (total * width)).collect();
            SpectralDensity::new(Domain::Singular, grid, rho)?
        }
    };
    for a in atoms {
        d.push_atom(a);
    }
    d.metadata = serde_json::json!({
        "source": "simulation",
        "width": spectrum.width,
        "depth": spectrum.depth,
        "trials": spectrum.trials,
        "seed": spectrum.seed,
        "bins": bins,
    });
    Ok(d)
}

/// Kolmogorov-Smirnov distance between a sample and a theory density over
/// singular values. The theory CDF is anchored at the top of its grid, and
/// the supremum runs over sample points at or above the first grid point:
/// mass the grid does not resolve near the origin is compared only in
/// aggregate.
pub fn ks_distance(empirical: &EmpiricalSpectrum, theory: &SpectralDensity) -> Result<f64> {
    ks_distance_sorted(&empirical.singular_values, theory)
}

pub fn ks_distance_sorted(sample: &[f64], theory: &SpectralDensity) -> Result<f64> {
    if theory.domain != Domain::Singular {
        return Err(SpectraError::Invalid(
            "theory density must be over singular values".into(),
        ));
    }
    if sample.is_empty() {
        return Err(SpectraError::Invalid("empty sample".into()));
    }
    let mass = theory.total_mass();
    if (mass - 1.0).abs() > 2e-2 {
        log::warn!("theory density mass is {mass:.4}");
    }
    // samples within rounding of an atom belong to it; the snap is monotone
    let tol = 1e-9 * sample[sample.len() - 1].abs();
    let snapped: Vec<f64> = sample
        .iter()
        .map(|&v| {
            theory
                .atoms
                .iter()
                .find(|a| (v - a.location).abs() <= tol)
                .map_or(v, |a| a.location)
        })
        .collect();
    let sample = &snapped[..];
    let cdf = theory.cdf();
    let lower = if theory.grid().is_empty() {
        f64::NEG_INFINITY
    } else {
        cdf.lower()
    };
    let n = sample.len() as f64;
    let mut sup = 0.0f64;
    let mut i = sample.partition_point(|&v| v < lower);
    while i < sample.len() {
        let v = sample[i];
        let mut j = i;
        while j + 1 < sample.len() && sample[j + 1] == v {
            j += 1;
        }
        let before = i as f64 / n;
        let after = (j + 1) as f64 / n;
        sup = sup.max((cdf.below(v) - before).abs()).max((cdf.at(v) - after).abs());
        i = j + 1;
    }
    Ok(sup.min(1.0))
}
