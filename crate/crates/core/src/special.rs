//! Special functions and Gaussian quadrature.
//!
//! Everything here is a pure function of its inputs. The standard-normal
//! quadrature rule is immutable once built and is shared through
//! [`default_rule`].

use std::f64::consts::{E, PI, SQRT_2};
use std::sync::OnceLock;

use num_complex::Complex64;

use crate::error::{Result, SpectraError};

/// Node count used for every Gaussian expectation unless a caller asks otherwise.
pub const DEFAULT_RULE_NODES: usize = 201;

/// Error function. Backed by `libm` (musl port, sub-ulp accuracy).
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF, accurate in both tails.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Inverse error function on (-1, 1).
///
/// Giles' single-precision rational seed, polished with Newton steps on
/// `erf` (or `erfc` near the endpoints, where `1 - |y|` carries the
/// information).
pub fn erf_inv(y: f64) -> Result<f64> {
    if !(y > -1.0 && y < 1.0) {
        return Err(SpectraError::Domain(format!("erf_inv requires |y| < 1, got {y}")));
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    let sign = y.signum();
    let a = y.abs();
    let w = -((1.0 - a) * (1.0 + a)).ln();
    let mut x = if w < 5.0 {
        let w = w - 2.5;
        let mut p = 2.810_226_36e-08;
        p = 3.432_739_39e-07 + p * w;
        p = -3.523_387_7e-06 + p * w;
        p = -4.391_506_54e-06 + p * w;
        p = 0.000_218_580_87 + p * w;
        p = -0.001_253_725_03 + p * w;
        p = -0.004_177_681_64 + p * w;
        p = 0.246_640_727 + p * w;
        p = 1.501_409_41 + p * w;
        p * a
    } else {
        let w = w.sqrt() - 3.0;
        let mut p = -0.000_200_214_257;
        p = 0.000_100_950_558 + p * w;
        p = 0.001_349_343_22 + p * w;
        p = -0.003_673_428_44 + p * w;
        p = 0.005_739_507_73 + p * w;
        p = -0.007_622_461_3 + p * w;
        p = 0.009_438_870_47 + p * w;
        p = 1.001_674_06 + p * w;
        p = 2.832_976_82 + p * w;
        p * a
    };
    let tail = 1.0 - a;
    for _ in 0..6 {
        let deriv = 2.0 / PI.sqrt() * (-x * x).exp();
        if deriv == 0.0 {
            break;
        }
        let step = if a > 0.5 {
            // erfc(x) - (1 - a), sign flipped since d erfc/dx = -deriv
            -(erfc(x) - tail) / deriv
        } else {
            (erf(x) - a) / deriv
        };
        // Halley correction: f''/f' = -2x for erf
        let step = step / (1.0 + x * step);
        x -= step;
        if step.abs() <= 1e-16 * x.abs() {
            break;
        }
    }
    Ok(sign * x)
}

/// Principal branch of the Lambert W function, `W e^W = z`.
///
/// Halley iteration from a branch-point series (near `-1/e`), the identity
/// seed (`|z| <= 1` away from `-1`) or the asymptotic `ln z - ln ln z` seed. Inputs with an
/// exactly zero imaginary part below `-1/e` lie on the cut and are rejected.
pub fn lambert_w0(z: Complex64) -> Result<Complex64> {
    if z.im == 0.0 && z.re < -1.0 / E {
        return Err(SpectraError::Domain(format!(
            "lambert_w0: real argument {} below the branch point -1/e",
            z.re
        )));
    }
    if z == Complex64::new(0.0, 0.0) {
        return Ok(z);
    }
    let branch_gap = z + 1.0 / E;
    let mut w = if branch_gap.norm() < 0.3 {
        let p = (2.0 * E * branch_gap).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if z.norm() <= 1.0 && (1.0 + z).norm() >= 0.5 {
        // Pade-like seed, exact to second order at 0
        z / (1.0 + z)
    } else {
        let lz = z.ln();
        if lz.norm() > 0.5 {
            lz - lz.ln()
        } else {
            z / (1.0 + z)
        }
    };
    let tol = 1e-12 * (1.0 + z.norm());
    for _ in 0..50 {
        let ew = w.exp();
        let f = w * ew - z;
        if f.norm() <= 0.25 * tol {
            return Ok(w);
        }
        let wp1 = w + 1.0;
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        if denom.norm() == 0.0 {
            break;
        }
        let step = f / denom;
        w -= step;
        if step.norm() <= 1e-16 * (1.0 + w.norm()) {
            break;
        }
    }
    let residual = (w * w.exp() - z).norm();
    if residual <= tol {
        Ok(w)
    } else {
        Err(SpectraError::Convergence {
            what: "lambert_w0".into(),
            detail: format!("z = {z}, last iterate {w}, residual {residual:e}"),
        })
    }
}

/// Newton solve of `w e^w + r w = z` starting from `seed`.
///
/// Damped: a step is halved (up to 30 times) until the residual decreases.
pub fn r_lambert_newton(r: Complex64, z: Complex64, seed: Complex64) -> Result<Complex64> {
    let f = |w: Complex64| w * w.exp() + r * w - z;
    let tol = 1e-10 * (1.0 + z.norm());
    let mut w = seed;
    let mut fw = f(w);
    for _ in 0..100 {
        if fw.norm() <= 1e-3 * tol {
            break;
        }
        let deriv = (w + 1.0) * w.exp() + r;
        if deriv.norm() == 0.0 {
            break;
        }
        let mut step = fw / deriv;
        let mut next = w - step;
        let mut f_next = f(next);
        let mut halvings = 0;
        while !(f_next.norm() < fw.norm()) && halvings < 30 {
            step *= 0.5;
            next = w - step;
            f_next = f(next);
            halvings += 1;
        }
        if !(f_next.norm() < fw.norm()) {
            break;
        }
        w = next;
        fw = f_next;
        if step.norm() <= 1e-16 * (1.0 + w.norm()) {
            break;
        }
    }
    if fw.norm() <= tol && w.re.is_finite() && w.im.is_finite() {
        Ok(w)
    } else {
        Err(SpectraError::Convergence {
            what: "r_lambert".into(),
            detail: format!("r = {r}, z = {z}, last iterate {w}, residual {:e}", fw.norm()),
        })
    }
}

/// The r-Lambert function: the root of `w e^w + r w = z` on the branch
/// continuously connected to `w = 0` at `z = 0`.
///
/// The argument is walked from 0 to `z` in 32 equal steps, each solved by
/// damped Newton from the previous root.
pub fn r_lambert(r: Complex64, z: Complex64) -> Result<Complex64> {
    const STEPS: usize = 32;
    let mut w = Complex64::new(0.0, 0.0);
    for k in 1..=STEPS {
        let zk = z * (k as f64 / STEPS as f64);
        w = r_lambert_newton(r, zk, w)?;
    }
    Ok(w)
}

/// Gauss rule for the standard normal measure `Dh = exp(-h^2/2) dh / sqrt(2 pi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `E[f(h)]` for `h ~ N(0, 1)`.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&h, &w)| w * f(h)).sum()
    }

    pub fn expect_complex<F: Fn(f64) -> Complex64>(&self, f: F) -> Complex64 {
        self.nodes.iter().zip(&self.weights).map(|(&h, &w)| w * f(h)).sum()
    }
}

/// Build the `n`-point Gauss rule for the standard normal measure.
///
/// Nodes are seeded by the eigenvalues of the Jacobi matrix of the
/// probabilists' Hermite recurrence, then polished by Newton steps on the
/// orthonormal Hermite polynomials, whose derivative also gives each weight
/// to full relative accuracy in the tails.
pub fn gauss_normal_rule(n: usize) -> QuadratureRule {
    assert!(n >= 1, "quadrature rule needs at least one node");
    let jacobi = faer::Mat::<f64>::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let mut seeds = jacobi
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .expect("symmetric tridiagonal eigenvalues");
    seeds.sort_by(|a, b| a.total_cmp(b));

    let pim4 = PI.powf(-0.25);
    let nf = n as f64;
    // orthonormal physicists' Hermite value at z and the scaled derivative
    let eval = |z: f64| {
        let mut p1 = pim4;
        let mut p2 = 0.0;
        for j in 1..=n {
            let p3 = p2;
            p2 = p1;
            let jf = j as f64;
            p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
        }
        (p1, (2.0 * nf).sqrt() * p2)
    };
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for &seed in &seeds {
        let mut z = seed / SQRT_2;
        let mut pp = eval(z).1;
        for _ in 0..10 {
            let (p, dp) = eval(z);
            let step = p / dp;
            z -= step;
            pp = dp;
            if step.abs() <= 1e-15 * (1.0 + z.abs()) {
                pp = eval(z).1;
                break;
            }
        }
        nodes.push(SQRT_2 * z);
        weights.push(2.0 / (pp * pp) / PI.sqrt());
    }
    // exact symmetry
    for i in 0..n / 2 {
        let x = 0.5 * (nodes[n - 1 - i] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[n - 1 - i]);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    for v in &mut weights {
        *v /= total;
    }
    QuadratureRule { nodes, weights }
}

/// Shared rule with [`DEFAULT_RULE_NODES`] nodes.
pub fn default_rule() -> &'static QuadratureRule {
    static RULE: OnceLock<QuadratureRule> = OnceLock::new();
    RULE.get_or_init(|| gauss_normal_rule(DEFAULT_RULE_NODES))
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS_K15: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_8,
];
const GK_WEIGHTS_G7: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Upper bound on panels per adaptive integral.
const MAX_PANELS: usize = 4096;

struct Panel {
    lo: f64,
    hi: f64,
    value: Complex64,
    err: f64,
    /// Error level below which the Kronrod/Gauss difference is roundoff.
    floor: f64,
    depth: u32,
}

impl Panel {
    fn refinable(&self, max_depth: u32) -> bool {
        self.depth < max_depth && self.err > self.floor
    }
}

fn kronrod_panel<F: Fn(f64) -> Complex64>(f: &F, a: f64, b: f64, depth: u32) -> Panel {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k15 = fc * GK_WEIGHTS_K15[7];
    let mut g7 = fc * GK_WEIGHTS_G7[3];
    let mut abs = fc.norm() * GK_WEIGHTS_K15[7];
    for (j, &x) in GK_NODES[..7].iter().enumerate() {
        let (fl, fr) = (f(c - h * x), f(c + h * x));
        k15 += (fl + fr) * GK_WEIGHTS_K15[j];
        abs += (fl.norm() + fr.norm()) * GK_WEIGHTS_K15[j];
        if j % 2 == 1 {
            g7 += (fl + fr) * GK_WEIGHTS_G7[j / 2];
        }
    }
    Panel {
        lo: a,
        hi: b,
        value: k15 * h,
        err: ((k15 - g7) * h).norm(),
        floor: 50.0 * f64::EPSILON * abs * h.abs(),
        depth,
    }
}

/// Adaptive Gauss-Kronrod (7/15) integration of a complex integrand on `[a, b]`.
///
/// Globally adaptive: the panel with the largest Kronrod/Gauss discrepancy is
/// bisected until the summed estimate is below `abs_tol`, every remaining
/// panel is at its roundoff floor or at `max_depth`, or the panel budget is
/// spent. Returns the integral and the summed error estimate.
pub fn integrate_adaptive<F: Fn(f64) -> Complex64>(
    f: &F,
    a: f64,
    b: f64,
    abs_tol: f64,
    max_depth: u32,
) -> (Complex64, f64) {
    let mut panels = vec![kronrod_panel(f, a, b, 0)];
    let mut err_total = panels[0].err;
    while err_total > abs_tol && panels.len() < MAX_PANELS {
        let worst = panels
            .iter()
            .enumerate()
            .filter(|(_, p)| p.refinable(max_depth))
            .max_by(|x, y| x.1.err.total_cmp(&y.1.err))
            .map(|(i, _)| i);
        let Some(i) = worst else { break };
        let p = panels.swap_remove(i);
        let mid = 0.5 * (p.lo + p.hi);
        let left = kronrod_panel(f, p.lo, mid, p.depth + 1);
        let right = kronrod_panel(f, mid, p.hi, p.depth + 1);
        err_total += left.err + right.err - p.err;
        panels.push(left);
        panels.push(right);
    }
    let total = panels.iter().map(|p| p.value).sum();
    let err = panels.iter().map(|p| p.err).sum();
    (total, err)
}
