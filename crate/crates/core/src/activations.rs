//! Registry of pointwise nonlinearities and the statistics of their squared
//! slopes under a Gaussian pre-activation.
//!
//! For `h ~ N(0, 1)` and pre-activation variance `q`, the squared slope
//! `d = phi'(sqrt(q) h)^2` is the eigenvalue distribution of `D^2`. This module
//! provides its moments `mu_k`, its moment generating function
//! `M_{D^2}(z) = E[d / (z - d)]`, and the Gaussian expectations the fixed-point
//! recursion needs.
//!
//! Piecewise-linear activations are integrated exactly, piece by piece, with
//! the Gaussian CDF. Smooth activations use adaptive Gauss-Kronrod on a
//! truncated window; a fixed Gauss-Hermite rule is too coarse once
//! `phi'(sqrt(q) h)^2` narrows at large `q`.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpectraError};
use crate::special::{erf, erfc, integrate_adaptive, normal_cdf, normal_pdf};

/// Half-width of the integration window in units of the standard deviation.
const GAUSS_WINDOW: f64 = 10.0;
/// Minimum distance between `z` and the support of `phi'^2` for `M_{D^2}`.
const SUPPORT_GUARD: f64 = 1e-12;

/// Tag selecting which closed-form transform paths an activation offers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClosedForm {
    Linear,
    ReLU,
    LeakyReLU,
    HardTanh,
    ShiftedReLU,
    Erf,
    ErfSMScaled,
    Tanh,
    ArcTan,
    SiLU,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Linear,
    Relu,
    LeakyRelu {
        alpha: f64,
    },
    HardTanh,
    ShiftedRelu,
    /// `erf(sqrt(pi) x / 2)`
    ErfMain,
    /// `sqrt(pi/2) erf(x / sqrt(2))`
    ErfSm,
    Tanh,
    /// `(2/pi) arctan(pi x / 2)`
    ArcTan,
    /// `x * sigmoid(beta x)`
    Silu {
        beta: f64,
    },
}

/// One linear piece `phi(x) = slope * x + intercept` on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub lo: f64,
    pub hi: f64,
    pub slope: f64,
    pub intercept: f64,
}

/// Range of `phi'^2` over the real line.
#[derive(Debug, Clone, PartialEq)]
pub enum SlopeSupport {
    /// Finitely many values (piecewise-linear activations).
    Discrete(Vec<f64>),
    Interval {
        lo: f64,
        hi: f64,
    },
}

impl SlopeSupport {
    pub fn distance(&self, z: Complex64) -> f64 {
        match self {
            SlopeSupport::Discrete(points) => points.iter().map(|&p| (z - p).norm()).fold(f64::INFINITY, f64::min),
            SlopeSupport::Interval { lo, hi } => {
                let dx = if z.re < *lo {
                    lo - z.re
                } else if z.re > *hi {
                    z.re - hi
                } else {
                    0.0
                };
                dx.hypot(z.im)
            }
        }
    }

    pub fn max(&self) -> f64 {
        match self {
            SlopeSupport::Discrete(points) => points.iter().cloned().fold(0.0, f64::max),
            SlopeSupport::Interval { hi, .. } => *hi,
        }
    }
}

/// A named pointwise nonlinearity.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ActivationConfig", into = "ActivationConfig")]
pub struct ActivationSpec {
    name: String,
    params: BTreeMap<String, f64>,
    kind: Kind,
    pieces: Vec<Piece>,
    support: SlopeSupport,
}

/// Wire form of an activation: a registry name plus named parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationConfig {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl TryFrom<ActivationConfig> for ActivationSpec {
    type Error = SpectraError;
    fn try_from(cfg: ActivationConfig) -> Result<Self> {
        ActivationSpec::from_name(&cfg.name, &cfg.params)
    }
}

impl From<ActivationSpec> for ActivationConfig {
    fn from(spec: ActivationSpec) -> Self {
        ActivationConfig {
            name: spec.name,
            params: spec.params,
        }
    }
}

impl fmt::Debug for ActivationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ActivationSpec")
            .field("name", &self.name)
            .field("params", &self.params)
            .finish()
    }
}

/// Names accepted by [`ActivationSpec::from_name`].
pub const REGISTRY: [&str; 10] = [
    "linear",
    "relu",
    "leaky_relu",
    "hard_tanh",
    "shifted_relu",
    "erf_main",
    "erf_sm",
    "tanh",
    "arctan",
    "silu",
];

fn piece(lo: f64, hi: f64, slope: f64, intercept: f64) -> Piece {
    Piece {
        lo,
        hi,
        slope,
        intercept,
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ActivationSpec {
    /// Look up a registry member. Unknown parameter names are rejected.
    pub fn from_name(name: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let allowed: &[&str] = match name {
            "leaky_relu" => &["alpha"],
            "silu" => &["beta"],
            _ => &[],
        };
        if let Some(bad) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(SpectraError::Invalid(format!(
                "activation {name} has no parameter {bad}"
            )));
        }
        let get = |key: &str, default: f64| params.get(key).copied().unwrap_or(default);
        let inf = f64::INFINITY;
        let (kind, pieces, support) = match name {
            "linear" => (
                Kind::Linear,
                vec![piece(-inf, inf, 1.0, 0.0)],
                SlopeSupport::Discrete(vec![1.0]),
            ),
            "relu" => (
                Kind::Relu,
                vec![piece(-inf, 0.0, 0.0, 0.0), piece(0.0, inf, 1.0, 0.0)],
                SlopeSupport::Discrete(vec![0.0, 1.0]),
            ),
            "leaky_relu" => {
                let alpha = get("alpha", 0.1);
                if !alpha.is_finite() {
                    return Err(SpectraError::Invalid("leaky_relu alpha must be finite".into()));
                }
                (
                    Kind::LeakyRelu { alpha },
                    vec![piece(-inf, 0.0, alpha, 0.0), piece(0.0, inf, 1.0, 0.0)],
                    SlopeSupport::Discrete(vec![alpha * alpha, 1.0]),
                )
            }
            "hard_tanh" => (
                Kind::HardTanh,
                vec![
                    piece(-inf, -1.0, 0.0, -1.0),
                    piece(-1.0, 1.0, 1.0, 0.0),
                    piece(1.0, inf, 0.0, 1.0),
                ],
                SlopeSupport::Discrete(vec![0.0, 1.0]),
            ),
            "shifted_relu" => (
                Kind::ShiftedRelu,
                vec![piece(-inf, -0.5, 0.0, -0.5), piece(-0.5, inf, 1.0, 0.0)],
                SlopeSupport::Discrete(vec![0.0, 1.0]),
            ),
            "erf_main" => (Kind::ErfMain, vec![], SlopeSupport::Interval { lo: 0.0, hi: 1.0 }),
            "erf_sm" => (Kind::ErfSm, vec![], SlopeSupport::Interval { lo: 0.0, hi: 1.0 }),
            "tanh" => (Kind::Tanh, vec![], SlopeSupport::Interval { lo: 0.0, hi: 1.0 }),
            "arctan" => (Kind::ArcTan, vec![], SlopeSupport::Interval { lo: 0.0, hi: 1.0 }),
            "silu" => {
                let beta = get("beta", 1.0);
                if !(beta > 0.0 && beta.is_finite()) {
                    return Err(SpectraError::Invalid("silu beta must be positive".into()));
                }
                // phi'(x) = g(beta x) with g(u) = s(u)(1 + u(1 - s(u))); the
                // maximum of g sits near u = 2.4
                let g = |u: f64| {
                    let s = sigmoid(u);
                    s * (1.0 + u * (1.0 - s))
                };
                let (mut lo, mut hi) = (1.0_f64, 4.0_f64);
                for _ in 0..200 {
                    let m1 = lo + (hi - lo) / 3.0;
                    let m2 = hi - (hi - lo) / 3.0;
                    if g(m1) < g(m2) {
                        lo = m1;
                    } else {
                        hi = m2;
                    }
                }
                let peak = g(0.5 * (lo + hi));
                (
                    Kind::Silu { beta },
                    vec![],
                    SlopeSupport::Interval {
                        lo: 0.0,
                        hi: peak * peak,
                    },
                )
            }
            other => {
                return Err(SpectraError::Invalid(format!(
                    "unknown activation {other}; known: {}",
                    REGISTRY.join(", ")
                )))
            }
        };
        Ok(ActivationSpec {
            name: name.to_string(),
            params: params.clone(),
            kind,
            pieces,
            support,
        })
    }

    /// Registry member without parameters (defaults applied).
    pub fn named(name: &str) -> Result<Self> {
        Self::from_name(name, &BTreeMap::new())
    }

    pub fn leaky_relu(alpha: f64) -> Self {
        let params = BTreeMap::from([("alpha".to_string(), alpha)]);
        Self::from_name("leaky_relu", &params).expect("finite alpha")
    }

    pub fn silu(beta: f64) -> Self {
        let params = BTreeMap::from([("beta".to_string(), beta)]);
        Self::from_name("silu", &params).expect("positive beta")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn closed_form(&self) -> ClosedForm {
        match self.kind {
            Kind::Linear => ClosedForm::Linear,
            Kind::Relu => ClosedForm::ReLU,
            Kind::LeakyRelu { .. } => ClosedForm::LeakyReLU,
            Kind::HardTanh => ClosedForm::HardTanh,
            Kind::ShiftedRelu => ClosedForm::ShiftedReLU,
            Kind::ErfMain => ClosedForm::Erf,
            Kind::ErfSm => ClosedForm::ErfSMScaled,
            Kind::Tanh => ClosedForm::Tanh,
            Kind::ArcTan => ClosedForm::ArcTan,
            Kind::Silu { .. } => ClosedForm::SiLU,
        }
    }

    /// Whether `M_{D^2}` has an exact evaluation path.
    pub fn has_closed_form_mgf(&self) -> bool {
        self.is_piecewise_linear()
    }

    /// Whether `mu_k` has an exact evaluation path.
    pub fn has_closed_form_moments(&self) -> bool {
        self.is_piecewise_linear() || matches!(self.kind, Kind::ErfMain | Kind::ErfSm)
    }

    pub fn is_piecewise_linear(&self) -> bool {
        !self.pieces.is_empty()
    }

    /// Linear pieces, empty for smooth activations.
    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    /// Kink locations in the pre-activation variable.
    pub fn kinks(&self) -> Vec<f64> {
        self.pieces.iter().skip(1).map(|p| p.lo).collect()
    }

    /// `phi'^2` takes only the values 0 and 1.
    pub fn is_bernoulli(&self) -> bool {
        matches!(
            self.kind,
            Kind::Linear | Kind::Relu | Kind::HardTanh | Kind::ShiftedRelu
        )
    }

    /// `phi(c x) = c phi(x)` for `c > 0`, so `mu_k` does not depend on `q`.
    pub fn is_scale_degenerate(&self) -> bool {
        matches!(self.kind, Kind::Linear | Kind::Relu | Kind::LeakyRelu { .. })
    }

    pub fn slope_support(&self) -> &SlopeSupport {
        &self.support
    }

    pub fn phi(&self, x: f64) -> f64 {
        match self.kind {
            Kind::ErfMain => erf(PI.sqrt() * x / 2.0),
            Kind::ErfSm => (PI / 2.0).sqrt() * erf(x / SQRT_2),
            Kind::Tanh => x.tanh(),
            Kind::ArcTan => 2.0 / PI * (PI * x / 2.0).atan(),
            Kind::Silu { beta } => x * sigmoid(beta * x),
            _ => {
                let p = self.piece_at(x);
                p.slope * x + p.intercept
            }
        }
    }

    pub fn dphi(&self, x: f64) -> f64 {
        match self.kind {
            Kind::ErfMain => (-PI * x * x / 4.0).exp(),
            Kind::ErfSm => (-x * x / 2.0).exp(),
            Kind::Tanh => {
                let c = x.cosh();
                if c.is_finite() {
                    1.0 / (c * c)
                } else {
                    0.0
                }
            }
            Kind::ArcTan => {
                let u = PI * x / 2.0;
                1.0 / (1.0 + u * u)
            }
            Kind::Silu { beta } => {
                let s = sigmoid(beta * x);
                s * (1.0 + beta * x * (1.0 - s))
            }
            _ => self.piece_at(x).slope,
        }
    }

    fn piece_at(&self, x: f64) -> &Piece {
        // right-continuous at kinks
        self.pieces.iter().rev().find(|p| x >= p.lo).unwrap_or(&self.pieces[0])
    }

    /// `E[f(h)]`, `h ~ N(0,1)`, split at kinks given in the `h` variable.
    fn expect_split<F: Fn(f64) -> f64>(&self, f: F, kinks_h: &[f64]) -> f64 {
        let g = |h: f64| Complex64::new(normal_pdf(h) * f(h), 0.0);
        let mut edges = vec![-GAUSS_WINDOW];
        edges.extend(kinks_h.iter().copied().filter(|k| k.abs() < GAUSS_WINDOW));
        edges.push(GAUSS_WINDOW);
        edges
            .windows(2)
            .map(|w| integrate_adaptive(&g, w[0], w[1], 1e-15, 50).0.re)
            .sum()
    }

    fn kinks_in_h(&self, qstar: f64) -> Vec<f64> {
        let sd = qstar.sqrt();
        self.kinks().iter().map(|k| k / sd).collect()
    }

    /// `E[phi(sqrt(q) h)^2]`, the integral in the variance recursion.
    pub fn mean_phi_sq(&self, qstar: f64) -> f64 {
        if qstar == 0.0 {
            return self.phi(0.0).powi(2);
        }
        let sd = qstar.sqrt();
        if self.is_piecewise_linear() {
            return self
                .pieces
                .iter()
                .map(|p| {
                    let m = GaussianSlab::new(p.lo / sd, p.hi / sd);
                    let a = p.slope * sd;
                    let c = p.intercept;
                    a * a * m.m2 + 2.0 * a * c * m.m1 + c * c * m.m0
                })
                .sum();
        }
        self.expect_split(|h| self.phi(sd * h).powi(2), &[])
    }

    /// `mu_k = E[phi'(sqrt(q) h)^{2k}]`, using the closed form when one exists.
    pub fn mu_k(&self, qstar: f64, k: u32) -> f64 {
        assert!(k >= 1, "moments start at k = 1");
        assert!(qstar >= 0.0, "qstar must be nonnegative");
        let kf = k as f64;
        match self.kind {
            Kind::ErfMain => 1.0 / (1.0 + PI * kf * qstar).sqrt(),
            Kind::ErfSm => 1.0 / (1.0 + 2.0 * kf * qstar).sqrt(),
            _ if self.is_piecewise_linear() => self
                .piece_masses(qstar)
                .into_iter()
                .map(|(slope, mass)| mass * slope.powi(2 * k as i32))
                .sum(),
            _ => self.mu_k_quadrature(qstar, k),
        }
    }

    /// `mu_k` by numerical integration, independent of any closed form.
    pub fn mu_k_quadrature(&self, qstar: f64, k: u32) -> f64 {
        let sd = qstar.sqrt();
        let kinks = self.kinks_in_h(qstar);
        self.expect_split(|h| self.dphi(sd * h).powi(2 * k as i32), &kinks)
    }

    /// Probability mass of each linear piece under `N(0, q)`.
    fn piece_masses(&self, qstar: f64) -> Vec<(f64, f64)> {
        // homogeneous activations look the same at every scale
        let qstar = if qstar == 0.0 && self.is_scale_degenerate() {
            1.0
        } else {
            qstar
        };
        if qstar == 0.0 {
            return vec![(self.dphi(0.0), 1.0)];
        }
        let sd = qstar.sqrt();
        self.pieces
            .iter()
            .map(|p| (p.slope, GaussianSlab::new(p.lo / sd, p.hi / sd).m0))
            .collect()
    }

    /// `mu_2 / mu_1^2 - 1`, computed without cancellation.
    pub fn moment_excess(&self, qstar: f64) -> f64 {
        match self.kind {
            Kind::ErfMain => {
                let a = PI * qstar;
                let r = (1.0 + 2.0 * a).sqrt();
                a * a / (r * (1.0 + a + r))
            }
            Kind::ErfSm => {
                let a = 2.0 * qstar;
                let r = (1.0 + 2.0 * a).sqrt();
                a * a / (r * (1.0 + a + r))
            }
            Kind::HardTanh | Kind::ShiftedRelu if qstar > 0.0 => {
                // 1/p - 1 = (1 - p)/p with 1 - p from the Gaussian tail
                let miss = self.bernoulli_miss(qstar);
                miss / (1.0 - miss)
            }
            _ => {
                let mu1 = self.mu_k(qstar, 1);
                let variance = if self.is_piecewise_linear() {
                    self.piece_masses(qstar)
                        .into_iter()
                        .map(|(s, m)| m * (s * s - mu1).powi(2))
                        .sum()
                } else {
                    let sd = qstar.sqrt();
                    self.expect_split(|h| (self.dphi(sd * h).powi(2) - mu1).powi(2), &[])
                };
                variance / (mu1 * mu1)
            }
        }
    }

    /// Probability of slope zero for the two-valued activations.
    fn bernoulli_miss(&self, qstar: f64) -> f64 {
        let sd = qstar.sqrt();
        match self.kind {
            Kind::HardTanh => erfc(1.0 / (SQRT_2 * sd)),
            Kind::ShiftedRelu => normal_cdf(-0.5 / sd),
            Kind::Relu => 0.5,
            Kind::Linear => 0.0,
            _ => unreachable!("not a Bernoulli activation"),
        }
    }

    /// `p(q)`: probability that the slope equals one, for activations with
    /// `phi'^2` in {0, 1}, so that `M_{D^2}(z) = p / (z - 1)`.
    pub fn bernoulli_p(&self, qstar: f64) -> Result<f64> {
        if !self.is_bernoulli() {
            return Err(SpectraError::Unsupported(format!(
                "{} is not a Bernoulli-class activation",
                self.name
            )));
        }
        if qstar == 0.0 {
            return Ok(if self.dphi(0.0) == 1.0 { 1.0 } else { 0.0 });
        }
        Ok(match self.kind {
            Kind::HardTanh => erf(1.0 / (SQRT_2 * qstar.sqrt())),
            Kind::ShiftedRelu => normal_cdf(0.5 / qstar.sqrt()),
            _ => 1.0 - self.bernoulli_miss(qstar),
        })
    }

    fn check_off_support(&self, z: Complex64) -> Result<()> {
        let distance = self.support.distance(z);
        if distance < SUPPORT_GUARD || !distance.is_finite() {
            return Err(SpectraError::OnSupport {
                z: z.to_string(),
                distance,
            });
        }
        Ok(())
    }

    /// `M_{D^2}(z) = E[d / (z - d)]` with `d = phi'(sqrt(q) h)^2`.
    pub fn m_d2(&self, qstar: f64, z: Complex64) -> Result<Complex64> {
        self.check_off_support(z)?;
        if self.is_piecewise_linear() {
            return Ok(self
                .piece_masses(qstar)
                .into_iter()
                .filter(|&(s, m)| s != 0.0 && m != 0.0)
                .map(|(s, m)| {
                    let d = s * s;
                    m * d / (z - d)
                })
                .sum());
        }
        Ok(self.m_d2_integral(qstar, z))
    }

    /// `M_{D^2}` by direct complex quadrature, split at kinks.
    pub fn m_d2_quadrature(&self, qstar: f64, z: Complex64) -> Result<Complex64> {
        self.check_off_support(z)?;
        Ok(self.m_d2_integral(qstar, z))
    }

    fn m_d2_integral(&self, qstar: f64, z: Complex64) -> Complex64 {
        if qstar == 0.0 {
            let d = self.dphi(0.0).powi(2);
            return d / (z - d);
        }
        let sd = qstar.sqrt();
        let integrand = |h: f64| {
            let d = self.dphi(sd * h).powi(2);
            normal_pdf(h) * d / (z - d)
        };
        let mut edges = vec![-GAUSS_WINDOW];
        edges.extend(self.kinks_in_h(qstar).into_iter().filter(|k| k.abs() < GAUSS_WINDOW));
        edges.push(GAUSS_WINDOW);
        let tol = 1e-14 / z.norm().max(1.0);
        let panels = edges.len() - 1;
        edges
            .windows(2)
            .map(|w| integrate_adaptive(&integrand, w[0], w[1], tol / panels as f64, 56).0)
            .sum()
    }
}

/// Truncated standard-normal moments `int_{a}^{b} h^k phi(h) dh`, k = 0, 1, 2.
#[derive(Debug, Clone, Copy)]
struct GaussianSlab {
    m0: f64,
    m1: f64,
    m2: f64,
}

impl GaussianSlab {
    fn new(a: f64, b: f64) -> Self {
        let m0 = if a >= 0.0 {
            normal_cdf(-a) - normal_cdf(-b)
        } else {
            normal_cdf(b) - normal_cdf(a)
        };
        let pa = if a.is_finite() { normal_pdf(a) } else { 0.0 };
        let pb = if b.is_finite() { normal_pdf(b) } else { 0.0 };
        let apa = if a.is_finite() { a * pa } else { 0.0 };
        let bpb = if b.is_finite() { b * pb } else { 0.0 };
        GaussianSlab {
            m0,
            m1: pa - pb,
            m2: m0 + apa - bpb,
        }
    }
}
