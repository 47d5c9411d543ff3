use jacspec::activations::{ActivationSpec, REGISTRY};
use jacspec::free_prob::jacobian_moments;
use jacspec::master_solver::{solve_g_at, SolverSettings};
use jacspec::rmt_sim::{sample_orthogonal, stream, Purpose};
use jacspec::signal_prop::{critical_sigma_w, double_scaling_qstar, qstar_fixed_point, FixedPointSettings};
use jacspec::special::{erf, erf_inv, gauss_normal_rule, lambert_w0, r_lambert};
use jacspec::{EnsembleKind, NetworkConfig, SpectraError};
use std::f64::consts::{FRAC_PI_2, TAU};

use num_complex::Complex64;
use proptest::prelude::*;

fn act(name: &str) -> ActivationSpec {
    ActivationSpec::named(name).unwrap()
}

/// Bias scale used for a critical network: scale-free activations only have
/// a critical point without bias.
fn critical_bias(a: &ActivationSpec) -> f64 {
    if a.is_scale_degenerate() {
        0.0
    } else {
        0.1
    }
}

/// Critical network, or `None` for silu, which has no stable fixed point
/// with chi = 1 at small bias.
fn critical(a: &ActivationSpec, kind: EnsembleKind, depth: usize) -> Option<NetworkConfig> {
    match NetworkConfig::critical(a.clone(), kind, depth, critical_bias(a)) {
        Ok(cfg) => Some(cfg),
        Err(SpectraError::Bracket(_)) if a.name() == "silu" => None,
        Err(e) => panic!("{}: {e}", a.name()),
    }
}

fn dist_to_interval(z: Complex64, hi: f64) -> f64 {
    let dx = if z.re < 0.0 {
        -z.re
    } else if z.re > hi {
        z.re - hi
    } else {
        0.0
    };
    dx.hypot(z.im)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn lambert_residual(r in 0.0f64..10.0, theta in -FRAC_PI_2..FRAC_PI_2) {
        let z = Complex64::from_polar(r, theta);
        let w = lambert_w0(z).unwrap();
        prop_assert!((w * w.exp() - z).norm() <= 1e-12 * (1.0 + z.norm()));
    }

    #[test]
    fn r_lambert_reduces_to_w(r in 0.0f64..10.0, theta in -FRAC_PI_2..FRAC_PI_2) {
        let z = Complex64::from_polar(r, theta);
        let w = lambert_w0(z).unwrap();
        let r = r_lambert(Complex64::new(0.0, 0.0), z).unwrap();
        prop_assert!((w - r).norm() <= 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    #[test]
    fn erf_round_trip(y in -0.999f64..0.999) {
        prop_assert!((erf(erf_inv(y).unwrap()) - y).abs() <= 1e-10);
    }

    #[test]
    fn erf_is_increasing(x in -6.0f64..6.0, dx in 1e-6f64..1.0) {
        // strict where erf is not within rounding of +-1
        if (x + dx).abs() < 4.0 && x.abs() < 4.0 {
            prop_assert!(erf(x + dx) > erf(x));
        } else {
            prop_assert!(erf(x + dx) >= erf(x));
        }
    }
}

#[test]
fn gauss_rule_reproduces_even_moments() {
    let rule = gauss_normal_rule(32);
    let mut double_factorial = 1.0f64;
    for k in 0..=15i32 {
        if k > 0 {
            double_factorial *= (2 * k - 1) as f64;
        }
        let m = rule.expect(|h| h.powi(2 * k));
        assert!(
            (m / double_factorial - 1.0).abs() <= 1e-9,
            "k = {k}: {m} vs {double_factorial}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn closed_form_m_d2_matches_quadrature(
        idx in 0usize..REGISTRY.len(),
        q in 0.01f64..4.0,
        re in -2.0f64..4.0,
        im in -2.0f64..2.0,
    ) {
        let a = act(REGISTRY[idx]);
        prop_assume!(a.has_closed_form_mgf());
        let z = Complex64::new(re, im);
        prop_assume!(dist_to_interval(z, a.slope_support().max()) >= 0.1);
        let exact = a.m_d2(q, z).unwrap();
        let quad = a.m_d2_quadrature(q, z).unwrap();
        prop_assert!((exact - quad).norm() <= 1e-7, "{} at z = {z}: {exact} vs {quad}", a.name());
    }

    #[test]
    fn m_d2_large_z_law(idx in 0usize..REGISTRY.len(), q in 0.01f64..4.0, r in 100.0f64..1e4, theta in 0.0f64..TAU) {
        let a = act(REGISTRY[idx]);
        let z = Complex64::from_polar(r, theta);
        let lhs = (z * a.m_d2(q, z).unwrap() - a.mu_k(q, 1)).norm();
        prop_assert!(lhs <= 2.0 * a.mu_k(q, 2) / r);
    }

    #[test]
    fn critical_round_trip(idx in 0usize..REGISTRY.len(), sb in 0.01f64..0.5) {
        let a = act(REGISTRY[idx]);
        let sb = if a.is_scale_degenerate() { 0.0 } else { sb };
        let settings = FixedPointSettings::default();
        match critical_sigma_w(&a, sb, &settings) {
            Ok((sw, q)) => {
                let chi = sw * sw * a.mu_k(q, 1);
                prop_assert!((chi - 1.0).abs() <= 1e-8, "{}: chi = {chi}", a.name());
            }
            // no stable fixed point crosses chi = 1 (silu)
            Err(SpectraError::Bracket(_)) => prop_assert_eq!(a.name(), "silu"),
            Err(e) => prop_assert!(false, "{}: {e}", a.name()),
        }
    }

    #[test]
    fn converged_fixed_points_have_small_residual(idx in 0usize..REGISTRY.len(), sw in 0.2f64..2.5, sb in 0.0f64..1.0) {
        let a = act(REGISTRY[idx]);
        let settings = FixedPointSettings::default();
        if let Ok(fp) = qstar_fixed_point(&a, sw, sb, &settings) {
            if fp.converged {
                let t = jacspec::signal_prop::variance_map(&a, sw, sb, fp.qstar);
                prop_assert!((t - fp.qstar).abs() <= settings.tol * (1.0 + fp.qstar));
            }
        }
    }

    #[test]
    fn double_scaling_identities(name in prop::sample::select(vec!["hard_tanh", "shifted_relu", "erf_main", "erf_sm", "tanh"]),
                                 depth in 2usize..5000, s0 in 0.05f64..2.0) {
        let a = act(name);
        let ds = double_scaling_qstar(&a, depth, s0).unwrap();
        let (m1, m2) = (a.mu_k(ds.qstar, 1), a.mu_k(ds.qstar, 2));
        let excess = depth as f64 * (m2 / (m1 * m1) - 1.0);
        prop_assert!((excess - s0).abs() <= 1e-8 * s0, "{name}: {excess} vs {s0}");
        prop_assert!((ds.sigma_w * ds.sigma_w * m1 - 1.0).abs() <= 1e-10);
    }
}

#[test]
fn bernoulli_p_decreases_in_qstar() {
    let a = act("hard_tanh");
    let mut prev = f64::INFINITY;
    // below q ~ 0.03, p rounds to 1
    for k in 0..200 {
        let q = 10f64.powf(-1.5 + 0.02 * k as f64);
        let p = a.bernoulli_p(q).unwrap();
        assert!(p < prev, "q = {q}");
        prev = p;
    }
}

#[test]
fn unit_mean_at_criticality() {
    for name in REGISTRY {
        let a = act(name);
        for kind in [EnsembleKind::Orthogonal, EnsembleKind::Gaussian] {
            let Some(base) = critical(&a, kind, 1) else { continue };
            for depth in [1usize, 8, 64] {
                let mut cfg = base.clone();
                cfg.depth = depth;
                let m = jacobian_moments(&cfg).unwrap();
                assert!(
                    (m.m1 - 1.0).abs() <= 1e-10,
                    "{name} {kind:?} L = {depth}: m1 = {}",
                    m.m1
                );
            }
        }
    }
}

#[test]
fn gaussian_variance_grows_linearly() {
    for name in REGISTRY {
        let a = act(name);
        let Some(base) = critical(&a, EnsembleKind::Gaussian, 1) else {
            continue;
        };
        let per_layer: Vec<f64> = [1usize, 8, 64]
            .iter()
            .map(|&d| {
                let mut cfg = base.clone();
                cfg.depth = d;
                jacobian_moments(&cfg).unwrap().variance / d as f64
            })
            .collect();
        for v in &per_layer {
            assert!(
                (v - per_layer[0]).abs() <= 1e-10 * per_layer[0].max(1.0),
                "{name}: {per_layer:?}"
            );
        }
    }
}

#[test]
fn resolvent_far_field() {
    let settings = SolverSettings::default();
    for name in ["linear", "relu", "hard_tanh", "tanh", "erf_main"] {
        let a = act(name);
        for kind in [EnsembleKind::Orthogonal, EnsembleKind::Gaussian] {
            let cfg = NetworkConfig::critical(a.clone(), kind, 4, critical_bias(&a)).unwrap();
            let g = solve_g_at(&cfg, 1e4, &settings).unwrap();
            assert!((g - Complex64::new(1e-4, 0.0)).norm() <= 1e-3, "{name} {kind:?}: {g}");
        }
    }
}

#[test]
fn sampled_orthogonal_matrices_are_orthogonal() {
    for (trial, sw) in [(0u64, 1.0), (1, 1.7), (2, 0.3)] {
        let mut rng = stream(9, trial, 0, Purpose::Weight);
        let w = sample_orthogonal(60, sw, &mut rng);
        let wtw = w.transpose() * &w;
        for i in 0..60 {
            for j in 0..60 {
                let want = if i == j { sw * sw } else { 0.0 };
                assert!((wtw[(i, j)] - want).abs() <= 1e-10);
            }
        }
    }
}
