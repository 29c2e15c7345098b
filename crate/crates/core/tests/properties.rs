//! Randomized invariants over seeded networks and densities.

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use oqnet::dynamics::{
    covariance_at, evolve_state, noise_on_grid, propagator_at, sigma_series, stationary_sigma_freq,
    uncertainty_margin, GaussianState,
};
use oqnet::ensemble::{random_network, random_temperatures, EnsembleOptions};
use oqnet::greens::{solve_g_time, FreqEvaluator};
use oqnet::linalg::{asymmetry, block2, max_abs, sym_eigenvalues};
use oqnet::model::NetworkSpec;
use oqnet::quad::QuadOptions;
use oqnet::spectral::{gamma_laplace, nu_hat, CutoffShape, SpectralDensity};
use oqnet::thermo::{transfer_at, HeatTransferMatrix};

fn small_ensemble() -> EnsembleOptions {
    EnsembleOptions {
        region_counts: vec![2, 3],
        max_interior: 1,
        ..EnsembleOptions::default()
    }
}

fn network(seed: u64, opts: &EnsembleOptions) -> NetworkSpec {
    let q = QuadOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = random_network(&mut rng, opts, &q).unwrap();
    random_temperatures(&mut rng, &base, opts.temperature_range).unwrap()
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m)[0]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn evolution_preserves_uncertainty_and_g_symmetry(seed in any::<u64>(), temp in 0.0f64..1.5) {
        let spec = network(seed, &small_ensemble());
        let q = QuadOptions::default();
        let gf = solve_g_time(&spec, 8.0, 0.04, &q).unwrap();
        let nu = noise_on_grid(&spec, &gf, &q).unwrap();
        let sig = sigma_series(&gf, &nu).unwrap();
        let vr = spec.renormalized_potential(&q).unwrap();
        let k = spec.dim();
        let coherent = GaussianState::coherent(&vec![0.7; k], &vec![-0.3; k]);
        let thermal = GaussianState::thermal_network(&vr, temp).unwrap();
        for n in (0..gf.len()).step_by(10) {
            for s0 in [&coherent, &thermal] {
                let st = evolve_state(s0, &propagator_at(&gf, &sig, n));
                prop_assert!(st.uncertainty_margin() > -1e-8, "margin {} at t = {}", st.uncertainty_margin(), gf.time(n));
                let direct = covariance_at(&gf, &sig, &s0.cov, n);
                prop_assert!(max_abs(&(&direct - &st.cov)) < 1e-10 * max_abs(&st.cov).max(1.0));
            }
        }
    }

    #[test]
    fn time_domain_g_is_symmetric_to_second_order(seed in any::<u64>()) {
        // the one-sided discrete recursion breaks the symmetry at O(h^2) only
        let spec = network(seed, &small_ensemble());
        let q = QuadOptions::default();
        let worst = |h: f64| {
            let gf = solve_g_time(&spec, 4.0, h, &q).unwrap();
            (0..gf.len()).map(|n| asymmetry(&gf.g.get(n))).fold(0.0, f64::max)
        };
        let (coarse, fine) = (worst(0.04), worst(0.02));
        prop_assert!(coarse < 1e-3, "asymmetry {coarse:e} at h = 0.04");
        prop_assert!(fine <= (coarse / 3.0).max(1e-12), "asymmetry {coarse:e} -> {fine:e} on halving h");
    }

    #[test]
    fn stationary_covariance_is_a_physical_state(seed in any::<u64>()) {
        let spec = network(seed, &small_ensemble());
        let q = QuadOptions::default();
        let eval = FreqEvaluator::new(&spec, &q).unwrap();
        let (s00, s01, s11) = stationary_sigma_freq(&spec, &eval, &q).unwrap();
        let scale = max_abs(&s00).max(max_abs(&s11));
        prop_assert!(max_abs(&(&s00 - s00.transpose())) < 1e-10 * scale);
        prop_assert!(max_abs(&(&s11 - s11.transpose())) < 1e-10 * scale);
        prop_assert!(min_eig(&s00) > 0.0 && min_eig(&s11) > 0.0);
        let cov = block2(&s00, &s01, &s01.transpose(), &s11);
        prop_assert!(uncertainty_margin(&cov) > -1e-7 * scale, "margin {}", uncertainty_margin(&cov));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn transfer_matrix_structure(seed in any::<u64>(), frac in 0.01f64..1.0) {
        let spec = network(seed, &EnsembleOptions::default());
        let q = QuadOptions::default();
        let eval = FreqEvaluator::new(&spec, &q).unwrap();
        let w = frac * spec.density_upper().min(4.0 * spec.cutoff_scale());
        let htm = HeatTransferMatrix { samples: vec![transfer_at(&spec, &eval, w).unwrap()] };
        prop_assert!(htm.symmetry_residual() < 1e-9, "symmetry {}", htm.symmetry_residual());
        prop_assert!(htm.offdiag_max() <= 1e-12, "off-diagonal {}", htm.offdiag_max());
        prop_assert!(htm.row_sum_residual() < 1e-9, "row sums {}", htm.row_sum_residual());
        prop_assert!(htm.form_residual() < 1e-9, "forms {}", htm.form_residual());
    }

    #[test]
    fn resolvent_is_symmetric(seed in any::<u64>(), frac in 0.0f64..1.0) {
        let spec = network(seed, &EnsembleOptions::default());
        let eval = FreqEvaluator::new(&spec, &QuadOptions::default()).unwrap();
        let g = eval.eval(frac * 4.0 * spec.cutoff_scale()).unwrap();
        let scale = g.iter().fold(0.0f64, |a, z| a.max(z.norm()));
        prop_assert!((&g - g.transpose()).iter().all(|z| z.norm() <= 1e-12 * scale));
    }

    #[test]
    fn quantum_noise_dominates_dissipation(seed in any::<u64>(), frac in 0.01f64..1.0) {
        // coth >= 1, so nu_hat(w) - sum_a I_a(w) is positive semidefinite
        let spec = network(seed, &EnsembleOptions::default());
        let w = frac * spec.density_upper().min(4.0 * spec.cutoff_scale());
        let nh = nu_hat(&spec.thermal_densities(), w);
        let i = spec.total_density_matrix(w);
        prop_assert!(min_eig(&(&nh - &i)) > -1e-12 * max_abs(&nh).max(1e-300));
        prop_assert!(min_eig(&i) > -1e-12 * max_abs(&i).max(1e-300));
    }

    #[test]
    fn damping_transform_is_analytic(
        coupling in 0.01f64..1.0,
        exponent in 0.3f64..3.0,
        cutoff in 0.5f64..5.0,
        sharp in any::<bool>(),
        x in 0.2f64..2.0,
        y in -3.0f64..3.0,
    ) {
        let shape = if sharp { CutoffShape::Sharp } else { CutoffShape::Exponential };
        let d = SpectralDensity::power_law(1, vec![0], coupling, exponent, cutoff, shape).unwrap();
        let q = QuadOptions { abs_tol: 1e-13, rel_tol: 1e-12, ..QuadOptions::default() };
        let f = |s: Complex64| gamma_laplace(&[&d], s, &q).unwrap()[(0, 0)];
        let s = Complex64::new(x, y);
        let e = 1e-4;
        let dx = (f(s + e) - f(s - e)) / (2.0 * e);
        let dy = (f(s + Complex64::i() * e) - f(s - Complex64::i() * e)) / (2.0 * e);
        // Cauchy-Riemann: df/dy = i df/dx
        let gap = (dy - Complex64::i() * dx).norm();
        prop_assert!(gap < 1e-6 * dx.norm().max(1e-3 * f(s).norm()), "gap {gap}, |f'| {}", dx.norm());
        // real on the real axis, hence conjugate-symmetric
        let conj = f(s.conj());
        prop_assert!((conj - f(s).conj()).norm() < 1e-10 * f(s).norm());
    }
}
