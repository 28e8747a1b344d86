mod common;

use common::{
    kl_1d_quadrature, logistic_instance, simpson, third_derivative_5pt, CubicRay, SoftplusTilt,
};
use lapcert::bound::{
    approximate_bound_coefficient, audit, audit_with_fit, conditional_kl_bound, delta3, delta4,
    lsi_kl_bound, min_conditional_curvature, xi_elbo, AuditConfig, BoundForm, BoundaryForm,
    Delta4Mode, Delta4Source,
};
use lapcert::error::Error;
use lapcert::laplace::{build_fit, fit_laplace, OptimizerOptions};
use lapcert::model::{GaussianModel, TargetModel};
use lapcert::radial::{
    chi_moment, indexed_rng, psi_g_min_curvature, sample_direction, DirectionSample,
};
use nalgebra::DVector;

fn unit(d: usize, sign: f64) -> DirectionSample {
    DirectionSample::new(DVector::from_element(d, sign)).unwrap()
}

#[test]
fn delta3_is_odd_and_matches_finite_differences() {
    let (model, fit) = logistic_instance(5, 100, 4, 10.0);
    for stream in 0..10 {
        let e = sample_direction(5, &mut indexed_rng(3, stream));
        let a = delta3(&fit, &model, &e).unwrap();
        let b = delta3(&fit, &model, &e.flipped()).unwrap();
        assert_eq!(a, -b);
        let v = &fit.sqrt_covariance * e.as_vector();
        let fd = third_derivative_5pt(
            |r| model.neg_log_density(&(&fit.theta_star + &v * r)).unwrap(),
            2e-2,
        );
        assert!((a - fd).abs() < 1e-4 * a.abs().max(1e-2), "{a} vs {fd}");
    }
}

#[test]
fn antithetic_pairs_cancel_delta3_exactly() {
    let (model, fit) = logistic_instance(5, 100, 9, 10.0);
    let config = AuditConfig {
        n_directions: 64,
        bound: BoundForm::Approx,
        ..AuditConfig::default()
    };
    let report = audit_with_fit(&model, &fit, &config).unwrap();
    let total: f64 = report.diagnostics.iter().map(|g| g.delta3).sum();
    assert_eq!(total, 0.0);
}

#[test]
fn analytic_delta4_dominates_grid_surrogate() {
    let (model, fit) = logistic_instance(5, 100, 2, 10.0);
    for stream in 0..10 {
        let e = sample_direction(5, &mut indexed_rng(4, stream));
        let analytic = delta4(&fit, &model, &e, Delta4Mode::Analytic, None).unwrap();
        let grid = delta4(&fit, &model, &e, Delta4Mode::Grid, None).unwrap();
        assert_eq!(analytic.source, Delta4Source::Analytic);
        assert_eq!(grid.source, Delta4Source::Grid);
        assert!(analytic.value >= grid.value);
    }
    let gauss = GaussianModel::random(3, 0).unwrap();
    let gfit = build_fit(&gauss, gauss.mean()).unwrap();
    let e = unit(3, 1.0);
    assert_eq!(
        delta4(&gfit, &gauss, &e, Delta4Mode::Grid, Some(4.0))
            .unwrap()
            .value,
        0.0
    );
}

#[test]
fn delta4_responds_to_rescaled_covariates() {
    use lapcert::model::{generate_dataset, LogisticRegressionModel, SyntheticDatasetConfig};
    let mut data = generate_dataset(&SyntheticDatasetConfig {
        d: 3,
        n: 200,
        seed: 6,
    })
    .unwrap();
    let fit_of = |data: &lapcert::model::LogisticData| {
        let m = LogisticRegressionModel::from_data(data, 10.0).unwrap();
        let f = fit_laplace(&m, &DVector::zeros(3), &OptimizerOptions::default()).unwrap();
        (m, f)
    };
    let (m1, f1) = fit_of(&data);
    data.x *= 2.0;
    let (m2, f2) = fit_of(&data);
    let e = unit(3, 1.0);
    let a = delta4(&f1, &m1, &e, Delta4Mode::Analytic, None)
        .unwrap()
        .value;
    let b = delta4(&f2, &m2, &e, Delta4Mode::Analytic, None)
        .unwrap()
        .value;
    assert!(a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0);
    assert_ne!(a, b);
}

#[test]
fn curvature_interior_minimum_matches_fine_grid() {
    let bound = min_conditional_curvature(5, 1.0, 0.0, BoundaryForm::AsStated).unwrap();
    let mut grid = f64::INFINITY;
    for i in 1..=2_000_000 {
        let z = i as f64 * 1e-6;
        let w = z * z;
        grid = grid.min(9.0 / w + 6.0 * w + 5.0 * w * w);
    }
    assert!((bound - grid).abs() < 1e-8, "{bound} vs {grid}");
}

#[test]
fn curvature_is_continuous_as_delta4_vanishes() {
    let target = psi_g_min_curvature(5);
    let gaps: Vec<f64> = [1e-2, 1e-4, 1e-6]
        .iter()
        .map(|&d4| {
            (min_conditional_curvature(5, 0.0, d4, BoundaryForm::AsStated).unwrap() - target).abs()
        })
        .collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2]);
    assert!(gaps[2] < 1e-3);
}

#[test]
fn derived_boundary_is_never_smaller() {
    for (d3, d4) in [(0.3, 0.2), (-0.5, 0.1), (0.0, 1.0), (2.0, 5.0)] {
        let stated = min_conditional_curvature(3, d3, d4, BoundaryForm::AsStated).unwrap();
        let derived = min_conditional_curvature(3, d3, d4, BoundaryForm::Derived).unwrap();
        assert!(derived >= stated);
    }
}

/// `KL(z_g, z_f | e)` for `d = 1` and `φ_e(r) = r²/2 + αr³/6`, by quadrature.
fn conditional_kl_cubic(alpha: f64) -> f64 {
    let log_g = |z: f64| z.ln() - z.powi(4) / 2.0;
    let log_f = |z: f64| {
        let r = z * z;
        z.ln() - (r * r / 2.0 + alpha * r * r * r / 6.0)
    };
    let (a, b, n) = (1e-12, 4.0, 400_000);
    let zg = simpson(|z| log_g(z).exp(), a, b, n);
    let zf = simpson(|z| log_f(z).exp(), a, b, n);
    simpson(
        |z| log_g(z).exp() / zg * (log_g(z) - log_f(z) - zg.ln() + zf.ln()),
        a,
        b,
        n,
    )
}

#[test]
fn conditional_bound_dominates_quadrature_kl_in_1d() {
    for alpha in [0.01, 0.05, 0.1, 0.3] {
        let curvature = min_conditional_curvature(1, alpha, 0.0, BoundaryForm::AsStated).unwrap();
        let bound = conditional_kl_bound(1, alpha, 0.0, curvature).unwrap();
        let truth = conditional_kl_cubic(alpha);
        assert!(truth > 0.0);
        assert!(bound >= truth, "α={alpha}: {bound} < {truth}");
    }
}

#[test]
fn xi_elbo_on_a_cubic_ray() {
    for alpha in [0.01, 0.1, 0.5] {
        let model = CubicRay { alpha };
        let fit = build_fit(&model, &DVector::zeros(1)).unwrap();
        let xi = xi_elbo(&fit, &model, &unit(1, 1.0), 64).unwrap();
        let expected = -alpha / 6.0 * chi_moment(1, 3);
        assert!((xi - expected).abs() < 1e-10, "{xi} vs {expected}");
    }
}

#[test]
fn xi_elbo_converges_in_nodes() {
    let (model, fit) = logistic_instance(5, 100, 1, 10.0);
    for stream in 0..5 {
        let e = sample_direction(5, &mut indexed_rng(2, stream));
        let a = xi_elbo(&fit, &model, &e, 64).unwrap();
        let b = xi_elbo(&fit, &model, &e, 128).unwrap();
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
    assert!(xi_elbo(&fit, &model, &unit(5, 1.0), 8).is_err());
}

#[test]
fn gaussian_audit_is_exactly_zero() {
    for d in [1usize, 3, 20] {
        let model = GaussianModel::random(d, 5).unwrap();
        let report = audit(&model, &AuditConfig::default()).unwrap();
        assert_eq!(report.approx_bound, Some(0.0));
        assert_eq!(report.detailed_bound, Some(0.0));
        assert!(report.invalid_directions.is_empty());
        for g in &report.diagnostics {
            assert_eq!(g.min_curvature, psi_g_min_curvature(d));
            assert_eq!(g.xi_elbo, Some(0.0));
            assert_eq!(g.cond_kl_bound, Some(0.0));
        }
    }
}

#[test]
fn one_dimensional_dominance() {
    for alpha in [0.1, 0.5, 1.0] {
        let model = SoftplusTilt { alpha };
        let fit = fit_laplace(&model, &DVector::zeros(1), &OptimizerOptions::default()).unwrap();
        let report = audit_with_fit(&model, &fit, &AuditConfig::default()).unwrap();
        let truth = kl_1d_quadrature(
            |t| model.neg_log_density(&DVector::from_element(1, t)).unwrap(),
            fit.theta_star[0],
            fit.covariance[(0, 0)].sqrt(),
        );
        let bound = report.detailed_bound.unwrap();
        assert!(bound >= truth, "α={alpha}: bound {bound} < KL {truth}");
        if alpha == 0.1 {
            assert!(bound <= 50.0 * truth, "bound {bound} vs KL {truth}");
        }
    }
}

#[test]
fn every_direction_invalid_is_reported() {
    let model = CubicRay { alpha: -0.5 };
    let fit = build_fit(&model, &DVector::zeros(1)).unwrap();
    let err = audit_with_fit(&model, &fit, &AuditConfig::default()).unwrap_err();
    assert!(matches!(err, Error::AllDirectionsInvalid));
    assert!(err.is_assumption_violation());
}

#[test]
fn coefficient_identity_with_chi_moments() {
    for d in 1..=100usize {
        let df = d as f64;
        let via_moments = chi_moment(d, 5) / (2.0 * 6f64.sqrt() * (2.0 * df - 1.0).sqrt())
            + 0.5 * (chi_moment(d, 3) / 6.0).powi(2);
        let coef = approximate_bound_coefficient(d);
        assert!((coef / via_moments - 1.0).abs() < 1e-12, "d={d}");
    }
    assert!((approximate_bound_coefficient(50) - 2178.433097467631).abs() < 1e-9);
}

#[test]
fn delta3_variance_shrinks_with_data() {
    let mean_over_seeds = |n: usize| {
        (0..10u64)
            .map(|seed| {
                let (model, fit) = logistic_instance(5, n, 100 + seed, 10.0);
                let config = AuditConfig {
                    n_directions: 64,
                    bound: BoundForm::Approx,
                    seed,
                    ..AuditConfig::default()
                };
                audit_with_fit(&model, &fit, &config)
                    .unwrap()
                    .mean_delta3_sq
            })
            .sum::<f64>()
            / 10.0
    };
    let (a, b, c) = (
        mean_over_seeds(20),
        mean_over_seeds(100),
        mean_over_seeds(1000),
    );
    assert!(a > b && b > c, "{a} {b} {c}");
}

#[test]
fn audit_is_identical_across_thread_counts() {
    let (model, fit) = logistic_instance(5, 100, 12, 10.0);
    let config = AuditConfig {
        n_directions: 32,
        ..AuditConfig::default()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            serde_json::to_string(&audit_with_fit(&model, &fit, &config).unwrap()).unwrap()
        })
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn odd_direction_counts_are_rejected() {
    let (model, fit) = logistic_instance(3, 30, 1, 10.0);
    for m in [0, 1, 7] {
        let config = AuditConfig {
            n_directions: m,
            ..AuditConfig::default()
        };
        assert!(audit_with_fit(&model, &fit, &config).is_err());
    }
}

#[test]
fn lsi_bound_behaviour() {
    let gauss = GaussianModel::random(3, 1).unwrap();
    let gfit = build_fit(&gauss, gauss.mean()).unwrap();
    let zero = lsi_kl_bound(&gfit, &gauss, 0.5, 1000, 0).unwrap();
    assert!(zero.value < 1e-20);
    assert!(lsi_kl_bound(&gfit, &gauss, 0.0, 1000, 0).is_err());

    let (model, fit) = logistic_instance(5, 1000, 3, 10.0);
    let beta = 1.0 / 100.0;
    let lsi = lsi_kl_bound(&fit, &model, beta, 4000, 1).unwrap();
    let detailed = audit_with_fit(&model, &fit, &AuditConfig::default())
        .unwrap()
        .detailed_bound
        .unwrap();
    assert!(
        lsi.value > detailed,
        "lsi {} vs detailed {detailed}",
        lsi.value
    );
    let doubled = lsi_kl_bound(&fit, &model, beta, 8000, 2).unwrap();
    let combined = (lsi.se.powi(2) + doubled.se.powi(2)).sqrt();
    assert!((lsi.value - doubled.value).abs() < 3.0 * combined);
}
