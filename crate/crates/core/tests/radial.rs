mod common;

use common::simpson;
use lapcert::laplace::{build_fit, sample_laplace};
use lapcert::model::GaussianModel;
use lapcert::radial::{
    chi_moment, from_theta, indexed_rng, psi_g_min_curvature, sample_direction, to_theta, RadialLaw,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn sphere_samples_have_uniform_moments() {
    let n = 100_000;
    let mut rng = indexed_rng(17, 0);
    let mut sum = DVector::<f64>::zeros(3);
    let mut outer = DMatrix::<f64>::zeros(3, 3);
    for _ in 0..n {
        let e = sample_direction(3, &mut rng);
        let v = e.as_vector();
        assert!((v.norm() - 1.0).abs() < 1e-12);
        sum += v;
        outer += v * v.transpose();
    }
    let mean = sum / n as f64;
    let cov = outer / n as f64;
    // Each coordinate has variance 1/3.
    let se = (1.0f64 / 3.0 / n as f64).sqrt();
    for j in 0..3 {
        assert!(mean[j].abs() < 3.0 * se, "coordinate {j} mean {}", mean[j]);
    }
    assert!((&cov - DMatrix::identity(3, 3) / 3.0).amax() < 0.01);
}

#[test]
fn sphere_law_is_rotation_invariant() {
    // Random orthogonal Q from the QR factor of a Gaussian matrix.
    let mut rng = indexed_rng(5, 1000);
    let g = DMatrix::from_fn(4, 4, |_, _| rng.random::<f64>() - 0.5);
    let q = g.qr().q();
    let bins = 10;
    let n = 50_000;
    let mut plain = vec![0usize; bins];
    let mut rotated = vec![0usize; bins];
    let bin = |x: f64| (((x + 1.0) / 2.0 * bins as f64) as usize).min(bins - 1);
    for i in 0..n {
        let e = sample_direction(4, &mut indexed_rng(6, i));
        plain[bin(e.as_vector()[0])] += 1;
        rotated[bin((&q * e.as_vector())[0])] += 1;
    }
    // Two-sample chi-squared homogeneity test, 9 degrees of freedom.
    let stat: f64 = plain
        .iter()
        .zip(&rotated)
        .map(|(&a, &b)| {
            let (a, b) = (a as f64, b as f64);
            (a - b).powi(2) / (a + b)
        })
        .sum();
    let critical = ChiSquared::new((bins - 1) as f64)
        .unwrap()
        .inverse_cdf(0.99);
    assert!(stat < critical, "chi-squared {stat} ≥ {critical}");
}

#[test]
fn chi_moments_satisfy_the_recursion() {
    for d in [1usize, 2, 3, 5, 17, 50, 100, 9_000] {
        for k in 2..=9u32 {
            let lhs = chi_moment(d, k);
            let rhs = (d as f64 + k as f64 - 2.0) * chi_moment(d, k - 2);
            assert!((lhs / rhs - 1.0).abs() < 1e-12, "d={d} k={k}");
        }
    }
}

#[test]
fn z_density_is_normalized_with_known_mode_and_fourth_moment() {
    for d in [1usize, 2, 5, 50] {
        let law = RadialLaw::new(d).unwrap();
        let dens = |z: f64| {
            if z <= 0.0 {
                0.0
            } else {
                law.z_log_density(z).unwrap().exp()
            }
        };
        let total = simpson(dens, 0.0, 6.0, 200_000);
        assert!((total - 1.0).abs() < 1e-8, "d={d}: {total}");
        let z4 = simpson(|z| z.powi(4) * dens(z), 0.0, 6.0, 200_000);
        assert!((z4 - d as f64).abs() < 1e-7 * d as f64);

        let mode = ((2.0 * d as f64 - 1.0) / 2.0).powf(0.25);
        let (mut best, mut arg) = (f64::NEG_INFINITY, 0.0);
        for i in 1..=60_000 {
            let z = i as f64 * 1e-4;
            let v = law.z_log_density(z).unwrap();
            if v > best {
                best = v;
                arg = z;
            }
        }
        assert!((arg - mode).abs() < 2e-4, "d={d}: grid {arg} vs {mode}");
    }
}

#[test]
fn min_curvature_matches_grid_minimum() {
    for d in 1..=100usize {
        let law = RadialLaw::new(d).unwrap();
        let target = psi_g_min_curvature(d);
        let z_star = ((2.0 * d as f64 - 1.0) / 6.0).powf(0.25);
        let mut grid_min = f64::INFINITY;
        for i in 0..20_001 {
            let z = z_star * (0.5 + i as f64 * 5e-5);
            let v = law.psi_curvature(z);
            assert!(v >= target * (1.0 - 1e-14));
            grid_min = grid_min.min(v);
        }
        assert!((grid_min - target).abs() < 1e-8 * target, "d={d}");
    }
}

#[test]
fn change_of_variable_round_trips() {
    let model = GaussianModel::random(4, 9).unwrap();
    let fit = build_fit(&model, model.mean()).unwrap();
    assert!(from_theta(&fit, &fit.theta_star).unwrap().is_none());
    let at_zero = to_theta(&fit, 0.0, &sample_direction(4, &mut indexed_rng(0, 0))).unwrap();
    assert_eq!(at_zero, fit.theta_star);
    let mut rng = indexed_rng(2, 0);
    for _ in 0..1000 {
        let e = sample_direction(4, &mut rng);
        let z = 0.05 + 3.0 * rng.random::<f64>();
        let theta = to_theta(&fit, z, &e).unwrap();
        let (z_back, e_back) = from_theta(&fit, &theta).unwrap().unwrap();
        assert!((z_back - z).abs() < 1e-10);
        assert!((e_back.as_vector() - e.as_vector()).amax() < 1e-10);
    }
}

#[test]
fn gaussian_radius_follows_the_z_law() {
    let d = 5;
    let model = GaussianModel::random(d, 1).unwrap();
    let fit = build_fit(&model, model.mean()).unwrap();
    let n = 100_000;
    let mut zs: Vec<f64> = (0..n)
        .map(|i| {
            let theta = sample_laplace(&fit, &mut indexed_rng(8, i as u64));
            from_theta(&fit, &theta).unwrap().unwrap().0
        })
        .collect();
    zs.sort_by(f64::total_cmp);

    // CDF of z: P(r ≤ z²) with r² ~ χ²_d.
    let chi2 = ChiSquared::new(d as f64).unwrap();
    let cdf = |z: f64| chi2.cdf(z.powi(4));
    // Cross-check the CDF against quadrature of the z density at a few points.
    let law = RadialLaw::new(d).unwrap();
    for z in [0.8, 1.3, 1.9] {
        let q = simpson(
            |t| {
                if t <= 0.0 {
                    0.0
                } else {
                    law.z_log_density(t).unwrap().exp()
                }
            },
            0.0,
            z,
            20_000,
        );
        assert!((q - cdf(z)).abs() < 1e-9);
    }
    let ks = zs
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let f = cdf(z);
            (f - i as f64 / n as f64)
                .abs()
                .max(((i + 1) as f64 / n as f64 - f).abs())
        })
        .fold(0.0, f64::max);
    let critical = 1.628 / (n as f64).sqrt();
    assert!(ks < critical, "KS {ks} ≥ {critical}");
}
