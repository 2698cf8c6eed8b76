use super::*;

fn small_spec() -> SpectrumModel {
    power_law_spectrum(16, 2.0, 3).unwrap()
}

#[test]
fn spectrum_shape() {
    let s = power_law_spectrum(64, 3.0, 1).unwrap();
    assert_eq!(s.eigenvalues[0], 9.0);
    assert!((s.eigenvalues[3] / s.eigenvalues[0] - 0.5).abs() < 1e-15);
    assert!(s.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    let v = &s.eigenvectors;
    let gram = v.transpose() * v;
    assert!((gram - DMatrix::identity(64, 64)).amax() < 1e-10);
    // reconstruction from eigenpairs, one column at a time
    let sigma = s.covariance();
    let mut rebuilt = DMatrix::zeros(64, 64);
    for (i, l) in s.eigenvalues.iter().enumerate() {
        let c = v.column(i);
        rebuilt += *l * c * c.transpose();
    }
    assert!((sigma - rebuilt).amax() < 1e-10);
    assert!(power_law_spectrum(1, 1.0, 0).is_err());
}

#[test]
fn w_star_in_top_subspace() {
    let s = small_spec();
    let mut rng = GaussianRng::new(4);
    let p = sample_problem(&s, 3, 10, 0.1, default_radius(&s), &mut rng).unwrap();
    assert!((&s.projector(3) * &p.w_star - &p.w_star).amax() < 1e-12);
    assert!((p.w_star.norm() - 1.0).abs() < 1e-12);
    assert!(p.x.row_iter().all(|r| r.norm() <= default_radius(&s)));
}

#[test]
fn tiny_radius_is_a_config_error() {
    let s = small_spec();
    let mut rng = GaussianRng::new(4);
    let err = sample_problem(&s, 3, 10, 0.1, 1e-3, &mut rng).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn empirical_covariance_matches() {
    let s = power_law_spectrum(8, 1.5, 9).unwrap();
    let mut rng = GaussianRng::new(10);
    let n = 100_000;
    // a generous radius keeps the draw Gaussian
    let p = sample_problem(&s, 2, n, 0.0, 1e6, &mut rng).unwrap();
    let emp = p.x.tr_mul(&p.x) / n as f64;
    assert!((emp - s.covariance()).amax() < 5e-2 * 1.5 * 1.5);
}

#[test]
fn noiseless_ridge_recovers_w_star() {
    let s = small_spec();
    let mut rng = GaussianRng::new(11);
    let p = sample_problem(&s, 3, 2000, 0.0, default_radius(&s), &mut rng).unwrap();
    let w = ridge_solve(&p.x, &p.y, 1e-12).unwrap();
    assert!((w - &p.w_star).norm() < 1e-6);
}

#[test]
fn ridge_limits() {
    let x = DMatrix::identity(4, 4);
    let y = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
    // mean-normalized: (I/4 + λ)⁻¹ e₁/4 → e₁
    let w = ridge_solve(&x, &y, 1e-12).unwrap();
    assert!((w - &y).amax() < 1e-9);
    let w = ridge_solve(&x, &y, 1e12).unwrap();
    assert!(w.amax() < 1e-12);
    assert!(ridge_solve(&x, &y, 0.0).is_err());
}

#[test]
fn ridge_matches_normal_equation_oracle() {
    let mut rng = GaussianRng::new(12);
    let x = DMatrix::from_fn(8, 3, |_, _| rng.normal());
    let y = DVector::from_fn(8, |_, _| rng.normal());
    let lambda = 0.3;
    // oracle: LU on the raw normal equations (XᵀX + nλI) w = Xᵀy
    let mut a = x.transpose() * &x;
    for i in 0..3 {
        a[(i, i)] += 8.0 * lambda;
    }
    let want = a.lu().solve(&(x.transpose() * &y)).unwrap();
    let got = ridge_solve(&x, &y, lambda).unwrap();
    assert!((got - want).amax() < 1e-10);
}

#[test]
fn operator_eigenvalues_and_limits() {
    let s = small_spec();
    let gamma = 0.7;
    let m = denoise_operator(&s, gamma).unwrap();
    let mut got: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    got.sort_by(|a, b| b.total_cmp(a));
    for (g, l) in got.iter().zip(&s.eigenvalues) {
        assert!((g - l / (l + gamma)).abs() < 1e-10);
    }
    let sigma = s.covariance();
    assert!((&m * &sigma - &sigma * &m).amax() < 1e-10);

    let id = SpectrumModel {
        eigenvalues: vec![1.0; 5],
        eigenvectors: DMatrix::identity(5, 5),
    };
    let half = denoise_operator(&id, 1.0).unwrap();
    assert!((half - DMatrix::identity(5, 5) * 0.5).amax() < 1e-15);

    let near_id = denoise_operator(&s, 1e-12).unwrap();
    assert!((near_id - DMatrix::identity(16, 16)).norm() < 1e-9);
    let near_zero = denoise_operator(&s, 1e12).unwrap();
    assert!(near_zero.norm() < 1e-9);
    assert!(denoise_operator(&s, 0.0).is_err());
}

#[test]
fn pretrained_ridge_special_cases() {
    let s = small_spec();
    let mut rng = GaussianRng::new(13);
    let p = sample_problem(&s, 3, 40, 0.3, default_radius(&s), &mut rng).unwrap();
    let w1 = ridge_solve(&p.x, &p.y, 0.1).unwrap();
    let w2 = pretrained_ridge_solve(&p.x, &p.y, 0.1, &DMatrix::identity(16, 16)).unwrap();
    assert_eq!(w1, w2);
    let w0 = pretrained_ridge_solve(&p.x, &p.y, 0.1, &DMatrix::zeros(16, 16)).unwrap();
    assert!(w0.amax() == 0.0);

    let m = denoise_operator(&s, 0.5).unwrap();
    let transformed = DMatrix::from_fn(40, 16, |i, j| (0..16).map(|k| p.x[(i, k)] * m[(j, k)]).sum());
    let oracle = ridge_solve(&transformed, &p.y, 0.1).unwrap();
    let w = pretrained_ridge_solve(&p.x, &p.y, 0.1, &m).unwrap();
    assert!((w - oracle).amax() < 1e-10);
}

#[test]
fn literal_pretrained_weights_converge_to_inverse_filtered_target() {
    // with labels y = w*ᵀx, ridge on M*x targets M*⁻¹w*, not w*
    let s = small_spec();
    let gamma = s.median_eigenvalue();
    let m = denoise_operator(&s, gamma).unwrap();
    let mut rng = GaussianRng::new(14);
    let p = sample_problem(&s, 3, 20_000, 0.0, default_radius(&s), &mut rng).unwrap();
    let w2 = pretrained_ridge_solve(&p.x, &p.y, 1e-10, &m).unwrap();
    let target = m.clone().lu().solve(&p.w_star).unwrap();
    assert!((&w2 - &target).norm() < 1e-5);
    assert!((&m * &w2 - &p.w_star).norm() < 1e-5);
    assert!((&w2 - &p.w_star).norm() > 0.05);
}

#[test]
fn bounds_vanish_in_the_limit() {
    let s = small_spec();
    let b = bounds(
        &s,
        &BoundInputs {
            n: usize::MAX / 2,
            k: 3,
            scale: 2.0,
            radius: default_radius(&s),
            lambda: 1e-15,
            gamma: 1.0,
            sigma: 0.5,
            delta: 0.05,
            w_norm: 1.0,
        },
    );
    assert!(b.without < 1e-8 && b.power_law < 1e-8);
    assert!(b.regime_without && b.regime_with);
}

#[test]
fn pretrained_shrinkage_is_never_smaller() {
    // λ_K²/(2(λ_K+γ)) ≤ λ_K/2, so the pre-trained first term is the larger
    // one for every γ > 0; they agree as γ → 0
    for &lk in &[0.01, 0.3, 1.0, 7.0, 100.0] {
        for &lambda in &[1e-4, 0.01, 0.125, 1.0] {
            for &gamma in &[1e-9, 1e-3, 0.1, 1.0, 10.0] {
                let a = shrinkage_without(lambda, lk);
                let b = shrinkage_with(lambda, lk, gamma);
                assert!(b >= a);
                if gamma < 1e-6 {
                    assert!((a - b).abs() < 1e-6 * a.max(1e-12) + 1e-12);
                }
            }
        }
    }
}

#[test]
fn filtered_trace_partial_sums() {
    // tr(M*ΣM*) = Σ R⁶k^{-3/2}/(R²/√k+γ)² is bounded by R⁶/γ² · Σk^{-3/2}
    // and by tr(Σ). The constant-2 version fails once Σk^{-3/2} > 2 (d ≥ 11).
    for &d in &[2usize, 10, 11, 100, 1000, 10_000] {
        for &r in &[0.5f64, 1.0, 3.0] {
            for &gamma in &[0.1, 1.0, 10.0] {
                let eig: Vec<f64> = (1..=d).map(|k| r * r / (k as f64).sqrt()).collect();
                let spec = SpectrumModel {
                    eigenvalues: eig.clone(),
                    eigenvectors: DMatrix::zeros(0, 0),
                };
                let t = filtered_trace(&spec, gamma);
                let zeta: f64 = (1..=d).map(|k| (k as f64).powf(-1.5)).sum();
                assert!(t <= r.powi(6) / (gamma * gamma) * zeta * (1.0 + 1e-12));
                assert!(t <= eig.iter().sum::<f64>());
            }
        }
        let zeta: f64 = (1..=d).map(|k| (k as f64).powf(-1.5)).sum();
        assert_eq!(zeta <= 2.0, d <= 10, "{d}");
    }
}

#[test]
fn high_pass_subspace_energy() {
    let s = power_law_spectrum(64, 10.0, 5).unwrap();
    let gamma = s.median_eigenvalue() * 20.0;
    let m = denoise_operator(&s, gamma).unwrap();
    let low: Vec<usize> = (0..64).filter(|&i| s.eigenvalues[i] < gamma / 9.0).collect();
    assert!(!low.is_empty());
    let mut frac = 0.0;
    let trials = 20;
    for t in 0..trials {
        let mut rng = GaussianRng::new(100 + t);
        let p = sample_problem(&s, 4, 64, 0.5, default_radius(&s), &mut rng).unwrap();
        let w2 = pretrained_ridge_solve(&p.x, &p.y, 1.0 / 8.0, &m).unwrap();
        let coords = s.eigenvectors.tr_mul(&w2);
        let e: f64 = low.iter().map(|&i| coords[i] * coords[i]).sum();
        frac += e / w2.norm_squared();
    }
    assert!(frac / (trials as f64) < 0.1);
}

#[test]
fn noiseless_limit_is_flagged() {
    let mut cfg = TheoryConfig::new(16, 2, 4000, 3, 1);
    cfg.sigma = 0.0;
    cfg.lambda = Some(1e-12);
    cfg.gamma = Some(1e-9);
    let r = run_experiment(&cfg).unwrap();
    assert!(r.trials.iter().all(|t| t.err_plain < 1e-6 && t.err_effective < 1e-6));
    assert!(r.uninformative);
}

#[test]
fn config_checks() {
    let mut c = TheoryConfig::new(16, 5, 10, 1, 0);
    assert!(c.validate().is_err());
    c.k = 4;
    assert!(c.validate().is_ok());
    c.gamma = Some(-1.0);
    assert!(c.validate().is_err());
}

#[test]
fn slope_fit() {
    let x = [1.0, 2.0, 3.0];
    let y = [2.0, 1.0, 0.0];
    assert_eq!(fit_slope(&x, &y), Some(-1.0));
    assert_eq!(fit_slope(&[1.0], &[1.0]), None);
}
