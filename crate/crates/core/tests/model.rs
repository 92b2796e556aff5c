mod common;

use common::*;
use ltpdpm::basis::{BasisSet, SpatialBasis};
use ltpdpm::error::Error;
use ltpdpm::ingest::{time_to_year_week, CovariateDesign, CovariateSeries};
use ltpdpm::linalg::psd_factor;
use ltpdpm::model::*;
use ltpdpm::rng::substream;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, ContinuousCDF, StudentsT};
use statrs::function::gamma::ln_gamma;

fn random_orthonormal(rng: &mut ChaCha8Rng, n: usize, l: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, l, |_, _| rng.random::<f64>() - 0.5);
    m.qr().q().columns(0, l).into_owned()
}

fn random_spd(rng: &mut ChaCha8Rng, l: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(l, l, |_, _| rng.random::<f64>() - 0.5);
    &a * a.transpose() + DMatrix::identity(l, l) * 0.1
}

/// Dense multivariate t with dispersion ((a−2)/a)(HΦHᵀ + τ²I).
fn dense_t_logdensity(eps: &DVector<f64>, theta: &ClusterParams, h: &DMatrix<f64>) -> f64 {
    let n = eps.len();
    let a = theta.a();
    let sigma = (h * &theta.phi * h.transpose() + DMatrix::identity(n, n) * theta.tau2) * ((a - 2.0) / a);
    let chol = sigma.cholesky().unwrap();
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let q = eps.dot(&chol.solve(eps));
    let nf = n as f64;
    ln_gamma(0.5 * (a + nf)) - ln_gamma(0.5 * a) - 0.5 * nf * (a * std::f64::consts::PI).ln() - 0.5 * logdet
        - 0.5 * (a + nf) * (q / a).ln_1p()
}

fn dense_gaussian_logdensity(eps: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let chol = cov.clone().cholesky().unwrap();
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let n = eps.len() as f64;
    -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + logdet + eps.dot(&chol.solve(eps)))
}

#[test]
fn stick_breaking_examples() {
    let pi = stick_breaking(&[0.5, 0.5, 1.0]).unwrap();
    assert_eq!(pi, vec![0.5, 0.25, 0.25]);
    assert_eq!(stick_breaking(&[1.0]).unwrap(), vec![1.0]);
    assert_eq!(stick_breaking(&[0.0, 0.0, 1.0]).unwrap(), vec![0.0, 0.0, 1.0]);
    assert!(matches!(stick_breaking(&[]), Err(Error::Argument(_))));
    assert!(matches!(stick_breaking(&[1.2, 1.0]), Err(Error::Argument(_))));
    assert!(matches!(sticks_from_pi(&[0.5, -0.1, 0.6]), Err(Error::Argument(_))));
}

#[test]
fn df_grid_round_trips() {
    for d in DegreesOfFreedom::grid() {
        assert_eq!(DegreesOfFreedom::from_value(d.value()).unwrap(), d);
        assert_eq!(DegreesOfFreedom::grid_index(d.index()), d);
    }
    assert_eq!(DegreesOfFreedom::max().value(), 40.0);
    assert!(DegreesOfFreedom::from_value(40.1).is_err());
}

fn spatial_basis(rng: &mut ChaCha8Rng, n: usize, p_s: usize, l: usize) -> BasisSet {
    let cov = CovariateSeries::from_values((0..6).map(|i| (i as f64).powf(1.3)).collect()).unwrap();
    let x0 = CovariateDesign::new(&cov, 3).unwrap().x0();
    let x1 = ltpdpm::basis::seasonal_spline_matrix(WEEKS, 4).unwrap();
    let x2 = DMatrix::from_fn(n, p_s, |_, _| rng.random::<f64>());
    let h = random_orthonormal(rng, n, l);
    let zero = DMatrix::zeros(p_s, 4);
    BasisSet::assemble(
        x0,
        x1,
        x2,
        (0..p_s).collect(),
        SpatialBasis {
            h,
            delta: DVector::from_element(l, 1.0),
        },
        [zero.clone(), zero],
    )
    .unwrap()
}

fn random_coeffs(rng: &mut ChaCha8Rng, p_s: usize, p_t: usize) -> MeanCoefficients {
    let mut c = MeanCoefficients::zeros(p_s, p_t);
    for i in 0..2 {
        for j in 0..2 {
            c.beta[i][j] = DMatrix::from_fn(p_s, p_t, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        }
    }
    c
}

#[test]
fn mean_surface_matches_triple_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let basis = spatial_basis(&mut rng, 5, 9, 2);
    let cov = CovariateSeries::from_values((0..6).map(|i| (i as f64).powf(1.3)).collect()).unwrap();
    let design = CovariateDesign::new(&cov, 3).unwrap();
    let coeffs = random_coeffs(&mut rng, 9, 4);
    let blocks = [&basis.x2_1, &basis.x2_2];
    let whole = mean_matrix(&coeffs, &basis);
    for t in 1..=6 * WEEKS {
        let mu = mean_surface(&coeffs, &basis, &design, t).unwrap();
        let (t1, t2) = time_to_year_week(t, WEEKS);
        let x0 = design.row(t1).unwrap();
        for n in 0..5 {
            let mut naive = 0.0;
            for i in 0..2 {
                for (j, x2) in blocks.iter().enumerate() {
                    for s in 0..9 {
                        for k in 0..4 {
                            naive += x0[i] * x2[(n, s)] * coeffs.beta[i][j][(s, k)] * basis.x1[(t2 - 1, k)];
                        }
                    }
                }
            }
            assert!((mu[n] - naive).abs() < 1e-12, "t {t} site {n}");
            if t <= 3 * WEEKS {
                assert!((whole[(n, t - 1)] - naive).abs() < 1e-12);
            }
        }
    }
    assert!(mean_surface(&coeffs, &basis, &design, 0).is_err());
}

#[test]
fn mean_surface_is_linear_in_the_coefficients() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let basis = spatial_basis(&mut rng, 5, 9, 2);
    let cov = CovariateSeries::from_values((0..6).map(|i| (i as f64).powf(1.3)).collect()).unwrap();
    let design = CovariateDesign::new(&cov, 3).unwrap();
    let a = random_coeffs(&mut rng, 9, 4);
    let b = random_coeffs(&mut rng, 9, 4);
    let mut sum = a.clone();
    for i in 0..2 {
        for j in 0..2 {
            sum.beta[i][j] = &a.beta[i][j] * 2.0 - &b.beta[i][j] * 0.5;
        }
    }
    for t in [1, 7, 15, 24] {
        let lhs = mean_surface(&sum, &basis, &design, t).unwrap();
        let rhs = mean_surface(&a, &basis, &design, t).unwrap() * 2.0 - mean_surface(&b, &basis, &design, t).unwrap() * 0.5;
        assert!((lhs - rhs).abs().max() < 1e-12);
    }
}

#[test]
fn woodbury_density_matches_dense_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for case in 0..60 {
        let n = 2 + case % 40;
        let l = 1 + case % n.min(8);
        let h = random_orthonormal(&mut rng, n, l);
        let theta = cluster(random_spd(&mut rng, l), 0.05 + rng.random::<f64>(), [2.5, 4.0, 11.3, 40.0][case % 4]);
        let eps = DVector::from_fn(n, |_, _| rng.random::<f64>() * 4.0 - 2.0);
        let fast = lowrank_t_logdensity(&eps, &theta, &h).unwrap();
        let dense = dense_t_logdensity(&eps, &theta, &h);
        assert!((fast - dense).abs() < 1e-8 * dense.abs().max(1.0), "case {case}: {fast} vs {dense}");
    }
}

#[test]
fn single_site_density_is_a_scaled_t() {
    let h = DMatrix::from_element(1, 1, 1.0);
    for a in [2.5, 5.0, 17.2] {
        let theta = cluster(DMatrix::from_element(1, 1, 0.7), 0.3, a);
        let scale = ((a - 2.0) / a * 1.0f64).sqrt();
        let t = StudentsT::new(0.0, scale, a).unwrap();
        for x in [-3.0, -0.2, 0.0, 1.1, 8.0] {
            let ours = lowrank_t_logdensity(&DVector::from_element(1, x), &theta, &h).unwrap();
            assert!((ours - t.ln_pdf(x)).abs() < 1e-10);
        }
    }
}

#[test]
fn large_df_approaches_the_gaussian() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let n = 6;
    let h = random_orthonormal(&mut rng, n, 2);
    let phi = random_spd(&mut rng, 2);
    let cov = &h * &phi * h.transpose() + DMatrix::identity(n, n) * 0.4;
    let eps = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
    let gauss = dense_gaussian_logdensity(&eps, &cov);
    let gap = |a: f64| (lowrank_t_logdensity(&eps, &cluster(phi.clone(), 0.4, a), &h).unwrap() - gauss).abs();
    assert!(gap(40.0) < gap(10.0) && gap(10.0) < gap(3.0));
    // The log-density gap shrinks like 1/a.
    assert!(gap(40.0) < 0.35 * gap(10.0));
}

#[test]
fn mixture_density_reduces_and_collapses() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let h = random_orthonormal(&mut rng, 8, 3);
    let theta = cluster(random_spd(&mut rng, 3), 0.2, 4.5);
    let other = cluster(random_spd(&mut rng, 3), 0.9, 12.0);
    let eps = DVector::from_fn(8, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let single = lowrank_t_logdensity(&eps, &theta, &h).unwrap();
    let k1 = dpm_logdensity(&eps, std::slice::from_ref(&theta), &[1.0], &h).unwrap();
    assert!((k1 - single).abs() < 1e-12);
    let twins = dpm_logdensity(&eps, &[theta.clone(), theta.clone(), theta.clone()], &[0.2, 0.5, 0.3], &h).unwrap();
    assert!((twins - single).abs() < 1e-12);
    let dead = dpm_logdensity(&eps, &[theta.clone(), other.clone()], &[1.0, 0.0], &h).unwrap();
    assert!((dead - single).abs() < 1e-12);
    let mixed = dpm_logdensity(&eps, &[theta.clone(), other.clone()], &[0.3, 0.7], &h).unwrap();
    let direct = (0.3 * single.exp() + 0.7 * lowrank_t_logdensity(&eps, &other, &h).unwrap().exp()).ln();
    assert!((mixed - direct).abs() < 1e-12);
    assert!(dpm_logdensity(&eps, &[theta], &[0.5, 0.5], &h).is_err());
}

#[test]
fn mixture_density_survives_underflow() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let h = random_orthonormal(&mut rng, 40, 2);
    let a = cluster(DMatrix::identity(2, 2) * 0.01, 1e-4, 40.0);
    let b = cluster(DMatrix::identity(2, 2) * 0.02, 2e-4, 30.0);
    let eps = DVector::from_element(40, 1e8);
    let la = lowrank_t_logdensity(&eps, &a, &h).unwrap();
    let lb = lowrank_t_logdensity(&eps, &b, &h).unwrap();
    assert!(la.exp() == 0.0 && lb.exp() == 0.0);
    let mixed = dpm_logdensity(&eps, &[a, b], &[0.25, 0.75], &h).unwrap();
    let m = la.max(lb);
    let expect = m + (0.25 * (la - m).exp() + 0.75 * (lb - m).exp()).ln();
    assert!(mixed.is_finite());
    assert!((mixed - expect).abs() < 1e-9 * expect.abs());
}

#[test]
fn site_marginal_matches_t_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let h = random_orthonormal(&mut rng, 7, 2);
    let theta = cluster(random_spd(&mut rng, 2), 0.3, 3.7);
    let m = SiteMarginal::new(4, std::slice::from_ref(&theta), &[1.0], &h);
    let scale = site_scale2(&theta, &h, 4).sqrt();
    let hn = h.row(4);
    let direct = (1.7 / 3.7) * ((hn * &theta.phi * hn.transpose())[(0, 0)] + 0.3);
    assert!((scale * scale - direct).abs() < 1e-12);
    let t = StudentsT::new(0.0, scale, 3.7).unwrap();
    for x in [-20.0, -1.0, -0.1, 0.0, 0.4, 2.5, 60.0] {
        assert!((m.cdf(x) - t.cdf(x)).abs() < 1e-10);
        assert!((m.pdf(x) - t.pdf(x)).abs() < 1e-10);
        assert!((m.sf(x) - (1.0 - t.cdf(x))).abs() < 1e-10);
    }
}

#[test]
fn site_marginal_quantiles_invert_the_cdf() {
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let h = random_orthonormal(&mut rng, 5, 2);
    let clusters = vec![
        cluster(random_spd(&mut rng, 2), 0.2, 2.8),
        cluster(random_spd(&mut rng, 2), 0.5, 9.0),
        cluster(random_spd(&mut rng, 2), 1.0, 40.0),
    ];
    let pi = [0.2, 0.5, 0.3];
    for n in 0..5 {
        let m = SiteMarginal::new(n, &clusters, &pi, &h);
        for p in [1e-6, 0.01, 0.3, 0.5, 0.9, 0.999, 0.9999, 1.0 - 1e-7] {
            let q = m.quantile(p).unwrap();
            if p > 0.5 {
                assert!((m.sf(q) - (1.0 - p)).abs() < 1e-9 * (1.0 - p) + 1e-15, "p {p}");
            } else {
                assert!((m.cdf(q) - p).abs() < 1e-9 * p + 1e-15, "p {p}");
            }
            let sym = m.quantile(1.0 - p).unwrap();
            assert!((q + sym).abs() < 1e-8 * q.abs().max(1.0));
            assert!((marginal_mixture_quantile(n, p, &clusters, &pi, &h).unwrap() - q).abs() < 1e-12);
        }
        for x in [0.1, 1.0, 7.0] {
            assert!((m.cdf(-x) - m.sf(x)).abs() < 1e-14);
            assert!((marginal_mixture_cdf(n, x, &clusters, &pi, &h) - m.cdf(x)).abs() < 1e-15);
        }
        assert_eq!(m.cdf(0.0), 0.5);
    }
    let m = SiteMarginal::new(0, &clusters, &pi, &h);
    assert!(m.quantile(0.0).is_err() && m.quantile(1.0).is_err());
}

#[test]
fn site_marginal_density_integrates_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let h = random_orthonormal(&mut rng, 4, 1);
    let clusters = vec![cluster(DMatrix::from_element(1, 1, 2.0), 0.4, 2.6), cluster(DMatrix::from_element(1, 1, 0.5), 1.5, 20.0)];
    let m = SiteMarginal::new(2, &clusters, &[0.4, 0.6], &h);
    // x = tan θ maps the line to (−π/2, π/2); composite Simpson.
    let n = 200_000;
    let (lo, hi) = (-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2);
    let step = (hi - lo) / n as f64;
    let f = |th: f64| {
        let c = th.cos();
        if c == 0.0 {
            0.0
        } else {
            m.pdf(th.tan()) / (c * c)
        }
    };
    let mut total = f(lo) + f(hi);
    for i in 1..n {
        total += f(lo + step * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    total *= step / 3.0;
    assert!((total - 1.0).abs() < 1e-6, "{total}");
}

#[test]
fn chi_matches_its_t_form_and_orders_sensibly() {
    for (r, a) in [(0.3, 3.0), (0.8, 4.2), (-0.5, 2.5), (0.0, 40.0)] {
        let t = StudentsT::new(0.0, 1.0, a + 1.0).unwrap();
        let expect = 2.0 * (1.0 - t.cdf(((a + 1.0) * (1.0 - r) / (1.0 + r)).sqrt()));
        assert!((chi_from_correlation(r, a) - expect).abs() < 1e-12);
    }
    let mut last = 0.0;
    for i in 0..=20 {
        let r = -0.99 + 1.98 * i as f64 / 20.0;
        let c = chi_from_correlation(r, 3.0);
        assert!(c > last && c <= 1.0);
        last = c;
    }
    assert!(chi_from_correlation(0.5, 2.5) > chi_from_correlation(0.5, 10.0));
    assert!(chi_from_correlation(0.5, 40.0) < 1e-3);
}

#[test]
fn chi_uses_the_heaviest_live_component() {
    let h = DMatrix::from_row_slice(2, 1, &[0.6, 0.8]);
    let heavy = cluster(DMatrix::from_element(1, 1, 1.0), 0.1, 2.5);
    let light = cluster(DMatrix::from_element(1, 1, 3.0), 0.4, 15.0);
    let clusters = vec![light.clone(), heavy.clone()];
    assert_eq!(heaviest_component(&clusters, &[0.5, 0.5]), 1);
    assert_eq!(heaviest_component(&clusters, &[1.0, 0.0]), 0);
    let r = 0.48 / ((0.36 + 0.1f64) * (0.64 + 0.1)).sqrt();
    let chi = chi_coefficient(0, 1, &clusters, &[0.5, 0.5], &h).unwrap();
    assert!((chi - chi_from_correlation(r, 2.5)).abs() < 1e-14);
    assert!(chi_coefficient(1, 1, &clusters, &[0.5, 0.5], &h).is_err());
}

#[test]
fn simulated_residual_covariance_matches_the_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let h = random_orthonormal(&mut rng, 3, 2);
    let clusters = vec![cluster(random_spd(&mut rng, 2), 0.3, 9.0), cluster(random_spd(&mut rng, 2) * 2.0, 0.8, 12.0)];
    let pi = [0.4, 0.6];
    let factors: Vec<DMatrix<f64>> = clusters.iter().map(|c| psd_factor(&c.phi)).collect();
    let draws = 200_000;
    let mut s = DMatrix::zeros(3, 3);
    let mut sigma2_sum = 0.0;
    let mut counts = [0usize; 2];
    for i in 0..draws {
        let mut r = substream(31, 0xC0, i as u64);
        let k = sample_label(&mut r, &pi);
        counts[k] += 1;
        let (eps, s2, _) = draw_residual(&mut r, &clusters[k], &factors[k], &h);
        s += &eps * eps.transpose();
        sigma2_sum += s2;
    }
    s /= draws as f64;
    assert!((sigma2_sum / draws as f64 - 1.0).abs() < 0.01);
    assert!((counts[0] as f64 / draws as f64 - 0.4).abs() < 0.005);
    for a in 0..3 {
        for b in 0..3 {
            let m = model_covariance(a, b, &clusters, &pi, &h);
            let scale = (model_covariance(a, a, &clusters, &pi, &h) * model_covariance(b, b, &clusters, &pi, &h)).sqrt();
            assert!((s[(a, b)] - m).abs() < 0.03 * scale, "({a},{b}): {} vs {m}", s[(a, b)]);
        }
    }
}

#[test]
fn noise_free_generator_returns_the_mean() {
    let (basis, cov) = tiny_basis(flat_h(3), vec![1.0], 2);
    let design = CovariateDesign::new(&cov, 2).unwrap();
    let mut coeffs = MeanCoefficients::zeros(1, 4);
    coeffs.beta[0][0] = DMatrix::from_element(1, 4, 3.0);
    coeffs.beta[1][1] = DMatrix::from_row_slice(1, 4, &[1.0, -1.0, 2.0, 0.5]);
    let p = params(coeffs.clone(), vec![cluster(DMatrix::from_element(1, 1, 1e-20), 0.0, 10.0)], vec![1.0]);
    let coords = vec![(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)];
    let (data, latent) = generate_synthetic(&p, &basis, &design, &coords, 3 * WEEKS, 4).unwrap();
    for t in 1..=3 * WEEKS {
        let mu = mean_surface(&coeffs, &basis, &design, t).unwrap();
        for n in 0..3 {
            assert!((data.values()[(n, t - 1)] - mu[n]).abs() < 1e-8);
        }
        assert!(latent.sigma2[t - 1] > 0.0);
    }
    let (again, _) = generate_synthetic(&p, &basis, &design, &coords, 3 * WEEKS, 4).unwrap();
    assert_eq!(data.values(), again.values());
}

#[test]
fn generator_site_variance_matches_the_model() {
    let h = DMatrix::from_row_slice(2, 1, &[0.6, 0.8]);
    let (basis, cov) = tiny_basis(h.clone(), vec![1.0], 2);
    let design = CovariateDesign::new(&cov, 2).unwrap();
    let clusters = vec![cluster(DMatrix::from_element(1, 1, 2.0), 0.5, 8.0)];
    let p = params(MeanCoefficients::zeros(1, 4), clusters.clone(), vec![1.0]);
    let weeks = 120_000;
    let longer = ltpdpm::ingest::CovariateSeries::new(
        (0..weeks as i64 / WEEKS as i64).map(|i| 2000 + i).collect(),
        (1..=weeks / WEEKS).map(|v| v as f64).collect(),
    )
    .unwrap();
    let design_long = CovariateDesign::new(&longer, 2).unwrap();
    drop(design);
    let (data, latent) = generate_synthetic(&p, &basis, &design_long, &[(0.0, 0.0), (1.0, 1.0)], weeks, 9).unwrap();
    let mean_s2 = latent.sigma2.iter().sum::<f64>() / weeks as f64;
    assert!((mean_s2 - 1.0).abs() < 0.01);
    for n in 0..2 {
        let var = data.values().row(n).iter().map(|v| v * v).sum::<f64>() / weeks as f64;
        let m = model_covariance(n, n, &clusters, &[1.0], &h);
        assert!((var - m).abs() < 0.03 * m, "site {n}: {var} vs {m}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn sticks_reconstruct_weights_exactly(raw in prop::collection::vec(0.0f64..1.0, 1..12), zero_mask in any::<u16>()) {
        let mut pi: Vec<f64> = raw.iter().enumerate().map(|(i, x)| if zero_mask >> i & 1 == 1 { 0.0 } else { *x }).collect();
        let total: f64 = pi.iter().sum();
        prop_assume!(total > 0.0);
        pi.iter_mut().for_each(|p| *p /= total);
        let v = sticks_from_pi(&pi).unwrap();
        prop_assert_eq!(*v.last().unwrap(), 1.0);
        let back = stick_breaking(&v).unwrap();
        prop_assert_eq!(back.iter().sum::<f64>(), 1.0);
        for (a, b) in back.iter().zip(&pi).take(pi.len() - 1) {
            prop_assert!((a - b).abs() <= 4.0 * f64::EPSILON);
        }
    }

    #[test]
    fn stick_weights_are_a_distribution(v in prop::collection::vec(0.0f64..=1.0, 0..15)) {
        let mut v = v;
        v.push(1.0);
        let pi = stick_breaking(&v).unwrap();
        prop_assert!(pi.iter().all(|p| *p >= 0.0));
        prop_assert_eq!(pi.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn density_agrees_with_dense_form(seed in any::<u64>(), n in 2usize..20, l in 1usize..5, tenths in 21u16..=400) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = l.min(n);
        let h = random_orthonormal(&mut rng, n, l);
        let theta = ClusterParams {
            phi: random_spd(&mut rng, l),
            tau2: 0.01 + rng.random::<f64>(),
            df: DegreesOfFreedom::from_tenths(tenths).unwrap(),
        };
        let eps = DVector::from_fn(n, |_, _| rng.random::<f64>() * 6.0 - 3.0);
        let fast = lowrank_t_logdensity(&eps, &theta, &h).unwrap();
        let dense = dense_t_logdensity(&eps, &theta, &h);
        prop_assert!((fast - dense).abs() < 1e-8 * dense.abs().max(1.0));
    }
}
