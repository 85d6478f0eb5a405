use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dtgmm::glm::{expit, reduced_score};
use dtgmm::{fit_reduced_model, Family, FitConfig, ReducedModelSpec, StudySample, Table};

fn sample(n: usize, theta: &[f64], family: Family, seed: u64) -> StudySample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-2.0..2.0)]).collect();
    let y = x
        .iter()
        .map(|r| {
            let eta = theta[0] + theta[1] * r[0];
            match family {
                Family::Logistic => f64::from(u8::from(rng.random::<f64>() < expit(eta))),
                Family::Gaussian => eta + rng.random_range(-1.0..1.0),
            }
        })
        .collect();
    StudySample::new(Table::new(vec!["x".into()], &x).unwrap(), y).unwrap()
}

#[test]
fn large_sample_logistic_fit_and_sandwich() {
    let theta = [-1.0, 0.7];
    let data = sample(50_000, &theta, Family::Logistic, 1);
    let spec = ReducedModelSpec::new(Family::Logistic, vec!["x".into()], true).unwrap();
    let fit = fit_reduced_model(&data, &spec, &FitConfig::default()).unwrap();
    for k in 0..2 {
        assert!((fit.theta_hat[k] - theta[k]).abs() < 0.05, "{:?}", fit.theta_hat);
    }

    // Inverse Fisher information at the estimate, built independently.
    let mut info = DMatrix::<f64>::zeros(2, 2);
    for r in data.covariates.rows() {
        let z = [1.0, r[0]];
        let p = expit(fit.theta_hat[0] + fit.theta_hat[1] * r[0]);
        for a in 0..2 {
            for b in 0..2 {
                info[(a, b)] += p * (1.0 - p) * z[a] * z[b];
            }
        }
    }
    let fisher = (info / data.len() as f64).try_inverse().unwrap();
    for k in 0..2 {
        let (s, f) = (fit.sigma_hat[(k, k)].sqrt(), fisher[(k, k)].sqrt());
        assert!((s / f - 1.0).abs() < 0.10, "se {s} vs {f}");
    }
    let rel = (&fit.sigma_hat - &fisher).norm() / fisher.norm();
    assert!(rel < 0.1, "{rel}");
}

#[test]
fn gaussian_fit_is_least_squares() {
    let data = sample(300, &[0.4, -1.3], Family::Gaussian, 2);
    let spec = ReducedModelSpec::new(Family::Gaussian, vec!["x".into()], true).unwrap();
    let fit = fit_reduced_model(&data, &spec, &FitConfig::default()).unwrap();
    let n = data.len();
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { data.covariates.row(i)[0] });
    let y = DVector::from_vec(data.y.clone());
    let ols = (x.transpose() * &x).try_inverse().unwrap() * x.transpose() * y;
    for k in 0..2 {
        assert!((fit.theta_hat[k] - ols[k]).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fitted_score_vanishes_and_sigma_is_psd(seed in any::<u64>(), n in 80usize..400, t0 in -1.0f64..1.0, t1 in -1.0f64..1.0) {
        let data = sample(n, &[t0, t1], Family::Logistic, seed);
        let spec = ReducedModelSpec::new(Family::Logistic, vec!["x".into()], true).unwrap();
        let fit = fit_reduced_model(&data, &spec, &FitConfig::default()).unwrap();
        let mut score = [0.0; 2];
        for (r, y) in data.covariates.rows().zip(&data.y) {
            let s = reduced_score(*y, r, &fit.theta_hat, &spec).unwrap();
            score[0] += s[0];
            score[1] += s[1];
        }
        prop_assert!(score.iter().all(|s| (s / n as f64).abs() < 1e-8), "{score:?}");
        let sigma = &fit.sigma_hat;
        prop_assert_eq!(sigma[(0, 1)], sigma[(1, 0)]);
        let eig = sigma.clone().symmetric_eigen().eigenvalues;
        prop_assert!(eig.iter().all(|&e| e >= -1e-10));
    }
}
