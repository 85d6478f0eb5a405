mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use dtgmm::gmm::{estimate_gamma, estimate_omega, minimize};
use dtgmm::{confidence_intervals, solve, GmmConfig, MomentBlock, MomentConditions, MomentSystem};

fn tight() -> GmmConfig {
    GmmConfig {
        grad_tol: 1e-14,
        step_tol: 1e-15,
        ..GmmConfig::default()
    }
}

fn start(system: &MomentSystem) -> Vec<f64> {
    let b = &system.blocks()[0];
    dtgmm::moment::initial_beta(system.main(), &b.reduced, &b.theta)
}

#[test]
fn weight_scaling_leaves_estimate_unchanged() {
    let f = fixture(11, 500, Some(|r: &[f64]| 0.5 + r[2]));
    let w = solve(&f.system, &f.fits, &GmmConfig::default()).unwrap().weight;
    let b0 = start(&f.system);
    let base = minimize(&f.system, &w, &b0, &tight()).unwrap().beta;
    for c in [1e-3, 0.37, 250.0] {
        let scaled = minimize(&f.system, &(&w * c), &b0, &tight()).unwrap().beta;
        for (a, b) in base.iter().zip(&scaled) {
            assert!((a - b).abs() < 1e-10, "c={c}: {a} vs {b}");
        }
    }
}

#[test]
fn permuting_blocks_with_weight_leaves_estimate_unchanged() {
    let f = fixture(12, 500, Some(|r: &[f64]| 0.5 + r[1] + r[0]));
    let w = solve(&f.system, &f.fits, &GmmConfig::default()).unwrap().weight;
    let b0 = start(&f.system);
    let base = minimize(&f.system, &w, &b0, &tight()).unwrap().beta;

    // Swap the two external blocks; the lead block has to stay first.
    let mut blocks = f.system.blocks().to_vec();
    blocks.swap(1, 2);
    let swapped = MomentSystem::new(main_spec(), f.system.lead_ref(), blocks).unwrap();
    let old: Vec<usize> = [0, 2, 1].iter().flat_map(|&j| f.system.block_range(j)).collect();
    let wp = DMatrix::from_fn(w.nrows(), w.ncols(), |i, k| w[(old[i], old[k])]);
    let permuted = minimize(&swapped, &wp, &b0, &tight()).unwrap().beta;
    for (a, b) in base.iter().zip(&permuted) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn unit_ratios_reproduce_untilted_fit() {
    let plain = fixture(13, 400, None);
    let ones = fixture(13, 400, Some(|_: &[f64]| 1.0));
    let a = solve(&plain.system, &plain.fits, &GmmConfig::default()).unwrap();
    let b = solve(&ones.system, &ones.fits, &GmmConfig::default()).unwrap();
    for (x, y) in a.beta_hat.iter().zip(&b.beta_hat) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn single_reference_point_gives_rank_one_omega() {
    let f = fixture(14, 50, Some(|r: &[f64]| 0.5 + r[2]));
    let one = f.system.lead_ref().take_rows(&[7]);
    let blocks: Vec<MomentBlock> = f
        .system
        .blocks()
        .iter()
        .map(|b| MomentBlock {
            ratios: b.ratios.as_ref().map(|r| vec![r[7]]),
            ..b.clone()
        })
        .collect();
    let system = MomentSystem::new(main_spec(), &one, blocks).unwrap();
    let omega = estimate_omega(&system, &BETA);
    let g = DVector::from_vec(system.stacked_g(0, &BETA));
    assert!((&omega - &g * g.transpose()).amax() < 1e-15);
    let eig = omega.symmetric_eigen().eigenvalues;
    let big = eig.iter().filter(|&&e| e.abs() > 1e-12 * eig.amax()).count();
    assert!(big <= 1);
}

#[test]
fn gamma_is_block_diagonal_and_vanishes_at_zero_scale() {
    let f = fixture(15, 300, Some(|r: &[f64]| 0.5 + r[2]));
    let gamma = estimate_gamma(&f.system, &f.fits, None).unwrap();
    for j in 0..3 {
        for k in 0..3 {
            let (rj, rk) = (f.system.block_range(j), f.system.block_range(k));
            let block = gamma.view((rj.start, rk.start), (rj.len(), rk.len()));
            if j == k {
                assert!(block.amax() > 0.0);
                assert!(block.symmetric_eigen().eigenvalues.min() >= -1e-12);
            } else {
                assert_eq!(block.amax(), 0.0);
            }
        }
    }
    let zero = estimate_gamma(&f.system, &f.fits, Some(&[0.0; 3])).unwrap();
    assert_eq!(zero.amax(), 0.0);

    // Without Gamma the covariance takes the first-stage-free form.
    let cfg = GmmConfig {
        gamma_scale: Some(vec![0.0; 3]),
        ..GmmConfig::default()
    };
    let r = solve(&f.system, &f.fits, &cfg).unwrap();
    let s_inv = (&r.omega_hat + DMatrix::identity(r.omega_hat.nrows(), r.omega_hat.ncols()) * cfg.ridge)
        .try_inverse()
        .unwrap();
    let reduced = (r.a_hat.transpose() * s_inv * &r.a_hat).try_inverse().unwrap() / f.system.n_ref() as f64;
    let rel = (&r.covariance - &reduced).amax() / reduced.amax();
    assert!(rel < 1e-6, "{rel}");
}

#[test]
fn confidence_interval_structure() {
    let beta = [1.0, -0.5];
    let cov = DMatrix::from_row_slice(2, 2, &[0.0256, 0.001, 0.001, 0.09]);
    let ci = confidence_intervals(&beta, &cov, 0.95);
    assert!((ci[0].0 - 0.686).abs() < 5e-4 && (ci[0].1 - 1.314).abs() < 5e-4);
    for (b, (lo, hi)) in beta.iter().zip(confidence_intervals(&beta, &cov, 1e-12)) {
        assert!((hi - lo).abs() < 1e-9 && (lo - b).abs() < 1e-9);
    }
    let wide = confidence_intervals(&beta, &(&cov * 4.0), 0.95);
    for k in 0..2 {
        let ratio = (wide[k].1 - wide[k].0) / (ci[k].1 - ci[k].0);
        assert!((ratio - 2.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn solve_converges_with_sound_outputs(seed in any::<u64>()) {
        let f = fixture(seed, 300, Some(|r: &[f64]| 0.6 + 0.8 * r[1]));
        let r = solve(&f.system, &f.fits, &GmmConfig::default()).unwrap();
        let again = minimize(&f.system, &r.weight, &start(&f.system), &GmmConfig::default()).unwrap();
        prop_assert!(again.trace.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(r.objective_trace.iter().all(|&v| v >= 0.0));
        let grad = r.a_hat.transpose() * &r.weight * f.system.g_bar(&r.beta_hat) * 2.0;
        prop_assert!(grad.amax() < 1e-6, "{}", grad.amax());
        prop_assert!((&r.covariance - r.covariance.transpose()).amax() == 0.0);
        prop_assert!(r.covariance.clone().symmetric_eigen().eigenvalues.min() >= -1e-14);
        let omega_eig = r.omega_hat.clone().symmetric_eigen().eigenvalues;
        prop_assert!(omega_eig.min() >= -1e-12 * omega_eig.amax());
        prop_assert!(r.diagnostics.sandwich_identity_gap < 1e-8);
    }
}
