#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dtgmm::glm::expit;
use dtgmm::{fit_reduced_model, Family, FitConfig, ModelSpec, MomentBlock, MomentSystem, ReducedModelSpec, SiteFit, StudySample, Table};

pub const BETA: [f64; 4] = [-1.0, 1.0, 1.0, 1.0];
pub const MASKS: [[&str; 2]; 3] = [["X1", "X2"], ["X1", "X3"], ["X2", "X3"]];

pub fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

pub fn main_spec() -> ModelSpec {
    ModelSpec::new(Family::Logistic, names(&["X1", "X2", "X3"]), true).unwrap()
}

pub fn reduced(mask: &[&str]) -> ReducedModelSpec {
    ReducedModelSpec::new(Family::Logistic, names(mask), true).unwrap()
}

/// Binary X1 and uniform X2, X3 with X3 shifted by `shift`.
pub fn covariates(n: usize, shift: f64, rng: &mut ChaCha8Rng) -> Table {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| vec![f64::from(u8::from(rng.random::<f64>() < 0.3)), rng.random(), rng.random::<f64>() + shift])
        .collect();
    Table::new(names(&["X1", "X2", "X3"]), &rows).unwrap()
}

pub fn study(n: usize, shift: f64, rng: &mut ChaCha8Rng) -> StudySample {
    let x = covariates(n, shift, rng);
    let y = x
        .rows()
        .map(|r| {
            let eta = BETA[0] + BETA[1] * r[0] + BETA[2] * r[1] + BETA[3] * r[2];
            f64::from(u8::from(rng.random::<f64>() < expit(eta)))
        })
        .collect();
    StudySample::new(x, y).unwrap()
}

pub struct Fixture {
    pub system: MomentSystem,
    pub fits: Vec<SiteFit>,
}

/// Three sites with the standard masks; external blocks carry the given
/// ratio function of the reference row (`None` leaves them untilted).
pub fn fixture(seed: u64, n_ref: usize, ratio: Option<fn(&[f64]) -> f64>) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lead_ref = covariates(n_ref, 0.0, &mut rng);
    let mut blocks = Vec::new();
    let mut fits = Vec::new();
    for (j, mask) in MASKS.iter().enumerate() {
        let spec = reduced(mask);
        let s = study(800, 0.0, &mut rng);
        let s = StudySample::new(s.covariates.select(&spec.covariates).unwrap(), s.y).unwrap();
        let fit = fit_reduced_model(&s, &spec, &FitConfig::default()).unwrap();
        let ratios = (j > 0).then_some(ratio).flatten().map(|f| lead_ref.rows().map(f).collect());
        blocks.push(MomentBlock {
            site_id: format!("site{}", j + 1),
            reduced: spec,
            theta: fit.theta_hat.clone(),
            ratios,
        });
        fits.push(fit);
    }
    Fixture {
        system: MomentSystem::new(main_spec(), &lead_ref, blocks).unwrap(),
        fits,
    }
}
