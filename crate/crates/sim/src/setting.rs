//! The four covariate-distribution settings and their data generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use dtgmm::glm::expit;
use dtgmm::{copula, Family, ModelSpec, ReducedModelSpec, StudySample, Table};

pub const COVARIATES: [&str; 3] = ["X1", "X2", "X3"];
pub const SITE_IDS: [&str; 3] = ["site1", "site2", "site3"];
pub const BETA_STAR: [f64; 4] = [-3.0, 1.0, 1.0, 1.0];

/// Covariates observed in each site's study sample.
pub fn site_mask(site: usize) -> &'static [&'static str] {
    match site {
        0 => &["X1", "X2"],
        1 => &["X1", "X3"],
        _ => &["X2", "X3"],
    }
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

pub fn main_spec() -> ModelSpec {
    ModelSpec::new(Family::Logistic, names(&COVARIATES), true).expect("valid main model")
}

pub fn reduced_spec(site: usize) -> ReducedModelSpec {
    ReducedModelSpec::new(Family::Logistic, names(site_mask(site)), true).expect("valid reduced model")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub a: f64,
    pub b: f64,
}

const fn bp(a: f64, b: f64) -> BetaParams {
    BetaParams { a, b }
}

impl BetaParams {
    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }
}

/// Covariate law at one site: `X1 ~ Bernoulli(p_x1)`, and given `X1 = l`,
/// `(X2, X3)` has Beta marginals `x2[l]`, `x3[l]` joined by a Clayton copula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiteDistribution {
    pub p_x1: f64,
    pub x2: [BetaParams; 2],
    pub x3: [BetaParams; 2],
    pub alpha: f64,
}

impl SiteDistribution {
    pub fn validate(&self) -> bool {
        let betas = self.x2.iter().chain(&self.x3).all(|b| b.a > 0.0 && b.b > 0.0);
        betas && self.p_x1 > 0.0 && self.p_x1 < 1.0 && self.alpha > 0.0
    }

    /// Draws `n` covariate rows `(X1, X2, X3)`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<[f64; 3]> {
        let beta = |p: BetaParams| Beta::new(p.a, p.b).expect("positive Beta parameters");
        let x2 = [beta(self.x2[0]), beta(self.x2[1])];
        let x3 = [beta(self.x3[0]), beta(self.x3[1])];
        let u = copula::sample_clayton(2, self.alpha, n, rng);
        u.into_iter()
            .map(|uv| {
                let level = usize::from(rng.random::<f64>() < self.p_x1);
                [level as f64, x2[level].inverse_cdf(uv[0]), x3[level].inverse_cdf(uv[1])]
            })
            .collect()
    }
}

const HOMOGENEOUS: SiteDistribution = SiteDistribution {
    p_x1: 0.3,
    x2: [bp(0.2, 0.8), bp(0.5, 0.5)],
    x3: [bp(2.0, 2.0), bp(5.0, 2.0)],
    alpha: 1.0,
};

const SHIFTED_JOINT: [SiteDistribution; 3] = [
    HOMOGENEOUS,
    SiteDistribution {
        p_x1: 0.3,
        x2: [bp(1.0, 2.0), bp(2.0, 2.0)],
        x3: [bp(0.2, 0.8), bp(1.0, 2.0)],
        alpha: 2.0,
    },
    SiteDistribution {
        p_x1: 0.3,
        x2: [bp(5.0, 2.0), bp(2.0, 5.0)],
        x3: [bp(2.0, 5.0), bp(0.5, 0.5)],
        alpha: 3.0,
    },
];

const SHIFTED_X1: [f64; 3] = [0.2, 0.5, 0.8];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSetting {
    pub id: u8,
    pub sites: Vec<SiteDistribution>,
    pub beta_star: Vec<f64>,
    pub n_study: Vec<usize>,
    pub n_ref: Vec<usize>,
}

impl SimSetting {
    /// Setting 1 is homogeneous, 2 shifts `P(X1 = 1)`, 3 shifts the
    /// `(X2, X3)` law within `X1` levels, 4 shifts both.
    pub fn standard(id: u8, n_study: usize, n_ref: usize) -> Option<Self> {
        let sites: Vec<SiteDistribution> = match id {
            1 => vec![HOMOGENEOUS; 3],
            2 => SHIFTED_X1
                .iter()
                .map(|&p| SiteDistribution { p_x1: p, ..HOMOGENEOUS })
                .collect(),
            3 => SHIFTED_JOINT.to_vec(),
            4 => SHIFTED_JOINT
                .iter()
                .zip(SHIFTED_X1)
                .map(|(d, p)| SiteDistribution { p_x1: p, ..*d })
                .collect(),
            _ => return None,
        };
        Some(Self {
            id,
            sites,
            beta_star: BETA_STAR.to_vec(),
            n_study: vec![n_study; 3],
            n_ref: vec![n_ref; 3],
        })
    }

    pub fn validate(&self) -> bool {
        self.sites.len() == 3
            && self.n_study.len() == 3
            && self.n_ref.len() == 3
            && self.beta_star.len() == 4
            && self.sites.iter().all(SiteDistribution::validate)
    }
}

/// One site's local data: the study sample keeps only the site's observed
/// covariates, the reference sample keeps all three.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteData {
    pub site_id: String,
    pub study: StudySample,
    pub reference: Table,
}

fn to_table(cols: &[&str], rows: &[[f64; 3]], keep: &[usize]) -> Table {
    let data: Vec<f64> = rows.iter().flat_map(|r| keep.iter().map(|&k| r[k])).collect();
    Table::from_row_major(names(cols), data).expect("generated table shape")
}

/// Study and reference samples for `site` from two independent streams seeded by `seed`.
pub fn generate_site_data(setting: &SimSetting, site: usize, seed: u64) -> SiteData {
    let dist = &setting.sites[site];
    let mut rng = ChaCha8Rng::seed_from_u64(dtgmm::child_seed(seed, &[0]));
    let x = dist.sample(setting.n_study[site], &mut rng);
    let y: Vec<f64> = x
        .iter()
        .map(|r| {
            let b = &setting.beta_star;
            let eta = b[0] + b[1] * r[0] + b[2] * r[1] + b[3] * r[2];
            f64::from(u8::from(rng.random::<f64>() < expit(eta)))
        })
        .collect();
    let mask = site_mask(site);
    let keep: Vec<usize> = mask
        .iter()
        .map(|m| COVARIATES.iter().position(|c| c == m).expect("mask within covariates"))
        .collect();
    let study = StudySample::new(to_table(mask, &x, &keep), y).expect("generated study shape");

    let mut rng = ChaCha8Rng::seed_from_u64(dtgmm::child_seed(seed, &[1]));
    let reference = to_table(&COVARIATES, &dist.sample(setting.n_ref[site], &mut rng), &[0, 1, 2]);
    SiteData {
        site_id: SITE_IDS[site].to_string(),
        study,
        reference,
    }
}

/// All three sites of one replicate.
pub fn generate_replicate(setting: &SimSetting, seed: u64) -> Vec<SiteData> {
    (0..3)
        .map(|j| generate_site_data(setting, j, dtgmm::child_seed(seed, &[j as u64])))
        .collect()
}
