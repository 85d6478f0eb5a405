//! Shared fixtures for the benchmarks under `benches/`.

use dtgmm::protocol::{check_payloads, CopulaTilt, TiltProvider};
use dtgmm::{fit_reduced_model, site_export, FitConfig, MomentBlock, MomentSystem, SiteFit, SitePayload, StudySample};
use dtgmm_sim::setting::{main_spec, reduced_spec};
use dtgmm_sim::{generate_replicate, MethodConfig, SimSetting, SiteData};

/// One desk-scale replicate of the given setting.
pub fn replicate(setting: u8, seed: u64) -> Vec<SiteData> {
    let s = SimSetting::standard(setting, 1000, 500).expect("standard setting");
    generate_replicate(&s, seed)
}

/// Payloads of the two external sites.
pub fn payloads(sites: &[SiteData], cfg: &MethodConfig) -> Vec<SitePayload> {
    sites[1..]
        .iter()
        .enumerate()
        .map(|(j, s)| site_export(&s.site_id, &s.study, &s.reference, &reduced_spec(j + 1), &cfg.grid, &cfg.fit).expect("export"))
        .collect()
}

/// The tilted moment system the lead site assembles, with every site's fit.
pub fn lead_system(sites: &[SiteData], cfg: &MethodConfig) -> (MomentSystem, Vec<SiteFit>) {
    let main = main_spec();
    let lead_spec = reduced_spec(0);
    let externals = check_payloads(&sites[0].site_id, &lead_spec, &payloads(sites, cfg), &main).expect("consistent payloads");
    let lead = &sites[0];
    let study = StudySample::new(lead.study.covariates.clone(), lead.study.y.clone()).expect("study");
    let lead_fit = fit_reduced_model(&study, &lead_spec, &FitConfig::default()).expect("lead fit");
    let reference = lead.reference.select(&main.covariate_names).expect("reference columns");
    let tilt = CopulaTilt {
        grid: cfg.grid.clone(),
        ..CopulaTilt::default()
    };
    let (ratios, _) = tilt.ratios(&reference, &externals).expect("ratios");
    let mut blocks = vec![MomentBlock {
        site_id: lead.site_id.clone(),
        reduced: lead_spec,
        theta: lead_fit.theta_hat.clone(),
        ratios: None,
    }];
    let mut fits = vec![lead_fit];
    for (p, r) in externals.iter().zip(ratios) {
        blocks.push(MomentBlock {
            site_id: p.site_id.clone(),
            reduced: p.reduced_spec.clone(),
            theta: p.fit.theta_hat.clone(),
            ratios: r,
        });
        fits.push(p.fit.clone());
    }
    (MomentSystem::new(main, &reference, blocks).expect("moment system"), fits)
}
