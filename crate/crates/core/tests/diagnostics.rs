use gibbs_rb::diagnostics::{bound_suite, dictionary, h_proxy, EmpiricalCdf, Reference, AUDIT_SLACK};
use gibbs_rb::forward::Adv1dConfig;
use gibbs_rb::rng::{stream, Phase};
use gibbs_rb::smc::init_particles;
use gibbs_rb::{assemble, run_smc, ErrorThreshold, ParameterDomain, Preset, SmcConfig};
use rand::Rng;

#[test]
fn ks_of_uniform_draws_is_within_dkw() {
    // P(KS > ε) ≤ 2 exp(−2 n ε²); ε = 0.06 at n = 1000 gives under 1e-3
    for seed in 0..20 {
        let mut rng = stream(seed, Phase::Data, 0, 0);
        let xs: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let ks = EmpiricalCdf::unweighted(&xs).ks_to(|x| x.clamp(0.0, 1.0));
        assert!(ks <= 0.06, "seed {seed}: {ks}");
    }
}

#[test]
fn ks_between_sets_is_symmetric() {
    let a = EmpiricalCdf::unweighted(&[0.1, 0.4, 0.8]);
    let b = EmpiricalCdf::new(&[0.2, 0.5], &[0.3, 0.7]);
    assert_eq!(a.ks_between(&b), b.ks_between(&a));
    assert_eq!(a.ks_between(&a), 0.0);
}

#[test]
fn prior_draws_have_root_m_h_proxy() {
    let domain = ParameterDomain::uniform_unit(2);
    assert_eq!(dictionary(&domain).len(), 2 * 34);
    for m in [100usize, 400] {
        let runs: Vec<_> = (0..20)
            .map(|s| init_particles(&domain, m, 100 + s).unwrap())
            .collect();
        let h = h_proxy(&runs, Reference::Prior(&domain), &domain).unwrap();
        assert!(h <= 1.0 / (m as f64).sqrt(), "m {m}: {h}");
    }
}

#[test]
fn exact_mode_passes_every_bound_check() {
    let model = assemble(&Preset::Adv1d(Adv1dConfig::default())).unwrap();
    let obs = model.gen_data(&model.truth, 0.1, 1, 11).unwrap();
    let cfg = SmcConfig {
        total_weight: 16.7,
        exact_loss: true,
        ..Default::default()
    };
    let report = bound_suite(&run_smc(&model, &obs, &cfg).unwrap(), AUDIT_SLACK);
    assert!(report.all_ok());
}

#[test]
fn surrogate_run_passes_every_bound_check() {
    let model = assemble(&Preset::Adv1d(Adv1dConfig::default())).unwrap();
    let obs = model.gen_data(&model.truth, 0.1, 1, 11).unwrap();
    let cfg = SmcConfig {
        total_weight: 16.7,
        threshold: ErrorThreshold::Fixed { value: 1e-3 },
        audit_fraction: 0.5,
        ..Default::default()
    };
    let run = run_smc(&model, &obs, &cfg).unwrap();
    let report = bound_suite(&run, AUDIT_SLACK);
    assert!(report.surrogate_ok && report.kl_ok, "{report:?}");
    assert!(report
        .iterations
        .iter()
        .all(|c| c.audited_max.unwrap_or(0.0) <= 1.1e-3));
}
