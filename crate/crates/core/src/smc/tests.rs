use super::*;
use crate::forward::{assemble, Adv1dConfig, Preset};
use crate::gibbs::Moments;
use crate::prior::ParameterDomain;

fn adv1d(cells: usize) -> ForwardModel {
    assemble(&Preset::Adv1d(Adv1dConfig {
        cells,
        ..Default::default()
    }))
    .unwrap()
}

#[test]
fn adapt_step_accepts_whole_residual_for_flat_losses() {
    let cfg = SmcConfig::default();
    let w = vec![0.25; 4];
    let out = adapt_step(&w, &[1.0; 4], 7.0, 7.0, &cfg).unwrap();
    assert_eq!(out.delta_w, 7.0);
    assert_eq!(out.trials, 1);
    assert!((out.ess - 4.0).abs() < 1e-12);
}

#[test]
fn adapt_step_backtracks_until_ess_recovers() {
    let cfg = SmcConfig::default();
    let m = 10;
    let w = vec![0.1; m];
    let losses: Vec<f64> = (0..m).map(|i| i as f64).collect();
    let out = adapt_step(&w, &losses, 100.0, 100.0, &cfg).unwrap();
    assert!(out.ess > 5.0);
    assert!(!out.degenerate);
    // the previous (doubled) increment must have failed
    let prev = reweight_weights(&w, &losses, out.delta_w / cfg.backtrack).unwrap();
    assert!(ess(&prev) <= 5.0);
}

#[test]
fn adapt_step_flags_degeneracy_below_minimum_step() {
    let cfg = SmcConfig {
        min_step_fraction: 0.3,
        ..Default::default()
    };
    let w = vec![0.5, 0.5];
    let out = adapt_step(&w, &[0.0, 1e6], 1.0, 1.0, &cfg).unwrap();
    assert!(out.degenerate);
    assert!(out.delta_w < 0.3);
}

#[test]
fn systematic_resampling_preserves_counts_up_to_one() {
    let w = [0.1, 0.2, 0.3, 0.4];
    let mut rng = stream(1, Phase::Resample, 0, 0);
    let idx = resample_indices(&w, Resampling::Systematic, &mut rng).unwrap();
    for (k, wk) in w.iter().enumerate() {
        let c = idx.iter().filter(|&&i| i == k).count() as f64;
        assert!((c - 4.0 * wk).abs() < 1.0 + 1e-12);
    }
}

#[test]
fn mutation_rejects_out_of_support_without_evaluating() {
    let domain = ParameterDomain::uniform_unit(1);
    let moments = Moments {
        mean: vec![5.0],
        variance: vec![1e-6],
    };
    let out = mutate(
        &[vec![0.5]],
        &[0.0],
        |_: &[f64]| -> Result<f64> { panic!("loss evaluated outside the support") },
        &domain,
        &moments,
        1.0,
        0.0,
        5,
        0,
        0,
    );
    assert_eq!(out.accepted, 0);
    assert_eq!(out.points[0], vec![0.5]);
}

#[test]
fn proposal_density_is_symmetric_only_when_centred() {
    let m = Moments {
        mean: vec![0.0],
        variance: vec![1.0],
    };
    let a = ln_proposal_density(&[1.0], &[0.0], &m, 0.0);
    let b = ln_proposal_density(&[0.0], &[1.0], &m, 0.0);
    assert!((a - b - (-0.5)).abs() < 1e-14);
}

#[test]
fn zero_weight_returns_prior_particles() {
    let model = adv1d(16);
    let obs = model.gen_data(&[0.3, 0.6], 0.1, 1, 2).unwrap();
    let cfg = SmcConfig {
        total_weight: 0.0,
        particles: 20,
        seed: 9,
        ..Default::default()
    };
    let run = run_smc(&model, &obs, &cfg).unwrap();
    assert_eq!(run.iterations(), 0);
    assert_eq!(run.particles, init_particles(&model.domain, 20, 9).unwrap());
}

#[test]
fn run_reaches_total_weight_and_counts_solves() {
    let model = adv1d(32);
    let obs = model.gen_data(&[0.3, 0.6], 0.1, 1, 2).unwrap();
    let cfg = SmcConfig {
        total_weight: 5.0,
        particles: 40,
        seed: 4,
        threshold: ErrorThreshold::Fixed { value: 1e-3 },
        ..Default::default()
    };
    let run = run_smc(&model, &obs, &cfg).unwrap();
    let last = run.history.last().unwrap();
    assert_eq!(last.w_end, 5.0);
    let s = run.surrogate.as_ref().unwrap();
    assert_eq!(run.full_solves, s.len() as u64);
    assert!(run.audit_solves > 0);
    let mut prev = 0.0;
    for r in &run.history {
        assert_eq!(r.w_start, prev);
        prev = r.w_end;
    }
    let mut buf = Vec::new();
    run.write_history_csv(&mut buf).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap().lines().count(),
        run.iterations() + 1
    );
}

#[test]
fn invalid_configs_are_rejected() {
    for cfg in [
        SmcConfig {
            particles: 1,
            ..Default::default()
        },
        SmcConfig {
            gamma: 1.0,
            ..Default::default()
        },
        SmcConfig {
            total_weight: f64::NAN,
            ..Default::default()
        },
    ] {
        assert!(cfg.validate().is_err());
    }
}
