use gibbs_rb::diagnostics::{h_proxy, ks_distance, Reference};
use gibbs_rb::forward::Adv1dConfig;
use gibbs_rb::gibbs::{empirical_moments, grid_oracle, reweight_weights, Moments};
use gibbs_rb::rng::{stream, Phase};
use gibbs_rb::smc::{adapt_step, init_particles, mutate, replay_consistency, resample_indices, Resampling};
use gibbs_rb::{assemble, run_smc, ParameterDomain, PriorSpec, SmcConfig};
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn initial_draws_match_the_prior() {
    let domain = ParameterDomain::new(
        vec![0.0, -1.0],
        vec![1.0, 3.0],
        vec![
            PriorSpec::Uniform,
            PriorSpec::Beta {
                alpha: 1.0,
                beta: 2.0,
            },
        ],
    )
    .unwrap();
    let p = init_particles(&domain, 4000, 9).unwrap();
    assert!(p.weights.iter().all(|w| (w - 1.0 / 4000.0).abs() < 1e-15));
    // Beta(1, 2) on [-1, 3] has mean -1 + 4/3
    let mean = p.mean();
    assert!((mean[0] - 0.5).abs() < 4.0 * (1.0f64 / 12.0 / 4000.0).sqrt());
    assert!((mean[1] - (-1.0 + 4.0 / 3.0)).abs() < 4.0 * (16.0f64 / 18.0 / 4000.0).sqrt());
    for j in 0..2 {
        assert!(ks_distance(&p, j, |x| domain.cdf_1d(j, x)) < 1.63 / 4000f64.sqrt());
    }
}

#[test]
fn multinomial_counts_pass_chi_square() {
    let weights = [0.05, 0.05, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.15, 0.15];
    let mut counts = [0usize; 10];
    for r in 0..1000 {
        let mut rng = stream(4, Phase::Resample, r, 0);
        for i in resample_indices(&weights, Resampling::Multinomial, &mut rng).unwrap() {
            counts[i] += 1;
        }
    }
    let total = 10_000.0;
    let chi2: f64 = counts
        .iter()
        .zip(&weights)
        .map(|(&c, w)| (c as f64 - total * w).powi(2) / (total * w))
        .sum();
    let p = 1.0 - ChiSquared::new(9.0).unwrap().cdf(chi2);
    assert!(p > 1e-3, "chi2 {chi2} p {p}");
}

#[test]
fn degenerate_weights_resample_to_one_particle() {
    let mut rng = stream(1, Phase::Resample, 0, 0);
    let w = [0.0, 0.0, 1.0, 0.0];
    for scheme in [Resampling::Multinomial, Resampling::Systematic] {
        assert_eq!(resample_indices(&w, scheme, &mut rng).unwrap(), vec![2; 4]);
    }
}

fn two_particle_cfg() -> SmcConfig {
    SmcConfig {
        ess_fraction: 0.75,
        backtrack: 0.5,
        ..Default::default()
    }
}

/// Largest `R θ^k` below the closed-form ESS crossing for weights (½, ½)
/// and losses (0, L): ESS > 1.5 iff exp(−ΔW L) > 2 − √3.
fn closed_form_step(r: f64, l: f64) -> (f64, usize) {
    let limit = -(2.0 - 3f64.sqrt()).ln() / l;
    let mut dw = r;
    let mut k = 1;
    while dw >= limit {
        dw *= 0.5;
        k += 1;
    }
    (dw, k)
}

#[test]
fn two_particle_step_matches_closed_form() {
    let cfg = two_particle_cfg();
    for l in [0.01, 0.3, 1.0, 7.0, 40.0] {
        let out = adapt_step(&[0.5, 0.5], &[0.0, l], 10.0, 10.0, &cfg).unwrap();
        let (dw, trials) = closed_form_step(10.0, l);
        assert!((out.delta_w - dw).abs() < 1e-12, "L = {l}");
        assert_eq!(out.trials, trials);
        let q = (-dw * l).exp();
        assert!((out.ess - (1.0 + q).powi(2) / (1.0 + q * q)).abs() < 1e-12);
    }
}

#[test]
fn backtracking_goes_eight_four_two() {
    // crossing at ΔW = 3 so 8 and 4 fail and 2 passes
    let l = -(2.0 - 3f64.sqrt()).ln() / 3.0;
    let out = adapt_step(&[0.5, 0.5], &[0.0, l], 8.0, 8.0, &two_particle_cfg()).unwrap();
    assert_eq!(out.delta_w, 2.0);
    assert_eq!(out.trials, 3);
    assert!(!out.degenerate);
}

fn unit_moments(dim: usize) -> Moments {
    Moments {
        mean: vec![0.5; dim],
        variance: vec![1.0 / 12.0; dim],
    }
}

#[test]
fn mutation_keeps_the_prior_invariant() {
    let domain = ParameterDomain::uniform_unit(1);
    let p = init_particles(&domain, 4000, 2).unwrap();
    let losses = vec![0.0; p.len()];
    let out = mutate(
        &p.points,
        &losses,
        |_| Ok(0.0),
        &domain,
        &unit_moments(1),
        0.0,
        0.5,
        20,
        3,
        1,
    );
    assert!(out.acceptance_rate() > 0.5);
    let moved = gibbs_rb::ParticleSet::uniform(out.points, 1).unwrap();
    assert!(ks_distance(&moved, 0, |x| x.clamp(0.0, 1.0)) < 1.63 / 4000f64.sqrt());
}

#[test]
fn two_level_loss_gives_the_gibbs_ratio() {
    // l = 0 on the left half and Δ on the right; stationary mass ratio is e^{WΔ}
    let domain = ParameterDomain::uniform_unit(1);
    let loss = |x: &[f64]| Ok(if x[0] < 0.5 { 0.0 } else { 1.0 });
    let w = 1.2;
    let p = init_particles(&domain, 20_000, 5).unwrap();
    let l0: Vec<f64> = p.points.iter().map(|x| loss(x).unwrap()).collect();
    let out = mutate(&p.points, &l0, loss, &domain, &unit_moments(1), w, 0.3, 60, 6, 1);
    let left = out.points.iter().filter(|x| x[0] < 0.5).count() as f64 / 20_000.0;
    let expected = w.exp() / (1.0 + w.exp());
    let se = (expected * (1.0 - expected) / 20_000.0).sqrt();
    assert!((left - expected).abs() < 4.0 * se, "{left} vs {expected}");
}

#[test]
fn gamma_one_never_moves() {
    let domain = ParameterDomain::uniform_unit(2);
    let p = init_particles(&domain, 50, 2).unwrap();
    let out = mutate(
        &p.points,
        &vec![0.0; 50],
        |_| Ok(0.0),
        &domain,
        &unit_moments(2),
        3.0,
        1.0,
        5,
        1,
        1,
    );
    assert_eq!(out.points, p.points);
}

#[test]
fn mutation_is_reproducible_per_stream() {
    let domain = ParameterDomain::uniform_unit(2);
    let p = init_particles(&domain, 64, 2).unwrap();
    let l = |x: &[f64]| Ok(x[0] + x[1]);
    let l0: Vec<f64> = p.points.iter().map(|x| l(x).unwrap()).collect();
    let m = empirical_moments(&p, &domain);
    let a = mutate(&p.points, &l0, l, &domain, &m, 2.0, 0.5, 5, 7, 3);
    let b = mutate(&p.points, &l0, l, &domain, &m, 2.0, 0.5, 5, 7, 3);
    assert_eq!(a.points, b.points);
    // the first half does not depend on the rest of the set
    let c = mutate(&p.points[..32], &l0[..32], l, &domain, &m, 2.0, 0.5, 5, 7, 3);
    assert_eq!(c.points[..], a.points[..32]);
}

fn adv1d() -> (gibbs_rb::ForwardModel, gibbs_rb::ObservationSet) {
    let model = assemble(&gibbs_rb::Preset::Adv1d(Adv1dConfig::default())).unwrap();
    let obs = model.gen_data(&model.truth, 0.1, 1, 11).unwrap();
    (model, obs)
}

#[test]
fn replay_matches_single_shot_reweighting() {
    let (model, obs) = adv1d();
    let cfg = SmcConfig {
        total_weight: 16.7,
        ..Default::default()
    };
    let run = run_smc(&model, &obs, &cfg).unwrap();
    let w_t = run.history.last().unwrap().w_end;
    let surrogate = run.surrogate.as_ref().unwrap();
    let replay = replay_consistency(&run.initial, surrogate, &model, &obs, w_t).unwrap();
    let losses: Vec<f64> = run
        .initial
        .points
        .iter()
        .map(|x| surrogate.surrogate_loss(&model, x, &obs).unwrap().loss)
        .collect();
    let direct = reweight_weights(&run.initial.weights, &losses, w_t).unwrap();
    for (a, b) in replay.iter().zip(&direct) {
        assert!((a - b).abs() < 1e-12);
    }
    let zero = replay_consistency(&run.initial, surrogate, &model, &obs, 0.0).unwrap();
    assert_eq!(zero, run.initial.weights);
    // snapshots chain: each starts where the previous one ended
    for pair in run.snapshots.windows(2) {
        assert!((pair[0].w_start + pair[0].delta_w - pair[1].w_start).abs() < 1e-12);
    }
    assert!((run.history.last().unwrap().w_end - 16.7).abs() < 1e-12);
}

#[test]
fn exact_mode_error_shrinks_with_more_particles() {
    let (model, obs) = adv1d();
    let w = 16.7;
    let grid = grid_oracle(&model, w, &[121, 121], &obs).unwrap();
    let runs = |m: usize| -> Vec<gibbs_rb::ParticleSet> {
        (0..10)
            .map(|seed| {
                let cfg = SmcConfig {
                    particles: m,
                    total_weight: w,
                    exact_loss: true,
                    seed,
                    ..Default::default()
                };
                run_smc(&model, &obs, &cfg).unwrap().particles
            })
            .collect()
    };
    let small = h_proxy(&runs(100), Reference::Grid(&grid), &model.domain).unwrap();
    let large = h_proxy(&runs(400), Reference::Grid(&grid), &model.domain).unwrap();
    assert!(small / large >= 1.5, "h_proxy {small} -> {large}");
}
