use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SmcConfig;
use crate::error::{Error, Result};
use crate::forward::{ForwardModel, ObservationSet};
use crate::gibbs::{ess, reweight_weights, Moments, ParticleSet};
use crate::prior::ParameterDomain;
use crate::rb::Surrogate;
use crate::rng::{stream, Phase};

/// iid prior draws with uniform weights; particle `i` uses its own stream.
pub fn init_particles(domain: &ParameterDomain, m: usize, seed: u64) -> Result<ParticleSet> {
    let points = (0..m as u64)
        .map(|i| domain.sample(&mut stream(seed, Phase::Init, 0, i)))
        .collect();
    ParticleSet::uniform(points, 0)
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    pub delta_w: f64,
    pub weights: Vec<f64>,
    pub ess: f64,
    /// Number of increments tried, including the accepted one.
    pub trials: usize,
    /// Set when the increment fell below the minimum step and was accepted
    /// regardless of the effective sample size.
    pub degenerate: bool,
}

/// Starts from the whole residual weight and multiplies it by the backtrack
/// factor until the reweighted set has ESS above `ess_fraction · m`.
pub fn adapt_step(
    weights: &[f64],
    losses: &[f64],
    residual_weight: f64,
    total_weight: f64,
    cfg: &SmcConfig,
) -> Result<AdaptOutcome> {
    let threshold = cfg.ess_fraction * weights.len() as f64;
    let min_step = cfg.min_step_fraction * total_weight;
    let mut dw = residual_weight;
    let mut trials = 0;
    loop {
        trials += 1;
        let w = reweight_weights(weights, losses, dw)?;
        let e = ess(&w);
        if e > threshold {
            return Ok(AdaptOutcome {
                delta_w: dw,
                weights: w,
                ess: e,
                trials,
                degenerate: false,
            });
        }
        if dw < min_step {
            return Ok(AdaptOutcome {
                delta_w: dw,
                weights: w,
                ess: e,
                trials,
                degenerate: true,
            });
        }
        dw *= cfg.backtrack;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Resampling {
    #[default]
    Multinomial,
    Systematic,
}

/// Indices of the resampled particles.
pub fn resample_indices<R: Rng + ?Sized>(
    weights: &[f64],
    scheme: Resampling,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let m = weights.len();
    match scheme {
        Resampling::Multinomial => {
            let dist = WeightedIndex::new(weights)
                .map_err(|e| Error::InvalidConfig(format!("resampling weights: {e}")))?;
            Ok((0..m).map(|_| dist.sample(rng)).collect())
        }
        Resampling::Systematic => {
            let u0: f64 = rng.random::<f64>() / m as f64;
            let mut out = Vec::with_capacity(m);
            let mut cum = weights[0];
            let mut k = 0;
            for i in 0..m {
                let u = u0 + i as f64 / m as f64;
                while u > cum && k + 1 < m {
                    k += 1;
                    cum += weights[k];
                }
                out.push(k);
            }
            Ok(out)
        }
    }
}

/// Draws `m` particles with replacement according to the weights; the
/// result has uniform weights and the next generation number.
pub fn resample<R: Rng + ?Sized>(
    particles: &ParticleSet,
    scheme: Resampling,
    rng: &mut R,
) -> Result<ParticleSet> {
    let idx = resample_indices(&particles.weights, scheme, rng)?;
    ParticleSet::uniform(
        idx.into_iter().map(|i| particles.points[i].clone()).collect(),
        particles.generation + 1,
    )
}

/// Log density, up to a constant, of the AR(1) proposal `to | from`.
pub fn ln_proposal_density(to: &[f64], from: &[f64], moments: &Moments, gamma: f64) -> f64 {
    let scale = 1.0 - gamma * gamma;
    let s: f64 = to
        .iter()
        .zip(from)
        .zip(moments.mean.iter().zip(&moments.variance))
        .map(|((t, f), (m, v))| (t - m - gamma * (f - m)).powi(2) / v)
        .sum();
    -0.5 * s / scale
}

fn propose<R: Rng + ?Sized>(xi: &[f64], moments: &Moments, gamma: f64, rng: &mut R) -> Vec<f64> {
    let noise = (1.0 - gamma * gamma).sqrt();
    xi.iter()
        .zip(moments.mean.iter().zip(&moments.variance))
        .map(|(x, (m, v))| {
            let z: f64 = rng.sample(StandardNormal);
            m + gamma * (x - m) + noise * v.sqrt() * z
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct MutationOutcome {
    pub points: Vec<Vec<f64>>,
    /// Loss at each returned point.
    pub losses: Vec<f64>,
    pub proposals: usize,
    pub accepted: usize,
    /// Proposals rejected because the loss could not be evaluated there.
    pub failed: usize,
}

impl MutationOutcome {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }
}

/// Metropolis–Hastings moves targeting `exp(−W l) ρ_0` with the AR(1)
/// proposal built from `moments`. Each particle runs `steps` moves on its
/// own random stream, so the outcome does not depend on thread scheduling.
/// Proposals outside the prior support are rejected without evaluating the
/// loss; a proposal whose loss cannot be evaluated is also rejected.
#[allow(clippy::too_many_arguments)]
pub fn mutate<L>(
    points: &[Vec<f64>],
    losses: &[f64],
    loss: L,
    domain: &ParameterDomain,
    moments: &Moments,
    w_target: f64,
    gamma: f64,
    steps: usize,
    seed: u64,
    iteration: u64,
) -> MutationOutcome
where
    L: Fn(&[f64]) -> Result<f64> + Sync,
{
    let chains: Vec<(Vec<f64>, f64, usize, usize)> = points
        .par_iter()
        .zip(losses.par_iter())
        .enumerate()
        .map(|(i, (xi, &l))| {
            let mut rng = stream(seed, Phase::Mutate, iteration, i as u64);
            let mut x = xi.clone();
            let mut lx = l;
            let mut ln_prior_x = domain.ln_density(&x);
            let (mut accepted, mut failed) = (0, 0);
            for _ in 0..steps {
                let y = propose(&x, moments, gamma, &mut rng);
                let u: f64 = rng.random();
                let ln_prior_y = domain.ln_density(&y);
                if ln_prior_y == f64::NEG_INFINITY {
                    continue;
                }
                let ly = match loss(&y) {
                    Ok(v) => v,
                    Err(_) => {
                        failed += 1;
                        continue;
                    }
                };
                let ln_q = if gamma < 1.0 {
                    ln_proposal_density(&x, &y, moments, gamma) - ln_proposal_density(&y, &x, moments, gamma)
                } else {
                    0.0
                };
                let ln_alpha = -w_target * (ly - lx) + ln_prior_y - ln_prior_x + ln_q;
                if u.ln() < ln_alpha {
                    x = y;
                    lx = ly;
                    ln_prior_x = ln_prior_y;
                    accepted += 1;
                }
            }
            (x, lx, accepted, failed)
        })
        .collect();
    let mut out = MutationOutcome {
        points: Vec::with_capacity(points.len()),
        losses: Vec::with_capacity(points.len()),
        proposals: points.len() * steps,
        accepted: 0,
        failed: 0,
    };
    for (x, l, a, f) in chains {
        out.points.push(x);
        out.losses.push(l);
        out.accepted += a;
        out.failed += f;
    }
    out
}

/// Weights of the initial particle set under `exp(−W_t l̄)` with the
/// current surrogate. By coherence this equals replaying every accepted
/// increment from the start; it needs reduced solves only.
pub fn replay_consistency(
    initial: &ParticleSet,
    surrogate: &Surrogate,
    model: &ForwardModel,
    obs: &ObservationSet,
    w_t: f64,
) -> Result<Vec<f64>> {
    if w_t == 0.0 {
        return Ok(initial.weights.clone());
    }
    let losses: Vec<f64> = surrogate
        .evaluate_all(model, &initial.points, obs)?
        .into_iter()
        .map(|e| e.loss)
        .collect();
    reweight_weights(&initial.weights, &losses, w_t)
}
