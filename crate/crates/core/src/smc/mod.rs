//! Adaptive sequential Monte Carlo over the loss weight.
//!
//! Each iteration refines the surrogate over the current particles, picks
//! the largest weight increment (halving from the residual weight) whose
//! reweighted set keeps enough effective samples, resamples, and moves every
//! particle with a few Metropolis–Hastings steps that leave the new tempered
//! target invariant. All losses inside the loop come from the surrogate;
//! full solves happen only when atoms are added (and in the separately
//! counted audits).

mod steps;

use std::io::Write;
use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use steps::{
    adapt_step, init_particles, ln_proposal_density, mutate, replay_consistency, resample, resample_indices,
    AdaptOutcome, MutationOutcome, Resampling,
};

use crate::error::{Error, Result};
use crate::forward::{ForwardModel, ObservationSet};
use crate::gibbs::{empirical_moments, ess, kl_divergence, reweight_weights, ParticleSet};
use crate::rb::{ErrorThreshold, RbConfig, Surrogate};
use crate::rng::{stream, Phase};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmcConfig {
    pub particles: usize,
    pub total_weight: f64,
    /// Minimum effective sample size as a fraction of the particle count.
    pub ess_fraction: f64,
    /// Backtracking factor θ for the weight increment.
    pub backtrack: f64,
    /// Metropolis–Hastings steps per particle and iteration.
    pub mutation_steps: usize,
    /// AR(1) correlation γ of the proposal.
    pub gamma: f64,
    pub threshold: ErrorThreshold,
    pub max_iterations: usize,
    /// Increments below this fraction of the total weight are accepted
    /// regardless of the effective sample size.
    pub min_step_fraction: f64,
    pub resampling: Resampling,
    pub seed: u64,
    /// Fraction of particles checked against full solves after each
    /// refinement; zero disables auditing.
    pub audit_fraction: f64,
    /// Test mode: evaluate every loss with a full solve, no surrogate.
    pub exact_loss: bool,
    /// Recompute initial-particle weights with the latest surrogate each
    /// iteration (diagnostic only).
    pub replay: bool,
    pub rb: RbConfig,
}

impl Default for SmcConfig {
    fn default() -> Self {
        Self {
            particles: 100,
            total_weight: 1.0,
            ess_fraction: 0.5,
            backtrack: 0.5,
            mutation_steps: 5,
            gamma: 0.5,
            threshold: ErrorThreshold::default(),
            max_iterations: 100,
            min_step_fraction: 1e-10,
            resampling: Resampling::Multinomial,
            seed: 0,
            audit_fraction: 0.1,
            exact_loss: false,
            replay: true,
            rb: RbConfig::default(),
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.particles < 2 {
            return bad("need at least two particles");
        }
        if !(self.total_weight >= 0.0) || !self.total_weight.is_finite() {
            return bad("total weight must be finite and >= 0");
        }
        if !(self.ess_fraction > 0.0 && self.ess_fraction <= 1.0) {
            return bad("ESS fraction must lie in (0, 1]");
        }
        if self.ess_fraction * (self.particles as f64) < 2.0 {
            return bad("ESS threshold must be at least 2 particles");
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad("backtrack factor must lie in (0, 1)");
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.audit_fraction >= 0.0 && self.audit_fraction <= 1.0) {
            return bad("audit fraction must lie in [0, 1]");
        }
        if !(self.min_step_fraction > 0.0) {
            return bad("minimum step fraction must be positive");
        }
        match self.threshold {
            ErrorThreshold::Fixed { value } if !(value > 0.0) => bad("e_thre must be positive"),
            ErrorThreshold::StdFraction { fraction, floor } if !(fraction > 0.0 && floor > 0.0) => {
                bad("e_thre fraction and floor must be positive")
            }
            _ => Ok(()),
        }
    }
}

/// Surrogate check against full solves on a particle subsample.
#[derive(Debug, Clone, Serialize)]
pub struct AuditRecord {
    pub indices: Vec<usize>,
    pub exact: Vec<f64>,
    pub surrogate: Vec<f64>,
    /// Largest audited `|l − l̄|`.
    pub max_error: f64,
    /// KL divergence of the surrogate-reweighted subsample from the
    /// exact-reweighted one at this iteration's increment.
    pub kl: f64,
    pub kl_bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub t: usize,
    pub w_start: f64,
    pub delta_w: f64,
    pub w_end: f64,
    pub ess: f64,
    pub trials: usize,
    pub degenerate: bool,
    pub atoms_added: usize,
    pub atoms_total: usize,
    pub e_thre: f64,
    pub e_max: f64,
    pub acceptance_rate: f64,
    pub failed_evaluations: usize,
    pub full_solves: u64,
    pub reduced_solves: u64,
    pub replay_ess: Option<f64>,
    /// Trace of the particle covariance after mutation.
    pub covariance_trace: f64,
    pub audit: Option<AuditRecord>,
}

/// Audited indices, their exact losses and the largest loss error.
type AuditSample = (Vec<usize>, Vec<f64>, f64);

/// Particles and losses at the start of an increment. Reweighting them by
/// `W − w_start` gives the posterior at any `W` inside the increment.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub w_start: f64,
    pub delta_w: f64,
    pub particles: ParticleSet,
    pub losses: Vec<f64>,
}

impl Snapshot {
    pub fn at(&self, w: f64) -> Result<ParticleSet> {
        let dw = (w - self.w_start).max(0.0);
        Ok(ParticleSet {
            points: self.particles.points.clone(),
            weights: reweight_weights(&self.particles.weights, &self.losses, dw)?,
            generation: self.particles.generation,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SmcRun {
    pub particles: ParticleSet,
    pub initial: ParticleSet,
    pub history: Vec<IterationRecord>,
    pub snapshots: Vec<Snapshot>,
    pub surrogate: Option<Surrogate>,
    pub total_weight: f64,
    /// Full solves spent by the run itself (atoms, or every loss in exact mode).
    pub full_solves: u64,
    pub audit_solves: u64,
    pub reduced_solves: u64,
    pub wall_time: f64,
}

impl SmcRun {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    /// Particle approximation of the posterior at any `W` in `[0, W_N]`.
    pub fn posterior_at(&self, w: f64) -> Result<ParticleSet> {
        if w >= self.total_weight {
            return Ok(self.particles.clone());
        }
        let snap = self
            .snapshots
            .iter()
            .rev()
            .find(|s| s.w_start <= w)
            .ok_or_else(|| Error::InvalidConfig(format!("no snapshot covers W = {w}")))?;
        snap.at(w)
    }

    pub fn write_history_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "t,w_start,delta_w,w_end,ess,trials,degenerate,atoms_added,atoms_total,e_thre,e_max,\
             acceptance_rate,full_solves,reduced_solves,replay_ess,covariance_trace,audit_max_error"
        )?;
        for r in &self.history {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.t,
                r.w_start,
                r.delta_w,
                r.w_end,
                r.ess,
                r.trials,
                r.degenerate,
                r.atoms_added,
                r.atoms_total,
                r.e_thre,
                r.e_max,
                r.acceptance_rate,
                r.full_solves,
                r.reduced_solves,
                r.replay_ess.map_or(String::new(), |v| v.to_string()),
                r.covariance_trace,
                r.audit
                    .as_ref()
                    .map_or(String::new(), |a| a.max_error.to_string()),
            )?;
        }
        Ok(())
    }
}

enum LossSource {
    Surrogate(Surrogate),
    Exact,
}

impl LossSource {
    fn eval(&self, model: &ForwardModel, obs: &ObservationSet, xi: &[f64]) -> Result<f64> {
        match self {
            LossSource::Surrogate(s) => Ok(s.surrogate_loss(model, xi, obs)?.loss),
            LossSource::Exact => model.loss(xi, obs),
        }
    }
}

fn audit(
    model: &ForwardModel,
    obs: &ObservationSet,
    points: &[Vec<f64>],
    losses: &[f64],
    cfg: &SmcConfig,
    t: usize,
) -> Result<Option<AuditSample>> {
    if cfg.audit_fraction == 0.0 {
        return Ok(None);
    }
    let m = points.len();
    let k = ((cfg.audit_fraction * m as f64).ceil() as usize).clamp(1, m);
    let mut rng = stream(cfg.seed, Phase::Audit, t as u64, 0);
    let mut indices = sample_indices(&mut rng, m, k).into_vec();
    indices.sort_unstable();
    let exact = indices
        .par_iter()
        .map(|&i| model.audit_loss(&points[i], obs))
        .collect::<Result<Vec<f64>>>()?;
    let max_error = indices
        .iter()
        .zip(&exact)
        .map(|(&i, l)| (l - losses[i]).abs())
        .fold(0.0, f64::max);
    Ok(Some((indices, exact, max_error)))
}

/// Runs the adaptive SMC sampler to `cfg.total_weight`.
pub fn run_smc(model: &ForwardModel, obs: &ObservationSet, cfg: &SmcConfig) -> Result<SmcRun> {
    run_smc_with(model, obs, cfg, None)
}

/// As [`run_smc`], continuing from an existing surrogate when one is given.
pub fn run_smc_with(
    model: &ForwardModel,
    obs: &ObservationSet,
    cfg: &SmcConfig,
    surrogate: Option<Surrogate>,
) -> Result<SmcRun> {
    cfg.validate()?;
    let started = Instant::now();
    let full0 = model.full_solves().get();
    let audit0 = model.audit_solves().get();
    let domain = &model.domain;
    let w_total = cfg.total_weight;

    let mut source = if cfg.exact_loss {
        LossSource::Exact
    } else {
        let mut s = match surrogate {
            Some(s) => s,
            None => Surrogate::new(model, cfg.rb.clone())?,
        };
        if s.is_empty() {
            s.set_epoch(0);
            s.add_atom(model, &domain.prior_mean())?;
        }
        LossSource::Surrogate(s)
    };
    let reduced0 = match &source {
        LossSource::Surrogate(s) => s.reduced_solves(),
        LossSource::Exact => 0,
    };

    let initial = init_particles(domain, cfg.particles, cfg.seed)?;
    let mut particles = initial.clone();
    let mut history = Vec::new();
    let mut snapshots = Vec::new();
    let mut w_cur = 0.0;
    let mut t = 0;
    while w_cur < w_total {
        if t >= cfg.max_iterations {
            return Err(Error::MaxIterations(cfg.max_iterations));
        }
        let points = &particles.points;
        let (losses, e_thre, e_max, atoms_added) = match &mut source {
            LossSource::Surrogate(s) => {
                s.set_epoch(t);
                let report = s.refine(model, points, obs, &cfg.threshold)?;
                let losses = report.evaluations.iter().map(|e| e.loss).collect::<Vec<_>>();
                (losses, report.threshold, report.final_max, report.atoms_added)
            }
            LossSource::Exact => {
                let losses = points
                    .par_iter()
                    .map(|xi| model.loss(xi, obs))
                    .collect::<Result<Vec<f64>>>()?;
                (losses, 0.0, 0.0, 0)
            }
        };
        let replay_ess = match &source {
            LossSource::Surrogate(s) if cfg.replay && w_cur > 0.0 => {
                Some(ess(&replay_consistency(&initial, s, model, obs, w_cur)?))
            }
            _ => None,
        };
        let audited = match &source {
            LossSource::Surrogate(_) => audit(model, obs, points, &losses, cfg, t)?,
            LossSource::Exact => None,
        };

        let residual = w_total - w_cur;
        let adapt = adapt_step(&particles.weights, &losses, residual, w_total, cfg)?;
        let w_next = if adapt.delta_w >= residual {
            w_total
        } else {
            (w_cur + adapt.delta_w).min(w_total)
        };

        let audit_record = audited.map(|(indices, exact, max_error)| {
            let base: Vec<f64> = vec![1.0 / indices.len() as f64; indices.len()];
            let surr: Vec<f64> = indices.iter().map(|&i| losses[i]).collect();
            let w_s = reweight_weights(&base, &surr, adapt.delta_w).expect("finite losses");
            let w_e = reweight_weights(&base, &exact, adapt.delta_w).expect("finite losses");
            AuditRecord {
                kl: kl_divergence(&w_s, &w_e),
                kl_bound: 2.0 * adapt.delta_w * max_error,
                indices,
                exact,
                surrogate: surr,
                max_error,
            }
        });

        snapshots.push(Snapshot {
            w_start: w_cur,
            delta_w: adapt.delta_w,
            particles: particles.clone(),
            losses: losses.clone(),
        });

        let weighted = ParticleSet {
            points: particles.points.clone(),
            weights: adapt.weights.clone(),
            generation: particles.generation,
        };
        let moments = empirical_moments(&weighted, domain);
        let mut rng = stream(cfg.seed, Phase::Resample, t as u64, 0);
        let idx = resample_indices(&weighted.weights, cfg.resampling, &mut rng)?;
        let resampled: Vec<Vec<f64>> = idx.iter().map(|&i| weighted.points[i].clone()).collect();
        let resampled_losses: Vec<f64> = idx.iter().map(|&i| losses[i]).collect();

        let outcome = mutate(
            &resampled,
            &resampled_losses,
            |xi: &[f64]| source.eval(model, obs, xi),
            domain,
            &moments,
            w_next,
            cfg.gamma,
            cfg.mutation_steps,
            cfg.seed,
            t as u64,
        );
        particles = ParticleSet::uniform(outcome.points.clone(), particles.generation + 1)?;

        let (atoms_total, reduced) = match &source {
            LossSource::Surrogate(s) => (s.len(), s.reduced_solves() - reduced0),
            LossSource::Exact => (0, 0),
        };
        history.push(IterationRecord {
            t: t + 1,
            w_start: w_cur,
            delta_w: adapt.delta_w,
            w_end: w_next,
            ess: adapt.ess,
            trials: adapt.trials,
            degenerate: adapt.degenerate,
            atoms_added,
            atoms_total,
            e_thre,
            e_max,
            acceptance_rate: outcome.acceptance_rate(),
            failed_evaluations: outcome.failed,
            full_solves: model.full_solves().get() - full0,
            reduced_solves: reduced,
            replay_ess,
            covariance_trace: particles.covariance_trace(),
            audit: audit_record,
        });
        w_cur = w_next;
        t += 1;
    }

    let (surrogate, reduced_solves) = match source {
        LossSource::Surrogate(s) => {
            let r = s.reduced_solves() - reduced0;
            (Some(s), r)
        }
        LossSource::Exact => (None, 0),
    };
    Ok(SmcRun {
        particles,
        initial,
        history,
        snapshots,
        surrogate,
        total_weight: w_total,
        full_solves: model.full_solves().get() - full0,
        audit_solves: model.audit_solves().get() - audit0,
        reduced_solves,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests;
