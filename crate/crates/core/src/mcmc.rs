//! Random-walk Metropolis–Hastings on the Gibbs posterior with exact losses.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{ForwardModel, ObservationSet};
use crate::prior::ParameterDomain;
use crate::rng::{stream, Phase};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RwmhConfig {
    pub total_weight: f64,
    pub samples: usize,
    pub burn_in: usize,
    /// Proposal standard deviation as a fraction of each box width.
    pub step_fraction: f64,
    pub seed: u64,
    /// Starting point; defaults to the prior mean.
    pub start: Option<Vec<f64>>,
}

impl Default for RwmhConfig {
    fn default() -> Self {
        Self {
            total_weight: 1.0,
            samples: 5000,
            burn_in: 1000,
            step_fraction: 0.1,
            seed: 0,
            start: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Chain {
    pub samples: Vec<Vec<f64>>,
    pub losses: Vec<f64>,
    /// Acceptance rate after burn-in.
    pub acceptance_rate: f64,
    /// Proposals rejected for leaving the prior support, over the whole run.
    pub out_of_support: usize,
    pub full_solves: u64,
}

impl Chain {
    /// Acceptance rate outside `[0.05, 0.7]` suggests a mistuned step.
    pub fn step_looks_mistuned(&self) -> bool {
        !(0.05..=0.7).contains(&self.acceptance_rate)
    }

    pub fn marginal_cdf(&self, j: usize, x: f64) -> f64 {
        let below = self.samples.iter().filter(|s| s[j] <= x).count();
        below as f64 / self.samples.len() as f64
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let dim = self.samples.first().map_or(0, Vec::len);
        let cols: Vec<String> = (1..=dim).map(|j| format!("xi_{j}")).collect();
        writeln!(w, "step,{},loss", cols.join(","))?;
        for (k, (s, l)) in self.samples.iter().zip(&self.losses).enumerate() {
            let row: Vec<String> = s.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{k},{},{l}", row.join(","))?;
        }
        Ok(())
    }
}

/// Generic RWMH on `exp(−W l(ξ)) ρ_0(ξ)` with an isotropic Gaussian step in
/// box-scaled coordinates. The loss is evaluated at the start and at every
/// proposal inside the support.
pub fn rwmh<L>(domain: &ParameterDomain, loss: L, cfg: &RwmhConfig) -> Result<Chain>
where
    L: Fn(&[f64]) -> Result<f64>,
{
    if !(cfg.total_weight >= 0.0) || !cfg.total_weight.is_finite() {
        return Err(Error::InvalidConfig(
            "total weight must be finite and >= 0".into(),
        ));
    }
    if cfg.samples == 0 || !(cfg.step_fraction > 0.0) {
        return Err(Error::InvalidConfig(
            "need samples > 0 and a positive step".into(),
        ));
    }
    let mut x = cfg.start.clone().unwrap_or_else(|| domain.prior_mean());
    if !domain.contains(&x) {
        return Err(Error::OutsideDomain(x));
    }
    let mut rng = stream(cfg.seed, Phase::Chain, 0, 0);
    let mut lx = loss(&x)?;
    let mut ln_prior_x = domain.ln_density(&x);
    let mut solves = 1u64;
    let mut out_of_support = 0;
    let mut accepted = 0;
    let mut samples = Vec::with_capacity(cfg.samples);
    let mut losses = Vec::with_capacity(cfg.samples);
    for step in 0..cfg.burn_in + cfg.samples {
        let y: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let z: f64 = rng.sample(StandardNormal);
                v + cfg.step_fraction * domain.width(j) * z
            })
            .collect();
        let u: f64 = rng.random();
        let ln_prior_y = domain.ln_density(&y);
        if ln_prior_y > f64::NEG_INFINITY {
            let ly = loss(&y)?;
            solves += 1;
            let ln_alpha = -cfg.total_weight * (ly - lx) + ln_prior_y - ln_prior_x;
            if u.ln() < ln_alpha {
                x = y;
                lx = ly;
                ln_prior_x = ln_prior_y;
                if step >= cfg.burn_in {
                    accepted += 1;
                }
            }
        } else {
            out_of_support += 1;
        }
        if step >= cfg.burn_in {
            samples.push(x.clone());
            losses.push(lx);
        }
    }
    Ok(Chain {
        samples,
        losses,
        acceptance_rate: accepted as f64 / cfg.samples as f64,
        out_of_support,
        full_solves: solves,
    })
}

/// Reference chain for the model with every loss from a full solve.
pub fn run_rwmh(model: &ForwardModel, obs: &ObservationSet, cfg: &RwmhConfig) -> Result<Chain> {
    rwmh(&model.domain, |xi| model.loss(xi, obs), cfg)
}
