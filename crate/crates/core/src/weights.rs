//! Loss-weight calibration by residual matching.
//!
//! Candidate weights are log-spaced around the Gaussian reference
//! `W_ref = 1/(2 (ε^D)^2)`. At each candidate the posterior mean is pushed
//! through the forward model and the residual statistics are compared with
//! the assumed noise mean and deviation; the best candidate is then averaged
//! with `W_ref` according to the number of observations.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{ForwardModel, ObservationSet};
use crate::smc::{run_smc, SmcConfig, SmcRun};

/// Relative gap below which two candidate weights are merged.
const DEDUP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightSelectionConfig {
    /// Range parameter T: candidates span `[W_ref/T, T·W_ref]`.
    pub range: f64,
    /// Stabilizer S of the model average.
    pub stabilizer: f64,
    pub grid_size: usize,
    /// With a single observation vector, treat its channels as the noise
    /// samples; otherwise a single observation falls back to `W_ref`.
    pub channels_as_samples: bool,
}

impl Default for WeightSelectionConfig {
    fn default() -> Self {
        Self {
            range: 50.0,
            stabilizer: 10.0,
            grid_size: 20,
            channels_as_samples: true,
        }
    }
}

impl WeightSelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.range >= 1.0) {
            return Err(Error::InvalidConfig("range T must be at least 1".into()));
        }
        if !(self.stabilizer >= 1.0) {
            return Err(Error::InvalidConfig("stabilizer S must be at least 1".into()));
        }
        if self.grid_size == 0 {
            return Err(Error::InvalidConfig("grid size must be positive".into()));
        }
        Ok(())
    }
}

/// Gaussian reference weight `1/(2 (ε^D)^2)`.
pub fn reference_weight(noise_std: f64) -> Result<f64> {
    if !(noise_std > 0.0) || !noise_std.is_finite() {
        return Err(Error::InvalidConfig("noise deviation must be positive".into()));
    }
    Ok(0.5 / (noise_std * noise_std))
}

/// Ascending log-spaced candidates on `[W_ref/T, T·W_ref]`, with `W_ref`
/// itself always present.
pub fn candidate_grid(noise_std: f64, cfg: &WeightSelectionConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let w_ref = reference_weight(noise_std)?;
    let (lo, hi) = ((w_ref / cfg.range).ln(), (w_ref * cfg.range).ln());
    let mut grid: Vec<f64> = if cfg.grid_size == 1 {
        vec![w_ref]
    } else {
        (0..cfg.grid_size)
            .map(|k| (lo + (hi - lo) * k as f64 / (cfg.grid_size - 1) as f64).exp())
            .collect()
    };
    grid.push(w_ref);
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() <= DEDUP_TOLERANCE * b.abs());
    // keep the exact reference value where it was merged with a neighbour
    for w in grid.iter_mut() {
        if (*w - w_ref).abs() <= DEDUP_TOLERANCE * w_ref {
            *w = w_ref;
        }
    }
    Ok(grid)
}

/// Noise samples used by the objective: one per observation vector, or one
/// per channel when a single vector is given and `channels_as_samples` is set.
pub fn sample_count(obs: &ObservationSet, cfg: &WeightSelectionConfig) -> usize {
    if obs.len() == 1 && cfg.channels_as_samples {
        obs.channels()
    } else {
        obs.len()
    }
}

fn discrepancy(residuals: &[Vec<f64>], noise_mean: f64, noise_std: f64) -> f64 {
    // residuals[c][i]: channel c, sample i
    let n = residuals[0].len() as f64;
    let channels = residuals.len() as f64;
    let (mut mean_sq, mut dev_sq) = (0.0, 0.0);
    for r in residuals {
        let mean = r.iter().sum::<f64>() / n;
        let dev = (r.iter().map(|v| (v - noise_mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        mean_sq += (mean - noise_mean).powi(2);
        dev_sq += dev * dev;
    }
    let mean_term = (mean_sq / channels).sqrt();
    let dev_term = ((dev_sq / channels).sqrt() - noise_std).abs();
    (mean_term + dev_term) / noise_std
}

/// Discrepancy objective for the predicted observation `F(E[ξ])`.
///
/// Per channel, the residual mean over observations and the deviation
/// `sqrt(Σ (r_i − ε^M)^2 / (n−1))` are formed; channels are combined by rms.
/// A single observation vector is read as one channel with a sample per
/// entry when `cfg.channels_as_samples` holds.
pub fn residual_objective(
    prediction: &DVector<f64>,
    obs: &ObservationSet,
    cfg: &WeightSelectionConfig,
) -> Result<f64> {
    let n = sample_count(obs, cfg);
    if n < 2 {
        return Err(Error::TooFewObservations(n));
    }
    if !(obs.noise_std > 0.0) {
        return Err(Error::InvalidConfig("noise deviation must be positive".into()));
    }
    let residuals: Vec<Vec<f64>> = if obs.len() == 1 {
        vec![(prediction - &obs.data[0]).iter().copied().collect()]
    } else {
        (0..prediction.len())
            .map(|c| obs.data.iter().map(|d| prediction[c] - d[c]).collect())
            .collect()
    };
    Ok(discrepancy(&residuals, obs.noise_mean, obs.noise_std))
}

/// Outcome of a weight selection.
#[derive(Debug, Clone, Serialize)]
pub struct WeightSelection {
    pub grid: Vec<f64>,
    pub objectives: Vec<f64>,
    pub reference: f64,
    pub optimum: f64,
    pub observations: usize,
    pub selected: f64,
}

impl WeightSelection {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "w,objective")?;
        for (g, o) in self.grid.iter().zip(&self.objectives) {
            writeln!(w, "{g},{o}")?;
        }
        Ok(())
    }
}

/// Argmin over the grid (smaller weight on ties) averaged with the
/// reference: `S/(S+n−1)·W_ref + (n−1)/(S+n−1)·W_opt`.
pub fn select_weight(
    grid: &[f64],
    objectives: &[f64],
    observations: usize,
    reference: f64,
    cfg: &WeightSelectionConfig,
) -> Result<WeightSelection> {
    cfg.validate()?;
    if grid.is_empty() || grid.len() != objectives.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: objectives.len(),
        });
    }
    let mut best = 0;
    for k in 1..grid.len() {
        let better = objectives[k] < objectives[best]
            || (objectives[k] == objectives[best] && grid[k] < grid[best])
            || (objectives[best].is_nan() && !objectives[k].is_nan());
        if better {
            best = k;
        }
    }
    let optimum = grid[best];
    let extra = observations.saturating_sub(1) as f64;
    let s = cfg.stabilizer;
    let selected = if extra == 0.0 {
        reference
    } else {
        s / (s + extra) * reference + extra / (s + extra) * optimum
    };
    Ok(WeightSelection {
        grid: grid.to_vec(),
        objectives: objectives.to_vec(),
        reference,
        optimum,
        observations,
        selected,
    })
}

/// Objective at every candidate from a single SMC run to the largest one.
///
/// Each candidate falls inside some accepted increment; reweighting that
/// increment's starting particles by the remaining weight gives the
/// posterior at exactly the candidate. The posterior mean then costs one
/// full solve.
pub fn objectives_from_run(
    model: &ForwardModel,
    obs: &ObservationSet,
    run: &SmcRun,
    grid: &[f64],
    cfg: &WeightSelectionConfig,
) -> Result<Vec<f64>> {
    grid.par_iter()
        .map(|&w| {
            let mean = run.posterior_at(w)?.mean();
            let prediction = model.observe(&model.solve_full(&mean)?);
            residual_objective(&prediction, obs, cfg)
        })
        .collect()
}

/// Runs the full calibration: one SMC pass to the top of the candidate grid,
/// the objective at every candidate, and the averaged weight. With fewer
/// than two noise samples the objective is undefined and the reference
/// weight is returned.
pub fn evaluate_grid_via_smc(
    model: &ForwardModel,
    obs: &ObservationSet,
    smc: &SmcConfig,
    cfg: &WeightSelectionConfig,
) -> Result<(WeightSelection, SmcRun)> {
    let grid = candidate_grid(obs.noise_std, cfg)?;
    let reference = reference_weight(obs.noise_std)?;
    let top = *grid.last().expect("grid is never empty");
    let run = run_smc(
        model,
        obs,
        &SmcConfig {
            total_weight: top,
            ..smc.clone()
        },
    )?;
    let n = sample_count(obs, cfg);
    if n < 2 {
        let objectives = vec![f64::NAN; grid.len()];
        return Ok((select_weight(&grid, &objectives, n, reference, cfg)?, run));
    }
    let objectives = objectives_from_run(model, obs, &run, &grid, cfg)?;
    Ok((select_weight(&grid, &objectives, n, reference, cfg)?, run))
}
