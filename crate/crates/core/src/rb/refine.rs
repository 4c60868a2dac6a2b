use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Surrogate, SurrogateEval, DUPLICATE_TOLERANCE};
use crate::error::{Error, Result};
use crate::forward::{ForwardModel, ObservationSet};

/// Accuracy target for one refinement pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ErrorThreshold {
    Fixed {
        value: f64,
    },
    /// Fraction of the standard deviation of l̄ over the particles,
    /// evaluated with the surrogate as it stands before refinement.
    StdFraction {
        fraction: f64,
        floor: f64,
    },
}

impl Default for ErrorThreshold {
    fn default() -> Self {
        ErrorThreshold::StdFraction {
            fraction: 0.02,
            floor: 1e-8,
        }
    }
}

impl ErrorThreshold {
    pub fn resolve(&self, losses: impl Iterator<Item = f64>) -> f64 {
        match *self {
            ErrorThreshold::Fixed { value } => value,
            ErrorThreshold::StdFraction { fraction, floor } => {
                let v: Vec<f64> = losses.filter(|l| l.is_finite()).collect();
                if v.is_empty() {
                    return floor;
                }
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let var = v.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n;
                (fraction * var.sqrt()).max(floor)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RefinementReport {
    pub threshold: f64,
    pub atoms_added: usize,
    pub initial_max: f64,
    pub final_max: f64,
    /// Final surrogate evaluation at every particle.
    pub evaluations: Vec<SurrogateEval>,
}

/// Cached evaluation tagged with the basis version it was computed from.
struct Slot {
    atom: usize,
    version: u64,
    eval: Option<SurrogateEval>,
}

impl Slot {
    fn indicator(&self) -> f64 {
        // a singular reduced system calls for an atom at this point
        self.eval.as_ref().map_or(f64::INFINITY, |e| e.indicator)
    }
}

impl Surrogate {
    fn evaluate_slot(
        &self,
        model: &ForwardModel,
        k: usize,
        xi: &[f64],
        obs: &ObservationSet,
    ) -> Result<Slot> {
        let eval = match self.evaluate_in(model, k, xi, obs) {
            Ok(e) => Some(e),
            Err(Error::SingularReducedSystem { .. }) => None,
            Err(e) => return Err(e),
        };
        Ok(Slot {
            atom: k,
            version: self.atom_version(k),
            eval,
        })
    }

    /// Evaluates l̄ and ε_l at every point in parallel.
    pub fn evaluate_all(
        &self,
        model: &ForwardModel,
        points: &[Vec<f64>],
        obs: &ObservationSet,
    ) -> Result<Vec<SurrogateEval>> {
        points
            .par_iter()
            .map(|xi| self.surrogate_loss(model, xi, obs))
            .collect()
    }

    /// Greedy refinement with a fixed threshold.
    pub fn refine_over_particles(
        &mut self,
        model: &ForwardModel,
        points: &[Vec<f64>],
        obs: &ObservationSet,
        e_thre: f64,
    ) -> Result<RefinementReport> {
        self.refine(model, points, obs, &ErrorThreshold::Fixed { value: e_thre })
    }

    /// While the largest indicator over the points exceeds the threshold,
    /// adds an atom at the maximizing point (lowest index on ties).
    /// Evaluations are recomputed only in cells whose atom or basis changed,
    /// which yields the same values as a full recomputation.
    pub fn refine(
        &mut self,
        model: &ForwardModel,
        points: &[Vec<f64>],
        obs: &ObservationSet,
        rule: &ErrorThreshold,
    ) -> Result<RefinementReport> {
        if points.is_empty() {
            return Err(Error::InvalidConfig(
                "refinement needs at least one particle".into(),
            ));
        }
        if self.is_empty() {
            return Err(Error::EmptySurrogate);
        }
        let mut slots = points
            .par_iter()
            .map(|xi| {
                let k = self.nearest_atom(xi)?;
                self.evaluate_slot(model, k, xi, obs)
            })
            .collect::<Result<Vec<Slot>>>()?;
        let threshold = rule.resolve(slots.iter().filter_map(|s| s.eval.as_ref().map(|e| e.loss)));
        if !(threshold > 0.0) {
            return Err(Error::InvalidConfig("error threshold must be positive".into()));
        }
        let argmax = |slots: &[Slot]| {
            let mut best = (0, f64::NEG_INFINITY);
            for (i, s) in slots.iter().enumerate() {
                let v = s.indicator();
                if v > best.1 || (v.is_nan() && !best.1.is_nan()) {
                    best = (i, v);
                }
            }
            best
        };
        let (mut imax, mut emax) = argmax(&slots);
        let initial_max = emax;
        let mut added = 0;
        while emax > threshold || emax.is_nan() {
            let xi = &points[imax];
            if self.min_distance(xi) <= DUPLICATE_TOLERANCE {
                return Err(Error::RefinementStalled { indicator: emax });
            }
            let new = self.add_atom(model, xi)?;
            added += 1;
            for (xi, slot) in points.iter().zip(slots.iter_mut()) {
                if self.distance(xi, new) < self.distance(xi, slot.atom) {
                    slot.atom = new;
                    slot.version = u64::MAX;
                }
            }
            let stale: Vec<usize> = (0..slots.len())
                .filter(|&i| slots[i].version != self.atom_version(slots[i].atom))
                .collect();
            let fresh = stale
                .par_iter()
                .map(|&i| self.evaluate_slot(model, slots[i].atom, &points[i], obs))
                .collect::<Result<Vec<Slot>>>()?;
            for (i, s) in stale.into_iter().zip(fresh) {
                slots[i] = s;
            }
            (imax, emax) = argmax(&slots);
        }
        let evaluations = slots
            .into_iter()
            .map(|s| s.eval.expect("every singular cell received an atom"))
            .collect();
        Ok(RefinementReport {
            threshold,
            atoms_added: added,
            initial_max,
            final_max: emax,
            evaluations,
        })
    }
}
