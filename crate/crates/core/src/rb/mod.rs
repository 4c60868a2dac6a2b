//! Local reduced-basis surrogate for the state and the loss.
//!
//! Atoms seed a Voronoi partition of the parameter box, measured with the
//! Euclidean distance in box-scaled coordinates (ties go to the lower atom
//! index). Each atom owns a basis spanned by its snapshot, its parameter
//! gradient and the snapshots of its nearest atoms. Inside a cell the state
//! is the Galerkin projection onto that basis. All affine terms are
//! projected once per basis, so an evaluation costs the same on any mesh.

mod basis;
mod refine;

use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use refine::{ErrorThreshold, RefinementReport};

use crate::error::{Error, Result};
use crate::forward::{ForwardModel, LossKind, ObservationSet};
use crate::linalg::smallest_singular_value;
use crate::prior::ParameterDomain;
use crate::rng::{stream, Phase};
use basis::{orthonormalize, ReducedCache};

/// Minimum scaled distance between two atoms.
pub const DUPLICATE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RbConfig {
    /// Number of neighbouring snapshots in each local basis.
    pub neighbors: usize,
    pub drop_tolerance: f64,
    pub atom_budget: usize,
    /// Prior samples used to estimate the stability constant.
    pub stability_samples: usize,
    pub stability_seed: u64,
}

impl Default for RbConfig {
    fn default() -> Self {
        Self {
            neighbors: 5,
            drop_tolerance: 1e-10,
            atom_budget: 2000,
            stability_samples: 20,
            stability_seed: 0x5ab1e,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Atom {
    pub location: Vec<f64>,
    pub snapshot: DVector<f64>,
    /// Columns `∂u/∂ξ_j`.
    pub gradient: DMatrix<f64>,
    /// SMC iteration during which the atom was added.
    pub epoch: usize,
    neighbors: Vec<usize>,
    basis: DMatrix<f64>,
    cache: ReducedCache,
    version: u64,
}

impl Atom {
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }
}

/// Reduced Galerkin solution inside one Voronoi cell.
#[derive(Debug, Clone)]
pub struct ReducedSolution {
    pub atom: usize,
    pub coefficients: DVector<f64>,
    /// `D ū(ξ)`.
    pub observed: DVector<f64>,
    /// `‖f(ξ) − A(ξ) ū(ξ)‖`.
    pub residual: f64,
}

/// Surrogate loss and its error indicators at one parameter point.
#[derive(Debug, Clone)]
pub struct SurrogateEval {
    pub atom: usize,
    pub loss: f64,
    /// Loss error indicator ε_l.
    pub indicator: f64,
    /// State error indicator ε_u.
    pub state_indicator: f64,
}

#[derive(Debug)]
pub struct Surrogate {
    cfg: RbConfig,
    domain: ParameterDomain,
    loss_kind: LossKind,
    observation_norm: f64,
    observation_l1_norm: f64,
    stability: f64,
    atoms: Vec<Atom>,
    epoch: usize,
    reduced_solves: AtomicU64,
}

impl Clone for Surrogate {
    fn clone(&self) -> Self {
        Self {
            cfg: self.cfg.clone(),
            domain: self.domain.clone(),
            loss_kind: self.loss_kind,
            observation_norm: self.observation_norm,
            observation_l1_norm: self.observation_l1_norm,
            stability: self.stability,
            atoms: self.atoms.clone(),
            epoch: self.epoch,
            reduced_solves: AtomicU64::new(self.reduced_solves()),
        }
    }
}

/// Lower bound on σ_min(A(ξ)) over the box, estimated as the minimum over
/// prior samples. Uses the operator itself, not full solves.
pub fn estimate_stability(model: &ForwardModel, samples: usize, seed: u64) -> Result<f64> {
    let mut points = vec![model.domain.center()];
    points.extend((0..samples as u64).map(|k| {
        let mut rng = stream(seed, Phase::Stability, 0, k);
        model.domain.sample(&mut rng)
    }));
    let values = points
        .par_iter()
        .map(|xi| smallest_singular_value(&model.operator_at(xi), 500))
        .collect::<Result<Vec<f64>>>()?;
    Ok(values.into_iter().fold(f64::INFINITY, f64::min))
}

/// Bound on `|l(ξ) − l̄(ξ)|` given `‖u − ū‖ ≤ ε_u`.
///
/// Squared loss uses `|‖a+e‖² − ‖a‖²| ≤ 2‖a‖‖e‖ + ‖e‖²` per datum with
/// `‖e‖ ≤ ‖D‖₂ ε_u`; the Lipschitz losses use their operator-norm constant.
pub fn loss_error_bound(
    kind: LossKind,
    observation_norm: f64,
    observation_l1_norm: f64,
    prediction: &DVector<f64>,
    obs: &ObservationSet,
    state_indicator: f64,
) -> f64 {
    let n = obs.len() as f64;
    match kind {
        LossKind::SquaredL2 => {
            let e = observation_norm * state_indicator;
            obs.data
                .iter()
                .map(|d| 2.0 * (prediction - d).norm() * e + e * e)
                .sum()
        }
        LossKind::L2 => n * observation_norm * state_indicator,
        LossKind::L1 => n * observation_l1_norm * state_indicator,
    }
}

impl Surrogate {
    /// Empty surrogate; estimates the stability constant from the model.
    pub fn new(model: &ForwardModel, cfg: RbConfig) -> Result<Self> {
        let stability = estimate_stability(model, cfg.stability_samples, cfg.stability_seed)?;
        Ok(Self::with_stability(model, cfg, stability))
    }

    pub fn with_stability(model: &ForwardModel, cfg: RbConfig, stability: f64) -> Self {
        Self {
            cfg,
            domain: model.domain.clone(),
            loss_kind: model.loss_kind,
            observation_norm: model.observation_norm(),
            observation_l1_norm: model.observation_l1_norm(),
            stability,
            atoms: Vec::new(),
            epoch: 0,
            reduced_solves: AtomicU64::new(0),
        }
    }

    pub fn config(&self) -> &RbConfig {
        &self.cfg
    }

    pub fn stability(&self) -> f64 {
        self.stability
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn reduced_solves(&self) -> u64 {
        self.reduced_solves.load(Ordering::Relaxed)
    }

    /// Tags atoms added from now on.
    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    pub fn nearest_atom(&self, xi: &[f64]) -> Result<usize> {
        let mut best = None;
        let mut best_d = f64::INFINITY;
        for (k, atom) in self.atoms.iter().enumerate() {
            let d = self.domain.scaled_distance(xi, &atom.location);
            if d < best_d {
                best_d = d;
                best = Some(k);
            }
        }
        best.ok_or(Error::EmptySurrogate)
    }

    fn distance(&self, xi: &[f64], k: usize) -> f64 {
        self.domain.scaled_distance(xi, &self.atoms[k].location)
    }

    fn min_distance(&self, xi: &[f64]) -> f64 {
        (0..self.atoms.len())
            .map(|k| self.distance(xi, k))
            .fold(f64::INFINITY, f64::min)
    }

    /// The `N` nearest other atoms of `k`, ordered by (distance, index).
    fn nearest_others(&self, k: usize) -> Vec<usize> {
        let x = &self.atoms[k].location;
        let mut others: Vec<(f64, usize)> = (0..self.atoms.len())
            .filter(|&j| j != k)
            .map(|j| (self.distance(x, j), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        others.truncate(self.cfg.neighbors);
        others.into_iter().map(|(_, j)| j).collect()
    }

    fn build_basis(&self, model: &ForwardModel, k: usize) -> (DMatrix<f64>, ReducedCache) {
        let atom = &self.atoms[k];
        let candidates = std::iter::once(atom.snapshot.clone())
            .chain(atom.gradient.column_iter().map(|c| c.into_owned()))
            .chain(atom.neighbors.iter().map(|&j| self.atoms[j].snapshot.clone()));
        let basis = orthonormalize(model.dofs(), candidates, self.cfg.drop_tolerance);
        let cache = ReducedCache::build(model, &basis);
        (basis, cache)
    }

    /// Adds an atom at `xi`: one full solve with sensitivities, a new local
    /// basis, and rebuilt bases for atoms whose neighbour sets change.
    pub fn add_atom(&mut self, model: &ForwardModel, xi: &[f64]) -> Result<usize> {
        if !self.domain.contains(xi) {
            return Err(Error::OutsideDomain(xi.to_vec()));
        }
        if self.min_distance(xi) <= DUPLICATE_TOLERANCE {
            return Err(Error::DuplicateAtom(xi.to_vec()));
        }
        if self.atoms.len() >= self.cfg.atom_budget {
            return Err(Error::AtomBudgetExceeded(self.cfg.atom_budget));
        }
        let (snapshot, gradient) = model.solve_with_sensitivity(xi)?;
        let new = self.atoms.len();
        self.atoms.push(Atom {
            location: xi.to_vec(),
            snapshot,
            gradient,
            epoch: self.epoch,
            neighbors: Vec::new(),
            basis: DMatrix::zeros(model.dofs(), 0),
            cache: ReducedCache::build(model, &DMatrix::zeros(model.dofs(), 0)),
            version: 0,
        });
        self.atoms[new].neighbors = self.nearest_others(new);

        let n = self.cfg.neighbors;
        let mut changed = vec![new];
        for k in 0..new {
            let d_new = self.distance(&self.atoms[k].location, new);
            let nbrs = &self.atoms[k].neighbors;
            let enters = if nbrs.len() < n {
                true
            } else {
                // the new atom has the largest index, so it must be strictly closer
                n > 0 && d_new < self.distance(&self.atoms[k].location, nbrs[n - 1])
            };
            if enters {
                let loc = self.atoms[k].location.clone();
                let pos = self.atoms[k]
                    .neighbors
                    .iter()
                    .position(|&j| self.distance(&loc, j) > d_new)
                    .unwrap_or(self.atoms[k].neighbors.len());
                let nbrs = &mut self.atoms[k].neighbors;
                nbrs.insert(pos, new);
                nbrs.truncate(n);
                changed.push(k);
            }
        }
        let rebuilt: Vec<(usize, DMatrix<f64>, ReducedCache)> = changed
            .par_iter()
            .map(|&k| {
                let (b, c) = self.build_basis(model, k);
                (k, b, c)
            })
            .collect();
        for (k, b, c) in rebuilt {
            let atom = &mut self.atoms[k];
            atom.basis = b;
            atom.cache = c;
            atom.version += 1;
        }
        Ok(new)
    }

    pub(crate) fn atom_version(&self, k: usize) -> u64 {
        self.atoms[k].version
    }

    /// Galerkin solve in the cell of atom `k`.
    pub fn reduced_solve_in(&self, model: &ForwardModel, k: usize, xi: &[f64]) -> Result<ReducedSolution> {
        let cache = &self.atoms[k].cache;
        let r = self.atoms[k].basis.ncols();
        let theta_a: Vec<f64> = model.operator_coefficients().iter().map(|c| c.eval(xi)).collect();
        let theta_f: Vec<f64> = model.rhs_coefficients().iter().map(|c| c.eval(xi)).collect();
        let mut a = DMatrix::zeros(r, r);
        for (t, ap) in theta_a.iter().zip(&cache.operator) {
            a += ap * *t;
        }
        let mut b = DVector::zeros(r);
        for (t, fq) in theta_f.iter().zip(&cache.rhs) {
            b.axpy(*t, fq, 1.0);
        }
        let c = if r == 0 {
            DVector::zeros(0)
        } else {
            a.lu()
                .solve(&b)
                .filter(|c| c.iter().all(|v| v.is_finite()))
                .ok_or(Error::SingularReducedSystem { atom: k })?
        };
        let q = theta_f.len();
        let mut y = DVector::zeros(q + theta_a.len() * r);
        for (i, t) in theta_f.iter().enumerate() {
            y[i] = *t;
        }
        for (p, t) in theta_a.iter().enumerate() {
            y.rows_mut(q + p * r, r).copy_from(&(&c * -*t));
        }
        let residual = (&cache.residual_factor * y).norm();
        self.reduced_solves.fetch_add(1, Ordering::Relaxed);
        Ok(ReducedSolution {
            atom: k,
            observed: &cache.observation * &c,
            coefficients: c,
            residual,
        })
    }

    pub fn reduced_solve(&self, model: &ForwardModel, xi: &[f64]) -> Result<ReducedSolution> {
        let k = self.nearest_atom(xi)?;
        self.reduced_solve_in(model, k, xi)
    }

    /// `ū = Φ_k c` in the full space.
    pub fn reconstruct(&self, solution: &ReducedSolution) -> DVector<f64> {
        &self.atoms[solution.atom].basis * &solution.coefficients
    }

    /// ε_u(ξ) = residual / β_LB.
    pub fn error_indicator_u(&self, model: &ForwardModel, xi: &[f64]) -> Result<f64> {
        Ok(self.reduced_solve(model, xi)?.residual / self.stability)
    }

    pub(crate) fn evaluate_in(
        &self,
        model: &ForwardModel,
        k: usize,
        xi: &[f64],
        obs: &ObservationSet,
    ) -> Result<SurrogateEval> {
        let sol = self.reduced_solve_in(model, k, xi)?;
        let state_indicator = sol.residual / self.stability;
        let loss = model.loss_of_prediction(&sol.observed, obs);
        let indicator = loss_error_bound(
            self.loss_kind,
            self.observation_norm,
            self.observation_l1_norm,
            &sol.observed,
            obs,
            state_indicator,
        );
        Ok(SurrogateEval {
            atom: k,
            loss,
            indicator,
            state_indicator,
        })
    }

    /// Surrogate loss l̄(ξ) and indicator ε_l(ξ).
    pub fn surrogate_loss(
        &self,
        model: &ForwardModel,
        xi: &[f64],
        obs: &ObservationSet,
    ) -> Result<SurrogateEval> {
        let k = self.nearest_atom(xi)?;
        self.evaluate_in(model, k, xi, obs)
    }

    /// Atom table: `index,epoch,xi_1..xi_M,basis_dim`.
    pub fn write_atoms_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let m = self.domain.dim();
        let mut header = vec!["index".to_string(), "epoch".to_string()];
        header.extend((1..=m).map(|j| format!("xi_{j}")));
        header.push("basis_dim".into());
        writeln!(w, "{}", header.join(","))?;
        for (k, a) in self.atoms.iter().enumerate() {
            let mut row = vec![k.to_string(), a.epoch.to_string()];
            row.extend(a.location.iter().map(|v| v.to_string()));
            row.push(a.basis.ncols().to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}
