//! Affinely parametrized linear forward models.
//!
//! A model is stored as `A(ξ) = Σ_p θ_p(ξ) A_p` and `f(ξ) = Σ_q θ_q(ξ) f_q`
//! with affine coefficient maps `θ(ξ) = c + a·ξ`. All operator terms share
//! one sparsity pattern so that assembling `A(ξ)` is a weighted sum of
//! value arrays. Each preset also keeps a direct element-by-element
//! assembly path that evaluates the physical coefficients at `ξ`; it is
//! used to verify the affine decomposition.

pub mod adv1d;
pub mod adv2d;
mod data;
pub mod elast2d;
pub mod q1;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adv1d::Adv1dConfig;
pub use adv2d::Adv2dConfig;
pub use data::ObservationSet;
pub use elast2d::{Elast2dConfig, ModulusLayout};

use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, BandedLu, CsrMatrix, SparsePattern};
use crate::prior::ParameterDomain;

/// Affine map `θ(ξ) = constant + linear · ξ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineCoefficient {
    pub constant: f64,
    pub linear: Vec<f64>,
}

impl AffineCoefficient {
    pub fn constant(c: f64, dim: usize) -> Self {
        Self {
            constant: c,
            linear: vec![0.0; dim],
        }
    }

    /// `c + slope * ξ_j`.
    pub fn coordinate(c: f64, j: usize, slope: f64, dim: usize) -> Self {
        let mut linear = vec![0.0; dim];
        linear[j] = slope;
        Self { constant: c, linear }
    }

    pub fn eval(&self, xi: &[f64]) -> f64 {
        self.constant + self.linear.iter().zip(xi).map(|(a, x)| a * x).sum::<f64>()
    }

    pub fn derivative(&self, j: usize) -> f64 {
        self.linear[j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    SquaredL2,
    L1,
    L2,
}

impl LossKind {
    /// Single-datum loss of a residual vector.
    pub fn eval(&self, residual: impl IntoIterator<Item = f64>) -> f64 {
        let it = residual.into_iter();
        match self {
            LossKind::SquaredL2 => it.map(|r| r * r).sum(),
            LossKind::L1 => it.map(f64::abs).sum(),
            LossKind::L2 => it.map(|r| r * r).sum::<f64>().sqrt(),
        }
    }
}

/// Which test problem a model was assembled from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case")]
pub enum Preset {
    Adv1d(Adv1dConfig),
    Adv2d(Adv2dConfig),
    Elast2d(Elast2dConfig),
}

impl Preset {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "adv1d" => Ok(Preset::Adv1d(Adv1dConfig::default())),
            "adv2d" => Ok(Preset::Adv2d(Adv2dConfig::default())),
            "elast2d" | "elast2d-layered" => Ok(Preset::Elast2d(Elast2dConfig::default())),
            "elast2d-inclusion" => Ok(Preset::Elast2d(Elast2dConfig {
                layout: ModulusLayout::Inclusion,
                ..Elast2dConfig::default()
            })),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }
}

/// Sparse entry `(row, col, value)`.
pub type Triplet = (usize, usize, f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshInfo {
    pub description: String,
    pub cells: Vec<usize>,
    pub dofs: usize,
}

/// Raw pieces a preset hands to [`ForwardModel::from_parts`].
pub(crate) struct ModelParts {
    pub name: String,
    pub domain: ParameterDomain,
    pub truth: Vec<f64>,
    pub dofs: usize,
    pub operator_terms: Vec<(AffineCoefficient, Vec<Triplet>)>,
    pub rhs_terms: Vec<(AffineCoefficient, DVector<f64>)>,
    pub observation: Vec<Triplet>,
    pub channels: Vec<String>,
    pub loss_kind: LossKind,
    pub mesh: MeshInfo,
    pub preset: Preset,
}

/// Shared, thread-safe count of full-order solves.
#[derive(Debug, Default, Clone)]
pub struct SolveCounter(Arc<AtomicU64>);

impl SolveCounter {
    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    fn bump(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }
}

#[derive(Debug, Clone)]
pub struct ForwardModel {
    pub name: String,
    pub domain: ParameterDomain,
    /// Default truth used for synthetic data.
    pub truth: Vec<f64>,
    pub loss_kind: LossKind,
    pub mesh: MeshInfo,
    pub preset: Preset,
    pub channels: Vec<String>,
    pattern: Arc<SparsePattern>,
    bandwidth: (usize, usize),
    operator_coeffs: Vec<AffineCoefficient>,
    operator_values: Vec<Vec<f64>>,
    rhs_coeffs: Vec<AffineCoefficient>,
    rhs_terms: Vec<DVector<f64>>,
    observation: CsrMatrix,
    observation_norm: f64,
    observation_l1_norm: f64,
    full_solves: SolveCounter,
    audit_solves: SolveCounter,
}

/// Relative residual every full solve must satisfy.
pub const SOLVE_TOLERANCE: f64 = 1e-10;

impl ForwardModel {
    pub(crate) fn from_parts(parts: ModelParts) -> Result<Self> {
        let n = parts.dofs;
        let pattern = Arc::new(SparsePattern::from_entries(
            n,
            n,
            parts
                .operator_terms
                .iter()
                .flat_map(|(_, t)| t.iter().map(|&(i, j, _)| (i, j))),
        ));
        let bandwidth = pattern.bandwidth();
        let (operator_coeffs, operator_values) = parts
            .operator_terms
            .iter()
            .map(|(c, t)| (c.clone(), pattern.values_from(t)))
            .unzip();
        let (rhs_coeffs, rhs_terms) = parts.rhs_terms.into_iter().unzip();
        let observation = CsrMatrix::from_triplets(parts.channels.len(), n, &parts.observation);
        let dense_obs = observation.to_dense();
        let observation_norm = spectral_norm(&dense_obs);
        // ‖D x‖_1 ≤ min(Σ_i ‖row_i‖_2, √D ‖D‖_2) ‖x‖_2
        let row_sum: f64 = dense_obs.row_iter().map(|r| r.norm()).sum();
        let observation_l1_norm = row_sum.min((dense_obs.nrows() as f64).sqrt() * observation_norm);
        let model = Self {
            name: parts.name,
            domain: parts.domain,
            truth: parts.truth,
            loss_kind: parts.loss_kind,
            mesh: parts.mesh,
            preset: parts.preset,
            channels: parts.channels,
            pattern,
            bandwidth,
            operator_coeffs,
            operator_values,
            rhs_coeffs,
            rhs_terms,
            observation,
            observation_norm,
            observation_l1_norm,
            full_solves: SolveCounter::default(),
            audit_solves: SolveCounter::default(),
        };
        model.check_registration()?;
        Ok(model)
    }

    /// Invertibility at the box center and a few deterministic interior points.
    fn check_registration(&self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut points = vec![self.domain.center()];
        points.extend((0..3).map(|_| self.domain.sample(&mut rng)));
        for xi in points {
            BandedLu::factor_with_bandwidth(&self.operator_at(&xi), self.bandwidth.0, self.bandwidth.1)?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn dofs(&self) -> usize {
        self.pattern.nrows
    }

    pub fn n_observations(&self) -> usize {
        self.observation.nrows()
    }

    pub fn n_operator_terms(&self) -> usize {
        self.operator_values.len()
    }

    pub fn n_rhs_terms(&self) -> usize {
        self.rhs_terms.len()
    }

    pub fn operator_coefficients(&self) -> &[AffineCoefficient] {
        &self.operator_coeffs
    }

    pub fn rhs_coefficients(&self) -> &[AffineCoefficient] {
        &self.rhs_coeffs
    }

    pub fn operator_term(&self, p: usize) -> CsrMatrix {
        CsrMatrix {
            pattern: self.pattern.clone(),
            values: self.operator_values[p].clone(),
        }
    }

    pub fn rhs_term(&self, q: usize) -> &DVector<f64> {
        &self.rhs_terms[q]
    }

    pub fn observation_matrix(&self) -> &CsrMatrix {
        &self.observation
    }

    /// Spectral norm of the observation operator.
    pub fn observation_norm(&self) -> f64 {
        self.observation_norm
    }

    /// Upper bound on the Euclidean-to-l1 norm of the observation operator.
    pub fn observation_l1_norm(&self) -> f64 {
        self.observation_l1_norm
    }

    pub fn full_solves(&self) -> &SolveCounter {
        &self.full_solves
    }

    /// Solves spent auditing the surrogate, tallied apart from the solves
    /// the sampler itself needs.
    pub fn audit_solves(&self) -> &SolveCounter {
        &self.audit_solves
    }

    fn combine(&self, coeffs: impl Iterator<Item = f64>) -> CsrMatrix {
        let mut values = vec![0.0; self.pattern.nnz()];
        for (theta, term) in coeffs.zip(&self.operator_values) {
            if theta != 0.0 {
                for (v, t) in values.iter_mut().zip(term) {
                    *v += theta * t;
                }
            }
        }
        CsrMatrix {
            pattern: self.pattern.clone(),
            values,
        }
    }

    /// `A(ξ)` from the affine decomposition.
    pub fn operator_at(&self, xi: &[f64]) -> CsrMatrix {
        self.combine(self.operator_coeffs.iter().map(|c| c.eval(xi)))
    }

    pub fn rhs_at(&self, xi: &[f64]) -> DVector<f64> {
        let mut f = DVector::zeros(self.dofs());
        for (c, t) in self.rhs_coeffs.iter().zip(&self.rhs_terms) {
            f.axpy(c.eval(xi), t, 1.0);
        }
        f
    }

    /// `∂A/∂ξ_j`, constant because the coefficient maps are affine.
    pub fn operator_derivative(&self, j: usize) -> CsrMatrix {
        self.combine(self.operator_coeffs.iter().map(|c| c.derivative(j)))
    }

    pub fn rhs_derivative(&self, j: usize) -> DVector<f64> {
        let mut f = DVector::zeros(self.dofs());
        for (c, t) in self.rhs_coeffs.iter().zip(&self.rhs_terms) {
            f.axpy(c.derivative(j), t, 1.0);
        }
        f
    }

    /// `A(ξ)` and `f(ξ)` assembled element by element from the physical
    /// coefficients, bypassing the affine decomposition.
    pub fn assemble_direct(&self, xi: &[f64]) -> (CsrMatrix, DVector<f64>) {
        let (triplets, rhs) = match &self.preset {
            Preset::Adv1d(cfg) => adv1d::assemble_direct(cfg, xi),
            Preset::Adv2d(cfg) => adv2d::assemble_direct(cfg, xi),
            Preset::Elast2d(cfg) => elast2d::assemble_direct(cfg, xi),
        };
        (CsrMatrix::from_triplets(self.dofs(), self.dofs(), &triplets), rhs)
    }

    fn check_point(&self, xi: &[f64]) -> Result<()> {
        if xi.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: xi.len(),
            });
        }
        if !self.domain.contains(xi) {
            return Err(Error::OutsideDomain(xi.to_vec()));
        }
        Ok(())
    }

    pub fn factor(&self, xi: &[f64]) -> Result<BandedLu> {
        self.check_point(xi)?;
        BandedLu::factor_with_bandwidth(&self.operator_at(xi), self.bandwidth.0, self.bandwidth.1)
    }

    fn checked_solve(&self, lu: &BandedLu, a: &CsrMatrix, f: &DVector<f64>) -> Result<DVector<f64>> {
        let mut u = lu.solve(f);
        let scale = f.norm();
        let mut residual = (f - a.mul_vec(&u)).norm();
        if residual > SOLVE_TOLERANCE * scale {
            // one step of iterative refinement
            let r = f - a.mul_vec(&u);
            u += lu.solve(&r);
            residual = (f - a.mul_vec(&u)).norm();
        }
        if residual > SOLVE_TOLERANCE * scale || !residual.is_finite() {
            return Err(Error::SolverBreakdown {
                residual,
                tolerance: SOLVE_TOLERANCE * scale,
            });
        }
        Ok(u)
    }

    fn solve_uncounted(&self, xi: &[f64]) -> Result<DVector<f64>> {
        self.check_point(xi)?;
        let a = self.operator_at(xi);
        let lu = BandedLu::factor_with_bandwidth(&a, self.bandwidth.0, self.bandwidth.1)?;
        self.checked_solve(&lu, &a, &self.rhs_at(xi))
    }

    /// Full-order state `u(ξ)`; bumps the full-solve counter.
    pub fn solve_full(&self, xi: &[f64]) -> Result<DVector<f64>> {
        let u = self.solve_uncounted(xi)?;
        self.full_solves.bump();
        Ok(u)
    }

    /// Full-order state for verification purposes; bumps the audit counter.
    pub fn solve_audit(&self, xi: &[f64]) -> Result<DVector<f64>> {
        let u = self.solve_uncounted(xi)?;
        self.audit_solves.bump();
        Ok(u)
    }

    fn sensitivity_with(&self, lu: &BandedLu, u: &DVector<f64>) -> DMatrix<f64> {
        let m = self.dim();
        let mut s = DMatrix::zeros(self.dofs(), m);
        for j in 0..m {
            let rhs = self.rhs_derivative(j) - self.operator_derivative(j).mul_vec(u);
            s.set_column(j, &lu.solve(&rhs));
        }
        s
    }

    /// Columns `∂u/∂ξ_j`, solving `A ∂u/∂ξ_j = ∂f/∂ξ_j − (∂A/∂ξ_j) u`.
    pub fn solve_sensitivity(&self, xi: &[f64], u: &DVector<f64>) -> Result<DMatrix<f64>> {
        let lu = self.factor(xi)?;
        Ok(self.sensitivity_with(&lu, u))
    }

    /// State and sensitivities from one factorization; counts as one full solve.
    pub fn solve_with_sensitivity(&self, xi: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.check_point(xi)?;
        let a = self.operator_at(xi);
        let lu = BandedLu::factor_with_bandwidth(&a, self.bandwidth.0, self.bandwidth.1)?;
        let u = self.checked_solve(&lu, &a, &self.rhs_at(xi))?;
        self.full_solves.bump();
        let s = self.sensitivity_with(&lu, &u);
        Ok((u, s))
    }

    pub fn observe(&self, u: &DVector<f64>) -> DVector<f64> {
        self.observation.mul_vec(u)
    }

    /// Cumulative loss `Σ_i ℓ(prediction − d_i)`.
    pub fn loss_of_prediction(&self, prediction: &DVector<f64>, obs: &ObservationSet) -> f64 {
        obs.data
            .iter()
            .map(|d| {
                self.loss_kind
                    .eval(prediction.iter().zip(d.iter()).map(|(p, d)| p - d))
            })
            .sum()
    }

    /// Exact loss via a full solve.
    pub fn loss(&self, xi: &[f64], obs: &ObservationSet) -> Result<f64> {
        let u = self.solve_full(xi)?;
        Ok(self.loss_of_prediction(&self.observe(&u), obs))
    }

    /// Exact loss via an audit solve.
    pub fn audit_loss(&self, xi: &[f64], obs: &ObservationSet) -> Result<f64> {
        let u = self.solve_audit(xi)?;
        Ok(self.loss_of_prediction(&self.observe(&u), obs))
    }

    /// Synthetic data `d_i = D u(ξ*) + ε_i` with per-channel standard
    /// deviation `noise_fraction · rms(d*)`.
    pub fn gen_data(
        &self,
        truth: &[f64],
        noise_fraction: f64,
        replicates: usize,
        seed: u64,
    ) -> Result<ObservationSet> {
        if !(noise_fraction >= 0.0) {
            return Err(Error::InvalidConfig("noise fraction must be nonnegative".into()));
        }
        if replicates == 0 {
            return Err(Error::InvalidConfig("need at least one observation".into()));
        }
        let clean = self.observe(&self.solve_full(truth)?);
        ObservationSet::synthetic(
            &clean,
            noise_fraction,
            replicates,
            seed,
            truth.to_vec(),
            self.channels.clone(),
        )
    }
}

/// Assembles a preset model.
pub fn assemble(preset: &Preset) -> Result<ForwardModel> {
    match preset {
        Preset::Adv1d(cfg) => adv1d::build(cfg),
        Preset::Adv2d(cfg) => adv2d::build(cfg),
        Preset::Elast2d(cfg) => elast2d::build(cfg),
    }
}
