use nalgebra::{DMatrix, DVector};

use crate::forward::ForwardModel;

/// Modified Gram–Schmidt with reorthogonalization. A candidate is dropped
/// when less than `drop_tolerance` of its original norm survives, so a
/// rank-deficient candidate set yields a smaller basis instead of a
/// perturbed one.
pub(crate) fn orthonormalize(
    rows: usize,
    candidates: impl IntoIterator<Item = DVector<f64>>,
    drop_tolerance: f64,
) -> DMatrix<f64> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for mut v in candidates {
        let original = v.norm();
        if original == 0.0 || !original.is_finite() {
            continue;
        }
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&v);
                v.axpy(-proj, q, 1.0);
            }
        }
        let remaining = v.norm();
        if remaining > drop_tolerance * original {
            basis.push(v / remaining);
        }
    }
    if basis.is_empty() {
        DMatrix::zeros(rows, 0)
    } else {
        DMatrix::from_columns(&basis)
    }
}

/// Projections of every affine term onto one local basis.
#[derive(Debug, Clone)]
pub(crate) struct ReducedCache {
    /// `Φᵀ A_p Φ`.
    pub operator: Vec<DMatrix<f64>>,
    /// `Φᵀ f_q`.
    pub rhs: Vec<DVector<f64>>,
    /// `D Φ`.
    pub observation: DMatrix<f64>,
    /// Triangular factor of `[f_1 … f_Q | A_1 Φ … A_P Φ]`; the full residual
    /// for reduced coefficients `c` is that matrix times
    /// `[θ_f; −θ_1 c; …; −θ_P c]`, whose norm equals the norm of this factor
    /// times the same vector. Using the factor instead of the Gram matrix
    /// avoids cancellation when the residual is small.
    pub residual_factor: DMatrix<f64>,
}

impl ReducedCache {
    pub fn build(model: &ForwardModel, basis: &DMatrix<f64>) -> Self {
        let n = model.dofs();
        let r = basis.ncols();
        let q_terms = model.n_rhs_terms();
        let p_terms = model.n_operator_terms();
        let mut stacked = DMatrix::zeros(n, q_terms + p_terms * r);
        let mut rhs = Vec::with_capacity(q_terms);
        for q in 0..q_terms {
            let f = model.rhs_term(q);
            stacked.set_column(q, f);
            rhs.push(basis.tr_mul(f));
        }
        let mut operator = Vec::with_capacity(p_terms);
        for p in 0..p_terms {
            let a_phi = model.operator_term(p).mul_dense(basis);
            operator.push(basis.tr_mul(&a_phi));
            stacked.columns_mut(q_terms + p * r, r).copy_from(&a_phi);
        }
        // min(n, k) × k; wide only on toy meshes
        let residual_factor = stacked.qr().r();
        Self {
            operator,
            rhs,
            observation: model.observation_matrix().mul_dense(basis),
            residual_factor,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_candidates_are_dropped() {
        let a = DVector::from_vec(vec![1.0, 2.0, 0.0, 1.0]);
        let b = DVector::from_vec(vec![0.0, 1.0, 1.0, 0.0]);
        let basis = orthonormalize(4, [a.clone(), b.clone(), a * 3.0, b + DVector::zeros(4)], 1e-10);
        assert_eq!(basis.ncols(), 2);
        let gram = basis.tr_mul(&basis);
        assert!((gram - DMatrix::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn zero_candidates_give_empty_basis() {
        let basis = orthonormalize(3, [DVector::zeros(3)], 1e-10);
        assert_eq!(basis.shape(), (3, 0));
    }
}
