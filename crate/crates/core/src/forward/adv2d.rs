//! 2D advection–diffusion on the unit square with unknown diffusivity and
//! source magnitudes.
//!
//! `-∇·(κ(ξ)∇u) + v·∇u = f(x, ξ)`, `u = 0` on the bottom edge, zero flux
//! elsewhere; `κ = 0.02 + 0.98 ξ1`, `v = 13 (1, 0) + 9 (-x1, x2)` and `f` is
//! the sum of two Gaussian bumps scaled by `10 ξ2` and `5 ξ3`.
//! Bilinear Galerkin elements on a structured grid.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::q1::{DofMap, QuadGrid, QuadPoint};
use super::{AffineCoefficient, LossKind, MeshInfo, ModelParts, Preset};
use crate::error::{Error, Result};
use crate::prior::{ParameterDomain, PriorSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Adv2dConfig {
    pub nx: usize,
    pub ny: usize,
    /// Observation points per direction of the uniform interior grid.
    pub observation_grid: usize,
    pub truth: Vec<f64>,
    pub loss: LossKind,
}

impl Default for Adv2dConfig {
    fn default() -> Self {
        Self {
            nx: 32,
            ny: 32,
            observation_grid: 7,
            truth: vec![0.1, 0.7, 0.5],
            loss: LossKind::L1,
        }
    }
}

const KAPPA_MIN: f64 = 0.02;
const KAPPA_SLOPE: f64 = 0.98;
const SOURCE_SCALE: [f64; 2] = [10.0, 5.0];
const QUAD_ORDER: usize = 3;

fn velocity(x: f64, y: f64) -> (f64, f64) {
    (13.0 - 9.0 * x, 9.0 * y)
}

fn bump(x: f64, y: f64, which: usize) -> f64 {
    match which {
        0 => (-((x - 0.25).powi(2) + (y - 0.5).powi(2)) / 0.25f64.powi(2)).exp(),
        _ => (-((x - 0.75).powi(2) + (y - 0.75).powi(2)) / 0.33f64.powi(2)).exp(),
    }
}

fn diffusion_entry(q: &QuadPoint, a: usize, b: usize) -> f64 {
    q.weight * (q.grad[a][0] * q.grad[b][0] + q.grad[a][1] * q.grad[b][1])
}

fn advection_entry(q: &QuadPoint, a: usize, b: usize) -> f64 {
    let (vx, vy) = velocity(q.x, q.y);
    q.weight * q.shape[a] * (vx * q.grad[b][0] + vy * q.grad[b][1])
}

fn dof_map(grid: &QuadGrid) -> DofMap {
    // bottom edge nodes carry the Dirichlet condition
    DofMap::new(grid.node_count(), |n| n <= grid.nx)
}

fn check(cfg: &Adv2dConfig) -> Result<QuadGrid> {
    if cfg.nx < 2 || cfg.ny < 2 || cfg.observation_grid == 0 {
        return Err(Error::InvalidConfig(
            "adv2d mesh or observation grid too small".into(),
        ));
    }
    Ok(QuadGrid::new(cfg.nx, cfg.ny))
}

pub(crate) fn build(cfg: &Adv2dConfig) -> Result<super::ForwardModel> {
    let grid = check(cfg)?;
    let dofs = dof_map(&grid);
    let dim = 3;
    let mut diffusion = Vec::new();
    let mut advection = Vec::new();
    let mut loads = [DVector::zeros(dofs.count), DVector::zeros(dofs.count)];
    for (ex, ey) in grid.elements() {
        let nodes = grid.element_nodes(ex, ey);
        for q in grid.quadrature(ex, ey, QUAD_ORDER) {
            for a in 0..4 {
                let Some(ia) = dofs.free[nodes[a]] else { continue };
                for (which, load) in loads.iter_mut().enumerate() {
                    load[ia] += q.weight * bump(q.x, q.y, which) * q.shape[a];
                }
                for b in 0..4 {
                    let Some(ib) = dofs.free[nodes[b]] else { continue };
                    diffusion.push((ia, ib, diffusion_entry(&q, a, b)));
                    advection.push((ia, ib, advection_entry(&q, a, b)));
                }
            }
        }
    }
    let [g1, g2] = loads;
    let operator_terms = vec![
        (
            AffineCoefficient::coordinate(KAPPA_MIN, 0, KAPPA_SLOPE, dim),
            diffusion,
        ),
        (AffineCoefficient::constant(1.0, dim), advection),
    ];
    let rhs_terms = vec![
        (AffineCoefficient::coordinate(0.0, 1, SOURCE_SCALE[0], dim), g1),
        (AffineCoefficient::coordinate(0.0, 2, SOURCE_SCALE[1], dim), g2),
    ];

    let points = QuadGrid::interior_points(cfg.observation_grid);
    let mut observation = Vec::new();
    for (k, &(x, y)) in points.iter().enumerate() {
        let (nodes, w) = grid.locate(x, y);
        for a in 0..4 {
            if let Some(i) = dofs.free[nodes[a]] {
                if w[a].abs() > 1e-14 {
                    observation.push((k, i, w[a]));
                }
            }
        }
    }
    let channels = points.iter().map(|(x, y)| format!("u@({x:.4};{y:.4})")).collect();

    let beta = |alpha, beta| PriorSpec::Beta { alpha, beta };
    let domain = ParameterDomain::new(
        vec![0.0; 3],
        vec![1.0; 3],
        vec![beta(1.0, 2.0), beta(3.0, 1.0), beta(3.0, 1.0)],
    )?;
    super::ForwardModel::from_parts(ModelParts {
        name: "adv2d".into(),
        domain,
        truth: cfg.truth.clone(),
        dofs: dofs.count,
        operator_terms,
        rhs_terms,
        observation,
        channels,
        loss_kind: cfg.loss,
        mesh: MeshInfo {
            description: "bilinear quadrilaterals, structured grid".into(),
            cells: vec![cfg.nx, cfg.ny],
            dofs: dofs.count,
        },
        preset: Preset::Adv2d(cfg.clone()),
    })
}

pub(crate) fn assemble_direct(cfg: &Adv2dConfig, xi: &[f64]) -> (Vec<(usize, usize, f64)>, DVector<f64>) {
    let grid = QuadGrid::new(cfg.nx, cfg.ny);
    let dofs = dof_map(&grid);
    let kappa = KAPPA_MIN + KAPPA_SLOPE * xi[0];
    let mut t = Vec::new();
    let mut f = DVector::zeros(dofs.count);
    for (ex, ey) in grid.elements() {
        let nodes = grid.element_nodes(ex, ey);
        for q in grid.quadrature(ex, ey, QUAD_ORDER) {
            let source =
                SOURCE_SCALE[0] * xi[1] * bump(q.x, q.y, 0) + SOURCE_SCALE[1] * xi[2] * bump(q.x, q.y, 1);
            for a in 0..4 {
                let Some(ia) = dofs.free[nodes[a]] else { continue };
                f[ia] += q.weight * source * q.shape[a];
                for b in 0..4 {
                    let Some(ib) = dofs.free[nodes[b]] else { continue };
                    t.push((
                        ia,
                        ib,
                        kappa * diffusion_entry(&q, a, b) + advection_entry(&q, a, b),
                    ));
                }
            }
        }
    }
    (t, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::assemble;

    fn small() -> super::super::ForwardModel {
        assemble(&Preset::Adv2d(Adv2dConfig {
            nx: 12,
            ny: 12,
            ..Default::default()
        }))
        .unwrap()
    }

    #[test]
    fn zero_sources_give_zero_state() {
        let model = small();
        let u = model.solve_full(&[0.4, 0.0, 0.0]).unwrap();
        assert_eq!(u.amax(), 0.0);
    }

    #[test]
    fn source_sensitivity_is_scaled_bump_solve() {
        let model = small();
        let xi = [0.3, 0.6, 0.2];
        let u = model.solve_full(&xi).unwrap();
        let s = model.solve_sensitivity(&xi, &u).unwrap();
        let lu = model.factor(&xi).unwrap();
        let expected = lu.solve(&(model.rhs_term(0) * SOURCE_SCALE[0]));
        assert!((s.column(1) - expected).norm() <= 1e-12 * s.column(1).norm());
    }

    #[test]
    fn observation_grid_size() {
        assert_eq!(small().n_observations(), 49);
    }
}
