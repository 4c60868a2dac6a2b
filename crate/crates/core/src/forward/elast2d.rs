//! Plane-stress linear elasticity with a piecewise-constant Young's modulus.
//!
//! The bottom edge is clamped, the top edge carries a uniform traction and the
//! sides are traction free. The modulus is constant on each of 5 horizontal
//! layers or on each cell of a 3×3 partition (hard-inclusion layout). Only
//! vertical displacements are observed.

use nalgebra::{DVector, Matrix3};
use serde::{Deserialize, Serialize};

use super::q1::{DofMap, QuadGrid, QuadPoint};
use super::{AffineCoefficient, LossKind, MeshInfo, ModelParts, Preset};
use crate::error::{Error, Result};
use crate::prior::{ParameterDomain, PriorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModulusLayout {
    Layered,
    Inclusion,
}

impl ModulusLayout {
    pub fn regions(&self) -> usize {
        match self {
            ModulusLayout::Layered => 5,
            ModulusLayout::Inclusion => 9,
        }
    }

    fn region_of(&self, x: f64, y: f64) -> usize {
        match self {
            ModulusLayout::Layered => ((y * 5.0) as usize).min(4),
            ModulusLayout::Inclusion => {
                let i = ((x * 3.0) as usize).min(2);
                let j = ((y * 3.0) as usize).min(2);
                3 * j + i
            }
        }
    }

    pub fn default_truth(&self) -> Vec<f64> {
        match self {
            ModulusLayout::Layered => vec![2.0, 1.0, 3.0, 1.5, 2.5],
            ModulusLayout::Inclusion => {
                let mut e = vec![1.0; 9];
                e[4] = 5.0;
                e
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Elast2dConfig {
    pub nx: usize,
    pub ny: usize,
    pub layout: ModulusLayout,
    pub poisson_ratio: f64,
    /// Traction applied on the top edge.
    pub traction: [f64; 2],
    pub observation_grid: usize,
    pub truth: Option<Vec<f64>>,
    pub modulus_range: [f64; 2],
    pub loss: LossKind,
}

impl Default for Elast2dConfig {
    fn default() -> Self {
        Self {
            nx: 32,
            ny: 32,
            layout: ModulusLayout::Layered,
            poisson_ratio: 0.3,
            traction: [0.0, -1.0],
            observation_grid: 9,
            truth: None,
            modulus_range: [0.1, 10.0],
            loss: LossKind::SquaredL2,
        }
    }
}

fn constitutive(nu: f64) -> Matrix3<f64> {
    let c = 1.0 / (1.0 - nu * nu);
    Matrix3::new(c, c * nu, 0.0, c * nu, c, 0.0, 0.0, 0.0, c * 0.5 * (1.0 - nu))
}

/// Unit-modulus stiffness contribution of quadrature point `q` for the
/// (node a, component ca) / (node b, component cb) pair.
fn stiffness_entry(q: &QuadPoint, d: &Matrix3<f64>, a: usize, ca: usize, b: usize, cb: usize) -> f64 {
    let strain = |n: usize, c: usize| -> [f64; 3] {
        let [gx, gy] = q.grad[n];
        if c == 0 {
            [gx, 0.0, gy]
        } else {
            [0.0, gy, gx]
        }
    };
    let ba = strain(a, ca);
    let bb = strain(b, cb);
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += ba[i] * d[(i, j)] * bb[j];
        }
    }
    q.weight * s
}

fn dof_map(grid: &QuadGrid) -> DofMap {
    DofMap::new(2 * grid.node_count(), |d| d / 2 <= grid.nx)
}

fn traction_load(cfg: &Elast2dConfig, grid: &QuadGrid, dofs: &DofMap) -> DVector<f64> {
    let mut f = DVector::zeros(dofs.count);
    let h = grid.hx();
    for i in 0..grid.nx {
        for node in [grid.node(i, grid.ny), grid.node(i + 1, grid.ny)] {
            for c in 0..2 {
                if let Some(k) = dofs.free[2 * node + c] {
                    f[k] += 0.5 * h * cfg.traction[c];
                }
            }
        }
    }
    f
}

fn element_triplets(
    grid: &QuadGrid,
    dofs: &DofMap,
    d: &Matrix3<f64>,
    ex: usize,
    ey: usize,
    scale: f64,
    out: &mut Vec<(usize, usize, f64)>,
) {
    let nodes = grid.element_nodes(ex, ey);
    for q in grid.quadrature(ex, ey, 2) {
        for a in 0..4 {
            for ca in 0..2 {
                let Some(i) = dofs.free[2 * nodes[a] + ca] else {
                    continue;
                };
                for b in 0..4 {
                    for cb in 0..2 {
                        let Some(j) = dofs.free[2 * nodes[b] + cb] else {
                            continue;
                        };
                        out.push((i, j, scale * stiffness_entry(&q, d, a, ca, b, cb)));
                    }
                }
            }
        }
    }
}

pub(crate) fn build(cfg: &Elast2dConfig) -> Result<super::ForwardModel> {
    if cfg.nx < 3 || cfg.ny < 5 || cfg.observation_grid == 0 {
        return Err(Error::InvalidConfig(
            "elast2d mesh or observation grid too small".into(),
        ));
    }
    if !(cfg.modulus_range[0] > 0.0 && cfg.modulus_range[0] < cfg.modulus_range[1]) {
        return Err(Error::InvalidConfig(
            "modulus range must be positive and increasing".into(),
        ));
    }
    let grid = QuadGrid::new(cfg.nx, cfg.ny);
    let dofs = dof_map(&grid);
    let d = constitutive(cfg.poisson_ratio);
    let regions = cfg.layout.regions();
    let mut terms: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); regions];
    for (ex, ey) in grid.elements() {
        let (cx, cy) = grid.element_center(ex, ey);
        let r = cfg.layout.region_of(cx, cy);
        element_triplets(&grid, &dofs, &d, ex, ey, 1.0, &mut terms[r]);
    }
    let operator_terms = terms
        .into_iter()
        .enumerate()
        .map(|(r, t)| (AffineCoefficient::coordinate(0.0, r, 1.0, regions), t))
        .collect();
    let rhs_terms = vec![(
        AffineCoefficient::constant(1.0, regions),
        traction_load(cfg, &grid, &dofs),
    )];

    let points = QuadGrid::interior_points(cfg.observation_grid);
    let mut observation = Vec::new();
    for (k, &(x, y)) in points.iter().enumerate() {
        let (nodes, w) = grid.locate(x, y);
        for a in 0..4 {
            if let Some(i) = dofs.free[2 * nodes[a] + 1] {
                if w[a].abs() > 1e-14 {
                    observation.push((k, i, w[a]));
                }
            }
        }
    }
    let channels = points
        .iter()
        .map(|(x, y)| format!("uy@({x:.4};{y:.4})"))
        .collect();

    let truth = cfg.truth.clone().unwrap_or_else(|| cfg.layout.default_truth());
    if truth.len() != regions {
        return Err(Error::DimensionMismatch {
            expected: regions,
            got: truth.len(),
        });
    }
    let domain = ParameterDomain::new(
        vec![cfg.modulus_range[0]; regions],
        vec![cfg.modulus_range[1]; regions],
        vec![
            PriorSpec::Beta {
                alpha: 1.0,
                beta: 3.0
            };
            regions
        ],
    )?;
    let name = match cfg.layout {
        ModulusLayout::Layered => "elast2d-layered",
        ModulusLayout::Inclusion => "elast2d-inclusion",
    };
    super::ForwardModel::from_parts(ModelParts {
        name: name.into(),
        domain,
        truth,
        dofs: dofs.count,
        operator_terms,
        rhs_terms,
        observation,
        channels,
        loss_kind: cfg.loss,
        mesh: MeshInfo {
            description: "bilinear quadrilaterals, plane stress".into(),
            cells: vec![cfg.nx, cfg.ny],
            dofs: dofs.count,
        },
        preset: Preset::Elast2d(cfg.clone()),
    })
}

pub(crate) fn assemble_direct(cfg: &Elast2dConfig, xi: &[f64]) -> (Vec<(usize, usize, f64)>, DVector<f64>) {
    let grid = QuadGrid::new(cfg.nx, cfg.ny);
    let dofs = dof_map(&grid);
    let d = constitutive(cfg.poisson_ratio);
    let mut t = Vec::new();
    for (ex, ey) in grid.elements() {
        let (cx, cy) = grid.element_center(ex, ey);
        let modulus = xi[cfg.layout.region_of(cx, cy)];
        element_triplets(&grid, &dofs, &d, ex, ey, modulus, &mut t);
    }
    (t, traction_load(cfg, &grid, &dofs))
}
