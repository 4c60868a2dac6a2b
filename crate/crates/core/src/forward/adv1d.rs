//! 1D advection–diffusion with a two-piece advection field.
//!
//! `-ν u'' + b(x, ξ) u' = f` on (0, 1), `u(0) = u(1) = 0`, with
//! `b = b1 + 2ξ1` on [0, 0.5) and `b = b2 + 2ξ2` on [0.5, 1]. Second-order
//! central differences; the node at the interface carries the mean of the
//! two advection values, which keeps the scheme second order across the jump.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{AffineCoefficient, LossKind, MeshInfo, ModelParts, Preset};
use crate::error::{Error, Result};
use crate::prior::{ParameterDomain, PriorSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Adv1dConfig {
    pub cells: usize,
    pub diffusivity: f64,
    pub b1: f64,
    pub b2: f64,
    pub source: f64,
    pub observation_points: Vec<f64>,
    pub truth: Vec<f64>,
    pub loss: LossKind,
}

impl Default for Adv1dConfig {
    fn default() -> Self {
        Self {
            cells: 128,
            diffusivity: 0.1,
            b1: -0.5,
            b2: -0.2,
            source: 1.0,
            observation_points: vec![0.1, 0.5, 0.9],
            truth: vec![0.2, 0.7],
            loss: LossKind::SquaredL2,
        }
    }
}

const INTERFACE: f64 = 0.5;

/// Share of the left advection value at node `x`.
fn left_share(x: f64, h: f64) -> f64 {
    if (x - INTERFACE).abs() < 1e-9 * h {
        0.5
    } else if x < INTERFACE {
        1.0
    } else {
        0.0
    }
}

fn push_row(t: &mut Vec<(usize, usize, f64)>, r: usize, n: usize, diag: f64, lower: f64, upper: f64) {
    if diag != 0.0 {
        t.push((r, r, diag));
    }
    if r > 0 && lower != 0.0 {
        t.push((r, r - 1, lower));
    }
    if r + 1 < n && upper != 0.0 {
        t.push((r, r + 1, upper));
    }
}

pub(crate) fn build(cfg: &Adv1dConfig) -> Result<super::ForwardModel> {
    if cfg.cells < 4 {
        return Err(Error::InvalidConfig("adv1d needs at least 4 cells".into()));
    }
    let n = cfg.cells - 1;
    let h = 1.0 / cfg.cells as f64;
    let dim = 2;
    let mut diffusion = Vec::new();
    let mut left = Vec::new();
    let mut right = Vec::new();
    for r in 0..n {
        let x = (r + 1) as f64 * h;
        let nu = cfg.diffusivity / (h * h);
        push_row(&mut diffusion, r, n, 2.0 * nu, -nu, -nu);
        let s = left_share(x, h);
        let c = 1.0 / (2.0 * h);
        push_row(&mut left, r, n, 0.0, -c * s, c * s);
        push_row(&mut right, r, n, 0.0, -c * (1.0 - s), c * (1.0 - s));
    }
    let operator_terms = vec![
        (AffineCoefficient::constant(1.0, dim), diffusion),
        (AffineCoefficient::coordinate(cfg.b1, 0, 2.0, dim), left),
        (AffineCoefficient::coordinate(cfg.b2, 1, 2.0, dim), right),
    ];
    let rhs_terms = vec![(
        AffineCoefficient::constant(1.0, dim),
        DVector::from_element(n, cfg.source),
    )];

    let mut observation = Vec::new();
    for (k, &x) in cfg.observation_points.iter().enumerate() {
        if !(x > 0.0 && x < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "observation point {x} outside (0, 1)"
            )));
        }
        let s = x / h;
        let node = (s.floor() as usize).min(cfg.cells - 1);
        let t = s - node as f64;
        for (nd, w) in [(node, 1.0 - t), (node + 1, t)] {
            if nd >= 1 && nd <= n && w.abs() > 1e-14 {
                observation.push((k, nd - 1, w));
            }
        }
    }
    let channels = cfg.observation_points.iter().map(|x| format!("u@{x}")).collect();

    let domain = ParameterDomain::new(vec![0.0; 2], vec![1.0; 2], vec![PriorSpec::Uniform; 2])?;
    super::ForwardModel::from_parts(ModelParts {
        name: "adv1d".into(),
        domain,
        truth: cfg.truth.clone(),
        dofs: n,
        operator_terms,
        rhs_terms,
        observation,
        channels,
        loss_kind: cfg.loss,
        mesh: MeshInfo {
            description: "central finite differences on a uniform grid".into(),
            cells: vec![cfg.cells],
            dofs: n,
        },
        preset: Preset::Adv1d(cfg.clone()),
    })
}

/// Advection speed evaluated directly at node `x`.
fn advection(cfg: &Adv1dConfig, x: f64, h: f64, xi: &[f64]) -> f64 {
    let bl = cfg.b1 + 2.0 * xi[0];
    let br = cfg.b2 + 2.0 * xi[1];
    let s = left_share(x, h);
    s * bl + (1.0 - s) * br
}

pub(crate) fn assemble_direct(cfg: &Adv1dConfig, xi: &[f64]) -> (Vec<(usize, usize, f64)>, DVector<f64>) {
    let n = cfg.cells - 1;
    let h = 1.0 / cfg.cells as f64;
    let mut t = Vec::with_capacity(3 * n);
    for r in 0..n {
        let x = (r + 1) as f64 * h;
        let b = advection(cfg, x, h, xi);
        let nu = cfg.diffusivity / (h * h);
        let c = b / (2.0 * h);
        push_row(&mut t, r, n, 2.0 * nu, -nu - c, -nu + c);
    }
    (t, DVector::from_element(n, cfg.source))
}
