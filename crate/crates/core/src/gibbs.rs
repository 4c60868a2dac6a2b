//! Weighted particle sets and the Gibbs update `ρ ∝ exp(−W l) ρ_0`.

use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::{ForwardModel, ObservationSet};
use crate::prior::ParameterDomain;

/// Tolerance on `Σ w = 1`.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub generation: usize,
}

impl ParticleSet {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>, generation: usize) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidConfig(
                "a particle set needs at least two points".into(),
            ));
        }
        if points.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: weights.len(),
            });
        }
        let dim = points[0].len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidConfig("particles differ in dimension".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE * weights.len().max(1) as f64 {
            return Err(Error::InvalidConfig(format!("weights sum to {total}, not 1")));
        }
        Ok(Self {
            points,
            weights,
            generation,
        })
    }

    pub fn uniform(points: Vec<Vec<f64>>, generation: usize) -> Result<Self> {
        let m = points.len();
        Self::new(points, vec![1.0 / m as f64; m], generation)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn ess(&self) -> f64 {
        ess(&self.weights)
    }

    /// Weighted mean of each coordinate.
    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim()];
        for (p, w) in self.points.iter().zip(&self.weights) {
            for (m, x) in mean.iter_mut().zip(p) {
                *m += w * x;
            }
        }
        mean
    }

    /// Sum of per-coordinate weighted variances.
    pub fn covariance_trace(&self) -> f64 {
        let mean = self.mean();
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * p.iter().zip(&mean).map(|(x, m)| (x - m).powi(2)).sum::<f64>())
            .sum()
    }

    /// Weighted empirical CDF of coordinate `j` at `x`.
    pub fn marginal_cdf(&self, j: usize, x: f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .filter(|(p, _)| p[j] <= x)
            .map(|(_, w)| w)
            .sum::<f64>()
            .min(1.0)
    }

    /// Columns `xi_1..xi_M,weight,generation`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header: Vec<String> = (1..=self.dim()).map(|j| format!("xi_{j}")).collect();
        header.push("weight".into());
        header.push("generation".into());
        writeln!(w, "{}", header.join(","))?;
        for (p, wt) in self.points.iter().zip(&self.weights) {
            let mut row: Vec<String> = p.iter().map(|v| v.to_string()).collect();
            row.push(wt.to_string());
            row.push(self.generation.to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty CSV".into()))??;
        let cols = header.split(',').count();
        if cols < 3 {
            return Err(Error::Parse(
                "particle CSV needs xi, weight and generation".into(),
            ));
        }
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut generation = 0;
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols {
                return Err(Error::Parse(format!("row {} has {} fields", k + 1, fields.len())));
            }
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: {e}", k + 1)))
            };
            points.push(
                fields[..cols - 2]
                    .iter()
                    .map(|s| num(s))
                    .collect::<Result<Vec<f64>>>()?,
            );
            weights.push(num(fields[cols - 2])?);
            generation = fields[cols - 1]
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("row {}: {e}", k + 1)))?;
        }
        // tolerate the rounding of a decimal round trip
        let total: f64 = weights.iter().sum();
        if total > 0.0 {
            weights.iter_mut().for_each(|w| *w /= total);
        }
        Self::new(points, weights, generation)
    }
}

/// `w_i exp(−ΔW l_i) / Σ_k w_k exp(−ΔW l_k)`, shifted by the smallest loss
/// among particles with positive weight.
pub fn reweight_weights(weights: &[f64], losses: &[f64], dw: f64) -> Result<Vec<f64>> {
    if weights.len() != losses.len() {
        return Err(Error::DimensionMismatch {
            expected: weights.len(),
            got: losses.len(),
        });
    }
    if !(dw >= 0.0) || !dw.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "weight increment {dw} must be >= 0"
        )));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::InvalidConfig("losses must be finite".into()));
    }
    if dw == 0.0 {
        return Ok(weights.to_vec());
    }
    let shift = weights
        .iter()
        .zip(losses)
        .filter(|(w, _)| **w > 0.0)
        .map(|(_, l)| *l)
        .fold(f64::INFINITY, f64::min);
    let mut out: Vec<f64> = weights
        .iter()
        .zip(losses)
        .map(|(w, l)| {
            if *w > 0.0 {
                w * (-dw * (l - shift)).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = out.iter().sum();
    assert!(total > 0.0, "the minimum-loss particle keeps its weight");
    out.iter_mut().for_each(|w| *w /= total);
    Ok(out)
}

pub fn reweight(particles: &ParticleSet, losses: &[f64], dw: f64) -> Result<ParticleSet> {
    Ok(ParticleSet {
        points: particles.points.clone(),
        weights: reweight_weights(&particles.weights, losses, dw)?,
        generation: particles.generation,
    })
}

/// Effective sample size `1 / Σ w²`.
pub fn ess(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Per-coordinate weighted mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Relative variance floor, in units of the squared box width.
pub const VARIANCE_FLOOR: f64 = 1e-12;

pub fn empirical_moments(particles: &ParticleSet, domain: &ParameterDomain) -> Moments {
    let mean = particles.mean();
    let mut variance = vec![0.0; mean.len()];
    for (p, w) in particles.points.iter().zip(&particles.weights) {
        for ((v, x), m) in variance.iter_mut().zip(p).zip(&mean) {
            *v += w * (x - m).powi(2);
        }
    }
    for (j, v) in variance.iter_mut().enumerate() {
        *v = v.max(VARIANCE_FLOOR * domain.width(j).powi(2));
    }
    Moments { mean, variance }
}

/// `Σ p log(p / q)`; infinite when `p` puts mass where `q` has none.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| if *b > 0.0 { a * (a / b).ln() } else { f64::INFINITY })
        .sum::<f64>()
        .max(0.0)
}

/// KL divergence of the surrogate-reweighted set from the exact-reweighted one.
pub fn kl_reweighted(particles: &ParticleSet, l_exact: &[f64], l_surrogate: &[f64], w: f64) -> Result<f64> {
    let exact = reweight_weights(&particles.weights, l_exact, w)?;
    let surrogate = reweight_weights(&particles.weights, l_surrogate, w)?;
    Ok(kl_divergence(&surrogate, &exact))
}

/// Largest tensor grid the oracle accepts.
pub const GRID_CAP: usize = 1_000_000;

/// Gibbs posterior evaluated on a tensor grid spanning the box.
#[derive(Debug, Clone)]
pub struct GridPosterior {
    pub axes: Vec<Vec<f64>>,
    /// Normalized density at each node, first coordinate fastest.
    pub density: Vec<f64>,
    pub losses: Vec<f64>,
    /// Marginal CDF of each coordinate at the axis nodes.
    pub marginal_cdfs: Vec<Vec<f64>>,
}

fn trapezoid_weights(axis: &[f64]) -> Vec<f64> {
    let n = axis.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { axis[i] - axis[i - 1] } else { 0.0 };
            let right = if i + 1 < n { axis[i + 1] - axis[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

fn unravel(mut flat: usize, sizes: &[usize]) -> Vec<usize> {
    sizes
        .iter()
        .map(|&s| {
            let i = flat % s;
            flat /= s;
            i
        })
        .collect()
}

impl GridPosterior {
    /// Normalizes an unnormalized nodal density with the trapezoid rule and
    /// forms the marginal CDFs. Nodes are ordered first coordinate fastest.
    pub fn from_density(axes: Vec<Vec<f64>>, mut density: Vec<f64>, losses: Vec<f64>) -> Result<Self> {
        let nodes: Vec<usize> = axes.iter().map(Vec::len).collect();
        let total: usize = nodes.iter().product();
        if density.len() != total || losses.len() != total {
            return Err(Error::DimensionMismatch {
                expected: total,
                got: density.len(),
            });
        }
        let m = axes.len();
        let tw: Vec<Vec<f64>> = axes.iter().map(|a| trapezoid_weights(a)).collect();
        let cell_weight = |flat: usize| -> f64 {
            unravel(flat, &nodes)
                .into_iter()
                .zip(&tw)
                .map(|(i, t)| t[i])
                .product()
        };
        let z: f64 = (0..total).map(|k| density[k] * cell_weight(k)).sum();
        if !(z > 0.0) || !z.is_finite() {
            return Err(Error::InvalidConfig("grid posterior has zero mass".into()));
        }
        density.iter_mut().for_each(|d| *d /= z);
        let marginal_cdfs = (0..m)
            .map(|j| {
                let mut marginal = vec![0.0; nodes[j]];
                for k in 0..total {
                    let idx = unravel(k, &nodes);
                    let others: f64 = (0..m).filter(|&i| i != j).map(|i| tw[i][idx[i]]).product();
                    marginal[idx[j]] += density[k] * others;
                }
                let axis = &axes[j];
                let mut cdf = vec![0.0; nodes[j]];
                for i in 1..nodes[j] {
                    cdf[i] = cdf[i - 1] + 0.5 * (marginal[i] + marginal[i - 1]) * (axis[i] - axis[i - 1]);
                }
                let end = cdf[nodes[j] - 1];
                cdf.iter_mut().for_each(|c| *c /= end);
                cdf
            })
            .collect();
        Ok(GridPosterior {
            axes,
            density,
            losses,
            marginal_cdfs,
        })
    }

    /// Nodal table `xi_1..xi_M,density,loss`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let cols: Vec<String> = (1..=self.axes.len()).map(|j| format!("xi_{j}")).collect();
        writeln!(w, "{},density,loss", cols.join(","))?;
        for k in 0..self.density.len() {
            let x: Vec<String> = self.node(k).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{},{}", x.join(","), self.density[k], self.losses[k])?;
        }
        Ok(())
    }

    /// Reads a table written by [`GridPosterior::write_csv`].
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty CSV".into()))??;
        let m = header.split(',').count().saturating_sub(2);
        if m == 0 {
            return Err(Error::Parse("grid table needs coordinate columns".into()));
        }
        let mut rows = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != m + 2 {
                return Err(Error::Parse(format!("expected {} columns", m + 2)));
            }
            rows.push(row);
        }
        let mut axes: Vec<Vec<f64>> = vec![Vec::new(); m];
        for row in &rows {
            for j in 0..m {
                if !axes[j].contains(&row[j]) {
                    axes[j].push(row[j]);
                }
            }
        }
        axes.iter_mut().for_each(|a| a.sort_by(f64::total_cmp));
        let density = rows.iter().map(|r| r[m]).collect();
        let losses = rows.iter().map(|r| r[m + 1]).collect();
        Self::from_density(axes, density, losses)
    }

    /// Marginal CDF table `dim,x,cdf`.
    pub fn write_cdf_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "dim,x,cdf")?;
        for (j, (axis, cdf)) in self.axes.iter().zip(&self.marginal_cdfs).enumerate() {
            for (x, c) in axis.iter().zip(cdf) {
                writeln!(w, "{},{x},{c}", j + 1)?;
            }
        }
        Ok(())
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        let sizes: Vec<usize> = self.axes.iter().map(Vec::len).collect();
        unravel(flat, &sizes)
            .into_iter()
            .zip(&self.axes)
            .map(|(i, a)| a[i])
            .collect()
    }

    /// Piecewise-linear marginal CDF of coordinate `j`.
    pub fn marginal_cdf(&self, j: usize, x: f64) -> f64 {
        let axis = &self.axes[j];
        let cdf = &self.marginal_cdfs[j];
        if x <= axis[0] {
            return 0.0;
        }
        if x >= axis[axis.len() - 1] {
            return 1.0;
        }
        let k = axis.partition_point(|a| *a <= x) - 1;
        let t = (x - axis[k]) / (axis[k + 1] - axis[k]);
        cdf[k] + t * (cdf[k + 1] - cdf[k])
    }

    /// Trapezoid-rule expectation of `f` under the gridded density.
    pub fn expectation(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        let sizes: Vec<usize> = self.axes.iter().map(Vec::len).collect();
        let tw: Vec<Vec<f64>> = self.axes.iter().map(|a| trapezoid_weights(a)).collect();
        (0..self.density.len())
            .map(|k| {
                let cell: f64 = unravel(k, &sizes)
                    .into_iter()
                    .zip(&tw)
                    .map(|(i, t)| t[i])
                    .product();
                self.density[k] * cell * f(&self.node(k))
            })
            .sum()
    }
}

/// Evaluates `exp(−W l(ξ)) ρ_0(ξ)` on a tensor grid with `nodes[j]` points
/// per coordinate (box endpoints included) and normalizes it with the
/// trapezoid rule. Every node costs one full solve.
pub fn grid_oracle(
    model: &ForwardModel,
    w: f64,
    nodes: &[usize],
    obs: &ObservationSet,
) -> Result<GridPosterior> {
    let domain = &model.domain;
    let m = domain.dim();
    if m > 3 {
        return Err(Error::GridDimension(m));
    }
    if nodes.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: nodes.len(),
        });
    }
    if nodes.iter().any(|&n| n < 2) {
        return Err(Error::InvalidConfig(
            "grid needs at least two nodes per axis".into(),
        ));
    }
    let total = nodes.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n));
    let total = match total {
        Some(t) if t <= GRID_CAP => t,
        _ => return Err(Error::GridTooLarge(total.unwrap_or(usize::MAX))),
    };
    if !(w >= 0.0) {
        return Err(Error::InvalidConfig("loss weight must be >= 0".into()));
    }
    let axes: Vec<Vec<f64>> = (0..m)
        .map(|j| {
            let (a, b) = (domain.lower[j], domain.upper[j]);
            (0..nodes[j])
                .map(|i| a + (b - a) * i as f64 / (nodes[j] - 1) as f64)
                .collect()
        })
        .collect();
    let point = |flat: usize| -> Vec<f64> {
        unravel(flat, nodes)
            .into_iter()
            .zip(&axes)
            .map(|(i, a)| a[i])
            .collect()
    };
    let losses = (0..total)
        .into_par_iter()
        .map(|k| model.loss(&point(k), obs))
        .collect::<Result<Vec<f64>>>()?;
    let min_loss = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let density: Vec<f64> = (0..total)
        .map(|k| {
            let ln_prior = domain.ln_density(&point(k));
            if ln_prior == f64::NEG_INFINITY {
                0.0
            } else {
                (ln_prior - w * (losses[k] - min_loss)).exp()
            }
        })
        .collect();
    GridPosterior::from_density(axes, density, losses)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(points: Vec<Vec<f64>>) -> ParticleSet {
        ParticleSet::uniform(points, 0).unwrap()
    }

    #[test]
    fn zero_increment_leaves_weights() {
        let w = vec![0.1, 0.2, 0.7];
        assert_eq!(reweight_weights(&w, &[3.0, 1.0, 9.0], 0.0).unwrap(), w);
    }

    #[test]
    fn two_thirds_one_third() {
        let w = reweight_weights(&[0.5, 0.5], &[0.0, 2f64.ln()], 1.0).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn huge_losses_do_not_underflow() {
        let w = reweight_weights(&[0.5, 0.5], &[1e6, 1e6 + 1.0], 1e3).unwrap();
        assert!(w[0] > 0.999 && w.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn ess_examples() {
        assert!((ess(&[0.01; 100]) - 100.0).abs() < 1e-9);
        assert_eq!(ess(&[1.0, 0.0, 0.0]), 1.0);
        assert_eq!(ess(&[0.5, 0.5, 0.0, 0.0]), 2.0);
    }

    #[test]
    fn moments_of_two_points_and_floor() {
        let d = ParameterDomain::uniform_unit(1);
        let m = empirical_moments(&set(vec![vec![0.0], vec![1.0]]), &d);
        assert_eq!(m.mean, vec![0.5]);
        assert_eq!(m.variance, vec![0.25]);
        let m = empirical_moments(&set(vec![vec![0.3], vec![0.3]]), &d);
        assert_eq!(m.variance, vec![VARIANCE_FLOOR]);
    }

    #[test]
    fn kl_is_zero_for_equal_losses_or_zero_weight() {
        let p = set(vec![vec![0.1], vec![0.2], vec![0.3]]);
        let l = [0.3, 1.0, 2.0];
        assert_eq!(kl_reweighted(&p, &l, &l, 4.0).unwrap(), 0.0);
        assert_eq!(kl_reweighted(&p, &l, &[9.0, 0.0, 1.0], 0.0).unwrap(), 0.0);
    }

    #[test]
    fn invalid_sets_are_rejected() {
        assert!(ParticleSet::new(vec![vec![0.0]], vec![1.0], 0).is_err());
        assert!(ParticleSet::new(vec![vec![0.0], vec![1.0]], vec![0.7, 0.7], 0).is_err());
        assert!(ParticleSet::new(vec![vec![0.0], vec![1.0]], vec![-0.5, 1.5], 0).is_err());
    }

    #[test]
    fn particle_csv_round_trip() {
        let p = ParticleSet::new(vec![vec![0.1, 0.25], vec![1.0 / 3.0, 0.0]], vec![0.4, 0.6], 3).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("xi_1,xi_2,weight,generation\n"));
        let back = ParticleSet::read_csv(&buf[..]).unwrap();
        assert_eq!(back.points, p.points);
        assert_eq!(back.generation, 3);
        assert!((back.weights[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn marginal_cdf_of_point_mass() {
        let p = set(vec![vec![0.5], vec![0.5]]);
        assert_eq!(p.marginal_cdf(0, 0.49), 0.0);
        assert_eq!(p.marginal_cdf(0, 0.5), 1.0);
    }
}
