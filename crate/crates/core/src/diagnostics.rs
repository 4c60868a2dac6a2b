//! Distances between particle approximations and references, and checks of
//! the computable surrogate and reweighting bounds on finished runs.
//!
//! The metric `h(ρ, ρ') = sup_{|f| ≤ 1} sqrt(E |ρ[f] − ρ'[f]|^2)` cannot be
//! evaluated exactly. [`h_proxy`] takes the supremum over a fixed dictionary
//! of bounded test functions instead, which can only underestimate `h`, so it
//! remains a valid check of upper bounds.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gibbs::{GridPosterior, ParticleSet};
use crate::prior::ParameterDomain;
use crate::smc::SmcRun;

/// Indicator thresholds per coordinate in the h dictionary.
pub const DICTIONARY_THRESHOLDS: usize = 32;

/// Minimum number of independent runs for [`h_proxy`].
pub const MIN_RUNS: usize = 5;

/// Bounded test function from the h dictionary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestFunction {
    /// `1{ξ_j ≤ c}`.
    Indicator { dim: usize, threshold: f64 },
    /// `2 s_j − 1`, with `s_j` the box-scaled coordinate.
    Linear { dim: usize },
    /// `(2 s_j − 1)^2`.
    Quadratic { dim: usize },
}

impl TestFunction {
    pub fn eval(&self, domain: &ParameterDomain, xi: &[f64]) -> f64 {
        let unit = |j: usize| {
            let s = (xi[j] - domain.lower[j]) / domain.width(j);
            (2.0 * s - 1.0).clamp(-1.0, 1.0)
        };
        match *self {
            TestFunction::Indicator { dim, threshold } => f64::from(u8::from(xi[dim] <= threshold)),
            TestFunction::Linear { dim } => unit(dim),
            TestFunction::Quadratic { dim } => unit(dim).powi(2),
        }
    }
}

/// Interior thresholds `k/(K+1)` of each box-scaled axis plus the two
/// moment functions per coordinate.
pub fn dictionary(domain: &ParameterDomain) -> Vec<TestFunction> {
    let k = DICTIONARY_THRESHOLDS;
    let mut out = Vec::with_capacity(domain.dim() * (k + 2));
    for dim in 0..domain.dim() {
        for i in 1..=k {
            let threshold = domain.lower[dim] + domain.width(dim) * i as f64 / (k + 1) as f64;
            out.push(TestFunction::Indicator { dim, threshold });
        }
        out.push(TestFunction::Linear { dim });
        out.push(TestFunction::Quadratic { dim });
    }
    out
}

/// Distribution against which particle runs are measured.
#[derive(Debug, Clone, Copy)]
pub enum Reference<'a> {
    /// The prior on `domain`, with expectations in closed form.
    Prior(&'a ParameterDomain),
    Grid(&'a GridPosterior),
    Particles(&'a ParticleSet),
}

impl Reference<'_> {
    pub fn expectation(&self, f: &TestFunction, domain: &ParameterDomain) -> f64 {
        match *self {
            Reference::Prior(prior) => match *f {
                TestFunction::Indicator { dim, threshold } => prior.cdf_1d(dim, threshold),
                TestFunction::Linear { dim } => {
                    let (mean, _) = prior.priors[dim].unit_moments();
                    2.0 * mean - 1.0
                }
                TestFunction::Quadratic { dim } => {
                    let (mean, second) = prior.priors[dim].unit_moments();
                    4.0 * second - 4.0 * mean + 1.0
                }
            },
            Reference::Grid(grid) => match *f {
                TestFunction::Indicator { dim, threshold } => grid.marginal_cdf(dim, threshold),
                _ => grid.expectation(|xi| f.eval(domain, xi)),
            },
            Reference::Particles(p) => particle_expectation(p, f, domain),
        }
    }
}

fn particle_expectation(p: &ParticleSet, f: &TestFunction, domain: &ParameterDomain) -> f64 {
    p.points
        .iter()
        .zip(&p.weights)
        .map(|(x, w)| w * f.eval(domain, x))
        .sum()
}

/// Dictionary proxy for `h` between independent particle runs and a
/// reference: the largest root-mean-square discrepancy over test functions.
pub fn h_proxy(runs: &[ParticleSet], reference: Reference<'_>, domain: &ParameterDomain) -> Result<f64> {
    if runs.len() < MIN_RUNS {
        return Err(Error::InvalidConfig(format!(
            "h proxy needs at least {MIN_RUNS} independent runs, got {}",
            runs.len()
        )));
    }
    let value = dictionary(domain)
        .iter()
        .map(|f| {
            let target = reference.expectation(f, domain);
            let ms = runs
                .iter()
                .map(|r| (particle_expectation(r, f, domain) - target).powi(2))
                .sum::<f64>()
                / runs.len() as f64;
            ms.sqrt()
        })
        .fold(0.0, f64::max);
    Ok(value)
}

/// Weighted empirical CDF of one coordinate.
#[derive(Debug, Clone)]
pub struct EmpiricalCdf {
    points: Vec<f64>,
    cumulative: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(values: &[f64], weights: &[f64]) -> Self {
        let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(weights.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = weights.iter().sum();
        let mut points: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut cumulative: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut acc = 0.0;
        for (x, w) in pairs {
            acc += w / total;
            if points.last() == Some(&x) {
                *cumulative.last_mut().expect("nonempty") = acc;
            } else {
                points.push(x);
                cumulative.push(acc);
            }
        }
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Self { points, cumulative }
    }

    pub fn marginal(particles: &ParticleSet, j: usize) -> Self {
        let values: Vec<f64> = particles.points.iter().map(|p| p[j]).collect();
        Self::new(&values, &particles.weights)
    }

    pub fn unweighted(values: &[f64]) -> Self {
        Self::new(values, &vec![1.0; values.len()])
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = self.points.partition_point(|p| *p <= x);
        if k == 0 {
            0.0
        } else {
            self.cumulative[k - 1]
        }
    }

    /// Value just left of `x`.
    fn eval_left(&self, x: f64) -> f64 {
        let k = self.points.partition_point(|p| *p < x);
        if k == 0 {
            0.0
        } else {
            self.cumulative[k - 1]
        }
    }

    pub fn support(&self) -> &[f64] {
        &self.points
    }

    /// Sup distance to a continuous CDF, checked on both sides of every jump.
    pub fn ks_to(&self, cdf: impl Fn(f64) -> f64) -> f64 {
        self.points
            .iter()
            .map(|&x| {
                let f = cdf(x);
                (self.eval(x) - f).abs().max((self.eval_left(x) - f).abs())
            })
            .fold(0.0, f64::max)
    }

    /// Sup distance between two step CDFs, attained on the merged support.
    pub fn ks_between(&self, other: &EmpiricalCdf) -> f64 {
        self.points
            .iter()
            .chain(&other.points)
            .map(|&x| (self.eval(x) - other.eval(x)).abs())
            .fold(0.0, f64::max)
    }
}

/// KS distance of coordinate `j` of a weighted particle set to a reference CDF.
pub fn ks_distance(particles: &ParticleSet, j: usize, cdf: impl Fn(f64) -> f64) -> f64 {
    EmpiricalCdf::marginal(particles, j).ks_to(cdf)
}

/// KS distance of coordinate `j` between two weighted particle sets.
pub fn ks_distance_sets(a: &ParticleSet, b: &ParticleSet, j: usize) -> f64 {
    EmpiricalCdf::marginal(a, j).ks_between(&EmpiricalCdf::marginal(b, j))
}

/// Slack factor on the audited surrogate error relative to `e_thre`.
pub const AUDIT_SLACK: f64 = 1.1;
/// Allowed relative growth of the covariance trace per iteration.
pub const TRACE_SLACK: f64 = 0.1;
/// Absolute allowance for rounding in the KL check.
const KL_ROUNDING: f64 = 1e-14;

#[derive(Debug, Clone, Serialize)]
pub struct IterationCheck {
    pub t: usize,
    pub delta_w: f64,
    pub e_thre: f64,
    pub audited_max: Option<f64>,
    pub surrogate_ok: bool,
    pub kl: Option<f64>,
    pub kl_bound: Option<f64>,
    pub kl_ok: bool,
    pub covariance_trace: f64,
    pub concentration_ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub iterations: Vec<IterationCheck>,
    pub surrogate_ok: bool,
    pub kl_ok: bool,
    pub concentration_ok: bool,
    /// Largest loss value seen in any snapshot, an estimate of the loss bound.
    pub max_loss: f64,
}

impl BoundReport {
    pub fn all_ok(&self) -> bool {
        self.surrogate_ok && self.kl_ok && self.concentration_ok
    }
}

/// Checks each iteration of a finished run: the audited surrogate error
/// against `audit_slack · e_thre`, the KL divergence between surrogate and
/// exact reweighting of the audit subsample against `2 ΔW e_observed`, and
/// covariance traces that never grow by more than [`TRACE_SLACK`].
/// Iterations without an audit pass (a) and (b) vacuously.
pub fn bound_suite(run: &SmcRun, audit_slack: f64) -> BoundReport {
    let mut prev_trace = run.initial.covariance_trace();
    let mut iterations = Vec::with_capacity(run.history.len());
    for r in &run.history {
        let audited_max = r.audit.as_ref().map(|a| a.max_error);
        let surrogate_ok = match audited_max {
            Some(e) if r.e_thre > 0.0 => e <= audit_slack * r.e_thre,
            // exact-loss runs carry no threshold and must be exact
            Some(e) => e == 0.0,
            None => true,
        };
        let (kl, kl_bound) = match &r.audit {
            Some(a) => (Some(a.kl), Some(a.kl_bound)),
            None => (None, None),
        };
        let kl_ok = match (kl, kl_bound) {
            (Some(k), Some(b)) => k <= b + KL_ROUNDING,
            _ => true,
        };
        let concentration_ok = r.covariance_trace <= (1.0 + TRACE_SLACK) * prev_trace;
        prev_trace = r.covariance_trace;
        iterations.push(IterationCheck {
            t: r.t,
            delta_w: r.delta_w,
            e_thre: r.e_thre,
            audited_max,
            surrogate_ok,
            kl,
            kl_bound,
            kl_ok,
            covariance_trace: r.covariance_trace,
            concentration_ok,
        });
    }
    let max_loss = run
        .snapshots
        .iter()
        .flat_map(|s| s.losses.iter().copied())
        .fold(0.0, f64::max);
    BoundReport {
        surrogate_ok: iterations.iter().all(|c| c.surrogate_ok),
        kl_ok: iterations.iter().all(|c| c.kl_ok),
        concentration_ok: iterations.iter().all(|c| c.concentration_ok),
        iterations,
        max_loss,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::reweight_weights;

    fn set(points: Vec<f64>) -> ParticleSet {
        ParticleSet::uniform(points.into_iter().map(|x| vec![x]).collect(), 0).unwrap()
    }

    #[test]
    fn point_mass_against_uniform() {
        let p = set(vec![0.5, 0.5]);
        assert!((ks_distance(&p, 0, |x| x.clamp(0.0, 1.0)) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identical_sets_have_zero_distance() {
        let p = set(vec![0.1, 0.4, 0.9]);
        assert_eq!(ks_distance_sets(&p, &p, 0), 0.0);
        let runs = vec![p.clone(); MIN_RUNS];
        let d = ParameterDomain::uniform_unit(1);
        assert_eq!(h_proxy(&runs, Reference::Particles(&p), &d).unwrap(), 0.0);
    }

    #[test]
    fn ks_between_is_symmetric() {
        let a = set(vec![0.1, 0.2, 0.7]);
        let b = set(vec![0.15, 0.8]);
        assert_eq!(ks_distance_sets(&a, &b, 0), ks_distance_sets(&b, &a, 0));
    }

    #[test]
    fn dictionary_size() {
        let d = ParameterDomain::uniform_unit(3);
        assert_eq!(dictionary(&d).len(), 3 * (DICTIONARY_THRESHOLDS + 2));
    }

    #[test]
    fn prior_reference_matches_quadrature() {
        use crate::prior::PriorSpec;
        let d = ParameterDomain::new(
            vec![0.1],
            vec![10.0],
            vec![PriorSpec::Beta {
                alpha: 1.0,
                beta: 3.0,
            }],
        )
        .unwrap();
        let n = 200_000;
        let h = 9.9 / n as f64;
        for f in dictionary(&d) {
            let quad: f64 = (0..n)
                .map(|i| {
                    let x = 0.1 + (i as f64 + 0.5) * h;
                    d.density(&[x]) * f.eval(&d, &[x]) * h
                })
                .sum();
            assert!(
                (quad - Reference::Prior(&d).expectation(&f, &d)).abs() < 1e-4,
                "{f:?}"
            );
        }
    }

    #[test]
    fn constant_loss_offset_leaves_weights_unchanged() {
        let w = [0.2, 0.3, 0.5];
        let l = [0.4, 1.3, 0.1];
        let shifted: Vec<f64> = l.iter().map(|v| v + 7.5).collect();
        let a = reweight_weights(&w, &l, 2.0).unwrap();
        let b = reweight_weights(&w, &shifted, 2.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn too_few_runs_is_an_error() {
        let p = set(vec![0.5, 0.6]);
        let d = ParameterDomain::uniform_unit(1);
        assert!(h_proxy(std::slice::from_ref(&p), Reference::Prior(&d), &d).is_err());
    }
}
