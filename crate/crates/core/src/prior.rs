//! Parameter boxes and independent per-dimension prior densities.

use rand::Rng;
use rand_distr::{Beta as BetaSampler, Distribution};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta as BetaDist, ContinuousCDF};
use statrs::function::beta::ln_beta;

use crate::error::{Error, Result};

/// Marginal prior on one coordinate, scaled to the coordinate's interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PriorSpec {
    Uniform,
    Beta { alpha: f64, beta: f64 },
}

impl PriorSpec {
    /// Density of the standardized variable s in [0, 1].
    fn ln_unit_density(&self, s: f64) -> f64 {
        match *self {
            PriorSpec::Uniform => 0.0,
            PriorSpec::Beta { alpha, beta } => {
                let a = if alpha == 1.0 { 0.0 } else { (alpha - 1.0) * s.ln() };
                let b = if beta == 1.0 {
                    0.0
                } else {
                    (beta - 1.0) * (1.0 - s).ln()
                };
                a + b - ln_beta(alpha, beta)
            }
        }
    }

    fn unit_cdf(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, 1.0);
        match *self {
            PriorSpec::Uniform => s,
            PriorSpec::Beta { alpha, beta } => BetaDist::new(alpha, beta)
                .expect("validated shape parameters")
                .cdf(s),
        }
    }

    /// First two raw moments of the standardized variable.
    pub fn unit_moments(&self) -> (f64, f64) {
        match *self {
            PriorSpec::Uniform => (0.5, 1.0 / 3.0),
            PriorSpec::Beta { alpha, beta } => {
                let mean = alpha / (alpha + beta);
                let second = alpha * (alpha + 1.0) / ((alpha + beta) * (alpha + beta + 1.0));
                (mean, second)
            }
        }
    }

    fn sample_unit<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            PriorSpec::Uniform => rng.random::<f64>(),
            PriorSpec::Beta { alpha, beta } => BetaSampler::new(alpha, beta)
                .expect("validated shape parameters")
                .sample(rng),
        }
    }
}

/// The parameter box together with its prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub priors: Vec<PriorSpec>,
}

impl ParameterDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, priors: Vec<PriorSpec>) -> Result<Self> {
        if lower.len() != upper.len() || lower.len() != priors.len() || lower.is_empty() {
            return Err(Error::InvalidConfig(
                "bounds and priors must have equal, nonzero length".into(),
            ));
        }
        for j in 0..lower.len() {
            if !(lower[j] < upper[j]) {
                return Err(Error::InvalidConfig(format!(
                    "lower bound {} not below upper bound {} in dimension {j}",
                    lower[j], upper[j]
                )));
            }
            if let PriorSpec::Beta { alpha, beta } = priors[j] {
                if !(alpha >= 1.0 && beta >= 1.0) {
                    return Err(Error::InvalidConfig(
                        "Beta shape parameters below 1 give unbounded densities".into(),
                    ));
                }
            }
        }
        Ok(Self { lower, upper, priors })
    }

    pub fn uniform_unit(dim: usize) -> Self {
        Self::new(vec![0.0; dim], vec![1.0; dim], vec![PriorSpec::Uniform; dim]).expect("unit box is valid")
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self, j: usize) -> f64 {
        self.upper[j] - self.lower[j]
    }

    pub fn contains(&self, xi: &[f64]) -> bool {
        xi.len() == self.dim()
            && xi
                .iter()
                .enumerate()
                .all(|(j, &x)| x >= self.lower[j] && x <= self.upper[j])
    }

    /// Coordinates mapped to the unit cube.
    pub fn to_unit(&self, xi: &[f64]) -> Vec<f64> {
        xi.iter()
            .enumerate()
            .map(|(j, &x)| (x - self.lower[j]) / self.width(j))
            .collect()
    }

    pub fn from_unit(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .enumerate()
            .map(|(j, &u)| self.lower[j] + u * self.width(j))
            .collect()
    }

    /// Euclidean distance in box-scaled coordinates.
    pub fn scaled_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(j, (x, y))| {
                let d = (x - y) / self.width(j);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn center(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|j| 0.5 * (self.lower[j] + self.upper[j]))
            .collect()
    }

    pub fn prior_mean(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|j| self.lower[j] + self.priors[j].unit_moments().0 * self.width(j))
            .collect()
    }

    pub fn ln_density_1d(&self, j: usize, x: f64) -> f64 {
        if x < self.lower[j] || x > self.upper[j] {
            return f64::NEG_INFINITY;
        }
        let s = (x - self.lower[j]) / self.width(j);
        self.priors[j].ln_unit_density(s) - self.width(j).ln()
    }

    /// Log prior density; `-inf` outside the box.
    pub fn ln_density(&self, xi: &[f64]) -> f64 {
        if !self.contains(xi) {
            return f64::NEG_INFINITY;
        }
        (0..self.dim()).map(|j| self.ln_density_1d(j, xi[j])).sum()
    }

    pub fn density(&self, xi: &[f64]) -> f64 {
        self.ln_density(xi).exp()
    }

    pub fn cdf_1d(&self, j: usize, x: f64) -> f64 {
        self.priors[j].unit_cdf((x - self.lower[j]) / self.width(j))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim())
            .map(|j| self.lower[j] + self.priors[j].sample_unit(rng) * self.width(j))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * f(a + i as f64 * h)
            })
            .sum::<f64>()
            * h
    }

    #[test]
    fn densities_integrate_to_one() {
        let d = ParameterDomain::new(
            vec![0.1, 0.0, -1.0],
            vec![10.0, 1.0, 3.0],
            vec![
                PriorSpec::Beta {
                    alpha: 1.0,
                    beta: 3.0,
                },
                PriorSpec::Beta {
                    alpha: 3.0,
                    beta: 1.0,
                },
                PriorSpec::Uniform,
            ],
        )
        .unwrap();
        for j in 0..3 {
            let mass = trapezoid(|x| d.ln_density_1d(j, x).exp(), d.lower[j], d.upper[j], 20000);
            assert!((mass - 1.0).abs() < 1e-6, "dim {j}: {mass}");
        }
    }

    #[test]
    fn density_vanishes_outside_box() {
        let d = ParameterDomain::uniform_unit(2);
        assert_eq!(d.density(&[1.5, 0.5]), 0.0);
        assert_eq!(d.density(&[0.5, -1e-9]), 0.0);
        assert!((d.density(&[0.5, 0.5]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn inverted_bounds_are_rejected() {
        assert!(ParameterDomain::new(vec![1.0], vec![0.0], vec![PriorSpec::Uniform]).is_err());
    }

    #[test]
    fn beta_sample_mean() {
        let d = ParameterDomain::new(
            vec![0.0],
            vec![1.0],
            vec![PriorSpec::Beta {
                alpha: 1.0,
                beta: 2.0,
            }],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = 20000;
        let mean = (0..m).map(|_| d.sample(&mut rng)[0]).sum::<f64>() / m as f64;
        // Beta(1,2): mean 1/3, sd sqrt(1/18)
        assert!((mean - 1.0 / 3.0).abs() < 3.0 * (1.0f64 / 18.0).sqrt() / (m as f64).sqrt());
    }

    #[test]
    fn cdf_matches_scaled_uniform() {
        let d = ParameterDomain::new(vec![2.0], vec![4.0], vec![PriorSpec::Uniform]).unwrap();
        assert!((d.cdf_1d(0, 3.0) - 0.5).abs() < 1e-15);
        assert_eq!(d.cdf_1d(0, 5.0), 1.0);
    }
}
