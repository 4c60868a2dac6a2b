use std::io::{BufRead, Write};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::rms;

/// Observed data vectors plus the scalar noise statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub data: Vec<DVector<f64>>,
    /// Noise mean ε^M.
    pub noise_mean: f64,
    /// Noise standard deviation ε^D (rms over channels).
    pub noise_std: f64,
    pub truth: Option<Vec<f64>>,
    pub channels: Vec<String>,
}

impl ObservationSet {
    pub fn new(data: Vec<DVector<f64>>, noise_mean: f64, noise_std: f64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidConfig("need at least one observation".into()));
        }
        let d = data[0].len();
        if data.iter().any(|v| v.len() != d) {
            return Err(Error::Parse("observation vectors differ in length".into()));
        }
        Ok(Self {
            channels: (0..d).map(|c| format!("d{c}")).collect(),
            data,
            noise_mean,
            noise_std,
            truth: None,
        })
    }

    pub(crate) fn synthetic(
        clean: &DVector<f64>,
        noise_fraction: f64,
        replicates: usize,
        seed: u64,
        truth: Vec<f64>,
        channels: Vec<String>,
    ) -> Result<Self> {
        let sigma = noise_fraction * rms(clean.as_slice());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..replicates)
            .map(|_| {
                if sigma > 0.0 {
                    let normal = Normal::new(0.0, sigma).expect("positive sigma");
                    clean.map(|v| v + normal.sample(&mut rng))
                } else {
                    clean.clone()
                }
            })
            .collect();
        Ok(Self {
            data,
            noise_mean: 0.0,
            noise_std: sigma,
            truth: Some(truth),
            channels,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.data[0].len()
    }

    /// Gaussian reference weight `1 / (2 (ε^D)^2)`.
    pub fn gaussian_weight(&self) -> f64 {
        0.5 / (self.noise_std * self.noise_std)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.channels.join(","))?;
        for d in &self.data {
            let row: Vec<String> = d.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Reads one observation vector per row; the first row names the channels.
    pub fn read_csv<R: BufRead>(r: R, noise_mean: f64, noise_std: f64) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty CSV".into()))??;
        let channels: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        let mut data = Vec::new();
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("row {}: {e}", k + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != channels.len() {
                return Err(Error::Parse(format!(
                    "row {} has {} values, header names {} channels",
                    k + 1,
                    row.len(),
                    channels.len()
                )));
            }
            data.push(DVector::from_vec(row));
        }
        let mut set = Self::new(data, noise_mean, noise_std)?;
        set.channels = channels;
        Ok(set)
    }
}
