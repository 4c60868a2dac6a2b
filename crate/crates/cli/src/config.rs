//! Experiment configuration files.
//!
//! A config is a TOML document with a `[model]` table (a preset name plus
//! its overrides) and optional `[data]`, `[smc]`, `[mcmc]`, `[weights]` and
//! `[oracle]` tables. Missing keys take the library defaults; the loss
//! weight defaults to the Gaussian reference `1/(2 (ε^D)^2)` of the data.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gibbs_rb::mcmc::RwmhConfig;
use gibbs_rb::weights::{reference_weight, WeightSelectionConfig};
use gibbs_rb::{assemble, ForwardModel, ObservationSet, Preset, SmcConfig};
use serde::Deserialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Per-channel noise deviation as a fraction of the rms clean data.
    pub noise_fraction: f64,
    pub replicates: usize,
    pub seed: u64,
    /// Overrides the preset's true parameter.
    pub truth: Option<Vec<f64>>,
    /// Observation CSV to use instead of synthetic data.
    pub file: Option<PathBuf>,
    pub noise_mean: f64,
    /// Required with `file`.
    pub noise_std: Option<f64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            noise_fraction: 0.1,
            replicates: 1,
            seed: 1,
            truth: None,
            file: None,
            noise_mean: 0.0,
            noise_std: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Nodes per coordinate.
    pub nodes: Option<Vec<usize>>,
    pub total_weight: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    seed: u64,
    model: toml::Table,
    #[serde(default)]
    data: DataConfig,
    #[serde(default)]
    smc: toml::Table,
    #[serde(default)]
    mcmc: toml::Table,
    #[serde(default)]
    weights: WeightSelectionConfig,
    #[serde(default)]
    oracle: OracleConfig,
}

/// A loaded experiment: model, data and resolved sampler settings.
pub struct Experiment {
    pub path: PathBuf,
    pub hash: String,
    pub seed: u64,
    pub model: ForwardModel,
    pub obs: ObservationSet,
    pub smc: SmcConfig,
    pub mcmc: RwmhConfig,
    pub weights: WeightSelectionConfig,
    pub oracle: OracleConfig,
}

fn preset_from(table: toml::Table) -> Result<Preset> {
    let name = table
        .get("preset")
        .and_then(|v| v.as_str())
        .context("[model] needs a `preset` key")?
        .to_string();
    let base = Preset::by_name(&name)?;
    // merge overrides onto the named preset's defaults
    let mut merged = toml::Table::try_from(&base)?;
    for (k, v) in table {
        if k != "preset" {
            merged.insert(k, v);
        }
    }
    Ok(toml::Value::Table(merged).try_into()?)
}

fn with_weight(mut table: toml::Table, weight: f64, seed: u64) -> toml::Table {
    table.entry("total_weight").or_insert(toml::Value::Float(weight));
    table.insert("seed".into(), toml::Value::Integer(seed as i64));
    table
}

impl Experiment {
    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let hash: String = Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        let raw: RawConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let seed = seed.unwrap_or(raw.seed);
        if seed > i64::MAX as u64 {
            bail!("seed must fit in 63 bits");
        }
        let model = assemble(&preset_from(raw.model)?)?;
        let obs = match &raw.data.file {
            Some(file) => {
                let file = if file.is_relative() {
                    path.parent().unwrap_or(Path::new(".")).join(file)
                } else {
                    file.clone()
                };
                let std = raw
                    .data
                    .noise_std
                    .context("[data] noise_std is required with an observation file")?;
                let reader = std::io::BufReader::new(fs::File::open(&file)?);
                ObservationSet::read_csv(reader, raw.data.noise_mean, std)?
            }
            None => {
                let truth = raw.data.truth.clone().unwrap_or_else(|| model.truth.clone());
                model.gen_data(
                    &truth,
                    raw.data.noise_fraction,
                    raw.data.replicates,
                    raw.data.seed,
                )?
            }
        };
        let weight = reference_weight(obs.noise_std)?;
        let smc: SmcConfig = toml::Value::Table(with_weight(raw.smc, weight, seed)).try_into()?;
        let mcmc: RwmhConfig =
            toml::Value::Table(with_weight(raw.mcmc, smc.total_weight, seed)).try_into()?;
        smc.validate()?;
        raw.weights.validate()?;
        Ok(Self {
            path: path.to_path_buf(),
            hash,
            seed,
            model,
            obs,
            smc,
            mcmc,
            weights: raw.weights,
            oracle: raw.oracle,
        })
    }
}
