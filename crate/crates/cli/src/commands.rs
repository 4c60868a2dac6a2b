//! Subcommand implementations and artifact writers.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use gibbs_rb::diagnostics::{bound_suite, h_proxy, ks_distance, ks_distance_sets, Reference, AUDIT_SLACK};
use gibbs_rb::gibbs::{grid_oracle, GridPosterior};
use gibbs_rb::mcmc::run_rwmh;
use gibbs_rb::smc::{run_smc as smc, IterationRecord, SmcRun};
use gibbs_rb::weights::evaluate_grid_via_smc;
use gibbs_rb::{ParameterDomain, ParticleSet, PriorSpec};
use serde::Serialize;
use serde_json::json;

use crate::config::Experiment;

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config: String,
    config_sha256: &'a str,
    seed: u64,
    model: &'a str,
    dofs: usize,
    observations: usize,
    noise_std: f64,
    full_solves: u64,
    audit_solves: u64,
    reduced_solves: u64,
    wall_time_s: f64,
    final_w: f64,
    iterations: &'a [IterationRecord],
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    extra: serde_json::Value,
}

impl<'a> Manifest<'a> {
    fn new(command: &'a str, exp: &'a Experiment) -> Self {
        Self {
            command,
            config: exp.path.display().to_string(),
            config_sha256: &exp.hash,
            seed: exp.seed,
            model: &exp.model.name,
            dofs: exp.model.dofs(),
            observations: exp.obs.len(),
            noise_std: exp.obs.noise_std,
            full_solves: 0,
            audit_solves: 0,
            reduced_solves: 0,
            wall_time_s: 0.0,
            final_w: 0.0,
            iterations: &[],
            extra: serde_json::Value::Null,
        }
    }

    fn with_run(mut self, run: &'a SmcRun) -> Self {
        self.full_solves = run.full_solves;
        self.audit_solves = run.audit_solves;
        self.reduced_solves = run.reduced_solves;
        self.final_w = run.history.last().map_or(run.total_weight, |r| r.w_end);
        self.iterations = &run.history;
        self
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_smc_artifacts(dir: &Path, exp: &Experiment, run: &SmcRun) -> Result<()> {
    run.particles.write_csv(create(dir, "particles.csv")?)?;
    run.write_history_csv(create(dir, "history.csv")?)?;
    exp.obs.write_csv(create(dir, "observations.csv")?)?;
    if let Some(s) = &run.surrogate {
        s.write_atoms_csv(create(dir, "atoms.csv")?)?;
    }
    let snaps = dir.join("snapshots");
    fs::create_dir_all(&snaps)?;
    for (t, s) in run.snapshots.iter().enumerate() {
        s.particles
            .write_csv(create(&snaps, &format!("particles_{t:03}.csv"))?)?;
    }
    Ok(())
}

pub fn run_smc(config: &Path, seed: Option<u64>, out: &Path, verify: bool) -> Result<bool> {
    let started = Instant::now();
    let exp = Experiment::load(config, seed)?;
    fs::create_dir_all(out)?;
    let run = smc(&exp.model, &exp.obs, &exp.smc)?;
    write_smc_artifacts(out, &exp, &run)?;
    let report = bound_suite(&run, AUDIT_SLACK);
    write_json(out, "bounds.json", &report)?;
    let mut manifest = Manifest::new("run-smc", &exp).with_run(&run);
    manifest.wall_time_s = started.elapsed().as_secs_f64();
    write_json(out, "manifest.json", &manifest)?;
    Ok(!verify || report.all_ok())
}

pub fn run_mcmc(config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let started = Instant::now();
    let exp = Experiment::load(config, seed)?;
    fs::create_dir_all(out)?;
    let chain = run_rwmh(&exp.model, &exp.obs, &exp.mcmc)?;
    if chain.step_looks_mistuned() {
        eprintln!(
            "warning: acceptance rate {:.3} outside [0.05, 0.7]; consider another step_fraction",
            chain.acceptance_rate
        );
    }
    chain.write_csv(create(out, "chain.csv")?)?;
    let mut manifest = Manifest::new("run-mcmc", &exp);
    manifest.full_solves = chain.full_solves;
    manifest.final_w = exp.mcmc.total_weight;
    manifest.wall_time_s = started.elapsed().as_secs_f64();
    manifest.extra = json!({
        "samples": chain.samples.len(),
        "burn_in": exp.mcmc.burn_in,
        "acceptance_rate": chain.acceptance_rate,
        "out_of_support": chain.out_of_support,
    });
    write_json(out, "manifest.json", &manifest)
}

pub fn select_weight(config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let started = Instant::now();
    let exp = Experiment::load(config, seed)?;
    fs::create_dir_all(out)?;
    let (sel, run) = evaluate_grid_via_smc(&exp.model, &exp.obs, &exp.smc, &exp.weights)?;
    sel.write_csv(create(out, "weights.csv")?)?;
    write_smc_artifacts(out, &exp, &run)?;
    let mut manifest = Manifest::new("select-weight", &exp).with_run(&run);
    manifest.final_w = sel.selected;
    manifest.wall_time_s = started.elapsed().as_secs_f64();
    manifest.extra = json!({
        "reference_w": sel.reference,
        "optimal_w": sel.optimum,
        "samples": sel.observations,
        "smc_total_w": run.total_weight,
    });
    write_json(out, "manifest.json", &manifest)
}

fn parse_grid(spec: &str) -> Result<Vec<usize>> {
    spec.split(['x', 'X', ','])
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .with_context(|| format!("bad grid size `{spec}`"))
        })
        .collect()
}

pub fn oracle(config: &Path, grid: Option<&str>, out: &Path) -> Result<()> {
    let started = Instant::now();
    let exp = Experiment::load(config, None)?;
    let nodes = match grid {
        Some(g) => parse_grid(g)?,
        None => exp
            .oracle
            .nodes
            .clone()
            .unwrap_or_else(|| vec![60; exp.model.dim()]),
    };
    let w = exp.oracle.total_weight.unwrap_or(exp.smc.total_weight);
    fs::create_dir_all(out)?;
    let before = exp.model.full_solves().get();
    let post = grid_oracle(&exp.model, w, &nodes, &exp.obs)?;
    post.write_csv(create(out, "oracle_density.csv")?)?;
    post.write_cdf_csv(create(out, "oracle_cdf.csv")?)?;
    let mut manifest = Manifest::new("oracle", &exp);
    manifest.full_solves = exp.model.full_solves().get() - before;
    manifest.final_w = w;
    manifest.wall_time_s = started.elapsed().as_secs_f64();
    manifest.extra = json!({ "nodes": nodes });
    write_json(out, "manifest.json", &manifest)
}

enum Source {
    Particles(ParticleSet),
    Grid(GridPosterior),
}

impl Source {
    fn dim(&self) -> usize {
        match self {
            Source::Particles(p) => p.dim(),
            Source::Grid(g) => g.axes.len(),
        }
    }
}

fn read_chain(path: &Path) -> Result<ParticleSet> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header = lines.next().context("empty chain CSV")??;
    let cols = header.split(',').count();
    let mut points = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols {
            bail!("malformed chain row in {}", path.display());
        }
        points.push(
            f[1..cols - 1]
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()?,
        );
    }
    Ok(ParticleSet::uniform(points, 0)?)
}

fn load_source(path: &Path) -> Result<Source> {
    let file: PathBuf = if path.is_dir() {
        ["particles.csv", "chain.csv", "oracle_density.csv"]
            .iter()
            .map(|n| path.join(n))
            .find(|p| p.exists())
            .with_context(|| format!("no particle, chain or oracle table in {}", path.display()))?
    } else {
        path.to_path_buf()
    };
    let mut header = String::new();
    BufReader::new(File::open(&file)?).read_line(&mut header)?;
    let header = header.trim();
    let reader = BufReader::new(File::open(&file)?);
    if header.starts_with("step,") {
        Ok(Source::Particles(read_chain(&file)?))
    } else if header.ends_with(",density,loss") {
        Ok(Source::Grid(GridPosterior::read_csv(reader)?))
    } else {
        Ok(Source::Particles(ParticleSet::read_csv(reader)?))
    }
}

fn bounding_domain(sources: &[&Source]) -> Result<ParameterDomain> {
    let m = sources[0].dim();
    let mut lower = vec![f64::INFINITY; m];
    let mut upper = vec![f64::NEG_INFINITY; m];
    for s in sources {
        let mut visit = |x: &[f64]| {
            for j in 0..m {
                lower[j] = lower[j].min(x[j]);
                upper[j] = upper[j].max(x[j]);
            }
        };
        match s {
            Source::Particles(p) => p.points.iter().for_each(|x| visit(x)),
            Source::Grid(g) => {
                let lo: Vec<f64> = g.axes.iter().map(|a| a[0]).collect();
                let hi: Vec<f64> = g.axes.iter().map(|a| a[a.len() - 1]).collect();
                visit(&lo);
                visit(&hi);
            }
        }
    }
    for j in 0..m {
        if upper[j] <= lower[j] {
            upper[j] = lower[j] + 1.0;
        }
    }
    Ok(ParameterDomain::new(lower, upper, vec![PriorSpec::Uniform; m])?)
}

pub fn compare(runs: &[PathBuf], out: &Path) -> Result<()> {
    if runs.len() < 2 {
        bail!("compare needs at least two --run arguments");
    }
    let sources = runs.iter().map(|p| load_source(p)).collect::<Result<Vec<_>>>()?;
    let (reference, candidates) = sources.split_last().expect("at least two sources");
    let m = reference.dim();
    if candidates.iter().any(|c| c.dim() != m) {
        bail!("runs differ in parameter dimension");
    }
    let mut rows = Vec::new();
    let mut sets = Vec::new();
    for (path, c) in runs.iter().zip(candidates) {
        let Source::Particles(p) = c else {
            bail!(
                "{} is a grid table; only the reference may be one",
                path.display()
            );
        };
        let ks: Vec<f64> = (0..m)
            .map(|j| match reference {
                Source::Particles(r) => ks_distance_sets(p, r, j),
                Source::Grid(g) => ks_distance(p, j, |x| g.marginal_cdf(j, x)),
            })
            .collect();
        rows.push(json!({ "run": path.display().to_string(), "ks": ks }));
        sets.push(p.clone());
    }
    let all: Vec<&Source> = sources.iter().collect();
    let domain = bounding_domain(&all)?;
    let h = if sets.len() >= gibbs_rb::diagnostics::MIN_RUNS {
        let r = match reference {
            Source::Particles(p) => Reference::Particles(p),
            Source::Grid(g) => Reference::Grid(g),
        };
        Some(h_proxy(&sets, r, &domain)?)
    } else {
        None
    };
    fs::create_dir_all(out)?;
    write_json(
        out,
        "compare.json",
        &json!({
            "reference": runs.last().expect("nonempty").display().to_string(),
            "runs": rows,
            "h_proxy": h,
        }),
    )?;
    let mut cdf = create(out, "cdf.csv")?;
    writeln!(cdf, "run,dim,x,cdf")?;
    for (k, s) in sources.iter().enumerate() {
        for j in 0..m {
            match s {
                Source::Particles(p) => {
                    let e = gibbs_rb::diagnostics::EmpiricalCdf::marginal(p, j);
                    for &x in e.support() {
                        writeln!(cdf, "{k},{},{x},{}", j + 1, e.eval(x))?;
                    }
                }
                Source::Grid(g) => {
                    for (x, c) in g.axes[j].iter().zip(&g.marginal_cdfs[j]) {
                        writeln!(cdf, "{k},{},{x},{c}", j + 1)?;
                    }
                }
            }
        }
    }
    cdf.flush()?;
    Ok(())
}
