//! Experiment families. Each one simulates into a run directory and evaluates
//! its predicates again from the files alone, so `verify` needs no simulation.

pub mod closed_form;
pub mod deep;
pub mod equivalence;
pub mod expressivity;
pub mod margin;
pub mod plateau;
pub mod properties;
pub mod superposition;

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use relulab::datasets::{make_named, make_symmetric_gaussian, whiten, Dataset};
use relulab::dynamics::{RunStatus, Trajectory};
use relulab::model::{init_gaussian, init_rank1_balanced, NetworkParams};
use relulab::numkit::{norm, SeededRng};
use serde_json::{json, Value};

use crate::artifacts::{RunDir, Table};
use crate::config::{derived_seed, DatasetSpec, ExperimentConfig, ExperimentKind, RunSpec};
use crate::predicate::{Bound, Predicate};
use crate::svg::{line_plot, Series};

/// What a simulation leaves for the manifest.
#[derive(Debug, Default)]
pub struct Simulated {
    pub seeds: BTreeMap<String, u64>,
    /// One entry per trained sub-run: name, status, final loss.
    pub runs: Vec<Value>,
    pub diverged: Vec<String>,
}

impl Simulated {
    fn absorb(&mut self, jobs: Vec<Job>) {
        for j in jobs {
            if let RunStatus::Diverged { .. } = j.status {
                self.diverged.push(j.name.clone());
            }
            self.runs.push(json!({ "name": j.name, "status": j.status, "final_loss": finite_or_null(j.final_loss) }));
        }
    }
}

/// Outcome of one trained sub-run.
#[derive(Debug)]
struct Job {
    name: String,
    status: RunStatus,
    final_loss: f64,
}

impl Job {
    fn of(name: impl Into<String>, traj: &Trajectory) -> Job {
        Job { name: name.into(), status: traj.status.clone(), final_loss: traj.final_loss() }
    }
}

#[derive(Debug, Default)]
pub struct Evaluation {
    pub predicates: Vec<Predicate>,
    pub metrics: BTreeMap<String, Value>,
}

impl Evaluation {
    fn check(&mut self, name: String, value: f64, bound: Bound) {
        self.predicates.push(Predicate::new(name, value, bound));
    }

    /// Adds the predicate if the threshold is configured; a computation error becomes a failing predicate.
    fn maybe(&mut self, run: &RunSpec, key: &str, name: String, bound: impl Fn(f64) -> Bound, value: impl FnOnce() -> Result<f64>) {
        if let Some(th) = run.threshold(key) {
            match value() {
                Ok(v) => self.check(name, v, bound(th)),
                Err(e) => self.predicates.push(Predicate::broken(name, &format!("{e:#}"))),
            }
        }
    }

    fn metric(&mut self, name: String, v: impl Into<Value>) {
        self.metrics.insert(name, v.into());
    }
}

pub fn simulate(cfg: &ExperimentConfig, dir: &RunDir) -> Result<Simulated> {
    let runs = cfg.resolve_runs()?;
    let mut sim = Simulated::default();
    sim.seeds.insert("base".into(), cfg.seed);
    sim.seeds.insert("data".into(), data_seed(cfg));
    for r in &runs {
        sim.seeds.insert(r.name.clone(), r.seed);
    }
    let jobs = match cfg.experiment {
        ExperimentKind::Fig2Equivalence | ExperimentKind::FigCVariants => equivalence::simulate(cfg, &runs, dir)?,
        ExperimentKind::ClosedFormCheck => closed_form::simulate(cfg, &runs, dir)?,
        ExperimentKind::Fig3OrthoXor => superposition::simulate(cfg, &runs, dir)?,
        ExperimentKind::Fig5DeepStructure => deep::simulate(cfg, &runs, dir)?,
        ExperimentKind::Fig7Plateau => plateau::simulate(cfg, &runs, dir)?,
        ExperimentKind::Fig1Expressivity => expressivity::simulate(cfg, &runs, dir)?,
        ExperimentKind::AppGLabelflip => margin::simulate(cfg, &runs, dir)?,
        ExperimentKind::Gradcheck => properties::simulate(cfg, &runs, dir)?,
    };
    sim.absorb(jobs);
    Ok(sim)
}

pub fn evaluate(cfg: &ExperimentConfig, dir: &Path, run_id: &str) -> Result<Evaluation> {
    let runs = cfg.resolve_runs()?;
    let mut ev = Evaluation::default();
    let ctx = Ctx { dir, run_id };
    match cfg.experiment {
        ExperimentKind::Fig2Equivalence | ExperimentKind::FigCVariants => equivalence::evaluate(&ctx, &runs, &mut ev)?,
        ExperimentKind::ClosedFormCheck => closed_form::evaluate(&ctx, &runs, &mut ev)?,
        ExperimentKind::Fig3OrthoXor => superposition::evaluate(&ctx, &runs, &mut ev)?,
        ExperimentKind::Fig5DeepStructure => deep::evaluate(&ctx, &runs, &mut ev)?,
        ExperimentKind::Fig7Plateau => plateau::evaluate(&ctx, &runs, &mut ev)?,
        ExperimentKind::Fig1Expressivity => expressivity::evaluate(&ctx, &runs, &mut ev)?,
        ExperimentKind::AppGLabelflip => margin::evaluate(&ctx, &runs, &mut ev)?,
        ExperimentKind::Gradcheck => properties::evaluate(&ctx, &runs, &mut ev)?,
    }
    Ok(ev)
}

/// Read-side context for evaluation.
struct Ctx<'a> {
    dir: &'a Path,
    run_id: &'a str,
}

impl Ctx<'_> {
    fn table(&self, rel: &str) -> Result<Table> {
        Table::read(self.dir, rel)
    }

    fn net(&self, rel: &str) -> Result<NetworkParams> {
        crate::artifacts::read_net(self.dir, rel, self.run_id)
    }

    fn dataset(&self, rel: &str) -> Result<Dataset> {
        // The sidecar must belong to this run too.
        let meta = std::path::Path::new(rel).with_extension("json");
        crate::artifacts::read_json(self.dir, meta.to_str().expect("utf-8 path"), self.run_id)?;
        crate::artifacts::read_dataset(self.dir, rel)
    }

    fn field<T: serde::de::DeserializeOwned>(&self, rel: &str, field: &str) -> Result<T> {
        crate::artifacts::read_field(self.dir, rel, self.run_id, field)
    }
}

/// Seed of generated datasets, shared by all runs of an experiment.
pub fn data_seed(cfg: &ExperimentConfig) -> u64 {
    derived_seed(cfg.seed, "data")
}

pub fn build_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset> {
    Ok(match spec {
        DatasetSpec::Gaussian { n_pairs, dim, teacher, whiten: w } => {
            let d = make_symmetric_gaussian(&mut SeededRng::new(seed), *n_pairs, *dim, teacher)?;
            if *w {
                whiten(&d)?
            } else {
                d
            }
        }
        DatasetSpec::Named { family } => make_named(family)?,
        DatasetSpec::Csv { path } => Dataset::load_csv(path).with_context(|| format!("loading {}", path.display()))?,
    })
}

/// Initial network of a run; the same seed gives the same draws for every α.
fn init_net(run: &RunSpec, dim: usize, alpha: f64) -> Result<NetworkParams> {
    let mut rng = SeededRng::new(derived_seed(run.seed, "init"));
    let n = &run.network;
    if n.rank1_balanced {
        let r: Vec<f64> = (0..dim).map(|_| rng.gaussian()).collect();
        let rn = norm(&r);
        let r: Vec<f64> = r.iter().map(|v| v / rn).collect();
        return Ok(init_rank1_balanced(&mut rng, n.width, &r, alpha, n.w_init)?);
    }
    let mut widths = vec![dim];
    widths.extend(std::iter::repeat_n(n.width, n.depth - 1));
    widths.push(1);
    Ok(init_gaussian(&mut rng, &widths, alpha, n.w_init)?)
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

/// Directory-safe label of a swept value.
fn tag(prefix: &str, v: f64) -> String {
    format!("{prefix}_{v}")
}

fn loss_plot(dir: &RunDir, rel: &str, title: &str, curves: &[(&str, &[f64], &[f64])]) -> Result<()> {
    let series: Vec<Series> = curves.iter().map(|(l, x, y)| Series { label: l.to_string(), xs: x, ys: y }).collect();
    dir.write_text(rel, &line_plot(title, "t", "loss", &series, true))
}

fn misclassification(net: &NetworkParams, data: &Dataset) -> Result<f64> {
    let mut wrong = 0usize;
    for i in 0..data.len() {
        let f = net.output(data.x(i))?;
        if f * data.targets[i] <= 0.0 {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / data.len() as f64)
}

/// Maximum that propagates NaN, so a corrupted value cannot hide.
fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

fn max_of(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        anyhow::bail!("empty column");
    }
    Ok(v.iter().copied().fold(f64::NEG_INFINITY, nan_max))
}
