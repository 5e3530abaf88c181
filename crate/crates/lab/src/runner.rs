//! `run` and `verify`. A run directory is complete once its manifest exists;
//! the manifest is written last and lists a digest for every other file.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use relulab::{analysis, dynamics, numkit, theory};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::artifacts::{hash_tree, integrity_problems, read_field, read_manifest, Manifest, RunDir, CONFIG, MANIFEST, REPORT, VERDICT};
use crate::config::ExperimentConfig;
use crate::experiments::{self, closed_form, deep, equivalence, properties, superposition};
use crate::predicate::{Bound, Predicate};

/// Machine-readable outcome of `run` or `verify`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Verdict {
    pub run_id: String,
    pub experiment: String,
    pub pass: bool,
    pub diverged: Vec<String>,
    pub predicates: Vec<Predicate>,
}

impl Verdict {
    /// 0 all predicates pass, 1 some predicate fails, 3 a run diverged.
    pub fn exit_code(&self) -> i32 {
        if !self.diverged.is_empty() {
            3
        } else if self.pass {
            0
        } else {
            1
        }
    }

    pub fn lines(&self) -> Vec<String> {
        self.predicates.iter().map(Predicate::line).collect()
    }

    fn new(run_id: &str, experiment: &str, diverged: Vec<String>, predicates: Vec<Predicate>) -> Verdict {
        Verdict { run_id: run_id.into(), experiment: experiment.into(), pass: predicates.iter().all(|p| p.pass), diverged, predicates }
    }
}

/// Conventions every run depends on, recorded in the manifest.
pub fn conventions() -> Value {
    json!({
        "activation": "leaky ReLU sigma(z) = max(z, alpha z), sigma'(0) = alpha",
        "bias": false,
        "time": "t = step * eta (tau = 1)",
        "square_loss": "0.5 (y - f)^2 per sample",
        "logistic_loss": "ln(1 + exp(-y f)) per sample",
        "reduction": "per dataset metadata: mean weights samples by 1/P, sum by 1",
        "l2": "penalty (lambda_alpha / 2) |W|^2 with lambda_alpha = l2 (alpha + 1) / 2",
        "linear_reference": "alpha = 1 net started at sqrt(k) W(0), stepped with k eta, k = (alpha + 1) / 2",
        "rng": numkit::RNG_NAME,
        "gaussian": numkit::GAUSSIAN_METHOD,
        "seeds": "sub-run seed = first 8 bytes (little endian) of sha256(\"<base>/<run name>\")",
    })
}

/// Solver and analysis tolerances, recorded in the manifest.
pub fn tolerances(cfg: &ExperimentConfig) -> Value {
    json!({
        "thresholds": cfg.thresholds,
        "divergence_loss": dynamics::DIVERGENCE_LOSS,
        "max_snapshot_gap": analysis::MAX_SNAPSHOT_GAP,
        "rank_threshold": analysis::RANK_THRESHOLD,
        "plateau_eps": analysis::PLATEAU_EPS,
        "drop_fraction": analysis::DROP_FRACTION,
        "drop_dip_ratio": analysis::DROP_DIP_RATIO,
        "max_condition": theory::MAX_CONDITION,
        "margin_tol": theory::MARGIN_TOL,
        "margin_max_sweeps": theory::MARGIN_MAX_SWEEPS,
        "margin_dual_cap": theory::MARGIN_DUAL_CAP,
        "growth_window": equivalence::GROWTH_WINDOW,
        "closed_form_range_times_s": closed_form::CHECK_RANGE,
        "elbow_fraction": deep::ELBOW_FRACTION,
        "active_unit_fraction": superposition::ACTIVE_UNIT_FRACTION,
        "gap_after": superposition::GAP_AFTER,
        "drop_min_fraction": superposition::DROP_MIN_FRACTION,
        "block_start": superposition::BLOCK_START,
        "fd_step": properties::FD_STEP,
    })
}

/// Simulates, evaluates, and seals the run directory `cfg.output`, which must be empty or absent.
pub fn run(cfg: &ExperimentConfig) -> Result<Verdict> {
    let root = cfg.output.clone();
    if root.exists() && fs::read_dir(&root).with_context(|| format!("reading {}", root.display()))?.next().is_some() {
        bail!("output directory {} is not empty", root.display());
    }
    fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
    let dir = RunDir { root: root.clone(), run_id: cfg.run_id() };
    // The destination is not part of the run, so copies stay byte-identical.
    let stored = ExperimentConfig { output: PathBuf::new(), ..cfg.clone() };
    dir.write_json(CONFIG, &json!({ "config": stored }))?;
    let sim = experiments::simulate(cfg, &dir)?;
    let ev = experiments::evaluate(cfg, &root, &dir.run_id)?;
    let verdict = Verdict::new(&dir.run_id, cfg.experiment.name(), sim.diverged.clone(), ev.predicates);
    dir.write_json(REPORT, &json!({ "verdict": verdict, "metrics": ev.metrics }))?;
    let manifest = Manifest {
        run_id: dir.run_id.clone(),
        experiment: cfg.experiment.name().into(),
        crate_version: env!("CARGO_PKG_VERSION").into(),
        seeds: sim.seeds,
        conventions: conventions(),
        tolerances: tolerances(cfg),
        runs: sim.runs,
        diverged: sim.diverged,
        files: hash_tree(&root)?,
    };
    fs::write(root.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(verdict)
}

/// Integrity check plus a fresh evaluation from the stored files; writes `verdict.json`.
pub fn verify(root: &Path) -> Result<Verdict> {
    let manifest = read_manifest(root)?;
    let mut problems = integrity_problems(root, &manifest)?;
    let cfg: Option<ExperimentConfig> = match read_field(root, CONFIG, &manifest.run_id, "config") {
        Ok(c) => Some(c),
        Err(e) => {
            problems.push(format!("{CONFIG}: {e:#}"));
            None
        }
    };
    if let Some(c) = &cfg {
        if c.run_id() != manifest.run_id {
            problems.push(format!("{CONFIG}: describes run {}, manifest says {}", c.run_id(), manifest.run_id));
        }
    }
    let mut integrity = Predicate::new("integrity", problems.len() as f64, Bound::AtMost(0.0));
    if !problems.is_empty() {
        integrity.note = Some(problems.join("; "));
    }
    let mut predicates = vec![integrity];
    if let Some(cfg) = &cfg {
        match experiments::evaluate(cfg, root, &manifest.run_id) {
            Ok(ev) => predicates.extend(ev.predicates),
            Err(e) => predicates.push(Predicate::broken("evaluation", &format!("{e:#}"))),
        }
    }
    let verdict = Verdict::new(&manifest.run_id, &manifest.experiment, manifest.diverged.clone(), predicates);
    fs::write(root.join(VERDICT), serde_json::to_string_pretty(&verdict)? + "\n")?;
    Ok(verdict)
}
