//! Experiment configuration: JSON presets per experiment kind, deep-merged
//! with a user document and dotted `key=value` overrides, then resolved into
//! concrete runs.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use relulab::datasets::{Named, Teacher};
use relulab::dynamics::{ConvergeRule, TrainConfig};
use relulab::model::LossKind;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentKind {
    #[serde(rename = "fig2_equivalence")]
    Fig2Equivalence,
    #[serde(rename = "fig1_expressivity")]
    Fig1Expressivity,
    #[serde(rename = "fig3_ortho_xor")]
    Fig3OrthoXor,
    #[serde(rename = "fig5_deep_structure")]
    Fig5DeepStructure,
    #[serde(rename = "fig7_plateau")]
    Fig7Plateau,
    #[serde(rename = "figC_variants")]
    FigCVariants,
    #[serde(rename = "appG_labelflip")]
    AppGLabelflip,
    #[serde(rename = "gradcheck")]
    Gradcheck,
    #[serde(rename = "closed_form_check")]
    ClosedFormCheck,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 9] = [
        ExperimentKind::Fig2Equivalence,
        ExperimentKind::Fig1Expressivity,
        ExperimentKind::Fig3OrthoXor,
        ExperimentKind::Fig5DeepStructure,
        ExperimentKind::Fig7Plateau,
        ExperimentKind::FigCVariants,
        ExperimentKind::AppGLabelflip,
        ExperimentKind::Gradcheck,
        ExperimentKind::ClosedFormCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Fig2Equivalence => "fig2_equivalence",
            ExperimentKind::Fig1Expressivity => "fig1_expressivity",
            ExperimentKind::Fig3OrthoXor => "fig3_ortho_xor",
            ExperimentKind::Fig5DeepStructure => "fig5_deep_structure",
            ExperimentKind::Fig7Plateau => "fig7_plateau",
            ExperimentKind::FigCVariants => "figC_variants",
            ExperimentKind::AppGLabelflip => "appG_labelflip",
            ExperimentKind::Gradcheck => "gradcheck",
            ExperimentKind::ClosedFormCheck => "closed_form_check",
        }
    }

    pub fn parse(name: &str) -> Result<ExperimentKind> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| anyhow!("unknown experiment {name:?}; expected one of {}", ExperimentKind::ALL.map(|k| k.name()).join(", ")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Gaussian {
        n_pairs: usize,
        dim: usize,
        teacher: Teacher,
        #[serde(default)]
        whiten: bool,
    },
    Named {
        family: Named,
    },
    Csv {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub width: usize,
    /// Number of weight layers.
    pub depth: usize,
    pub w_init: f64,
    /// Rank-one balanced instead of gaussian; two-layer only.
    #[serde(default)]
    pub rank1_balanced: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub loss: LossKind,
    pub eta: f64,
    pub steps: usize,
    #[serde(default)]
    pub l2: f64,
    pub snapshot_every: usize,
    pub monitor_every: usize,
    /// Trajectory CSV row cadence.
    pub csv_every: usize,
    #[serde(default)]
    pub converge: Option<ConvergeRule>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default)]
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub delta: Vec<f64>,
}

/// Fully merged configuration as stored in a run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub network: NetworkSpec,
    pub train: TrainSpec,
    #[serde(default)]
    pub sweep: Sweep,
    /// Per-run partial documents merged over the base; empty means one run named "main".
    #[serde(default)]
    pub runs: Vec<Value>,
    /// Predicate thresholds; a predicate is evaluated only when its key is present.
    #[serde(default)]
    pub thresholds: BTreeMap<String, f64>,
    pub output: PathBuf,
}

/// One concrete run after merging its overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub name: String,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub network: NetworkSpec,
    pub train: TrainSpec,
    pub sweep: Sweep,
    pub thresholds: BTreeMap<String, f64>,
}

impl RunSpec {
    pub fn train_config(&self, reduction: relulab::datasets::Reduction) -> TrainConfig {
        TrainConfig {
            loss: self.train.loss,
            reduction,
            eta: self.train.eta,
            steps: self.train.steps,
            l2: self.train.l2,
            snapshot_every: self.train.snapshot_every,
            monitor_every: self.train.monitor_every,
            seed: self.seed,
            converge: self.train.converge,
        }
    }

    pub fn threshold(&self, key: &str) -> Option<f64> {
        self.thresholds.get(key).copied()
    }
}

/// Seed for a named sub-run: the first 8 bytes of sha256("base/label").
pub fn derived_seed(base: u64, label: &str) -> u64 {
    let digest = Sha256::digest(format!("{base}/{label}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
}

fn gaussian(n_pairs: usize, dim: usize, teacher: Value) -> Value {
    json!({ "kind": "gaussian", "n_pairs": n_pairs, "dim": dim, "teacher": teacher })
}

fn named(family: Value) -> Value {
    json!({ "kind": "named", "family": family })
}

fn train(loss: &str, eta: f64, steps: usize, snapshot_every: usize, monitor_every: usize, csv_every: usize) -> Value {
    json!({ "loss": loss, "eta": eta, "steps": steps, "l2": 0.0, "snapshot_every": snapshot_every,
            "monitor_every": monitor_every, "csv_every": csv_every })
}

fn net(width: usize, depth: usize, w_init: f64) -> Value {
    json!({ "width": width, "depth": depth, "w_init": w_init })
}

/// Default document for each experiment kind.
pub fn preset(kind: ExperimentKind) -> Value {
    let lps = json!({ "kind": "linear_plus_sine" });
    let mut v = match kind {
        ExperimentKind::Fig2Equivalence => json!({
            "dataset": gaussian(1000, 20, lps),
            "network": net(500, 2, 1e-8),
            "train": train("square", 0.004, 25_000, 100, 5, 10),
            "sweep": { "alpha": [0.0, 0.25, 0.5, 0.75, 1.0] },
            "thresholds": { "weight_error_max": 0.003, "loss_gap_max": 0.01, "growth_rel_error": 0.02,
                            "early_rank_ratio": 1e-3, "ols_rel_error": 1e-3, "even_energy_fraction": 1e-6 },
        }),
        ExperimentKind::FigCVariants => json!({
            "dataset": gaussian(1000, 20, lps),
            "network": net(500, 2, 1e-8),
            "train": train("square", 0.004, 25_000, 100, 100, 10),
            "sweep": { "alpha": [0.0, 0.5] },
            "runs": [
                { "name": "l2", "train": { "l2": 0.4 },
                  "thresholds": { "weight_error_max": 0.003, "loss_gap_max": 0.01 } },
                { "name": "large_lr", "train": { "eta": 0.6, "steps": 400, "snapshot_every": 1, "monitor_every": 1, "csv_every": 1 },
                  "thresholds": { "loss_gap_max": 0.02 } },
                { "name": "large_init", "network": { "w_init": 0.5 }, "train": { "steps": 15_000 },
                  "thresholds": { "weight_error_max": 0.03, "loss_gap_max": 0.02 } },
            ],
        }),
        ExperimentKind::ClosedFormCheck => json!({
            "dataset": { "kind": "gaussian", "n_pairs": 200, "dim": 5, "teacher": lps, "whiten": true },
            "network": { "width": 50, "depth": 2, "w_init": 1e-3, "rank1_balanced": true },
            "train": train("square", 0.001, 0, 10, 1000, 10),
            "sweep": { "alpha": [0.0, 1.0] },
            "thresholds": { "closed_form_rel_error": 1e-2, "whitening_residual": 1e-2 },
        }),
        ExperimentKind::Fig3OrthoXor => json!({
            "dataset": named(json!({ "name": "ortho2" })),
            "network": net(60, 2, 1e-6),
            "train": train("square", 0.001, 30_000, 100, 100, 10),
            "runs": [
                { "name": "ortho2_square" },
                { "name": "xor4_square", "dataset": { "family": { "name": "xor4" } } },
                { "name": "ortho2_logistic", "train": { "loss": "logistic", "eta": 0.004 } },
                { "name": "xor4_logistic", "dataset": { "family": { "name": "xor4" } }, "train": { "loss": "logistic", "eta": 0.004 } },
                { "name": "ortho_unit2_norms", "dataset": { "family": { "name": "ortho_unit2" } }, "train": { "steps": 80_000 },
                  "thresholds": { "ortho_norm_rel_error": 0.02 } },
            ],
            "thresholds": { "superposition_gap": 0.05, "drop_count_error": 0.0 },
        }),
        ExperimentKind::Fig5DeepStructure => json!({
            "dataset": gaussian(1000, 20, json!({ "kind": "linear" })),
            "network": net(100, 3, 1e-2),
            "train": train("square", 0.1, 20_000, 1000, 100, 10),
            "runs": [
                { "name": "depth3" },
                { "name": "depth4", "network": { "depth": 4, "w_init": 0.1 }, "train": { "eta": 0.2 } },
            ],
            "thresholds": { "negative_mass": 1e-3, "intermediate_rank": 2.0, "outer_rank": 1.0,
                            "coefficient_lo": 0.49, "coefficient_hi": 0.51, "pm_ratio_lo": 0.9, "pm_ratio_hi": 1.1 },
        }),
        ExperimentKind::Fig7Plateau => json!({
            "dataset": named(json!({ "name": "asym6", "delta": 0.1 })),
            "network": net(100, 2, 1e-3),
            "train": train("square", 0.025, 200_000, 200_000, 1000, 20),
            "sweep": { "delta": [0.05, 0.1, 0.2, 0.4] },
            "thresholds": { "slope_lo": -1.25, "slope_hi": -0.8 },
        }),
        ExperimentKind::Fig1Expressivity => json!({
            "dataset": named(json!({ "name": "fan", "sectors_half": 3 })),
            "network": net(100, 2, 1e-2),
            "train": train("square", 0.2, 10_000, 1000, 1000, 10),
            "runs": [
                { "name": "fan_depth2", "thresholds": { "misclass_min": 0.25 } },
                { "name": "fan_depth3", "network": { "depth": 3 }, "train": { "steps": 80_000 }, "thresholds": { "misclass_max": 0.05 } },
                { "name": "circle_depth2", "dataset": { "family": { "name": "circle" } } },
                { "name": "circle_depth3", "dataset": { "family": { "name": "circle" } }, "network": { "depth": 3 }, "train": { "steps": 80_000 } },
            ],
        }),
        ExperimentKind::AppGLabelflip => json!({
            "dataset": named(json!({ "name": "arc_separable" })),
            "network": net(100, 2, 1e-2),
            "train": train("logistic", 0.1, 10_000, 1000, 100, 10),
            "thresholds": { "margin_cosine": 0.999 },
        }),
        ExperimentKind::Gradcheck => json!({
            "dataset": gaussian(40, 3, lps),
            "network": net(4, 2, 2.0),
            "train": train("square", 1e-3, 10_000, 10_000, 100, 100),
            "thresholds": { "gradient_rel_error": 1e-6, "halfspace_identity": 1e-12, "odd_part_identity": 1e-12,
                            "balancedness_drift": 1e-8, "reduction_gap": 1e-12, "depth_sep_oddness": 1e-12,
                            "depth_sep_nonlinearity": 0.5, "norm_bound_violations": 0.0 },
        }),
    };
    let m = v.as_object_mut().expect("preset is an object");
    m.insert("experiment".into(), json!(kind.name()));
    m.insert("seed".into(), json!(0));
    m.insert("output".into(), json!(format!("runs/{}", kind.name())));
    v
}

/// Objects merge key by key; anything else is replaced.
pub fn deep_merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// Applies `a.b.c=value`; the value is parsed as JSON, falling back to a string.
pub fn apply_set(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| anyhow!("override {assignment:?} is not key=value"))?;
    if path.is_empty() {
        bail!("override {assignment:?} has an empty key");
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(m) => {
                if last {
                    m.insert(part.to_string(), value);
                    return Ok(());
                }
                m.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()))
            }
            Value::Array(a) => {
                let idx: usize = part.parse().with_context(|| format!("{path}: {part:?} indexes an array"))?;
                let len = a.len();
                let slot = a.get_mut(idx).ok_or_else(|| anyhow!("{path}: index {idx} out of range ({len})"))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => bail!("{path}: {part:?} is below a scalar"),
        };
    }
    unreachable!("loop returns on the last part")
}

/// Preset for the document's `experiment`, merged with the document and overrides.
pub fn resolve(doc: &Value, sets: &[String]) -> Result<ExperimentConfig> {
    let name = doc.get("experiment").and_then(Value::as_str).ok_or_else(|| anyhow!("config needs a string field \"experiment\""))?;
    let kind = ExperimentKind::parse(name)?;
    let mut merged = preset(kind);
    // Run lists replace rather than merge element-wise.
    if doc.get("runs").is_some() {
        merged.as_object_mut().expect("object").remove("runs");
    }
    deep_merge(&mut merged, doc);
    // Overrides see the merged document, so they can index preset run lists.
    for s in sets {
        apply_set(&mut merged, s)?;
    }
    if merged.get("experiment") != Some(&json!(kind.name())) {
        bail!("the experiment cannot be changed by an override");
    }
    let cfg: ExperimentConfig = serde_json::from_value(merged).context("invalid experiment config")?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        for run in self.resolve_runs()? {
            if run.network.depth < 2 {
                bail!("run {}: depth must be at least 2", run.name);
            }
            if run.network.width == 0 {
                bail!("run {}: width must be positive", run.name);
            }
            if !(run.network.w_init > 0.0 && run.network.w_init.is_finite()) {
                bail!("run {}: w_init must be positive", run.name);
            }
            if run.network.rank1_balanced && (run.network.depth != 2 || run.network.width % 2 != 0) {
                bail!("run {}: rank-one balanced init needs depth 2 and even width", run.name);
            }
            if !(run.train.eta > 0.0 && run.train.eta.is_finite()) {
                bail!("run {}: eta must be positive", run.name);
            }
            if run.train.snapshot_every == 0 || run.train.monitor_every == 0 || run.train.csv_every == 0 {
                bail!("run {}: cadences must be at least 1", run.name);
            }
            if run.sweep.alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
                bail!("run {}: alpha must lie in [0, 1]", run.name);
            }
        }
        match self.experiment {
            ExperimentKind::Fig2Equivalence | ExperimentKind::FigCVariants | ExperimentKind::ClosedFormCheck if self.sweep.alpha.is_empty() => {
                bail!("{} needs sweep.alpha", self.experiment.name())
            }
            ExperimentKind::Fig7Plateau if self.sweep.delta.len() < 2 => bail!("fig7_plateau needs at least two sweep.delta values"),
            _ => Ok(()),
        }
    }

    /// Concrete runs: each `runs` entry merged over the base document.
    pub fn resolve_runs(&self) -> Result<Vec<RunSpec>> {
        let mut base = serde_json::to_value(self)?;
        let obj = base.as_object_mut().expect("object");
        obj.remove("runs");
        let entries = if self.runs.is_empty() { vec![json!({ "name": "main" })] } else { self.runs.clone() };
        let mut out = Vec::with_capacity(entries.len());
        for entry in entries {
            let name = entry.get("name").and_then(Value::as_str).ok_or_else(|| anyhow!("every run needs a \"name\""))?.to_string();
            if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
                bail!("run name {name:?} is not a plain directory name");
            }
            let mut doc = base.clone();
            // Run-level thresholds replace the base set.
            if entry.get("thresholds").is_some() {
                doc.as_object_mut().expect("object").remove("thresholds");
            }
            let mut over = entry.clone();
            over.as_object_mut().ok_or_else(|| anyhow!("run {name}: entries must be objects"))?.remove("name");
            deep_merge(&mut doc, &over);
            let merged: ExperimentConfig = serde_json::from_value(doc).with_context(|| format!("run {name}"))?;
            out.push(RunSpec {
                seed: derived_seed(self.seed, &name),
                name,
                dataset: merged.dataset,
                network: merged.network,
                train: merged.train,
                sweep: merged.sweep,
                thresholds: merged.thresholds,
            });
        }
        let mut names: Vec<&str> = out.iter().map(|r| r.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            bail!("run names must be unique");
        }
        Ok(out)
    }

    /// Stable identifier of the resolved config and build.
    /// The output location is excluded, so the same experiment written elsewhere keeps its id.
    pub fn run_id(&self) -> String {
        let mut c = self.clone();
        c.output = PathBuf::new();
        let text = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(format!("{}\n{text}", env!("CARGO_PKG_VERSION")).as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_resolves() {
        for kind in ExperimentKind::ALL {
            let cfg = resolve(&json!({ "experiment": kind.name() }), &[]).unwrap();
            assert_eq!(cfg.experiment, kind);
            assert!(!cfg.resolve_runs().unwrap().is_empty());
        }
    }

    #[test]
    fn overrides_reach_leaves_and_runs() {
        let cfg = resolve(
            &json!({ "experiment": "fig2_equivalence", "network": { "width": 8 } }),
            &["train.eta=0.01".into(), "sweep.alpha=[0.5]".into(), "output=/tmp/x".into()],
        )
        .unwrap();
        assert_eq!(cfg.network.width, 8);
        assert_eq!(cfg.network.w_init, 1e-8);
        assert_eq!(cfg.train.eta, 0.01);
        assert_eq!(cfg.sweep.alpha, vec![0.5]);
        assert_eq!(cfg.output, PathBuf::from("/tmp/x"));
        let c = resolve(&json!({ "experiment": "figC_variants" }), &["runs.1.train.eta=0.5".into()]).unwrap();
        let runs = c.resolve_runs().unwrap();
        assert_eq!(runs[1].train.eta, 0.5);
        assert_eq!(runs[1].train.steps, 400);
        assert_eq!(runs[0].train.l2, 0.4);
        assert_eq!(runs[0].train.eta, 0.004);
        assert!(!runs[1].thresholds.contains_key("weight_error_max"));
    }

    #[test]
    fn bad_configs_are_rejected_with_reasons() {
        let err = resolve(&json!({ "experiment": "fig9" }), &[]).unwrap_err();
        assert!(err.to_string().contains("unknown experiment"));
        let err = resolve(&json!({ "experiment": "fig2_equivalence", "network": { "widht": 3 } }), &[]).unwrap_err();
        assert!(format!("{err:#}").contains("widht"));
        assert!(resolve(&json!({ "experiment": "fig2_equivalence" }), &["train.eta=-1".into()]).is_err());
        assert!(resolve(&json!({ "experiment": "fig2_equivalence" }), &["noequals".into()]).is_err());
    }

    #[test]
    fn seeds_differ_per_run_and_are_stable() {
        assert_eq!(derived_seed(0, "a"), derived_seed(0, "a"));
        assert_ne!(derived_seed(0, "a"), derived_seed(0, "b"));
        assert_ne!(derived_seed(0, "a"), derived_seed(1, "a"));
    }
}
