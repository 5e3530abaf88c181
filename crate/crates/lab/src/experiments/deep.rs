//! Deep ReLU nets on linear-teacher data: sign-block structure of the weights.

use anyhow::{anyhow, Result};
use rayon::prelude::*;
use relulab::analysis::{elbow_time, structure_report, StructureReport};
use relulab::dynamics::train;
use serde_json::json;

use super::{build_dataset, data_seed, init_net, loss_plot, Ctx, Evaluation, Job};
use crate::artifacts::RunDir;
use crate::config::{ExperimentConfig, RunSpec};
use crate::predicate::Bound;

/// The elbow is where the loss has made all but this share of its total descent.
pub const ELBOW_FRACTION: f64 = 0.05;

fn alpha(run: &RunSpec) -> f64 {
    run.sweep.alpha.first().copied().unwrap_or(0.0)
}

pub(super) fn simulate(cfg: &ExperimentConfig, runs: &[RunSpec], dir: &RunDir) -> Result<Vec<Job>> {
    runs.par_iter()
        .map(|run| {
            let data = build_dataset(&run.dataset, data_seed(cfg))?;
            dir.write_dataset(&format!("{}/dataset.csv", run.name), &data)?;
            let net0 = init_net(run, data.dim(), alpha(run))?;
            let traj = train(&net0, &data, &run.train_config(data.meta.reduction))?;
            dir.write_trajectory(&format!("{}/trajectory.csv", run.name), &traj, run.train.csv_every)?;
            dir.write_net(&format!("{}/final.json", run.name), &traj.final_net)?;
            let te = elbow_time(&traj.losses, &traj.times, ELBOW_FRACTION)?;
            let snap = traj.snapshots.iter().find(|s| s.t >= te).ok_or_else(|| anyhow!("no snapshot after the elbow"))?;
            dir.write_json(&format!("{}/elbow.json", run.name), &json!({ "elbow_time": te, "t": snap.t, "net": snap.net }))?;
            dir.write_json(&format!("{}/structure.json", run.name), &json!({ "final": structure_report(&traj.final_net, None)? }))?;
            loss_plot(dir, &format!("{}/loss.svg", run.name), &format!("loss, {}", run.name), &[("loss", &traj.times, &traj.losses)])?;
            Ok(Job::of(run.name.clone(), &traj))
        })
        .collect()
}

fn intermediate<T: Copy>(v: &[T]) -> &[T] {
    &v[1..v.len() - 1]
}

pub(super) fn evaluate(ctx: &Ctx, runs: &[RunSpec], ev: &mut Evaluation) -> Result<()> {
    for run in runs {
        let p = |key: &str| format!("{}/{key}", run.name);
        let report = ctx.net(&format!("{}/final.json", run.name)).and_then(|n| Ok(structure_report(&n, None)?));
        let rep = |f: &dyn Fn(&StructureReport) -> f64| -> Result<f64> {
            match &report {
                Ok(r) => Ok(f(r)),
                Err(e) => Err(anyhow!("{e:#}")),
            }
        };
        ev.maybe(run, "negative_mass", p("negative_mass"), Bound::Below, || {
            rep(&|r| intermediate(&r.negative_mass).iter().copied().fold(0.0, f64::max))
        });
        ev.maybe(run, "intermediate_rank", p("intermediate_rank"), Bound::AtMost, || {
            rep(&|r| intermediate(&r.numerical_ranks).iter().copied().max().unwrap_or(0) as f64)
        });
        ev.maybe(run, "outer_rank", p("outer_rank"), Bound::AtMost, || {
            rep(&|r| r.numerical_ranks[0].max(*r.numerical_ranks.last().expect("layers")) as f64)
        });
        if let (Some(lo), Some(hi)) = (run.threshold("coefficient_lo"), run.threshold("coefficient_hi")) {
            match rep(&|r| r.effective_coefficient) {
                Ok(v) => ev.check(p("coefficient"), v, Bound::Within(lo, hi)),
                Err(e) => ev.predicates.push(crate::predicate::Predicate::broken(p("coefficient"), &e.to_string())),
            }
        }
        if let (Some(lo), Some(hi)) = (run.threshold("pm_ratio_lo"), run.threshold("pm_ratio_hi")) {
            match &report {
                Ok(r) => {
                    for (l, v) in r.pm_ratio.iter().enumerate() {
                        ev.check(p(&format!("pm_ratio_layer{}", l + 1)), *v, Bound::Within(lo, hi));
                    }
                }
                Err(e) => ev.predicates.push(crate::predicate::Predicate::broken(p("pm_ratio"), &format!("{e:#}"))),
            }
        }
        if let Ok(net) = ctx.field::<relulab::model::NetworkParams>(&format!("{}/elbow.json", run.name), "net") {
            if let Ok(r) = structure_report(&net, None) {
                ev.metric(p("elbow_negative_mass"), json!(intermediate(&r.negative_mass)));
                ev.metric(p("elbow_ranks"), json!(r.numerical_ranks));
                ev.metric(p("elbow_coefficient"), r.effective_coefficient);
            }
        }
    }
    Ok(())
}
