//! Two- versus three-layer nets on 2-D classification sets.

use anyhow::Result;
use rayon::prelude::*;
use relulab::dynamics::train;

use super::{build_dataset, data_seed, init_net, loss_plot, misclassification, Ctx, Evaluation, Job};
use crate::artifacts::RunDir;
use crate::config::{ExperimentConfig, RunSpec};
use crate::predicate::Bound;

pub(super) fn simulate(cfg: &ExperimentConfig, runs: &[RunSpec], dir: &RunDir) -> Result<Vec<Job>> {
    runs.par_iter()
        .map(|run| {
            let data = build_dataset(&run.dataset, data_seed(cfg))?;
            dir.write_dataset(&format!("{}/dataset.csv", run.name), &data)?;
            let alpha = run.sweep.alpha.first().copied().unwrap_or(0.0);
            let traj = train(&init_net(run, data.dim(), alpha)?, &data, &run.train_config(data.meta.reduction))?;
            dir.write_trajectory(&format!("{}/trajectory.csv", run.name), &traj, run.train.csv_every)?;
            dir.write_net(&format!("{}/final.json", run.name), &traj.final_net)?;
            loss_plot(dir, &format!("{}/loss.svg", run.name), &format!("loss, {}", run.name), &[("loss", &traj.times, &traj.losses)])?;
            Ok(Job::of(run.name.clone(), &traj))
        })
        .collect()
}

pub(super) fn evaluate(ctx: &Ctx, runs: &[RunSpec], ev: &mut Evaluation) -> Result<()> {
    for run in runs {
        let rate = || -> Result<f64> {
            let data = ctx.dataset(&format!("{}/dataset.csv", run.name))?;
            let net = ctx.net(&format!("{}/final.json", run.name))?;
            misclassification(&net, &data)
        };
        if let Ok(r) = rate() {
            ev.metric(format!("{}/misclassification", run.name), r);
        }
        ev.maybe(run, "misclass_min", format!("{}/misclass_min", run.name), Bound::AtLeast, rate);
        ev.maybe(run, "misclass_max", format!("{}/misclass_max", run.name), Bound::AtMost, rate);
    }
    Ok(())
}
