//! Logistic training on 2-D sets: direction of the effective linear map
//! against the hard-margin separator.

use anyhow::Result;
use rayon::prelude::*;
use relulab::dynamics::train;
use relulab::numkit::{dot, norm};
use relulab::theory::{decompose_two_layer, max_margin, TheoryError};

use super::{build_dataset, data_seed, init_net, loss_plot, misclassification, Ctx, Evaluation, Job};
use crate::artifacts::RunDir;
use crate::config::{ExperimentConfig, RunSpec};
use crate::predicate::{Bound, Predicate};

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
        let data = ctx.dataset(&format!("{}/dataset.csv", run.name))?;
        let net = ctx.net(&format!("{}/final.json", run.name))?;
        ev.metric(format!("{}/misclassification", run.name), misclassification(&net, &data)?);
        let Some(th) = run.threshold("margin_cosine") else { continue };
        let name = format!("{}/margin_cosine", run.name);
        let w = decompose_two_layer(&net)?.w_eff;
        match max_margin(&data) {
            Ok(mm) => ev.check(name, dot(&w, &mm.direction) / norm(&w), Bound::AtLeast(th)),
            Err(TheoryError::Infeasible) => ev.predicates.push(Predicate::broken(name, "dataset is not linearly separable; no max-margin direction")),
            Err(e) => ev.predicates.push(Predicate::broken(name, &e.to_string())),
        }
    }
    Ok(())
}
