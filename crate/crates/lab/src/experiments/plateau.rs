//! Saddle-plateau length against the asymmetry δ of the six-point dataset.

use anyhow::{bail, Result};
use rayon::prelude::*;
use relulab::analysis::{loglog_slope, plateau_duration};
use relulab::datasets::{make_named, Named};
use relulab::dynamics::train;

use super::{init_net, loss_plot, tag, Ctx, Evaluation, Job};
use crate::artifacts::RunDir;
use crate::config::{DatasetSpec, ExperimentConfig, RunSpec};
use crate::predicate::{Bound, Predicate};

fn family(run: &RunSpec, delta: f64) -> Result<Named> {
    match &run.dataset {
        DatasetSpec::Named { family: Named::Asym6 { .. } } => Ok(Named::Asym6 { delta }),
        _ => bail!("run {}: the plateau sweep needs the asym6 family", run.name),
    }
}

pub(super) fn simulate(_cfg: &ExperimentConfig, runs: &[RunSpec], dir: &RunDir) -> Result<Vec<Job>> {
    let work: Vec<(&RunSpec, f64)> = runs.iter().flat_map(|r| r.sweep.delta.iter().map(move |d| (r, *d))).collect();
    work.par_iter()
        .map(|(run, delta)| {
            let sub = format!("{}/{}", run.name, tag("delta", *delta));
            let data = make_named(&family(run, *delta)?)?;
            dir.write_dataset(&format!("{sub}/dataset.csv"), &data)?;
            let alpha = run.sweep.alpha.first().copied().unwrap_or(0.0);
            let net0 = init_net(run, data.dim(), alpha)?;
            let traj = train(&net0, &data, &run.train_config(data.meta.reduction))?;
            dir.write_trajectory(&format!("{sub}/trajectory.csv"), &traj, run.train.csv_every)?;
            dir.write_net(&format!("{sub}/final.json"), &traj.final_net)?;
            loss_plot(dir, &format!("{sub}/loss.svg"), &format!("loss, delta = {delta}"), &[("loss", &traj.times, &traj.losses)])?;
            Ok(Job::of(sub, &traj))
        })
        .collect()
}

pub(super) fn evaluate(ctx: &Ctx, runs: &[RunSpec], ev: &mut Evaluation) -> Result<()> {
    for run in runs {
        let mut deltas = Vec::new();
        let mut durations = Vec::new();
        let mut failure = None;
        for &delta in &run.sweep.delta {
            let sub = format!("{}/{}", run.name, tag("delta", delta));
            let measured = ctx.table(&format!("{sub}/trajectory.csv")).and_then(|t| Ok(plateau_duration(&t.column("loss")?, &t.column("t")?)?));
            match measured {
                Ok(d) => {
                    ev.metric(format!("{sub}/plateau_duration"), d);
                    deltas.push(delta);
                    durations.push(d);
                }
                Err(e) => failure = Some(format!("{sub}: {e:#}")),
            }
        }
        let (Some(lo), Some(hi)) = (run.threshold("slope_lo"), run.threshold("slope_hi")) else { continue };
        let name = format!("{}/plateau_slope", run.name);
        match failure {
            Some(why) => ev.predicates.push(Predicate::broken(name, &why)),
            None => match loglog_slope(&deltas, &durations) {
                Ok(s) => ev.check(name, s, Bound::Within(lo, hi)),
                Err(e) => ev.predicates.push(Predicate::broken(name, &format!("no plateau to fit: {e}"))),
            },
        }
    }
    Ok(())
}
