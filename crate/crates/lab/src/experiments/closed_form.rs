//! Rank-one balanced two-layer nets on whitened data against the closed-form
//! linear map, over rescaled times t̃ ∈ [0.1/s, 10/s].

use anyhow::{bail, Result};
use rayon::prelude::*;
use relulab::datasets::{compute_stats, Dataset};
use relulab::dynamics::{odd_linear_map, train, TrainConfig};
use relulab::numkit::{norm, Matrix};
use relulab::theory::{closed_form_w, ClosedFormSpec};
use serde_json::json;

use super::{build_dataset, data_seed, init_net, nan_max, tag, Ctx, Evaluation, Job};
use crate::artifacts::RunDir;
use crate::config::{ExperimentConfig, RunSpec};
use crate::predicate::Bound;
use crate::svg::{line_plot, Series};

/// Rescaled-time range checked, in units of 1/s.
pub const CHECK_RANGE: (f64, f64) = (0.1, 10.0);

pub(super) fn simulate(cfg: &ExperimentConfig, runs: &[RunSpec], dir: &RunDir) -> Result<Vec<Job>> {
    let mut work = Vec::new();
    for run in runs {
        let data = build_dataset(&run.dataset, data_seed(cfg))?;
        dir.write_dataset(&format!("{}/dataset.csv", run.name), &data)?;
        for &alpha in &run.sweep.alpha {
            work.push((run, alpha, data.clone()));
        }
    }
    let jobs: Vec<Job> = work.par_iter().map(|(run, alpha, data)| one(run, *alpha, data, dir)).collect::<Result<_>>()?;
    Ok(jobs)
}

fn one(run: &RunSpec, alpha: f64, data: &Dataset, dir: &RunDir) -> Result<Job> {
    let sub = format!("{}/{}", run.name, tag("alpha", alpha));
    let stats = compute_stats(data, data.meta.reduction);
    let net0 = init_net(run, data.dim(), alpha)?;
    let spec = ClosedFormSpec::from_rank1_net(&net0, &stats, 1.0)?;
    let k = (alpha + 1.0) / 2.0;
    // steps = 0 asks for just enough steps to reach the end of the checked range.
    let steps = match run.train.steps {
        0 => (CHECK_RANGE.1 / (k * stats.s) / run.train.eta).ceil() as usize + 1,
        n => n,
    };
    let cfg = TrainConfig { steps, ..run.train_config(data.meta.reduction) };
    let traj = train(&net0, data, &cfg)?;
    let rows: Vec<Vec<f64>> = traj
        .snapshots
        .iter()
        .map(|s| {
            let mut row = vec![s.t];
            row.extend(odd_linear_map(&s.net));
            row
        })
        .collect();
    let header: Vec<String> = std::iter::once("t".to_string()).chain((0..data.dim()).map(|i| format!("w_{i}"))).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    dir.write_csv(&format!("{sub}/odd_map.csv"), &header, &rows)?;
    dir.write_json(&format!("{sub}/spec.json"), &json!({ "spec": spec, "steps": steps }))?;
    dir.write_trajectory(&format!("{sub}/trajectory.csv"), &traj, run.train.csv_every)?;

    let ts: Vec<f64> = traj.snapshots.iter().map(|s| s.t).collect();
    let sim: Vec<f64> = rows.iter().map(|r| norm(&r[1..])).collect();
    let cf: Vec<f64> = ts.iter().map(|t| closed_form_w(&spec, *t).map(|w| norm(&w)).unwrap_or(f64::NAN)).collect();
    let svg = line_plot(
        &format!("|w(t)|, alpha = {alpha}"),
        "t",
        "norm",
        &[Series { label: "simulated".into(), xs: &ts, ys: &sim }, Series { label: "closed form".into(), xs: &ts, ys: &cf }],
        true,
    );
    dir.write_text(&format!("{sub}/norm.svg"), &svg)?;
    Ok(Job::of(sub, &traj))
}

pub(super) fn evaluate(ctx: &Ctx, runs: &[RunSpec], ev: &mut Evaluation) -> Result<()> {
    for run in runs {
        let data = ctx.dataset(&format!("{}/dataset.csv", run.name))?;
        ev.maybe(run, "whitening_residual", format!("{}/whitening_residual", run.name), Bound::Below, || {
            let stats = compute_stats(&data, data.meta.reduction);
            Ok(stats.sigma.max_abs_diff(&Matrix::identity(data.dim())))
        });
        for &alpha in &run.sweep.alpha {
            let sub = format!("{}/{}", run.name, tag("alpha", alpha));
            ev.maybe(run, "closed_form_rel_error", format!("{sub}/closed_form_rel_error"), Bound::Below, || {
                let spec: ClosedFormSpec = ctx.field(&format!("{sub}/spec.json"), "spec")?;
                let table = ctx.table(&format!("{sub}/odd_map.csv"))?;
                let (lo, hi) = (CHECK_RANGE.0 / spec.s, CHECK_RANGE.1 / spec.s);
                let mut worst: f64 = 0.0;
                let mut checked = 0;
                for row in &table.rows {
                    let tt = spec.rescaled_time(row[0]);
                    if tt < lo || tt > hi {
                        continue;
                    }
                    let w = closed_form_w(&spec, row[0])?;
                    let sim = &row[1..];
                    let diff: Vec<f64> = w.iter().zip(sim).map(|(a, b)| a - b).collect();
                    worst = nan_max(worst, norm(&diff) / norm(sim));
                    checked += 1;
                }
                if checked == 0 {
                    bail!("no snapshot inside the checked time range");
                }
                Ok(worst)
            });
        }
    }
    Ok(())
}
