//! Small orthogonal and XOR-like sets. Each data point gets an independent
//! linear component built from the hidden units that end up serving it; the
//! full ReLU loss should be the sum of the component losses. Sign-block norms
//! of the second layer are compared with their scalar ODE.

use anyhow::{anyhow, bail, Result};
use rayon::prelude::*;
use relulab::analysis::{count_loss_drops, loss_superposition, LossCurve};
use relulab::datasets::{Dataset, Reduction};
use relulab::dynamics::{integrate_ortho_norm, train, TrainConfig};
use relulab::model::{pointwise_loss, NetworkParams};
use relulab::numkit::{dot, norm, Matrix};

use super::{build_dataset, data_seed, init_net, loss_plot, nan_max, Ctx, Evaluation, Job};
use crate::artifacts::RunDir;
use crate::config::{ExperimentConfig, RunSpec};
use crate::predicate::{Bound, Predicate};

/// Units whose final incoming norm is below this share of the largest are idle.
pub const ACTIVE_UNIT_FRACTION: f64 = 1e-3;
/// The superposition gap is measured after this share of the horizon.
pub const GAP_AFTER: f64 = 0.05;
/// A drop must remove this share of the loss range.
pub const DROP_MIN_FRACTION: f64 = 0.05;
/// The block ODE starts once a block reaches this share of its fixed point √(P‖β‖).
pub const BLOCK_START: f64 = 1e-3;

/// For each data point, the hidden units whose final weight vector has it as the best cosine match.
fn unit_assignment(net: &NetworkParams, data: &Dataset) -> Vec<Vec<usize>> {
    let w1 = net.layer(0);
    let largest = (0..w1.rows()).map(|h| norm(w1.row(h))).fold(0.0, f64::max);
    let mut out = vec![Vec::new(); data.len()];
    for h in 0..w1.rows() {
        let w = w1.row(h);
        if norm(w) < ACTIVE_UNIT_FRACTION * largest {
            continue;
        }
        let cos = |i: usize| dot(w, data.x(i)) / norm(data.x(i));
        let best = (0..data.len()).max_by(|a, b| cos(*a).total_cmp(&cos(*b))).expect("non-empty data");
        out[best].push(h);
    }
    out
}

/// Linear two-layer net made of the given units' initial weights.
fn component_net(init: &NetworkParams, units: &[usize]) -> Result<NetworkParams> {
    let rows: Vec<Vec<f64>> = units.iter().map(|h| init.layer(0).row(*h).to_vec()).collect();
    let cols: Vec<f64> = units.iter().map(|h| init.layer(1).get(0, *h)).collect();
    Ok(NetworkParams::new(vec![Matrix::from_rows(&rows)?, Matrix::row_vector(&cols)?], 1.0)?)
}

/// ‖W₂ restricted to entries of the given sign‖.
fn block_norm(net: &NetworkParams, sign: f64) -> f64 {
    net.layer(1).data().iter().filter(|v| **v * sign > 0.0).map(|v| v * v).sum::<f64>().sqrt()
}

pub(super) fn simulate(cfg: &ExperimentConfig, runs: &[RunSpec], dir: &RunDir) -> Result<Vec<Job>> {
    let jobs: Vec<Vec<Job>> = runs.par_iter().map(|run| one(cfg, run, dir)).collect::<Result<_>>()?;
    Ok(jobs.into_iter().flatten().collect())
}

fn one(cfg: &ExperimentConfig, run: &RunSpec, dir: &RunDir) -> Result<Vec<Job>> {
    let data = build_dataset(&run.dataset, data_seed(cfg))?;
    dir.write_dataset(&format!("{}/dataset.csv", run.name), &data)?;
    let alpha = run.sweep.alpha.first().copied().unwrap_or(0.0);
    let net0 = init_net(run, data.dim(), alpha)?;
    let tcfg = run.train_config(data.meta.reduction);
    let full = train(&net0, &data, &tcfg)?;
    dir.write_trajectory(&format!("{}/full.csv", run.name), &full, run.train.csv_every)?;
    dir.write_net(&format!("{}/final.json", run.name), &full.final_net)?;
    let blocks: Vec<Vec<f64>> =
        full.snapshots.iter().map(|s| vec![s.step as f64, s.t, block_norm(&s.net, 1.0), block_norm(&s.net, -1.0)]).collect();
    dir.write_csv(&format!("{}/blocks.csv", run.name), &["step", "t", "pos", "neg"], &blocks)?;
    let mut jobs = vec![Job::of(format!("{}/full", run.name), &full)];
    if run.network.depth != 2 || data.meta.reduction != Reduction::Sum {
        return Ok(jobs);
    }
    let assignment = unit_assignment(&full.final_net, &data);
    let mut sum = vec![0.0; full.times.len()];
    for (i, units) in assignment.iter().enumerate() {
        let rel = format!("{}/component_{i}.csv", run.name);
        if units.is_empty() {
            // No unit serves this point: its loss stays at the zero-output value.
            let l = pointwise_loss(tcfg.loss, 0.0, data.targets[i]).0;
            let rows: Vec<Vec<f64>> = full.times.iter().enumerate().step_by(run.train.csv_every).map(|(s, t)| vec![s as f64, *t, l]).collect();
            dir.write_csv(&rel, &["step", "t", "loss"], &rows)?;
            sum.iter_mut().for_each(|v| *v += l);
            continue;
        }
        let sub = data.subset(&[i], &format!("{}_{i}", data.name))?;
        let comp = train(&component_net(&net0, units)?, &sub, &TrainConfig { converge: None, ..tcfg.clone() })?;
        dir.write_trajectory(&rel, &comp, run.train.csv_every)?;
        for (s, v) in sum.iter_mut().enumerate() {
            *v += comp.losses.get(s).copied().unwrap_or(f64::NAN);
        }
        jobs.push(Job::of(format!("{}/component_{i}", run.name), &comp));
    }
    loss_plot(dir, &format!("{}/loss.svg", run.name), &format!("loss, {}", run.name), &[("relu", &full.times, &full.losses), ("sum of components", &full.times, &sum)])?;
    Ok(jobs)
}

pub(super) fn evaluate(ctx: &Ctx, runs: &[RunSpec], ev: &mut Evaluation) -> Result<()> {
    for run in runs {
        let p = |key: &str| format!("{}/{key}", run.name);
        let superposition = run.threshold("superposition_gap").is_some() || run.threshold("drop_count_error").is_some();
        if superposition {
            match components(ctx, run) {
                Ok((gap, drops, count)) => {
                    ev.metric(p("drop_count"), drops);
                    ev.metric(p("component_count"), count);
                    if let Some(th) = run.threshold("superposition_gap") {
                        ev.check(p("superposition_gap"), gap, Bound::Below(th));
                    }
                    if let Some(th) = run.threshold("drop_count_error") {
                        ev.check(p("drop_count_error"), (drops as f64 - count as f64).abs(), Bound::AtMost(th));
                    }
                }
                Err(e) => ev.predicates.push(Predicate::broken(p("superposition_gap"), &format!("{e:#}"))),
            }
        }
        ev.maybe(run, "ortho_norm_rel_error", p("ortho_norm_rel_error"), Bound::Below, || block_ode_error(ctx, run));
    }
    Ok(())
}

/// (max gap / L(0), number of loss drops, number of non-idle components).
fn components(ctx: &Ctx, run: &RunSpec) -> Result<(f64, usize, usize)> {
    let data = ctx.dataset(&format!("{}/dataset.csv", run.name))?;
    if data.meta.reduction != Reduction::Sum {
        bail!("components add up only under sum reduction");
    }
    let full = ctx.table(&format!("{}/full.csv", run.name))?;
    let (ft, fl) = (full.column("t")?, full.column("loss")?);
    let net = ctx.net(&format!("{}/final.json", run.name))?;
    let count = unit_assignment(&net, &data).iter().filter(|u| !u.is_empty()).count();
    let mut comps = Vec::new();
    for i in 0..data.len() {
        let t = ctx.table(&format!("{}/component_{i}.csv", run.name))?;
        comps.push((t.column("t")?, t.column("loss")?));
    }
    let curves: Vec<LossCurve> = comps.iter().map(|(t, l)| LossCurve { times: t, losses: l }).collect();
    let horizon = *ft.last().ok_or_else(|| anyhow!("empty trajectory"))?;
    let sp = loss_superposition(LossCurve { times: &ft, losses: &fl }, &curves, GAP_AFTER * horizon)?;
    let drops = count_loss_drops(&fl, &ft, DROP_MIN_FRACTION)?;
    Ok((sp.max_gap, drops, count))
}

/// Worst relative deviation of either sign block from the scalar ODE started at the block's onset.
fn block_ode_error(ctx: &Ctx, run: &RunSpec) -> Result<f64> {
    let data = ctx.dataset(&format!("{}/dataset.csv", run.name))?;
    let blocks = ctx.table(&format!("{}/blocks.csv", run.name))?;
    let steps = blocks.column("step")?;
    let p = data.len();
    let weight = data.meta.reduction.weight(p);
    let mut worst: f64 = 0.0;
    for (col, sign) in [("pos", 1.0), ("neg", -1.0)] {
        let u = blocks.column(col)?;
        let beta_norm = (0..p).filter(|i| data.targets[*i] * sign > 0.0).map(|i| weight * norm(data.x(i)) * data.targets[i].abs()).fold(0.0, f64::max);
        let fixed = (p as f64 * beta_norm).sqrt();
        let start = u.iter().position(|v| *v >= BLOCK_START * fixed).ok_or_else(|| anyhow!("block {col} never grew"))?;
        let s0 = steps[start] as usize;
        let last = *steps.last().expect("non-empty") as usize;
        let ode = integrate_ortho_norm(u[start], beta_norm, p, run.train.eta, last - s0)?;
        for (s, v) in steps.iter().zip(&u).skip(start) {
            let o = ode[*s as usize - s0];
            worst = nan_max(worst, (v - o).abs() / o);
        }
    }
    Ok(worst)
}
