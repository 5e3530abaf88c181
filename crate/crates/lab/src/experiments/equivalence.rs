//! Leaky-ReLU runs against their rescaled linear counterparts, one per (run, α).

use anyhow::{anyhow, bail, Result};
use rayon::prelude::*;
use relulab::analysis::{equivalence_report, fit_exponential_rate};
use relulab::datasets::{compute_stats, DataStats, Dataset};
use relulab::dynamics::{integrate_linear, train, TrainConfig, Trajectory};
use relulab::numkit::{norm, singular_values};
use relulab::theory::{decompose_two_layer, ols_solution, symmetric_loss_split, EarlyPhaseSpec};
use serde_json::json;

use super::{build_dataset, data_seed, init_net, loss_plot, max_of, nan_max, tag, Ctx, Evaluation, Job};
use crate::artifacts::RunDir;
use crate::config::{ExperimentConfig, RunSpec};
use crate::predicate::Bound;
use crate::svg::{line_plot, Series};

/// Growth is fitted between the first times ‖W₂‖ reaches these multiples of its initial value.
pub const GROWTH_WINDOW: (f64, f64) = (10.0, 1e4);

pub(super) fn simulate(cfg: &ExperimentConfig, runs: &[RunSpec], dir: &RunDir) -> Result<Vec<Job>> {
    let mut work = Vec::new();
    for run in runs {
        let data = build_dataset(&run.dataset, data_seed(cfg))?;
        dir.write_dataset(&format!("{}/dataset.csv", run.name), &data)?;
        for &alpha in &run.sweep.alpha {
            work.push((run, alpha, data.clone()));
        }
    }
    let jobs: Vec<Vec<Job>> = work.par_iter().map(|(run, alpha, data)| one(run, *alpha, data, dir)).collect::<Result<_>>()?;
    Ok(jobs.into_iter().flatten().collect())
}

fn one(run: &RunSpec, alpha: f64, data: &Dataset, dir: &RunDir) -> Result<Vec<Job>> {
    let sub = format!("{}/{}", run.name, tag("alpha", alpha));
    let stats = compute_stats(data, data.meta.reduction);
    let net0 = init_net(run, data.dim(), alpha)?;
    let cfg = run.train_config(data.meta.reduction);
    let relu = train(&net0, data, &cfg)?;
    let k = (alpha + 1.0) / 2.0;
    let lin_cfg = TrainConfig { eta: cfg.eta * k, ..cfg.clone() };
    let lin = integrate_linear(&net0.scaled(k.sqrt()).with_alpha(1.0)?, &stats, &lin_cfg)?;

    dir.write_trajectory(&format!("{sub}/relu.csv"), &relu, run.train.csv_every)?;
    dir.write_trajectory(&format!("{sub}/linear.csv"), &lin, run.train.csv_every)?;
    dir.write_net(&format!("{sub}/final_relu.json"), &relu.final_net)?;
    dir.write_net(&format!("{sub}/final_linear.json"), &lin.final_net)?;
    if let Ok(eq) = equivalence_report(&relu, &lin, alpha) {
        let rows: Vec<Vec<f64>> = (0..eq.time_grid.len()).map(|i| vec![eq.time_grid[i], eq.weight_error[i], eq.loss_gap[i]]).collect();
        dir.write_csv(&format!("{sub}/equivalence.csv"), &["t", "weight_error", "loss_gap"], &rows)?;
        let svg = line_plot(
            &format!("weight error, alpha = {alpha}"),
            "t (linear time)",
            "relative error",
            &[Series { label: "weight".into(), xs: &eq.time_grid, ys: &eq.weight_error }, Series { label: "loss".into(), xs: &eq.time_grid, ys: &eq.loss_gap }],
            true,
        );
        dir.write_text(&format!("{sub}/equivalence.svg"), &svg)?;
    }
    if depth_two(run) {
        dir.write_json(&format!("{sub}/early_phase.json"), &early_phase(&relu, &net0, &stats, run.network.w_init)?)?;
    }
    let rescaled: Vec<f64> = relu.times.iter().map(|t| t * k).collect();
    loss_plot(dir, &format!("{sub}/loss.svg"), &format!("loss, alpha = {alpha}"), &[("relu (t·k)", &rescaled, &relu.losses), ("linear", &lin.times, &lin.losses)])?;
    Ok(vec![Job::of(format!("{sub}/relu"), &relu), Job::of(format!("{sub}/linear"), &lin)])
}

fn depth_two(run: &RunSpec) -> bool {
    run.network.depth == 2
}

/// First crossing times of `GROWTH_WINDOW` multiples of the initial value.
fn growth_window(times: &[f64], norms: &[f64]) -> Option<(f64, f64)> {
    let n0 = *norms.first()?;
    let cross = |m: f64| times.iter().zip(norms).find(|(_, v)| **v >= m * n0).map(|(t, _)| *t);
    Some((cross(GROWTH_WINDOW.0)?, cross(GROWTH_WINDOW.1)?))
}

/// Rank-one emergence and the init sign imbalance ε of r₁ = (W₁(0)β̄ + W₂(0)ᵀ)/2.
fn early_phase(relu: &Trajectory, net0: &relulab::model::NetworkParams, stats: &DataStats, w_init: f64) -> Result<serde_json::Value> {
    let spec = EarlyPhaseSpec::from_init(net0, stats, 1.0, w_init)?;
    let (pos, neg) = spec.r1.iter().fold((0.0, 0.0), |(p, n), r| if *r > 0.0 { (p + r * r, n) } else { (p, n + r * r) });
    let eps = (pos - neg) / (pos + neg);
    let series = relu.monitor_series("norm_w2").ok_or_else(|| anyhow!("norm_w2 was not monitored"))?;
    let (t, v): (Vec<f64>, Vec<f64>) = series.into_iter().unzip();
    let mut out = json!({ "imbalance_eps": eps, "theory_window_end": spec.window_end() });
    if let Some((ta, tb)) = growth_window(&t, &v) {
        out["growth_window"] = json!([ta, tb]);
        if let Some(snap) = relu.snapshots.iter().find(|s| s.t >= tb) {
            out["snapshot_t"] = json!(snap.t);
            out["singular_values"] = json!(singular_values(snap.net.layer(0)));
        }
    }
    Ok(out)
}

pub(super) fn evaluate(ctx: &Ctx, runs: &[RunSpec], ev: &mut Evaluation) -> Result<()> {
    for run in runs {
        let data = ctx.dataset(&format!("{}/dataset.csv", run.name))?;
        let stats = compute_stats(&data, data.meta.reduction);
        for &alpha in &run.sweep.alpha {
            let sub = format!("{}/{}", run.name, tag("alpha", alpha));
            let k = (alpha + 1.0) / 2.0;
            let p = |key: &str| format!("{sub}/{key}");
            ev.maybe(run, "weight_error_max", p("weight_error_max"), Bound::Below, || {
                let t = ctx.table(&format!("{sub}/equivalence.csv"))?;
                max_of(&t.column("weight_error")?)
            });
            ev.maybe(run, "loss_gap_max", p("loss_gap_max"), Bound::Below, || loss_gap(ctx, &sub, k));
            ev.maybe(run, "growth_rel_error", p("growth_rel_error"), Bound::Below, || {
                let (t, v) = ctx.table(&format!("{sub}/relu.csv"))?.series("norm_w2")?;
                let (ta, tb) = growth_window(&t, &v).ok_or_else(|| anyhow!("‖W₂‖ never grew by {:e}", GROWTH_WINDOW.1))?;
                let rate = fit_exponential_rate(&t, &v, (ta, tb))?;
                let predicted = (alpha + 1.0) * stats.s / 2.0;
                Ok((rate - predicted).abs() / predicted)
            });
            ev.maybe(run, "early_rank_ratio", p("early_rank_ratio"), Bound::Below, || {
                let (t, v) = ctx.table(&format!("{sub}/relu.csv"))?.series("norm_w2")?;
                let (_, tb) = growth_window(&t, &v).ok_or_else(|| anyhow!("‖W₂‖ never grew by {:e}", GROWTH_WINDOW.1))?;
                let at: f64 = ctx.field(&format!("{sub}/early_phase.json"), "snapshot_t")?;
                if at < tb {
                    bail!("rank snapshot at t = {at} precedes the growth window end {tb}");
                }
                let sv: Vec<f64> = ctx.field(&format!("{sub}/early_phase.json"), "singular_values")?;
                Ok(sv.get(1).copied().unwrap_or(0.0) / sv[0])
            });
            ev.maybe(run, "ols_rel_error", p("ols_rel_error"), Bound::Below, || {
                let net = ctx.net(&format!("{sub}/final_relu.json"))?;
                let w = decompose_two_layer(&net)?.w_eff;
                let ols = ols_solution(&stats)?;
                let diff: Vec<f64> = w.iter().zip(&ols).map(|(a, b)| a - b).collect();
                Ok(norm(&diff) / norm(&ols))
            });
            ev.maybe(run, "even_energy_fraction", p("even_energy_fraction"), Bound::Below, || {
                let net = ctx.net(&format!("{sub}/final_relu.json"))?;
                let split = symmetric_loss_split(&net, &data)?;
                Ok(split.even_energy / (split.linear_loss + split.even_energy))
            });
            if depth_two(run) {
                if let Ok(eps) = ctx.field::<f64>(&format!("{sub}/early_phase.json"), "imbalance_eps") {
                    ev.metric(p("init_imbalance_floor"), eps.abs() / 2.0);
                }
            }
        }
    }
    Ok(())
}

/// max |L(t/k) − L_lin(t)| / L_lin(t) from the two trajectory files.
fn loss_gap(ctx: &Ctx, sub: &str, k: f64) -> Result<f64> {
    let relu = ctx.table(&format!("{sub}/relu.csv"))?;
    let lin = ctx.table(&format!("{sub}/linear.csv"))?;
    let (rt, rl) = (relu.column("t")?, relu.column("loss")?);
    let (lt, ll) = (lin.column("t")?, lin.column("loss")?);
    let mut worst: f64 = 0.0;
    let mut seen = 0;
    for (t, l) in lt.iter().zip(&ll) {
        if let Some(r) = relulab::dynamics::interpolate_series(&rt, &rl, t / k) {
            worst = nan_max(worst, (r - l).abs() / l);
            seen += 1;
        }
    }
    if seen == 0 {
        bail!("trajectories do not overlap");
    }
    Ok(worst)
}
