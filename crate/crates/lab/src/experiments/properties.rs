//! Self-check suite: backprop against finite differences, symmetric-data
//! identities, invariants of the reduced flow and the early norm bound.
//! Everything is recomputed from the stored dataset when verifying.

use std::collections::BTreeMap;

use anyhow::Result;
use relulab::datasets::{compute_stats, halfspace_stats, DataStats, Dataset, Reduction};
use relulab::dynamics::{integrate_reduced_two_layer, monitor_norm_bound, train, TrainConfig};
use relulab::model::{gradient_check, gradients, init_gaussian, init_rank1_balanced, LossKind, NetworkParams};
use relulab::numkit::{norm, Matrix, SeededRng};
use relulab::theory::{decompose_two_layer, depth_sep_g};
use serde_json::json;

use super::{build_dataset, data_seed, Ctx, Evaluation, Job};
use crate::artifacts::RunDir;
use crate::config::{derived_seed, ExperimentConfig, RunSpec};
use crate::predicate::Bound;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Points used for the finite-difference check.
pub const FD_POINTS: usize = 5;
/// Initial scale of the run used for the early norm bound.
pub const BOUND_W_INIT: f64 = 1e-6;

fn random_unit(rng: &mut SeededRng, d: usize) -> Vec<f64> {
    let r: Vec<f64> = (0..d).map(|_| rng.gaussian()).collect();
    let n = norm(&r);
    r.iter().map(|v| v / n).collect()
}

fn two_layer(rng: &mut SeededRng, run: &RunSpec, d: usize, depth: usize, alpha: f64) -> Result<NetworkParams> {
    let mut widths = vec![d];
    widths.extend(std::iter::repeat_n(run.network.width, depth - 1));
    widths.push(1);
    Ok(init_gaussian(rng, &widths, alpha, run.network.w_init)?)
}

/// Named property values; the bound for each is `<= threshold` unless noted in `bound_for`.
pub fn property_suite(run: &RunSpec, data: &Dataset) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    let mut rng = SeededRng::new(derived_seed(run.seed, "properties"));
    let d = data.dim();

    let idx: Vec<usize> = (0..data.len().min(FD_POINTS)).collect();
    let few = data.subset(&idx, "fd")?;
    let mut worst: f64 = 0.0;
    for loss in [LossKind::Square, LossKind::Logistic] {
        for alpha in [0.0, 0.3, 1.0] {
            for depth in [2, 3] {
                for l2 in [0.0, 0.3] {
                    let net = two_layer(&mut rng, run, d, depth, alpha)?;
                    worst = worst.max(gradient_check(&net, &few, loss, Reduction::Mean, l2, FD_STEP)?);
                }
            }
        }
    }
    out.insert("gradient_rel_error".into(), worst);

    // On symmetric data the half-space statistics equal the full ones.
    let mut worst: f64 = 0.0;
    for reduction in [Reduction::Mean, Reduction::Sum] {
        let r = random_unit(&mut rng, d);
        let half = halfspace_stats(data, &r, reduction)?;
        let full = compute_stats(data, reduction);
        let db = half.beta.iter().zip(&full.beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(half.sigma.max_abs_diff(&full.sigma)).max(db);
    }
    out.insert("halfspace_identity".into(), worst);

    let mut worst: f64 = 0.0;
    for alpha in [0.0, 0.3] {
        let net = two_layer(&mut rng, run, d, 2, alpha)?;
        let dec = decompose_two_layer(&net)?;
        for i in 0..data.len() {
            let x = data.x(i);
            let minus: Vec<f64> = x.iter().map(|v| -v).collect();
            let (fp, fm) = (net.output(x)?, net.output(&minus)?);
            let odd = ((fp - fm) / 2.0 - relulab::numkit::dot(&dec.w_eff, x)).abs();
            let even = ((fp + fm) / 2.0 - dec.even_part(x)).abs();
            worst = worst.max(odd).max(even);
        }
    }
    out.insert("odd_part_identity".into(), worst);

    let grid: Vec<[f64; 2]> = (0..16)
        .flat_map(|k| {
            let a = std::f64::consts::PI * k as f64 / 8.0;
            [1.0, 2.5].map(|r| [r * a.cos(), r * a.sin()])
        })
        .collect();
    let oddness = grid.iter().map(|x| (depth_sep_g(*x) + depth_sep_g([-x[0], -x[1]])).abs()).fold(0.0, f64::max);
    out.insert("depth_sep_oddness".into(), oddness);
    // Additivity fails on the basis vectors, so g is not linear.
    out.insert("depth_sep_nonlinearity".into(), (depth_sep_g([1.0, 0.0]) + depth_sep_g([0.0, 1.0]) - depth_sep_g([1.0, 1.0])).abs());

    // Σ diagonal with β on an eigenvector keeps the rank-one residual parallel to r,
    // so Euler preserves balancedness up to rounding.
    let sigma = Matrix::diag(&[1.0, 2.0, 0.5])?;
    let beta = vec![1.5, 0.0, 0.0];
    let stats = DataStats {
        s: 1.5,
        beta_hat: vec![1.0, 0.0, 0.0],
        trace_sigma: 3.5,
        y2: 1.0,
        reduction: Reduction::Mean,
        sigma,
        beta,
    };
    let net = init_rank1_balanced(&mut rng, run.network.width + run.network.width % 2, &[1.0, 0.0, 0.0], 0.0, 0.1)?;
    let cfg = TrainConfig { eta: run.train.eta, steps: run.train.steps, monitor_every: run.train.monitor_every, snapshot_every: run.train.steps, ..TrainConfig::default() };
    let traj = integrate_reduced_two_layer(&net, &stats, &cfg)?;
    let drift = traj.monitor("balancedness").unwrap_or(&[]).iter().copied().fold(0.0, f64::max);
    out.insert("balancedness_drift".into(), drift);

    // Early-phase norm bound from a small init; w_init is the larger initial layer norm.
    let stats = compute_stats(data, data.meta.reduction);
    let net = two_layer(&mut rng, run, d, 2, 0.0)?.scaled(BOUND_W_INIT / run.network.w_init);
    let w0 = net.layer(0).frob_norm().max(net.layer(1).frob_norm());
    let end = (1.0 / w0).ln() / (stats.s + stats.trace_sigma);
    let steps = (end / run.train.eta).ceil() as usize + 1;
    let cfg = TrainConfig { eta: run.train.eta, steps, monitor_every: 1, snapshot_every: steps, reduction: data.meta.reduction, ..TrainConfig::default() };
    let traj = train(&net, data, &cfg)?;
    let report = monitor_norm_bound(&traj, stats.s, stats.trace_sigma, w0);
    out.insert("norm_bound_violations".into(), if report.checked == 0 { f64::NAN } else { report.violations as f64 });

    let net = two_layer(&mut rng, run, d, 3, 0.3)?;
    let p = data.len() as f64;
    let gs = gradients(&net, data, LossKind::Square, Reduction::Sum, 0.0)?;
    let gm = gradients(&net, data, LossKind::Square, Reduction::Mean, 0.0)?;
    let mut worst: f64 = 0.0;
    for (a, b) in gs.iter().zip(&gm) {
        let scale = a.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        worst = worst.max(a.max_abs_diff(&b.scale(p)) / scale);
    }
    out.insert("reduction_gap".into(), worst);
    Ok(out)
}

fn bound_for(key: &str, th: f64) -> Bound {
    match key {
        "depth_sep_nonlinearity" => Bound::AtLeast(th),
        _ => Bound::AtMost(th),
    }
}

pub(super) fn simulate(cfg: &ExperimentConfig, runs: &[RunSpec], dir: &RunDir) -> Result<Vec<Job>> {
    for run in runs {
        let data = build_dataset(&run.dataset, data_seed(cfg))?;
        dir.write_dataset(&format!("{}/dataset.csv", run.name), &data)?;
        dir.write_json(&format!("{}/properties.json", run.name), &json!({ "properties": property_suite(run, &data)? }))?;
    }
    Ok(Vec::new())
}

pub(super) fn evaluate(ctx: &Ctx, runs: &[RunSpec], ev: &mut Evaluation) -> Result<()> {
    for run in runs {
        let data = ctx.dataset(&format!("{}/dataset.csv", run.name))?;
        let values = property_suite(run, &data)?;
        let stored: BTreeMap<String, Option<f64>> = ctx.field(&format!("{}/properties.json", run.name), "properties")?;
        for (key, v) in &values {
            if let Some(th) = run.threshold(key) {
                ev.check(format!("{}/{key}", run.name), *v, bound_for(key, th));
            }
            // The stored file must describe the same computation.
            let s = stored.get(key).copied().flatten();
            let same = match s {
                Some(s) => s == *v,
                None => v.is_nan(),
            };
            if !same {
                let mut p = crate::predicate::Predicate::new(format!("{}/{key}_matches_stored", run.name), 0.0, Bound::Above(0.0));
                p.note = Some(format!("stored {s:?}, recomputed {v:?}"));
                ev.predicates.push(p);
            }
        }
    }
    Ok(())
}
