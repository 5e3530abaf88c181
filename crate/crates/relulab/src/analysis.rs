//! Verdicts computed from trajectories and trained weights.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{interpolate_series, linear_coefficient, odd_linear_map, Trajectory};
use crate::model::NetworkParams;
use crate::numkit::{dot, singular_values, top_right_singular_vector, Matrix};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("trajectories do not overlap in rescaled time")]
    NoOverlap,
    #[error("snapshot cadence {0} exceeds {MAX_SNAPSHOT_GAP} steps")]
    CoarseSnapshots(usize),
    #[error("networks differ in shape")]
    ShapeMismatch,
    #[error("series value {value} at index {index} is not positive")]
    NonPositive { index: usize, value: f64 },
    #[error("{0}")]
    Invalid(String),
}

/// Largest step gap between snapshots accepted by [`equivalence_report`].
pub const MAX_SNAPSHOT_GAP: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub alpha: f64,
    /// Linear-network times t.
    pub time_grid: Vec<f64>,
    /// ‖√k W(t/k) − W_lin(t)‖ / ‖W_lin(t)‖ with k = (α+1)/2.
    pub weight_error: Vec<f64>,
    /// |L(t/k) − L_lin(t)| / L_lin(t).
    pub loss_gap: Vec<f64>,
    pub max_weight_error: f64,
    pub max_loss_gap: f64,
}

fn check_cadence(traj: &Trajectory) -> Result<(), AnalysisError> {
    for w in traj.snapshots.windows(2) {
        let gap = w[1].step - w[0].step;
        if gap > MAX_SNAPSHOT_GAP {
            return Err(AnalysisError::CoarseSnapshots(gap));
        }
    }
    Ok(())
}

/// Compares a leaky-ReLU run against its linear counterpart at matched rescaled
/// times, on the linear run's snapshot grid.
pub fn equivalence_report(relu: &Trajectory, lin: &Trajectory, alpha: f64) -> Result<EquivalenceReport, AnalysisError> {
    check_cadence(relu)?;
    check_cadence(lin)?;
    let k = (alpha + 1.0) / 2.0;
    let relu_end = relu.snapshots.last().ok_or(AnalysisError::NoOverlap)?.t;
    let tol = 1e-9 * lin.eta;
    let mut report = EquivalenceReport {
        alpha,
        time_grid: Vec::new(),
        weight_error: Vec::new(),
        loss_gap: Vec::new(),
        max_weight_error: 0.0,
        max_loss_gap: 0.0,
    };
    for snap in &lin.snapshots {
        let t = snap.t;
        if t / k > relu_end + tol {
            break;
        }
        let Some(net) = relu.interpolate((t / k).min(relu_end)) else { continue };
        if net.widths() != snap.net.widths() {
            return Err(AnalysisError::ShapeMismatch);
        }
        let mut diff = 0.0;
        for (a, b) in net.layers().iter().zip(snap.net.layers()) {
            diff += a.scale(k.sqrt()).sub(b).expect("same shape").frob_norm_sq();
        }
        let err = diff.sqrt() / snap.net.norm();
        let l_lin = lin.losses[snap.step];
        let l_relu = relu.loss_at((t / k).min(relu_end)).ok_or(AnalysisError::NoOverlap)?;
        let gap = (l_relu - l_lin).abs() / l_lin;
        report.time_grid.push(t);
        report.weight_error.push(err);
        report.loss_gap.push(gap);
        report.max_weight_error = report.max_weight_error.max(err);
        report.max_loss_gap = report.max_loss_gap.max(gap);
    }
    if report.time_grid.is_empty() {
        return Err(AnalysisError::NoOverlap);
    }
    Ok(report)
}

/// Numerical rank cutoff σ_k/σ₁.
pub const RANK_THRESHOLD: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    /// Descending, per layer.
    pub singular_values: Vec<Vec<f64>>,
    pub rank_threshold: f64,
    pub numerical_ranks: Vec<usize>,
    /// ‖min(W_l, 0)‖ / ‖W_l‖ per layer.
    pub negative_mass: Vec<f64>,
    /// Fraction of entries below −1e-6·max|W_l|.
    pub negative_fraction: Vec<f64>,
    /// Hidden-unit signs per hidden layer (+1 / −1), from the reference if given.
    pub unit_signs: Vec<Vec<i8>>,
    /// Mass of W_l outside the sign-matched diagonal blocks over ‖W_l‖, intermediate layers only.
    pub offdiag_block_mass: Vec<f64>,
    /// ‖r_l⁺‖ and ‖r_l⁻‖ per hidden layer, up to a common layer scale.
    pub pos_block_norm: Vec<f64>,
    pub neg_block_norm: Vec<f64>,
    /// ‖r_l⁺‖/‖r_l⁻‖ per hidden layer.
    pub pm_ratio: Vec<f64>,
    pub effective_map: Vec<f64>,
    /// Projection of the effective map onto W_L ⋯ W₁.
    pub effective_coefficient: f64,
}

fn rank(sv: &[f64], threshold: f64) -> usize {
    match sv.first() {
        Some(&top) if top > 0.0 => sv.iter().filter(|s| **s > threshold * top).count(),
        _ => 0,
    }
}

fn sign(v: f64) -> i8 {
    if v >= 0.0 {
        1
    } else {
        -1
    }
}

/// Signs of hidden units: layer 1 by projection onto the oriented top right
/// singular vector of W₁, deeper layers by which sign block of the previous
/// layer carries more of the row's mass.
pub fn hidden_unit_signs(net: &NetworkParams) -> Vec<Vec<i8>> {
    let w1 = net.layer(0);
    let mut r = top_right_singular_vector(w1).unwrap_or_else(|| vec![0.0; w1.cols()]);
    if dot(&net.product_map(), &r) < 0.0 {
        r.iter_mut().for_each(|v| *v = -*v);
    }
    let mut signs = vec![(0..w1.rows()).map(|h| sign(dot(w1.row(h), &r))).collect::<Vec<_>>()];
    for l in 1..net.depth() - 1 {
        let w = net.layer(l);
        let prev = &signs[l - 1];
        let cur = (0..w.rows())
            .map(|j| {
                let (mut pos, mut neg) = (0.0, 0.0);
                for (i, s) in prev.iter().enumerate() {
                    if *s > 0 {
                        pos += w.get(j, i).abs();
                    } else {
                        neg += w.get(j, i).abs();
                    }
                }
                if pos >= neg {
                    1
                } else {
                    -1
                }
            })
            .collect();
        signs.push(cur);
    }
    signs
}

fn masked_norm(m: &Matrix, keep: impl Fn(usize, usize) -> bool) -> f64 {
    let mut acc = 0.0;
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            if keep(i, j) {
                acc += m.get(i, j).powi(2);
            }
        }
    }
    acc.sqrt()
}

pub fn structure_report(net: &NetworkParams, sign_reference: Option<&NetworkParams>) -> Result<StructureReport, AnalysisError> {
    if let Some(r) = sign_reference {
        if r.widths() != net.widths() {
            return Err(AnalysisError::ShapeMismatch);
        }
    }
    let signs = hidden_unit_signs(sign_reference.unwrap_or(net));
    let singular: Vec<Vec<f64>> = net.layers().iter().map(singular_values).collect();
    let ranks = singular.iter().map(|s| rank(s, RANK_THRESHOLD)).collect();
    let mut negative_mass = Vec::new();
    let mut negative_fraction = Vec::new();
    for w in net.layers() {
        let total = w.frob_norm();
        let neg = w.map(|v| v.min(0.0)).frob_norm();
        negative_mass.push(if total > 0.0 { neg / total } else { 0.0 });
        let cutoff = 1e-6 * w.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let count = w.data().iter().filter(|v| **v < -cutoff).count();
        negative_fraction.push(count as f64 / w.data().len() as f64);
    }

    // Block norms of W₁ rows give ‖r₁±‖; each intermediate layer's diagonal blocks
    // give ‖r_l±‖·‖r_{l−1}±‖, so divide out the previous layer.
    let w1 = net.layer(0);
    let mut pos = vec![masked_norm(w1, |i, _| signs[0][i] > 0)];
    let mut neg = vec![masked_norm(w1, |i, _| signs[0][i] < 0)];
    let mut offdiag = Vec::new();
    for l in 1..net.depth() - 1 {
        let w = net.layer(l);
        let (rows, cols) = (&signs[l], &signs[l - 1]);
        let total = w.frob_norm();
        let off = masked_norm(w, |i, j| rows[i] != cols[j]);
        offdiag.push(if total > 0.0 { off / total } else { 0.0 });
        let pp = masked_norm(w, |i, j| rows[i] > 0 && cols[j] > 0);
        let nn = masked_norm(w, |i, j| rows[i] < 0 && cols[j] < 0);
        pos.push(pp / pos[l - 1]);
        neg.push(nn / neg[l - 1]);
    }
    let pm_ratio = pos.iter().zip(&neg).map(|(p, n)| p / n).collect();
    Ok(StructureReport {
        singular_values: singular,
        rank_threshold: RANK_THRESHOLD,
        numerical_ranks: ranks,
        negative_mass,
        negative_fraction,
        unit_signs: signs,
        offdiag_block_mass: offdiag,
        pos_block_norm: pos,
        neg_block_norm: neg,
        pm_ratio,
        effective_map: odd_linear_map(net),
        effective_coefficient: linear_coefficient(net),
    })
}

/// Slope threshold for plateaus, relative to the loss range, per unit time.
pub const PLATEAU_EPS: f64 = 1e-4;
/// A drop must remove at least this fraction of the loss range.
pub const DROP_FRACTION: f64 = 0.1;

fn check_aligned(times: &[f64], losses: &[f64]) -> Result<(), AnalysisError> {
    if times.len() != losses.len() || times.len() < 2 {
        return Err(AnalysisError::Invalid(format!("{} times for {} losses", times.len(), losses.len())));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(AnalysisError::Invalid("times must increase".into()));
    }
    Ok(())
}

/// Flat runs `(start, end)` in sample indices: maximal stretches where
/// |ΔL/Δt| < eps·range.
fn flat_runs(times: &[f64], losses: &[f64], eps: f64, range: f64) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for i in 0..losses.len() - 1 {
        let slope = (losses[i + 1] - losses[i]) / (times[i + 1] - times[i]);
        let flat = slope.abs() < eps * range;
        match (flat, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, losses.len() - 1));
    }
    runs
}

/// Longest flat stretch after the first drop (at least `DROP_FRACTION` of the
/// loss range) that the loss later leaves downward by at least
/// `DROP_FRACTION` of the stretch's height above the global minimum; 0 when
/// there is none. The exit is measured against the plateau's own height so an
/// escape into a shallow minimum still closes the plateau. The loss range is
/// the descent L(0) − min L, so late step-size spikes do not inflate it.
pub fn plateau_duration(losses: &[f64], times: &[f64]) -> Result<f64, AnalysisError> {
    check_aligned(times, losses)?;
    let lo = losses.iter().cloned().fold(f64::MAX, f64::min);
    let range = losses[0] - lo;
    if range <= 0.0 {
        return Ok(0.0);
    }
    let first_drop = losses.iter().position(|l| *l <= losses[0] - DROP_FRACTION * range);
    let Some(first_drop) = first_drop else { return Ok(0.0) };
    let mut best: f64 = 0.0;
    for (a, b) in flat_runs(times, losses, PLATEAU_EPS, range) {
        if a < first_drop {
            continue;
        }
        let later = losses[b..].iter().cloned().fold(f64::MAX, f64::min);
        let height = losses[b] - lo;
        if height > 0.0 && losses[b] - later >= DROP_FRACTION * height {
            best = best.max(times[b] - times[a]);
        }
    }
    Ok(best)
}

/// Two speed peaks merge unless the descent speed between them falls below
/// this fraction of the lower peak.
pub const DROP_DIP_RATIO: f64 = 0.5;

/// Number of separate descents. Peaks of the descent speed −dL/dt are merged
/// until every pair of neighbours is separated by a dip below `DROP_DIP_RATIO`
/// of the lower one; a peak counts if the loss falls by at least
/// `min_fraction` of the loss range between its bounding troughs.
pub fn count_loss_drops(losses: &[f64], times: &[f64], min_fraction: f64) -> Result<usize, AnalysisError> {
    check_aligned(times, losses)?;
    let hi = losses.iter().cloned().fold(f64::MIN, f64::max);
    let lo = losses.iter().cloned().fold(f64::MAX, f64::min);
    let range = hi - lo;
    if range == 0.0 {
        return Ok(0);
    }
    let speed: Vec<f64> = (0..losses.len() - 1).map(|i| -(losses[i + 1] - losses[i]) / (times[i + 1] - times[i])).collect();
    let n = speed.len();
    let mut peaks: Vec<usize> = (0..n)
        .filter(|&i| speed[i] > 0.0 && (i == 0 || speed[i] > speed[i - 1]) && (i + 1 == n || speed[i] >= speed[i + 1]))
        .collect();
    let trough = |a: usize, b: usize| (a..=b).min_by(|x, y| speed[*x].total_cmp(&speed[*y])).expect("non-empty");
    loop {
        let merge = peaks.windows(2).position(|w| speed[trough(w[0], w[1])] > DROP_DIP_RATIO * speed[w[0]].min(speed[w[1]]));
        let Some(k) = merge else { break };
        let drop = if speed[peaks[k]] < speed[peaks[k + 1]] { k } else { k + 1 };
        peaks.remove(drop);
    }
    let mut count = 0;
    for (k, &p) in peaks.iter().enumerate() {
        let left = if k == 0 { 0 } else { trough(peaks[k - 1], p) };
        let right = if k + 1 == peaks.len() { n } else { trough(p, peaks[k + 1]) };
        if losses[left] - losses[right] >= min_fraction * range {
            count += 1;
        }
    }
    Ok(count)
}

/// Time at which the loss first comes within `fraction` of its final value,
/// measured as a share of the total decrease.
pub fn elbow_time(losses: &[f64], times: &[f64], fraction: f64) -> Result<f64, AnalysisError> {
    check_aligned(times, losses)?;
    let end = *losses.last().expect("checked non-empty");
    let target = end + fraction * (losses[0] - end);
    let i = losses.iter().position(|l| *l <= target).expect("the last sample qualifies");
    Ok(times[i])
}

/// A loss curve on its own time grid.
#[derive(Clone, Copy, Debug)]
pub struct LossCurve<'a> {
    pub times: &'a [f64],
    pub losses: &'a [f64],
}

impl<'a> From<&'a Trajectory> for LossCurve<'a> {
    fn from(t: &'a Trajectory) -> Self {
        LossCurve { times: &t.times, losses: &t.losses }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Superposition {
    /// L(0) − Σ L_k(0), added to the component sum.
    pub offset: f64,
    /// max |L(t) − Σ L_k(t) − offset| / L(0) over t ≥ `after`.
    pub max_gap: f64,
    pub time_grid: Vec<f64>,
    pub gap: Vec<f64>,
}

/// Compares a loss curve with the sum of component curves after shifting the sum
/// to the same initial loss. Components are resampled onto the target grid.
pub fn loss_superposition(target: LossCurve, components: &[LossCurve], after: f64) -> Result<Superposition, AnalysisError> {
    check_aligned(target.times, target.losses)?;
    for c in components {
        check_aligned(c.times, c.losses)?;
    }
    let l0 = target.losses[0];
    if l0 <= 0.0 {
        return Err(AnalysisError::NonPositive { index: 0, value: l0 });
    }
    let offset = l0 - components.iter().map(|c| c.losses[0]).sum::<f64>();
    let mut out = Superposition { offset, max_gap: 0.0, time_grid: Vec::new(), gap: Vec::new() };
    for (t, l) in target.times.iter().zip(target.losses) {
        if *t < after {
            continue;
        }
        let mut sum = offset;
        let mut covered = true;
        for c in components {
            match interpolate_series(c.times, c.losses, *t) {
                Some(v) => sum += v,
                None => covered = false,
            }
        }
        if !covered {
            continue;
        }
        let g = (l - sum).abs() / l0;
        out.time_grid.push(*t);
        out.gap.push(g);
        out.max_gap = out.max_gap.max(g);
    }
    if out.time_grid.is_empty() {
        return Err(AnalysisError::NoOverlap);
    }
    Ok(out)
}

/// Least-squares slope of ln(series) against t over samples with t in `window`.
pub fn fit_exponential_rate(times: &[f64], series: &[f64], window: (f64, f64)) -> Result<f64, AnalysisError> {
    if times.len() != series.len() {
        return Err(AnalysisError::Invalid(format!("{} times for {} values", times.len(), series.len())));
    }
    let mut pts = Vec::new();
    for (i, (t, v)) in times.iter().zip(series).enumerate() {
        if *t < window.0 || *t > window.1 {
            continue;
        }
        if *v <= 0.0 {
            return Err(AnalysisError::NonPositive { index: i, value: *v });
        }
        pts.push((*t, v.ln()));
    }
    if pts.len() < 2 {
        return Err(AnalysisError::Invalid("fewer than two samples in window".into()));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(t, y)| (t - mt) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(t, _)| (t - mt).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Least-squares slope of ln y against ln x.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64, AnalysisError> {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    for (i, y) in ys.iter().enumerate() {
        if *y <= 0.0 {
            return Err(AnalysisError::NonPositive { index: i, value: *y });
        }
    }
    fit_exponential_rate(&lx, ys, (f64::MIN, f64::MAX))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{make_symmetric_gaussian, Teacher};
    use crate::dynamics::{train, TrainConfig};
    use crate::model::{deep_structured_form, init_gaussian};
    use crate::numkit::SeededRng;

    #[test]
    fn identical_linear_runs_have_zero_error() {
        let mut rng = SeededRng::new(4);
        let data = make_symmetric_gaussian(&mut rng, 50, 4, &Teacher::LinearPlusSine).unwrap();
        let net = init_gaussian(&mut rng, &[4, 8, 1], 1.0, 0.1).unwrap();
        let cfg = TrainConfig { eta: 0.05, steps: 300, snapshot_every: 50, ..TrainConfig::default() };
        let a = train(&net, &data, &cfg).unwrap();
        let rep = equivalence_report(&a, &a, 1.0).unwrap();
        assert_eq!(rep.max_weight_error, 0.0);
        assert_eq!(rep.max_loss_gap, 0.0);
        assert_eq!(rep.time_grid.len(), 7);

        let coarse = TrainConfig { snapshot_every: 150, ..cfg };
        let b = train(&net, &data, &coarse).unwrap();
        assert_eq!(equivalence_report(&b, &b, 1.0), Err(AnalysisError::CoarseSnapshots(150)));
    }

    #[test]
    fn equivalence_error_ignores_hidden_permutation() {
        let mut rng = SeededRng::new(5);
        let data = make_symmetric_gaussian(&mut rng, 50, 3, &Teacher::LinearPlusSine).unwrap();
        let lin = init_gaussian(&mut rng, &[3, 6, 1], 1.0, 0.5).unwrap();
        let relu = lin.scaled(2f64.sqrt()).with_alpha(0.0).unwrap();
        let cfg = TrainConfig { eta: 0.02, steps: 200, snapshot_every: 20, ..TrainConfig::default() };
        let r = train(&relu, &data, &cfg).unwrap();
        let l = train(&lin, &data, &TrainConfig { eta: 0.01, ..cfg.clone() }).unwrap();
        let perm = [3, 1, 5, 0, 2, 4];
        let permute = |traj: &Trajectory| {
            let mut out = traj.clone();
            for s in out.snapshots.iter_mut() {
                let (w1, w2) = (s.net.layer(0), s.net.layer(1));
                let rows: Vec<Vec<f64>> = perm.iter().map(|p| w1.row(*p).to_vec()).collect();
                let cols: Vec<f64> = perm.iter().map(|p| w2.get(0, *p)).collect();
                s.net = NetworkParams::new(vec![Matrix::from_rows(&rows).unwrap(), Matrix::row_vector(&cols).unwrap()], s.net.alpha()).unwrap();
            }
            out
        };
        let (rp, lp) = (permute(&r), permute(&l));
        let a = equivalence_report(&r, &l, 0.0).unwrap();
        let b = equivalence_report(&rp, &lp, 0.0).unwrap();
        for (x, y) in a.weight_error.iter().zip(&b.weight_error) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn structured_form_report() {
        let r = vec![0.6, 0.0, 0.8];
        let h1 = vec![0.5, -0.5, 0.5, -0.5];
        let h2 = vec![-0.5, 0.5, 0.5, -0.5, 0.0];
        let net = deep_structured_form(&r, &[h1, h2], 0.7, 0.0).unwrap();
        let rep = structure_report(&net, None).unwrap();
        assert_eq!(rep.offdiag_block_mass, vec![0.0]);
        assert!(rep.negative_mass[1] == 0.0);
        assert!((rep.pm_ratio[0] - 1.0).abs() < 1e-12);
        assert!((rep.pm_ratio[1] - 1.0).abs() < 1e-12, "{:?}", rep.pm_ratio);
        assert!((rep.effective_coefficient - 0.5).abs() < 1e-12);
        assert_eq!(rep.numerical_ranks, vec![1, 2, 1]);
        for sv in &rep.singular_values {
            assert!(sv.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn unbalanced_blocks_show_in_ratios() {
        let r = vec![1.0, 0.0];
        let h1 = vec![0.8, -0.4, 0.2, -0.4];
        let h2 = vec![0.3, -0.9, 0.3];
        let net = deep_structured_form(&r, &[h1.clone(), h2.clone()], 1.0, 0.0).unwrap();
        let rep = structure_report(&net, None).unwrap();
        let ratio = |v: &[f64]| {
            let p: f64 = v.iter().filter(|x| **x > 0.0).map(|x| x * x).sum::<f64>().sqrt();
            let n: f64 = v.iter().filter(|x| **x < 0.0).map(|x| x * x).sum::<f64>().sqrt();
            p / n
        };
        assert!((rep.pm_ratio[0] - ratio(&h1)).abs() < 1e-12);
        assert!((rep.pm_ratio[1] - ratio(&h2)).abs() < 1e-12);
    }

    #[test]
    fn linear_nets_have_unit_coefficient() {
        let mut rng = SeededRng::new(6);
        for widths in [vec![3, 4, 1], vec![3, 5, 4, 1], vec![2, 3, 3, 3, 1]] {
            let net = init_gaussian(&mut rng, &widths, 1.0, 1.0).unwrap();
            let rep = structure_report(&net, None).unwrap();
            assert!((rep.effective_coefficient - 1.0).abs() < 1e-10);
        }
    }

    fn synthetic(flat: f64) -> (Vec<f64>, Vec<f64>) {
        // L = 1 + e^{−t}: drop, then a flat stretch of length `flat` at 1, then
        // a second drop 1 → 0 through e^{−(t − t₁)}.
        let dt = 1.0;
        let t1 = 40.0 + flat;
        let times: Vec<f64> = (0..(t1 as usize + 60)).map(|i| i as f64 * dt).collect();
        let losses = times
            .iter()
            .map(|t| {
                let first = 1.0 + 1.0 * (-t / 2.0).exp();
                if *t < t1 {
                    first
                } else {
                    (1.0 + (-t / 2.0).exp()) * (-(t - t1) / 2.0).exp()
                }
            })
            .collect();
        (times, losses)
    }

    #[test]
    fn plateau_examples() {
        let times: Vec<f64> = (0..1000).map(|i| i as f64 * 0.01).collect();
        let exp: Vec<f64> = times.iter().map(|t| (-t).exp()).collect();
        assert_eq!(plateau_duration(&exp, &times).unwrap(), 0.0);
        let (t, l) = synthetic(500.0);
        let d = plateau_duration(&l, &t).unwrap();
        // The flat stretch also absorbs the slow tail of the first drop.
        assert!((d - 500.0).abs() <= 40.0, "{d}");
        let scaled: Vec<f64> = l.iter().map(|v| 7.5 * v).collect();
        assert_eq!(plateau_duration(&scaled, &t).unwrap(), d);
        assert_eq!(count_loss_drops(&l, &t, 0.05).unwrap(), 2);
        assert_eq!(count_loss_drops(&exp, &times, 0.05).unwrap(), 1);
    }

    fn sigmoid_drops(centers: &[(f64, f64, f64)], times: &[f64]) -> Vec<f64> {
        times
            .iter()
            .map(|t| centers.iter().map(|(c, rate, a)| a / (1.0 + (rate * (t - c)).exp())).sum())
            .collect()
    }

    #[test]
    fn drop_counts() {
        let times: Vec<f64> = (0..3000).map(|i| i as f64 * 0.01).collect();
        let four = sigmoid_drops(&[(3.45, 8.0, 1.0), (4.6, 6.0, 1.0), (6.9, 4.0, 1.0), (13.8, 2.0, 1.0)], &times);
        assert_eq!(count_loss_drops(&four, &times, 0.05).unwrap(), 4);
        let merged = sigmoid_drops(&[(5.0, 2.0, 1.0), (5.3, 2.0, 1.0)], &times);
        assert_eq!(count_loss_drops(&merged, &times, 0.05).unwrap(), 1);
        let tiny = sigmoid_drops(&[(5.0, 2.0, 1.0), (15.0, 2.0, 0.01)], &times);
        assert_eq!(count_loss_drops(&tiny, &times, 0.05).unwrap(), 1);
        // A slow 1/t-like tail after each drop does not add drops.
        let tails: Vec<f64> = times.iter().zip(&four).map(|(t, l)| l + 0.3 / (1.0 + t)).collect();
        assert_eq!(count_loss_drops(&tails, &times, 0.05).unwrap(), 4);
    }

    #[test]
    fn plateau_on_step_curve() {
        // Piecewise linear: drop over [0,10], flat over [10,510], drop over [510,520].
        let times: Vec<f64> = (0..=600).map(|i| i as f64).collect();
        let losses: Vec<f64> = times
            .iter()
            .map(|t| {
                if *t <= 10.0 {
                    2.0 - 0.1 * t
                } else if *t <= 510.0 {
                    1.0
                } else if *t <= 520.0 {
                    1.0 - 0.1 * (t - 510.0)
                } else {
                    0.0
                }
            })
            .collect();
        let d = plateau_duration(&losses, &times).unwrap();
        assert!((d - 500.0).abs() <= 1.0, "{d}");
    }

    #[test]
    fn superposition_of_identical_curve_is_zero() {
        let times: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
        let l: Vec<f64> = times.iter().map(|t| (-t).exp() + 0.1).collect();
        let c = LossCurve { times: &times, losses: &l };
        let s = loss_superposition(c, &[c], 0.0).unwrap();
        assert_eq!(s.max_gap, 0.0);
        assert_eq!(s.offset, 0.0);
        // Two halves on a coarser grid still add back up.
        let half: Vec<f64> = l.iter().map(|v| v / 2.0).collect();
        let s = loss_superposition(c, &[LossCurve { times: &times, losses: &half }; 2], 0.5).unwrap();
        assert!(s.max_gap < 1e-15);
    }

    #[test]
    fn exponential_rate() {
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let e: Vec<f64> = times.iter().map(|t| 3.0 * (2.0 * t).exp()).collect();
        assert!((fit_exponential_rate(&times, &e, (0.0, 5.0)).unwrap() - 2.0).abs() < 1e-9);
        let c = vec![4.0; 50];
        assert!(fit_exponential_rate(&times, &c, (0.0, 5.0)).unwrap().abs() < 1e-12);
        let mut z = e.clone();
        z[10] = 0.0;
        assert_eq!(fit_exponential_rate(&times, &z, (0.0, 5.0)), Err(AnalysisError::NonPositive { index: 10, value: 0.0 }));
        assert!((loglog_slope(&[0.05, 0.1, 0.2, 0.4], &[20.0, 10.0, 5.0, 2.5]).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn elbow() {
        let times: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let l: Vec<f64> = times.iter().map(|t| if *t < 50.0 { 1.0 } else { 0.0 }).collect();
        assert_eq!(elbow_time(&l, &times, 0.5).unwrap(), 50.0);
    }
}
