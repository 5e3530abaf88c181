//! Explicit-Euler gradient flow with trajectory recording.
//!
//! Every integrator is a [`Flow`] (loss and gradient at a state) driven by one
//! loop, so simulated time is exactly `step · η` for all of them.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{DataStats, Dataset, Reduction};
use crate::model::{l2_alpha, loss_and_gradients, sigma_prime, LossKind, ModelError, NetworkParams};
use crate::numkit::{dot, top_right_singular_vector, Matrix, NumError};

/// Loss above which a run is declared diverged.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Error)]
pub enum DynError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Stop once `|L(n) − L(n − window)| < rel_tol · |L(n)|` for some `n ≥ min_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergeRule {
    pub window: usize,
    pub rel_tol: f64,
    pub min_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub reduction: Reduction,
    pub eta: f64,
    pub steps: usize,
    pub l2: f64,
    pub snapshot_every: usize,
    pub monitor_every: usize,
    pub seed: u64,
    pub converge: Option<ConvergeRule>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Square,
            reduction: Reduction::Mean,
            eta: 0.01,
            steps: 1000,
            l2: 0.0,
            snapshot_every: 100,
            monitor_every: 10,
            seed: 0,
            converge: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DynError> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(DynError::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if self.steps == 0 {
            return Err(DynError::Config("steps must be at least 1".into()));
        }
        if self.snapshot_every == 0 || self.monitor_every == 0 {
            return Err(DynError::Config("cadences must be at least 1".into()));
        }
        if !(self.l2 >= 0.0) {
            return Err(DynError::Config("l2 must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Converged { step: usize },
    Diverged { step: usize, loss: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub net: NetworkParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub eta: f64,
    /// `times[n] = n · η`, one entry per recorded step starting at 0.
    pub times: Vec<f64>,
    pub losses: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    pub monitor_steps: Vec<usize>,
    pub monitors: BTreeMap<String, Vec<f64>>,
    pub status: RunStatus,
    pub final_net: NetworkParams,
}

impl Trajectory {
    pub fn last_step(&self) -> usize {
        self.losses.len() - 1
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("at least the initial loss is recorded")
    }

    pub fn monitor(&self, name: &str) -> Option<&[f64]> {
        self.monitors.get(name).map(Vec::as_slice)
    }

    /// Monitor values paired with their times.
    pub fn monitor_series(&self, name: &str) -> Option<Vec<(f64, f64)>> {
        let vals = self.monitors.get(name)?;
        Some(self.monitor_steps.iter().zip(vals).map(|(s, v)| (self.times[*s], *v)).collect())
    }

    /// Snapshot networks linearly interpolated at time `t`; `None` outside the covered range.
    pub fn interpolate(&self, t: f64) -> Option<NetworkParams> {
        let snaps = &self.snapshots;
        let first = snaps.first()?;
        let last = snaps.last()?;
        let tol = 1e-9 * self.eta;
        if t < first.t - tol || t > last.t + tol {
            return None;
        }
        let k = snaps.partition_point(|s| s.t <= t + tol);
        let hi = k.min(snaps.len() - 1);
        let lo = k.saturating_sub(1);
        let (a, b) = (&snaps[lo], &snaps[hi]);
        if (a.t - t).abs() <= tol || lo == hi {
            return Some(a.net.clone());
        }
        let w = (t - a.t) / (b.t - a.t);
        let layers = a
            .net
            .layers()
            .iter()
            .zip(b.net.layers())
            .map(|(x, y)| x.scale(1.0 - w).add(&y.scale(w)).expect("same shapes"))
            .collect();
        Some(NetworkParams::new(layers, a.net.alpha()).expect("interpolated weights are finite"))
    }

    /// Loss linearly interpolated at time `t`.
    pub fn loss_at(&self, t: f64) -> Option<f64> {
        interpolate_series(&self.times, &self.losses, t)
    }

    /// `step,t,loss,<monitors>` with every `every`-th step plus monitor steps and the last step.
    pub fn write_csv(&self, path: &Path, every: usize) -> Result<(), DynError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let names: Vec<&String> = self.monitors.keys().collect();
        let mut header = String::from("step,t,loss");
        for n in &names {
            header.push(',');
            header.push_str(n);
        }
        writeln!(out, "{header}")?;
        let mut m = 0;
        let last = self.last_step();
        for step in 0..=last {
            let at_monitor = self.monitor_steps.get(m) == Some(&step);
            if !(at_monitor || step % every.max(1) == 0 || step == last) {
                continue;
            }
            write!(out, "{},{:?},{:?}", step, self.times[step], self.losses[step])?;
            for n in &names {
                if at_monitor {
                    write!(out, ",{:?}", self.monitors[*n][m])?;
                } else {
                    write!(out, ",")?;
                }
            }
            writeln!(out)?;
            if at_monitor {
                m += 1;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Snapshots as `snapshot_<step>.json`, zero-padded so names sort by step.
    pub fn write_snapshots(&self, dir: &Path) -> Result<Vec<String>, DynError> {
        std::fs::create_dir_all(dir)?;
        let mut names = Vec::new();
        for s in &self.snapshots {
            let name = format!("snapshot_{:09}.json", s.step);
            s.net.save_json(&dir.join(&name))?;
            names.push(name);
        }
        Ok(names)
    }
}

/// Linear interpolation of `(xs, ys)` at `x`, `xs` increasing.
pub fn interpolate_series(xs: &[f64], ys: &[f64], x: f64) -> Option<f64> {
    let first = *xs.first()?;
    let last = *xs.last()?;
    let tol = 1e-12 * (last - first).abs().max(1.0);
    if x < first - tol || x > last + tol {
        return None;
    }
    let k = xs.partition_point(|v| *v <= x);
    if k == 0 {
        return Some(ys[0]);
    }
    if k >= xs.len() {
        return Some(ys[xs.len() - 1]);
    }
    let (x0, x1) = (xs[k - 1], xs[k]);
    let w = (x - x0) / (x1 - x0);
    Some(ys[k - 1] * (1.0 - w) + ys[k] * w)
}

/// A gradient flow: loss and gradient (including the L2 term) at a state.
pub trait Flow {
    fn loss_and_grad(&self, net: &NetworkParams, l2: f64) -> Result<(f64, Vec<Matrix>), DynError>;
}

/// Full per-sample dynamics on a dataset.
pub struct DataFlow<'a> {
    pub data: &'a Dataset,
    pub loss: LossKind,
    pub reduction: Reduction,
}

impl Flow for DataFlow<'_> {
    fn loss_and_grad(&self, net: &NetworkParams, l2: f64) -> Result<(f64, Vec<Matrix>), DynError> {
        Ok(loss_and_gradients(net, self.data, self.loss, self.reduction, l2)?)
    }
}

fn add_l2(net: &NetworkParams, lam: f64, loss: &mut f64, grads: &mut [Matrix]) {
    if lam == 0.0 {
        return;
    }
    for (g, w) in grads.iter_mut().zip(net.layers()) {
        g.axpy(lam, w).expect("same shapes");
        *loss += 0.5 * lam * w.frob_norm_sq();
    }
}

fn require_two_layer(net: &NetworkParams) -> Result<(), DynError> {
    if net.depth() != 2 {
        return Err(DynError::Shape(format!("expected a two-layer network, got depth {}", net.depth())));
    }
    Ok(())
}

/// Row vector `coef·βᵀ − coef²·wΣ` for the 1×D map `w`.
fn residual(stats: &DataStats, w: &[f64], coef: f64) -> Vec<f64> {
    let sw = stats.sigma.vecmat(w).expect("map length matches Σ");
    stats.beta.iter().zip(&sw).map(|(b, s)| coef * b - coef * coef * s).collect()
}

/// Two-layer flow from statistics alone, with the ReLU coefficient k = (α+1)/2
/// (k = 1 gives the linear network).
struct TwoLayerStatsFlow<'a> {
    stats: &'a DataStats,
    linear: bool,
}

impl Flow for TwoLayerStatsFlow<'_> {
    fn loss_and_grad(&self, net: &NetworkParams, l2: f64) -> Result<(f64, Vec<Matrix>), DynError> {
        require_two_layer(net)?;
        let alpha = if self.linear { 1.0 } else { net.alpha() };
        let k = (alpha + 1.0) / 2.0;
        let (w1, w2) = (net.layer(0), net.layer(1));
        let w = w2.matmul(w1)?.into_data();
        let e = residual(self.stats, &w, k);
        let g1 = Matrix::outer(w2.data(), &e)?.scale(-1.0);
        let g2 = Matrix::row_vector(&w1.matvec(&e)?)?.scale(-1.0);
        let kw: Vec<f64> = w.iter().map(|v| k * v).collect();
        let mut loss = self.stats.linear_loss(&kw);
        let mut grads = vec![g1, g2];
        add_l2(net, l2_alpha(l2, alpha), &mut loss, &mut grads);
        Ok((loss, grads))
    }
}

/// Prefix products `pre[l] = W_{l−1} ⋯ W₁` (pre[0] = I) and suffix products
/// `post[l] = W_L ⋯ W_{l+1}` (post[L−1] = [1]), each with optional masks applied
/// after every hidden layer.
fn prefix_suffix(net: &NetworkParams, masks: Option<&[Vec<f64>]>) -> (Vec<Matrix>, Vec<Matrix>) {
    let l_count = net.depth();
    let apply = |m: Matrix, l: usize| -> Matrix {
        match masks {
            Some(ms) => {
                let mask = &ms[l];
                let cols = m.cols();
                let data = m.data().iter().enumerate().map(|(i, v)| v * mask[i / cols]).collect();
                Matrix::from_parts(m.rows(), cols, data)
            }
            None => m,
        }
    };
    let mut pre = vec![Matrix::identity(net.input_dim())];
    for l in 1..l_count {
        let next = net.layer(l - 1).matmul(&pre[l - 1]).expect("chained shapes");
        pre.push(apply(next, l - 1));
    }
    let mut post = vec![Matrix::zeros(0, 0); l_count];
    post[l_count - 1] = Matrix::identity(1);
    for l in (0..l_count - 1).rev() {
        let m = post[l + 1].matmul(net.layer(l + 1)).expect("chained shapes");
        // Mask of hidden layer l acts on the columns of the suffix.
        post[l] = match masks {
            Some(ms) => {
                let mask = &ms[l];
                let cols = m.cols();
                let data = m.data().iter().enumerate().map(|(i, v)| v * mask[i % cols]).collect();
                Matrix::from_parts(m.rows(), cols, data)
            }
            None => m,
        };
    }
    (pre, post)
}

/// Gradient of `linear_loss(A)` for the chain `A = post[l] W_l pre[l]`, scaled by `weight`.
fn chain_gradients(net: &NetworkParams, stats: &DataStats, pre: &[Matrix], post: &[Matrix], weight: f64) -> (f64, Vec<Matrix>) {
    let a = post[0].matmul(net.layer(0)).expect("chained shapes").into_data();
    let e = residual(stats, &a, 1.0);
    let grads = (0..net.depth())
        .map(|l| {
            // −postᵀ (e preᵀ): outer product of the suffix row and pre·e.
            let pe = pre[l].matvec(&e).expect("chained shapes");
            Matrix::outer(post[l].data(), &pe).expect("finite").scale(-weight)
        })
        .collect();
    (weight * stats.linear_loss(&a), grads)
}

struct DeepLinearFlow<'a> {
    stats: &'a DataStats,
}

impl Flow for DeepLinearFlow<'_> {
    fn loss_and_grad(&self, net: &NetworkParams, l2: f64) -> Result<(f64, Vec<Matrix>), DynError> {
        let (pre, post) = prefix_suffix(net, None);
        let (mut loss, mut grads) = chain_gradients(net, self.stats, &pre, &post, 1.0);
        add_l2(net, l2, &mut loss, &mut grads);
        Ok((loss, grads))
    }
}

/// Gated two-pathway flow for ReLU nets whose first layer is rank one: inputs
/// with sign(rᵀx) = s see the linear map A_s = W_L D^s ⋯ D^s W₁, where the masks
/// D^s are read off the probe s·r and r is the top right singular vector of W₁.
struct DeepReducedReluFlow<'a> {
    stats: &'a DataStats,
}

/// Hidden-layer derivative masks σ'(h_l(x)) for l = 1 … L−1 at probe `x`.
pub fn probe_masks(net: &NetworkParams, x: &[f64]) -> Result<Vec<Vec<f64>>, DynError> {
    let trace = crate::model::forward(net, x)?;
    Ok(trace.preactivations[..net.depth() - 1]
        .iter()
        .map(|h| h.iter().map(|z| sigma_prime(*z, net.alpha())).collect())
        .collect())
}

impl Flow for DeepReducedReluFlow<'_> {
    fn loss_and_grad(&self, net: &NetworkParams, l2: f64) -> Result<(f64, Vec<Matrix>), DynError> {
        let r = top_right_singular_vector(net.layer(0)).ok_or_else(|| DynError::Shape("first layer is zero".into()))?;
        let mut loss = 0.0;
        let mut grads: Vec<Matrix> = net.layers().iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect();
        for sign in [1.0, -1.0] {
            let probe: Vec<f64> = r.iter().map(|v| sign * v).collect();
            let masks = probe_masks(net, &probe)?;
            let (pre, post) = prefix_suffix(net, Some(&masks));
            let (l, g) = chain_gradients(net, self.stats, &pre, &post, 0.5);
            loss += l;
            for (acc, gi) in grads.iter_mut().zip(&g) {
                acc.axpy(1.0, gi)?;
            }
        }
        add_l2(net, l2_alpha(l2, net.alpha()), &mut loss, &mut grads);
        Ok((loss, grads))
    }
}

/// Runs Euler steps `W ← W − η ∇L` and records the trajectory.
pub fn integrate(flow: &dyn Flow, net: &NetworkParams, cfg: &TrainConfig) -> Result<Trajectory, DynError> {
    cfg.validate()?;
    let mut state = net.clone();
    let mut traj = Trajectory {
        eta: cfg.eta,
        times: Vec::with_capacity(cfg.steps + 1),
        losses: Vec::with_capacity(cfg.steps + 1),
        snapshots: Vec::new(),
        monitor_steps: Vec::new(),
        monitors: BTreeMap::new(),
        status: RunStatus::Completed,
        final_net: net.clone(),
    };
    for step in 0..=cfg.steps {
        let (loss, grads) = flow.loss_and_grad(&state, cfg.l2)?;
        if !loss.is_finite() || loss > DIVERGENCE_LOSS || !state.all_finite() {
            traj.status = RunStatus::Diverged { step, loss };
            break;
        }
        let t = step as f64 * cfg.eta;
        traj.times.push(t);
        traj.losses.push(loss);
        let last = step == cfg.steps;
        let converged = cfg.converge.is_some_and(|c| {
            step >= c.min_steps.max(c.window)
                && step % c.window == 0
                && (loss - traj.losses[step - c.window]).abs() < c.rel_tol * loss.abs()
        });
        if step % cfg.monitor_every == 0 || last || converged {
            record_monitors(&state, &mut traj, step);
        }
        if step % cfg.snapshot_every == 0 || last || converged {
            traj.snapshots.push(Snapshot { step, t, net: state.clone() });
        }
        if converged {
            traj.status = RunStatus::Converged { step };
            break;
        }
        if last {
            break;
        }
        state.axpy(-cfg.eta, &grads)?;
    }
    if traj.losses.is_empty() {
        return Err(DynError::Config("initial state already diverged".into()));
    }
    // On divergence the last snapshot stands in for the final state.
    if let RunStatus::Diverged { .. } = traj.status {
        let last = traj.snapshots.last().map(|s| s.net.clone()).unwrap_or_else(|| net.clone());
        traj.final_net = last;
    } else {
        traj.final_net = state;
    }
    Ok(traj)
}

fn record_monitors(net: &NetworkParams, traj: &mut Trajectory, step: usize) {
    traj.monitor_steps.push(step);
    let mut put = |name: String, v: f64| traj.monitors.entry(name).or_default().push(v);
    for (l, w) in net.layers().iter().enumerate() {
        put(format!("norm_w{}", l + 1), w.frob_norm());
    }
    let prod = net.product_map();
    let prod_norm = dot(&prod, &prod).sqrt();
    put("product_norm".into(), prod_norm);
    put("balancedness".into(), balancedness(net));
    put("linear_coefficient".into(), linear_coefficient(net));
}

/// max_l ‖W_l W_lᵀ − W_{l+1}ᵀ W_{l+1}‖ over adjacent layer pairs.
pub fn balancedness(net: &NetworkParams) -> f64 {
    (0..net.depth() - 1)
        .map(|l| {
            let a = net.layer(l).matmul_t(net.layer(l)).expect("square");
            let b = net.layer(l + 1).t_matmul(net.layer(l + 1)).expect("square");
            a.sub(&b).expect("same size").frob_norm()
        })
        .fold(0.0, f64::max)
}

/// Odd part of the network function on the standard basis, (f(eᵢ) − f(−eᵢ))/2.
pub fn odd_linear_map(net: &NetworkParams) -> Vec<f64> {
    let d = net.input_dim();
    (0..d)
        .map(|i| {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            let fp = net.output(&e).expect("matching dimension");
            e[i] = -1.0;
            let fm = net.output(&e).expect("matching dimension");
            (fp - fm) / 2.0
        })
        .collect()
}

/// Projection coefficient of the odd linear map onto `W_L ⋯ W₁`; 0 for a zero product.
pub fn linear_coefficient(net: &NetworkParams) -> f64 {
    let prod = net.product_map();
    let pp = dot(&prod, &prod);
    if pp == 0.0 {
        return 0.0;
    }
    dot(&odd_linear_map(net), &prod) / pp
}

pub fn train(net: &NetworkParams, data: &Dataset, cfg: &TrainConfig) -> Result<Trajectory, DynError> {
    if data.dim() != net.input_dim() {
        return Err(DynError::Shape(format!("data dimension {} for a {}-input network", data.dim(), net.input_dim())));
    }
    integrate(&DataFlow { data, loss: cfg.loss, reduction: cfg.reduction }, net, cfg)
}

/// Closed two-layer linear ODE driven by Σ and β; α of `net` is ignored.
pub fn integrate_linear(net: &NetworkParams, stats: &DataStats, cfg: &TrainConfig) -> Result<Trajectory, DynError> {
    require_square(cfg)?;
    integrate(&TwoLayerStatsFlow { stats, linear: true }, net, cfg)
}

/// Reduced two-layer ReLU ODE with coefficients (α+1)/2 and ((α+1)/2)².
pub fn integrate_reduced_two_layer(net: &NetworkParams, stats: &DataStats, cfg: &TrainConfig) -> Result<Trajectory, DynError> {
    require_square(cfg)?;
    integrate(&TwoLayerStatsFlow { stats, linear: false }, net, cfg)
}

pub fn integrate_deep_linear(net: &NetworkParams, stats: &DataStats, cfg: &TrainConfig) -> Result<Trajectory, DynError> {
    require_square(cfg)?;
    if net.depth() < 2 {
        return Err(DynError::Shape("deep linear flow needs at least two layers".into()));
    }
    integrate(&DeepLinearFlow { stats }, net, cfg)
}

/// Deep ReLU flow for weights in the rank-one/rank-two structured form; the
/// implemented map stays ½ W_L ⋯ W₁ while the form holds.
pub fn integrate_deep_reduced_relu(net: &NetworkParams, stats: &DataStats, cfg: &TrainConfig) -> Result<Trajectory, DynError> {
    require_square(cfg)?;
    if net.depth() < 2 {
        return Err(DynError::Shape("deep ReLU flow needs at least two layers".into()));
    }
    integrate(&DeepReducedReluFlow { stats }, net, cfg)
}

fn require_square(cfg: &TrainConfig) -> Result<(), DynError> {
    if cfg.loss != LossKind::Square {
        return Err(DynError::Config("statistics-driven flows exist only for square loss".into()));
    }
    Ok(())
}

/// Euler on τu̇ = u(‖β‖ − u²/P); returns u at every step including 0.
pub fn integrate_ortho_norm(u0: f64, beta_norm: f64, p: usize, eta: f64, steps: usize) -> Result<Vec<f64>, DynError> {
    if !(u0 > 0.0) {
        return Err(DynError::Config(format!("u0 must be positive, got {u0}")));
    }
    if !(eta > 0.0) || p == 0 {
        return Err(DynError::Config("eta and P must be positive".into()));
    }
    let mut u = u0;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(u);
    for _ in 0..steps {
        u += eta * u * (beta_norm - u * u / p as f64);
        out.push(u);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormBoundReport {
    /// End of the early-phase window, τ/(s+TrΣ)·ln(1/w_init), in units of t/τ.
    pub window_end: f64,
    pub checked: usize,
    pub violations: usize,
    /// Largest ratio u(t)/bound(t) over checked points.
    pub worst_ratio: f64,
}

impl NormBoundReport {
    pub fn holds(&self) -> bool {
        self.checked > 0 && self.violations == 0
    }
}

/// Checks max(‖W₁‖, ‖W₂‖) ≤ w_init·e^{(s+TrΣ)t/τ} at every monitor point inside the window.
pub fn monitor_norm_bound(traj: &Trajectory, s: f64, trace_sigma: f64, w_init: f64) -> NormBoundReport {
    let rate = s + trace_sigma;
    let window_end = (1.0 / w_init).ln() / rate;
    let n1 = traj.monitor("norm_w1").unwrap_or(&[]);
    let n2 = traj.monitor("norm_w2").unwrap_or(&[]);
    let mut checked = 0;
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for (i, step) in traj.monitor_steps.iter().enumerate() {
        let t = traj.times[*step];
        if t >= window_end {
            break;
        }
        let u = n1[i].max(n2[i]);
        let bound = w_init * (rate * t).exp();
        checked += 1;
        // Relative slack absorbs rounding at t = 0 where u equals the bound.
        if u > bound * (1.0 + 1e-12) {
            violations += 1;
        }
        worst = worst.max(u / bound);
    }
    NormBoundReport { window_end, checked, violations, worst_ratio: worst }
}
