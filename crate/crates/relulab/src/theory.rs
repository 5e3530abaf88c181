//! Analytic oracles that do not touch the simulator: early-phase growth, the
//! white-covariance closed form, converged solutions and the odd/even split.
//!
//! Times are in the units of τ: with trajectory times `step · η`, pass `tau = 1`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{check_symmetry, DataStats, Dataset, SymmetryViolation};
use crate::model::{sigma, NetworkParams};
use crate::numkit::{dot, norm, singular_values, solve_spd, Matrix, NumError, SeededRng};

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("time {t} outside the early-phase window [0, {end})")]
    OutsideWindow { t: f64, end: f64 },
    #[error("r is anti-aligned with β̄ (q2 = {0})")]
    SingularSpec(f64),
    #[error("Σ is singular or ill-conditioned (condition number {0:e})")]
    RankDeficient(f64),
    #[error("data are not linearly separable through the origin")]
    Infeasible,
    #[error("labels must be ±1 (index {0})")]
    InvalidLabel(usize),
    #[error("dataset violates symmetry at index {0} ({1:?})")]
    Asymmetric(usize, SymmetryViolation),
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Growth-phase description of a two-layer net started near the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyPhaseSpec {
    pub r1: Vec<f64>,
    pub s: f64,
    pub beta_hat: Vec<f64>,
    pub alpha: f64,
    pub tau: f64,
    pub w_init: f64,
    pub trace_sigma: f64,
}

impl EarlyPhaseSpec {
    /// r₁ = (W₁(0)β̄ + W₂ᵀ(0))/2 from the generating init.
    pub fn from_init(net: &NetworkParams, stats: &DataStats, tau: f64, w_init: f64) -> Result<Self, TheoryError> {
        if net.depth() != 2 {
            return Err(TheoryError::Shape("early phase is defined for two-layer nets".into()));
        }
        let w1b = net.layer(0).matvec(&stats.beta_hat)?;
        let r1 = w1b.iter().zip(net.layer(1).data()).map(|(a, b)| (a + b) / 2.0).collect();
        Ok(EarlyPhaseSpec {
            r1,
            s: stats.s,
            beta_hat: stats.beta_hat.clone(),
            alpha: net.alpha(),
            tau,
            w_init,
            trace_sigma: stats.trace_sigma,
        })
    }

    /// τ/(s+TrΣ)·ln(1/w_init).
    pub fn window_end(&self) -> f64 {
        self.tau / (self.s + self.trace_sigma) * (1.0 / self.w_init).ln()
    }

    /// (α+1)s/(2τ).
    pub fn growth_rate(&self) -> f64 {
        (self.alpha + 1.0) * self.s / (2.0 * self.tau)
    }
}

/// Dominant-term prediction (W₁, W₂) = e^{(α+1)st/(2τ)}·(r₁β̄ᵀ, r₁ᵀ).
pub fn early_phase_weights(spec: &EarlyPhaseSpec, t: f64) -> Result<(Matrix, Matrix), TheoryError> {
    let end = spec.window_end();
    if !(0.0..end).contains(&t) {
        return Err(TheoryError::OutsideWindow { t, end });
    }
    let g = (spec.growth_rate() * t).exp();
    let w1 = Matrix::outer(&spec.r1, &spec.beta_hat)?.scale(g);
    let w2 = Matrix::row_vector(&spec.r1)?.scale(g);
    Ok((w1, w2))
}

/// Inputs to the white-covariance closed form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormSpec {
    /// Unit direction of the rank-one init.
    pub r: Vec<f64>,
    /// ‖W₁(0)‖ of the equivalent linear network.
    pub w_init: f64,
    pub s: f64,
    pub beta_hat: Vec<f64>,
    pub alpha: f64,
    pub tau: f64,
}

impl ClosedFormSpec {
    /// Spec for a two-layer net in rank-one balanced form W₁ = v rᵀ. The
    /// equivalent linear network has ‖W₁‖ scaled by √((α+1)/2).
    pub fn from_rank1_net(net: &NetworkParams, stats: &DataStats, tau: f64) -> Result<Self, TheoryError> {
        let r = crate::numkit::top_right_singular_vector(net.layer(0)).ok_or_else(|| TheoryError::Shape("zero first layer".into()))?;
        // Orient r so that W₂W₁ = ‖v‖² rᵀ.
        let w = net.layer(1).matmul(net.layer(0))?.into_data();
        let r = if dot(&w, &r) < 0.0 { r.iter().map(|v| -v).collect() } else { r };
        let k = (net.alpha() + 1.0) / 2.0;
        Ok(ClosedFormSpec {
            r,
            w_init: k.sqrt() * net.layer(0).frob_norm(),
            s: stats.s,
            beta_hat: stats.beta_hat.clone(),
            alpha: net.alpha(),
            tau,
        })
    }

    pub fn q1(&self) -> f64 {
        1.0 - dot(&self.r, &self.beta_hat)
    }

    pub fn q2(&self) -> f64 {
        1.0 + dot(&self.r, &self.beta_hat)
    }

    /// t̃ = (α+1)t/(2τ).
    pub fn rescaled_time(&self, t: f64) -> f64 {
        (self.alpha + 1.0) * t / (2.0 * self.tau)
    }
}

/// Linear map w(t) of a two-layer net trained on white inputs (Σ = I) from a
/// rank-one balanced init; the network function is w(t)ᵀx.
pub fn closed_form_w(spec: &ClosedFormSpec, t: f64) -> Result<Vec<f64>, TheoryError> {
    let (q1, q2) = (spec.q1(), spec.q2());
    if q2 <= 1e-9 {
        return Err(TheoryError::SingularSpec(q2));
    }
    if spec.r.len() != spec.beta_hat.len() {
        return Err(TheoryError::Shape("r and β̄ differ in dimension".into()));
    }
    let s = spec.s;
    let tt = spec.rescaled_time(t);
    let e1 = (-s * tt).exp();
    let e2 = e1 * e1;
    let ratio = q1 / q2;
    let rb = dot(&spec.r, &spec.beta_hat);
    let front = 1.0 + ratio * e2;
    let along = 1.0 - ratio * e2;
    let denom = 4.0 / (q2 * q2) * (spec.w_init.powi(-2) + (1.0 - rb * rb) * tt) * e2
        + (1.0 / s) * (1.0 + ratio * ratio * e2) * (1.0 - e2);
    Ok(spec
        .beta_hat
        .iter()
        .zip(&spec.r)
        .map(|(b, r)| {
            let perp = r - rb * b;
            front * (b * along + 2.0 / q2 * perp * e1) / denom
        })
        .collect())
}

/// Condition number above which Σ counts as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// w* = Σ⁻¹β.
pub fn ols_solution(stats: &DataStats) -> Result<Vec<f64>, TheoryError> {
    let sv = singular_values(&stats.sigma);
    let (hi, lo) = (sv[0], *sv.last().expect("non-empty Σ"));
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(cond < MAX_CONDITION) {
        return Err(TheoryError::RankDeficient(cond));
    }
    solve_spd(&stats.sigma, &stats.beta).map_err(|_| TheoryError::RankDeficient(cond))
}

/// Tolerance on the largest dual increment of a sweep.
pub const MARGIN_TOL: f64 = 1e-10;
pub const MARGIN_MAX_SWEEPS: usize = 100_000;
/// Dual variables beyond this mark the problem infeasible.
pub const MARGIN_DUAL_CAP: f64 = 1e8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxMargin {
    /// Unit direction of the minimum-norm separator.
    pub direction: Vec<f64>,
    /// Minimum-norm w with yᵤwᵀxᵤ ≥ 1.
    pub w: Vec<f64>,
    pub duals: Vec<f64>,
    /// Largest violation among primal feasibility and complementary slackness.
    pub kkt_residual: f64,
    pub sweeps: usize,
}

/// Hard-margin separator through the origin by dual coordinate ascent:
/// maximize Σaᵤ − ½‖Σaᵤyᵤxᵤ‖² over a ≥ 0 with random-permutation sweeps.
pub fn max_margin(data: &Dataset) -> Result<MaxMargin, TheoryError> {
    for (i, y) in data.targets.iter().enumerate() {
        if *y != 1.0 && *y != -1.0 {
            return Err(TheoryError::InvalidLabel(i));
        }
    }
    let p = data.len();
    let sq: Vec<f64> = (0..p).map(|i| dot(data.x(i), data.x(i))).collect();
    if sq.contains(&0.0) {
        return Err(TheoryError::Infeasible);
    }
    let mut a = vec![0.0; p];
    let mut w = vec![0.0; data.dim()];
    let mut order: Vec<usize> = (0..p).collect();
    let mut rng = SeededRng::new(0);
    let mut sweeps = 0;
    loop {
        if sweeps == MARGIN_MAX_SWEEPS {
            return Err(TheoryError::Infeasible);
        }
        sweeps += 1;
        for i in (1..p).rev() {
            let j = (rng.uniform(0.0, 1.0) * (i + 1) as f64) as usize;
            order.swap(i, j.min(i));
        }
        let mut biggest: f64 = 0.0;
        for &i in &order {
            let y = data.targets[i];
            let x = data.x(i);
            let next = (a[i] + (1.0 - y * dot(&w, x)) / sq[i]).max(0.0);
            let delta = next - a[i];
            if delta != 0.0 {
                for (wk, xk) in w.iter_mut().zip(x) {
                    *wk += delta * y * xk;
                }
                a[i] = next;
            }
            biggest = biggest.max(delta.abs());
        }
        if a.iter().any(|v| *v > MARGIN_DUAL_CAP) {
            return Err(TheoryError::Infeasible);
        }
        if biggest < MARGIN_TOL * a.iter().fold(1.0, |m: f64, v| m.max(*v)) {
            break;
        }
    }
    let mut kkt: f64 = 0.0;
    for i in 0..p {
        let m = data.targets[i] * dot(&w, data.x(i));
        kkt = kkt.max((1.0 - m).max(0.0)).max((a[i] * (m - 1.0)).abs());
    }
    let n = norm(&w);
    Ok(MaxMargin { direction: w.iter().map(|v| v / n).collect(), w, duals: a, kkt_residual: kkt, sweeps })
}

/// f(x) = w_effᵀx + even_part(x) for a two-layer net.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoLayerDecomposition {
    /// (1+α)/2·(W₂W₁)ᵀ.
    pub w_eff: Vec<f64>,
    net: NetworkParams,
}

impl TwoLayerDecomposition {
    /// (1−α)/2·Σₕ w₂ₕ|w₁ₕᵀx|.
    pub fn even_part(&self, x: &[f64]) -> f64 {
        let w1 = self.net.layer(0);
        let w2 = self.net.layer(1).data();
        let sum: f64 = (0..w1.rows()).map(|h| w2[h] * dot(w1.row(h), x).abs()).sum();
        (1.0 - self.net.alpha()) / 2.0 * sum
    }
}

pub fn decompose_two_layer(net: &NetworkParams) -> Result<TwoLayerDecomposition, TheoryError> {
    if net.depth() != 2 {
        return Err(TheoryError::Shape(format!("decomposition needs two layers, got {}", net.depth())));
    }
    let k = (net.alpha() + 1.0) / 2.0;
    let w_eff = net.layer(1).matmul(net.layer(0))?.into_data().into_iter().map(|v| k * v).collect();
    Ok(TwoLayerDecomposition { w_eff, net: net.clone() })
}

/// σ(σ(x₁)−σ(x₂)) − σ(σ(−x₁)−σ(−x₂)) with σ = ReLU.
pub fn depth_sep_g(x: [f64; 2]) -> f64 {
    let r = |z: f64| sigma(z, 0.0);
    r(r(x[0]) - r(x[1])) - r(r(-x[0]) - r(-x[1]))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSplit {
    /// ½⟨(y − w_effᵀx)²⟩.
    pub linear_loss: f64,
    /// ½⟨f_e(x)²⟩.
    pub even_energy: f64,
}

/// Square-loss split on symmetric data, using the dataset's reduction.
pub fn symmetric_loss_split(net: &NetworkParams, data: &Dataset) -> Result<LossSplit, TheoryError> {
    if let Err((i, v)) = check_symmetry(data) {
        return Err(TheoryError::Asymmetric(i, v));
    }
    let dec = decompose_two_layer(net)?;
    let weight = data.meta.reduction.weight(data.len());
    let mut lin = 0.0;
    let mut even = 0.0;
    for i in 0..data.len() {
        let x = data.x(i);
        let r = data.targets[i] - dot(&dec.w_eff, x);
        lin += r * r;
        let e = dec.even_part(x);
        even += e * e;
    }
    Ok(LossSplit { linear_loss: 0.5 * weight * lin, even_energy: 0.5 * weight * even })
}
