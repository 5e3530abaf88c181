//! Bias-free leaky-ReLU networks: forward pass, exact batch gradients, initializations.
//!
//! Convention: σ(z) = max(z, αz) and σ'(0) = α.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{Dataset, Reduction};
use crate::numkit::{gaussian_matrix, norm, Matrix, NumError, SeededRng};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Square,
    Logistic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkFile", into = "NetworkFile")]
pub struct NetworkParams {
    layers: Vec<Matrix>,
    alpha: f64,
}

/// On-disk form: widths `[D, H₁, …, 1]`, α and row-major weights per layer.
#[derive(Serialize, Deserialize)]
struct NetworkFile {
    shape: Vec<usize>,
    alpha: f64,
    weights: Vec<Vec<f64>>,
}

impl TryFrom<NetworkFile> for NetworkParams {
    type Error = ModelError;
    fn try_from(f: NetworkFile) -> Result<Self, ModelError> {
        if f.shape.len() != f.weights.len() + 1 {
            return Err(ModelError::Shape("shape needs one more entry than weight arrays".into()));
        }
        let layers = f
            .weights
            .into_iter()
            .enumerate()
            .map(|(l, w)| Matrix::new(f.shape[l + 1], f.shape[l], w))
            .collect::<Result<Vec<_>, _>>()?;
        NetworkParams::new(layers, f.alpha)
    }
}

impl From<NetworkParams> for NetworkFile {
    fn from(n: NetworkParams) -> Self {
        NetworkFile {
            shape: n.widths(),
            alpha: n.alpha,
            weights: n.layers.into_iter().map(Matrix::into_data).collect(),
        }
    }
}

impl NetworkParams {
    pub fn new(layers: Vec<Matrix>, alpha: f64) -> Result<Self, ModelError> {
        if layers.is_empty() {
            return Err(ModelError::Shape("network needs at least one layer".into()));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(ModelError::Invalid(format!("alpha {alpha} outside [0, 1]")));
        }
        for l in 1..layers.len() {
            if layers[l].cols() != layers[l - 1].rows() {
                return Err(ModelError::Shape(format!(
                    "layer {} has {} columns but layer {} has {} rows",
                    l + 1,
                    layers[l].cols(),
                    l,
                    layers[l - 1].rows()
                )));
            }
        }
        if layers.last().is_some_and(|w| w.rows() != 1) {
            return Err(ModelError::Shape("final layer must have one row".into()));
        }
        Ok(NetworkParams { layers, alpha })
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &Matrix {
        &self.layers[l]
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols()
    }

    /// `[D, H₁, …, H_{L−1}, 1]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(Matrix::rows));
        w
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self, ModelError> {
        NetworkParams::new(self.layers.clone(), alpha)
    }

    /// Every layer multiplied by `a`.
    pub fn scaled(&self, a: f64) -> Self {
        NetworkParams { layers: self.layers.iter().map(|w| w.scale(a)).collect(), alpha: self.alpha }
    }

    /// `self += a · step`, layer by layer.
    pub fn axpy(&mut self, a: f64, step: &[Matrix]) -> Result<(), ModelError> {
        if step.len() != self.layers.len() {
            return Err(ModelError::Shape("gradient depth mismatch".into()));
        }
        for (w, g) in self.layers.iter_mut().zip(step) {
            w.axpy(a, g)?;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(Matrix::all_finite)
    }

    /// Frobenius norm over all layers jointly.
    pub fn norm(&self) -> f64 {
        self.layers.iter().map(Matrix::frob_norm_sq).sum::<f64>().sqrt()
    }

    /// Frobenius distance over all layers jointly.
    pub fn distance(&self, other: &NetworkParams) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| a.sub(b).expect("same shapes").frob_norm_sq())
            .sum::<f64>()
            .sqrt()
    }

    /// `W_L ⋯ W₁` as a D-vector.
    pub fn product_map(&self) -> Vec<f64> {
        let mut acc = self.layers[self.layers.len() - 1].clone();
        for w in self.layers.iter().rev().skip(1) {
            acc = acc.matmul(w).expect("chained shapes");
        }
        acc.into_data()
    }

    pub fn output(&self, x: &[f64]) -> Result<f64, ModelError> {
        Ok(forward(self, x)?.output)
    }

    pub fn save_json(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub fn sigma(z: f64, alpha: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        alpha * z
    }
}

pub fn sigma_prime(z: f64, alpha: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        alpha
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    /// h₁ … h_L; the last entry has length 1.
    pub preactivations: Vec<Vec<f64>>,
    pub output: f64,
}

pub fn forward(net: &NetworkParams, x: &[f64]) -> Result<ForwardTrace, ModelError> {
    if x.len() != net.input_dim() {
        return Err(ModelError::Shape(format!("input length {} for a {}-input network", x.len(), net.input_dim())));
    }
    let mut pre = Vec::with_capacity(net.depth());
    let mut h = net.layers[0].matvec(x)?;
    for w in &net.layers[1..] {
        let a: Vec<f64> = h.iter().map(|z| sigma(*z, net.alpha)).collect();
        pre.push(h);
        h = w.matvec(&a)?;
    }
    let output = h[0];
    pre.push(h);
    Ok(ForwardTrace { preactivations: pre, output })
}

/// Per-sample loss and its derivative with respect to the network output.
pub fn pointwise_loss(kind: LossKind, f: f64, y: f64) -> (f64, f64) {
    match kind {
        LossKind::Square => (0.5 * (y - f) * (y - f), f - y),
        LossKind::Logistic => {
            let m = -y * f;
            let loss = if m > 0.0 { m + (-m).exp().ln_1p() } else { m.exp().ln_1p() };
            (loss, -y / (1.0 + (-m).exp()))
        }
    }
}

/// L2 coefficient applied to the gradient, λ_α = λ·(α+1)/2.
pub fn l2_alpha(l2: f64, alpha: f64) -> f64 {
    l2 * (alpha + 1.0) / 2.0
}

/// Rows per work item; partial sums are combined in index order.
const CHUNK: usize = 128;

/// Loss and exact gradient over the dataset. The regularizer contributes
/// (λ_α/2)‖W‖² to the loss and λ_α·W to the gradient.
pub fn loss_and_gradients(
    net: &NetworkParams,
    data: &Dataset,
    loss: LossKind,
    reduction: Reduction,
    l2: f64,
) -> Result<(f64, Vec<Matrix>), ModelError> {
    if data.dim() != net.input_dim() {
        return Err(ModelError::Shape(format!("data dimension {} for a {}-input network", data.dim(), net.input_dim())));
    }
    let p = data.len();
    let weight = reduction.weight(p);
    let transposed: Vec<Matrix> = net.layers.iter().map(Matrix::transpose).collect();
    let starts: Vec<usize> = (0..p).step_by(CHUNK).collect();
    let partials: Vec<(f64, Vec<Matrix>)> = if starts.len() > 1 {
        starts
            .par_iter()
            .map(|&s| chunk_gradient(net, &transposed, data, s, (s + CHUNK).min(p), loss))
            .collect()
    } else {
        vec![chunk_gradient(net, &transposed, data, 0, p, loss)]
    };
    let mut iter = partials.into_iter();
    let (mut total, mut grads) = iter.next().expect("at least one chunk");
    for (l, g) in iter {
        total += l;
        for (acc, gi) in grads.iter_mut().zip(&g) {
            acc.axpy(1.0, gi)?;
        }
    }
    total *= weight;
    for g in grads.iter_mut() {
        *g = g.scale(weight);
    }
    if l2 > 0.0 {
        let lam = l2_alpha(l2, net.alpha);
        for (g, w) in grads.iter_mut().zip(&net.layers) {
            g.axpy(lam, w)?;
            total += 0.5 * lam * w.frob_norm_sq();
        }
    }
    Ok((total, grads))
}

pub fn gradients(
    net: &NetworkParams,
    data: &Dataset,
    loss: LossKind,
    reduction: Reduction,
    l2: f64,
) -> Result<Vec<Matrix>, ModelError> {
    Ok(loss_and_gradients(net, data, loss, reduction, l2)?.1)
}

/// Largest relative deviation |fd − g|/max(|g|, 1e-3) between backprop and
/// central differences with step `h`, over every weight.
pub fn gradient_check(net: &NetworkParams, data: &Dataset, loss: LossKind, reduction: Reduction, l2: f64, h: f64) -> Result<f64, ModelError> {
    let g = gradients(net, data, loss, reduction, l2)?;
    let mut worst: f64 = 0.0;
    for l in 0..net.depth() {
        for k in 0..net.layers[l].data().len() {
            let mut bump: Vec<Matrix> = net.layers.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect();
            let mut unit = bump[l].clone().into_data();
            unit[k] = 1.0;
            bump[l] = Matrix::new(net.layers[l].rows(), net.layers[l].cols(), unit)?;
            let mut plus = net.clone();
            plus.axpy(h, &bump)?;
            let mut minus = net.clone();
            minus.axpy(-h, &bump)?;
            let fd = (dataset_loss(&plus, data, loss, reduction, l2)? - dataset_loss(&minus, data, loss, reduction, l2)?) / (2.0 * h);
            let an = g[l].data()[k];
            worst = worst.max((fd - an).abs() / an.abs().max(1e-3));
        }
    }
    Ok(worst)
}

pub fn dataset_loss(net: &NetworkParams, data: &Dataset, loss: LossKind, reduction: Reduction, l2: f64) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for i in 0..data.len() {
        total += pointwise_loss(loss, net.output(data.x(i))?, data.targets[i]).0;
    }
    total *= reduction.weight(data.len());
    let lam = l2_alpha(l2, net.alpha);
    total += 0.5 * lam * net.layers.iter().map(Matrix::frob_norm_sq).sum::<f64>();
    Ok(total)
}

/// Unscaled loss sum and gradient sums over rows `start..end`.
fn chunk_gradient(
    net: &NetworkParams,
    transposed: &[Matrix],
    data: &Dataset,
    start: usize,
    end: usize,
    loss: LossKind,
) -> (f64, Vec<Matrix>) {
    let n = end - start;
    let d = data.dim();
    let x = Matrix::from_parts(n, d, data.inputs.data()[start * d..end * d].to_vec());
    let alpha = net.alpha;
    // acts[l] is the input to layer l; pre[l] its preactivation.
    let mut acts = vec![x];
    let mut pre = Vec::with_capacity(net.depth());
    for (l, wt) in transposed.iter().enumerate() {
        let z = acts[l].matmul(wt).expect("chained shapes");
        if l + 1 < net.depth() {
            acts.push(z.map(|v| sigma(v, alpha)));
        }
        pre.push(z);
    }
    let out = &pre[net.depth() - 1];
    let mut total = 0.0;
    let mut delta = Vec::with_capacity(n);
    for i in 0..n {
        let (li, di) = pointwise_loss(loss, out.data()[i], data.targets[start + i]);
        total += li;
        delta.push(di);
    }
    let mut delta = Matrix::from_parts(n, 1, delta);
    let mut grads = vec![Matrix::zeros(0, 0); net.depth()];
    for l in (0..net.depth()).rev() {
        grads[l] = delta.t_matmul(&acts[l]).expect("chained shapes");
        if l > 0 {
            let back = delta.matmul(&net.layers[l]).expect("chained shapes");
            let mask = &pre[l - 1];
            let data: Vec<f64> = back.data().iter().zip(mask.data()).map(|(b, z)| b * sigma_prime(*z, alpha)).collect();
            delta = Matrix::from_parts(n, back.cols(), data);
        }
    }
    (total, grads)
}

/// Layer l drawn i.i.d. from N(0, w_init²/N_l), N_l the parameter count of layer l.
/// `widths` is `[D, H₁, …, 1]`.
pub fn init_gaussian(rng: &mut SeededRng, widths: &[usize], alpha: f64, w_init: f64) -> Result<NetworkParams, ModelError> {
    if widths.len() < 2 {
        return Err(ModelError::Shape("need at least input and output widths".into()));
    }
    if !(w_init >= 0.0) {
        return Err(ModelError::Invalid(format!("w_init {w_init} must be non-negative")));
    }
    let layers = widths
        .windows(2)
        .map(|p| {
            let count = (p[0] * p[1]) as f64;
            gaussian_matrix(rng, p[1], p[0], w_init / count.sqrt())
        })
        .collect();
    NetworkParams::new(layers, alpha)
}

/// W₁ = v rᵀ, W₂ = vᵀ with v built from H/2 pairs (+aᵢ, −aᵢ), aᵢ ~ N(0,1), and ‖W₁‖ = scale.
pub fn init_rank1_balanced(rng: &mut SeededRng, h: usize, r: &[f64], alpha: f64, scale: f64) -> Result<NetworkParams, ModelError> {
    if h == 0 || !h.is_multiple_of(2) {
        return Err(ModelError::Invalid(format!("hidden width {h} must be even and positive")));
    }
    if (norm(r) - 1.0).abs() > 1e-12 {
        return Err(ModelError::Invalid("r must be a unit vector".into()));
    }
    let mut v = Vec::with_capacity(h);
    for _ in 0..h / 2 {
        let a = rng.gaussian();
        v.push(a);
        v.push(-a);
    }
    let vn = norm(&v);
    let v: Vec<f64> = v.iter().map(|x| x * scale / vn).collect();
    NetworkParams::new(vec![Matrix::outer(&v, r)?, Matrix::row_vector(&v)?], alpha)
}

/// Split of a signed vector into its positive and negative parts, same length.
pub fn sign_split(r: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (r.iter().map(|v| v.max(0.0)).collect(), r.iter().map(|v| v.min(0.0)).collect())
}

/// Weights in the deep rank-one/rank-two form: W₁ = u r₁ rᵀ,
/// W_l = u√2 (r_l⁺ r_{l−1}⁺ᵀ + r_l⁻ r_{l−1}⁻ᵀ), W_L = u r_{L−1}ᵀ.
/// `hidden` holds the signed unit vectors r₁ … r_{L−1}.
pub fn deep_structured_form(r: &[f64], hidden: &[Vec<f64>], u: f64, alpha: f64) -> Result<NetworkParams, ModelError> {
    let first = hidden.first().ok_or_else(|| ModelError::Shape("need at least one hidden layer".into()))?;
    let mut layers = vec![Matrix::outer(first, r)?.scale(u)];
    for l in 1..hidden.len() {
        let (cur_p, cur_n) = sign_split(&hidden[l]);
        let (prev_p, prev_n) = sign_split(&hidden[l - 1]);
        let block = Matrix::outer(&cur_p, &prev_p)?.add(&Matrix::outer(&cur_n, &prev_n)?)?;
        layers.push(block.scale(u * 2f64.sqrt()));
    }
    layers.push(Matrix::row_vector(hidden.last().expect("non-empty"))?.scale(u));
    NetworkParams::new(layers, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{make_symmetric_gaussian, Teacher};

    fn hand_net(alpha: f64) -> NetworkParams {
        NetworkParams::new(vec![Matrix::identity(2), Matrix::row_vector(&[1.0, -1.0]).unwrap()], alpha).unwrap()
    }

    #[test]
    fn forward_by_hand() {
        assert_eq!(hand_net(0.0).output(&[2.0, -3.0]).unwrap(), 2.0);
        let t = forward(&hand_net(0.5), &[2.0, -3.0]).unwrap();
        assert_eq!(t.output, 3.5);
        assert_eq!(t.preactivations[0], vec![2.0, -3.0]);
        assert!(matches!(forward(&hand_net(0.0), &[1.0]), Err(ModelError::Shape(_))));
    }

    #[test]
    fn linear_collapse() {
        let mut rng = SeededRng::new(2);
        let net = init_gaussian(&mut rng, &[3, 5, 4, 1], 1.0, 1.0).unwrap();
        let p = net.product_map();
        for _ in 0..10 {
            let x: Vec<f64> = (0..3).map(|_| rng.gaussian()).collect();
            let lin: f64 = p.iter().zip(&x).map(|(a, b)| a * b).sum();
            assert!((net.output(&x).unwrap() - lin).abs() < 1e-12);
        }
    }

    #[test]
    fn one_dimensional_gradient_by_hand() {
        let net = NetworkParams::new(vec![Matrix::new(1, 1, vec![0.5]).unwrap(), Matrix::new(1, 1, vec![0.5]).unwrap()], 1.0).unwrap();
        let d = Dataset::from_points(&[(vec![1.0], 1.0)], "one").unwrap();
        let g = gradients(&net, &d, LossKind::Square, Reduction::Mean, 0.0).unwrap();
        assert!((g[0].get(0, 0) + 0.375).abs() < 1e-15);
        assert!((g[1].get(0, 0) + 0.375).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_logistic_baseline() {
        let net = NetworkParams::new(vec![Matrix::zeros(3, 2), Matrix::zeros(1, 3)], 0.0).unwrap();
        let d = Dataset::from_points(&[(vec![1.0, 2.0], 1.0), (vec![0.5, -1.0], -1.0)], "z").unwrap();
        let (loss, g) = loss_and_gradients(&net, &d, LossKind::Logistic, Reduction::Mean, 0.0).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert!(g.iter().all(|gi| gi.frob_norm() == 0.0));
    }

    fn finite_difference_check(widths: &[usize], alpha: f64, loss: LossKind, l2: f64, seed: u64) -> f64 {
        let mut rng = SeededRng::new(seed);
        let net = init_gaussian(&mut rng, widths, alpha, 2.0).unwrap();
        let pts: Vec<(Vec<f64>, f64)> = (0..5)
            .map(|_| ((0..widths[0]).map(|_| rng.gaussian()).collect(), if rng.gaussian() > 0.0 { 1.0 } else { -1.0 }))
            .collect();
        let d = Dataset::from_points(&pts, "fd").unwrap();
        gradient_check(&net, &d, loss, Reduction::Mean, l2, 1e-5).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (loss, l2) in [(LossKind::Square, 0.0), (LossKind::Logistic, 0.0), (LossKind::Square, 0.3)] {
            for alpha in [0.0, 0.3, 1.0] {
                assert!(finite_difference_check(&[3, 4, 1], alpha, loss, l2, 7) < 1e-6, "{loss:?} {alpha} {l2}");
                assert!(finite_difference_check(&[3, 4, 3, 1], alpha, loss, l2, 8) < 1e-6, "{loss:?} {alpha} {l2}");
            }
        }
    }

    #[test]
    fn batched_loss_matches_pointwise_loss() {
        let mut rng = SeededRng::new(4);
        let d = make_symmetric_gaussian(&mut rng, 300, 4, &Teacher::LinearPlusSine).unwrap();
        let net = init_gaussian(&mut rng, &[4, 6, 5, 1], 0.2, 1.0).unwrap();
        let (l, _) = loss_and_gradients(&net, &d, LossKind::Square, Reduction::Mean, 0.1).unwrap();
        let direct = dataset_loss(&net, &d, LossKind::Square, Reduction::Mean, 0.1).unwrap();
        assert!((l - direct).abs() < 1e-12 * direct);
    }

    #[test]
    fn gaussian_init_scale() {
        let mut rng = SeededRng::new(0);
        let zero = init_gaussian(&mut rng, &[20, 500, 1], 0.0, 0.0).unwrap();
        assert_eq!(zero.norm(), 0.0);
        let a = init_gaussian(&mut SeededRng::new(5), &[20, 500, 1], 0.0, 1e-2).unwrap();
        let b = init_gaussian(&mut SeededRng::new(5), &[20, 500, 1], 0.0, 1e-2).unwrap();
        assert_eq!(a, b);
        assert!((a.layer(0).frob_norm() / 1e-2 - 1.0).abs() < 0.15);
    }

    #[test]
    fn rank1_balanced_init() {
        let mut rng = SeededRng::new(6);
        assert!(init_rank1_balanced(&mut rng, 3, &[1.0, 0.0], 0.0, 1.0).is_err());
        let r = [0.6, 0.0, 0.8];
        let net = init_rank1_balanced(&mut rng, 8, &r, 0.0, 0.7).unwrap();
        let v = net.layer(1).data().to_vec();
        let (vp, vn) = sign_split(&v);
        assert!((norm(&vp) - norm(&vn)).abs() < 1e-15);
        assert!((net.layer(0).frob_norm() - 0.7).abs() < 1e-14);
        let w1 = net.layer(0);
        let w2 = net.layer(1);
        let imbalance = w1.matmul_t(w1).unwrap().sub(&w2.t_matmul(w2).unwrap()).unwrap();
        assert!(imbalance.frob_norm() < 1e-14);
        for alpha in [0.0, 0.5] {
            let net = net.with_alpha(alpha).unwrap();
            for sign in [1.0, -1.0] {
                let x: Vec<f64> = r.iter().map(|v| sign * v).collect();
                let expect = (alpha + 1.0) / 2.0 * norm(&v).powi(2) * sign;
                assert!((net.output(&x).unwrap() - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn structured_form_implements_half_product() {
        let r = [0.6, 0.8];
        let h1 = vec![0.5, -0.5, 0.5, -0.5];
        let h2 = vec![0.5f64.sqrt(), 0.0, -(0.5f64.sqrt()), 0.0];
        let net = deep_structured_form(&r, &[h1, h2], 1.3, 0.0).unwrap();
        let p = net.product_map();
        for x in [[1.0, 2.0], [-0.3, 0.1], [2.0, -5.0]] {
            let half: f64 = 0.5 * (p[0] * x[0] + p[1] * x[1]);
            assert!((net.output(&x).unwrap() - half).abs() < 1e-12);
        }
    }

    #[test]
    fn json_round_trip() {
        let net = init_gaussian(&mut SeededRng::new(1), &[2, 3, 1], 0.25, 1.0).unwrap();
        let s = serde_json::to_string(&net).unwrap();
        assert!(s.contains("\"shape\":[2,3,1]"));
        let back: NetworkParams = serde_json::from_str(&s).unwrap();
        assert_eq!(back, net);
        let bad = r#"{"shape":[2,3,2],"alpha":0.0,"weights":[[0,0,0,0,0,0],[0,0,0,0,0,0]]}"#;
        assert!(serde_json::from_str::<NetworkParams>(bad).is_err());
    }
}
