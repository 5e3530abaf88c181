//! Dataset families, symmetry checks and the second-order statistics Σ, β.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::numkit::{dot, norm, Matrix, NumError, SeededRng};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("empty dataset")]
    Empty,
    #[error("{0}")]
    Invalid(String),
    #[error("input {0} lies on the half-space boundary")]
    Boundary(usize),
    #[error("half space contains no inputs")]
    EmptyHalfSpace,
    #[error("unknown dataset family `{0}`")]
    UnknownName(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

impl Reduction {
    /// Weight applied to each per-sample term for a dataset of `p` points.
    pub fn weight(self, p: usize) -> f64 {
        match self {
            Reduction::Mean => 1.0 / p as f64,
            Reduction::Sum => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator: String,
    pub params: Value,
    pub seed: Option<u64>,
    pub reduction: Reduction,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub targets: Vec<f64>,
    pub name: String,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(inputs: Matrix, targets: Vec<f64>, name: &str, meta: DatasetMeta) -> Result<Self, DataError> {
        if inputs.rows() == 0 || inputs.cols() == 0 {
            return Err(DataError::Empty);
        }
        if targets.len() != inputs.rows() {
            return Err(DataError::Invalid(format!(
                "{} targets for {} inputs",
                targets.len(),
                inputs.rows()
            )));
        }
        if targets.iter().any(|y| !y.is_finite()) {
            return Err(DataError::Invalid("non-finite target".into()));
        }
        Ok(Dataset { inputs, targets, name: name.to_string(), meta })
    }

    /// Dataset with plain metadata, for ad-hoc point sets.
    pub fn from_points(points: &[(Vec<f64>, f64)], name: &str) -> Result<Self, DataError> {
        let rows: Vec<Vec<f64>> = points.iter().map(|p| p.0.clone()).collect();
        let targets = points.iter().map(|p| p.1).collect();
        let meta = DatasetMeta {
            generator: "points".into(),
            params: Value::Null,
            seed: None,
            reduction: Reduction::Mean,
        };
        Dataset::new(Matrix::from_rows(&rows)?, targets, name, meta)
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    pub fn with_reduction(mut self, reduction: Reduction) -> Self {
        self.meta.reduction = reduction;
        self
    }

    /// Subset of rows, keeping metadata.
    pub fn subset(&self, idx: &[usize], name: &str) -> Result<Dataset, DataError> {
        let all: Vec<usize> = (0..self.dim()).collect();
        let inputs = self.inputs.select(idx, &all);
        let targets = idx.iter().map(|&i| self.targets[i]).collect();
        Dataset::new(inputs, targets, name, self.meta.clone())
    }

    /// Writes `path` as CSV (`x0,...,x{D-1},y`) and the metadata as a sibling `.json`.
    pub fn save_csv(&self, path: &Path) -> Result<(), DataError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.x(i).iter().map(|v| format_f64(*v)).collect();
            rec.push(format_f64(self.targets[i]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        let meta = json!({ "name": self.name, "meta": self.meta });
        std::fs::write(path.with_extension("json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    /// Reads a CSV written by [`Dataset::save_csv`]; metadata is optional.
    pub fn load_csv(path: &Path) -> Result<Dataset, DataError> {
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        let d = headers.len().checked_sub(1).filter(|d| *d > 0).ok_or(DataError::Empty)?;
        if headers.get(d) != Some("y") {
            return Err(DataError::Invalid("last column must be `y`".into()));
        }
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let vals: Result<Vec<f64>, _> = rec.iter().map(|s| s.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| DataError::Invalid(format!("bad number: {e}")))?;
            targets.push(vals[d]);
            rows.push(vals[..d].to_vec());
        }
        if rows.is_empty() {
            return Err(DataError::Empty);
        }
        let meta_path = path.with_extension("json");
        let (name, meta) = if meta_path.exists() {
            let v: Value = serde_json::from_str(&std::fs::read_to_string(meta_path)?)?;
            let name = v["name"].as_str().unwrap_or("dataset").to_string();
            (name, serde_json::from_value(v["meta"].clone())?)
        } else {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
            let meta = DatasetMeta {
                generator: "csv".into(),
                params: Value::Null,
                seed: None,
                reduction: Reduction::Mean,
            };
            (stem.to_string(), meta)
        };
        Dataset::new(Matrix::from_rows(&rows)?, targets, &name, meta)
    }
}

/// Shortest representation that parses back to the same bits.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataStats {
    pub sigma: Matrix,
    pub beta: Vec<f64>,
    pub s: f64,
    pub beta_hat: Vec<f64>,
    pub trace_sigma: f64,
    /// ⟨y²⟩ under the same reduction, needed to evaluate losses from statistics alone.
    pub y2: f64,
    pub reduction: Reduction,
}

impl DataStats {
    fn from_sums(sigma: Matrix, beta: Vec<f64>, y2: f64, reduction: Reduction) -> DataStats {
        let s = norm(&beta);
        let beta_hat = if s > 0.0 { beta.iter().map(|b| b / s).collect() } else { vec![0.0; beta.len()] };
        let trace_sigma = (0..sigma.rows()).map(|i| sigma.get(i, i)).sum();
        DataStats { sigma, beta, s, beta_hat, trace_sigma, y2, reduction }
    }

    /// Square loss ½⟨(y − wᵀx)²⟩ of the linear predictor `w`.
    pub fn linear_loss(&self, w: &[f64]) -> f64 {
        let sw = self.sigma.matvec(w).expect("dimension of w matches Σ");
        0.5 * (self.y2 - 2.0 * dot(&self.beta, w) + dot(w, &sw))
    }
}

pub fn compute_stats(data: &Dataset, reduction: Reduction) -> DataStats {
    let idx: Vec<usize> = (0..data.len()).collect();
    weighted_stats(data, &idx, reduction.weight(data.len()), reduction)
}

fn weighted_stats(data: &Dataset, idx: &[usize], weight: f64, reduction: Reduction) -> DataStats {
    let d = data.dim();
    let mut sigma = vec![0.0; d * d];
    let mut beta = vec![0.0; d];
    let mut y2 = 0.0;
    for &i in idx {
        let x = data.x(i);
        let y = data.targets[i];
        for a in 0..d {
            beta[a] += y * x[a];
            for b in 0..d {
                sigma[a * d + b] += x[a] * x[b];
            }
        }
        y2 += y * y;
    }
    let sigma = Matrix::new(d, d, sigma.into_iter().map(|v| v * weight).collect()).expect("finite inputs");
    let beta = beta.into_iter().map(|v| v * weight).collect();
    DataStats::from_sums(sigma, beta, y2 * weight, reduction)
}

/// Inputs mapped by L⁻¹ with Σ = L Lᵀ (Σ under the dataset's own reduction),
/// so the result has Σ = I. A linear map, so symmetry is preserved.
pub fn whiten(data: &Dataset) -> Result<Dataset, DataError> {
    let stats = compute_stats(data, data.meta.reduction);
    let l = crate::numkit::cholesky(&stats.sigma).map_err(|e| DataError::Invalid(format!("covariance not invertible: {e}")))?;
    let rows: Vec<Vec<f64>> = (0..data.len()).map(|i| crate::numkit::forward_substitute(&l, data.x(i))).collect();
    let inputs = Matrix::from_rows(&rows).map_err(|e| DataError::Invalid(e.to_string()))?;
    let mut meta = data.meta.clone();
    meta.params = json!({ "whitened": meta.params });
    Dataset::new(inputs, data.targets.clone(), &format!("{}_white", data.name), meta)
}

/// Statistics averaged over `{x : rᵀx > 0}`. Under sum reduction the half-space
/// average is scaled by the full sample count, so on symmetric data the result
/// equals [`compute_stats`] for either reduction.
pub fn halfspace_stats(data: &Dataset, r: &[f64], reduction: Reduction) -> Result<DataStats, DataError> {
    if r.len() != data.dim() {
        return Err(DataError::Invalid("direction dimension mismatch".into()));
    }
    let mut idx = Vec::new();
    for i in 0..data.len() {
        let z = dot(r, data.x(i));
        if z == 0.0 {
            return Err(DataError::Boundary(i));
        }
        if z > 0.0 {
            idx.push(i);
        }
    }
    if idx.is_empty() {
        return Err(DataError::EmptyHalfSpace);
    }
    let weight = match reduction {
        Reduction::Mean => 1.0 / idx.len() as f64,
        Reduction::Sum => data.len() as f64 / idx.len() as f64,
    };
    Ok(weighted_stats(data, &idx, weight, reduction))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Teacher {
    /// y = wᵀx + sin(4wᵀx), w ~ U[−0.5, 0.5]^D.
    LinearPlusSine,
    /// y = wᵀx, w ~ U[−0.5, 0.5]^D.
    Linear,
    /// y = wᵀx with the given w.
    LinearFixed { w: Vec<f64> },
}

/// Gaussian inputs x ~ N(0, I) together with their mirrors, stored as
/// consecutive (x, −x) rows.
pub fn make_symmetric_gaussian(rng: &mut SeededRng, n_pairs: usize, d: usize, teacher: &Teacher) -> Result<Dataset, DataError> {
    if n_pairs == 0 || d == 0 {
        return Err(DataError::Empty);
    }
    let xs: Vec<Vec<f64>> = (0..n_pairs).map(|_| (0..d).map(|_| rng.gaussian()).collect()).collect();
    let (w, sine) = match teacher {
        Teacher::LinearPlusSine => ((0..d).map(|_| rng.uniform(-0.5, 0.5)).collect(), true),
        Teacher::Linear => ((0..d).map(|_| rng.uniform(-0.5, 0.5)).collect(), false),
        Teacher::LinearFixed { w } => {
            if w.len() != d {
                return Err(DataError::Invalid("teacher dimension mismatch".into()));
            }
            (w.clone(), false)
        }
    };
    let f = |x: &[f64]| {
        let z = dot(&w, x);
        if sine {
            z + (4.0 * z).sin()
        } else {
            z
        }
    };
    let mut rows = Vec::with_capacity(2 * n_pairs);
    let mut targets = Vec::with_capacity(2 * n_pairs);
    for x in xs {
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        targets.push(f(&x));
        targets.push(f(&neg));
        rows.push(x);
        rows.push(neg);
    }
    let meta = DatasetMeta {
        generator: "symmetric_gaussian".into(),
        params: json!({ "n_pairs": n_pairs, "dim": d, "teacher": teacher, "teacher_w": w }),
        seed: Some(rng.seed()),
        reduction: Reduction::Mean,
    };
    Dataset::new(Matrix::from_rows(&rows)?, targets, "symmetric_gaussian", meta)
}

/// Appends the mirror (−x, −y) of every point.
pub fn symmetrize(data: &Dataset) -> Dataset {
    let p = data.len();
    let d = data.dim();
    let mut rows = data.inputs.data().to_vec();
    rows.extend(data.inputs.data().iter().map(|v| -v));
    let mut targets = data.targets.clone();
    targets.extend(data.targets.iter().map(|y| -y));
    let mut meta = data.meta.clone();
    meta.params = json!({ "symmetrized_from": data.meta.params, "source_generator": data.meta.generator });
    meta.generator = "symmetrize".into();
    Dataset {
        inputs: Matrix::new(2 * p, d, rows).expect("mirrors of finite inputs are finite"),
        targets,
        name: format!("{}_sym", data.name),
        meta,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymmetryViolation {
    /// No unused row equals the negation of this input.
    UnpairedInput,
    /// The mirror input exists but its target is not the negation.
    TargetNotOdd,
}

const SYM_TOL: f64 = 1e-12;

/// `Ok(())` iff the rows split into exact ± pairs with negated targets;
/// otherwise the first index that cannot be paired.
pub fn check_symmetry(data: &Dataset) -> Result<(), (usize, SymmetryViolation)> {
    let p = data.len();
    let mut used = vec![false; p];
    for i in 0..p {
        if used[i] {
            continue;
        }
        used[i] = true;
        let xi = data.x(i);
        let mirror = |j: usize| data.x(j).iter().zip(xi).all(|(a, b)| (a + b).abs() <= SYM_TOL);
        if mirror(i) {
            // x = 0 pairs with itself, so the target must vanish.
            if data.targets[i].abs() > SYM_TOL {
                return Err((i, SymmetryViolation::TargetNotOdd));
            }
            continue;
        }
        let odd = |j: usize| (data.targets[i] + data.targets[j]).abs() <= SYM_TOL;
        let candidates: Vec<usize> = (i + 1..p).filter(|&j| !used[j] && mirror(j)).collect();
        match candidates.iter().find(|&&j| odd(j)).or(candidates.first()) {
            None => return Err((i, SymmetryViolation::UnpairedInput)),
            Some(&j) if !odd(j) => return Err((i, SymmetryViolation::TargetNotOdd)),
            Some(&j) => used[j] = true,
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Named {
    /// 2k alternating angular sectors (k odd) on rings of radius 1 and 2.
    Fan { sectors_half: usize },
    /// +1 ring inside, −1 ring outside.
    Circle,
    Ortho2,
    /// Scaled basis vectors in D=20: 10 of norm 2 labelled +1, 10 of norm 1 labelled −1.
    #[serde(rename = "ortho_highD")]
    OrthoHighD,
    /// Orthonormal pair e₁ (+1), e₂ (−1).
    OrthoUnit2,
    Xor4,
    /// Six points with the (1, δ) point perturbed.
    Asym6 { delta: f64 },
    /// 20 separable 2-D points with two flipped labels, symmetrized to 40.
    Labelflip,
    /// The labelflip arc without flips: linearly separable, symmetrized to 40.
    ArcSeparable,
}

impl Named {
    /// Family by name with default parameters; `delta` is required only for asym6.
    pub fn parse(name: &str, delta: Option<f64>) -> Result<Named, DataError> {
        Ok(match name {
            "fan" => Named::Fan { sectors_half: 3 },
            "circle" => Named::Circle,
            "ortho2" => Named::Ortho2,
            "ortho_highD" => Named::OrthoHighD,
            "ortho_unit2" => Named::OrthoUnit2,
            "xor4" => Named::Xor4,
            "asym6" => Named::Asym6 {
                delta: delta.ok_or_else(|| DataError::Invalid("asym6 needs delta".into()))?,
            },
            "labelflip" => Named::Labelflip,
            "arc_separable" => Named::ArcSeparable,
            other => return Err(DataError::UnknownName(other.to_string())),
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Named::Fan { .. } => "fan",
            Named::Circle => "circle",
            Named::Ortho2 => "ortho2",
            Named::OrthoHighD => "ortho_highD",
            Named::OrthoUnit2 => "ortho_unit2",
            Named::Xor4 => "xor4",
            Named::Asym6 { .. } => "asym6",
            Named::Labelflip => "labelflip",
            Named::ArcSeparable => "arc_separable",
        }
    }
}

pub fn make_named(spec: &Named) -> Result<Dataset, DataError> {
    let mut reduction = Reduction::Mean;
    let mut notes = json!({});
    let points: Vec<(Vec<f64>, f64)> = match spec {
        Named::Fan { sectors_half } => {
            let k = *sectors_half;
            if k == 0 || k % 2 == 0 {
                return Err(DataError::Invalid("fan needs an odd number of sector pairs".into()));
            }
            notes = json!({ "radii": [1.0, 2.0], "angles": 60, "sectors": 2 * k });
            let mut pts = Vec::with_capacity(120);
            for radius in [1.0, 2.0] {
                for i in 0..60 {
                    let theta = 2.0 * PI * (i as f64 + 0.5) / 60.0;
                    let sector = (theta / (PI / k as f64)).floor() as usize;
                    let y = if sector.is_multiple_of(2) { 1.0 } else { -1.0 };
                    pts.push((vec![radius * theta.cos(), radius * theta.sin()], y));
                }
            }
            pts
        }
        Named::Circle => {
            notes = json!({ "inner_radius": 1.0, "outer_radius": 2.0, "angles": 60 });
            let mut pts = Vec::with_capacity(120);
            for i in 0..60 {
                let theta = 2.0 * PI * i as f64 / 60.0;
                pts.push((vec![theta.cos(), theta.sin()], 1.0));
            }
            for i in 0..60 {
                let theta = 2.0 * PI * (i as f64 + 0.5) / 60.0;
                pts.push((vec![2.0 * theta.cos(), 2.0 * theta.sin()], -1.0));
            }
            pts
        }
        Named::Ortho2 => {
            reduction = Reduction::Sum;
            vec![(vec![-0.5, 1.0], 1.0), (vec![2.0, 1.0], -1.0)]
        }
        Named::OrthoHighD => {
            notes = json!({ "positive_norm": 2.0, "negative_norm": 1.0 });
            (0..20)
                .map(|i| {
                    let mut x = vec![0.0; 20];
                    let (scale, y) = if i < 10 { (2.0, 1.0) } else { (1.0, -1.0) };
                    x[i] = scale;
                    (x, y)
                })
                .collect()
        }
        Named::OrthoUnit2 => vec![(vec![1.0, 0.0], 1.0), (vec![0.0, 1.0], -1.0)],
        Named::Xor4 => {
            reduction = Reduction::Sum;
            notes = json!({ "labels": "+1 on the vertical axis, -1 on the horizontal axis" });
            vec![
                (vec![0.0, 1.0], 1.0),
                (vec![2.0, 0.0], -1.0),
                (vec![0.0, -3.0], 1.0),
                (vec![-4.0, 0.0], -1.0),
            ]
        }
        Named::Asym6 { delta } => {
            if !delta.is_finite() || *delta < 0.0 {
                return Err(DataError::Invalid(format!("asym6 needs delta >= 0, got {delta}")));
            }
            notes = json!({ "labels": "+1 at [1,1],[1,-1],[-1,0]; -1 at their mirrors" });
            vec![
                (vec![1.0, 1.0], 1.0),
                (vec![-1.0, -1.0], -1.0),
                (vec![1.0, -1.0], 1.0),
                (vec![-1.0, 1.0], -1.0),
                (vec![1.0, *delta], -1.0),
                (vec![-1.0, 0.0], 1.0),
            ]
        }
        Named::Labelflip | Named::ArcSeparable => {
            // Upper half-plane arc, labelled by the side of the line x₁ + x₂ = 0.
            let flipped: &[usize] = if *spec == Named::Labelflip { &[4, 13] } else { &[] };
            notes = json!({ "base_points": 20, "flipped": flipped, "separator": [1.0, 1.0] });
            let base: Vec<(Vec<f64>, f64)> = (0..20)
                .map(|i| {
                    let theta = PI * (i as f64 + 0.5) / 20.0;
                    let radius = if i % 2 == 0 { 1.0 } else { 1.5 };
                    let x = vec![radius * theta.cos(), radius * theta.sin()];
                    let y = if x[0] + x[1] > 0.0 { 1.0 } else { -1.0 };
                    let y = if flipped.contains(&i) { -y } else { y };
                    (x, y)
                })
                .collect();
            let mut d = symmetrize(&Dataset::from_points(&base, spec.label())?);
            d.name = spec.label().into();
            d.meta = DatasetMeta {
                generator: "named".into(),
                params: json!({ "family": spec, "notes": notes }),
                seed: None,
                reduction,
            };
            return Ok(d);
        }
    };
    let mut d = Dataset::from_points(&points, spec.label())?;
    d.meta = DatasetMeta {
        generator: "named".into(),
        params: json!({ "family": spec, "notes": notes }),
        seed: None,
        reduction,
    };
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point() -> Dataset {
        Dataset::from_points(&[(vec![1.0, 0.0], 1.0), (vec![-1.0, 0.0], -1.0)], "t").unwrap()
    }

    fn four_point() -> Dataset {
        Dataset::from_points(
            &[
                (vec![1.0, 0.0], 1.0),
                (vec![-1.0, 0.0], -1.0),
                (vec![0.0, 2.0], 3.0),
                (vec![0.0, -2.0], -3.0),
            ],
            "four",
        )
        .unwrap()
    }

    #[test]
    fn stats_by_hand() {
        let st = compute_stats(&two_point(), Reduction::Mean);
        assert_eq!(st.sigma, Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap());
        assert_eq!(st.beta, vec![1.0, 0.0]);
        let st = compute_stats(&four_point(), Reduction::Mean);
        assert_eq!(st.sigma, Matrix::from_rows(&[vec![0.5, 0.0], vec![0.0, 2.0]]).unwrap());
        assert_eq!(st.beta, vec![0.5, 3.0]);
        assert!((st.s - (0.25f64 + 9.0).sqrt()).abs() < 1e-15);
        assert_eq!(st.trace_sigma, 2.5);
        let sum = compute_stats(&four_point(), Reduction::Sum);
        assert_eq!(sum.beta, vec![2.0, 12.0]);
    }

    #[test]
    fn gaussian_dataset_covariance_near_identity() {
        let d = make_symmetric_gaussian(&mut SeededRng::new(0), 1000, 20, &Teacher::LinearPlusSine).unwrap();
        assert_eq!(d.len(), 2000);
        let st = compute_stats(&d, Reduction::Mean);
        let id = Matrix::identity(20);
        assert!(st.sigma.max_abs_diff(&id) < 0.15);
        assert!(check_symmetry(&d).is_ok());
    }

    #[test]
    fn linear_teacher_beta_is_sigma_w() {
        let w = vec![1.0, 0.0, 0.0];
        let d = make_symmetric_gaussian(&mut SeededRng::new(1), 50, 3, &Teacher::LinearFixed { w: w.clone() }).unwrap();
        let st = compute_stats(&d, Reduction::Mean);
        let sw = st.sigma.matvec(&w).unwrap();
        for (a, b) in st.beta.iter().zip(&sw) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn halfspace_examples() {
        let st = halfspace_stats(&four_point(), &[1.0, 0.1], Reduction::Mean).unwrap();
        assert_eq!(st.sigma, Matrix::from_rows(&[vec![0.5, 0.0], vec![0.0, 2.0]]).unwrap());
        assert_eq!(st.beta, vec![0.5, 3.0]);
        let one = Dataset::from_points(&[(vec![1.0, 0.0], 1.0)], "one").unwrap();
        let st = halfspace_stats(&one, &[1.0, 0.0], Reduction::Mean).unwrap();
        assert_eq!(st.sigma, Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap());
        assert_eq!(st.beta, vec![1.0, 0.0]);
        assert!(matches!(halfspace_stats(&four_point(), &[1.0, 0.0], Reduction::Mean), Err(DataError::Boundary(2))));
    }

    #[test]
    fn halfspace_matches_enumeration_on_asymmetric_set() {
        let pts = [(vec![1.0, 2.0], 0.5), (vec![-0.5, 1.0], -1.0), (vec![2.0, -3.0], 2.0)];
        let d = Dataset::from_points(&pts, "asym").unwrap();
        let r = [0.6, 0.8];
        let st = halfspace_stats(&d, &r, Reduction::Mean).unwrap();
        // Points 0 and 1 have rᵀx > 0, point 2 does not.
        let sel: Vec<&(Vec<f64>, f64)> = pts.iter().filter(|p| dot(&r, &p.0) > 0.0).collect();
        assert_eq!(sel.len(), 2);
        for a in 0..2 {
            let b_expect: f64 = sel.iter().map(|p| p.1 * p.0[a]).sum::<f64>() / 2.0;
            assert!((st.beta[a] - b_expect).abs() < 1e-15);
            for b in 0..2 {
                let s_expect: f64 = sel.iter().map(|p| p.0[a] * p.0[b]).sum::<f64>() / 2.0;
                assert!((st.sigma.get(a, b) - s_expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn symmetrize_and_check() {
        let one = Dataset::from_points(&[(vec![1.0, 2.0], 1.0)], "one").unwrap();
        let s = symmetrize(&one);
        assert_eq!(s.inputs, Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, -2.0]]).unwrap());
        assert_eq!(s.targets, vec![1.0, -1.0]);
        assert!(check_symmetry(&s).is_ok());
        let ss = symmetrize(&s);
        assert_eq!(ss.len(), 4);
        assert!(check_symmetry(&ss).is_ok());
    }

    #[test]
    fn symmetry_violations() {
        assert!(check_symmetry(&two_point()).is_ok());
        let bad = Dataset::from_points(&[(vec![1.0, 0.0], 1.0), (vec![-1.0, 0.0], 1.0)], "bad").unwrap();
        assert_eq!(check_symmetry(&bad), Err((0, SymmetryViolation::TargetNotOdd)));
        let asym = make_named(&Named::Asym6 { delta: 0.1 }).unwrap();
        assert_eq!(check_symmetry(&asym), Err((4, SymmetryViolation::UnpairedInput)));
        assert_eq!(asym.x(4), &[1.0, 0.1]);
        assert!(check_symmetry(&make_named(&Named::Asym6 { delta: 0.0 }).unwrap()).is_ok());
    }

    #[test]
    fn named_point_sets() {
        let o = make_named(&Named::Ortho2).unwrap();
        assert_eq!(o.targets, vec![1.0, -1.0]);
        assert_eq!(dot(o.x(0), o.x(1)), 0.0);
        assert_eq!(o.meta.reduction, Reduction::Sum);
        let x = make_named(&Named::Xor4).unwrap();
        assert_eq!(x.targets, vec![1.0, -1.0, 1.0, -1.0]);
        let h = make_named(&Named::OrthoHighD).unwrap();
        for i in 0..20 {
            for j in 0..i {
                assert_eq!(dot(h.x(i), h.x(j)), 0.0);
            }
        }
        assert!(matches!(Named::parse("spiral", None), Err(DataError::UnknownName(_))));
        assert!(make_named(&Named::Asym6 { delta: -1.0 }).is_err());
    }

    #[test]
    fn fan_is_odd_and_homogeneous() {
        let f = make_named(&Named::Fan { sectors_half: 3 }).unwrap();
        assert_eq!(f.len(), 120);
        assert!(check_symmetry(&f).is_ok());
        // Same angle on both rings carries the same label.
        for i in 0..60 {
            assert_eq!(f.targets[i], f.targets[i + 60]);
        }
        let pos = f.targets.iter().filter(|y| **y > 0.0).count();
        assert_eq!(pos, 60);
    }

    #[test]
    fn circle_and_labelflip_sizes() {
        let c = make_named(&Named::Circle).unwrap();
        assert_eq!(c.len(), 120);
        let l = make_named(&Named::Labelflip).unwrap();
        assert_eq!(l.len(), 40);
        assert!(check_symmetry(&l).is_ok());
        let a = make_named(&Named::ArcSeparable).unwrap();
        assert!(check_symmetry(&a).is_ok());
        // Separated by the (1, 1) direction; exactly the two flipped base points
        // and their mirrors disagree between the variants.
        assert!((0..a.len()).all(|i| a.targets[i] * (a.x(i)[0] + a.x(i)[1]) > 0.0));
        let differ = (0..40).filter(|&i| a.targets[i] != l.targets[i]).count();
        assert_eq!(differ, 4);
    }

    #[test]
    fn whitening_gives_identity_covariance() {
        let d = make_symmetric_gaussian(&mut SeededRng::new(8), 40, 4, &Teacher::LinearPlusSine).unwrap();
        let scaled = Dataset::new(
            Matrix::from_fn(d.len(), 4, |i, j| d.x(i)[j] * (j + 1) as f64 + if j == 0 { d.x(i)[1] } else { 0.0 }).unwrap(),
            d.targets.clone(),
            "skewed",
            d.meta.clone(),
        )
        .unwrap();
        let w = whiten(&scaled).unwrap();
        let st = compute_stats(&w, w.meta.reduction);
        assert!(st.sigma.max_abs_diff(&Matrix::identity(4)) < 1e-12);
        assert!(check_symmetry(&w).is_ok());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let d = make_symmetric_gaussian(&mut SeededRng::new(3), 5, 3, &Teacher::LinearPlusSine).unwrap();
        d.save_csv(&path).unwrap();
        let back = Dataset::load_csv(&path).unwrap();
        assert_eq!(back, d);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x0,x1,x2,y\n"));
    }
}
