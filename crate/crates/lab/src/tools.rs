//! One-shot commands: dataset statistics and closed-form evaluation.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use relulab::datasets::{check_symmetry, compute_stats, Dataset, Reduction};
use relulab::theory::{closed_form_w, ols_solution, ClosedFormSpec};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::experiments::closed_form::CHECK_RANGE;

/// Σ, β, s, TrΣ and the OLS map of a dataset CSV, plus its symmetry status.
pub fn stats(path: &Path, reduction: Option<Reduction>) -> Result<Value> {
    let data = Dataset::load_csv(path).with_context(|| format!("loading {}", path.display()))?;
    let reduction = reduction.unwrap_or(data.meta.reduction);
    let st = compute_stats(&data, reduction);
    let symmetry = match check_symmetry(&data) {
        Ok(()) => json!("symmetric"),
        Err((i, v)) => json!({ "violation_at": i, "kind": format!("{v:?}") }),
    };
    let ols = ols_solution(&st).map(|w| json!(w)).unwrap_or_else(|e| json!(e.to_string()));
    Ok(json!({
        "name": data.name,
        "points": data.len(),
        "dim": data.dim(),
        "reduction": reduction,
        "symmetry": symmetry,
        "stats": st,
        "ols": ols,
    }))
}

/// `{"spec": ClosedFormSpec, "times": [..]}`; without times, 21 log-spaced
/// points spanning the rescaled range [0.1/s, 10/s]. Extra fields are ignored,
/// so a run's `spec.json` works as input.
#[derive(Deserialize)]
struct Request {
    spec: ClosedFormSpec,
    #[serde(default)]
    times: Option<Vec<f64>>,
}

pub fn closed_form(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let req: Request = serde_json::from_str(&text).context("expected {\"spec\": {...}, \"times\": [...]}")?;
    let spec = req.spec;
    let times = req.times.unwrap_or_else(|| {
        let (lo, hi) = (CHECK_RANGE.0 / spec.s, CHECK_RANGE.1 / spec.s);
        let per_t = spec.rescaled_time(1.0);
        (0..21).map(|i| lo * (hi / lo).powf(i as f64 / 20.0) / per_t).collect()
    });
    let rows = times
        .iter()
        .map(|t| Ok(json!({ "t": t, "rescaled_t": spec.rescaled_time(*t), "w": closed_form_w(&spec, *t)? })))
        .collect::<Result<Vec<Value>>>()?;
    Ok(json!({ "spec": spec, "values": rows }))
}
