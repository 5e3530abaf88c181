use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "bound", rename_all = "snake_case")]
pub enum Bound {
    Below(f64),
    AtMost(f64),
    AtLeast(f64),
    Above(f64),
    /// Inclusive on both ends.
    Within(f64, f64),
}

impl Bound {
    pub fn holds(self, v: f64) -> bool {
        match self {
            Bound::Below(b) => v < b,
            Bound::AtMost(b) => v <= b,
            Bound::AtLeast(b) => v >= b,
            Bound::Above(b) => v > b,
            Bound::Within(lo, hi) => lo <= v && v <= hi,
        }
    }

    fn describe(self) -> String {
        match self {
            Bound::Below(b) => format!("< {b:e}"),
            Bound::AtMost(b) => format!("<= {b:e}"),
            Bound::AtLeast(b) => format!(">= {b}"),
            Bound::Above(b) => format!("> {b}"),
            Bound::Within(lo, hi) => format!("in [{lo}, {hi}]"),
        }
    }
}

/// A named check on a measured value. NaN never passes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub name: String,
    pub value: f64,
    pub bound: Bound,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Predicate {
    pub fn new(name: impl Into<String>, value: f64, bound: Bound) -> Predicate {
        Predicate { name: name.into(), pass: bound.holds(value), value, bound, note: None }
    }

    /// A check that could not be computed; always fails.
    pub fn broken(name: impl Into<String>, why: &str) -> Predicate {
        Predicate { name: name.into(), value: f64::NAN, bound: Bound::AtLeast(f64::INFINITY), pass: false, note: Some(why.to_string()) }
    }

    pub fn line(&self) -> String {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        match &self.note {
            Some(n) if self.value.is_nan() => format!("{verdict} {}: {n}", self.name),
            Some(n) => format!("{verdict} {}: {:.6e} {} ({n})", self.name, self.value, self.bound.describe()),
            None => format!("{verdict} {}: {:.6e} {}", self.name, self.value, self.bound.describe()),
        }
    }
}
