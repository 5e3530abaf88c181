//! Run-directory I/O. Every JSON artifact embeds the run id; the manifest,
//! written last, lists the sha256 of every other file.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use relulab::datasets::Dataset;
use relulab::dynamics::Trajectory;
use relulab::model::NetworkParams;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";
pub const VERDICT: &str = "verdict.json";
pub const CONFIG: &str = "config.json";
pub const REPORT: &str = "report.json";

#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
    pub run_id: String,
}

impl RunDir {
    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn prepare(&self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        Ok(p)
    }

    /// Writes `{"run_id": ..., ...value}`; `value` must be an object.
    pub fn write_json(&self, rel: &str, value: &Value) -> Result<()> {
        let mut obj = value.as_object().ok_or_else(|| anyhow!("{rel}: artifact must be a JSON object"))?.clone();
        obj.insert("run_id".into(), json!(self.run_id));
        let p = self.prepare(rel)?;
        fs::write(&p, serde_json::to_string_pretty(&Value::Object(obj))? + "\n").with_context(|| format!("writing {}", p.display()))
    }

    pub fn write_net(&self, rel: &str, net: &NetworkParams) -> Result<()> {
        self.write_json(rel, &json!({ "net": net }))
    }

    /// Dataset CSV plus its sibling metadata JSON (with run id).
    pub fn write_dataset(&self, rel: &str, data: &Dataset) -> Result<()> {
        let p = self.prepare(rel)?;
        data.save_csv(&p)?;
        let meta_rel = Path::new(rel).with_extension("json");
        let meta_path = self.path(meta_rel.to_str().expect("utf-8 path"));
        let meta: Value = serde_json::from_str(&fs::read_to_string(&meta_path)?)?;
        self.write_json(meta_rel.to_str().expect("utf-8 path"), &meta)
    }

    pub fn write_trajectory(&self, rel: &str, traj: &Trajectory, every: usize) -> Result<()> {
        let p = self.prepare(rel)?;
        traj.write_csv(&p, every)?;
        Ok(())
    }

    pub fn write_csv(&self, rel: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
        let p = self.prepare(rel)?;
        let mut out = std::io::BufWriter::new(fs::File::create(&p)?);
        writeln!(out, "{}", header.join(","))?;
        for r in rows {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_text(&self, rel: &str, text: &str) -> Result<()> {
        let p = self.prepare(rel)?;
        fs::write(p, text)?;
        Ok(())
    }
}

/// Reads a JSON artifact and returns it with the embedded run id checked.
pub fn read_json(dir: &Path, rel: &str, run_id: &str) -> Result<Value> {
    let p = dir.join(rel);
    let text = fs::read_to_string(&p).with_context(|| format!("missing artifact {rel}"))?;
    let v: Value = serde_json::from_str(&text).with_context(|| format!("{rel} is not JSON"))?;
    match v.get("run_id").and_then(Value::as_str) {
        Some(id) if id == run_id => Ok(v),
        Some(id) => bail!("{rel} belongs to run {id}, not {run_id}"),
        None => bail!("{rel} carries no run id"),
    }
}

pub fn read_field<T: DeserializeOwned>(dir: &Path, rel: &str, run_id: &str, field: &str) -> Result<T> {
    let v = read_json(dir, rel, run_id)?;
    let f = v.get(field).ok_or_else(|| anyhow!("{rel} has no field {field:?}"))?;
    serde_json::from_value(f.clone()).with_context(|| format!("{rel}: field {field:?}"))
}

pub fn read_net(dir: &Path, rel: &str, run_id: &str) -> Result<NetworkParams> {
    read_field(dir, rel, run_id, "net")
}

pub fn read_dataset(dir: &Path, rel: &str) -> Result<Dataset> {
    Dataset::load_csv(&dir.join(rel)).with_context(|| format!("reading dataset {rel}"))
}

/// Numeric CSV as named columns; empty cells become NaN.
#[derive(Clone, Debug)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(dir: &Path, rel: &str) -> Result<Table> {
        let text = fs::read_to_string(dir.join(rel)).with_context(|| format!("missing artifact {rel}"))?;
        let mut lines = text.lines();
        let header: Vec<String> = lines.next().ok_or_else(|| anyhow!("{rel} is empty"))?.split(',').map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let row: Vec<f64> = line
                .split(',')
                .map(|c| if c.is_empty() { Ok(f64::NAN) } else { c.parse::<f64>() })
                .collect::<Result<_, _>>()
                .with_context(|| format!("{rel} line {}", i + 2))?;
            if row.len() != header.len() {
                bail!("{rel} line {}: {} cells for {} columns", i + 2, row.len(), header.len());
            }
            rows.push(row);
        }
        Ok(Table { header, rows })
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name).ok_or_else(|| anyhow!("no column {name:?}"))?;
        Ok(self.rows.iter().map(|r| r[j]).collect())
    }

    /// Rows where `name` is present, as `(t, value)` pairs.
    pub fn series(&self, name: &str) -> Result<(Vec<f64>, Vec<f64>)> {
        let t = self.column("t")?;
        let v = self.column(name)?;
        Ok(t.into_iter().zip(v).filter(|(_, v)| !v.is_nan()).unzip())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub experiment: String,
    pub crate_version: String,
    pub seeds: BTreeMap<String, u64>,
    pub conventions: Value,
    pub tolerances: Value,
    pub runs: Vec<Value>,
    pub diverged: Vec<String>,
    pub files: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Relative paths of every file under `root` except the manifest and verdict.
pub fn list_files(root: &Path) -> Result<Vec<String>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
        for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
            let p = entry?.path();
            if p.is_dir() {
                walk(root, &p, out)?;
            } else {
                let rel = p.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
                if rel != MANIFEST && rel != VERDICT {
                    out.push(rel);
                }
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, root, &mut out)?;
    out.sort();
    Ok(out)
}

pub fn hash_tree(root: &Path) -> Result<BTreeMap<String, String>> {
    list_files(root)?.into_iter().map(|rel| Ok((rel.clone(), sha256_file(&root.join(&rel))?))).collect()
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(dir.join(MANIFEST)).context("missing manifest.json (run incomplete?)")?;
    serde_json::from_str(&text).context("manifest.json is malformed")
}

/// Integrity problems: changed, missing, or foreign files.
pub fn integrity_problems(dir: &Path, manifest: &Manifest) -> Result<Vec<String>> {
    let mut problems = Vec::new();
    let present = list_files(dir)?;
    for rel in &present {
        match manifest.files.get(rel) {
            None => problems.push(format!("{rel}: not part of run {}", manifest.run_id)),
            Some(h) if *h != sha256_file(&dir.join(rel))? => problems.push(format!("{rel}: content changed")),
            Some(_) => {}
        }
    }
    for rel in manifest.files.keys() {
        if !present.contains(rel) {
            problems.push(format!("{rel}: missing"));
        }
    }
    Ok(problems)
}
