//! Deterministic grid sweeps over a whitelisted set of configuration keys.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde_json::Value;

use crate::config::parse_config;
use crate::experiments;
use crate::output::{fmt_num, Cell, RunRecord};

/// Keys a grid may vary.
pub const SWEEP_KEYS: [&str; 10] = [
    "beta",
    "seed",
    "free.steps",
    "nudged.steps",
    "optim.inner.lr",
    "optim.nudged.lr",
    "optim.outer.lr",
    "meta_batch",
    "outer_steps",
    "solver_iterations",
];

/// Axes of a grid, in key order. Cells enumerate the cartesian product with
/// the last axis varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub axes: Vec<(String, Vec<Value>)>,
}

/// Parses a grid given as a JSON object of key → list of values.
pub fn parse_grid(text: &str) -> anyhow::Result<Grid> {
    let v: Value = serde_json::from_str(text).context("grid is not valid JSON")?;
    let Value::Object(obj) = v else {
        bail!("grid must be a JSON object of key → list of values");
    };
    let mut errs = Vec::new();
    let mut axes = Vec::new();
    for (k, vals) in obj {
        if !SWEEP_KEYS.contains(&k.as_str()) {
            errs.push(format!("key `{k}` cannot be swept (allowed: {})", SWEEP_KEYS.join(", ")));
            continue;
        }
        match vals {
            Value::Array(a) if !a.is_empty() => axes.push((k, a)),
            _ => errs.push(format!("`{k}` needs a non-empty list of values")),
        }
    }
    if axes.is_empty() && errs.is_empty() {
        errs.push("grid has no axes".into());
    }
    if !errs.is_empty() {
        bail!("invalid grid:\n  - {}", errs.join("\n  - "));
    }
    Ok(Grid { axes })
}

impl Grid {
    pub fn cells(&self) -> Vec<Vec<(String, Value)>> {
        let mut out: Vec<Vec<(String, Value)>> = vec![Vec::new()];
        for (k, vals) in &self.axes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    vals.iter().map(move |v| {
                        let mut c = prefix.clone();
                        c.push((k.clone(), v.clone()));
                        c
                    })
                })
                .collect();
        }
        out
    }
}

fn set_path(root: &mut Value, path: &str, v: Value) -> anyhow::Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for p in &parts[..parts.len() - 1] {
        let Value::Object(m) = cur else {
            bail!("`{path}`: parent is not an object");
        };
        cur = m.entry(p.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let Value::Object(m) = cur else {
        bail!("`{path}`: parent is not an object");
    };
    m.insert(parts[parts.len() - 1].to_string(), v);
    Ok(())
}

fn value_label(v: &Value) -> String {
    match v {
        Value::Number(n) if n.is_f64() => fmt_num(n.as_f64().unwrap_or(f64::NAN)),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Directory name of a cell, e.g. `beta=1.0000000000000000e-1_seed=3`.
pub fn cell_name(cell: &[(String, Value)]) -> String {
    cell.iter()
        .map(|(k, v)| format!("{k}={}", value_label(v)))
        .collect::<Vec<_>>()
        .join("_")
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub name: String,
    pub assignments: Vec<(String, Value)>,
    /// Set when the cell ran; a record may still carry a run error.
    pub record: Option<RunRecord>,
    /// Configuration or output failure that kept the cell from finishing.
    pub error: Option<String>,
}

impl CellOutcome {
    pub fn status(&self) -> &'static str {
        match (&self.error, self.record.as_ref().and_then(|r| r.error.as_ref())) {
            (None, None) => "ok",
            _ => "error",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub cells: Vec<CellOutcome>,
    pub aggregate_csv: String,
}

fn run_cell(base: &Value, cell: &[(String, Value)], dir: Option<&Path>) -> CellOutcome {
    let name = cell_name(cell);
    let mut out = CellOutcome {
        name: name.clone(),
        assignments: cell.to_vec(),
        record: None,
        error: None,
    };
    let mut v = base.clone();
    for (k, val) in cell {
        if let Err(e) = set_path(&mut v, k, val.clone()) {
            out.error = Some(e.to_string());
            return out;
        }
    }
    let text = serde_json::to_string_pretty(&v).expect("JSON value serializes");
    let cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            out.error = Some(e.0.join("; "));
            return out;
        }
    };
    let record = experiments::run(&text, &cfg);
    if let Some(d) = dir {
        if let Err(e) = record.write(&d.join(&name)) {
            out.error = Some(format!("writing outputs: {e}"));
        }
    }
    out.record = Some(record);
    out
}

/// Runs every cell of `grid` over the base configuration. Cells run
/// concurrently and write under `out/<cell name>/`; the aggregate table is
/// written last as `out/aggregate.csv`. A failing cell is recorded and the
/// sweep goes on.
pub fn sweep(base_text: &str, grid: &Grid, out: Option<&Path>) -> anyhow::Result<SweepResult> {
    let base: Value = serde_json::from_str(base_text).context("base configuration is not valid JSON")?;
    if !base.is_object() {
        bail!("base configuration must be a JSON object");
    }
    let cells = grid.cells();
    let mut seen = BTreeSet::new();
    for c in &cells {
        let name = cell_name(c);
        if !seen.insert(name.clone()) {
            bail!("cells overlap: `{name}` appears twice, so two cells would share an output directory");
        }
    }
    if let Some(dir) = out {
        for name in &seen {
            let d: PathBuf = dir.join(name);
            if d.exists() {
                bail!("output directory `{}` already exists; refusing to overwrite", d.display());
            }
        }
        if dir.join("aggregate.csv").exists() {
            bail!("`{}` already holds a sweep", dir.display());
        }
    }
    let outcomes: Vec<CellOutcome> = cells.par_iter().map(|c| run_cell(&base, c, out)).collect();
    let aggregate_csv = aggregate(grid, &outcomes)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("aggregate.csv"), &aggregate_csv)?;
    }
    Ok(SweepResult {
        cells: outcomes,
        aggregate_csv,
    })
}

fn aggregate(grid: &Grid, cells: &[CellOutcome]) -> anyhow::Result<String> {
    let mut summary_keys: Vec<String> = Vec::new();
    for c in cells {
        for (k, _) in c.record.iter().flat_map(|r| r.summary.iter()) {
            if !summary_keys.contains(k) {
                summary_keys.push(k.clone());
            }
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["cell".to_string()];
    header.extend(grid.axes.iter().map(|(k, _)| k.clone()));
    header.push("status".into());
    header.push("error".into());
    header.extend(summary_keys.iter().cloned());
    w.write_record(&header)?;
    for c in cells {
        let mut row = vec![c.name.clone()];
        row.extend(c.assignments.iter().map(|(_, v)| value_label(v)));
        row.push(c.status().into());
        let err = c
            .error
            .clone()
            .or_else(|| c.record.as_ref().and_then(|r| r.error.clone()))
            .unwrap_or_default();
        row.push(err);
        for k in &summary_keys {
            let v = c.record.as_ref().and_then(|r| r.summary_value(k));
            row.push(match v {
                Some(Cell::Num(x)) => fmt_num(*x),
                Some(Cell::Int(i)) => i.to_string(),
                Some(Cell::Text(s)) => s.clone(),
                None => String::new(),
            });
        }
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
