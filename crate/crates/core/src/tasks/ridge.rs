use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Mat, Rng};
use crate::synapse::RegressionData;

/// Synthetic tabular regression:
/// `y = w·x + 0.5·sin(2x₀) + ε`, `x ~ N(0, I)`, `w ~ N(0, 1/d)`, `ε ~ N(0, noise²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub rows: usize,
    pub features: usize,
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            rows: 100,
            features: 13,
            noise: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RidgeSource {
    Synthetic(SyntheticSpec),
    /// Comma-separated numeric rows, last column the target.
    Csv { text: String, header: bool },
}

/// Tabular regression split 70/30 into learn and eval rows.
///
/// Features and targets are standardized with learn-split statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeTask {
    pub features: Mat,
    pub targets: Vec<f64>,
    pub learn_idx: Vec<usize>,
    pub eval_idx: Vec<usize>,
}

impl RidgeTask {
    pub const LEARN_FRACTION: f64 = 0.7;

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn regression_data(&self) -> RegressionData {
        let pick = |idx: &[usize]| {
            let rows: Vec<Vec<f64>> = idx.iter().map(|&i| self.features.row(i).to_vec()).collect();
            let x = Mat::from_rows(&rows).expect("uniform rows");
            let y = Mat::from_vec(idx.len(), 1, idx.iter().map(|&i| self.targets[i]).collect()).expect("column");
            (x, y)
        };
        let (learn_x, learn_y) = pick(&self.learn_idx);
        let (eval_x, eval_y) = pick(&self.eval_idx);
        RegressionData {
            learn_x,
            learn_y,
            eval_x,
            eval_y,
        }
    }
}

/// Parses numeric CSV rows into features and targets (last column).
///
/// Accepts LF or CRLF line endings; blank lines are skipped.
pub fn parse_csv(text: &str, header: bool) -> Result<(Mat, Vec<f64>)> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if header && i == 0 {
            continue;
        }
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (c, field) in line.split(',').enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("column {}: `{}` is not a number", c + 1, field.trim()),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("column {}: non-finite value", c + 1),
                });
            }
            row.push(v);
        }
        match width {
            None if row.len() < 2 => {
                return Err(Error::Parse {
                    line: line_no,
                    message: "need at least one feature and a target".into(),
                })
            }
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {w} columns, found {}", row.len()),
                })
            }
            Some(_) => {}
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "no data rows".into(),
        });
    }
    let targets = rows.iter_mut().map(|r| r.pop().expect("width ≥ 2")).collect();
    Ok((Mat::from_rows(&rows)?, targets))
}

/// Writes features and targets as CSV that [`parse_csv`] reads back exactly.
pub fn write_csv(features: &Mat, targets: &[f64]) -> String {
    let mut out = String::new();
    for (r, t) in targets.iter().enumerate() {
        for v in features.row(r) {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{t}\n"));
    }
    out
}

fn synthetic(spec: &SyntheticSpec, rng: &mut Rng) -> Result<(Mat, Vec<f64>)> {
    if spec.rows < 2 || spec.features == 0 {
        return Err(Error::Domain("synthetic set needs ≥ 2 rows and ≥ 1 feature".into()));
    }
    let d = spec.features;
    let w = rng.normal_vec(d, 0.0, (1.0 / d as f64).sqrt());
    let x = rng.normal_vec(spec.rows * d, 0.0, 1.0);
    let features = Mat::from_vec(spec.rows, d, x)?;
    let targets = (0..spec.rows)
        .map(|r| {
            let row = features.row(r);
            let lin: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
            lin + 0.5 * (2.0 * row[0]).sin() + rng.normal(0.0, spec.noise)
        })
        .collect();
    Ok((features, targets))
}

fn standardize_columns(values: &mut [f64], stride: usize, cols: usize, learn: &[usize]) {
    for c in 0..cols {
        let n = learn.len() as f64;
        let mean = learn.iter().map(|&r| values[r * stride + c]).sum::<f64>() / n;
        let var = learn.iter().map(|&r| (values[r * stride + c] - mean).powi(2)).sum::<f64>() / n;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        let rows = values.len() / stride;
        for r in 0..rows {
            values[r * stride + c] = (values[r * stride + c] - mean) / sd;
        }
    }
}

/// Builds a standardized task with a seeded 70/30 split.
pub fn ridge_build(source: &RidgeSource, rng: &mut Rng) -> Result<RidgeTask> {
    let (features, mut targets) = match source {
        RidgeSource::Synthetic(spec) => synthetic(spec, rng)?,
        RidgeSource::Csv { text, header } => parse_csv(text, *header)?,
    };
    let n = targets.len();
    if n < 2 {
        return Err(Error::Domain("need at least two rows to split".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.below(i + 1));
    }
    let n_learn = ((n as f64) * RidgeTask::LEARN_FRACTION).round().clamp(1.0, (n - 1) as f64) as usize;
    let mut learn_idx = order[..n_learn].to_vec();
    let mut eval_idx = order[n_learn..].to_vec();
    learn_idx.sort_unstable();
    eval_idx.sort_unstable();
    let cols = features.cols();
    let mut x = features.into_vec();
    standardize_columns(&mut x, cols, cols, &learn_idx);
    standardize_columns(&mut targets, 1, 1, &learn_idx);
    Ok(RidgeTask {
        features: Mat::from_vec(n, cols, x)?,
        targets,
        learn_idx,
        eval_idx,
    })
}
