use cml::bilevel::Variant;
use cml::numkit::Rng;
use cml::theory::{error_curve, CurveRow, CurveSpec, QuadModel, QuadSampler};

use super::Recorder;
use crate::config::{EstimatorKind, ExperimentConfig, QuadCfg};
use crate::output::{Cell, Table};

pub fn instance(seed: u64, q: &QuadCfg) -> cml::Result<QuadModel> {
    let sampler = QuadSampler {
        dim: q.dim,
        lambda: q.lambda,
        sigma_omega: q.sigma_omega,
        sigma_task: q.sigma_task,
        sigma_noise: q.sigma_noise,
    };
    sampler.sample(&mut Rng::derive(seed, "quad-instance", 0))
}

pub fn spec(cfg: &ExperimentConfig, q: &QuadCfg) -> CurveSpec {
    CurveSpec {
        betas: q.betas.values(),
        budgets: q.budgets.clone(),
        variant: if cfg.estimator == EstimatorKind::Symmetric {
            Variant::Symmetric
        } else {
            Variant::Forward
        },
    }
}

fn steps_cell(s: Option<usize>) -> Cell {
    s.map_or(Cell::Text("exact".into()), |k| Cell::Int(k as i64))
}

/// The `error_curve` table, one row per `(budget, β)` cell.
pub fn curve_table(rows: &[CurveRow]) -> Table {
    let mut t = Table::new(
        "error_curve",
        &["steps", "beta", "error", "free_grad_norm", "nudged_grad_norm", "delta", "delta_nudged"],
    );
    for r in rows {
        t.rows.push(vec![
            steps_cell(r.steps),
            Cell::Num(r.beta),
            Cell::Num(r.error),
            Cell::Num(r.free_grad_norm),
            Cell::Num(r.nudged_grad_norm),
            Cell::Num(r.delta),
            Cell::Num(r.delta_nudged),
        ]);
    }
    t
}

pub fn run(cfg: &ExperimentConfig, rec: &mut Recorder) -> cml::Result<()> {
    let q = cfg.quad.clone().unwrap_or_else(|| {
        ExperimentConfig::defaults(crate::config::ExperimentKind::QuadVerify)
            .quad
            .expect("quad defaults")
    });
    let m = instance(cfg.seed, &q)?;
    let spec = spec(cfg, &q);
    let rows = error_curve(&m, &spec)?;
    let n_beta = spec.betas.len();
    let mut argmins = Table::new("argmin", &["steps", "beta", "error", "interior"]);
    for chunk in rows.chunks(n_beta) {
        let (i, best) = chunk
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.error.total_cmp(&b.1.error))
            .expect("non-empty grid");
        let interior = i > 0 && i + 1 < n_beta;
        rec.metric(vec![
            ("steps".into(), steps_cell(best.steps)),
            ("argmin_beta".into(), Cell::Num(best.beta)),
            ("min_error".into(), Cell::Num(best.error)),
            ("interior".into(), Cell::Int(interior as i64)),
        ]);
        argmins.rows.push(vec![
            steps_cell(best.steps),
            Cell::Num(best.beta),
            Cell::Num(best.error),
            Cell::Int(interior as i64),
        ]);
    }
    rec.summary("cells", rows.len());
    rec.summary("betas", n_beta);
    rec.table(curve_table(&rows));
    rec.table(argmins);
    Ok(())
}
