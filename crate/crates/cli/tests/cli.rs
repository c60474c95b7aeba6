use cml::theory::error_curve;
use cml_cli::config::{parse_config, ExperimentConfig, ExperimentKind, LogGrid};
use cml_cli::experiments::{self, curve_table};
use cml_cli::output::Cell;
use cml_cli::run_text;
use cml_cli::sweep::{parse_grid, sweep};

fn small_quad() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::QuadVerify);
    let q = cfg.quad.as_mut().unwrap();
    q.dim = 8;
    q.betas = LogGrid {
        lo: 1e-3,
        hi: 1.0,
        per_decade: 2,
    };
    q.budgets = vec![Some(5), Some(20), None];
    cfg
}

#[test]
fn quad_table_matches_the_error_curve() {
    let cfg = small_quad();
    let record = experiments::run(&cfg.to_json(), &cfg);
    assert!(record.error.is_none());
    let q = cfg.quad.as_ref().unwrap();
    let m = cml::theory::QuadSampler {
        dim: q.dim,
        lambda: q.lambda,
        sigma_omega: q.sigma_omega,
        sigma_task: q.sigma_task,
        sigma_noise: q.sigma_noise,
    }
    .sample(&mut cml::numkit::Rng::derive(cfg.seed, "quad-instance", 0))
    .unwrap();
    let spec = cml::theory::CurveSpec {
        betas: q.betas.values(),
        budgets: q.budgets.clone(),
        variant: cml::bilevel::Variant::Forward,
    };
    let rows = error_curve(&m, &spec).unwrap();
    let emitted = record.table("error_curve").unwrap();
    assert_eq!(emitted.to_tsv(), curve_table(&rows).to_tsv());
    assert_eq!(emitted.rows.len(), spec.betas.len() * spec.budgets.len());
}

#[test]
fn runs_are_deterministic_and_echo_the_input() {
    let text = format!("{}\n\n", small_quad().to_json().replace(": ", ":"));
    let (_, a) = run_text(&text, None).unwrap();
    let (_, b) = run_text(&text, None).unwrap();
    assert_eq!(a.config_echo, text);
    assert_eq!(a.metrics_jsonl(), b.metrics_jsonl());
    assert_eq!(a.summary_json(), b.summary_json());
}

#[test]
fn seed_override_changes_the_instance() {
    let text = small_quad().to_json();
    let (cfg, a) = run_text(&text, Some(7)).unwrap();
    let (_, b) = run_text(&text, None).unwrap();
    assert_eq!(cfg.seed, 7);
    assert_eq!(a.config_echo, text);
    assert_ne!(a.metrics_jsonl(), b.metrics_jsonl());
}

#[test]
fn invalid_configs_report_every_problem() {
    let mut v: serde_json::Value = serde_json::from_str(&small_quad().to_json()).unwrap();
    v["beta"] = (-0.5).into();
    v["bogus"] = 1.into();
    let errs = parse_config(&v.to_string()).unwrap_err().0;
    assert!(errs.len() >= 2, "{errs:?}");
    assert!(errs.iter().any(|e| e.contains("positive")), "{errs:?}");
    assert!(errs.iter().any(|e| e.contains("bogus")), "{errs:?}");
}

#[test]
fn written_outputs_round_trip() {
    let cfg = small_quad();
    let dir = tempfile::tempdir().unwrap();
    let record = experiments::run(&cfg.to_json(), &cfg);
    record.write(dir.path()).unwrap();
    let echo = std::fs::read_to_string(dir.path().join("config.json")).unwrap();
    assert_eq!(echo, cfg.to_json());
    let tsv = std::fs::read_to_string(dir.path().join("error_curve.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 1 + 3 * 7);
    for line in std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap().lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
}

#[test]
fn one_cell_sweep_equals_a_run() {
    let cfg = small_quad();
    let text = cfg.to_json();
    let grid = parse_grid(r#"{"seed": [0]}"#).unwrap();
    let res = sweep(&text, &grid, None).unwrap();
    let run = experiments::run(&text, &cfg);
    let cell = res.cells[0].record.as_ref().unwrap();
    assert_eq!(cell.metrics_jsonl(), run.metrics_jsonl());
    assert_eq!(cell.summary_json(), run.summary_json());
}

#[test]
fn beta_sweep_follows_the_theory() {
    let mut cfg = small_quad();
    cfg.quad.as_mut().unwrap().budgets = vec![None];
    let grid = parse_grid(r#"{"beta": [0.01, 0.1, 1.0]}"#).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let res = sweep(&cfg.to_json(), &grid, Some(dir.path())).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
    assert_eq!(csv, res.aggregate_csv);
    assert_eq!(csv.lines().count(), 4);
    assert!(res.cells.iter().all(|c| c.status() == "ok"));
    for c in &res.cells {
        assert!(dir.path().join(&c.name).join("summary.json").exists());
    }
    // with exact phases the error grows with the nudging strength
    let q = cfg.quad.as_ref().unwrap();
    let m = cml::theory::QuadSampler {
        dim: q.dim,
        lambda: q.lambda,
        sigma_omega: q.sigma_omega,
        sigma_task: q.sigma_task,
        sigma_noise: q.sigma_noise,
    }
    .sample(&mut cml::numkit::Rng::derive(cfg.seed, "quad-instance", 0))
    .unwrap();
    let errors: Vec<f64> = [0.01, 0.1, 1.0]
        .iter()
        .map(|&b| {
            let e = cml::theory::quad_contrastive_exact(&m, b).unwrap().error;
            cml::numkit::norm(&e) / cml::numkit::norm(&cml::theory::quad_meta_gradient(&m))
        })
        .collect();
    assert!(errors.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn overlapping_cells_are_rejected() {
    let text = small_quad().to_json();
    let grid = parse_grid(r#"{"seed": [1, 1]}"#).unwrap();
    assert!(sweep(&text, &grid, None).is_err());
    let dir = tempfile::tempdir().unwrap();
    let grid = parse_grid(r#"{"seed": [1]}"#).unwrap();
    sweep(&text, &grid, Some(dir.path())).unwrap();
    assert!(sweep(&text, &grid, Some(dir.path())).is_err());
}

#[test]
fn unknown_sweep_keys_are_rejected() {
    let e = parse_grid(r#"{"quad.dim": [1, 2]}"#).unwrap_err().to_string();
    assert!(e.contains("cannot be swept"), "{e}");
}

#[test]
fn bandit_summary_matches_its_trace() {
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::WheelBandit);
    cfg.outer_steps = 2;
    cfg.meta_batch = 1;
    let b = cfg.bandit.as_mut().unwrap();
    b.horizon = 200;
    b.delta = 0.5;
    b.trace_stride = 50;
    let record = experiments::run(&cfg.to_json(), &cfg);
    assert!(record.error.is_none(), "{:?}", record.error);
    let trace = record.table("regret_trace").unwrap();
    let last = trace.column("normalized_regret").unwrap().last().and_then(Cell::as_f64).unwrap();
    let summary = record.summary_value("normalized_regret").and_then(Cell::as_f64).unwrap();
    assert_eq!(last.to_bits(), summary.to_bits());
    assert_eq!(trace.rows.len(), 4);
}
