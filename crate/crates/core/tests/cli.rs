use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use nuens::data::CorruptionKind;
use nuens::experiment::{
    cmd_prepare, cmd_report, cmd_search, cmd_sweep_k, cmd_sweep_ood, cmd_sweep_trainsize, cmd_train, from_csv,
    load_prepared, load_record, DataSource, Experiment, ExperimentConfig, KRow, OodRow, SelectionMetric, SplitSizes,
    SummaryRow, TrainSizeRow, TrialRow,
};
use nuens::metrics::evaluate;
use nuens::optim::OptConfig;
use nuens::training::{predict, EnsembleModel, Method};
use nuens::Error;

/// A config small enough to train every command in a few seconds.
fn small_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.data = DataSource::Synthetic {
        num_classes: 4,
        per_class: 150,
        dim: 8,
        spread: 0.9,
    };
    cfg.split = SplitSizes {
        train: 100,
        val: 100,
        unlabeled: 150,
        test: 200,
    };
    cfg.model.members = 3;
    cfg.model.hidden_dims = vec![16];
    cfg.model.beta = 0.2;
    cfg.model.unlabeled_batch_size = 25;
    cfg.model.opt = OptConfig {
        learning_rate: 3e-3,
        weight_decay: 0.01,
        epochs: 4,
        batch_size: 25,
        ..OptConfig::default()
    };
    cfg.sweep.train_sizes = vec![25, 50, 75, 100];
    cfg.sweep.k_values = vec![1, 2, 4];
    cfg.search.trials = 4;
    cfg.search.epochs = vec![2, 4];
    cfg.search.beta = vec![0.1, 0.5];
    cfg.search.weight_decay = vec![0.0, 0.01];
    cfg.search.selection = SelectionMetric::ValEce;
    cfg.output_dir = out.to_path_buf();
    cfg.seed = 5;
    cfg
}

fn exp(cfg: ExperimentConfig) -> Experiment {
    Experiment::new(cfg, 1).unwrap()
}

/// Every non-metadata file under `root`, keyed by relative path.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else if !path.to_string_lossy().ends_with(".meta.json") {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn prepare_writes_exact_split_sizes_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.data = DataSource::Synthetic {
        num_classes: 4,
        per_class: 4250,
        dim: 20,
        spread: 0.9,
    };
    cfg.split = SplitSizes {
        train: 1000,
        val: 1000,
        unlabeled: 5000,
        test: 10000,
    };
    let e = exp(cfg);
    cmd_prepare(&e).unwrap();
    let p = load_prepared(&e).unwrap();
    assert_eq!(
        (
            p.train.len(),
            p.val.len(),
            p.unlabeled.len(),
            p.test.len(),
            p.assignment.len()
        ),
        (1000, 1000, 5000, 10000, 5000)
    );
    let first = snapshot(dir.path());
    cmd_prepare(&e).unwrap();
    assert_eq!(first, snapshot(dir.path()));
}

#[test]
fn oversized_split_fails_before_writing_anything() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut cfg = small_config(&out);
    cfg.split.test = 10_000;
    let err = cmd_prepare(&exp(cfg)).unwrap_err();
    assert!(matches!(err, Error::Size(_)), "{err}");
    assert!(!out.exists());
}

#[test]
fn train_without_prepare_names_the_missing_step() {
    let dir = tempfile::tempdir().unwrap();
    let err = cmd_train(&exp(small_config(dir.path())), Method::Nu).unwrap_err();
    assert!(err.to_string().contains("nuens prepare"), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn beta_zero_nu_run_reports_standard_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.model.beta = 0.0;
    let e = exp(cfg);
    cmd_prepare(&e).unwrap();
    let std = cmd_train(&e, Method::Standard).unwrap();
    let nu = cmd_train(&e, Method::Nu).unwrap();
    assert_eq!(std.metrics, nu.metrics);
    assert_eq!(std.bound, nu.bound);
}

#[test]
fn record_reloads_and_metrics_recompute_from_saved_model() {
    let dir = tempfile::tempdir().unwrap();
    let e = exp(small_config(dir.path()));
    cmd_prepare(&e).unwrap();
    let record = cmd_train(&e, Method::Nu).unwrap();
    let reloaded = load_record(dir.path().join("runs/nu/record.json")).unwrap();
    assert_eq!(record, reloaded);
    assert!(record.jensen_test.holds);
    assert!((record.bound.rhs - record.bound.recompute_rhs()).abs() < 1e-12);
    assert_eq!(record.random_label_fit.as_ref().map(Vec::len), Some(3));

    let model = EnsembleModel::load(dir.path().join(&record.artifacts["model"])).unwrap();
    let test = load_prepared(&e).unwrap().test;
    let again = evaluate(&predict(&model, &test).unwrap(), &e.config.metrics).unwrap();
    let stored = record.test();
    for (a, b) in [
        (again.accuracy, stored.accuracy),
        (again.ece, stored.ece),
        (again.tace, stored.tace),
        (again.nll, stored.nll),
        (again.brier_rel, stored.brier_rel),
        (again.mi.unwrap(), stored.mi.unwrap()),
    ] {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn search_table_has_one_row_per_trial_and_one_forced_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let e = exp(small_config(dir.path()));
    cmd_prepare(&e).unwrap();
    let outcome = cmd_search(&e).unwrap();
    assert_eq!(outcome.trials.len(), 4);
    let forced: Vec<&TrialRow> = outcome.trials.iter().filter(|t| t.forced).collect();
    assert_eq!(forced.len(), 1);
    assert_eq!(forced[0].beta, 0.0);

    let table: Vec<TrialRow> =
        from_csv(&std::fs::read_to_string(dir.path().join("search/trials.csv")).unwrap()).unwrap();
    assert_eq!(table, outcome.trials);
    let best = &table[outcome.best_trial];
    assert!(table.iter().all(|t| best.val_ece <= t.val_ece));
    assert_eq!(outcome.best.test().ece, best.test_ece);

    let mut none = small_config(dir.path());
    none.search.trials = 0;
    assert!(matches!(Experiment::new(none, 1), Err(Error::Config(_))));
}

#[test]
fn sweeps_have_expected_shape_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.sweep.corruptions = CorruptionKind::ALL.to_vec();
    cfg.sweep.severities = vec![1, 2, 3, 4, 5];
    let e = exp(cfg);
    cmd_prepare(&e).unwrap();

    let sizes = cmd_sweep_trainsize(&e).unwrap();
    assert_eq!(sizes.len(), 8);
    let text = std::fs::read_to_string(dir.path().join("sweeps/trainsize.csv")).unwrap();
    assert!(text.starts_with("train_size,method,accuracy,ece,mi\n"));
    assert_eq!(from_csv::<TrainSizeRow>(&text).unwrap(), sizes);

    let ks = cmd_sweep_k(&e).unwrap();
    assert_eq!(ks.len(), 6);
    let k_col: Vec<usize> = ks.iter().filter(|r| r.method == Method::Nu).map(|r| r.k).collect();
    assert_eq!(k_col, vec![1, 2, 4]);
    for r in &ks {
        assert!((r.expected_variance - (r.k as f64 - 1.0) / (8.0 * r.k as f64)).abs() < 1e-15);
        assert_eq!(r.mi.is_none(), r.k == 1);
    }
    let text = std::fs::read_to_string(dir.path().join("sweeps/k.csv")).unwrap();
    assert_eq!(from_csv::<KRow>(&text).unwrap(), ks);

    cmd_train(&e, Method::Standard).unwrap();
    cmd_train(&e, Method::Nu).unwrap();
    let ood = cmd_sweep_ood(&e).unwrap();
    assert_eq!(ood.len(), 50);
    assert_eq!(ood.iter().filter(|r| r.corruption == "average").count(), 10);
    let text = std::fs::read_to_string(dir.path().join("sweeps/ood.csv")).unwrap();
    assert_eq!(from_csv::<OodRow>(&text).unwrap(), ood);
    for sev in 1..=5u8 {
        for method in [Method::Standard, Method::Nu] {
            let kinds: Vec<&OodRow> = ood
                .iter()
                .filter(|r| r.severity == sev && r.method == method && r.corruption != "average")
                .collect();
            let avg = ood
                .iter()
                .find(|r| r.severity == sev && r.method == method && r.corruption == "average")
                .unwrap();
            let mean = kinds.iter().map(|r| r.ece).sum::<f64>() / kinds.len() as f64;
            assert!((avg.ece - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn k_above_class_count_is_rejected_up_front() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.sweep.k_values = vec![2, 5];
    let e = exp(cfg);
    cmd_prepare(&e).unwrap();
    let err = cmd_sweep_k(&e).unwrap_err();
    assert!(matches!(err, Error::Constraint(_)), "{err}");
    assert!(!dir.path().join("sweeps/k.csv").exists());
}

#[test]
fn report_matches_records_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let e = exp(small_config(dir.path()));
    cmd_prepare(&e).unwrap();
    let records = [
        cmd_train(&e, Method::Nu).unwrap(),
        cmd_train(&e, Method::Standard).unwrap(),
    ];
    let report = cmd_report(dir.path()).unwrap();
    assert_eq!(report.rows.len(), 2);
    let csv: Vec<SummaryRow> =
        from_csv(&std::fs::read_to_string(dir.path().join("report/summary.csv")).unwrap()).unwrap();
    assert_eq!(csv, report.rows);
    for row in &report.rows {
        let r = records.iter().find(|r| r.method == row.method).unwrap().test();
        assert_eq!(
            (row.accuracy, row.ece, row.tace, row.brier_rel, row.nll, row.mi),
            (r.accuracy, r.ece, r.tace, r.brier_rel, r.nll, r.mi)
        );
    }
    assert!(dir.path().join("report/reliability_nu.csv").is_file());
}

#[test]
fn every_command_is_byte_reproducible() {
    let root = tempfile::tempdir().unwrap();
    let run = |out: &Path| {
        let e = exp(small_config(out));
        cmd_prepare(&e).unwrap();
        cmd_train(&e, Method::Standard).unwrap();
        cmd_train(&e, Method::Nu).unwrap();
        cmd_search(&e).unwrap();
        cmd_sweep_trainsize(&e).unwrap();
        cmd_sweep_k(&e).unwrap();
        cmd_sweep_ood(&e).unwrap();
        cmd_report(out).unwrap();
        snapshot(out)
    };
    let a = run(&root.path().join("a"));
    let b = run(&root.path().join("b"));
    assert!(a.len() > 20);
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (path, bytes) in &a {
        assert!(bytes == &b[path], "{} differs", path.display());
    }
}

#[test]
fn config_hash_tracks_semantic_fields_only() {
    let base = small_config(Path::new("x"));
    let moved = small_config(Path::new("y"));
    assert_eq!(base.hash(), moved.hash());
    let mut seeded = base.clone();
    seeded.seed += 1;
    let mut beta = base.clone();
    beta.model.beta = 0.3;
    let mut bins = base.clone();
    bins.metrics.bins = 10;
    for other in [seeded, beta, bins] {
        assert_ne!(base.hash(), other.hash());
    }
}

fn nuens() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nuens"))
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let status = nuens()
        .args(["report"])
        .arg(dir.path().join("nowhere"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));

    let status = nuens()
        .arg("--config")
        .arg(dir.path().join("missing.json"))
        .arg("prepare")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    let mut cfg = small_config(&dir.path().join("out"));
    cfg.sweep.k_values = vec![5];
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let prepare = nuens().arg("--config").arg(&path).arg("prepare").output().unwrap();
    assert!(prepare.status.success(), "{}", String::from_utf8_lossy(&prepare.stderr));
    let status = nuens().arg("--config").arg(&path).arg("sweep-k").status().unwrap();
    assert_eq!(status.code(), Some(4));

    let out = nuens()
        .arg("--config")
        .arg(&path)
        .args(["--seed", "9", "--jobs", "2", "--out"])
        .arg(dir.path().join("flags"))
        .arg("prepare")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("flags/prepared/manifest.json").is_file());
}
