//! Experiment harness behind the `nuens` command-line tool: configuration,
//! split preparation, training runs, hyperparameter search, sweeps over
//! train size, ensemble size and corruption severity, and reporting.
//!
//! Every result file is a deterministic function of the config; wall-clock
//! timings are written to separate `*.meta.json` files.

mod config;
mod record;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    BoundSpec, DataSource, ExperimentConfig, ModelSpec, SearchSpec, SelectionMetric, SplitSizes, SweepSpec,
};
pub use record::{
    from_csv, meta_path, to_csv, KRow, Layout, OodRow, RunMeta, RunRecord, SummaryRow, TrainSizeRow, TrialRow,
    RECORD_SCHEMA_VERSION,
};

use crate::data::{
    corrupt, load_dataset, load_held_out, load_unlabeled, save_dataset, save_held_out, save_unlabeled, split,
    CorruptionSpec, Dataset, HeldOutLabels, Splits, UnlabeledSet,
};
use crate::error::{Error, Result};
use crate::io_util::{read_json, write_atomic, write_json};
use crate::labeling::{draw_assignment, LabelAssignment};
use crate::metrics::{ensemble_mean, evaluate, reliability_bins, reliability_csv};
use crate::theory::{assemble_bound, expected_variance, jensen_check};
use crate::training::{
    predict, predict_features, random_label_fit, train_nu_with, train_standard_with, EnsembleConfig, EnsembleModel,
    Execution, Method,
};
use config::stream;

const PREPARED_SCHEMA_VERSION: u32 = 1;

/// A validated config bound to an output directory and a worker pool.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub layout: Layout,
    hash: String,
    pool: rayon::ThreadPool,
    jobs: usize,
}

impl Experiment {
    /// `jobs` bounds the worker pool used for sweep points, search trials
    /// and ensemble members; 0 means one worker per core.
    pub fn new(config: ExperimentConfig, jobs: usize) -> Result<Self> {
        config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
        let jobs = pool.current_num_threads();
        Ok(Experiment {
            layout: Layout::new(&config.output_dir),
            hash: config.hash(),
            config,
            pool,
            jobs,
        })
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    fn execution(&self) -> Execution {
        if self.jobs > 1 {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PreparedManifest {
    schema_version: u32,
    data_hash: String,
    num_classes: usize,
    dim: usize,
    train: usize,
    val: usize,
    unlabeled: usize,
    test: usize,
    members: usize,
    assignment_seed: u64,
}

/// Standardised splits plus the random labels, as loaded from disk.
pub struct Prepared {
    pub train: Dataset,
    pub val: Dataset,
    pub unlabeled: UnlabeledSet,
    pub unlabeled_truth: HeldOutLabels,
    pub test: Dataset,
    pub assignment: LabelAssignment,
}

/// Splits the configured data at `train_size`, standardised on the train split.
fn fresh_splits(exp: &Experiment, data: &Dataset, train_size: usize) -> Result<Splits> {
    split(data, &exp.config.split_spec(train_size))?.standardized()
}

fn check_k(k: usize, num_classes: usize) -> Result<()> {
    if k > num_classes {
        return Err(Error::Constraint(format!(
            "ν-ensembles need K ≤ c, got K={k} with c={num_classes}"
        )));
    }
    Ok(())
}

/// Writes the four standardised splits, the held-out unlabeled labels and
/// the random-label assignment. Everything is computed before the first
/// write, so a bad config leaves the output directory untouched.
pub fn cmd_prepare(exp: &Experiment) -> Result<Vec<PathBuf>> {
    let cfg = &exp.config;
    let data = cfg.load_dataset()?;
    let splits = fresh_splits(exp, &data, cfg.split.train)?;
    check_k(cfg.model.members, data.num_classes)?;
    if splits.unlabeled.is_empty() {
        return Err(Error::Size("the unlabeled split is empty".into()));
    }
    let seed = cfg.assignment_seed(cfg.model.members);
    let assignment = draw_assignment(splits.unlabeled.len(), data.num_classes, cfg.model.members, seed)?;

    let l = &exp.layout;
    let files = vec![
        l.split_file("train"),
        l.split_file("val"),
        l.split_file("unlabeled"),
        l.split_file("unlabeled_truth"),
        l.split_file("test"),
        l.assignment(),
        l.prepared_manifest(),
    ];
    save_dataset(&files[0], &splits.train)?;
    save_dataset(&files[1], &splits.val)?;
    save_unlabeled(&files[2], &splits.unlabeled)?;
    save_held_out(&files[3], &splits.unlabeled_truth)?;
    save_dataset(&files[4], &splits.test)?;
    assignment.save_csv(&files[5])?;
    write_json(
        &files[6],
        &PreparedManifest {
            schema_version: PREPARED_SCHEMA_VERSION,
            data_hash: cfg.data_hash(),
            num_classes: data.num_classes,
            dim: data.dim(),
            train: splits.train.len(),
            val: splits.val.len(),
            unlabeled: splits.unlabeled.len(),
            test: splits.test.len(),
            members: cfg.model.members,
            assignment_seed: seed,
        },
    )?;
    Ok(files)
}

/// Loads what [`cmd_prepare`] wrote, refusing splits made from another config.
pub fn load_prepared(exp: &Experiment) -> Result<Prepared> {
    let l = &exp.layout;
    let manifest_path = l.prepared_manifest();
    if !manifest_path.exists() {
        return Err(Error::MissingArtifact {
            path: manifest_path,
            hint: "run `nuens prepare` with this config first".into(),
        });
    }
    let manifest: PreparedManifest = read_json(&manifest_path)?;
    if manifest.schema_version != PREPARED_SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "unsupported prepared schema {}",
            manifest.schema_version
        )));
    }
    if manifest.data_hash != exp.config.data_hash() {
        return Err(Error::Config(
            "prepared splits come from a different data, split, K or seed setting; rerun `nuens prepare`".into(),
        ));
    }
    let assignment = LabelAssignment::load_csv(l.assignment(), manifest.num_classes, manifest.assignment_seed)?;
    Ok(Prepared {
        train: load_dataset(l.split_file("train"))?,
        val: load_dataset(l.split_file("val"))?,
        unlabeled: load_unlabeled(l.split_file("unlabeled"))?,
        unlabeled_truth: load_held_out(l.split_file("unlabeled_truth"))?,
        test: load_dataset(l.split_file("test"))?,
        assignment,
    })
}

fn fit(
    method: Method,
    train: &Dataset,
    unlabeled: &UnlabeledSet,
    assignment: &LabelAssignment,
    cfg: &EnsembleConfig,
    execution: Execution,
) -> Result<EnsembleModel> {
    match method {
        Method::Standard => train_standard_with(train, cfg, execution),
        Method::Nu => train_nu_with(train, unlabeled, assignment, cfg, execution),
    }
}

/// Evaluates a trained model on every split and writes model, record,
/// reliability CSVs and timing metadata under `dir`.
fn record_run(
    exp: &Experiment,
    model: &EnsembleModel,
    method: Method,
    prepared: &Prepared,
    dir: &Path,
    train_seconds: f64,
) -> Result<RunRecord> {
    let started = Instant::now();
    let cfg = &exp.config;
    let model_dir = dir.join("model");
    model.save(&model_dir)?;

    let mut metrics = BTreeMap::new();
    let mut reliability = BTreeMap::new();
    let mut artifacts = BTreeMap::new();
    artifacts.insert("model".to_string(), exp.layout.relative(&model_dir));
    let mut test_pred = None;
    for (name, ds) in [("val", &prepared.val), ("test", &prepared.test)] {
        let pred = predict(model, ds)?;
        metrics.insert(name.to_string(), evaluate(&pred, &cfg.metrics)?);
        let bins = reliability_bins(&ensemble_mean(&pred), &pred.labels, cfg.metrics.bins)?;
        let path = dir.join(format!("reliability_{name}.csv"));
        write_atomic(&path, reliability_csv(&bins).as_bytes())?;
        artifacts.insert(format!("reliability_{name}"), exp.layout.relative(&path));
        reliability.insert(name.to_string(), bins);
        if name == "test" {
            test_pred = Some(pred);
        }
    }
    let test_pred = test_pred.expect("test split evaluated");
    let jensen_test = jensen_check(&test_pred)?;

    let on_unlabeled = predict_features(
        model,
        prepared.unlabeled.features.view(),
        prepared.unlabeled_truth.labels().to_vec(),
    )?;
    let bound_cfg = cfg
        .bound
        .to_bound_config(prepared.train.len(), prepared.unlabeled.len(), model.members.len());
    let test_nll = metrics["test"].nll;
    let bound = assemble_bound(model, &prepared.train, &on_unlabeled, &bound_cfg, Some(test_nll))?;
    let random_fit = match method {
        Method::Nu if model.config.beta > 0.0 => {
            Some(random_label_fit(model, &prepared.unlabeled, &prepared.assignment)?)
        }
        _ => None,
    };

    let record = RunRecord {
        schema_version: RECORD_SCHEMA_VERSION,
        config_hash: exp.hash.clone(),
        method,
        ensemble: model.config.clone(),
        train_size: prepared.train.len(),
        unlabeled_size: prepared.unlabeled.len(),
        metrics,
        bound,
        jensen_test,
        random_label_fit: random_fit,
        reliability,
        artifacts,
    };
    let path = dir.join("record.json");
    write_json(&path, &record)?;
    write_json(
        &meta_path(&path),
        &RunMeta {
            train_seconds,
            eval_seconds: started.elapsed().as_secs_f64(),
        },
    )?;
    Ok(record)
}

/// Trains one ensemble on the prepared splits and writes its [`RunRecord`]
/// to `runs/<method>/record.json`.
pub fn cmd_train(exp: &Experiment, method: Method) -> Result<RunRecord> {
    let prepared = load_prepared(exp)?;
    let cfg = exp
        .config
        .ensemble_config(prepared.train.dim(), prepared.train.num_classes)?;
    let started = Instant::now();
    let model = exp.pool.install(|| {
        fit(
            method,
            &prepared.train,
            &prepared.unlabeled,
            &prepared.assignment,
            &cfg,
            exp.execution(),
        )
    })?;
    let seconds = started.elapsed().as_secs_f64();
    record_run(exp, &model, method, &prepared, &exp.layout.run_dir(method), seconds)
}

/// Loads a record written by [`cmd_train`].
pub fn load_record(path: impl AsRef<Path>) -> Result<RunRecord> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            hint: "run `nuens train` first".into(),
        });
    }
    read_json(path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub trials: Vec<TrialRow>,
    pub best_trial: usize,
    pub best: RunRecord,
}

fn sample_trials(spec: &SearchSpec, seed: u64) -> Vec<(f64, f64, usize, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (spec.learning_rate[0].ln(), spec.learning_rate[1].ln());
    (0..spec.trials)
        .map(|t| {
            let lr = if lo == hi {
                lo.exp()
            } else {
                rng.random_range(lo..hi).exp()
            };
            let wd = spec.weight_decay[rng.random_range(0..spec.weight_decay.len())];
            let epochs = spec.epochs[rng.random_range(0..spec.epochs.len())];
            let beta = spec.beta[rng.random_range(0..spec.beta.len())];
            (lr, wd, epochs, if t == 0 { 0.0 } else { beta })
        })
        .collect()
}

/// Lower is better.
fn selection_score(metric: SelectionMetric, row: &TrialRow) -> f64 {
    match metric {
        SelectionMetric::ValNll => row.val_nll,
        SelectionMetric::ValEce => row.val_ece,
        SelectionMetric::ValAccuracy => -row.val_accuracy,
    }
}

/// Random search over learning rate (log-uniform), weight decay, epochs
/// and β. Trial 0 always has β=0, the standard-ensemble baseline. All
/// trials share the model seed, so they differ only in hyperparameters.
pub fn cmd_search(exp: &Experiment) -> Result<SearchOutcome> {
    let spec = &exp.config.search;
    let prepared = load_prepared(exp)?;
    let base = exp
        .config
        .ensemble_config(prepared.train.dim(), prepared.train.num_classes)?;
    let samples = sample_trials(spec, exp.config.derived_seed(stream::SEARCH));
    let run_trial =
        |(t, &(lr, wd, epochs, beta)): (usize, &(f64, f64, usize, f64))| -> Result<(TrialRow, EnsembleModel)> {
            let mut cfg = base.clone();
            cfg.opt.learning_rate = lr;
            cfg.opt.weight_decay = wd;
            cfg.opt.epochs = epochs;
            cfg.beta = beta;
            let model = fit(
                Method::Nu,
                &prepared.train,
                &prepared.unlabeled,
                &prepared.assignment,
                &cfg,
                Execution::Sequential,
            )?;
            let val = evaluate(&predict(&model, &prepared.val)?, &exp.config.metrics)?;
            let test = evaluate(&predict(&model, &prepared.test)?, &exp.config.metrics)?;
            Ok((
                TrialRow {
                    trial: t,
                    forced: t == 0,
                    learning_rate: lr,
                    weight_decay: wd,
                    epochs,
                    beta,
                    val_nll: val.nll,
                    val_ece: val.ece,
                    val_accuracy: val.accuracy,
                    test_nll: test.nll,
                    test_ece: test.ece,
                    test_accuracy: test.accuracy,
                },
                model,
            ))
        };
    let started = Instant::now();
    let results: Vec<Result<(TrialRow, EnsembleModel)>> = exp
        .pool
        .install(|| samples.par_iter().enumerate().map(run_trial).collect());
    let mut rows = Vec::with_capacity(results.len());
    let mut models = Vec::with_capacity(results.len());
    for r in results {
        let (row, model) = r?;
        rows.push(row);
        models.push(model);
    }
    let score = |row: &TrialRow| selection_score(spec.selection, row);
    // first minimum wins, so ties go to the lower trial index
    let best_trial = (0..rows.len()).fold(0, |best, t| if score(&rows[t]) < score(&rows[best]) { t } else { best });
    let seconds = started.elapsed().as_secs_f64();

    let dir = exp.layout.search_dir();
    let trials_path = dir.join("trials.csv");
    write_atomic(&trials_path, to_csv(&rows)?.as_bytes())?;
    let method = if rows[best_trial].beta > 0.0 {
        Method::Nu
    } else {
        Method::Standard
    };
    let best = record_run(exp, &models[best_trial], method, &prepared, &dir.join("best"), seconds)?;
    Ok(SearchOutcome {
        trials: rows,
        best_trial,
        best,
    })
}

fn write_rows<T: Serialize>(exp: &Experiment, name: &str, rows: &[T], started: Instant) -> Result<PathBuf> {
    let path = exp.layout.sweeps_dir().join(name);
    write_atomic(&path, to_csv(rows)?.as_bytes())?;
    write_json(
        &meta_path(&path),
        &RunMeta {
            train_seconds: started.elapsed().as_secs_f64(),
            eval_seconds: 0.0,
        },
    )?;
    Ok(path)
}

const METHODS: [Method; 2] = [Method::Standard, Method::Nu];

/// Trains both methods at every configured train size; val, unlabeled and
/// test splits stay fixed while the train sets are nested.
pub fn cmd_sweep_trainsize(exp: &Experiment) -> Result<Vec<TrainSizeRow>> {
    let cfg = &exp.config;
    let data = cfg.load_dataset()?;
    let largest = *cfg.sweep.train_sizes.iter().max().expect("validated non-empty");
    // size check up front so no point trains before a later one fails
    split(&data, &cfg.split_spec(largest))?;
    check_k(cfg.model.members, data.num_classes)?;
    let jobs: Vec<(usize, Method)> = cfg
        .sweep
        .train_sizes
        .iter()
        .flat_map(|&n| METHODS.map(|m| (n, m)))
        .collect();
    let started = Instant::now();
    let rows: Result<Vec<TrainSizeRow>> = exp.pool.install(|| {
        jobs.par_iter()
            .map(|&(n, method)| {
                let s = fresh_splits(exp, &data, n)?;
                let ens = cfg.ensemble_config(s.train.dim(), s.train.num_classes)?;
                let a = draw_assignment(
                    s.unlabeled.len(),
                    data.num_classes,
                    ens.members,
                    cfg.assignment_seed(ens.members),
                )?;
                let model = fit(method, &s.train, &s.unlabeled, &a, &ens, Execution::Sequential)?;
                let r = evaluate(&predict(&model, &s.test)?, &cfg.metrics)?;
                Ok(TrainSizeRow {
                    train_size: n,
                    method,
                    accuracy: r.accuracy,
                    ece: r.ece,
                    mi: r.mi,
                })
            })
            .collect()
    });
    let rows = rows?;
    write_rows(exp, "trainsize.csv", &rows, started)?;
    Ok(rows)
}

/// Trains both methods at every configured ensemble size.
pub fn cmd_sweep_k(exp: &Experiment) -> Result<Vec<KRow>> {
    let cfg = &exp.config;
    let data = cfg.load_dataset()?;
    let s = fresh_splits(exp, &data, cfg.split.train)?;
    let c = data.num_classes;
    for &k in &cfg.sweep.k_values {
        check_k(k, c)?;
    }
    let jobs: Vec<(usize, Method)> = cfg
        .sweep
        .k_values
        .iter()
        .flat_map(|&k| METHODS.map(|m| (k, m)))
        .collect();
    let started = Instant::now();
    let rows: Result<Vec<KRow>> = exp.pool.install(|| {
        jobs.par_iter()
            .map(|&(k, method)| {
                let mut ens = cfg.ensemble_config(s.train.dim(), c)?;
                ens.members = k;
                let a = draw_assignment(s.unlabeled.len(), c, k, cfg.assignment_seed(k))?;
                let model = fit(method, &s.train, &s.unlabeled, &a, &ens, Execution::Sequential)?;
                let r = evaluate(&predict(&model, &s.test)?, &cfg.metrics)?;
                Ok(KRow {
                    k,
                    method,
                    ece: r.ece,
                    mi: r.mi,
                    expected_variance: expected_variance(c, k)?,
                })
            })
            .collect()
    });
    let rows = rows?;
    write_rows(exp, "k.csv", &rows, started)?;
    Ok(rows)
}

fn corruption_seed(exp: &Experiment, kind_index: usize, severity: u8) -> u64 {
    crate::training::mix(
        exp.config.derived_seed(stream::CORRUPTION),
        (kind_index * 8 + severity as usize) as u64,
    )
}

/// Evaluates the persisted standard and ν models on every corrupted copy of
/// the test split, then appends one `average` row per severity and method.
pub fn cmd_sweep_ood(exp: &Experiment) -> Result<Vec<OodRow>> {
    let cfg = &exp.config;
    let prepared = load_prepared(exp)?;
    let mut models = Vec::with_capacity(METHODS.len());
    for method in METHODS {
        let dir = exp.layout.run_dir(method).join("model");
        let model = EnsembleModel::load(&dir).map_err(|e| match e {
            Error::MissingArtifact { path, .. } => Error::MissingArtifact {
                path,
                hint: format!("run `nuens train --method {method}` first"),
            },
            other => other,
        })?;
        models.push((method, model));
    }
    let mut jobs = Vec::new();
    for (ki, &kind) in cfg.sweep.corruptions.iter().enumerate() {
        for &severity in &cfg.sweep.severities {
            jobs.push(CorruptionSpec {
                kind,
                severity,
                seed: corruption_seed(exp, ki, severity),
            });
        }
    }
    let started = Instant::now();
    let per_spec: Result<Vec<Vec<OodRow>>> = exp.pool.install(|| {
        jobs.par_iter()
            .map(|spec| {
                let test = corrupt(&prepared.test, spec)?;
                models
                    .iter()
                    .map(|(method, model)| {
                        let r = evaluate(&predict(model, &test)?, &cfg.metrics)?;
                        Ok(OodRow {
                            corruption: spec.kind.as_str().to_string(),
                            severity: spec.severity,
                            method: *method,
                            accuracy: r.accuracy,
                            ece: r.ece,
                        })
                    })
                    .collect()
            })
            .collect()
    });
    let mut rows: Vec<OodRow> = per_spec?.into_iter().flatten().collect();
    let kinds = cfg.sweep.corruptions.len() as f64;
    let mut averages = Vec::new();
    for &severity in &cfg.sweep.severities {
        for method in METHODS {
            let (mut acc, mut ece) = (0.0, 0.0);
            for r in rows.iter().filter(|r| r.severity == severity && r.method == method) {
                acc += r.accuracy;
                ece += r.ece;
            }
            averages.push(OodRow {
                corruption: "average".into(),
                severity,
                method,
                accuracy: acc / kinds,
                ece: ece / kinds,
            });
        }
    }
    rows.extend(averages);
    write_rows(exp, "ood.csv", &rows, started)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<SummaryRow>,
    /// Human-readable table.
    pub text: String,
    pub files: Vec<PathBuf>,
}

/// Summarises every `runs/*/record.json` under `dir` and writes
/// `report/summary.csv` plus one reliability CSV per run.
pub fn cmd_report(dir: impl AsRef<Path>) -> Result<Report> {
    let layout = Layout::new(dir.as_ref());
    let runs = layout.root.join("runs");
    if !layout.root.is_dir() {
        return Err(Error::MissingArtifact {
            path: layout.root.clone(),
            hint: "no such output directory".into(),
        });
    }
    let mut names = Vec::new();
    if runs.is_dir() {
        for entry in std::fs::read_dir(&runs).map_err(|e| Error::io(&runs, e))? {
            let entry = entry.map_err(|e| Error::io(&runs, e))?;
            if entry.path().join("record.json").is_file() {
                names.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
    }
    if names.is_empty() {
        return Err(Error::MissingArtifact {
            path: runs,
            hint: "no run records found; run `nuens train` first".into(),
        });
    }
    names.sort();

    let out = layout.report_dir();
    let mut rows = Vec::with_capacity(names.len());
    let mut files = Vec::new();
    for name in &names {
        let record = load_record(runs.join(name).join("record.json"))?;
        let t = record.test();
        rows.push(SummaryRow {
            run: name.clone(),
            method: record.method,
            accuracy: t.accuracy,
            ece: t.ece,
            tace: t.tace,
            brier_rel: t.brier_rel,
            nll: t.nll,
            mi: t.mi,
        });
        let bins = record
            .reliability
            .get("test")
            .ok_or_else(|| Error::Format(format!("record for {name} has no test reliability bins")))?;
        let path = out.join(format!("reliability_{name}.csv"));
        write_atomic(&path, reliability_csv(bins).as_bytes())?;
        files.push(path);
    }
    let summary = out.join("summary.csv");
    write_atomic(&summary, to_csv(&rows)?.as_bytes())?;
    files.insert(0, summary);

    let mut text = String::new();
    let _ = writeln!(
        text,
        "{:<12} {:>8} {:>8} {:>8} {:>10} {:>8} {:>8}",
        "run", "Acc", "ECE", "TACE", "Brier Rel.", "NLL", "MI"
    );
    for r in &rows {
        let mi = r.mi.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(
            text,
            "{:<12} {:>8.4} {:>8.4} {:>8.4} {:>10.4} {:>8.4} {:>8}",
            r.run, r.accuracy, r.ece, r.tace, r.brier_rel, r.nll, mi
        );
    }
    Ok(Report { rows, text, files })
}
