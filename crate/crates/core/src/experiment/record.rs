use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::metrics::{MetricsReport, ReliabilityBin};
use crate::theory::{BoundReport, JensenCheck};
use crate::training::{EnsembleConfig, Method};

pub const RECORD_SCHEMA_VERSION: u32 = 1;

/// Everything a run produced that is a deterministic function of the
/// config. Wall-clock timings go to the sibling [`RunMeta`] file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub config_hash: String,
    pub method: Method,
    pub ensemble: EnsembleConfig,
    pub train_size: usize,
    pub unlabeled_size: usize,
    /// Keyed by split name (`val`, `test`).
    pub metrics: BTreeMap<String, MetricsReport>,
    pub bound: BoundReport,
    pub jensen_test: JensenCheck,
    /// Accuracy of each member on its own random labels; ν runs only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_label_fit: Option<Vec<f64>>,
    pub reliability: BTreeMap<String, Vec<ReliabilityBin>>,
    /// Paths relative to the output directory.
    pub artifacts: BTreeMap<String, PathBuf>,
}

impl RunRecord {
    pub fn test(&self) -> &MetricsReport {
        &self.metrics["test"]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

/// Where every command reads and writes under the output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn prepared(&self) -> PathBuf {
        self.root.join("prepared")
    }

    pub fn prepared_manifest(&self) -> PathBuf {
        self.prepared().join("manifest.json")
    }

    pub fn split_file(&self, name: &str) -> PathBuf {
        self.prepared().join(format!("{name}.json"))
    }

    pub fn assignment(&self) -> PathBuf {
        self.prepared().join("assignment.csv")
    }

    pub fn run_dir(&self, method: Method) -> PathBuf {
        self.root.join("runs").join(method.as_str())
    }

    pub fn record(&self, method: Method) -> PathBuf {
        self.run_dir(method).join("record.json")
    }

    pub fn search_dir(&self) -> PathBuf {
        self.root.join("search")
    }

    pub fn sweeps_dir(&self) -> PathBuf {
        self.root.join("sweeps")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn relative(&self, path: &Path) -> PathBuf {
        path.strip_prefix(&self.root).unwrap_or(path).to_path_buf()
    }
}

/// Metadata path next to a result file: `record.json` → `record.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// One row of the hyperparameter-search trial table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub forced: bool,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub beta: f64,
    pub val_nll: f64,
    pub val_ece: f64,
    pub val_accuracy: f64,
    pub test_nll: f64,
    pub test_ece: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSizeRow {
    pub train_size: usize,
    pub method: Method,
    pub accuracy: f64,
    pub ece: f64,
    pub mi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KRow {
    pub k: usize,
    pub method: Method,
    pub ece: f64,
    pub mi: Option<f64>,
    pub expected_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodRow {
    /// A corruption kind, or `average` for the mean over kinds.
    pub corruption: String,
    pub severity: u8,
    pub method: Method,
    pub accuracy: f64,
    pub ece: f64,
}

/// One line of the report table, test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run: String,
    pub method: Method,
    pub accuracy: f64,
    pub ece: f64,
    pub tace: f64,
    pub brier_rel: f64,
    pub nll: f64,
    pub mi: Option<f64>,
}

/// Serialises rows with a fixed header.
pub fn to_csv<T: Serialize>(rows: &[T]) -> crate::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)
            .map_err(|e| crate::Error::Format(format!("csv encode: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| crate::Error::Format(format!("csv encode: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
}

pub fn from_csv<T: serde::de::DeserializeOwned>(text: &str) -> crate::Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| crate::Error::Parse {
                row: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}
