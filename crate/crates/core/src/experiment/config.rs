use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{load_csv, load_idx, make_synthetic, CorruptionKind, CsvSchema, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::io_util::read_json;
use crate::metrics::MetricsConfig;
use crate::nn::ArchSpec;
use crate::optim::OptConfig;
use crate::theory::BoundConfig;
use crate::training::{mix, EnsembleConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Csv {
        path: PathBuf,
        label_column: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        num_classes: Option<usize>,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
    Synthetic {
        num_classes: usize,
        per_class: usize,
        dim: usize,
        spread: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub unlabeled: usize,
    pub test: usize,
}

/// Ensemble hyperparameters; input width and class count come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub members: usize,
    pub beta: f64,
    pub hidden_dims: Vec<usize>,
    pub opt: OptConfig,
    pub unlabeled_batch_size: usize,
    #[serde(default)]
    pub augment_strength: f64,
    #[serde(default)]
    pub augment_unlabeled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSpec {
    pub delta: f64,
    pub gamma_b: f64,
    #[serde(default)]
    pub ln_a: f64,
    #[serde(default)]
    pub psi: f64,
}

impl Default for BoundSpec {
    fn default() -> Self {
        BoundSpec {
            delta: 0.05,
            gamma_b: 1.0,
            ln_a: 0.0,
            psi: 0.0,
        }
    }
}

impl BoundSpec {
    /// `n`, `m` and `K` are filled in from the run.
    pub fn to_bound_config(&self, n: usize, m: usize, k: usize) -> BoundConfig {
        BoundConfig {
            delta: self.delta,
            gamma_b: self.gamma_b,
            ln_a: self.ln_a,
            psi: self.psi,
            n,
            m,
            k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub train_sizes: Vec<usize>,
    /// Strictly increasing.
    pub k_values: Vec<usize>,
    pub corruptions: Vec<CorruptionKind>,
    pub severities: Vec<u8>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            train_sizes: vec![250, 500, 1000, 2000, 4000],
            k_values: vec![1, 2, 3, 4],
            corruptions: CorruptionKind::ALL.to_vec(),
            severities: vec![1, 2, 3, 4, 5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    ValNll,
    ValEce,
    ValAccuracy,
}

impl SelectionMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionMetric::ValNll => "val_nll",
            SelectionMetric::ValEce => "val_ece",
            SelectionMetric::ValAccuracy => "val_accuracy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpec {
    /// Total trials, the forced β=0 trial included.
    pub trials: usize,
    /// Sampled log-uniformly between the two bounds.
    pub learning_rate: [f64; 2],
    pub weight_decay: Vec<f64>,
    pub epochs: Vec<usize>,
    pub beta: Vec<f64>,
    #[serde(default = "default_selection")]
    pub selection: SelectionMetric,
}

fn default_selection() -> SelectionMetric {
    SelectionMetric::ValNll
}

impl Default for SearchSpec {
    fn default() -> Self {
        SearchSpec {
            trials: 50,
            learning_rate: [1e-4, 1e-3],
            weight_decay: vec![1.0, 0.1, 0.05, 0.01, 0.0],
            epochs: (100..=260).step_by(20).collect(),
            beta: vec![0.0, 0.1, 0.25, 0.5, 1.0, 2.0],
            selection: SelectionMetric::ValNll,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub split: SplitSizes,
    pub model: ModelSpec,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub bound: BoundSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub search: SearchSpec,
    pub output_dir: PathBuf,
    pub seed: u64,
}

/// Stream tags for seeds derived from the global seed.
pub(crate) mod stream {
    pub const DATA: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const ASSIGNMENT: u64 = 3;
    pub const MODEL: u64 = 4;
    pub const CORRUPTION: u64 = 5;
    pub const SEARCH: u64 = 6;
}

impl Default for ExperimentConfig {
    /// The desk-scale synthetic task: four classes in twenty dimensions.
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic {
                num_classes: 4,
                per_class: 3500,
                dim: 20,
                spread: 0.9,
            },
            split: SplitSizes {
                train: 1000,
                val: 1000,
                unlabeled: 5000,
                test: 4000,
            },
            model: ModelSpec {
                members: 4,
                beta: 0.05,
                hidden_dims: vec![256, 256],
                opt: OptConfig {
                    learning_rate: 1e-4,
                    weight_decay: 1.0,
                    epochs: 200,
                    batch_size: 100,
                    ..OptConfig::default()
                },
                unlabeled_batch_size: 100,
                augment_strength: 0.0,
                augment_unlabeled: false,
            },
            metrics: MetricsConfig::default(),
            bound: BoundSpec::default(),
            sweep: SweepSpec::default(),
            search: SearchSpec::default(),
            output_dir: PathBuf::from("runs"),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Reads and validates a JSON config.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::Config(format!("config file {} does not exist", path.display())));
        }
        let cfg: ExperimentConfig = read_json(path).map_err(|e| match e {
            Error::Json(e) => Error::Config(format!("{}: {e}", path.display())),
            other => other,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.data {
            DataSource::Csv { path, .. } => require_file(path)?,
            DataSource::Idx { images, labels } => {
                require_file(images)?;
                require_file(labels)?;
            }
            DataSource::Synthetic {
                num_classes,
                per_class,
                dim,
                spread,
            } => {
                if *num_classes < 2 || *per_class == 0 || *dim < 2 {
                    return Err(Error::Config(
                        "synthetic data needs c ≥ 2, per_class ≥ 1 and dim ≥ 2".into(),
                    ));
                }
                if !(*spread >= 0.0 && spread.is_finite()) {
                    return Err(Error::Config(format!(
                        "spread must be finite and non-negative, got {spread}"
                    )));
                }
            }
        }
        if self.split.train == 0 || self.split.test == 0 || self.split.val == 0 {
            return Err(Error::Config("train, val and test sizes must be positive".into()));
        }
        if self.model.hidden_dims.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if self.model.members == 0 {
            return Err(Error::Config("model.members must be positive".into()));
        }
        if !(self.model.beta >= 0.0 && self.model.beta.is_finite()) {
            return Err(Error::Config(format!(
                "beta must be non-negative, got {}",
                self.model.beta
            )));
        }
        if self.model.unlabeled_batch_size == 0 {
            return Err(Error::Config("unlabeled_batch_size must be positive".into()));
        }
        self.model.opt.validate()?;
        if self.metrics.bins == 0 || !(0.0..1.0).contains(&self.metrics.tace_threshold) {
            return Err(Error::Config(
                "metrics need bins ≥ 1 and a TACE threshold in [0, 1)".into(),
            ));
        }
        self.bound
            .to_bound_config(1, 1, 1)
            .validate()
            .map_err(|e| Error::Config(format!("bound: {e}")))?;

        let sweep = &self.sweep;
        if sweep.train_sizes.is_empty() || sweep.train_sizes.contains(&0) {
            return Err(Error::Config("sweep.train_sizes must be non-empty and positive".into()));
        }
        if sweep.k_values.is_empty() || sweep.k_values[0] == 0 || sweep.k_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "sweep.k_values must be positive and strictly increasing".into(),
            ));
        }
        if sweep.corruptions.is_empty() || sweep.severities.is_empty() {
            return Err(Error::Config("sweep needs at least one corruption and severity".into()));
        }
        if let Some(s) = sweep.severities.iter().find(|s| !(1..=5).contains(*s)) {
            return Err(Error::Config(format!("severity {s} outside 1..=5")));
        }

        let search = &self.search;
        if search.trials == 0 {
            return Err(Error::Config("search.trials must be at least 1".into()));
        }
        let [lo, hi] = search.learning_rate;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!(
                "search.learning_rate range [{lo}, {hi}] is invalid"
            )));
        }
        if search.weight_decay.is_empty() || search.epochs.is_empty() || search.beta.is_empty() {
            return Err(Error::Config("search ranges must be non-empty".into()));
        }
        if search
            .weight_decay
            .iter()
            .chain(&search.beta)
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return Err(Error::Config(
                "search weight_decay and beta values must be non-negative".into(),
            ));
        }
        if search.epochs.contains(&0) {
            return Err(Error::Config("search epochs must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical (key-sorted, compact) JSON form, with
    /// `output_dir` excluded.
    pub fn hash(&self) -> String {
        canonical_hash(self, &["output_dir"])
    }

    /// Hash of the fields that determine the prepared splits and assignment.
    pub(crate) fn data_hash(&self) -> String {
        #[derive(Serialize)]
        struct DataKey<'a> {
            data: &'a DataSource,
            split: &'a SplitSizes,
            members: usize,
            seed: u64,
        }
        canonical_hash(
            &DataKey {
                data: &self.data,
                split: &self.split,
                members: self.model.members,
                seed: self.seed,
            },
            &[],
        )
    }

    pub fn derived_seed(&self, stream: u64) -> u64 {
        mix(self.seed, stream)
    }

    pub fn split_spec(&self, train_size: usize) -> SplitSpec {
        SplitSpec {
            train_size,
            val_size: self.split.val,
            unlabeled_size: self.split.unlabeled,
            test_size: self.split.test,
            seed: self.derived_seed(stream::SPLIT),
        }
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.data {
            DataSource::Csv {
                path,
                label_column,
                num_classes,
            } => load_csv(
                path,
                &CsvSchema {
                    label_column: label_column.clone(),
                    num_classes: *num_classes,
                },
            ),
            DataSource::Idx { images, labels } => load_idx(images, labels),
            DataSource::Synthetic {
                num_classes,
                per_class,
                dim,
                spread,
            } => make_synthetic(*num_classes, *per_class, *dim, *spread, self.derived_seed(stream::DATA)),
        }
    }

    /// Full ensemble configuration for data of width `input_dim`.
    pub fn ensemble_config(&self, input_dim: usize, num_classes: usize) -> Result<EnsembleConfig> {
        let cfg = EnsembleConfig {
            members: self.model.members,
            beta: self.model.beta,
            opt: self.model.opt.clone(),
            arch: ArchSpec::new(input_dim, self.model.hidden_dims.clone(), num_classes)?,
            base_seed: self.derived_seed(stream::MODEL),
            unlabeled_batch_size: self.model.unlabeled_batch_size,
            augment_strength: self.model.augment_strength,
            augment_unlabeled: self.model.augment_unlabeled,
            member_seeds: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Seed for the random labels of a `K`-member ensemble.
    pub fn assignment_seed(&self, k: usize) -> u64 {
        mix(self.derived_seed(stream::ASSIGNMENT), k as u64)
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "referenced file {} does not exist",
            path.display()
        )))
    }
}

/// `serde_json::Map` is ordered by key, so serialising through `Value`
/// yields a canonical form regardless of field order in the source file.
fn canonical_hash<T: Serialize>(value: &T, exclude: &[&str]) -> String {
    let mut v = serde_json::to_value(value).expect("config serialises");
    if let Some(map) = v.as_object_mut() {
        for key in exclude {
            map.remove(*key);
        }
    }
    let text = serde_json::to_string(&v).expect("value serialises");
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
