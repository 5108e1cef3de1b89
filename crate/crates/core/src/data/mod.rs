//! Datasets, the train/validation/unlabeled/test protocol, and input
//! perturbations (corruptions and augmentation).
//!
//! The unlabeled split is represented by [`UnlabeledSet`], which carries no
//! labels at all. Its true labels travel separately as [`HeldOutLabels`],
//! which no training entry point accepts.

mod corrupt;
mod csv_io;
mod idx;
mod persist;
mod split;
mod synthetic;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use corrupt::{augment, corrupt, corrupt_features, CorruptionKind, CorruptionSpec};
pub use csv_io::{load_csv, save_csv, CsvSchema};
pub use idx::{load_idx, write_idx_images, write_idx_labels};
pub use persist::{load_dataset, load_held_out, load_unlabeled, save_dataset, save_held_out, save_unlabeled};
pub use split::{split, SplitIndices, SplitSpec, Splits};
pub use synthetic::make_synthetic;

/// Per-column standardisation statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScale {
    pub mean: Vec<f64>,
    /// Population standard deviation; constant columns store 1.
    pub std: Vec<f64>,
}

impl FeatureScale {
    pub fn fit(features: &Array2<f64>) -> Self {
        let n = features.nrows() as f64;
        let mut mean = Vec::with_capacity(features.ncols());
        let mut std = Vec::with_capacity(features.ncols());
        for col in features.axis_iter(Axis(1)) {
            let mut sum = 0.0;
            for &v in col.iter() {
                sum += v;
            }
            let mu = sum / n;
            let mut sq = 0.0;
            for &v in col.iter() {
                sq += (v - mu) * (v - mu);
            }
            let sd = (sq / n).sqrt();
            mean.push(mu);
            std.push(if sd > 0.0 { sd } else { 1.0 });
        }
        FeatureScale { mean, std }
    }

    pub fn apply(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.mean.len() {
            return Err(Error::Dimension(format!(
                "scale fitted on {} columns, data has {}",
                self.mean.len(),
                features.ncols()
            )));
        }
        let mut out = features.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        Ok(out)
    }
}

/// Labeled examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub feature_names: Vec<String>,
    /// Category names in first-appearance order, when labels were strings.
    pub label_names: Option<Vec<String>>,
    /// Standardisation applied to `features`, if any.
    pub feature_scale: Option<FeatureScale>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let feature_names = (0..features.ncols()).map(|j| format!("x{j}")).collect();
        let ds = Dataset {
            features,
            labels,
            num_classes,
            feature_names,
            label_names: None,
            feature_scale: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.nrows() != self.labels.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows but {} labels",
                self.features.nrows(),
                self.labels.len()
            )));
        }
        if self.feature_names.len() != self.features.ncols() {
            return Err(Error::Dimension(
                "feature_names length differs from column count".into(),
            ));
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= self.num_classes) {
            return Err(Error::Domain(format!("label {bad} outside [0, {})", self.num_classes)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            feature_names: self.feature_names.clone(),
            label_names: self.label_names.clone(),
            feature_scale: self.feature_scale.clone(),
        }
    }

    pub(crate) fn with_scale(&self, scale: &FeatureScale) -> Result<Dataset> {
        Ok(Dataset {
            features: scale.apply(&self.features)?,
            feature_scale: Some(scale.clone()),
            ..self.clone()
        })
    }
}

/// Inputs whose labels are withheld from training.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSet {
    pub features: Array2<f64>,
    pub num_classes: usize,
    pub feature_names: Vec<String>,
    pub feature_scale: Option<FeatureScale>,
}

impl UnlabeledSet {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// True labels of the unlabeled split, kept for diagnostics only
/// (hit rates, the empirical variance on `U`, the bound report).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutLabels(Vec<usize>);

impl HeldOutLabels {
    pub fn new(labels: Vec<usize>) -> Self {
        HeldOutLabels(labels)
    }

    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}
