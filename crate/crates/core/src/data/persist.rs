//! On-disk form: a JSON sidecar plus a raw little-endian `f64` feature blob
//! (row-major) next to it with the `.f64` extension.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureScale, HeldOutLabels, UnlabeledSet};
use crate::error::{Error, Result};
use crate::io_util::{read_f64_blob, read_json, write_f64_blob, write_json};

const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    schema_version: u32,
    rows: usize,
    cols: usize,
    num_classes: usize,
    feature_names: Vec<String>,
    label_names: Option<Vec<String>>,
    feature_scale: Option<FeatureScale>,
    labels: Option<Vec<usize>>,
    features_blob: String,
}

fn blob_path(json: &Path) -> PathBuf {
    json.with_extension("f64")
}

fn write(json: &Path, features: &Array2<f64>, mut sidecar: Sidecar) -> Result<()> {
    let blob = blob_path(json);
    sidecar.features_blob = blob
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    write_f64_blob(&blob, features.iter().copied())?;
    write_json(json, &sidecar)
}

fn read(json: &Path) -> Result<(Sidecar, Array2<f64>)> {
    if !json.exists() {
        return Err(Error::io(json, std::io::ErrorKind::NotFound.into()));
    }
    let sidecar: Sidecar = read_json(json)?;
    if sidecar.schema_version != SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported schema version {}",
            json.display(),
            sidecar.schema_version
        )));
    }
    let blob = json.with_file_name(&sidecar.features_blob);
    let values = read_f64_blob(&blob)?;
    let features = Array2::from_shape_vec((sidecar.rows, sidecar.cols), values).map_err(|_| {
        Error::Format(format!(
            "{}: blob does not hold {}×{} values",
            blob.display(),
            sidecar.rows,
            sidecar.cols
        ))
    })?;
    Ok((sidecar, features))
}

pub fn save_dataset(json: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    write(
        json.as_ref(),
        &dataset.features,
        Sidecar {
            schema_version: SCHEMA_VERSION,
            rows: dataset.len(),
            cols: dataset.dim(),
            num_classes: dataset.num_classes,
            feature_names: dataset.feature_names.clone(),
            label_names: dataset.label_names.clone(),
            feature_scale: dataset.feature_scale.clone(),
            labels: Some(dataset.labels.clone()),
            features_blob: String::new(),
        },
    )
}

pub fn load_dataset(json: impl AsRef<Path>) -> Result<Dataset> {
    let (sidecar, features) = read(json.as_ref())?;
    let labels = sidecar
        .labels
        .ok_or_else(|| Error::Format(format!("{}: no labels stored", json.as_ref().display())))?;
    let ds = Dataset {
        features,
        labels,
        num_classes: sidecar.num_classes,
        feature_names: sidecar.feature_names,
        label_names: sidecar.label_names,
        feature_scale: sidecar.feature_scale,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn save_unlabeled(json: impl AsRef<Path>, set: &UnlabeledSet) -> Result<()> {
    write(
        json.as_ref(),
        &set.features,
        Sidecar {
            schema_version: SCHEMA_VERSION,
            rows: set.len(),
            cols: set.dim(),
            num_classes: set.num_classes,
            feature_names: set.feature_names.clone(),
            label_names: None,
            feature_scale: set.feature_scale.clone(),
            labels: None,
            features_blob: String::new(),
        },
    )
}

pub fn load_unlabeled(json: impl AsRef<Path>) -> Result<UnlabeledSet> {
    let (sidecar, features) = read(json.as_ref())?;
    Ok(UnlabeledSet {
        features,
        num_classes: sidecar.num_classes,
        feature_names: sidecar.feature_names,
        feature_scale: sidecar.feature_scale,
    })
}

pub fn save_held_out(json: impl AsRef<Path>, labels: &HeldOutLabels) -> Result<()> {
    write_json(json.as_ref(), labels)
}

pub fn load_held_out(json: impl AsRef<Path>) -> Result<HeldOutLabels> {
    read_json(json.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, split, SplitSpec};

    #[test]
    fn round_trip_all_parts() {
        let dir = tempfile::tempdir().unwrap();
        let ds = make_synthetic(3, 7, 4, 0.3, 2).unwrap();
        let s = split(
            &ds,
            &SplitSpec {
                train_size: 8,
                val_size: 3,
                unlabeled_size: 6,
                test_size: 4,
                seed: 1,
            },
        )
        .unwrap()
        .standardized()
        .unwrap();
        let p = dir.path().join("train.json");
        save_dataset(&p, &s.train).unwrap();
        assert_eq!(load_dataset(&p).unwrap(), s.train);
        assert!(dir.path().join("train.f64").exists());

        let u = dir.path().join("unlabeled.json");
        save_unlabeled(&u, &s.unlabeled).unwrap();
        assert_eq!(load_unlabeled(&u).unwrap(), s.unlabeled);
        assert!(load_dataset(&u).is_err());

        let h = dir.path().join("truth.json");
        save_held_out(&h, &s.unlabeled_truth).unwrap();
        assert_eq!(load_held_out(&h).unwrap(), s.unlabeled_truth);
    }
}
