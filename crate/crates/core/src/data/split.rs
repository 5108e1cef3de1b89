use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureScale, HeldOutLabels, UnlabeledSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_size: usize,
    pub val_size: usize,
    pub unlabeled_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn total(&self) -> usize {
        self.train_size + self.val_size + self.unlabeled_size + self.test_size
    }
}

/// Row indices of each split into the source dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub unlabeled: UnlabeledSet,
    /// Diagnostics channel for `unlabeled`; never passed to training.
    pub unlabeled_truth: HeldOutLabels,
    pub test: Dataset,
    pub indices: SplitIndices,
}

/// Seeded shuffle followed by contiguous cuts.
///
/// Cuts are taken in the order test, validation, unlabeled, train, so that
/// for a fixed seed changing only `train_size` leaves the other three
/// splits untouched and yields nested training sets.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    let n = dataset.len();
    if spec.total() > n {
        return Err(Error::Size(format!(
            "split sizes sum to {} but the dataset has {n} rows",
            spec.total()
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));

    let mut cursor = 0;
    let mut take = |len: usize| {
        let part = order[cursor..cursor + len].to_vec();
        cursor += len;
        part
    };
    let test = take(spec.test_size);
    let val = take(spec.val_size);
    let unlabeled = take(spec.unlabeled_size);
    let train = take(spec.train_size);

    let u = dataset.subset(&unlabeled);
    Ok(Splits {
        train: dataset.subset(&train),
        val: dataset.subset(&val),
        unlabeled: UnlabeledSet {
            features: u.features,
            num_classes: dataset.num_classes,
            feature_names: dataset.feature_names.clone(),
            feature_scale: dataset.feature_scale.clone(),
        },
        unlabeled_truth: HeldOutLabels::new(u.labels),
        test: dataset.subset(&test),
        indices: SplitIndices {
            train,
            val,
            unlabeled,
            test,
        },
    })
}

impl Splits {
    /// Standardises every split with statistics fitted on the training split.
    pub fn standardized(self) -> Result<Splits> {
        if self.train.is_empty() {
            return Err(Error::Size(
                "cannot fit feature scale on an empty training split".into(),
            ));
        }
        let scale = FeatureScale::fit(&self.train.features);
        let unlabeled = UnlabeledSet {
            features: scale.apply(&self.unlabeled.features)?,
            feature_scale: Some(scale.clone()),
            ..self.unlabeled
        };
        Ok(Splits {
            train: self.train.with_scale(&scale)?,
            val: self.val.with_scale(&scale)?,
            test: self.test.with_scale(&scale)?,
            unlabeled,
            unlabeled_truth: self.unlabeled_truth,
            indices: self.indices,
        })
    }
}
