use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::nn::Batch;

const GAUSSIAN_SIGMA: f64 = 0.04;
const UNIFORM_HALF_WIDTH: f64 = 0.05;
const DROPOUT_RATE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    UniformNoise,
    FeatureBlur,
    FeatureDropout,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 4] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::UniformNoise,
        CorruptionKind::FeatureBlur,
        CorruptionKind::FeatureDropout,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::UniformNoise => "uniform_noise",
            CorruptionKind::FeatureBlur => "feature_blur",
            CorruptionKind::FeatureDropout => "feature_dropout",
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown corruption kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    /// 1 (mild) to 5 (severe).
    pub severity: u8,
    pub seed: u64,
}

/// Applies a corruption to a feature matrix.
///
/// * `gaussian_noise`: add `N(0, (0.04·s)²)`
/// * `uniform_noise`: add `U(−0.05·s, 0.05·s)`
/// * `feature_blur`: replace each feature by the mean over the index window
///   `[j−s, j+s]` clipped to the row
/// * `feature_dropout`: zero each entry with probability `0.02·s`
pub fn corrupt_features(features: &Array2<f64>, spec: &CorruptionSpec) -> Result<Array2<f64>> {
    if !(1..=5).contains(&spec.severity) {
        return Err(Error::Config(format!(
            "severity must be in 1..=5, got {}",
            spec.severity
        )));
    }
    let s = spec.severity as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = features.clone();
    match spec.kind {
        CorruptionKind::GaussianNoise => {
            let normal = Normal::new(0.0, GAUSSIAN_SIGMA * s).expect("finite sigma");
            out.mapv_inplace(|v| v + normal.sample(&mut rng));
        }
        CorruptionKind::UniformNoise => {
            let a = UNIFORM_HALF_WIDTH * s;
            out.mapv_inplace(|v| v + rng.random_range(-a..a));
        }
        CorruptionKind::FeatureBlur => {
            let k = spec.severity as usize;
            let d = features.ncols();
            for (src, mut dst) in features.rows().into_iter().zip(out.rows_mut()) {
                for j in 0..d {
                    let lo = j.saturating_sub(k);
                    let hi = (j + k).min(d - 1);
                    let mut sum = 0.0;
                    for t in lo..=hi {
                        sum += src[t];
                    }
                    dst[j] = sum / (hi - lo + 1) as f64;
                }
            }
        }
        CorruptionKind::FeatureDropout => {
            let p = DROPOUT_RATE * s;
            out.mapv_inplace(|v| if rng.random_bool(p) { 0.0 } else { v });
        }
    }
    Ok(out)
}

/// Corrupted copy of `dataset`; labels are untouched.
pub fn corrupt(dataset: &Dataset, spec: &CorruptionSpec) -> Result<Dataset> {
    Ok(Dataset {
        features: corrupt_features(&dataset.features, spec)?,
        ..dataset.clone()
    })
}

/// Additive Gaussian jitter of standard deviation `strength`.
pub fn augment(batch: &Batch, strength: f64, seed: u64) -> Result<Batch> {
    if !(strength >= 0.0) {
        return Err(Error::Precondition(format!(
            "augmentation strength must be non-negative, got {strength}"
        )));
    }
    if strength == 0.0 {
        return Ok(batch.clone());
    }
    let normal = Normal::new(0.0, strength).expect("finite strength");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = batch.clone();
    out.inputs.mapv_inplace(|v| v + normal.sample(&mut rng));
    Ok(out)
}
