//! Standard and ν ensembles.
//!
//! Every member is trained independently from its own seed. A ν-ensemble
//! member additionally fits its column of a [`LabelAssignment`] on the
//! unlabeled split: each optimizer step pairs one labeled minibatch with
//! one unlabeled minibatch and descends
//! `mean labeled NLL + β · mean random-label NLL`, with the `γ‖w‖²` term
//! applied as decoupled AdamW decay.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{augment, Dataset, UnlabeledSet};
use crate::error::{Error, Result};
use crate::io_util::{read_f64_blob, read_json, write_f64_blob, write_json};
use crate::labeling::LabelAssignment;
use crate::nn::{self, gather_rows, ArchSpec, Batch, Params};
use crate::optim::{step_in_place, OptConfig, OptState};

/// Which training objective an ensemble uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Standard,
    Nu,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Standard => "standard",
            Method::Nu => "nu",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Method::Standard),
            "nu" => Ok(Method::Nu),
            other => Err(Error::Config(format!(
                "unknown method {other:?}, expected standard or nu"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    /// Ensemble size `K`.
    pub members: usize,
    /// Weight β of the random-label loss.
    pub beta: f64,
    pub opt: OptConfig,
    pub arch: ArchSpec,
    pub base_seed: u64,
    pub unlabeled_batch_size: usize,
    #[serde(default)]
    pub augment_strength: f64,
    /// Also jitter unlabeled minibatches (off by default).
    #[serde(default)]
    pub augment_unlabeled: bool,
    /// Explicit per-member seeds; derived from `base_seed` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub member_seeds: Option<Vec<u64>>,
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.opt.validate()?;
        if self.members == 0 {
            return Err(Error::Config("ensemble needs at least one member".into()));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("beta must be non-negative, got {}", self.beta)));
        }
        if self.unlabeled_batch_size == 0 {
            return Err(Error::Config("unlabeled_batch_size must be positive".into()));
        }
        if !(self.augment_strength >= 0.0) {
            return Err(Error::Config("augment_strength must be non-negative".into()));
        }
        if let Some(seeds) = &self.member_seeds {
            if seeds.len() != self.members {
                return Err(Error::Config(format!(
                    "{} member seeds given for {} members",
                    seeds.len(),
                    self.members
                )));
            }
        }
        Ok(())
    }

    pub fn member_seeds(&self) -> Vec<u64> {
        match &self.member_seeds {
            Some(seeds) => seeds.clone(),
            None => (0..self.members as u64).map(|i| mix(self.base_seed, i)).collect(),
        }
    }
}

/// SplitMix64 finaliser over `(seed, tag)`.
pub(crate) fn mix(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-epoch means of the logged loss terms for one member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberHistory {
    pub labeled_nll: Vec<f64>,
    /// Empty when β = 0.
    pub random_label_nll: Vec<f64>,
    /// Mean of `labeled + β·random_label` over the epoch's steps.
    pub step_loss: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub members: Vec<Params>,
    pub config: EnsembleConfig,
    pub history: Vec<MemberHistory>,
    pub member_seeds: Vec<u64>,
}

/// How members are scheduled. Both produce identical models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Sequential,
    Parallel,
}

struct RandomLabels<'a> {
    features: ArrayView2<'a, f64>,
    labels: Vec<usize>,
}

fn train_member(
    train: &Dataset,
    random: Option<&RandomLabels<'_>>,
    cfg: &EnsembleConfig,
    seed: u64,
) -> Result<(Params, MemberHistory)> {
    let opt = &cfg.opt;
    let mut params = Params::he_uniform(&cfg.arch, mix(seed, 0));
    let mut state = OptState::new(&params);
    let mut order_rng = ChaCha8Rng::seed_from_u64(mix(seed, 1));
    let mut unlabeled_rng = ChaCha8Rng::seed_from_u64(mix(seed, 2));

    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let batch_size = opt.batch_size.min(n);
    let x = train.features.view();

    let mut u_order: Vec<usize> = random.map_or(Vec::new(), |r| (0..r.labels.len()).collect());
    u_order.shuffle(&mut unlabeled_rng);
    let mut u_cursor = 0;
    let u_batch = random.map_or(0, |r| cfg.unlabeled_batch_size.min(r.labels.len()));

    let mut history = MemberHistory {
        labeled_nll: Vec::with_capacity(opt.epochs),
        random_label_nll: Vec::new(),
        step_loss: Vec::with_capacity(opt.epochs),
    };
    let mut step_index: u64 = 0;
    for _ in 0..opt.epochs {
        order.shuffle(&mut order_rng);
        let (mut sum_lab, mut sum_rand, mut sum_step, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(batch_size) {
            let mut batch = Batch::new(gather_rows(&x, chunk), chunk.iter().map(|&i| train.labels[i]).collect())?;
            if cfg.augment_strength > 0.0 {
                batch = augment(&batch, cfg.augment_strength, mix(seed, 3 + 2 * step_index))?;
            }
            let (lab, mut grad) = nn::loss_and_grad(&params, &batch)?;
            let mut step_loss = lab;
            if let Some(r) = random {
                let mut idx = Vec::with_capacity(u_batch);
                while idx.len() < u_batch {
                    if u_cursor == u_order.len() {
                        u_order.shuffle(&mut unlabeled_rng);
                        u_cursor = 0;
                    }
                    let take = (u_batch - idx.len()).min(u_order.len() - u_cursor);
                    idx.extend_from_slice(&u_order[u_cursor..u_cursor + take]);
                    u_cursor += take;
                }
                let mut ubatch = Batch::new(
                    gather_rows(&r.features, &idx),
                    idx.iter().map(|&i| r.labels[i]).collect(),
                )?;
                if cfg.augment_unlabeled && cfg.augment_strength > 0.0 {
                    ubatch = augment(&ubatch, cfg.augment_strength, mix(seed, 4 + 2 * step_index))?;
                }
                let (rand_loss, rand_grad) = nn::loss_and_grad(&params, &ubatch)?;
                grad.add_scaled(&rand_grad, cfg.beta);
                step_loss = lab + cfg.beta * rand_loss;
                sum_rand += rand_loss;
            }
            step_in_place(&mut params, &grad, &mut state, opt)?;
            sum_lab += lab;
            sum_step += step_loss;
            steps += 1;
            step_index += 1;
        }
        let s = steps as f64;
        history.labeled_nll.push(sum_lab / s);
        history.step_loss.push(sum_step / s);
        if random.is_some() {
            history.random_label_nll.push(sum_rand / s);
        }
    }
    if !params.is_finite() {
        return Err(Error::Domain("training diverged to non-finite parameters".into()));
    }
    Ok((params, history))
}

fn fit(
    train: &Dataset,
    nu: Option<(&UnlabeledSet, &LabelAssignment)>,
    cfg: &EnsembleConfig,
    execution: Execution,
) -> Result<EnsembleModel> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Size("training set is empty".into()));
    }
    if train.dim() != cfg.arch.input_dim {
        return Err(Error::Dimension(format!(
            "training features have width {}, architecture expects {}",
            train.dim(),
            cfg.arch.input_dim
        )));
    }
    if train.num_classes != cfg.arch.num_classes {
        return Err(Error::Dimension(format!(
            "dataset has {} classes, architecture has {}",
            train.num_classes, cfg.arch.num_classes
        )));
    }
    let views: Vec<Option<RandomLabels<'_>>> = match nu {
        Some((u, a)) if cfg.beta > 0.0 => (0..cfg.members)
            .map(|i| {
                Ok(Some(RandomLabels {
                    features: u.features.view(),
                    labels: a.member_labels(i)?,
                }))
            })
            .collect::<Result<_>>()?,
        _ => (0..cfg.members).map(|_| None).collect(),
    };
    let seeds = cfg.member_seeds();
    let run = |i: usize| train_member(train, views[i].as_ref(), cfg, seeds[i]);
    let results: Vec<Result<(Params, MemberHistory)>> = match execution {
        Execution::Sequential => (0..cfg.members).map(run).collect(),
        Execution::Parallel => (0..cfg.members).into_par_iter().map(run).collect(),
    };
    let mut members = Vec::with_capacity(cfg.members);
    let mut history = Vec::with_capacity(cfg.members);
    for r in results {
        let (p, h) = r?;
        members.push(p);
        history.push(h);
    }
    Ok(EnsembleModel {
        members,
        config: cfg.clone(),
        history,
        member_seeds: seeds,
    })
}

/// Standard ensemble: every member minimises labeled NLL (plus decay).
/// `config.beta` is ignored and recorded as 0.
pub fn train_standard(train: &Dataset, config: &EnsembleConfig) -> Result<EnsembleModel> {
    train_standard_with(train, config, Execution::Sequential)
}

pub fn train_standard_with(train: &Dataset, config: &EnsembleConfig, execution: Execution) -> Result<EnsembleModel> {
    let cfg = EnsembleConfig {
        beta: 0.0,
        ..config.clone()
    };
    fit(train, None, &cfg, execution)
}

/// ν-ensemble: member `i` fits `train` and `member_view(assignment, i)`.
pub fn train_nu(
    train: &Dataset,
    unlabeled: &UnlabeledSet,
    assignment: &LabelAssignment,
    config: &EnsembleConfig,
) -> Result<EnsembleModel> {
    train_nu_with(train, unlabeled, assignment, config, Execution::Sequential)
}

pub fn train_nu_with(
    train: &Dataset,
    unlabeled: &UnlabeledSet,
    assignment: &LabelAssignment,
    config: &EnsembleConfig,
    execution: Execution,
) -> Result<EnsembleModel> {
    if assignment.members() != config.members {
        return Err(Error::Constraint(format!(
            "assignment has K={} but the ensemble has {} members",
            assignment.members(),
            config.members
        )));
    }
    if assignment.len() != unlabeled.len() {
        return Err(Error::Constraint(format!(
            "assignment covers m={} points but the unlabeled set has {}",
            assignment.len(),
            unlabeled.len()
        )));
    }
    if assignment.num_classes() != config.arch.num_classes {
        return Err(Error::Constraint(
            "assignment and architecture disagree on class count".into(),
        ));
    }
    if unlabeled.dim() != config.arch.input_dim {
        return Err(Error::Dimension(
            "unlabeled features do not match the architecture".into(),
        ));
    }
    fit(train, Some((unlabeled, assignment)), config, execution)
}

/// Per-member class probabilities on one evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    /// `K × N × c`.
    pub probs: Array3<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl PredictionSet {
    pub fn new(probs: Array3<f64>, labels: Vec<usize>) -> Result<Self> {
        let (k, n, c) = probs.dim();
        if k == 0 || n == 0 {
            return Err(Error::Domain(
                "prediction set needs at least one member and sample".into(),
            ));
        }
        if labels.len() != n {
            return Err(Error::Dimension(format!("{} labels for {n} samples", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Domain(format!("label {bad} outside [0, {c})")));
        }
        for row in probs.lanes(Axis(2)) {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::Domain(format!("probability row sums to {sum}")));
            }
        }
        Ok(PredictionSet {
            probs,
            labels,
            num_classes: c,
        })
    }

    pub fn members(&self) -> usize {
        self.probs.dim().0
    }

    pub fn len(&self) -> usize {
        self.probs.dim().1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `K × N` probabilities of the true label.
    pub fn true_label_probs(&self) -> Array2<f64> {
        let (k, n, _) = self.probs.dim();
        Array2::from_shape_fn((k, n), |(j, i)| self.probs[[j, i, self.labels[i]]])
    }
}

/// Stacks every member's forward pass on `features`; no averaging.
pub fn predict_features(
    model: &EnsembleModel,
    features: ArrayView2<'_, f64>,
    labels: Vec<usize>,
) -> Result<PredictionSet> {
    let n = features.nrows();
    let c = model.config.arch.num_classes;
    let mut probs = Array3::zeros((model.members.len(), n, c));
    for (j, member) in model.members.iter().enumerate() {
        probs.index_axis_mut(Axis(0), j).assign(&nn::forward(member, features)?);
    }
    PredictionSet::new(probs, labels)
}

pub fn predict(model: &EnsembleModel, dataset: &Dataset) -> Result<PredictionSet> {
    predict_features(model, dataset.features.view(), dataset.labels.clone())
}

/// Accuracy of every member on its own random labels `U_i`.
pub fn random_label_fit(
    model: &EnsembleModel,
    unlabeled: &UnlabeledSet,
    assignment: &LabelAssignment,
) -> Result<Vec<f64>> {
    if assignment.members() != model.members.len() || assignment.len() != unlabeled.len() {
        return Err(Error::Constraint(
            "assignment does not match model and unlabeled set".into(),
        ));
    }
    model
        .members
        .iter()
        .enumerate()
        .map(|(i, member)| {
            let targets = assignment.member_labels(i)?;
            let probs = nn::forward(member, unlabeled.features.view())?;
            let hits = probs
                .rows()
                .into_iter()
                .zip(&targets)
                .filter(|(row, &y)| crate::metrics::argmax(row.as_slice().expect("contiguous")) == y)
                .count();
            Ok(hits as f64 / targets.len() as f64)
        })
        .collect()
}

const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    config: EnsembleConfig,
    member_seeds: Vec<u64>,
    history: Vec<MemberHistory>,
    member_blobs: Vec<String>,
}

impl EnsembleModel {
    /// Writes `manifest.json` and one `member_<i>.f64` blob per member into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let blobs: Vec<String> = (0..self.members.len()).map(|i| format!("member_{i}.f64")).collect();
        for (member, name) in self.members.iter().zip(&blobs) {
            write_f64_blob(&dir.join(name), member.to_flat())?;
        }
        write_json(
            &dir.join("manifest.json"),
            &Manifest {
                schema_version: MODEL_SCHEMA_VERSION,
                config: self.config.clone(),
                member_seeds: self.member_seeds.clone(),
                history: self.history.clone(),
                member_blobs: blobs,
            },
        )
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<EnsembleModel> {
        let dir = dir.as_ref();
        let manifest_path = dir.join("manifest.json");
        if !manifest_path.exists() {
            return Err(Error::MissingArtifact {
                path: manifest_path,
                hint: "train a model first".into(),
            });
        }
        let manifest: Manifest = read_json(&manifest_path)?;
        if manifest.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported model schema {}",
                manifest.schema_version
            )));
        }
        let members = manifest
            .member_blobs
            .iter()
            .map(|name| Params::from_flat(&manifest.config.arch, &read_f64_blob(&dir.join(name))?))
            .collect::<Result<Vec<_>>>()?;
        Ok(EnsembleModel {
            members,
            config: manifest.config,
            history: manifest.history,
            member_seeds: manifest.member_seeds,
        })
    }
}
