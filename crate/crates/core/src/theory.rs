//! Ensemble variance, the random-labeling expectation `(K−1)/(2cK)` and its
//! brute-force check, the second-order Jensen inequality, and assembly of
//! the PAC-Bayes bound right-hand side.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{ensemble_mean, member_nll, nll};
use crate::nn::{self, Batch};
use crate::training::{EnsembleModel, PredictionSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    /// `(1/2m) Σ_u (1/K) Σ_j (p_j − p̄)²` with `p_j` the true-label probability.
    pub v_half: f64,
    /// Same with the per-sample factor `1/(2 max_j p_j)` in place of `1/2`.
    pub v_exact_max: f64,
    /// Per-sample terms of `v_half`, already divided by `m`.
    pub per_sample: Vec<f64>,
}

pub fn empirical_variance(pred: &PredictionSet) -> VarianceReport {
    let truth = pred.true_label_probs();
    let (k, m) = truth.dim();
    let mut per_sample = Vec::with_capacity(m);
    let (mut v_half, mut v_max) = (0.0, 0.0);
    for col in truth.columns() {
        // running mean, so identical members leave exactly zero deviation
        let mut mean = 0.0;
        let mut max = f64::NEG_INFINITY;
        for (j, &p) in col.iter().enumerate() {
            mean += (p - mean) / (j + 1) as f64;
            max = max.max(p);
        }
        let mut var = 0.0;
        for &p in col.iter() {
            var += (p - mean) * (p - mean);
        }
        var /= k as f64;
        let term = var / (2.0 * m as f64);
        per_sample.push(term);
        v_half += term;
        // max is zero only if every p is zero, in which case the variance is zero too
        if max > 0.0 {
            v_max += var / (2.0 * max * m as f64);
        }
    }
    VarianceReport {
        v_half,
        v_exact_max: v_max,
        per_sample,
    }
}

fn check_pair(c: usize, k: usize) -> Result<()> {
    if k == 0 || c == 0 {
        return Err(Error::Constraint(format!("need K ≥ 1 and c ≥ 1, got K={k}, c={c}")));
    }
    if k > c {
        return Err(Error::Constraint(format!("K={k} exceeds c={c}")));
    }
    Ok(())
}

/// Expected `v_half` under perfect fits of random labels: `(K−1)/(2cK)`.
pub fn expected_variance(num_classes: usize, k: usize) -> Result<f64> {
    check_pair(num_classes, k)?;
    Ok((k - 1) as f64 / (2.0 * num_classes as f64 * k as f64))
}

/// Largest class count [`expected_variance_enumerated`] will enumerate.
pub const BRUTEFORCE_MAX_CLASSES: usize = 8;

/// Averages the per-sample `v_half` over all `c!/(c−K)!` ordered draws for a
/// point whose true label is 0, with member `i` predicting a one-hot
/// distribution at its drawn label.
pub fn expected_variance_enumerated(num_classes: usize, k: usize) -> Result<f64> {
    check_pair(num_classes, k)?;
    if num_classes > BRUTEFORCE_MAX_CLASSES {
        return Err(Error::Size(format!(
            "enumeration limited to c ≤ {BRUTEFORCE_MAX_CLASSES}, got {num_classes}"
        )));
    }
    let truth = 0usize;
    let mut draw = Vec::with_capacity(k);
    let mut used = vec![false; num_classes];
    let mut sum = 0.0;
    let mut count = 0u64;
    enumerate(num_classes, k, &mut draw, &mut used, &mut |d| {
        let probs: Vec<f64> = d.iter().map(|&y| if y == truth { 1.0 } else { 0.0 }).collect();
        let mean = probs.iter().sum::<f64>() / k as f64;
        let var = probs.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / k as f64;
        sum += 0.5 * var;
        count += 1;
    });
    Ok(sum / count as f64)
}

fn enumerate(c: usize, k: usize, draw: &mut Vec<usize>, used: &mut [bool], visit: &mut impl FnMut(&[usize])) {
    if draw.len() == k {
        visit(draw);
        return;
    }
    for y in 0..c {
        if !used[y] {
            used[y] = true;
            draw.push(y);
            enumerate(c, k, draw, used, visit);
            draw.pop();
            used[y] = false;
        }
    }
}

/// Every ordered draw with its per-sample variance, for audit dumps.
pub fn expected_variance_table(num_classes: usize, k: usize) -> Result<Vec<(Vec<usize>, f64)>> {
    check_pair(num_classes, k)?;
    if num_classes > BRUTEFORCE_MAX_CLASSES {
        return Err(Error::Size(format!(
            "enumeration limited to c ≤ {BRUTEFORCE_MAX_CLASSES}"
        )));
    }
    let mut rows = Vec::new();
    let mut draw = Vec::with_capacity(k);
    let mut used = vec![false; num_classes];
    enumerate(num_classes, k, &mut draw, &mut used, &mut |d| {
        let hit = d.contains(&0);
        let var = if hit { (k - 1) as f64 / (k * k) as f64 } else { 0.0 };
        rows.push((d.to_vec(), 0.5 * var));
    });
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JensenCheck {
    /// Ensemble NLL.
    pub lhs: f64,
    /// Mean member NLL minus `v_exact_max`.
    pub rhs: f64,
    pub holds: bool,
}

pub const JENSEN_SLACK: f64 = 1e-9;

/// Second-order Jensen inequality on the empirical distribution of `pred`.
pub fn jensen_check(pred: &PredictionSet) -> Result<JensenCheck> {
    let ep = ensemble_mean(pred);
    let lhs = nll(&ep, &pred.labels)?;
    let members = member_nll(pred);
    let mean_member = members.iter().sum::<f64>() / members.len() as f64;
    let rhs = mean_member - empirical_variance(pred).v_exact_max;
    Ok(JensenCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + JENSEN_SLACK,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    pub delta: f64,
    /// The bound's γ in (0, 2); unrelated to weight decay.
    pub gamma_b: f64,
    #[serde(default)]
    pub ln_a: f64,
    #[serde(default)]
    pub psi: f64,
    /// Labeled count.
    pub n: usize,
    /// Unlabeled count.
    pub m: usize,
    /// Ensemble size.
    pub k: usize,
}

impl BoundConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Constraint(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if !(self.gamma_b > 0.0 && self.gamma_b < 2.0) {
            return Err(Error::Constraint(format!(
                "gamma_b must lie in (0, 2), got {}",
                self.gamma_b
            )));
        }
        if self.n == 0 || self.m == 0 || self.k == 0 {
            return Err(Error::Constraint("n, m and K must be positive".into()));
        }
        Ok(())
    }
}

/// Complexity term
/// `(‖w‖² + ln A + K ln(1/δ) + Kψ)/(γn) + (‖w‖² + ln A + K ln(2√m/δ))/(γm)`.
pub fn h_complexity(sq_norm: f64, cfg: &BoundConfig) -> Result<f64> {
    cfg.validate()?;
    if !(sq_norm >= 0.0) {
        return Err(Error::Precondition(format!(
            "squared norm must be non-negative, got {sq_norm}"
        )));
    }
    let k = cfg.k as f64;
    let n = cfg.n as f64;
    let m = cfg.m as f64;
    let labeled = (sq_norm + cfg.ln_a + k * (1.0 / cfg.delta).ln() + k * cfg.psi) / (cfg.gamma_b * n);
    let unlabeled = (sq_norm + cfg.ln_a + k * (2.0 * m.sqrt() / cfg.delta).ln()) / (cfg.gamma_b * m);
    Ok(labeled + unlabeled)
}

/// Right-hand side of the ensemble NLL bound, up to the user constants
/// `ln A` and `ψ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub avg_train_nll: f64,
    pub v_half: f64,
    pub h_terms: Vec<f64>,
    pub gamma_b: f64,
    pub num_classes: usize,
    pub rhs: f64,
    /// Observed ensemble NLL on the test split, when supplied.
    pub test_nll: Option<f64>,
}

impl BoundReport {
    pub fn variance_coefficient(&self) -> f64 {
        1.0 - self.gamma_b / 2.0
    }

    pub fn mean_complexity(&self) -> f64 {
        self.h_terms.iter().sum::<f64>() / self.h_terms.len() as f64
    }

    /// `rhs` rebuilt from the stored parts.
    pub fn recompute_rhs(&self) -> f64 {
        self.avg_train_nll - self.variance_coefficient() * self.v_half + self.mean_complexity()
    }
}

/// Assembles the bound for a trained model. `pred_on_unlabeled` must carry
/// the held-out true labels of the unlabeled split. `cfg.n`, `cfg.m` and
/// `cfg.k` are taken from the data and model.
pub fn assemble_bound(
    model: &EnsembleModel,
    train: &Dataset,
    pred_on_unlabeled: &PredictionSet,
    cfg: &BoundConfig,
    test_nll: Option<f64>,
) -> Result<BoundReport> {
    if pred_on_unlabeled.members() != model.members.len() {
        return Err(Error::Dimension(
            "unlabeled predictions do not match the model's members".into(),
        ));
    }
    let cfg = BoundConfig {
        n: train.len(),
        m: pred_on_unlabeled.len(),
        k: model.members.len(),
        ..cfg.clone()
    };
    cfg.validate()?;
    let batch = Batch::new(train.features.clone(), train.labels.clone())?;
    let mut train_nll = 0.0;
    let mut h_terms = Vec::with_capacity(model.members.len());
    for member in &model.members {
        train_nll += nn::nll_loss(member, &batch)?;
        h_terms.push(h_complexity(member.squared_l2_norm(), &cfg)?);
    }
    let avg_train_nll = train_nll / model.members.len() as f64;
    let v_half = empirical_variance(pred_on_unlabeled).v_half;
    let mut report = BoundReport {
        avg_train_nll,
        v_half,
        h_terms,
        gamma_b: cfg.gamma_b,
        num_classes: pred_on_unlabeled.num_classes,
        rhs: 0.0,
        test_nll,
    };
    report.rhs = report.recompute_rhs();
    Ok(report)
}

/// Hoeffding aggregation over `r` independent training runs, with the
/// random-labeling expectation in place of each run's variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedBound {
    pub runs: usize,
    pub mean_train_nll: f64,
    pub train_slack: f64,
    pub variance_term: f64,
    pub mean_complexity: f64,
    pub complexity_slack: f64,
    pub value: f64,
}

/// `√(cap² ln(1/conf) / (2r))`.
pub fn hoeffding_slack(cap: f64, conf: f64, runs: usize) -> f64 {
    (cap * cap * (1.0 / conf).ln() / (2.0 * runs as f64)).sqrt()
}

pub fn hoeffding_aggregate(
    reports: &[BoundReport],
    train_cap: f64,
    complexity_cap: f64,
    b: f64,
    c_conf: f64,
) -> Result<AggregatedBound> {
    let r = reports.len();
    if r == 0 {
        return Err(Error::Domain("need at least one bound report".into()));
    }
    if !(train_cap > 0.0 && complexity_cap > 0.0) {
        return Err(Error::Precondition("loss and complexity caps must be positive".into()));
    }
    for (name, v) in [("b", b), ("c_conf", c_conf)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::Precondition(format!("{name} must lie in (0, 1), got {v}")));
        }
    }
    let first = &reports[0];
    let k = first.h_terms.len();
    if reports
        .iter()
        .any(|rep| rep.h_terms.len() != k || rep.num_classes != first.num_classes || rep.gamma_b != first.gamma_b)
    {
        return Err(Error::Constraint("reports disagree on K, c or gamma_b".into()));
    }
    let mean_train_nll = reports.iter().map(|rep| rep.avg_train_nll).sum::<f64>() / r as f64;
    let mean_complexity = reports.iter().map(BoundReport::mean_complexity).sum::<f64>() / r as f64;
    let variance_term = first.variance_coefficient() * expected_variance(first.num_classes, k)?;
    let train_slack = hoeffding_slack(train_cap, b, r);
    let complexity_slack = hoeffding_slack(complexity_cap, c_conf, r);
    Ok(AggregatedBound {
        runs: r,
        mean_train_nll,
        train_slack,
        variance_term,
        mean_complexity,
        complexity_slack,
        value: mean_train_nll + train_slack - variance_term + mean_complexity + complexity_slack,
    })
}
