//! Accuracy, NLL and calibration of the ensemble-mean predictor, plus the
//! average pairwise mutual information between member argmax outputs.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::PredictionSet;

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePrediction {
    /// `N × c`, the arithmetic mean over members, accumulated as a running
    /// mean so identical members reproduce their common value exactly.
    pub mean_probs: Array2<f64>,
    /// `K × N` argmax class of each member.
    pub member_argmax: Array2<usize>,
}

pub fn ensemble_mean(pred: &PredictionSet) -> EnsemblePrediction {
    let (k, n, c) = pred.probs.dim();
    let mut mean = Array2::<f64>::zeros((n, c));
    for (j, member) in pred.probs.axis_iter(Axis(0)).enumerate() {
        let w = 1.0 / (j + 1) as f64;
        ndarray::Zip::from(&mut mean)
            .and(&member)
            .for_each(|m, &p| *m += (p - *m) * w);
    }
    let member_argmax = Array2::from_shape_fn((k, n), |(j, i)| {
        let row = pred.probs.slice(ndarray::s![j, i, ..]);
        argmax(&row.to_vec())
    });
    EnsemblePrediction {
        mean_probs: mean,
        member_argmax,
    }
}

fn check_len(n: usize, labels: &[usize]) -> Result<()> {
    if n != labels.len() {
        return Err(Error::Dimension(format!("{n} predictions but {} labels", labels.len())));
    }
    if n == 0 {
        return Err(Error::Domain("no samples".into()));
    }
    Ok(())
}

fn check_bins(bins: usize) -> Result<()> {
    if bins == 0 {
        return Err(Error::Precondition("bins must be at least 1".into()));
    }
    Ok(())
}

fn row(probs: &Array2<f64>, i: usize) -> &[f64] {
    probs.row(i).to_slice().expect("standard layout")
}

pub fn accuracy(ep: &EnsemblePrediction, labels: &[usize]) -> Result<f64> {
    let n = ep.mean_probs.nrows();
    check_len(n, labels)?;
    let hits = (0..n).filter(|&i| argmax(row(&ep.mean_probs, i)) == labels[i]).count();
    Ok(hits as f64 / n as f64)
}

/// `mean −ln p̄(y|x)` of the ensemble-mean predictor.
pub fn nll(ep: &EnsemblePrediction, labels: &[usize]) -> Result<f64> {
    let n = ep.mean_probs.nrows();
    check_len(n, labels)?;
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        total -= ep.mean_probs[[i, y]].ln();
    }
    Ok(total / n as f64)
}

/// Average NLL of each member on its own.
pub fn member_nll(pred: &PredictionSet) -> Vec<f64> {
    let n = pred.len() as f64;
    pred.probs
        .axis_iter(Axis(0))
        .map(|m| {
            let mut total = 0.0;
            for (i, &y) in pred.labels.iter().enumerate() {
                total -= m[[i, y]].ln();
            }
            total / n
        })
        .collect()
}

/// Equal-width bin of `p` on `[0, 1]` with right-inclusive upper edges.
fn equal_width_bin(p: f64, bins: usize) -> usize {
    let b = (p * bins as f64).ceil() as isize - 1;
    b.clamp(0, bins as isize - 1) as usize
}

/// One bin of a confidence reliability diagram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Mean confidence in the bin (0 when empty).
    pub confidence: f64,
    /// Fraction correct in the bin (0 when empty).
    pub accuracy: f64,
}

pub fn reliability_bins(ep: &EnsemblePrediction, labels: &[usize], bins: usize) -> Result<Vec<ReliabilityBin>> {
    check_bins(bins)?;
    let n = ep.mean_probs.nrows();
    check_len(n, labels)?;
    let mut count = vec![0usize; bins];
    let mut conf = vec![0.0; bins];
    let mut correct = vec![0.0; bins];
    for (i, &y) in labels.iter().enumerate() {
        let r = row(&ep.mean_probs, i);
        let pred = argmax(r);
        let b = equal_width_bin(r[pred], bins);
        count[b] += 1;
        conf[b] += r[pred];
        if pred == y {
            correct[b] += 1.0;
        }
    }
    Ok((0..bins)
        .map(|b| {
            let c = count[b] as f64;
            ReliabilityBin {
                lower: b as f64 / bins as f64,
                upper: (b + 1) as f64 / bins as f64,
                count: count[b],
                confidence: if count[b] > 0 { conf[b] / c } else { 0.0 },
                accuracy: if count[b] > 0 { correct[b] / c } else { 0.0 },
            }
        })
        .collect())
}

/// `Σ_b (n_b/N)·|acc_b − conf_b|` over equal-width confidence bins.
pub fn ece(ep: &EnsemblePrediction, labels: &[usize], bins: usize) -> Result<f64> {
    let table = reliability_bins(ep, labels, bins)?;
    let n = labels.len() as f64;
    Ok(table
        .iter()
        .map(|b| b.count as f64 / n * (b.accuracy - b.confidence).abs())
        .sum())
}

/// Thresholded adaptive calibration error.
///
/// For every class, the probabilities at or above `threshold` are sorted and
/// split into `bins` equal-mass bins; the class score is the mass-weighted
/// mean of `|mean probability − frequency of that class|`. The result
/// averages the class scores over classes with at least one retained entry.
pub fn tace(probs: &Array2<f64>, labels: &[usize], bins: usize, threshold: f64) -> Result<f64> {
    check_bins(bins)?;
    check_len(probs.nrows(), labels)?;
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::Precondition(format!(
            "threshold must lie in [0, 1), got {threshold}"
        )));
    }
    let mut total = 0.0;
    let mut classes = 0usize;
    for k in 0..probs.ncols() {
        let mut entries: Vec<(f64, bool)> = labels
            .iter()
            .enumerate()
            .filter_map(|(i, &y)| {
                let p = probs[[i, k]];
                (p >= threshold).then_some((p, y == k))
            })
            .collect();
        if entries.is_empty() {
            continue;
        }
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        let len = entries.len();
        let r = bins.min(len);
        let mut score = 0.0;
        let mut lo = 0;
        for b in 0..r {
            // equal probabilities never straddle a bin edge
            let mut hi = ((b + 1) * len / r).max(lo);
            while hi > 0 && hi < len && entries[hi].0 == entries[hi - 1].0 {
                hi += 1;
            }
            if hi == lo {
                continue;
            }
            let chunk = &entries[lo..hi];
            let m = chunk.len() as f64;
            let mean_p: f64 = chunk.iter().map(|e| e.0).sum::<f64>() / m;
            let freq = chunk.iter().filter(|e| e.1).count() as f64 / m;
            score += m / len as f64 * (mean_p - freq).abs();
            lo = hi;
        }
        total += score;
        classes += 1;
    }
    Ok(if classes == 0 { 0.0 } else { total / classes as f64 })
}

/// Reliability term of the Murphy decomposition of the Brier score,
/// one-vs-rest per class with equal-width bins, averaged over classes.
pub fn brier_reliability(probs: &Array2<f64>, labels: &[usize], bins: usize) -> Result<f64> {
    check_bins(bins)?;
    let n = probs.nrows();
    check_len(n, labels)?;
    let c = probs.ncols();
    let mut total = 0.0;
    for k in 0..c {
        let mut count = vec![0usize; bins];
        let mut sum_p = vec![0.0; bins];
        let mut hits = vec![0.0; bins];
        for (i, &y) in labels.iter().enumerate() {
            let p = probs[[i, k]];
            let b = equal_width_bin(p, bins);
            count[b] += 1;
            sum_p[b] += p;
            if y == k {
                hits[b] += 1.0;
            }
        }
        for b in 0..bins {
            if count[b] > 0 {
                let m = count[b] as f64;
                let gap = sum_p[b] / m - hits[b] / m;
                total += m / n as f64 * gap * gap;
            }
        }
    }
    Ok(total / c as f64)
}

/// Plug-in mutual information (nats) between two label sequences.
pub fn pairwise_mi(a: &[usize], b: &[usize], num_classes: usize) -> f64 {
    let n = a.len() as f64;
    let mut joint = vec![0usize; num_classes * num_classes];
    let mut pa = vec![0usize; num_classes];
    let mut pb = vec![0usize; num_classes];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * num_classes + y] += 1;
        pa[x] += 1;
        pb[y] += 1;
    }
    let mut mi = 0.0;
    for x in 0..num_classes {
        for y in 0..num_classes {
            let nxy = joint[x * num_classes + y];
            if nxy > 0 {
                let pxy = nxy as f64 / n;
                mi += pxy * (pxy * n * n / (pa[x] as f64 * pb[y] as f64)).ln();
            }
        }
    }
    mi
}

/// Plug-in entropy (nats) of a label sequence.
pub fn entropy(a: &[usize], num_classes: usize) -> f64 {
    let n = a.len() as f64;
    let mut counts = vec![0usize; num_classes];
    for &x in a {
        counts[x] += 1;
    }
    counts
        .into_iter()
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mean over all unordered member pairs of the MI between their argmax outputs.
pub fn mutual_information(pred: &PredictionSet) -> Result<f64> {
    let k = pred.members();
    if k < 2 {
        return Err(Error::Domain(format!(
            "mutual information needs at least 2 members, got {k}"
        )));
    }
    let ep = ensemble_mean(pred);
    let outputs: Vec<Vec<usize>> = ep.member_argmax.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..k {
        for j in i + 1..k {
            total += pairwise_mi(&outputs[i], &outputs[j], pred.num_classes);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub bins: usize,
    pub tace_threshold: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            bins: 15,
            tace_threshold: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub nll: f64,
    pub ece: f64,
    pub tace: f64,
    pub brier_rel: f64,
    /// Nats; absent for single-member ensembles.
    pub mi: Option<f64>,
    pub bin_count: usize,
    pub tace_threshold: f64,
}

pub fn evaluate(pred: &PredictionSet, cfg: &MetricsConfig) -> Result<MetricsReport> {
    let ep = ensemble_mean(pred);
    let labels = &pred.labels;
    Ok(MetricsReport {
        accuracy: accuracy(&ep, labels)?,
        nll: nll(&ep, labels)?,
        ece: ece(&ep, labels, cfg.bins)?,
        tace: tace(&ep.mean_probs, labels, cfg.bins, cfg.tace_threshold)?,
        brier_rel: brier_reliability(&ep.mean_probs, labels, cfg.bins)?,
        mi: if pred.members() >= 2 {
            Some(mutual_information(pred)?)
        } else {
            None
        },
        bin_count: cfg.bins,
        tace_threshold: cfg.tace_threshold,
    })
}

/// Reliability table as CSV with header `lower,upper,count,confidence,accuracy`.
pub fn reliability_csv(bins: &[ReliabilityBin]) -> String {
    let mut out = String::from("lower,upper,count,confidence,accuracy\n");
    for b in bins {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            b.lower, b.upper, b.count, b.confidence, b.accuracy
        ));
    }
    out
}
