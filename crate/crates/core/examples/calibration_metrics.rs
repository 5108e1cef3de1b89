//! Accuracy, NLL, ECE, TACE, Brier reliability and pairwise mutual
//! information on hand-built prediction sets, plus a reliability table.

use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nuens::metrics::{ensemble_mean, evaluate, mutual_information, reliability_bins, reliability_csv, MetricsConfig};
use nuens::training::PredictionSet;

/// Predicts the top class with probability `conf + skew`, while the label
/// follows `conf`. `skew = 0` is calibrated, positive values overconfident.
fn forecaster(n: usize, skew: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probs = Array2::zeros((n, 3));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let top = rng.random_range(0..3);
        let conf: f64 = rng.random_range(0.34..0.8);
        let shown = (conf + skew).min(0.999);
        for j in 0..3 {
            probs[[i, j]] = if j == top { shown } else { (1.0 - shown) / 2.0 };
        }
        labels.push(if rng.random_bool(conf) {
            top
        } else {
            (top + rng.random_range(1..3)) % 3
        });
    }
    (probs, labels)
}

fn main() -> nuens::Result<()> {
    let cfg = MetricsConfig::default();
    for skew in [0.0, 0.1, 0.2] {
        let (probs, labels) = forecaster(20_000, skew, 1);
        let set = PredictionSet::new(probs.insert_axis(Axis(0)), labels)?;
        let r = evaluate(&set, &cfg)?;
        println!(
            "skew {skew:.1}: acc {:.4} nll {:.4} ece {:.4} tace {:.4} brier_rel {:.5}",
            r.accuracy, r.nll, r.ece, r.tace, r.brier_rel
        );
    }

    let (probs, labels) = forecaster(5000, 0.2, 2);
    let set = PredictionSet::new(probs.insert_axis(Axis(0)), labels)?;
    let bins = reliability_bins(&ensemble_mean(&set), &set.labels, 10)?;
    println!(
        "\nreliability table, overconfident forecaster:\n{}",
        reliability_csv(&bins)
    );

    // two members agreeing on every point versus two unrelated members
    let n = 2000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
    let b: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
    let stack = |outputs: [&Vec<usize>; 2]| {
        let probs = Array3::from_shape_fn((2, n, 4), |(j, i, y)| if outputs[j][i] == y { 1.0 } else { 0.0 });
        PredictionSet::new(probs, vec![0; n])
    };
    println!(
        "MI of identical members:   {:.4} nats (ln 4 = {:.4})",
        mutual_information(&stack([&a, &a])?)?,
        4f64.ln()
    );
    println!(
        "MI of independent members: {:.4} nats",
        mutual_information(&stack([&a, &b])?)?
    );
    Ok(())
}
