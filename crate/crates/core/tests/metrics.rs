use ndarray::{Array2, Array3, Axis};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use nuens::metrics::{
    accuracy, brier_reliability, ece, ensemble_mean, entropy, evaluate, member_nll, mutual_information, nll,
    pairwise_mi, tace, MetricsConfig,
};
use nuens::theory::jensen_check;
use nuens::training::PredictionSet;

/// Softmax of Gaussian logits at a random temperature, so sets range from
/// nearly uniform to nearly one-hot.
fn random_set(rng: &mut impl Rng, k: usize, n: usize, c: usize) -> PredictionSet {
    let scale = rng.random_range(0.1..8.0);
    let mut probs = Array3::<f64>::zeros((k, n, c));
    for mut row in probs.lanes_mut(Axis(2)) {
        let logits: Vec<f64> = (0..c)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                scale * z
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        for (p, l) in row.iter_mut().zip(&logits) {
            *p = (l - max).exp() / z;
        }
    }
    let labels = (0..n).map(|_| rng.random_range(0..c)).collect();
    PredictionSet::new(probs, labels).unwrap()
}

#[test]
fn ensemble_nll_never_exceeds_mean_member_nll() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let (k, n, c) = (rng.random_range(1..6), rng.random_range(1..40), rng.random_range(2..8));
        let set = random_set(&mut rng, k, n, c);
        let ens = nll(&ensemble_mean(&set), &set.labels).unwrap();
        let members = member_nll(&set);
        let mean = members.iter().sum::<f64>() / k as f64;
        assert!(ens <= mean + 1e-12, "{ens} > {mean}");
        assert!(jensen_check(&set).unwrap().holds);
    }
}

#[test]
fn mean_rows_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let set = random_set(&mut rng, 5, 200, 6);
    for row in ensemble_mean(&set).mean_probs.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-6);
    }
}

fn calibration_scores(probs: &Array2<f64>, labels: &[usize]) -> (f64, f64, f64) {
    let set = PredictionSet::new(probs.clone().insert_axis(Axis(0)), labels.to_vec()).unwrap();
    let ep = ensemble_mean(&set);
    (
        ece(&ep, labels, 15).unwrap(),
        tace(probs, labels, 15, 0.01).unwrap(),
        brier_reliability(probs, labels, 15).unwrap(),
    )
}

#[test]
fn calibration_scores_ignore_sample_order_and_class_names() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let set = random_set(&mut rng, 1, 300, 4);
        let probs = set.probs.index_axis(Axis(0), 0).to_owned();
        let base = calibration_scores(&probs, &set.labels);

        let mut order: Vec<usize> = (0..300).collect();
        order.shuffle(&mut rng);
        let shuffled = probs.select(Axis(0), &order);
        let labels: Vec<usize> = order.iter().map(|&i| set.labels[i]).collect();
        let moved = calibration_scores(&shuffled, &labels);

        let mut classes: Vec<usize> = (0..4).collect();
        classes.shuffle(&mut rng);
        let mut relabeled = Array2::zeros((300, 4));
        for i in 0..300 {
            for j in 0..4 {
                relabeled[[i, classes[j]]] = probs[[i, j]];
            }
        }
        let new_labels: Vec<usize> = set.labels.iter().map(|&y| classes[y]).collect();
        let renamed = calibration_scores(&relabeled, &new_labels);

        for other in [moved, renamed] {
            assert!((base.0 - other.0).abs() < 1e-12);
            assert!((base.1 - other.1).abs() < 1e-12);
            assert!((base.2 - other.2).abs() < 1e-12);
        }
    }
}

/// Draws a confidence, predicts the top class with it and spreads the rest
/// evenly; the label follows the predicted distribution exactly.
fn calibrated_oracle(n: usize, c: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probs = Array2::zeros((n, c));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let top = rng.random_range(0..c);
        let conf = rng.random_range(1.0 / c as f64..1.0);
        for j in 0..c {
            probs[[i, j]] = if j == top { conf } else { (1.0 - conf) / (c - 1) as f64 };
        }
        let y = if rng.random_bool(conf) {
            top
        } else {
            let other = rng.random_range(0..c - 1);
            if other >= top {
                other + 1
            } else {
                other
            }
        };
        labels.push(y);
    }
    (probs, labels)
}

#[test]
fn calibrated_oracle_scores_near_zero() {
    let (probs, labels) = calibrated_oracle(100_000, 4, 11);
    let (e, t, b) = calibration_scores(&probs, &labels);
    assert!(e < 0.02, "ece {e}");
    assert!(t < 0.02, "tace {t}");
    assert!(b < 0.01, "brier_rel {b}");
}

#[test]
fn fixture_with_matching_bins_has_zero_ece() {
    // per bin, confidence equals accuracy: 0.75 on four rows with three hits
    let probs = Array2::from_shape_vec((4, 2), vec![0.75, 0.25, 0.75, 0.25, 0.75, 0.25, 0.25, 0.75]).unwrap();
    let set = PredictionSet::new(probs.insert_axis(Axis(0)), vec![0, 0, 1, 1]).unwrap();
    assert!(ece(&ensemble_mean(&set), &set.labels, 15).unwrap().abs() < 1e-15);
}

#[test]
fn metric_worked_values() {
    // uniform over ten classes
    let u = PredictionSet::new(Array3::from_elem((1, 3, 10), 0.1), vec![1, 2, 3]).unwrap();
    let ep = ensemble_mean(&u);
    assert!((nll(&ep, &u.labels).unwrap() - 10f64.ln()).abs() < 1e-12);
    assert_eq!(accuracy(&ep, &u.labels).unwrap(), 0.0);

    // members at truth 1.0 and 0.25
    let two = PredictionSet::new(
        Array3::from_shape_vec((2, 1, 2), vec![1.0, 0.0, 0.25, 0.75]).unwrap(),
        vec![0],
    )
    .unwrap();
    assert!((nll(&ensemble_mean(&two), &two.labels).unwrap() - 0.625f64.ln().abs()).abs() < 1e-12);

    // brier: constant 0.9 on class 0, half the labels class 0
    let probs = Array2::from_shape_fn((10, 2), |(_, j)| if j == 0 { 0.9 } else { 0.1 });
    let labels: Vec<usize> = (0..10).map(|i| i % 2).collect();
    assert!((brier_reliability(&probs, &labels, 15).unwrap() - 0.16).abs() < 1e-12);
}

#[test]
fn independent_members_share_almost_no_information() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 100_000;
    let draw = |rng: &mut ChaCha8Rng| -> Vec<usize> { (0..n).map(|_| rng.random_range(0..4)).collect() };
    let (a, b) = (draw(&mut rng), draw(&mut rng));
    let mi = pairwise_mi(&a, &b, 4);
    assert!(mi >= -1e-12 && mi < 0.01, "{mi}");
}

fn one_hot_set(outputs: &[Vec<usize>], c: usize) -> PredictionSet {
    let (k, n) = (outputs.len(), outputs[0].len());
    let probs = Array3::from_shape_fn((k, n, c), |(j, i, y)| if outputs[j][i] == y { 1.0 } else { 0.0 });
    PredictionSet::new(probs, vec![0; n]).unwrap()
}

#[test]
fn pairwise_decomposition() {
    let n = 4000;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a: Vec<usize> = (0..n).map(|i| i % 4).collect();
    let same = mutual_information(&one_hot_set(&[a.clone(), a.clone()], 4)).unwrap();
    assert!((same - 4f64.ln()).abs() < 1e-12);

    let indep: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
    let trio = mutual_information(&one_hot_set(&[a.clone(), a.clone(), indep.clone()], 4)).unwrap();
    let expect = (entropy(&a, 4) + 2.0 * pairwise_mi(&a, &indep, 4)) / 3.0;
    assert!((trio - expect).abs() < 1e-12);
    assert!((trio - 4f64.ln() / 3.0).abs() < 0.01);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn mi_is_symmetric_and_bounded(seed in any::<u64>(), c in 2usize..7, n in 1usize..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bias = rng.random_range(0.0..1.0);
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let b: Vec<usize> = a.iter().map(|&x| if rng.random_bool(bias) { x } else { rng.random_range(0..c) }).collect();
        let ab = pairwise_mi(&a, &b, c);
        prop_assert!((ab - pairwise_mi(&b, &a, c)).abs() < 1e-12);
        prop_assert!(ab >= -1e-12);
        prop_assert!(ab <= entropy(&a, c).min(entropy(&b, c)) + 1e-9);
    }

    #[test]
    fn report_fields_are_in_range(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = random_set(&mut rng, 3, 100, 5);
        let r = evaluate(&set, &MetricsConfig::default()).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.accuracy));
        prop_assert!((0.0..=1.0).contains(&r.ece));
        prop_assert!((0.0..=1.0).contains(&r.tace));
        prop_assert!(r.brier_rel >= 0.0 && r.nll >= 0.0);
        prop_assert!(r.mi.unwrap() >= -1e-12);
    }
}
