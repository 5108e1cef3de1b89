use std::collections::HashSet;

use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nuens::data::{
    augment, corrupt, corrupt_features, load_csv, load_dataset, load_idx, make_synthetic, save_csv, save_dataset,
    split, write_idx_images, write_idx_labels, CorruptionKind, CorruptionSpec, CsvSchema, Dataset, SplitSpec,
};
use nuens::metrics::{accuracy, ensemble_mean};
use nuens::nn::{ArchSpec, Batch};
use nuens::optim::OptConfig;
use nuens::training::{predict, train_standard, EnsembleConfig};

fn toy(n: usize) -> Dataset {
    let features = Array2::from_shape_fn((n, 3), |(i, j)| (i * 3 + j) as f64);
    Dataset::new(features, (0..n).map(|i| i % 2).collect(), 2).unwrap()
}

#[test]
fn random_specs_give_disjoint_exact_splits() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ds = toy(200);
    for _ in 0..100 {
        let spec = SplitSpec {
            train_size: rng.random_range(1..50),
            val_size: rng.random_range(1..50),
            unlabeled_size: rng.random_range(1..50),
            test_size: rng.random_range(1..50),
            seed: rng.random(),
        };
        let s = split(&ds, &spec).unwrap();
        let idx = &s.indices;
        assert_eq!(idx.train.len(), spec.train_size);
        assert_eq!(idx.val.len(), spec.val_size);
        assert_eq!(idx.unlabeled.len(), spec.unlabeled_size);
        assert_eq!(idx.test.len(), spec.test_size);
        let all: HashSet<usize> = idx
            .train
            .iter()
            .chain(&idx.val)
            .chain(&idx.unlabeled)
            .chain(&idx.test)
            .copied()
            .collect();
        assert_eq!(all.len(), spec.total());
        assert_eq!(s.unlabeled.len(), spec.unlabeled_size);
        assert_eq!(s.unlabeled_truth.len(), spec.unlabeled_size);
    }
}

#[test]
fn different_seeds_give_different_permutations() {
    let ds = toy(100);
    let orders: HashSet<Vec<usize>> = (0..20)
        .map(|seed| {
            let spec = SplitSpec {
                train_size: 25,
                val_size: 25,
                unlabeled_size: 25,
                test_size: 25,
                seed,
            };
            let i = split(&ds, &spec).unwrap().indices;
            [i.train, i.val, i.unlabeled, i.test].concat()
        })
        .collect();
    assert_eq!(orders.len(), 20);
}

#[test]
fn standardisation_uses_training_statistics_only() {
    let ds = make_synthetic(3, 200, 5, 1.3, 11).unwrap();
    let spec = SplitSpec {
        train_size: 150,
        val_size: 100,
        unlabeled_size: 200,
        test_size: 150,
        seed: 2,
    };
    let raw = split(&ds, &spec).unwrap();
    let std = raw.clone().standardized().unwrap();
    let n = std.train.len() as f64;
    for col in std.train.features.columns() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9);
        assert!((var.sqrt() - 1.0).abs() < 1e-9);
    }
    // other splits are mapped with the training statistics, not their own
    for j in 0..5 {
        let col = raw.train.features.column(j);
        let mu = col.sum() / n;
        let sd = (col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt();
        for (r, s) in raw.test.features.column(j).iter().zip(std.test.features.column(j)) {
            assert!(((r - mu) / sd - s).abs() < 1e-12);
        }
    }
    assert_eq!(std.unlabeled.feature_scale, std.train.feature_scale);
}

fn mean_sq_perturbation(x: &Array2<f64>, kind: CorruptionKind, severity: u8) -> f64 {
    let y = corrupt_features(
        x,
        &CorruptionSpec {
            kind,
            severity,
            seed: 5,
        },
    )
    .unwrap();
    (&y - x).mapv(|v| v * v).mean().unwrap()
}

#[test]
fn perturbation_is_monotone_in_severity_for_every_kind() {
    let x = make_synthetic(4, 500, 20, 0.9, 1).unwrap().features;
    for kind in CorruptionKind::ALL {
        let mse: Vec<f64> = (1..=5).map(|s| mean_sq_perturbation(&x, kind, s)).collect();
        for w in mse.windows(2) {
            assert!(w[1] >= w[0], "{kind}: {mse:?}");
        }
        assert!(mse[4] > mse[0], "{kind}: {mse:?}");
    }
}

#[test]
fn dropout_fraction_at_top_severity() {
    let x = Array2::from_elem((100, 100), 1.0);
    let y = corrupt_features(
        &x,
        &CorruptionSpec {
            kind: CorruptionKind::FeatureDropout,
            severity: 5,
            seed: 9,
        },
    )
    .unwrap();
    let zeroed = y.iter().filter(|&&v| v == 0.0).count() as f64 / 1e4;
    assert!((zeroed - 0.10).abs() < 0.01, "{zeroed}");
}

#[test]
fn corruption_keeps_labels_and_is_seeded() {
    let ds = make_synthetic(2, 50, 4, 0.5, 0).unwrap();
    let spec = CorruptionSpec {
        kind: CorruptionKind::GaussianNoise,
        severity: 3,
        seed: 1,
    };
    let a = corrupt(&ds, &spec).unwrap();
    assert_eq!(a, corrupt(&ds, &spec).unwrap());
    assert_eq!(a.labels, ds.labels);
    assert_ne!(a.features, ds.features);
}

#[test]
fn jitter_variance_matches_strength() {
    let batch = Batch::new(Array2::zeros((1000, 100)), vec![0; 1000]).unwrap();
    let out = augment(&batch, 0.1, 4).unwrap();
    let n = out.inputs.len() as f64;
    let mean = out.inputs.sum() / n;
    let var = out.inputs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    assert!((var / 0.01 - 1.0).abs() < 0.05, "{var}");
    assert_eq!(out, augment(&batch, 0.1, 4).unwrap());
}

fn small_config(d: usize, c: usize, hidden: Vec<usize>, members: usize, epochs: usize, lr: f64) -> EnsembleConfig {
    EnsembleConfig {
        members,
        beta: 0.0,
        opt: OptConfig {
            learning_rate: lr,
            weight_decay: 0.0,
            epochs,
            batch_size: 32,
            ..OptConfig::default()
        },
        arch: ArchSpec::new(d, hidden, c).unwrap(),
        base_seed: 1,
        unlabeled_batch_size: 32,
        augment_strength: 0.0,
        augment_unlabeled: false,
        member_seeds: None,
    }
}

#[test]
fn zero_spread_blobs_are_fit_exactly() {
    let ds = make_synthetic(4, 25, 6, 0.0, 3).unwrap();
    let model = train_standard(&ds, &small_config(6, 4, vec![16], 1, 300, 1e-2)).unwrap();
    let ep = ensemble_mean(&predict(&model, &ds).unwrap());
    assert_eq!(accuracy(&ep, &ds.labels).unwrap(), 1.0);
}

#[test]
fn overlapping_blobs_are_neither_trivial_nor_hopeless() {
    let ds = make_synthetic(4, 1000, 20, 0.9, 0).unwrap();
    let spec = SplitSpec {
        train_size: 1000,
        val_size: 0,
        unlabeled_size: 0,
        test_size: 2000,
        seed: 0,
    };
    let s = split(&ds, &spec).unwrap().standardized().unwrap();
    let model = train_standard(&s.train, &small_config(20, 4, vec![32], 10, 20, 1e-3)).unwrap();
    let acc = accuracy(&ensemble_mean(&predict(&model, &s.test).unwrap()), &s.test.labels).unwrap();
    assert!(acc > 0.25 && acc < 1.0, "{acc}");
}

#[test]
fn synthetic_is_bitwise_deterministic() {
    assert_eq!(
        make_synthetic(3, 40, 7, 0.9, 8).unwrap(),
        make_synthetic(3, 40, 7, 0.9, 8).unwrap()
    );
    assert_ne!(
        make_synthetic(3, 40, 7, 0.9, 8).unwrap(),
        make_synthetic(3, 40, 7, 0.9, 9).unwrap()
    );
}

#[test]
fn csv_string_labels_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.csv");
    std::fs::write(&path, "f1,f2,label\n1,2,a\n3,4,b\n5,6,a\n").unwrap();
    let ds = load_csv(&path, &CsvSchema::new("label")).unwrap();
    assert_eq!((ds.len(), ds.num_classes, ds.labels.clone()), (3, 2, vec![0, 1, 0]));

    let out = dir.path().join("b.csv");
    save_csv(&out, &ds, "label").unwrap();
    assert_eq!(load_csv(&out, &CsvSchema::new("label")).unwrap(), ds);

    let bad = dir.path().join("bad.csv");
    let mut text = String::from("f1,label\n");
    for i in 1..=8 {
        text.push_str(if i == 7 { "oops,0\n" } else { "1.5,1\n" });
    }
    std::fs::write(&bad, text).unwrap();
    let err = load_csv(&bad, &CsvSchema::new("label")).unwrap_err().to_string();
    assert!(err.contains('7'), "{err}");
}

#[test]
fn idx_pixels_scale_to_unit_interval() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
    let mut pixels = vec![0u8; 2 * 784];
    pixels[0] = 255;
    pixels[784 + 5] = 51;
    write_idx_images(&img, 28, 28, &pixels).unwrap();
    write_idx_labels(&lab, &[3, 7]).unwrap();
    let ds = load_idx(&img, &lab).unwrap();
    assert_eq!((ds.len(), ds.dim()), (2, 784));
    assert_eq!(ds.features[[0, 0]], 1.0);
    assert!((ds.features[[1, 5]] - 0.2).abs() < 1e-15);
    assert!(ds.features.iter().all(|v| (0.0..=1.0).contains(v)));

    write_idx_labels(&lab, &[3]).unwrap();
    assert!(load_idx(&img, &lab).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn persisted_dataset_round_trips(seed in any::<u64>(), c in 2usize..6, dim in 2usize..8) {
        let dir = tempfile::tempdir().unwrap();
        let split = split(
            &make_synthetic(c, 10, dim, 0.7, seed).unwrap(),
            &SplitSpec { train_size: 10, val_size: 5, unlabeled_size: 0, test_size: 5, seed },
        )
        .unwrap()
        .standardized()
        .unwrap();
        let path = dir.path().join("train.json");
        save_dataset(&path, &split.train).unwrap();
        prop_assert_eq!(load_dataset(&path).unwrap(), split.train);
    }
}
