//! When every member fits its own random labels, the empirical variance on
//! the unlabeled set approaches `(K−1)/(2cK)`.
//!
//! The closed form is compared with exhaustive enumeration for small `c`,
//! then with an actual ν-ensemble trained on a heavy random-label weight.

use nuens::data::{make_synthetic, split, SplitSpec};
use nuens::labeling::{draw_assignment, hit_rate};
use nuens::nn::ArchSpec;
use nuens::optim::OptConfig;
use nuens::theory::{empirical_variance, expected_variance, expected_variance_enumerated};
use nuens::training::{predict_features, random_label_fit, train_nu, EnsembleConfig};

fn main() -> nuens::Result<()> {
    println!("  c  K   closed form   enumeration");
    for c in [2, 3, 4, 6] {
        for k in 1..=c {
            println!(
                "{c:>3} {k:>2}   {:>11.6}   {:>11.6}",
                expected_variance(c, k)?,
                expected_variance_enumerated(c, k)?
            );
        }
    }

    let data = make_synthetic(4, 300, 10, 0.9, 3)?;
    let spec = SplitSpec {
        train_size: 400,
        val_size: 0,
        unlabeled_size: 200,
        test_size: 0,
        seed: 3,
    };
    let splits = split(&data, &spec)?.standardized()?;
    let assignment = draw_assignment(200, 4, 4, 9)?;
    println!(
        "\nhit rate of the drawn labels on U: {:.3} (K = c, so every point has its true label once)",
        hit_rate(&assignment, splits.unlabeled_truth.labels())?
    );

    let config = EnsembleConfig {
        members: 4,
        beta: 1.0,
        opt: OptConfig {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 50,
            ..OptConfig::default()
        },
        arch: ArchSpec::new(10, vec![128, 128], 4)?,
        base_seed: 3,
        unlabeled_batch_size: 50,
        augment_strength: 0.0,
        augment_unlabeled: false,
        member_seeds: None,
    };
    let model = train_nu(&splits.train, &splits.unlabeled, &assignment, &config)?;
    let fit = random_label_fit(&model, &splits.unlabeled, &assignment)?;
    let on_u = predict_features(
        &model,
        splits.unlabeled.features.view(),
        splits.unlabeled_truth.labels().to_vec(),
    )?;
    println!("per-member accuracy on own random labels: {fit:.3?}");
    println!(
        "v_half on U: {:.5}   expected under perfect fit: {:.5}",
        empirical_variance(&on_u).v_half,
        expected_variance(4, 4)?
    );
    Ok(())
}
