//! Accuracy and ECE of one trained ensemble under every corruption kind at
//! every severity, in the standardised input space.

use nuens::data::{corrupt, make_synthetic, split, CorruptionKind, CorruptionSpec, SplitSpec};
use nuens::metrics::{evaluate, MetricsConfig};
use nuens::nn::ArchSpec;
use nuens::optim::OptConfig;
use nuens::training::{predict, train_standard, EnsembleConfig};

fn main() -> nuens::Result<()> {
    let data = make_synthetic(4, 800, 20, 0.9, 2)?;
    let spec = SplitSpec {
        train_size: 1000,
        val_size: 0,
        unlabeled_size: 0,
        test_size: 2000,
        seed: 2,
    };
    let splits = split(&data, &spec)?.standardized()?;
    let config = EnsembleConfig {
        members: 3,
        beta: 0.0,
        opt: OptConfig {
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 100,
            ..OptConfig::default()
        },
        arch: ArchSpec::new(20, vec![64, 64], 4)?,
        base_seed: 2,
        unlabeled_batch_size: 100,
        augment_strength: 0.0,
        augment_unlabeled: false,
        member_seeds: None,
    };
    let model = train_standard(&splits.train, &config)?;
    let metrics = MetricsConfig::default();

    let clean = evaluate(&predict(&model, &splits.test)?, &metrics)?;
    println!("clean: acc {:.4} ece {:.4}", clean.accuracy, clean.ece);
    println!("{:<16} {:>3} {:>8} {:>8}", "corruption", "s", "acc", "ece");
    for kind in CorruptionKind::ALL {
        for severity in 1..=5 {
            let shifted = corrupt(
                &splits.test,
                &CorruptionSpec {
                    kind,
                    severity,
                    seed: 40 + severity as u64,
                },
            )?;
            let r = evaluate(&predict(&model, &shifted)?, &metrics)?;
            println!("{:<16} {severity:>3} {:>8.4} {:>8.4}", kind.as_str(), r.accuracy, r.ece);
        }
    }
    Ok(())
}
