//! Assembles the ensemble NLL bound for a trained ν-ensemble: average
//! training NLL, minus the variance credit on unlabeled data, plus the
//! per-member complexity term.

use nuens::data::{make_synthetic, split, SplitSpec};
use nuens::labeling::draw_assignment;
use nuens::metrics::{ensemble_mean, nll};
use nuens::nn::ArchSpec;
use nuens::optim::OptConfig;
use nuens::theory::{assemble_bound, h_complexity, hoeffding_aggregate, jensen_check, BoundConfig};
use nuens::training::{predict, predict_features, train_nu, EnsembleConfig};

fn main() -> nuens::Result<()> {
    let data = make_synthetic(4, 600, 10, 0.9, 5)?;
    let spec = SplitSpec {
        train_size: 400,
        val_size: 0,
        unlabeled_size: 1000,
        test_size: 1000,
        seed: 5,
    };
    let splits = split(&data, &spec)?.standardized()?;
    let bound_cfg = BoundConfig {
        delta: 0.05,
        gamma_b: 1.0,
        ln_a: 0.0,
        psi: 0.0,
        n: 0,
        m: 0,
        k: 0,
    };

    let mut reports = Vec::new();
    for run in 0..3u64 {
        let config = EnsembleConfig {
            members: 4,
            beta: 0.5,
            opt: OptConfig {
                learning_rate: 1e-3,
                weight_decay: 0.01,
                epochs: 40,
                batch_size: 50,
                ..OptConfig::default()
            },
            arch: ArchSpec::new(10, vec![32], 4)?,
            base_seed: run,
            unlabeled_batch_size: 50,
            augment_strength: 0.0,
            augment_unlabeled: false,
            member_seeds: None,
        };
        let assignment = draw_assignment(1000, 4, 4, 100 + run)?;
        let model = train_nu(&splits.train, &splits.unlabeled, &assignment, &config)?;

        let test = predict(&model, &splits.test)?;
        let test_nll = nll(&ensemble_mean(&test), &test.labels)?;
        let on_u = predict_features(
            &model,
            splits.unlabeled.features.view(),
            splits.unlabeled_truth.labels().to_vec(),
        )?;
        let report = assemble_bound(&model, &splits.train, &on_u, &bound_cfg, Some(test_nll))?;
        let jensen = jensen_check(&test)?;
        println!(
            "run {run}: train nll {:.4}  v_half {:.4}  mean h {:.4}  rhs {:.4}  test nll {:.4}  jensen {:.4} <= {:.4}",
            report.avg_train_nll,
            report.v_half,
            report.mean_complexity(),
            report.rhs,
            test_nll,
            jensen.lhs,
            jensen.rhs
        );
        reports.push(report);
    }

    let agg = hoeffding_aggregate(&reports, 3.0, 1.0, 0.05, 0.05)?;
    println!(
        "\naggregated over {} runs: {:.4} (train slack {:.4}, complexity slack {:.4})",
        agg.runs, agg.value, agg.train_slack, agg.complexity_slack
    );

    let example = BoundConfig {
        n: 1000,
        m: 1000,
        k: 10,
        ..bound_cfg
    };
    println!("h(0) with K=10, n=m=1000, δ=0.05: {:.6}", h_complexity(0.0, &example)?);
    Ok(())
}
