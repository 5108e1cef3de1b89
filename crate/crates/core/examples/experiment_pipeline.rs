//! The full command sequence on a small config, through the library API the
//! `nuens` binary wraps: prepare, train both methods, search, three sweeps
//! and the report.

use nuens::data::CorruptionKind;
use nuens::experiment::{
    cmd_prepare, cmd_report, cmd_search, cmd_sweep_k, cmd_sweep_ood, cmd_sweep_trainsize, cmd_train, DataSource,
    Experiment, ExperimentConfig, SplitSizes,
};
use nuens::training::Method;

fn main() -> nuens::Result<()> {
    let mut config = ExperimentConfig::default();
    config.data = DataSource::Synthetic {
        num_classes: 4,
        per_class: 600,
        dim: 20,
        spread: 0.9,
    };
    config.split = SplitSizes {
        train: 400,
        val: 400,
        unlabeled: 800,
        test: 800,
    };
    config.model.hidden_dims = vec![64, 64];
    config.model.opt.learning_rate = 1e-3;
    config.model.opt.weight_decay = 0.1;
    config.model.opt.epochs = 20;
    config.model.beta = 0.1;
    config.sweep.train_sizes = vec![100, 200, 400];
    config.sweep.corruptions = vec![CorruptionKind::GaussianNoise, CorruptionKind::FeatureDropout];
    config.sweep.severities = vec![1, 3, 5];
    config.search.trials = 4;
    config.search.epochs = vec![10, 20];
    config.search.weight_decay = vec![0.1, 0.01];
    config.search.beta = vec![0.1, 0.25];
    config.output_dir = std::env::temp_dir().join("nuens_pipeline");
    println!("config hash {}", config.hash());

    let exp = Experiment::new(config, 1)?;
    for path in cmd_prepare(&exp)? {
        println!("wrote {}", path.display());
    }
    for method in [Method::Standard, Method::Nu] {
        let r = cmd_train(&exp, method)?;
        println!("{method}: test ece {:.4}, bound rhs {:.4}", r.test().ece, r.bound.rhs);
    }
    let search = cmd_search(&exp)?;
    let best = &search.trials[search.best_trial];
    println!(
        "search: best trial {} with beta {} (val nll {:.4})",
        best.trial, best.beta, best.val_nll
    );
    println!("sweep-trainsize: {} rows", cmd_sweep_trainsize(&exp)?.len());
    for row in cmd_sweep_k(&exp)? {
        println!(
            "K={} {:<8} ece {:.4} expected_variance {:.4}",
            row.k,
            row.method.as_str(),
            row.ece,
            row.expected_variance
        );
    }
    println!("sweep-ood: {} rows", cmd_sweep_ood(&exp)?.len());
    print!("{}", cmd_report(&exp.config.output_dir)?.text);
    Ok(())
}
