use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nuens::experiment::{
    cmd_prepare, cmd_report, cmd_search, cmd_sweep_k, cmd_sweep_ood, cmd_sweep_trainsize, cmd_train, Experiment,
    ExperimentConfig,
};
use nuens::training::Method;
use nuens::Result;

/// ν-ensemble experiments: prepare splits, train, search, sweep, report.
#[derive(Debug, Parser)]
#[command(name = "nuens", version)]
struct Cli {
    /// JSON experiment config; the built-in synthetic task when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for independent jobs (0 = all cores).
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the four splits and the random-label assignment.
    Prepare,
    /// Train one ensemble on the prepared splits.
    Train {
        #[arg(long, default_value = "nu")]
        method: String,
    },
    /// Random hyperparameter search with one forced β=0 trial.
    Search,
    /// Both methods across training-set sizes.
    SweepTrainsize,
    /// Both methods across ensemble sizes.
    SweepK,
    /// Trained models across corruption kinds and severities.
    SweepOod,
    /// Summary table and reliability CSVs for every run under a directory.
    Report {
        /// Defaults to the output directory.
        dir: Option<PathBuf>,
    },
}

fn experiment(cli: &Cli) -> Result<Experiment> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    Experiment::new(config, cli.jobs)
}

fn run(cli: &Cli) -> Result<()> {
    if let Command::Report { dir } = &cli.command {
        let dir = match (dir, &cli.out) {
            (Some(d), _) | (None, Some(d)) => d.clone(),
            (None, None) => experiment(cli)?.config.output_dir,
        };
        let report = cmd_report(&dir)?;
        print!("{}", report.text);
        for f in &report.files {
            println!("wrote {}", f.display());
        }
        return Ok(());
    }
    let exp = experiment(cli)?;
    match &cli.command {
        Command::Prepare => {
            for f in cmd_prepare(&exp)? {
                println!("wrote {}", f.display());
            }
        }
        Command::Train { method } => {
            let method: Method = method.parse()?;
            let r = cmd_train(&exp, method)?;
            let t = r.test();
            println!(
                "{method}: test acc {:.4} ece {:.4} nll {:.4} mi {}; bound rhs {:.4}",
                t.accuracy,
                t.ece,
                t.nll,
                t.mi.map_or("-".into(), |v| format!("{v:.4}")),
                r.bound.rhs
            );
        }
        Command::Search => {
            let s = cmd_search(&exp)?;
            let b = &s.trials[s.best_trial];
            println!(
                "best trial {} (lr {:.2e}, wd {}, epochs {}, beta {}): test ece {:.4}",
                b.trial, b.learning_rate, b.weight_decay, b.epochs, b.beta, b.test_ece
            );
        }
        Command::SweepTrainsize => println!("{} rows", cmd_sweep_trainsize(&exp)?.len()),
        Command::SweepK => println!("{} rows", cmd_sweep_k(&exp)?.len()),
        Command::SweepOod => println!("{} rows", cmd_sweep_ood(&exp)?.len()),
        Command::Report { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
