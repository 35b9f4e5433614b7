use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use softarm_cli::artifact::RunDir;
use softarm_cli::commands::{blind, eval, opcount, selfmodel, sweep, train};
use softarm_cli::config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(name = "softarm", version, about = "Train and evaluate reservoir controllers for a simulated muscular arm")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for rollouts and evaluation; defaults to all cores.
    #[arg(long, global = true, env = "SOFTARM_THREADS")]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; runs live in `<out>/seed-<seed>`.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one policy per seed.
    Train {
        #[command(flatten)]
        common: Common,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seed: Vec<u64>,
        /// Continue from each run's latest checkpoint.
        #[arg(long)]
        resume: bool,
        /// Stop each seed after this many updates in this invocation.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Evaluate a trained policy on unseen target trajectories.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        episodes: Option<usize>,
        /// Use the mean action instead of sampling.
        #[arg(long)]
        deterministic: bool,
    },
    /// Train and evaluate across a stiffness or reservoir-size axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Fit pose and prediction maps on the run's reservoir.
    SelfmodelFit {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Compare tracking with intermittent sensing against full sensing.
    BlindEval {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Trials per sensing schedule.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Count reservoir operations across sizes.
    Opcount {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(path: &Option<PathBuf>) -> Result<Option<ExperimentConfig>> {
    path.as_ref().map(|p| ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))).transpose()
}

fn load_or_default(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    Ok(load(path)?.unwrap_or_default())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    match cli.command {
        Command::Train { common, seed, resume, stop_after } => {
            let config = load_or_default(&common.config)?;
            for s in seed {
                let run = train::run_train(&config, &common.out, s, resume, stop_after)?;
                println!("seed {s} -> {}", run.root.display());
            }
        }
        Command::Eval { common, seed, episodes, deterministic } => {
            let config = load(&common.config)?;
            let run = RunDir::new(&common.out, seed);
            let m = eval::run_eval(&run, config.as_ref(), episodes, deterministic)?;
            let s = &m.body.summary;
            println!(
                "{} episodes: return {:.4} +- {:.4} (sd), kinetic {:.3e} J, bending {:.3e} J -> {}",
                s.n,
                s.mean,
                s.std_dev,
                m.body.mean_kinetic_energy,
                m.body.mean_bending_energy,
                run.metrics().display()
            );
        }
        Command::Sweep { common, resume, episodes } => {
            let config = load_or_default(&common.config)?;
            let summary = sweep::run_sweep(&config, &common.out, resume, episodes)?;
            println!("{:>12} {:>6} {:>12} {:>12} {:>12}", "value", "seed", "return", "kinetic", "bending");
            for r in &summary.body.rows {
                match (&r.error, r.mean_return) {
                    (None, Some(ret)) => println!(
                        "{:>12} {:>6} {:>12.4} {:>12.3e} {:>12.3e}",
                        r.axis_value,
                        r.seed,
                        ret,
                        r.kinetic_energy.unwrap_or(f64::NAN),
                        r.bending_energy.unwrap_or(f64::NAN)
                    ),
                    (err, _) => {
                        println!("{:>12} {:>6} failed: {}", r.axis_value, r.seed, err.as_deref().unwrap_or("?"))
                    }
                }
            }
            if summary.body.rows.iter().any(|r| r.error.is_some()) {
                anyhow::bail!("some sweep cells failed; see summary.json");
            }
        }
        Command::SelfmodelFit { common, seed, episodes } => {
            let config = load(&common.config)?;
            let fit = selfmodel::run_selfmodel_fit(config.as_ref(), &common.out, seed, episodes)?;
            let r = &fit.body.report;
            println!("pose error {:.4}", r.pose_error);
            for (k, (t, p)) in fit.body.maps.horizons.iter().zip(r.target_errors.iter().zip(&r.tip_errors)) {
                println!("horizon {k}: target error {t:.4}, tip error {p:.4}");
            }
        }
        Command::BlindEval { common, seed, episodes } => {
            let config = load(&common.config)?;
            let result = blind::run_blind_eval(config.as_ref(), &common.out, seed, episodes)?;
            for r in &result.body.results {
                println!(
                    "{:?}: mean {:.4}, median {:.4}, IQR {:.4}",
                    r.schedule, r.summary.mean, r.summary.median, r.summary.iqr
                );
            }
        }
        Command::Opcount { common, seed } => {
            let config = load_or_default(&common.config)?;
            let counts = opcount::run_opcount(&config, &common.out, seed)?;
            for r in &counts.body.rows {
                println!(
                    "n = {:>5}: esn {:>10} (dense {:>10}), spiking {:>12.1} ({:.1} Hz)",
                    r.size, r.esn_ops, r.esn_dense_ops, r.spiking_ops, r.spiking_rate
                );
            }
            let b = &counts.body;
            println!(
                "exponents: esn {:.3} (dense {:.3}), spiking {:.3}",
                b.esn_exponent, b.esn_dense_exponent, b.spiking_exponent
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
