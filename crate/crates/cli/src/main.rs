//! Command-line driver: synthesize recordings, build the augmented dataset,
//! train, evaluate, and run the capacity sweep and augmentation ablation.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thermocae::pipeline::Seeds;

use config::RunConfig;
use failure::{Failure, EXIT_CONFIG};

#[derive(Parser, Debug)]
#[command(name = "thermocae", version, about = "Thermal anomaly detection with a convolutional autoencoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the training, fault-free test and faulty test recordings.
    Synth(Common),
    /// Build the augmented dataset from the training recording.
    Augment(Common),
    /// Train a model on the augmented dataset.
    Train(Common),
    /// Score the test recordings and write ROC curves, AUCs and heatmaps.
    Eval(Common),
    /// Train and evaluate every num_layers x latent_dim combination.
    Sweep(Common),
    /// Retrain across dataset sizes and with single stages left out.
    Ablate(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Sets every seed, including the shuffle seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Encoder depth; a comma-separated list for `sweep`.
    #[arg(long, value_delimiter = ',')]
    layers: Vec<usize>,
    /// Latent dimension; a comma-separated list for `sweep`.
    #[arg(long, value_delimiter = ',')]
    latent: Vec<usize>,
    /// Dataset size; a comma-separated list for `ablate`.
    #[arg(long = "n-aug", value_delimiter = ',')]
    n_aug: Vec<usize>,
    /// Heater currents of the faulty recordings, A.
    #[arg(long = "heater-current", value_delimiter = ',')]
    heater_current: Vec<f64>,
    /// Augmentation stage to switch off; for `ablate`, the stages to leave out.
    #[arg(long, value_delimiter = ',')]
    disable: Vec<String>,
}

fn single<T: Copy>(values: &[T], key: &str) -> Result<Option<T>, Failure> {
    match values {
        [] => Ok(None),
        [v] => Ok(Some(*v)),
        _ => Err(Failure::config(key, format!("{key} takes one value for this command"))),
    }
}

/// The configuration file with the command-line overrides applied.
fn effective_config(cmd: &Command, args: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seeds = Seeds::all(seed);
        cfg.train.shuffle_seed = seed;
    }
    if !args.heater_current.is_empty() {
        cfg.eval.heater_currents = args.heater_current.clone();
    }
    match cmd {
        Command::Sweep(_) => {
            if !args.layers.is_empty() {
                cfg.sweep.num_layers = args.layers.clone();
            }
            if !args.latent.is_empty() {
                cfg.sweep.latent_dims = args.latent.clone();
            }
        }
        _ => {
            if let Some(l) = single(&args.layers, "model.num_layers")? {
                cfg.model.num_layers = l;
            }
            if let Some(z) = single(&args.latent, "model.latent_dim")? {
                cfg.model.latent_dim = z;
            }
        }
    }
    match cmd {
        Command::Ablate(_) => {
            if !args.n_aug.is_empty() {
                cfg.ablate.counts = args.n_aug.clone();
            }
            if !args.disable.is_empty() {
                cfg.ablate.stages = args.disable.clone();
            }
        }
        _ => {
            if let Some(n) = single(&args.n_aug, "augment.n_total")? {
                cfg.augment.n_total = n;
            }
            for stage in &args.disable {
                cfg.augment
                    .stages
                    .disable(stage)
                    .map_err(|e| Failure::config("augment.stages", e.to_string()))?;
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let args = match &cli.command {
        Command::Synth(a)
        | Command::Augment(a)
        | Command::Train(a)
        | Command::Eval(a)
        | Command::Sweep(a)
        | Command::Ablate(a) => a,
    };
    let cfg = effective_config(&cli.command, args)?;
    commands::write_run_files(&cfg, &args.out)?;
    let out = args.out.as_path();
    match cli.command {
        Command::Synth(_) => commands::synth(&cfg, out),
        Command::Augment(_) => commands::augment(&cfg, out),
        Command::Train(_) => commands::train(&cfg, out),
        Command::Eval(_) => commands::eval(&cfg, out),
        Command::Sweep(_) => commands::sweep(&cfg, out),
        Command::Ablate(_) => commands::ablate(&cfg, out),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or_default().trim_start_matches("error: ");
            let failure = Failure {
                error: "usage",
                key: None,
                path: None,
                message: first.to_string(),
                code: EXIT_CONFIG,
            };
            eprintln!("{}", failure.line());
            std::process::exit(failure.code);
        }
    };
    if let Err(failure) = run(cli) {
        eprintln!("{}", failure.line());
        std::process::exit(failure.code);
    }
}
