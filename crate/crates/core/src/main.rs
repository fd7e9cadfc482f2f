use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cvar_sgd::experiment::{self, RunConfig};
use cvar_sgd::Result;

#[derive(Parser)]
#[command(name = "cvar-bench", version, about = "Train and compare tail-risk minimizing SGD variants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write metrics, tail dumps and metadata.
    Run(ConfigArgs),
    /// Train every (lr, weight decay) cell and keep the best validation mean loss.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated step sizes.
        #[arg(long, default_value = "0.001,0.005,0.01")]
        lrs: String,
        /// Comma-separated weight-decay factors.
        #[arg(long, default_value = "0,0.0001,0.001")]
        wds: String,
    },
    /// Compare final validation metrics across methods, normalized by vanilla.
    Report {
        /// metrics.csv files or run directories.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Write the table here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Base configuration file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// Any other configuration key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let named = [
            ("algo", &self.algo),
            ("alpha", &self.alpha),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("lr", &self.lr),
            ("weight_decay", &self.weight_decay),
            ("dataset", &self.dataset),
            ("format", &self.format),
            ("model", &self.model),
            ("seed", &self.seed),
            ("out", &self.out),
        ];
        for (key, value) in named {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| cvar_sgd::Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}

fn grid(name: &str, text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| cvar_sgd::Error::Config(format!("{name}: cannot parse `{t}`")))
        })
        .collect()
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.resolve()?;
            experiment::run(&cfg)?;
        }
        Command::Sweep { config, lrs, wds } => {
            let cfg = config.resolve()?;
            let result = experiment::sweep(&cfg, &grid("lrs", &lrs)?, &grid("wds", &wds)?, Some(&cfg.out))?;
            let best = result.best_cell();
            println!("best lr={} weight_decay={}", best.lr, best.weight_decay);
        }
        Command::Report { inputs, out } => {
            let table = experiment::report(&inputs)?.to_csv();
            match out {
                Some(path) => std::fs::write(&path, table)
                    .map_err(|e| cvar_sgd::Error::Io {
                        context: path.display().to_string(),
                        source: e,
                    })?,
                None => print!("{table}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
