use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use neural_nmf_cli::commands;
use neural_nmf_cli::RunConfig;

/// Neural NMF experiments: synthetic data, training, evaluation and
/// gradient checks.
#[derive(Parser)]
#[command(name = "neural-nmf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic hierarchical dataset.
    Generate(Overrides),
    /// Train one or more seeded trials.
    Train(Overrides),
    /// Compare analytic and finite-difference gradients on a random instance.
    Gradcheck(Overrides),
    /// Score stored A-matrices on a dataset.
    Eval(Overrides),
}

#[derive(Args)]
struct Overrides {
    /// key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value settings, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<String>,
    /// nmf, ssnmf, hnmf or neural.
    #[arg(long)]
    method: Option<String>,
    /// Comma-separated layer ranks, e.g. 9,4,2.
    #[arg(long)]
    ranks: Option<String>,
    /// none, semi:F or full.
    #[arg(long)]
    supervision: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    /// Gradient step size.
    #[arg(long)]
    gamma: Option<String>,
    /// Neural NMF outer iterations.
    #[arg(long)]
    iters: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// Input matrix (headerless CSV, term-document CSV or MatrixMarket).
    #[arg(long)]
    data: Option<String>,
    /// doc_id,class file.
    #[arg(long)]
    labels: Option<String>,
    /// Trial directory holding A0.csv, A1.csv, ...
    #[arg(long)]
    model: Option<String>,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(p) = &self.config {
            cfg.apply_file(p)?;
        }
        for pair in &self.set {
            cfg.apply_pair(pair).with_context(|| format!("--set {pair}"))?;
        }
        let flags = [
            ("seed", &self.seed),
            ("method", &self.method),
            ("ranks", &self.ranks),
            ("supervision", &self.supervision),
            ("lambda", &self.lambda),
            ("gamma", &self.gamma),
            ("iters", &self.iters),
            ("trials", &self.trials),
            ("out", &self.out),
            ("data", &self.data),
            ("labels", &self.labels),
            ("model", &self.model),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v).with_context(|| format!("--{key}"))?;
            }
        }
        Ok(cfg)
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("NEURAL_NMF_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .with_context(|| format!("NEURAL_NMF_THREADS must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    configure_threads()?;
    match cli.command {
        Command::Generate(o) => commands::generate(&o.resolve()?).map(|_| true),
        Command::Train(o) => commands::train(&o.resolve()?).map(|_| true),
        Command::Gradcheck(o) => commands::gradcheck(&o.resolve()?),
        Command::Eval(o) => commands::eval(&o.resolve()?).map(|_| true),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
