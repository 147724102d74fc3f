use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nft_cli::{exit_code, RunConfig};
use nft_core::{Result, Split, Statistic};

#[derive(Parser)]
#[command(name = "nft", version, about = "Neural Fourier Transform forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `out` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes checkpoint.nft, history.csv and config.resolved.toml.
    Train(Common),
    /// Evaluate a checkpoint; writes report.txt.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// train, val or test.
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Forecast past the end of every series; writes forecast.csv.
    Forecast {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Per-stack components for one test window; writes decomposition.csv.
    Decompose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Index into the test split's windows.
        #[arg(long, default_value_t = 0)]
        window: usize,
    },
    /// Write the configured synthetic series as CSV.
    Synth(Common),
    /// Compare a model report against a baseline report; writes comparison.txt.
    Compare {
        model_report: PathBuf,
        baseline_report: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let cfg = common.resolve()?;
            let started = Instant::now();
            let outcome = nft_cli::cmd_train(&cfg)?;
            let h = &outcome.history;
            match h.best_epoch {
                Some(e) => println!("epochs={} best_epoch={e} best_val_mse={}", h.val_loss.len(), h.val_loss[e]),
                None => println!("epochs=0"),
            }
            println!("checkpoint={}", outcome.checkpoint.display());
            eprintln!("[log] train finished in {:.1}s", started.elapsed().as_secs_f64());
        }
        Command::Eval {
            common,
            checkpoint,
            split,
        } => {
            let report = nft_cli::cmd_eval(&common.resolve()?, &checkpoint, split)?;
            println!("split={} mse={}", report.split, report.mse);
            if let Some(raw) = report.mse_raw {
                println!("mse_raw={raw}");
            }
        }
        Command::Forecast { common, checkpoint } => {
            let path = nft_cli::cmd_forecast(&common.resolve()?, &checkpoint)?;
            println!("forecast={}", path.display());
        }
        Command::Decompose {
            common,
            checkpoint,
            window,
        } => {
            let path = nft_cli::cmd_decompose(&common.resolve()?, &checkpoint, window)?;
            println!("decomposition={}", path.display());
        }
        Command::Synth(common) => {
            for path in nft_cli::cmd_synth(&common.resolve()?)? {
                println!("{}", path.display());
            }
        }
        Command::Compare {
            model_report,
            baseline_report,
            out,
        } => {
            let cmp = nft_cli::cmd_compare(&model_report, &baseline_report, &out)?;
            for notice in cmp.notices() {
                println!("notice: {notice}");
            }
            if let Some(mean) = cmp.mean_improvement {
                println!("mean_improvement_percent={mean}");
            }
            if let Statistic::Value(t) = &cmp.t_test {
                println!("t_statistic={} p_value={}", t.t_statistic, t.p_value);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
