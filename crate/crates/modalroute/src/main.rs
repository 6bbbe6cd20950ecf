use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use modalroute::commands;
use modalroute::config::{ExperimentConfig, PolicyChoice};
use modalroute::{Error, Result};

#[derive(Parser)]
#[command(name = "modalroute", version, about = "Missing-modality evidence routing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write items, interactions, splits and a manifest per seed.
    GenData(Common),
    /// Train the learned router; one checkpoint and log per seed.
    Train(Common),
    /// Evaluate one policy on the test split.
    Eval(Common),
    /// Train, then compare the learned router with the rule router.
    Compare(Common),
    /// Serve test episodes to an external policy.
    ServeBridge(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment file (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replaces the configured seed list; repeatable.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    policy: Option<PolicyChoice>,
    /// Checkpoint file, or a directory of `checkpoint-seed{N}.json`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    listen: Option<String>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if !self.seeds.is_empty() {
            c.seeds = self.seeds.clone();
        }
        if let Some(out) = &self.out {
            c.out = out.clone();
        }
        if let Some(p) = self.policy {
            c.policy = p;
        }
        if let Some(l) = &self.listen {
            c.bridge.listen = l.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => {
            let c = a.config()?;
            for &seed in &c.seeds {
                let dir = commands::data_dir(&c.out, seed);
                let m = commands::gen_data(&c, seed, &dir)?;
                println!("seed {seed}: {} items, {} interactions -> {}", m.items, m.interactions, dir.display());
            }
        }
        Command::Train(a) => {
            let c = a.config()?;
            for &seed in &c.seeds {
                let wb = c.workbench(seed)?;
                let (ck, log) = commands::train_checkpoint(&c, &wb, seed)?;
                commands::write_train_outputs(&c.out, &ck, &log)?;
                let last = log.last().map_or(0.0, |l| l.mean_return);
                println!("seed {seed}: final mean return {last:.4}, alpha {} -> {}", ck.alpha, commands::checkpoint_path(&c.out, seed).display());
            }
        }
        Command::Eval(a) => {
            let c = a.config()?;
            let report = commands::eval(&c, a.checkpoint.as_deref())?;
            commands::write_report(&c.out, &format!("report-{}", c.policy.as_str()), &report)?;
            print!("{}", report.render());
        }
        Command::Compare(a) => {
            let c = a.config()?;
            let report = commands::compare(&c)?;
            commands::write_report(&c.out, "compare", &report)?;
            print!("{}", report.render());
        }
        Command::ServeBridge(a) => {
            let c = a.config()?;
            let listener = TcpListener::bind(&c.bridge.listen).map_err(|e| Error::Protocol(format!("bind {}: {e}", c.bridge.listen)))?;
            eprintln!("bridge: listening on {}", c.bridge.listen);
            let statuses = commands::serve_bridge(&c, &listener)?;
            let done = statuses.iter().filter(|s| matches!(s, modalroute::bridge::EpisodeStatus::Completed { .. })).count();
            println!("{done} completed, {} aborted", statuses.len() - done);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
