//! `rfmo`: batch front end. Exit status 0 on success, 2 when the optimal
//! plan delivers no dose, 1 on any error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use rfmo_core::model::ModelKind;

use crate::commands::Outcome;
use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "rfmo", version, about = "Robust fluence map optimization")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Validate a case, optionally convert SUV to φ̂, and write it out
    Ingest,
    /// Generate a synthetic case
    Phantom,
    /// Fit the Γ distance model to the case's pairwise statistics
    FitGamma,
    /// Solve one model and score the plan
    Solve,
    /// Solve over a (μ, δ, γ) grid
    Sweep,
    /// Tune the dose-volume penalty weight
    Dv,
    /// Score an existing plan
    Evaluate,
    /// Write the dose-volume histograms of a plan
    ExportDvh,
}

#[derive(clap::Args)]
struct Flags {
    /// JSON run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Case directory
    #[arg(long, global = true)]
    case: Option<PathBuf>,
    /// Plan file for evaluate and export-dvh
    #[arg(long, global = true)]
    plan: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<ModelKind>,
    #[arg(long, global = true)]
    mu: Option<f64>,
    #[arg(long, global = true)]
    delta: Option<f64>,
    #[arg(long, global = true)]
    gamma_offset: Option<f64>,
    #[arg(long, global = true)]
    theta: Option<usize>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write the final LP in MPS format
    #[arg(long, global = true)]
    dump_lp: bool,
}

fn parse_mode(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse().map_err(|e: rfmo_core::Error| e.to_string())
}

impl Flags {
    fn apply(self, c: &mut RunConfig) {
        if let Some(v) = self.case {
            c.case = Some(v);
        }
        if let Some(v) = self.plan {
            c.plan = Some(v);
        }
        if let Some(v) = self.mode {
            c.mode = v;
        }
        if let Some(v) = self.mu {
            c.mu = v;
        }
        if let Some(v) = self.delta {
            c.delta = v;
        }
        if let Some(v) = self.gamma_offset {
            c.gamma_offset = v;
        }
        if let Some(v) = self.theta {
            c.theta = Some(v);
        }
        if let Some(v) = self.workers {
            c.workers = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.out {
            c.out = v;
        }
        c.dump_lp |= self.dump_lp;
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    let mut cfg = match &cli.flags.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cli.flags.apply(&mut cfg);
    match cli.cmd {
        Cmd::Ingest => commands::ingest(&cfg),
        Cmd::Phantom => commands::phantom(&cfg),
        Cmd::FitGamma => commands::fit_gamma(&cfg),
        Cmd::Solve => commands::solve(&cfg),
        Cmd::Sweep => commands::sweep(&cfg),
        Cmd::Dv => commands::dv(&cfg),
        Cmd::Evaluate => commands::evaluate(&cfg),
        Cmd::ExportDvh => commands::export_dvh(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RFMO_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::ZeroDose) => ExitCode::from(2),
        Err(e) => {
            // I/O errors already quote their cause; skip repeated links
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
