use std::path::PathBuf;
use std::process::ExitCode;

use aggdiff_core::experiments::{run, ConfigOverrides, ExperimentConfig, ExperimentKind};
use aggdiff_core::{Error, PotentialKind};
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

/// Aggregation with and without nonlinear diffusion on [0, 1.5].
#[derive(Parser, Debug)]
#[command(name = "aggdiff", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Distance between diffusive and plain solutions at early times.
    Early(Flags),
    /// Long runs: distance to the plain solution and to its equilibrium, energies, mass transfer.
    Longrun(Flags),
    /// Sweep of diffusive energy minimizers (c0 kernel).
    Minimizers(Flags),
    /// Log-log slope of the early-time distance against nu.
    Rate(Flags),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Potential {
    C0,
    C2,
}

#[derive(Args, Debug)]
struct Flags {
    #[arg(long, value_enum)]
    potential: Option<Potential>,
    /// Comma-separated, strictly decreasing.
    #[arg(long, value_delimiter = ',')]
    nu: Option<Vec<f64>>,
    #[arg(long)]
    m: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long)]
    particles: Option<usize>,
    /// Comma-separated table times (early, rate).
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    /// Horizon of the long finite-volume runs.
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file with any of the configuration fields; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Flags {
    fn overrides(&self, experiment: ExperimentKind) -> ConfigOverrides {
        ConfigOverrides {
            experiment: Some(experiment),
            potential: self.potential.map(|p| match p {
                Potential::C0 => PotentialKind::C0NewtonianQuadratic,
                Potential::C2 => PotentialKind::C2Regularized,
            }),
            nu: self.nu.clone(),
            m: self.m,
            alpha: self.alpha,
            cells: self.cells,
            particles: self.particles,
            output_times: self.times.clone(),
            t_end: self.t_end,
            out_dir: self.out.clone(),
            ..Default::default()
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let (kind, flags) = match &cli.command {
        Command::Early(f) => (ExperimentKind::Early, f),
        Command::Longrun(f) => (ExperimentKind::Longrun, f),
        Command::Minimizers(f) => (ExperimentKind::Minimizers, f),
        Command::Rate(f) => (ExperimentKind::Rate, f),
    };
    let base = match &flags.config {
        Some(p) => ConfigOverrides::from_file(p).with_context(|| format!("reading config {}", p.display()))?,
        None => ConfigOverrides::default(),
    };
    let cfg = ExperimentConfig::resolve(base.merge(flags.overrides(kind)))?;
    let report = run(&cfg)?;
    let paths = report.write(&cfg, &cfg.out_dir)?;
    for p in paths {
        println!("{}", p.display());
    }
    Ok(())
}

fn error_record(err: &anyhow::Error) -> serde_json::Value {
    let mut rec = json!({ "error": "other", "message": format!("{err:#}") });
    if let Some(e) = err.chain().find_map(|c| c.downcast_ref::<Error>()) {
        rec["error"] = json!(e.kind());
        if let Error::Run { nu, t, .. } = e {
            rec["nu"] = json!(nu);
            rec["t"] = if t.is_finite() { json!(t) } else { serde_json::Value::Null };
        }
    }
    rec
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::FAILURE
        }
    }
}
