use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mlrisk::eval::RiskReport;
use mlrisk::pipeline::{self, ExperimentConfig, Profile};
use mlrisk::{Error, Result};
use serde_json::json;

#[derive(Parser)]
#[command(name = "mlrisk", version, about = "Train targets, run privacy attacks, and report risk")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one target model per (dataset, architecture, seed).
    TrainTarget(Common),
    /// Attack every trained target under each requested threat model.
    Attack(Common),
    /// Summarize the cells on disk into CSV, JSON and text reports.
    Report(ReportArgs),
    /// Train, attack and report in one go.
    FullSuite(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides the config's root seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, value_name = "N", default_value_t = 1)]
    jobs: usize,
    /// Replaces both the config's profile and any explicit training override.
    #[arg(long, value_parser = parse_profile)]
    profile: Option<Profile>,
}

#[derive(Args)]
struct ReportArgs {
    /// Reads the output directory from this config when --out is absent.
    #[arg(long, value_name = "PATH", required_unless_present = "out")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn parse_profile(s: &str) -> std::result::Result<Profile, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl Common {
    fn resolve(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(profile) = self.profile {
            config.profile = profile;
            config.train = None;
        }
        let out = self.out.clone().unwrap_or_else(|| config.output_dir.clone());
        if self.jobs == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        Ok((config, out))
    }
}

fn report_summary(out: &Path, report: &RiskReport) -> serde_json::Value {
    json!({
        "report": out.join(pipeline::REPORT_DIR),
        "cells": report.cells.len(),
    })
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::TrainTarget(c) => {
            let (config, out) = c.resolve()?;
            let records = pipeline::cmd_train_target(&config, &out, c.jobs)?;
            Ok(json!({ "targets": records.len(), "out": out }))
        }
        Command::Attack(c) => {
            let (config, out) = c.resolve()?;
            let files = pipeline::cmd_attack(&config, &out, c.jobs)?;
            let cells: usize = files.iter().map(|f| f.cells.len()).sum();
            let skipped: usize = files.iter().map(|f| f.skipped.len()).sum();
            Ok(json!({ "cells": cells, "skipped": skipped, "out": out }))
        }
        Command::Report(r) => {
            let out = match (r.out, r.config) {
                (Some(out), _) => out,
                (None, Some(path)) => ExperimentConfig::load(&path)?.output_dir,
                (None, None) => unreachable!("clap requires one of --out and --config"),
            };
            let report = pipeline::cmd_report(&out)?;
            Ok(report_summary(&out, &report))
        }
        Command::FullSuite(c) => {
            let (config, out) = c.resolve()?;
            let report = pipeline::cmd_full_suite(&config, &out, c.jobs)?;
            Ok(report_summary(&out, &report))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": { "kind": e.kind(), "message": e.to_string() } }));
            ExitCode::FAILURE
        }
    }
}
