//! Command line: one subcommand per stage plus `run`, `report` and `compare`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::artifacts::{RunDir, ARTIFACTS_ENV};
use crate::config::RunConfig;
use crate::report::{compare, Comparison, RunReport};
use crate::stages::{report, run_all, run_stage, Stage};

#[derive(Debug, Parser)]
#[command(
    name = "fogsynth",
    version,
    about = "Federated traffic synthesis and unknown-class update pipeline"
)]
pub struct Cli {
    /// Root directory holding one subdirectory per run.
    #[arg(long, global = true, env = ARTIFACTS_ENV, default_value = "artifacts")]
    pub artifacts: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run config (TOML).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Override one config key, e.g. `--set gan.rounds=50`. Repeatable; wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate (or ingest) the corpus and split it across fog nodes.
    SynthData(RunArgs),
    /// Train the generator with the configured federated protocol.
    Train(RunArgs),
    /// Cluster a synthetic corpus and assign pseudo-labels.
    Label(RunArgs),
    /// Train the classifier on the pseudo-labeled corpus and calibrate the threshold.
    Classify(RunArgs),
    /// Feed incoming traffic through the unknown-class update cycle.
    Update(RunArgs),
    /// Score the current classifier on the held-out test set.
    Evaluate(RunArgs),
    /// Assemble `report.json` from the stage reports.
    Report(RunArgs),
    /// Run every stage in order and assemble the report.
    Run(RunArgs),
    /// Side-by-side comparison of two runs (run directories or configs).
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Also write the comparison as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn open(artifacts: &Path, args: &RunArgs) -> Result<(RunDir, RunConfig)> {
    let cfg = RunConfig::load_with(&args.config, &args.overrides)?;
    for o in &args.overrides {
        eprintln!("override {o}");
    }
    let dir = RunDir::open(artifacts, &cfg, &args.overrides)?;
    Ok((dir, cfg))
}

/// Report of a finished run directory, or of the run a config describes
/// (executed first when it has no report yet).
fn resolve(artifacts: &Path, target: &Path) -> Result<RunReport> {
    if target.is_dir() {
        return RunReport::load(&target.join("report.json"));
    }
    if !target.exists() {
        bail!("no run directory or config at {}", target.display());
    }
    let cfg = RunConfig::load(target)?;
    let existing = artifacts.join(&cfg.name).join("report.json");
    if existing.exists() {
        return RunReport::load(&existing);
    }
    let dir = RunDir::open(artifacts, &cfg, &[])?;
    run_all(&dir, &cfg)
}

pub fn compare_targets(artifacts: &Path, a: &Path, b: &Path) -> Result<Comparison> {
    let ra = resolve(artifacts, a).with_context(|| format!("loading {}", a.display()))?;
    let rb = resolve(artifacts, b).with_context(|| format!("loading {}", b.display()))?;
    compare(&ra, &rb)
}

pub fn execute(cli: Cli) -> Result<()> {
    let stage = |args: &RunArgs, stage: Stage| -> Result<()> {
        let (dir, cfg) = open(&cli.artifacts, args)?;
        run_stage(&dir, &cfg, stage)
    };
    match &cli.command {
        Command::SynthData(a) => stage(a, Stage::SynthData),
        Command::Train(a) => stage(a, Stage::Train),
        Command::Label(a) => stage(a, Stage::Label),
        Command::Classify(a) => stage(a, Stage::Classify),
        Command::Update(a) => stage(a, Stage::Update),
        Command::Evaluate(a) => stage(a, Stage::Evaluate),
        Command::Report(a) => {
            let (dir, cfg) = open(&cli.artifacts, a)?;
            report(&dir, &cfg)?;
            println!("{}", dir.root().join("report.json").display());
            Ok(())
        }
        Command::Run(a) => {
            let (dir, cfg) = open(&cli.artifacts, a)?;
            run_all(&dir, &cfg)?;
            println!("{}", dir.root().join("report.json").display());
            Ok(())
        }
        Command::Compare { a, b, out } => {
            let c = compare_targets(&cli.artifacts, a, b)?;
            print!("{}", c.render());
            if let Some(out) = out {
                crate::artifacts::write_json(out, &c)?;
            }
            Ok(())
        }
    }
}
