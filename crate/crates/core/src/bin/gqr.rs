//! `gqr`: run pipeline stages individually or end to end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gqr_core::pipeline::stages::{
    stage_align, stage_build_coo, stage_evaluate, stage_sft, stage_simulate, stage_train_ctr,
    REPORT_CSV,
};
use gqr_core::pipeline::{
    cmd_pipeline, ArtifactDir, PipelineConfig, ServingSpec, StageRecord, TaskPreset,
};
use gqr_core::Result;

#[derive(Parser)]
#[command(
    name = "gqr",
    version,
    about = "Click-aligned generative query recommendation lab"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config; defaults apply to absent keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// suggestion, facets or hint.
    #[arg(long, global = true)]
    task: Option<TaskPreset>,
}

#[derive(Args)]
struct PeriodArg {
    /// Update period whose seeds the stage uses (1-based).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    period: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate train and held-out impression logs.
    Simulate {
        #[command(flatten)]
        period: PeriodArg,
        /// Policy serving the traffic; uniform when omitted.
        #[arg(long)]
        serving_policy: Option<PathBuf>,
        /// Co-occurrence dictionary backing the serving policy's prompts.
        #[arg(long)]
        serving_coo: Option<PathBuf>,
    },
    /// Train the click model on the training log.
    TrainCtr,
    /// Mine the co-occurrence dictionary from the training log.
    BuildCoo,
    /// Supervised fine-tuning on annotated training prompts.
    Sft(PeriodArg),
    /// Iterative preference alignment of the SFT policy.
    Align(PeriodArg),
    /// Write the evaluation report.
    Evaluate(PeriodArg),
    /// All stages for every configured period, then the run manifest.
    Pipeline {
        /// Number of update periods, overriding the config.
        #[arg(long)]
        periods: Option<usize>,
    },
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    if let Some(t) = common.task {
        cfg.task = t;
    }
    Ok(cfg)
}

fn report(record: &StageRecord, root: &Path) {
    for a in &record.artifacts {
        println!("{}", root.join(a).display());
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.common)?;
    if let Command::Pipeline { periods: Some(p) } = cli.command {
        cfg.periods = p;
    }
    cfg.validate()?;
    let dir = ArtifactDir::flat(&cfg.out_dir);
    std::fs::create_dir_all(&cfg.out_dir)?;
    let record = match cli.command {
        Command::Simulate {
            period,
            serving_policy,
            serving_coo,
        } => {
            let rel: Vec<PathBuf> = serving_policy.iter().chain(&serving_coo).cloned().collect();
            let spec = ServingSpec {
                policy: serving_policy,
                coo: serving_coo,
            };
            stage_simulate(&cfg, &dir, period.period as usize, &spec, &rel)?
        }
        Command::TrainCtr => stage_train_ctr(&cfg, &dir)?,
        Command::BuildCoo => stage_build_coo(&cfg, &dir)?,
        Command::Sft(p) => stage_sft(&cfg, &dir, p.period as usize)?,
        Command::Align(p) => stage_align(&cfg, &dir, p.period as usize)?,
        Command::Evaluate(p) => {
            let r = stage_evaluate(&cfg, &dir, p.period as usize)?;
            print!("{}", std::fs::read_to_string(dir.path(REPORT_CSV))?);
            r
        }
        Command::Pipeline { .. } => {
            let m = cmd_pipeline(&cfg)?;
            print!("{}", m.final_report(&cfg.out_dir)?.to_csv());
            println!("manifest: {}", cfg.out_dir.join("manifest.json").display());
            return Ok(());
        }
    };
    report(&record, &cfg.out_dir);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gqr: {e}");
            ExitCode::FAILURE
        }
    }
}
