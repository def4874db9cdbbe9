use std::path::PathBuf;
use std::process::ExitCode;

use adskew::pipeline::{self, PipelineError, RunConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adskew", version, about = "Measure how ad-targeting criteria skew toward party and race")]
struct Cli {
    /// Run configuration (TOML). Relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for the world and audience sampling; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic population, voter file and ground-truth skews.
    World,
    /// Sample the five demographic audiences from the voter file.
    Audiences,
    /// Query reach for every audience and interest.
    Estimate,
    /// Compute the skew table and leaning thresholds.
    Skew,
    /// Score interests by the audience bias of their linked domains.
    Pageskew,
    /// Collect and normalize ad-library targeting reports.
    Ingest {
        #[arg(long)]
        min_delay_ms: Option<u64>,
        #[arg(long)]
        max_retries: Option<u32>,
        #[arg(long)]
        replay_dir: Option<PathBuf>,
        #[arg(long)]
        endpoint: Option<String>,
    },
    /// Join skews with targeting spend and fit the spend model.
    Analyze,
    /// Write SVG plots and their data files.
    Report,
    /// Run every stage in order.
    All,
    /// Write the demo fixture set into a directory.
    DemoFixtures {
        #[arg(default_value = "fixtures/demo")]
        dir: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    if let Command::DemoFixtures { dir } = &cli.command {
        let seed = cli.seed.unwrap_or(adskew::demo::DEMO_SEED);
        adskew::demo::write_demo_fixtures(dir, seed).map_err(|e| PipelineError::data(format!("{}: {e}", dir.display())))?;
        println!("demo fixtures written to {}", dir.display());
        return Ok(());
    }
    let mut cfg = load_config(&cli)?;
    if let Command::Ingest { min_delay_ms, max_retries, replay_dir, endpoint } = &cli.command {
        if let Some(v) = min_delay_ms {
            cfg.ingest.min_delay_ms = *v;
        }
        if let Some(v) = max_retries {
            cfg.ingest.max_retries = *v;
        }
        if let Some(dir) = replay_dir {
            // flag paths are relative to the working directory
            cfg.paths.replay_dir = Some(std::path::absolute(dir).unwrap_or_else(|_| dir.clone()));
            cfg.ingest.endpoint = None;
        }
        if let Some(url) = endpoint {
            cfg.ingest.endpoint = Some(url.clone());
        }
    }
    cfg.validate()?;
    let out = cfg.output_dir.display().to_string();
    match cli.command {
        Command::World => {
            pipeline::run_world(&cfg)?;
            println!("world written to {out}/world");
        }
        Command::Audiences => {
            for s in pipeline::run_audiences(&cfg)? {
                println!("{:<10} {:>6} members (requested {})", s.label, s.len(), s.requested_size);
            }
        }
        Command::Estimate => {
            let m = pipeline::run_estimate(&cfg)?;
            println!("{} cells estimated, {} failed", m.cell_count(), m.error_count());
        }
        Command::Skew => {
            let t = pipeline::run_skew(&cfg)?;
            println!("{} skew rows written to {out}/skew", t.rows.len());
        }
        Command::Pageskew => {
            pipeline::run_pageskew(&cfg)?;
            println!("page skews written to {out}/pageskew");
        }
        Command::Ingest { .. } => {
            let ds = pipeline::run_ingest(&cfg)?;
            let f = &ds.fetch;
            println!(
                "{} windows from {} requests ({} payloads, {} missing, {} failed, {} unparseable)",
                ds.windows.len(),
                f.requests,
                f.payloads,
                f.missing,
                f.failed,
                f.parse_errors
            );
        }
        Command::Analyze => {
            let b = pipeline::run_analyze(&cfg)?;
            println!("{} top-spend rows, {} fits", b.top_spend.len(), b.fits.len());
        }
        Command::Report => {
            let r = pipeline::run_report(&cfg)?;
            println!("{} files written, {} plots skipped", r.written.len(), r.skipped.len());
            for (stem, why) in &r.skipped {
                println!("  skipped {stem}: {why}");
            }
        }
        Command::All => {
            pipeline::run_all(&cfg)?;
            println!("pipeline complete; outputs in {out}");
        }
        Command::DemoFixtures { .. } => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
