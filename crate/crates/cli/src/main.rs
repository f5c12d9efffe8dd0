use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use geoloc_core::models::ModelKind;
use geoloc_core::pipeline::{Pipeline, PipelineConfig, RunOptions, Stage};
use geoloc_core::Error;

/// Twitter user geolocation from mention/follower graphs and tweet text.
#[derive(Debug, Parser)]
#[command(name = "geoloc", version)]
struct Cli {
    /// JSON pipeline config; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for folds, node2vec walks and the synthetic generator.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Overrides `paths.workdir`.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,

    /// Restrict to these models (trans_txt, rgcn_ext, graphsage_ext, n2v_ext).
    #[arg(long = "model", global = true, value_parser = parse_model)]
    models: Vec<ModelKind>,

    /// Use upstream artifacts built under a different config.
    #[arg(long, global = true)]
    force: bool,

    /// Run the producing stage for any missing or stale upstream artifact.
    #[arg(long, global = true)]
    build_missing: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Generate a synthetic dataset into the configured input paths.
    Synth,
    /// Parse records, profiles and gazetteer; assign ground truth.
    Ingest,
    /// Build the extended mention and follower networks.
    BuildGraph,
    /// Build city or k-d tree label classes.
    BuildLabels,
    /// Vocabulary and chi-squared location indicative words.
    Liw,
    /// Fit the selected models on all labeled users.
    Train,
    /// Stratified k-fold cross-validation report.
    Evaluate,
    /// Profile-location vs ground-truth distance distribution.
    ProfileReport,
}

impl Command {
    fn stage(self) -> Stage {
        match self {
            Command::Synth => Stage::Synth,
            Command::Ingest => Stage::Ingest,
            Command::BuildGraph => Stage::BuildGraph,
            Command::BuildLabels => Stage::BuildLabels,
            Command::Liw => Stage::Liw,
            Command::Train => Stage::Train,
            Command::Evaluate => Stage::Evaluate,
            Command::ProfileReport => Stage::ProfileReport,
        }
    }
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    ModelKind::parse(s).ok_or_else(|| {
        let keys: Vec<&str> = ModelKind::ALL.iter().map(|k| k.key()).collect();
        format!("unknown model `{s}` (expected one of {})", keys.join(", "))
    })
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::MissingArtifact { .. } | Error::StaleArtifact { .. } => EXIT_USAGE,
        Error::Diverged(_) => EXIT_DIVERGED,
        _ => EXIT_DATA,
    }
}

fn load_config(cli: &Cli) -> geoloc_core::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(w) = &cli.workdir {
        cfg.paths.workdir = w.clone();
    }
    if !cli.models.is_empty() {
        let mut models = cli.models.clone();
        models.sort();
        models.dedup();
        cfg.model.models = models;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> geoloc_core::Result<()> {
    let cfg = load_config(cli)?;
    let opts = RunOptions {
        force: cli.force,
        build_missing: cli.build_missing,
    };
    let pipeline = Pipeline::new(cfg, opts);
    let written = pipeline.run(cli.command.stage())?;
    for p in &written {
        log::info!("wrote {}", p.display());
    }
    if let Command::Evaluate = cli.command {
        let path = pipeline.eval_table_path();
        let table = std::fs::read_to_string(&path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        for line in table.lines().filter(|l| !l.starts_with('#')) {
            println!("{line}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::StaleArtifact { .. } = e {
                eprintln!("hint: rerun the upstream stage, or pass --force or --build-missing");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
