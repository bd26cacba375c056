//! `hcs`: configuration-driven pipelines over screening embeddings.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hcs_core::data::TableFormat;

use crate::commands::Context;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "hcs", version, about = "Evaluation and curation of high-content screening embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit TVN on controls and whiten the table.
    Normalize(CommonArgs),
    /// Perturbation consistency with permutation p-values.
    Consistency(CommonArgs),
    /// KS/CVM replicate consistency across experiment pairs.
    Replicate(CommonArgs),
    /// Known-relationship recall over gene aggregates.
    Recall(CommonArgs),
    /// Block-wise linear probe sweep.
    Probe(CommonArgs),
    /// Five-step manifest curation.
    Curate(CommonArgs),
    /// Synthetic screen, block family and manifest generation.
    Synth(CommonArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_parser = parse_format)]
    format: Option<TableFormat>,
    #[arg(long)]
    log_level: Option<String>,
}

fn parse_format(s: &str) -> Result<TableFormat, String> {
    s.parse().map_err(|e: hcs_core::Error| e.to_string())
}

impl Command {
    fn parts(&self) -> (&'static str, &CommonArgs) {
        match self {
            Command::Normalize(a) => ("normalize", a),
            Command::Consistency(a) => ("consistency", a),
            Command::Replicate(a) => ("replicate", a),
            Command::Recall(a) => ("recall", a),
            Command::Probe(a) => ("probe", a),
            Command::Curate(a) => ("curate", a),
            Command::Synth(a) => ("synth", a),
        }
    }
}

fn setup(args: &CommonArgs) -> Result<(RunConfig, Context), CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    let g = &mut cfg.global;
    if let Some(s) = args.seed {
        g.seed = Some(s);
    }
    if let Some(t) = args.threads {
        g.threads = t;
    }
    if let Some(f) = args.format {
        g.format = f;
    }
    if let Some(l) = &args.log_level {
        g.log_level = l.clone();
    }
    if let Some(d) = &args.output_dir {
        g.output_dir = Some(d.clone());
    }
    let output_dir = g
        .output_dir
        .clone()
        .ok_or_else(|| CliError::config("no output directory (--output-dir or global.output_dir)"))?;
    let ctx = Context {
        global: g.clone(),
        output_dir,
    };
    Ok((cfg, ctx))
}

fn init_logging(level: &str) -> Result<(), CliError> {
    let filter: log::LevelFilter = level
        .parse()
        .map_err(|_| CliError::config(format!("unknown log level {level:?}")))?;
    let _ = env_logger::Builder::new().filter_level(filter).format_timestamp(None).try_init();
    Ok(())
}

fn run(name: &str, cfg: &RunConfig, ctx: &Context) -> Result<(), CliError> {
    init_logging(&ctx.global.log_level)?;
    if ctx.global.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(ctx.global.threads)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    std::fs::create_dir_all(&ctx.output_dir)
        .map_err(|e| CliError::from(hcs_core::Error::Io { path: ctx.output_dir.clone(), source: e }))?;
    log::info!("running {name} into {}", ctx.output_dir.display());
    match name {
        "normalize" => commands::normalize(cfg, ctx),
        "consistency" => commands::consistency(cfg, ctx),
        "replicate" => commands::replicate(cfg, ctx),
        "recall" => commands::recall(cfg, ctx),
        "probe" => commands::probe(cfg, ctx),
        "curate" => commands::curate(cfg, ctx),
        "synth" => commands::synth(cfg, ctx),
        _ => unreachable!("clap restricts command names"),
    }
}

fn fail(err: &CliError, output_dir: Option<&PathBuf>) -> ExitCode {
    let doc = serde_json::json!({ "error": err });
    eprintln!("{doc}");
    if let Some(dir) = output_dir.filter(|d| d.is_dir()) {
        let _ = std::fs::write(dir.join("error.json"), format!("{doc:#}\n"));
    }
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = cli.command.parts();
    let (cfg, ctx) = match setup(args) {
        Ok(v) => v,
        Err(e) => return fail(&e, args.output_dir.as_ref()),
    };
    match run(name, &cfg, &ctx) {
        Ok(()) => {
            let _ = std::fs::remove_file(ctx.output_dir.join("error.json"));
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e, Some(&ctx.output_dir)),
    }
}
