mod artifacts;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "surftension", version, about = "Surface-tension cell problems and recovery-sequence experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the task described by a JSON config.
    Run {
        /// Config file (same as --config).
        path: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; overrides `output` in the config (default `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Overrides `seed` in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Exit 2 when any convergence or trend flag is raised.
        #[arg(long)]
        strict: bool,
    },
    /// Flatten an artifact into a plot-ready CSV (`phi` or `recovery`).
    ExportPlotdata {
        artifact: PathBuf,
        #[arg(long)]
        kind: String,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(path: Option<PathBuf>, config: Option<PathBuf>, out: Option<PathBuf>, jobs: usize, seed: Option<u64>, strict: bool) -> Result<u8> {
    let path = match (path, config) {
        (Some(p), None) | (None, Some(p)) => p,
        (Some(_), Some(_)) => bail!("give the config either positionally or with --config, not both"),
        (None, None) => bail!("no config given"),
    };
    let mut cfg = RunConfig::load(&path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dir = out.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    cfg.output = Some(dir.clone());
    run::ensure_dir(&dir)?;

    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let t0 = Instant::now();
    let outcome = run::execute(&cfg, &dir, jobs)?;
    let failed = strict && !outcome.flags.is_empty();
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "task": cfg.task.name(),
        "config": cfg,
        "jobs": jobs,
        "strict": strict,
        "started_unix": started,
        "elapsed_s": t0.elapsed().as_secs_f64(),
        "artifacts": outcome.artifacts,
        "flags": outcome.flags,
        "summary": outcome.summary,
        "status": if failed { "flagged" } else { "ok" },
    });
    artifacts::write_json(&dir.join("manifest.json"), &manifest)?;
    for f in &outcome.flags {
        eprintln!("flag: {f}");
    }
    println!("{}: {} artifacts in {}", cfg.task.name(), outcome.artifacts.len(), dir.display());
    Ok(if failed { 2 } else { 0 })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run { path, config, out, jobs, seed, strict } => run(path, config, out, jobs, seed, strict),
        Command::ExportPlotdata { artifact, kind, out } => artifacts::export_plotdata(&artifact, &kind).and_then(|csv| {
            match out {
                Some(p) => std::fs::write(&p, csv)?,
                None => print!("{csv}"),
            }
            Ok(0)
        }),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
