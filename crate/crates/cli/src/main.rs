mod commands;
mod config;
mod output;

use anyhow::Context;
use clap::{Parser, Subcommand};
use commands::{Failure, Output};
use config::RunConfig;
use henon_lab::par::{self, Exec};
use output::{to_json, unix_ms, RunManifest};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Numerical experiments on the quadratic area-contracting plane map.
#[derive(Debug, Parser)]
#[command(name = "henon-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs the sequential path.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    FixedPoints,
    TangencyCurve,
    Sweep,
    Thickness,
    Renorm,
    Census,
    ManifoldDump,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::FixedPoints => "fixed-points",
            Command::TangencyCurve => "tangency-curve",
            Command::Sweep => "sweep",
            Command::Thickness => "thickness",
            Command::Renorm => "renorm",
            Command::Census => "census",
            Command::ManifoldDump => "manifold-dump",
        }
    }

    fn run(self, cfg: &RunConfig, exec: Exec) -> Result<Output, Failure> {
        match self {
            Command::FixedPoints => commands::fixed_points(cfg),
            Command::TangencyCurve => commands::tangency_curve(cfg, exec),
            Command::Sweep => commands::sweep(cfg, exec),
            Command::Thickness => commands::thickness(cfg, exec),
            Command::Renorm => commands::renorm(cfg, exec),
            Command::Census => commands::census(cfg, exec),
            Command::ManifoldDump => commands::manifold_dump(cfg),
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set("seed", seed.to_string());
    }
    Ok(cfg)
}

fn write_outputs(dir: &Path, files: &[(String, String)]) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn execute(cli: &Cli) -> anyhow::Result<i32> {
    let started = unix_ms();
    let (hash, result) = match load_config(cli) {
        Ok(cfg) => {
            let exec = if cli.threads == Some(1) {
                Exec::Sequential
            } else {
                Exec::default()
            };
            let result = par::with_threads(cli.threads, || cli.command.run(&cfg, exec));
            (cfg.hash(), result)
        }
        Err(e) => (String::new(), Err(e)),
    };
    let (code, summary, files) = match result {
        Ok(out) => (0, out.summary, out.files),
        Err(e) => {
            eprintln!("henon-lab {}: {e}", cli.command.name());
            (e.exit_code(), serde_json::json!({ "error": e.to_string() }), Vec::new())
        }
    };
    let manifest = RunManifest {
        tool: "henon-lab",
        version: env!("CARGO_PKG_VERSION"),
        command: cli.command.name().to_string(),
        config_hash: hash,
        seed: cli.seed,
        threads: cli.threads,
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        exit_code: code,
        summary,
        outputs: files.iter().map(|(n, _)| n.clone()).collect(),
    };
    write_outputs(&cli.out, &files)?;
    write_outputs(&cli.out, &[("run_manifest.json".to_string(), to_json(&manifest))])?;
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("henon-lab: {e:#}");
            ExitCode::from(1)
        }
    }
}
