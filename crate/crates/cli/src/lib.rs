//! Experiment driver: `rwlab <subcommand> [--config f.toml] [--seed s]
//! [--threads t] [--out dir]`.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod report;
pub mod verify;

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::ExperimentConfig;
use manifest::{Manifest, Timing, MANIFEST_FILE, TIMING_FILE};

#[derive(Debug, Parser)]
#[command(name = "rwlab", version, about = "Random walks in random environments: experiments and invariant checks")]
pub struct Cli {
    /// TOML file with one table per subcommand; omitted keys take defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory (default rwlab-out/<subcommand>).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Sample environments and write them with a summary table.
    Generate,
    /// Annealed entropy profile and the entropy inequality.
    Entropy,
    /// Mean squared displacement and its log-log slope.
    Sdb,
    /// Diagonal heat-kernel fit and annealed gradient exponent.
    Heatkernel,
    /// Finite-volume corrector sup|χ|/r across radii.
    Corrector,
    /// Gram rank of coordinate-like harmonic fields.
    Dimension,
    /// Proper ball cover and its overlap.
    Cover,
    /// Deterministic invariant suite.
    Verify,
    /// Summarize every manifest below a directory.
    Report { dir: PathBuf },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Entropy => "entropy",
            Command::Sdb => "sdb",
            Command::Heatkernel => "heatkernel",
            Command::Corrector => "corrector",
            Command::Dimension => "dimension",
            Command::Cover => "cover",
            Command::Verify => "verify",
            Command::Report { .. } => "report",
        }
    }
}

#[derive(Debug)]
pub struct RunStatus {
    /// Every hard check passed (for `report`: no flags and no failures).
    pub pass: bool,
    pub summary: String,
    pub out_dir: Option<PathBuf>,
}

pub fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))
}

pub fn run(cli: &Cli) -> Result<RunStatus> {
    if let Command::Report { dir } = &cli.command {
        let r = report::report(dir)?;
        return Ok(RunStatus { pass: r.flags == 0 && r.failures == 0, summary: r.table, out_dir: None });
    }
    let cfg = load_config(cli)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cfg.threads {
        pool = pool.num_threads(t);
    }
    let pool = pool.build()?;
    let threads = pool.current_num_threads();
    let start = Instant::now();
    let outcome = pool.install(|| match cli.command {
        Command::Generate => commands::generate(&cfg),
        Command::Entropy => commands::entropy(&cfg),
        Command::Sdb => commands::sdb(&cfg),
        Command::Heatkernel => commands::heatkernel(&cfg),
        Command::Corrector => commands::corrector(&cfg),
        Command::Dimension => commands::dimension(&cfg),
        Command::Cover => commands::cover(&cfg),
        Command::Verify => commands::verify(&cfg),
        Command::Report { .. } => unreachable!(),
    })?;
    let wall_seconds = start.elapsed().as_secs_f64();

    let name = cli.command.name();
    let dir = cfg.out.clone().unwrap_or_else(|| Path::new("rwlab-out").join(name));
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    for (file, contents) in &outcome.files {
        write(&dir, file, contents)?;
    }
    let manifest = Manifest::new(name, cfg.hash(), cfg.seed, cfg.tolerances.overrides(), outcome.results);
    write(&dir, MANIFEST_FILE, &manifest.to_json())?;
    let timing = Timing { subcommand: name.into(), wall_seconds, threads };
    write(&dir, TIMING_FILE, &serde_json::to_string_pretty(&timing)?)?;

    let mut summary = String::new();
    for r in &manifest.results {
        let tag = match (r.pass, r.hard) {
            (true, _) => "pass",
            (false, true) => "FAIL",
            (false, false) => "flag",
        };
        let value = r.value.map_or("undefined".into(), |v| format!("{v:.6e}"));
        summary.push_str(&format!("{tag:<5} {:<32} {value} ({})\n", r.name, r.detail));
    }
    summary.push_str(&format!("{name}: {} in {wall_seconds:.2}s, outputs in {}\n", if manifest.pass { "pass" } else { "FAIL" }, dir.display()));
    Ok(RunStatus { pass: manifest.pass, summary, out_dir: Some(dir) })
}
