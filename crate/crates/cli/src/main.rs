use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dss_core::experiment::{emit_csv, presets, run_experiment, write_csv, CsvOptions, ExperimentConfig, Sweep, SweepVar};

#[derive(Parser)]
#[command(name = "dss", version, about = "Sequence-selection experiments for shaped optical links")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Replaces the seed of the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, env = "DSS_THREADS", default_value_t = 0)]
    threads: usize,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Adds a wall_time_s column.
    #[arg(long)]
    timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config as written, including its sweep if any.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a config over the given values of one variable.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        var: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        values: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Check a config without simulating.
    Validate { config: PathBuf },
    /// Print a preset config as JSON.
    Preset { name: String },
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ExperimentConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn execute(mut cfg: ExperimentConfig, common: Common) -> Result<()> {
    if let Some(seed) = common.seed {
        eprintln!("seed {} replaced by --seed {seed}", cfg.seed);
        cfg.seed = seed;
    }
    if common.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(common.threads).build_global()?;
    }
    cfg.validate()?;
    let rows = run_experiment(&cfg)?;
    let opts = CsvOptions { timing: common.timing };
    match &common.out {
        Some(path) => emit_csv(&rows, &cfg, path, opts).with_context(|| format!("writing {}", path.display()))?,
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write_csv(&rows, &cfg, &mut lock, opts)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, common } => execute(load(&config)?, common),
        Command::Sweep { config, var, values, common } => {
            let mut cfg = load(&config)?;
            if let Some(old) = &cfg.sweep {
                eprintln!("sweep over {} in {} replaced", old.variable.name(), config.display());
            }
            cfg.sweep = Some(Sweep {
                variable: SweepVar::parse(&var)?,
                values,
            });
            execute(cfg, common)
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            cfg.validate()?;
            let points = cfg.points()?.len();
            println!("ok: {points} point(s), {} repetition(s) each", cfg.repetitions);
            Ok(())
        }
        Command::Preset { name } => {
            let Some(cfg) = presets::by_name(&name) else {
                bail!("unknown preset '{name}'; available: {}", presets::NAMES.join(", "));
            };
            writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&cfg)?)?;
            Ok(())
        }
    }
}
