//! Thin command-line front end over [`ipi::runner`]. All orchestration
//! lives in the library; this binary only parses arguments, applies the
//! seed/output overrides, prints report lines, and maps errors to their
//! stable exit codes.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use ipi::config::Config;
use ipi::error::{Error, Result};
use ipi::plot::{emit_plot, PlotKind};
use ipi::runner::{resolve_out_dir, run_offline, run_online, run_sweep, run_verify};

#[derive(Parser)]
#[command(
    name = "ipi",
    version,
    about = "Incremental policy iteration: train, adapt, verify, plot, sweep"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect excitation episodes, train a value kernel offline, and write
    /// an artifact bundle.
    Offline {
        /// Experiment configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Bundle directory (default: the configured output.dir, else
        /// runs/<experiment name>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Resume a trained controller from a baseline bundle and adapt it in
    /// closed loop on the configured plant.
    Online {
        #[arg(long)]
        config: PathBuf,
        /// Offline bundle to resume from.
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the learner against closed-form ground truth on the linear
    /// benchmark; any failed item exits nonzero.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the report and configuration copy here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a bundle CSV (trajectory or training history) to SVG.
    Plot {
        /// CSV produced by an offline or online run.
        input: PathBuf,
        /// Curve family; inferred from the CSV header when omitted.
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
        /// Directory for the SVG (default: beside the input).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one offline training per configuration file, in parallel.
    Sweep {
        /// Configuration files, one bundle each.
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Worker count.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Base directory; each bundle goes into <out>/<config stem>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Trajectory,
    History,
}

impl From<KindArg> for PlotKind {
    fn from(kind: KindArg) -> Self {
        match kind {
            KindArg::Trajectory => PlotKind::Trajectory,
            KindArg::History => PlotKind::History,
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(err.exit_code());
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Offline { config, seed, out } => {
            let cfg = load(&config, seed)?;
            let dir = resolve_out_dir(&cfg, out.as_deref());
            let report = run_offline(&cfg, &dir)?;
            print_lines(&report.lines);
            finish(report.exit_error())
        }
        Command::Online {
            config,
            baseline,
            seed,
            out,
        } => {
            let cfg = load(&config, seed)?;
            let dir = resolve_out_dir(&cfg, out.as_deref());
            let report = run_online(&cfg, &baseline, &dir)?;
            print_lines(&report.lines);
            finish(report.exit_error())
        }
        Command::Verify { config, seed, out } => {
            let cfg = load(&config, seed)?;
            let report = run_verify(&cfg, out.as_deref())?;
            print_lines(&report.lines);
            finish(report.exit_error())
        }
        Command::Plot { input, kind, out } => {
            let kind = match kind {
                Some(k) => k.into(),
                None => infer_kind(&input)?,
            };
            let stem = input
                .file_stem()
                .ok_or_else(|| Error::Input(format!("no file name in {}", input.display())))?;
            let svg_name = PathBuf::from(stem).with_extension("svg");
            let out_path = match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    dir.join(svg_name)
                }
                None => input.with_extension("svg"),
            };
            emit_plot(&input, kind, &out_path)?;
            println!("plot -> {}", out_path.display());
            Ok(0)
        }
        Command::Sweep { configs, jobs, out } => {
            let report = run_sweep(&configs, jobs, out.as_deref())?;
            print_lines(&report.lines);
            Ok(report.exit_code.unwrap_or(0))
        }
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<Config> {
    let mut cfg = Config::load(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn print_lines(lines: &[String]) {
    for line in lines {
        println!("{line}");
    }
}

/// A report whose checks failed still printed its lines; surface the mapped
/// error on stderr and exit with its code.
fn finish(err: Option<Error>) -> Result<i32> {
    match err {
        Some(err) => {
            eprintln!("error: {err}");
            Ok(err.exit_code())
        }
        None => Ok(0),
    }
}

/// Reads the CSV header to decide which curve family the file holds.
fn infer_kind(path: &Path) -> Result<PlotKind> {
    let text = std::fs::read_to_string(path)?;
    let header = text.lines().next().unwrap_or("");
    if header.starts_with("k,x1") {
        Ok(PlotKind::Trajectory)
    } else if header.starts_with("iteration,p11") {
        Ok(PlotKind::History)
    } else {
        Err(Error::Input(format!(
            "cannot infer plot kind from header `{header}`; pass --kind"
        )))
    }
}
