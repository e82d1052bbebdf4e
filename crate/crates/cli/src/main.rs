mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};

use commands::{Method, Mode, ModelKind, TrainArgs};
use config::{LabelFormatName, RunConfig};
use error::CliError;

/// Vocal melody extraction: signal-processing and neural pitch trackers,
/// teacher-student training and RPA/RCA evaluation.
#[derive(Debug, Parser)]
#[command(name = "melody", version)]
struct Cli {
    /// TOML file overriding built-in defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Seed for initialisation, shuffling and subsampling.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct LabelArgs {
    /// Label file format: hz, midi (one value per line) or csv (time,f0).
    #[arg(long)]
    label_format: Option<LabelFormatName>,
    /// Seconds between label rows.
    #[arg(long)]
    label_hop: Option<f64>,
    /// Time of the first label row in seconds.
    #[arg(long)]
    label_start: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate a pitch contour and write it as `time_sec,f0_hz` CSV.
    Extract {
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        audio: PathBuf,
        out: PathBuf,
    },
    /// Train a teacher on the labeled split or a student on the unlabeled split.
    Train {
        #[arg(long, value_enum)]
        model: ModelKind,
        #[arg(long, value_enum, default_value = "teacher")]
        mode: Mode,
        /// Teacher checkpoint (student mode).
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Training log path; defaults to `<out>.log`.
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        labels: LabelArgs,
        manifest: PathBuf,
        out: PathBuf,
    },
    /// Score a method on the eval split and write a per-clip CSV report.
    Evaluate {
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        tolerance_cents: Option<f64>,
        #[command(flatten)]
        labels: LabelArgs,
        manifest: PathBuf,
        report: PathBuf,
    },
    /// Write the CFP representation of a clip as CSV.
    CfpDump { audio: PathBuf, out: PathBuf },
}

fn apply_labels(cfg: &mut RunConfig, args: &LabelArgs) {
    if let Some(f) = args.label_format {
        cfg.labels.format = f;
    }
    if let Some(h) = args.label_hop {
        cfg.labels.hop_seconds = h;
    }
    if let Some(s) = args.label_start {
        cfg.labels.start_seconds = s;
    }
}

fn usage_error(msg: &str) -> ! {
    Cli::command().error(ErrorKind::MissingRequiredArgument, msg).exit()
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    match cli.command {
        Command::Extract {
            method,
            checkpoint,
            audio,
            out,
        } => {
            if method.needs_checkpoint() && checkpoint.is_none() {
                usage_error("--checkpoint <PATH> is required for this --method");
            }
            commands::extract(&cfg, method, checkpoint.as_deref(), &audio, &out)
        }
        Command::Train {
            model,
            mode,
            teacher,
            epochs,
            log,
            labels,
            manifest,
            out,
        } => {
            if mode == Mode::Student && teacher.is_none() {
                usage_error("--teacher <PATH> is required with --mode student");
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            apply_labels(&mut cfg, &labels);
            let report = commands::train(
                &cfg,
                TrainArgs {
                    kind: model,
                    mode,
                    teacher: teacher.as_deref(),
                    manifest: &manifest,
                    out: &out,
                    log,
                },
            )?;
            if let Some(l) = report.final_loss() {
                println!("final loss: {l:.6}");
            }
            Ok(())
        }
        Command::Evaluate {
            method,
            checkpoint,
            tolerance_cents,
            labels,
            manifest,
            report,
        } => {
            if method.needs_checkpoint() && checkpoint.is_none() {
                usage_error("--checkpoint <PATH> is required for this --method");
            }
            if let Some(t) = tolerance_cents {
                cfg.eval.tolerance_cents = t;
            }
            apply_labels(&mut cfg, &labels);
            let summary = commands::evaluate(&cfg, method, checkpoint.as_deref(), &manifest, &report)?;
            println!("{summary}");
            Ok(())
        }
        Command::CfpDump { audio, out } => commands::cfp_dump(&cfg, &audio, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
