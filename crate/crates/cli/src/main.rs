//! `semgcs`: generate synthetic cohorts, split, extract features, train,
//! evaluate, predict and run the ablation sweeps.
//!
//! Log verbosity follows `SEMGCS_LOG` (`error`, `warn`, `info`, `debug`;
//! default `info`). Logs go to stderr; reports go to stdout.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use semgcs::dataset::Part;
use semgcs::features::{FAMILIES, FAMILY_NAMES};
use semgcs::pipeline::{
    check_output, prepare_synthetic, run_experiment, run_sweep, stage_eval, stage_extract, stage_generate,
    stage_predict, stage_split, stage_train, sweep_table, PipelineConfig, PipelineError, Sweep, CHECKPOINT_FILE,
};

const LOG_ENV: &str = "SEMGCS_LOG";

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Parser, Debug)]
#[command(name = "semgcs", version, about = "Six-channel sEMG feature-grid classifier")]
struct Cli {
    /// Pipeline configuration (JSON); unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for generation, splitting, sampling and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ModelFlags {
    /// Channel mask over the time, freq, dwt, wpd, ar and entropy families,
    /// e.g. 1,1,1,0,0,0.
    #[arg(long, value_parser = parse_channels)]
    channels: Option<[bool; FAMILIES]>,
    /// Convolution kernel size.
    #[arg(long)]
    filter_size: Option<usize>,
    #[arg(long)]
    max_epoch: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic cohort (recordings plus manifest).
    Generate {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Split the dataset's subjects 3:1:1 into train / validation / test.
    Split {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Draw sample grids and write the feature store.
    Extract {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Train on a feature store; writes checkpoint, history and scaler.
    Train {
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        force: bool,
    },
    /// Score a checkpoint on one part of a feature store.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        part: Part,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Write per-sample probabilities for one part of a feature store.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        part: Part,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Run a synthetic experiment in memory and print its test metrics.
    Run {
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Run the channel or filter-size ablation in memory; one row per run.
    Sweep {
        #[arg(value_enum)]
        kind: SweepKind,
        #[command(flatten)]
        model: ModelFlags,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum SweepKind {
    Channels,
    FilterSize,
}

fn parse_channels(s: &str) -> Result<[bool; FAMILIES], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != FAMILIES {
        return Err(format!("expected {FAMILIES} comma-separated 0/1 values, got {}", parts.len()));
    }
    let mut mask = [false; FAMILIES];
    for (m, p) in mask.iter_mut().zip(&parts) {
        *m = match *p {
            "1" => true,
            "0" => false,
            other => return Err(format!("channel flag must be 0 or 1, got {other:?}")),
        };
    }
    Ok(mask)
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    Ok(cfg)
}

fn apply_model_flags(cfg: &mut PipelineConfig, flags: &ModelFlags) -> Result<(), CliError> {
    if let Some(mask) = flags.channels {
        cfg.train.channel_mask = mask;
    }
    if let Some(k) = flags.filter_size {
        cfg.train.filter_size = k;
    }
    if let Some(e) = flags.max_epoch {
        cfg.train.max_epoch = e;
    }
    cfg.train.validate().map_err(PipelineError::from)?;
    Ok(())
}

fn write_text(path: &Path, text: &str, force: bool) -> Result<(), CliError> {
    check_output(path, force)?;
    std::fs::write(path, text).map_err(|source| CliError::Io { path: path.into(), source })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = load_config(&cli)?;
    let paths = cfg.paths.clone();
    let pick = |flag: &Option<PathBuf>, default: &Path| flag.clone().unwrap_or_else(|| default.to_path_buf());
    match &cli.command {
        Command::Generate { out, force } => {
            let out = pick(out, &paths.data);
            let manifest = stage_generate(&cfg.synth, &out, *force)?;
            println!("wrote {} subjects to {}", manifest.subjects.len(), out.display());
        }
        Command::Split { data, out, force } => {
            let out = pick(out, &paths.split);
            let split = stage_split(&pick(data, &paths.data), cfg.seed, &out, *force)?;
            let (tr, va, te) = split.sizes();
            println!("split {tr}/{va}/{te} subjects into {}", out.display());
        }
        Command::Extract { data, split, out, force } => {
            let out = pick(out, &paths.features);
            let meta = stage_extract(&pick(data, &paths.data), &pick(split, &paths.split), &cfg, &out, *force)?;
            let rows: Vec<String> = meta.rows.iter().map(|(p, n)| format!("{} {n}", p.name())).collect();
            println!("wrote feature store {} ({})", out.display(), rows.join(", "));
        }
        Command::Train { features, out, model, force } => {
            apply_model_flags(&mut cfg, model)?;
            let out = pick(out, &paths.run);
            let history = stage_train(&pick(features, &paths.features), &cfg.train, &out, *force)?;
            let best = history.best();
            let channels: Vec<&str> = cfg.train.architecture().active_channels().iter().map(|&f| FAMILY_NAMES[f]).collect();
            println!(
                "trained a {}-channel model ({}) for {} rounds ({}); best round {} validation accuracy {:.4}; outputs in {}",
                channels.len(),
                channels.join(","),
                history.rounds.len(),
                history.stop_reason,
                best.round,
                best.validation_accuracy,
                out.display()
            );
        }
        Command::Eval { checkpoint, features, part, out, force } => {
            let ck = checkpoint.clone().unwrap_or_else(|| paths.run.join(CHECKPOINT_FILE));
            let report = stage_eval(&ck, &pick(features, &paths.features), *part)?;
            if let Some(out) = out {
                write_text(out, &format!("{}\n", report.to_json()), *force)?;
            }
            print!("{}", semgcs::metrics::MetricsReport::table([("EasiDeep", &report)]));
        }
        Command::Predict { checkpoint, features, part, out, force } => {
            let ck = checkpoint.clone().unwrap_or_else(|| paths.run.join(CHECKPOINT_FILE));
            let n = stage_predict(&ck, &pick(features, &paths.features), *part, out, *force)?;
            println!("wrote {n} predictions to {}", out.display());
        }
        Command::Run { model } => {
            apply_model_flags(&mut cfg, model)?;
            let (_, sets) = prepare_synthetic(&cfg)?;
            let r = run_experiment(&sets, &cfg.train)?;
            print!("{}", semgcs::metrics::MetricsReport::table([("EasiDeep", &r.report)]));
        }
        Command::Sweep { kind, model, out, force } => {
            apply_model_flags(&mut cfg, model)?;
            if let Some(out) = out {
                check_output(out, *force)?;
            }
            let sweep = match kind {
                SweepKind::Channels => Sweep::Channels,
                SweepKind::FilterSize => Sweep::FilterSize,
            };
            let (_, sets) = prepare_synthetic(&cfg)?;
            let table = sweep_table(&run_sweep(&sets, sweep, &cfg.train)?);
            if let Some(out) = out {
                write_text(out, &table, true)?;
            }
            print!("{table}");
        }
    }
    Ok(())
}

/// The error and its sources on one line.
fn one_line(err: &dyn std::error::Error) -> String {
    let mut msg = err.to_string();
    let mut src = err.source();
    while let Some(s) = src {
        let text = s.to_string();
        if !msg.contains(&text) {
            msg.push_str(": ");
            msg.push_str(&text);
        }
        src = s.source();
    }
    msg.replace('\n', " ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or(LOG_ENV, "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("semgcs: error: {}", one_line(&e));
            ExitCode::FAILURE
        }
    }
}
