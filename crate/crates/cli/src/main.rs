//! `groundscore`: score grounding predictions, plan balanced batches and
//! filter samples by difficulty.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use groundscore_core::balance::{balance, SeqMeta};
use groundscore_core::harness::{load_pred, load_scores, load_truth, run_eval, EvalConfig};
use groundscore_core::metrics::{
    filter_by_difficulty, TrajectoryMode, DEFAULT_GRASP_IOU_THRESHOLD,
};
use groundscore_core::{GroundingKind, HarnessError};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Config(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Data(_) => 2,
            CliError::Config(_) => 3,
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Io { path, source } => CliError::Io { path, source },
            HarnessError::Config(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "groundscore", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrajMode {
    Score,
    Distance,
}

#[derive(Subcommand)]
enum Command {
    /// Score a prediction file against ground truth.
    Score {
        /// Task to score (`object`, `area`, `affordance`, `trajectory`, `grasp_pose`) or `all`.
        #[arg(long, default_value = "all")]
        task: String,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        lambda_traj: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda_aff: f64,
        #[arg(long, value_enum, default_value = "score")]
        traj_mode: TrajMode,
        /// Rotated-IoU threshold of the grasp rectangle metric.
        #[arg(long, default_value_t = DEFAULT_GRASP_IOU_THRESHOLD)]
        iou_threshold: f64,
        /// Treat any malformed span as a parse failure instead of recovering.
        #[arg(long)]
        strict_parse: bool,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Ignore predictions without a truth record.
        #[arg(long)]
        skip_unmatched: bool,
        /// Fail with exit code 2 when more than this fraction of predictions cannot be parsed.
        #[arg(long, default_value_t = 1.0)]
        max_parse_failures: f64,
    },
    /// Assign sequences to data-parallel workers, longest first.
    Plan {
        /// One sequence per line: a bare token count or `{"id": ..., "est_tokens": ...}`.
        #[arg(long)]
        lengths: PathBuf,
        #[arg(long)]
        world_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Keep samples of intermediate difficulty plus key-frame failures.
    Filter {
        /// One `{"id": ..., "score": 0-100, "frame_valid": bool}` object per line.
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, default_value_t = 40.0)]
        low: f64,
        #[arg(long, default_value_t = 80.0)]
        high: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Score {
            task,
            truth,
            pred,
            out,
            lambda_traj,
            lambda_aff,
            traj_mode,
            iou_threshold,
            strict_parse,
            workers,
            skip_unmatched,
            max_parse_failures,
        } => {
            let task = match task.as_str() {
                "all" => None,
                name => Some(name.parse::<GroundingKind>().map_err(CliError::Config)?),
            };
            let config = EvalConfig {
                task,
                lambda_traj,
                lambda_aff,
                traj_mode: match traj_mode {
                    TrajMode::Score => TrajectoryMode::Score,
                    TrajMode::Distance => TrajectoryMode::Distance,
                },
                grasp_iou_threshold: iou_threshold,
                strict_parse,
                workers,
                skip_unmatched,
                max_parse_failure_rate: max_parse_failures,
                ..EvalConfig::default()
            };
            config.validate()?;
            let truth = load_truth(&truth)?;
            let preds = load_pred(&pred)?;
            let report = run_eval(&truth, &preds, &config)?;
            for (kind, s) in &report.tasks {
                let mean = s.mean.map_or("n/a".to_string(), |m| m.to_string());
                eprintln!(
                    "{kind:<11} mean {mean:>7}  n={} frame_miss={} parse_fail={}",
                    s.count, s.frame_misses, s.parse_failures
                );
            }
            write(&out, &report.to_json_pretty())
        }
        Command::Plan {
            lengths,
            world_size,
            out,
        } => {
            if world_size == 0 {
                return Err(CliError::Config("--world-size must be at least 1".into()));
            }
            let seqs = read_lengths(&lengths)?;
            let plan = balance(&seqs, world_size).map_err(|e| CliError::Config(e.to_string()))?;
            eprintln!("makespan {} over {} workers", plan.makespan(), world_size);
            write(
                &out,
                &serde_json::to_string_pretty(&plan.to_json()).expect("json"),
            )
        }
        Command::Filter {
            scores,
            low,
            high,
            out,
        } => {
            if low.is_nan() || high.is_nan() || low >= high {
                return Err(CliError::Config(format!(
                    "--low {low} must be below --high {high}"
                )));
            }
            let scores = load_scores(&scores)?;
            let kept = filter_by_difficulty(&scores, low, high);
            eprintln!("kept {} of {} samples", kept.len(), scores.len());
            let doc = serde_json::json!({ "low": low, "high": high, "kept": kept });
            write(&out, &serde_json::to_string_pretty(&doc).expect("json"))
        }
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, format!("{text}\n")).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LengthLine {
    Bare(u64),
    Tagged { id: String, est_tokens: u64 },
}

fn read_lengths(path: &Path) -> Result<Vec<SeqMeta>, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut seqs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| CliError::Data(format!("line {}: {m}", i + 1));
        let parsed: LengthLine = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let (id, tokens) = match parsed {
            LengthLine::Bare(n) => (seqs.len().to_string(), n),
            LengthLine::Tagged { id, est_tokens } => (id, est_tokens),
        };
        seqs.push(SeqMeta::new(id, tokens).map_err(|e| bad(e.to_string()))?);
    }
    Ok(seqs)
}
