//! Command-line front end.
//!
//! One binary, seven subcommands: `preprocess`, `train`, `eval`, `infer`,
//! `visualize`, `ablate`, `selftest`. Everything reads and writes files;
//! nothing is interactive. Exit codes: 0 success, 1 usage error, 2 data
//! error, 3 internal invariant failure.
//!
//! `OFFNET_LOG` selects the log level: `error`, `info` (default), `debug`.

mod commands;
mod selftest;

use std::path::PathBuf;
use std::sync::OnceLock;

use crate::dataset::{DatasetError, Split};
use crate::eval::EvalError;
use crate::geometry::GeometryError;
use crate::model::ModelError;
use crate::raster::RasterError;
use crate::tensor::TensorError;
use crate::train::TrainError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Internal(m) => m,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Tensor(t) => CliError::Internal(t.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<RasterError> for CliError {
    fn from(e: RasterError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Tensor(t) => CliError::Internal(t.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::ShapeMismatch { .. } => CliError::Internal(e.to_string()),
            EvalError::Model(m) => m.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::MissingGrad(_) => CliError::Internal(e.to_string()),
            TrainError::Tensor(t) => CliError::Internal(t.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Eval(v) => v.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

// ---------------------------------------------------------------------------
// Logging
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum LogLevel {
    Error,
    Info,
    Debug,
}

fn log_level() -> LogLevel {
    static LEVEL: OnceLock<LogLevel> = OnceLock::new();
    *LEVEL.get_or_init(|| match std::env::var("OFFNET_LOG").as_deref() {
        Ok("error") => LogLevel::Error,
        Ok("debug") => LogLevel::Debug,
        _ => LogLevel::Info,
    })
}

pub(crate) fn log_info(msg: &str) {
    if log_level() >= LogLevel::Info {
        eprintln!("[info] {msg}");
    }
}

pub(crate) fn log_debug(msg: &str) {
    if log_level() >= LogLevel::Debug {
        eprintln!("[debug] {msg}");
    }
}

pub(crate) fn log_error(msg: &str) {
    eprintln!("[error] {msg}");
}

// ---------------------------------------------------------------------------
// Argument parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Preprocess,
    Train,
    Eval,
    Infer,
    Visualize,
    Ablate,
    Selftest,
}

impl Command {
    fn parse(s: &str) -> Option<Command> {
        match s {
            "preprocess" => Some(Command::Preprocess),
            "train" => Some(Command::Train),
            "eval" => Some(Command::Eval),
            "infer" => Some(Command::Infer),
            "visualize" => Some(Command::Visualize),
            "ablate" => Some(Command::Ablate),
            "selftest" => Some(Command::Selftest),
            _ => None,
        }
    }
}

/// Parsed invocation: the command plus every flag the surface accepts.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub dataset_root: Option<PathBuf>,
    pub model_config: Option<PathBuf>,
    pub train_config: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub threshold: f32,
    pub seed: Option<u64>,
    pub jobs: usize,
    pub split: Split,
    pub split_file: Option<PathBuf>,
    pub positionals: Vec<String>,
}

const USAGE: &str = "\
offnet <command> [flags]

commands:
  preprocess   project LiDAR clouds into sparse/dense depth and surface normals
  train        train on a dataset, writing checkpoints and a metrics log
  eval         evaluate a checkpoint on a split (report + per-frame CSV)
  infer        write per-frame prediction PNGs for a split
  visualize    overlay a prediction PNG on an RGB image
  ablate       run the encoder-depth x fusion on/off matrix on a fixture
  selftest     run built-in numeric and geometric oracles

flags:
  --root <dir>           dataset root
  --out <dir>            output directory (default: out)
  --model-config <file>  architectural config (key = value lines)
  --train-config <file>  training config (key = value lines)
  --checkpoint <file>    checkpoint to load (eval, infer)
  --threshold <float>    traversable threshold (default: 0.5)
  --seed <int>           seed override (default: 0)
  --jobs <int>           worker threads for preprocess (default: 1)
  --split <name>         train | val | test (default: test)
  --split-file <file>    sequence-to-split assignment file
";

pub fn parse_args(args: &[String]) -> Result<RunConfig> {
    let mut iter = args.iter();
    let first = iter
        .next()
        .ok_or_else(|| CliError::Usage(format!("missing command\n{USAGE}")))?;
    if first == "--help" || first == "-h" || first == "help" {
        return Err(CliError::Usage(USAGE.to_string()));
    }
    let command = Command::parse(first)
        .ok_or_else(|| CliError::Usage(format!("unknown command {first:?}\n{USAGE}")))?;

    let mut cfg = RunConfig {
        command,
        dataset_root: None,
        model_config: None,
        train_config: None,
        checkpoint: None,
        output_dir: PathBuf::from("out"),
        threshold: 0.5,
        seed: None,
        jobs: 1,
        split: Split::Test,
        split_file: None,
        positionals: Vec::new(),
    };

    while let Some(arg) = iter.next() {
        let mut take_value = |name: &str| {
            iter.next()
                .cloned()
                .ok_or_else(|| CliError::Usage(format!("flag {name} needs a value")))
        };
        match arg.as_str() {
            "--root" => cfg.dataset_root = Some(PathBuf::from(take_value("--root")?)),
            "--out" => cfg.output_dir = PathBuf::from(take_value("--out")?),
            "--model-config" => {
                cfg.model_config = Some(PathBuf::from(take_value("--model-config")?))
            }
            "--train-config" => {
                cfg.train_config = Some(PathBuf::from(take_value("--train-config")?))
            }
            "--checkpoint" => cfg.checkpoint = Some(PathBuf::from(take_value("--checkpoint")?)),
            "--threshold" => {
                let v = take_value("--threshold")?;
                cfg.threshold = v
                    .parse()
                    .map_err(|_| CliError::Usage(format!("bad --threshold {v:?}")))?;
            }
            "--seed" => {
                let v = take_value("--seed")?;
                cfg.seed = Some(
                    v.parse()
                        .map_err(|_| CliError::Usage(format!("bad --seed {v:?}")))?,
                );
            }
            "--jobs" => {
                let v = take_value("--jobs")?;
                cfg.jobs = v
                    .parse()
                    .map_err(|_| CliError::Usage(format!("bad --jobs {v:?}")))?;
                if cfg.jobs == 0 {
                    return Err(CliError::Usage("--jobs must be >= 1".into()));
                }
            }
            "--split" => {
                let v = take_value("--split")?;
                cfg.split = Split::parse(&v)
                    .ok_or_else(|| CliError::Usage(format!("bad --split {v:?}")))?;
            }
            "--split-file" => cfg.split_file = Some(PathBuf::from(take_value("--split-file")?)),
            "--help" | "-h" => return Err(CliError::Usage(USAGE.to_string())),
            flag if flag.starts_with("--") => {
                return Err(CliError::Usage(format!("unknown flag {flag:?}\n{USAGE}")))
            }
            positional => cfg.positionals.push(positional.to_string()),
        }
    }
    Ok(cfg)
}

fn dispatch(cfg: &RunConfig) -> Result<()> {
    match cfg.command {
        Command::Preprocess => commands::cmd_preprocess(cfg),
        Command::Train => commands::cmd_train(cfg),
        Command::Eval => commands::cmd_eval(cfg),
        Command::Infer => commands::cmd_infer(cfg),
        Command::Visualize => commands::cmd_visualize(cfg),
        Command::Ablate => commands::cmd_ablate(cfg),
        Command::Selftest => selftest::cmd_selftest(),
    }
}

/// Parse and run; returns the process exit code.
pub fn run(args: &[String]) -> i32 {
    let cfg = match parse_args(args) {
        Ok(cfg) => cfg,
        Err(e) => {
            log_error(e.message());
            return e.exit_code();
        }
    };
    match dispatch(&cfg) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            log_error(e.message());
            e.exit_code()
        }
    }
}

pub fn main_from_env() -> i32 {
    let args: Vec<String> = std::env::args().skip(1).collect();
    run(&args)
}
