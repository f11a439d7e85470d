//! `orgapipe` command-line interface.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use orgapipe_core::imaging::{load_stack, Digest};
use orgapipe_core::ml::{self, export_model, load_training_csv, Architecture, CvConfig, ModelSpec, Task};
use orgapipe_core::pipeline::{self, Backends, PipelineConfig, PipelineError, RunOptions, Stage};
use orgapipe_core::store::{export_csv, export_json, export_npy, Cache};
use serde_json::json;

use crate::service;

#[derive(Debug, Parser)]
#[command(name = "orgapipe", version, about = "Organoid image analysis pipeline")]
pub struct Cli {
    /// Session cache directory.
    #[arg(long, global = true, env = "ORGAPIPE_CACHE", default_value = ".orgapipe-cache")]
    pub cache: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the pipeline described by a TOML config.
    Run {
        config: PathBuf,
        /// Run only these stages (repeatable or comma-separated).
        #[arg(long = "stage", value_delimiter = ',')]
        stages: Vec<Stage>,
        /// Output directory for exports.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Pipeline config whose detection/segmentation backends the service uses.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model on a feature CSV and report cross-validation scores.
    Train {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        label: String,
        #[arg(long)]
        arch: Architecture,
        #[arg(long, value_enum, default_value_t = TaskArg::Classification)]
        task: TaskArg,
        /// Feature columns (default: all numeric measured columns).
        #[arg(long, value_delimiter = ',')]
        columns: Vec<String>,
        /// Hyperparameter override, `name=value` (repeatable).
        #[arg(long = "param", value_parser = parse_param)]
        params: Vec<(String, f64)>,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long)]
        no_stratify: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the trained model container here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export a cached session.
    Export {
        /// Image whose cached session to export.
        #[arg(long, conflicts_with = "hash", required_unless_present = "hash")]
        image: Option<PathBuf>,
        /// Content hash of the cached session.
        #[arg(long)]
        hash: Option<String>,
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
        /// Frame for NPY export.
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long)]
        include_hidden: bool,
        /// Output file (default stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Classification,
    Regression,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Classification => Task::Classification,
            TaskArg::Regression => Task::Regression,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
    Npy,
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected name=value, got {s:?}"))?;
    let v: f64 = v.trim().parse().map_err(|_| format!("{v:?} is not a number"))?;
    Ok((k.trim().to_string(), v))
}

/// Runs a parsed command and returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    match cli.command {
        Command::Run { config, stages, out } => run(&config, stages, out, &cli.cache),
        other => match dispatch(other, &cli.cache) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("{}", json!({"error": {"kind": "command", "message": format!("{e:#}")}}));
                1
            }
        },
    }
}

fn run(config: &Path, stages: Vec<Stage>, out: Option<PathBuf>, cache: &Path) -> i32 {
    let outcome = PipelineConfig::from_path(config).and_then(|cfg| {
        let opts = RunOptions { stages: (!stages.is_empty()).then(|| stages.into_iter().collect()), out_dir: out };
        pipeline::run(&cfg, &opts, &Cache::new(cache))
    });
    match outcome {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            0
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, cache: &Path) -> anyhow::Result<()> {
    match command {
        Command::Run { .. } => unreachable!("handled by execute"),
        Command::Serve { port, host, config } => {
            let backends = match config {
                Some(p) => {
                    let cfg = PipelineConfig::from_path(&p).map_err(pipeline_error)?;
                    Backends::connect(&cfg.detection.backend, &cfg.segmentation.backend).map_err(pipeline_error)?
                }
                None => Backends::classical(),
            };
            let state = service::AppState::new(cache, backends);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(service::serve((host, port).into(), state))?;
            Ok(())
        }
        Command::Train { csv, label, arch, task, columns, params, folds, no_stratify, seed, out } => {
            let task = Task::from(task);
            let cols = (!columns.is_empty()).then_some(columns);
            let loaded = load_training_csv(&csv, &label, cols.as_deref(), task)?;
            let spec = params.iter().fold(ModelSpec::new(arch, task, seed), |s, (k, v)| s.with(k, *v));
            let cv = CvConfig { k: folds, stratified: !no_stratify, seed };
            let report = ml::cross_validate(&spec, &loaded.dataset, &cv)?;
            let mut model = ml::train(&spec, &loaded.dataset)?;
            model.report.cv = Some(report);
            if let Some(path) = &out {
                std::fs::write(path, export_model(&model)).with_context(|| format!("writing {}", path.display()))?;
            }
            let summary = json!({
                "n_samples": loaded.dataset.len(),
                "dropped": loaded.dropped,
                "schema": model.schema,
                "vocabulary": model.vocabulary,
                "report": model.report,
                "model_path": out,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
        Command::Export { image, hash, format, frame, include_hidden, out } => {
            let digest = match (image, hash) {
                (Some(p), _) => load_stack(&p, None).with_context(|| format!("loading {}", p.display()))?.content_hash(),
                (None, Some(h)) => Digest::from_hex(&h).ok_or_else(|| anyhow!("{h:?} is not a 64-character hex hash"))?,
                (None, None) => bail!("give --image or --hash"),
            };
            let session = Cache::new(cache)
                .load(&digest)
                .ok_or_else(|| anyhow!("no cached session for {digest}; run the pipeline first"))?;
            let bytes = match format {
                FormatArg::Csv => export_csv(&session, include_hidden).into_bytes(),
                FormatArg::Json => export_json(&session, None)?,
                FormatArg::Npy => export_npy(&session, frame)?,
            };
            match out {
                Some(p) => std::fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?,
                None => std::io::stdout().lock().write_all(&bytes)?,
            }
            Ok(())
        }
    }
}

fn pipeline_error(e: PipelineError) -> anyhow::Error {
    anyhow!("{e}")
}
