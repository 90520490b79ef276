//! The `vml` command line.
//!
//! Exit codes: 0 on success, 2 when the inputs are at fault (arguments,
//! config or data), 3 when a run fails.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::backend::{Backend, OracleBackend, OracleRole, RemoteBackend, ScriptedBackend};
use crate::config::{fixtures_for, load_config};
use crate::datasets::{self, Split};
use crate::domain::{BackendSpec, BuiltinTask, Input, ModelParams, RunConfig, TaskSpec, UpdateStrategy};
use crate::error::{Result, VmlError};
use crate::numfmt::py_repr;
use crate::prompting::PromptFixtureSet;
use crate::studies::{
    self, default_grid, ensemble_predict, grid_csv, invariance_study, linspace, numerical_error_report, parse_variants,
    GroundTruth, StudyContext,
};
use crate::training::runlog::{export_csv, read_log, RunLogWriter};
use crate::training::{console_block, load_data, Backends, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "vml",
    version,
    about = "Verbalized machine learning: train natural-language models with LLMs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a verbalized model.
    Train(TrainArgs),
    /// Run an evaluation study.
    #[command(subcommand)]
    Study(StudyCommand),
    /// Export a run log as CSV.
    Export(ExportArgs),
    /// Write a generated dataset as CSV.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Backend for learner and optimizer: oracle, scripted:DIR or openai:URL:MODEL.
    #[arg(long)]
    pub backend: Option<BackendSpec>,
    /// Output directory for the run log.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replay a recorded run: DIR holds script.jsonl and optionally dataset.csv.
    /// The run starts from a blank learned text, as recorded runs do.
    #[arg(long, value_name = "DIR")]
    pub replay: Option<PathBuf>,
    /// Show the loss value to the optimizer.
    #[arg(long)]
    pub include_loss: bool,
    /// Number of past optimizer exchanges kept in the prompt.
    #[arg(long, value_name = "N")]
    pub history: Option<usize>,
    /// replace, append or append-summarized.
    #[arg(long)]
    pub update_strategy: Option<UpdateStrategy>,
    /// Continue from the last persisted step in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct StudyOptions {
    /// Backend for the learner: oracle, scripted:DIR or openai:URL:MODEL.
    #[arg(long, default_value = "oracle")]
    pub backend: BackendSpec,
    #[arg(long, default_value_t = studies::DEFAULT_REPEATS)]
    pub repeats: usize,
    #[arg(long, default_value_t = studies::DEFAULT_GRID_POINTS)]
    pub points: usize,
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
    /// Maximum concurrent learner calls.
    #[arg(long, default_value_t = studies::DEFAULT_IN_FLIGHT)]
    pub in_flight: usize,
    /// Output directory for study files.
    #[arg(long, default_value = "study")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum StudyCommand {
    /// Grid evaluation of a function description against its ground truth.
    NumericError {
        /// linear_3x4, poly_3x2x2 or sin.
        #[arg(long = "fn")]
        function: String,
        /// Description to evaluate; the symbolic ground truth by default.
        #[arg(long)]
        theta: Option<String>,
        #[command(flatten)]
        opts: StudyOptions,
    },
    /// Compare predictions across rephrasings of one description.
    Invariance {
        /// File of variants separated by lines holding only `---`.
        #[arg(long)]
        variants: PathBuf,
        #[arg(long, default_value = "linear")]
        task: BuiltinTask,
        #[command(flatten)]
        opts: StudyOptions,
    },
    /// Monte-Carlo predictive mean and spread at one input.
    Ensemble {
        #[arg(long)]
        samples: usize,
        #[arg(long, default_value = "linear")]
        task: BuiltinTask,
        /// Learned description.
        #[arg(long)]
        theta: String,
        /// Input values, comma or space separated.
        #[arg(long)]
        input: String,
        #[command(flatten)]
        opts: StudyOptions,
    },
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Run directory or steps.jsonl file.
    #[arg(long)]
    pub log: PathBuf,
    /// Export only this metric: loss, loss_mse, loss_ce, loss_zero_one or accuracy.
    #[arg(long)]
    pub metric: Option<String>,
    /// Write to a file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub task: BuiltinTask,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub noise_scale: f64,
    /// Generate the test split.
    #[arg(long)]
    pub test: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// An error with its exit code.
struct Failure {
    code: i32,
    error: VmlError,
}

fn usage(error: VmlError) -> Failure {
    Failure {
        code: EXIT_USAGE,
        error,
    }
}

/// Usage-class errors exit 2; everything else is a runtime failure.
fn classify(error: VmlError) -> Failure {
    let code = match error {
        VmlError::InvalidArgument(_)
        | VmlError::Config(_)
        | VmlError::Ingestion { .. }
        | VmlError::CorruptLog { .. } => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    };
    Failure { code, error }
}

type CliResult = std::result::Result<(), Failure>;

/// Parses `args` and runs the command, writing to `out` and `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a, out),
        Command::Study(s) => cmd_study(s, out),
        Command::Export(a) => cmd_export(a, out),
        Command::Generate(a) => cmd_generate(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.error);
            f.code
        }
    }
}

/// Builds one backend per role. A learner and optimizer scripted from the
/// same directory share one script, consumed in call order.
pub fn build_backends(cfg: &RunConfig, strict: bool) -> Result<(Arc<dyn Backend>, Arc<dyn Backend>)> {
    let make = |spec: &BackendSpec, role: OracleRole| -> Result<Arc<dyn Backend>> {
        Ok(match spec {
            BackendSpec::Oracle => Arc::new(OracleBackend::new(role, cfg.task.clone())?),
            BackendSpec::Scripted { dir } => Arc::new(ScriptedBackend::from_dir(dir, strict)?),
            BackendSpec::OpenAi { base_url, model } => Arc::new(RemoteBackend::new(base_url.clone(), model.clone())),
        })
    };
    let learner = make(&cfg.learner, OracleRole::Learner)?;
    let optimizer = match (&cfg.learner, &cfg.optimizer) {
        (BackendSpec::Scripted { dir: a }, BackendSpec::Scripted { dir: b }) if a == b => Arc::clone(&learner),
        (_, spec) => make(spec, OracleRole::Optimizer)?,
    };
    Ok((learner, optimizer))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> CliResult {
    let mut cfg = load_config(&a.config).map_err(usage)?;
    if let Some(b) = a.backend {
        cfg.learner = b.clone();
        cfg.optimizer = b;
    }
    if let Some(dir) = &a.replay {
        let spec = BackendSpec::Scripted { dir: dir.clone() };
        cfg.learner = spec.clone();
        cfg.optimizer = spec;
        let data = dir.join("dataset.csv");
        if data.exists() {
            cfg.data_file = Some(data);
        }
        cfg.eval_each_step = false;
        cfg.initial_theta = None;
    }
    if let Some(o) = a.out {
        cfg.out_dir = o;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.include_loss {
        cfg.optimizer_cfg.include_loss_value = true;
    }
    if let Some(h) = a.history {
        cfg.optimizer_cfg.history_window = h;
    }
    if let Some(u) = a.update_strategy {
        cfg.optimizer_cfg.update_strategy = u;
    }
    cfg.validate().map_err(usage)?;
    let fixtures = fixtures_for(&cfg).map_err(usage)?;
    let (train_set, test_set) = load_data(&cfg).map_err(usage)?;
    let (learner, optimizer) = build_backends(&cfg, a.replay.is_some()).map_err(classify)?;
    let (writer, resume) = RunLogWriter::open(&cfg.out_dir, &cfg, a.resume).map_err(classify)?;
    let out_dir = cfg.out_dir.clone();
    let result = Trainer::new(
        &cfg,
        &fixtures,
        Backends {
            learner: learner.as_ref(),
            optimizer: optimizer.as_ref(),
            summarizer: None,
        },
    )
    .test_set(test_set.as_ref())
    .persist(writer, resume)
    .on_step(|record| {
        let _ = out.write_all(console_block(record).as_bytes());
        let _ = out.flush();
    })
    .run(&train_set);
    let log = result.map_err(classify)?;
    let _ = writeln!(
        out,
        "Finished {} steps; log written to {}",
        log.steps.len(),
        out_dir.display()
    );
    Ok(())
}

fn study_backend(spec: &BackendSpec, task: &TaskSpec) -> Result<Arc<dyn Backend>> {
    Ok(match spec {
        BackendSpec::Oracle => Arc::new(OracleBackend::new(OracleRole::Learner, task.clone())?),
        BackendSpec::Scripted { dir } => Arc::new(ScriptedBackend::from_dir(dir, false)?.cycling()),
        BackendSpec::OpenAi { base_url, model } => Arc::new(RemoteBackend::new(base_url.clone(), model.clone())),
    })
}

fn study_grid(task: BuiltinTask, points: usize) -> Result<Vec<f64>> {
    if points == studies::DEFAULT_GRID_POINTS {
        return default_grid(task);
    }
    let (lo, hi) = task
        .input_range()
        .ok_or_else(|| VmlError::invalid(format!("task {task} has no scalar input range")))?;
    Ok(linspace(lo, hi, points))
}

fn cmd_study(cmd: StudyCommand, out: &mut dyn Write) -> CliResult {
    match cmd {
        StudyCommand::NumericError { function, theta, opts } => {
            let gt: GroundTruth = function.parse().map_err(usage)?;
            let task = gt.task();
            let spec = task.spec();
            let fixtures = PromptFixtureSet::builtin(&spec.template_variant).map_err(usage)?;
            let grid = study_grid(task, opts.points).map_err(usage)?;
            let backend = study_backend(&opts.backend, &spec).map_err(classify)?;
            let ctx = StudyContext {
                backend: backend.as_ref(),
                fixtures: &fixtures,
                task: &spec,
                temperature: opts.temperature,
                in_flight: opts.in_flight,
            };
            let theta = theta.unwrap_or_else(|| gt.theta().to_string());
            let rows = studies::grid_eval(&ctx, &theta, &grid, opts.repeats).map_err(classify)?;
            let report = numerical_error_report(&rows, gt);
            let path = opts.out.join(format!("numeric_error_{function}.csv"));
            write_file(&path, &grid_csv(&report.rows, Some(&report.errors))).map_err(classify)?;
            let _ = writeln!(
                out,
                "MAE {}\nmax |error| {}\nwrote {}",
                py_repr(report.mae),
                py_repr(report.max_abs_error),
                path.display()
            );
            Ok(())
        }
        StudyCommand::Invariance { variants, task, opts } => {
            let text = fs::read_to_string(&variants)
                .map_err(|e| usage(VmlError::Config(format!("{}: {e}", variants.display()))))?;
            let variants = parse_variants(&text);
            if variants.len() < 2 {
                return Err(usage(VmlError::invalid(format!(
                    "an invariance study needs at least 2 variants, got {}",
                    variants.len()
                ))));
            }
            let spec = task.spec();
            let fixtures = PromptFixtureSet::builtin(&spec.template_variant).map_err(usage)?;
            let grid = study_grid(task, opts.points).map_err(usage)?;
            let backend = study_backend(&opts.backend, &spec).map_err(classify)?;
            let ctx = StudyContext {
                backend: backend.as_ref(),
                fixtures: &fixtures,
                task: &spec,
                temperature: opts.temperature,
                in_flight: opts.in_flight,
            };
            let report = invariance_study(&ctx, &variants, &grid, opts.repeats).map_err(classify)?;
            for (i, table) in report.tables.iter().enumerate() {
                let path = opts.out.join(format!("invariance_{i}.csv"));
                write_file(&path, &grid_csv(table, None)).map_err(classify)?;
            }
            let summary = report.render();
            write_file(&opts.out.join("invariance_summary.txt"), &summary).map_err(classify)?;
            let _ = write!(out, "{summary}");
            Ok(())
        }
        StudyCommand::Ensemble {
            samples,
            task,
            theta,
            input,
            opts,
        } => {
            let spec = task.spec();
            let fixtures = PromptFixtureSet::builtin(&spec.template_variant).map_err(usage)?;
            let values: Vec<f64> = input
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| VmlError::invalid(format!("'{s}' is not a number")))
                })
                .collect::<Result<_>>()
                .map_err(usage)?;
            if Some(values.len()) != spec.family.input_dim() {
                return Err(usage(VmlError::invalid(format!(
                    "task {task} takes a different input width"
                ))));
            }
            let params = ModelParams::from_prior(fixtures.task_definition.clone())
                .map_err(usage)?
                .with_learned(theta);
            let backend = study_backend(&opts.backend, &spec).map_err(classify)?;
            let ctx = StudyContext {
                backend: backend.as_ref(),
                fixtures: &fixtures,
                task: &spec,
                temperature: opts.temperature,
                in_flight: opts.in_flight,
            };
            let e = ensemble_predict(&ctx, &params, &Input::Vector(values), samples).map_err(classify)?;
            let mean = match &e.mean {
                crate::domain::Target::Real(v) => py_repr(*v),
                other => serde_json::to_string(other).unwrap_or_default(),
            };
            let spread: Vec<String> = e.spread.iter().map(|s| py_repr(*s)).collect();
            let _ = writeln!(
                out,
                "mean {mean}\nstdev {}\nsamples {} failures {}",
                spread.join(" "),
                e.samples.len(),
                e.failures
            );
            Ok(())
        }
    }
}

fn cmd_export(a: ExportArgs, out: &mut dyn Write) -> CliResult {
    let lines = read_log(&a.log).map_err(|e| match e {
        VmlError::Io(io) => usage(VmlError::Config(format!("{}: {io}", a.log.display()))),
        other => usage(other),
    })?;
    let csv = export_csv(&lines, a.metric.as_deref()).map_err(usage)?;
    match a.out {
        Some(path) => write_file(&path, &csv).map_err(classify)?,
        None => {
            let _ = out.write_all(csv.as_bytes());
        }
    }
    Ok(())
}

fn cmd_generate(a: GenerateArgs, out: &mut dyn Write) -> CliResult {
    let split = if a.test { Split::Test } else { Split::Train };
    let ds = datasets::generate(a.task, a.n, a.seed, a.noise_scale, split).map_err(usage)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| classify(e.into()))?;
    }
    datasets::write_csv(&ds, &a.out).map_err(classify)?;
    let _ = writeln!(out, "wrote {} points to {}", ds.points.len(), a.out.display());
    Ok(())
}
