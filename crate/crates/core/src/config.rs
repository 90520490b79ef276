//! TOML run configuration.
//!
//! Every key is optional except `task`; missing keys take the defaults of
//! [`RunConfig::for_task`]. Relative paths resolve against the directory of
//! the config file.
//!
//! ```toml
//! task = "linear"            # linear | polynomial | sinusoid | two_blobs | two_circles | text
//! n = 100
//! batch_size = 10
//! epochs = 2
//! seed = 0
//! noise_scale = 1.0
//! backend = "oracle"         # sets learner and optimizer together
//! learner = "oracle"         # oracle | scripted:DIR | openai:URL:MODEL
//! optimizer = "oracle"
//! learner_temperature = 0.0
//! out_dir = "runs/linear"
//! prior = ""
//! initial_theta = "y = 0.00x + 0.00"
//! data_file = "data.csv"
//! template_dir = "templates/linear"
//! eval_each_step = true      # default: on for the oracle learner only
//! test_size = 20
//! concurrency = 10
//!
//! [optimizer_settings]
//! history_window = 1
//! include_loss_value = false
//! update_strategy = "replace" # replace | append | append-summarized
//! summary_length_cap = 128
//! temperature = 0.0
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::domain::{BackendSpec, BuiltinTask, RunConfig, UpdateStrategy};
use crate::error::{Result, VmlError};
use crate::prompting::PromptFixtureSet;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerSection {
    history_window: Option<usize>,
    include_loss_value: Option<bool>,
    update_strategy: Option<String>,
    summary_length_cap: Option<usize>,
    temperature: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    task: String,
    n: Option<usize>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
    seed: Option<u64>,
    noise_scale: Option<f64>,
    backend: Option<String>,
    learner: Option<String>,
    optimizer: Option<String>,
    learner_temperature: Option<f64>,
    out_dir: Option<PathBuf>,
    prior: Option<String>,
    initial_theta: Option<String>,
    data_file: Option<PathBuf>,
    template_dir: Option<PathBuf>,
    eval_each_step: Option<bool>,
    test_size: Option<usize>,
    concurrency: Option<usize>,
    #[serde(default)]
    optimizer_settings: OptimizerSection,
}

fn config_err(e: VmlError) -> VmlError {
    match e {
        VmlError::Config(_) => e,
        other => VmlError::Config(other.to_string()),
    }
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

fn resolve_backend(base: &Path, spec: BackendSpec) -> BackendSpec {
    match spec {
        BackendSpec::Scripted { dir } => BackendSpec::Scripted {
            dir: resolve(base, dir),
        },
        other => other,
    }
}

/// Parses config text; relative paths resolve against `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<RunConfig> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| VmlError::Config(e.to_string()))?;
    let task: BuiltinTask = file.task.parse().map_err(config_err)?;
    let mut cfg = RunConfig::for_task(task);
    macro_rules! set {
        ($($field:ident),*) => {
            $(if let Some(v) = file.$field { cfg.$field = v; })*
        };
    }
    set!(
        n,
        batch_size,
        epochs,
        seed,
        noise_scale,
        learner_temperature,
        test_size,
        concurrency
    );
    if let Some(b) = &file.backend {
        let spec: BackendSpec = b.parse().map_err(config_err)?;
        cfg.learner = spec.clone();
        cfg.optimizer = spec;
    }
    if let Some(b) = &file.learner {
        cfg.learner = b.parse().map_err(config_err)?;
    }
    if let Some(b) = &file.optimizer {
        cfg.optimizer = b.parse().map_err(config_err)?;
    }
    cfg.learner = resolve_backend(base, cfg.learner);
    cfg.optimizer = resolve_backend(base, cfg.optimizer);
    if let Some(p) = file.out_dir {
        cfg.out_dir = resolve(base, p);
    }
    if let Some(p) = file.prior {
        cfg.prior = p;
    }
    cfg.initial_theta = file.initial_theta.filter(|t| !t.trim().is_empty());
    cfg.data_file = file.data_file.map(|p| resolve(base, p));
    cfg.template_dir = file.template_dir.map(|p| resolve(base, p));
    cfg.eval_each_step = file
        .eval_each_step
        .unwrap_or(matches!(cfg.learner, BackendSpec::Oracle));
    let o = file.optimizer_settings;
    let oc = &mut cfg.optimizer_cfg;
    if let Some(v) = o.history_window {
        oc.history_window = v;
    }
    if let Some(v) = o.include_loss_value {
        oc.include_loss_value = v;
    }
    if let Some(v) = o.update_strategy {
        oc.update_strategy = v.parse::<UpdateStrategy>().map_err(config_err)?;
    }
    if let Some(v) = o.summary_length_cap {
        oc.summary_length_cap = v;
    }
    if let Some(v) = o.temperature {
        oc.temperature = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Loads a config file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| VmlError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base)
}

/// The prompt templates a config selects.
pub fn fixtures_for(cfg: &RunConfig) -> Result<PromptFixtureSet> {
    match &cfg.template_dir {
        Some(dir) => PromptFixtureSet::load_dir(dir),
        None => PromptFixtureSet::builtin(&cfg.task.template_variant),
    }
}
