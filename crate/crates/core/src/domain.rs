//! Core data model.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VmlError};

/// The verbalized model: an immutable prior plus the learnable text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelParams {
    prior_text: String,
    learned_text: String,
}

impl ModelParams {
    /// Builds parameters from a prior and an initial learnable text.
    pub fn new(prior: impl Into<String>, theta0: impl Into<String>) -> Result<Self> {
        let learned_text = theta0.into();
        if learned_text.trim().is_empty() {
            return Err(VmlError::invalid("initial theta must be non-empty"));
        }
        Ok(ModelParams {
            prior_text: prior.into(),
            learned_text,
        })
    }

    /// Parameters whose learnable part starts blank.
    ///
    /// Recorded runs keep the task definition fixed ahead of every learned
    /// description, so the definition is stored as prior here and the first
    /// optimizer update fills the learnable part.
    pub fn from_prior(prior: impl Into<String>) -> Result<Self> {
        let prior_text = prior.into();
        if prior_text.trim().is_empty() {
            return Err(VmlError::invalid("prior must be non-empty when theta starts blank"));
        }
        Ok(ModelParams {
            prior_text,
            learned_text: String::new(),
        })
    }

    pub fn prior_text(&self) -> &str {
        &self.prior_text
    }

    pub fn learned_text(&self) -> &str {
        &self.learned_text
    }

    /// Returns a copy with a new learnable text and the same prior.
    pub fn with_learned(&self, learned: impl Into<String>) -> Self {
        ModelParams {
            prior_text: self.prior_text.clone(),
            learned_text: learned.into(),
        }
    }

    /// The text the learner sees: prior and learned joined by one space.
    pub fn full_theta_text(&self) -> String {
        full_theta_text(&self.prior_text, &self.learned_text)
    }
}

/// Joins prior and learned text with a single space, omitting empty parts.
pub fn full_theta_text(prior: &str, learned: &str) -> String {
    match (prior.is_empty(), learned.is_empty()) {
        (true, _) => learned.to_string(),
        (false, true) => prior.to_string(),
        (false, false) => format!("{prior} {learned}"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskFamily {
    #[serde(rename = "regression_1d")]
    Regression1d,
    #[serde(rename = "classification_2d_prob")]
    Classification2dProb,
    #[serde(rename = "classification_2d_label")]
    Classification2dLabel,
    #[serde(rename = "classification_text")]
    ClassificationText,
}

impl TaskFamily {
    pub fn is_regression(self) -> bool {
        self == TaskFamily::Regression1d
    }

    pub fn uses_labels(self) -> bool {
        matches!(self, TaskFamily::Classification2dLabel | TaskFamily::ClassificationText)
    }

    pub fn input_dim(self) -> Option<usize> {
        match self {
            TaskFamily::Regression1d => Some(1),
            TaskFamily::Classification2dProb | TaskFamily::Classification2dLabel => Some(2),
            TaskFamily::ClassificationText => None,
        }
    }
}

/// Everything the pipeline needs to know about one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub family: TaskFamily,
    pub decimals: u32,
    pub label_count: usize,
    pub template_variant: String,
}

impl TaskSpec {
    pub fn new(family: TaskFamily, decimals: u32, label_count: usize, variant: &str) -> Result<Self> {
        if family != TaskFamily::ClassificationText && !(1..=3).contains(&decimals) {
            return Err(VmlError::invalid(format!("decimals must be 1, 2 or 3, got {decimals}")));
        }
        if family != TaskFamily::Regression1d && label_count < 2 {
            return Err(VmlError::invalid("classification needs at least two labels"));
        }
        Ok(TaskSpec {
            family,
            decimals,
            label_count,
            template_variant: variant.to_string(),
        })
    }
}

/// The built-in tasks: five synthetic sets and one text classification set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinTask {
    Linear,
    Polynomial,
    Sinusoid,
    TwoBlobs,
    TwoCircles,
    Text,
}

impl BuiltinTask {
    pub const ALL: [BuiltinTask; 6] = [
        BuiltinTask::Linear,
        BuiltinTask::Polynomial,
        BuiltinTask::Sinusoid,
        BuiltinTask::TwoBlobs,
        BuiltinTask::TwoCircles,
        BuiltinTask::Text,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BuiltinTask::Linear => "linear",
            BuiltinTask::Polynomial => "polynomial",
            BuiltinTask::Sinusoid => "sinusoid",
            BuiltinTask::TwoBlobs => "two_blobs",
            BuiltinTask::TwoCircles => "two_circles",
            BuiltinTask::Text => "text",
        }
    }

    /// Sinusoid uses one decimal: its transcript targets and predictions
    /// are logged at that precision.
    pub fn spec(self) -> TaskSpec {
        let (family, decimals) = match self {
            BuiltinTask::Linear => (TaskFamily::Regression1d, 2),
            BuiltinTask::Polynomial => (TaskFamily::Regression1d, 1),
            BuiltinTask::Sinusoid => (TaskFamily::Regression1d, 1),
            BuiltinTask::TwoBlobs => (TaskFamily::Classification2dProb, 3),
            BuiltinTask::TwoCircles => (TaskFamily::Classification2dLabel, 3),
            BuiltinTask::Text => (TaskFamily::ClassificationText, 0),
        };
        let labels = if family.is_regression() { 0 } else { 2 };
        TaskSpec {
            family,
            decimals,
            label_count: labels,
            template_variant: self.name().to_string(),
        }
    }

    /// Input range used by the generators and the default study grid.
    pub fn input_range(self) -> Option<(f64, f64)> {
        match self {
            BuiltinTask::Linear => Some((0.0, 2.0)),
            BuiltinTask::Polynomial => Some((-3.0, 1.0)),
            BuiltinTask::Sinusoid => Some((-3.0, 3.0)),
            _ => None,
        }
    }
}

impl fmt::Display for BuiltinTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BuiltinTask {
    type Err = VmlError;

    fn from_str(s: &str) -> Result<Self> {
        BuiltinTask::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| VmlError::invalid(format!("unknown task '{s}'")))
    }
}

/// A learner input: a numeric point or a text term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Input {
    Vector(Vec<f64>),
    Text(String),
}

/// A target or predicted value.
///
/// Serialized untagged; integer JSON numbers decode as labels, so real
/// values are always written with a fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    Label(usize),
    Real(f64),
    Probs(Vec<f64>),
}

impl Target {
    pub fn as_real(&self) -> Option<f64> {
        match self {
            Target::Real(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_probs(&self) -> Option<&[f64]> {
        match self {
            Target::Probs(p) => Some(p),
            _ => None,
        }
    }

    /// Class index: the label, or the first maximal probability.
    pub fn class(&self) -> Option<usize> {
        match self {
            Target::Label(l) => Some(*l),
            Target::Probs(p) => argmax(p),
            Target::Real(_) => None,
        }
    }
}

/// Index of the first maximum.
pub fn argmax(p: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in p.iter().enumerate() {
        match best {
            Some(b) if p[b] >= *v => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Builds a one-hot vector.
pub fn one_hot(label: usize, width: usize) -> Vec<f64> {
    (0..width).map(|i| if i == label { 1.0 } else { 0.0 }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub input: Input,
    pub target: Target,
}

impl DataPoint {
    /// Validates the point against a task family.
    pub fn check(&self, task: &TaskSpec) -> Result<()> {
        let ok = match (task.family, &self.input, &self.target) {
            (TaskFamily::Regression1d, Input::Vector(v), Target::Real(_)) => v.len() == 1,
            (TaskFamily::Classification2dProb, Input::Vector(v), Target::Probs(p)) => {
                v.len() == 2 && p.len() == task.label_count && is_one_hot(p)
            }
            (TaskFamily::Classification2dLabel, Input::Vector(v), Target::Label(l)) => {
                v.len() == 2 && *l < task.label_count
            }
            (TaskFamily::ClassificationText, Input::Text(_), Target::Label(l)) => *l < task.label_count,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(VmlError::invalid(format!(
                "data point {self:?} does not fit {:?}",
                task.family
            )))
        }
    }
}

pub fn is_one_hot(p: &[f64]) -> bool {
    p.iter().filter(|v| **v == 1.0).count() == 1 && p.iter().all(|v| *v == 0.0 || *v == 1.0)
}

/// A parsed learner response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub value: Target,
    pub raw_text: String,
    pub parse_ok: bool,
}

/// A parsed optimizer response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizerUpdate {
    pub reasoning: String,
    pub new_theta: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateStrategy {
    #[default]
    Replace,
    Append,
    AppendSummarized,
}

impl FromStr for UpdateStrategy {
    type Err = VmlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "replace" => Ok(UpdateStrategy::Replace),
            "append" => Ok(UpdateStrategy::Append),
            "append_summarized" | "append-summarized" => Ok(UpdateStrategy::AppendSummarized),
            other => Err(VmlError::invalid(format!("unknown update strategy '{other}'"))),
        }
    }
}

/// Verbalized optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub history_window: usize,
    pub include_loss_value: bool,
    pub update_strategy: UpdateStrategy,
    pub summary_length_cap: usize,
    pub temperature: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            history_window: 1,
            include_loss_value: false,
            update_strategy: UpdateStrategy::Replace,
            summary_length_cap: 128,
            temperature: 0.0,
        }
    }
}

/// One optimization step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub inputs: Vec<Input>,
    pub targets: Vec<Target>,
    pub predictions: Vec<Prediction>,
    pub raw_optimizer_prompt: String,
    pub raw_optimizer_response: String,
    pub loss: f64,
    pub loss_mse: Option<f64>,
    pub loss_ce: Option<f64>,
    pub loss_zero_one: Option<f64>,
    pub accuracy: Option<f64>,
    pub theta_before: String,
    pub theta_after: String,
    pub reasoning: String,
    pub parse_failures: usize,
    pub duration_ms: u64,
}

/// Where a backend comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendSpec {
    Oracle,
    Scripted { dir: PathBuf },
    OpenAi { base_url: String, model: String },
}

impl FromStr for BackendSpec {
    type Err = VmlError;

    /// Accepts `oracle`, `scripted:DIR` or `openai:URL:MODEL`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "oracle" {
            return Ok(BackendSpec::Oracle);
        }
        if let Some(dir) = s.strip_prefix("scripted:") {
            if dir.is_empty() {
                return Err(VmlError::invalid("scripted backend needs a directory"));
            }
            return Ok(BackendSpec::Scripted { dir: dir.into() });
        }
        if let Some(rest) = s.strip_prefix("openai:") {
            if let Some((url, model)) = rest.rsplit_once(':') {
                if !url.is_empty() && !model.is_empty() && !model.starts_with('/') {
                    return Ok(BackendSpec::OpenAi {
                        base_url: url.to_string(),
                        model: model.to_string(),
                    });
                }
            }
            return Err(VmlError::invalid(format!("expected openai:URL:MODEL, got '{s}'")));
        }
        Err(VmlError::invalid(format!("unknown backend '{s}'")))
    }
}

/// Everything a training run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task_name: BuiltinTask,
    pub task: TaskSpec,
    pub n: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Multiplier on the generator's noise; 0 gives noise-free data.
    pub noise_scale: f64,
    pub learner: BackendSpec,
    pub optimizer: BackendSpec,
    pub optimizer_cfg: OptimizerConfig,
    pub learner_temperature: f64,
    pub out_dir: PathBuf,
    /// User prior appended to the task definition.
    pub prior: String,
    /// Optional starting learnable text; blank by default.
    pub initial_theta: Option<String>,
    /// Training data file: CSV for numeric tasks, `term<TAB>label` lines for text.
    pub data_file: Option<PathBuf>,
    /// Directory of custom prompt templates; the built-in variant otherwise.
    #[serde(default)]
    pub template_dir: Option<PathBuf>,
    /// Evaluate the test set after every step.
    pub eval_each_step: bool,
    pub test_size: usize,
    /// Maximum concurrent learner calls per batch.
    pub concurrency: usize,
}

impl RunConfig {
    pub fn for_task(task: BuiltinTask) -> Self {
        RunConfig {
            task_name: task,
            task: task.spec(),
            n: 100,
            batch_size: 10,
            epochs: 2,
            seed: 0,
            noise_scale: 1.0,
            learner: BackendSpec::Oracle,
            optimizer: BackendSpec::Oracle,
            optimizer_cfg: OptimizerConfig::default(),
            learner_temperature: 0.0,
            out_dir: PathBuf::from("runs"),
            prior: String::new(),
            initial_theta: None,
            data_file: None,
            template_dir: None,
            eval_each_step: false,
            test_size: 20,
            concurrency: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(VmlError::Config("batch_size must be at least 1".into()));
        }
        if self.n < self.batch_size {
            return Err(VmlError::Config(format!(
                "dataset size {} is smaller than batch size {}",
                self.n, self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(VmlError::Config("epochs must be at least 1".into()));
        }
        if self.concurrency == 0 {
            return Err(VmlError::Config("concurrency must be at least 1".into()));
        }
        if self.learner_temperature < 0.0 || self.optimizer_cfg.temperature < 0.0 {
            return Err(VmlError::Config("temperatures must be non-negative".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.n / self.batch_size
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINEAR_DEF: &str = "You are designed to do regression, i.e., to predict the output of any given input. Both input and output are real numbers.";

    #[test]
    fn make_params_stores_texts() {
        let p = ModelParams::new("", LINEAR_DEF).unwrap();
        assert_eq!(p.prior_text(), "");
        assert_eq!(p.learned_text(), LINEAR_DEF);
        let q = ModelParams::new(
            "The decision boundary is a circle.",
            "You are designed to do binary classification.",
        )
        .unwrap();
        assert_eq!(q.prior_text(), "The decision boundary is a circle.");
        assert!(ModelParams::new("", "").is_err());
    }

    #[test]
    fn full_text_joins_with_one_space() {
        let p = ModelParams::new("", "y = 3.34x + 3.28").unwrap();
        assert_eq!(p.full_theta_text(), "y = 3.34x + 3.28");
        let p = ModelParams::new("P.", "T.").unwrap();
        assert_eq!(p.full_theta_text(), "P. T.");
        let p = ModelParams::from_prior("P.").unwrap();
        assert_eq!(p.full_theta_text(), "P.");
        assert!(ModelParams::from_prior("").is_err());
    }

    #[test]
    fn with_learned_keeps_prior() {
        let p = ModelParams::new("P.", "A").unwrap();
        let q = p.with_learned("B");
        assert_eq!(q.prior_text(), "P.");
        assert_eq!(q.learned_text(), "B");
        assert_eq!(p.learned_text(), "A");
    }

    #[test]
    fn backend_spec_parsing() {
        assert_eq!("oracle".parse::<BackendSpec>().unwrap(), BackendSpec::Oracle);
        assert_eq!(
            "openai:http://localhost:8000/v1:llama3".parse::<BackendSpec>().unwrap(),
            BackendSpec::OpenAi {
                base_url: "http://localhost:8000/v1".into(),
                model: "llama3".into()
            }
        );
        assert!("openai:nomodel".parse::<BackendSpec>().is_err());
        assert!("scripted:".parse::<BackendSpec>().is_err());
        assert!("gpt".parse::<BackendSpec>().is_err());
    }

    #[test]
    fn targets_round_trip_through_json() {
        let ts = vec![Target::Real(4.0), Target::Label(1), Target::Probs(vec![1.0, 0.0])];
        let s = serde_json::to_string(&ts).unwrap();
        assert_eq!(s, "[4.0,1,[1.0,0.0]]");
        let back: Vec<Target> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, ts);
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax(&[0.5, 0.5]), Some(0));
        assert_eq!(argmax(&[0.2, 0.8]), Some(1));
        assert_eq!(argmax(&[]), None);
    }

    #[test]
    fn data_point_checks_family() {
        let spec = BuiltinTask::TwoBlobs.spec();
        let good = DataPoint {
            input: Input::Vector(vec![-2.178, 9.99]),
            target: Target::Probs(vec![1.0, 0.0]),
        };
        assert!(good.check(&spec).is_ok());
        let bad = DataPoint {
            input: Input::Vector(vec![-2.178, 9.99]),
            target: Target::Probs(vec![0.5, 0.5]),
        };
        assert!(bad.check(&spec).is_err());
    }
}
