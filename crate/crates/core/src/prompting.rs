//! Learner and optimizer prompt rendering from fixture templates.
//!
//! Each template variant is a directory holding five UTF-8 files:
//!
//! - `learner.txt` with `{theta}`, `{input}`, `{format_rules}`
//! - `optimizer.txt` with `{inputs}`, `{theta}`, `{predictions}`, `{targets}`,
//!   `{loss_line}`, `{format_rules}`
//! - `learner_format.txt` and `optimizer_format.txt`, the output contracts
//! - `task_definition.txt`, the fixed task sentence placed ahead of theta
//!
//! A single trailing newline in each file is ignored.

use std::fs;
use std::path::Path;

use crate::backend::ChatMessage;
use crate::domain::{Input, Target, TaskFamily, TaskSpec};
use crate::error::{Result, VmlError};
use crate::numfmt::{array1, array2, int_column, py_repr, py_str_list};

const LEARNER_KEYS: [&str; 3] = ["theta", "input", "format_rules"];
const OPTIMIZER_KEYS: [&str; 6] = ["inputs", "theta", "predictions", "targets", "loss_line", "format_rules"];

/// The template files for one variant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptFixtureSet {
    pub learner_template: String,
    pub optimizer_template: String,
    pub learner_format: String,
    pub optimizer_format: String,
    pub task_definition: String,
}

/// A previous optimizer exchange kept as conversation history.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Exchange {
    pub prompt: String,
    pub response: String,
}

macro_rules! builtin_set {
    ($dir:literal) => {
        [
            include_str!(concat!("../fixtures/templates/", $dir, "/learner.txt")),
            include_str!(concat!("../fixtures/templates/", $dir, "/optimizer.txt")),
            include_str!(concat!("../fixtures/templates/", $dir, "/learner_format.txt")),
            include_str!(concat!("../fixtures/templates/", $dir, "/optimizer_format.txt")),
            include_str!(concat!("../fixtures/templates/", $dir, "/task_definition.txt")),
        ]
    };
}

fn strip_final_newline(s: &str) -> String {
    s.strip_suffix('\n').unwrap_or(s).to_string()
}

impl PromptFixtureSet {
    /// Variants shipped with the crate: `linear`, `polynomial`, `sinusoid`,
    /// `two_blobs`, `two_circles` and `text`.
    pub fn builtin(variant: &str) -> Result<Self> {
        let files = match variant {
            "linear" => builtin_set!("linear"),
            "polynomial" => builtin_set!("polynomial"),
            "sinusoid" => builtin_set!("sinusoid"),
            "two_blobs" => builtin_set!("two_blobs"),
            "two_circles" => builtin_set!("two_circles"),
            "text" => builtin_set!("text"),
            other => return Err(VmlError::invalid(format!("no built-in templates for '{other}'"))),
        };
        Self::from_parts(files.map(strip_final_newline))
    }

    /// Reads a variant directory with the layout described in the module docs.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<String> {
            fs::read_to_string(dir.join(name))
                .map(|s| strip_final_newline(&s))
                .map_err(|e| VmlError::Config(format!("{}: {e}", dir.join(name).display())))
        };
        Self::from_parts([
            read("learner.txt")?,
            read("optimizer.txt")?,
            read("learner_format.txt")?,
            read("optimizer_format.txt")?,
            read("task_definition.txt")?,
        ])
    }

    fn from_parts([learner, optimizer, lf, of, def]: [String; 5]) -> Result<Self> {
        let set = PromptFixtureSet {
            learner_template: learner,
            optimizer_template: optimizer,
            learner_format: lf,
            optimizer_format: of,
            task_definition: def,
        };
        set.validate()?;
        Ok(set)
    }

    /// Every placeholder must appear exactly once in its template.
    pub fn validate(&self) -> Result<()> {
        for (name, template, keys) in [
            ("learner", &self.learner_template, &LEARNER_KEYS[..]),
            ("optimizer", &self.optimizer_template, &OPTIMIZER_KEYS[..]),
        ] {
            for key in keys {
                let n = template.matches(&format!("{{{key}}}")).count();
                if n != 1 {
                    return Err(VmlError::Config(format!(
                        "{name} template must contain {{{key}}} exactly once, found {n}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Replaces known `{key}` placeholders in one pass; substituted values are
/// never rescanned, so braces inside them survive.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    'outer: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        for (key, value) in values {
            if let Some(after) = tail[1..].strip_prefix(key).and_then(|t| t.strip_prefix('}')) {
                out.push_str(value);
                rest = after;
                continue 'outer;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

/// Formats a learner input the way the transcripts show it.
pub fn format_input(task: &TaskSpec, input: &Input) -> Result<String> {
    match (task.family, input) {
        (TaskFamily::ClassificationText, Input::Text(t)) => Ok(t.clone()),
        (family, Input::Vector(v)) if family.input_dim() == Some(v.len()) => Ok(array1(v)),
        _ => Err(VmlError::invalid(format!(
            "input {input:?} does not match task family {:?}",
            task.family
        ))),
    }
}

/// Formats a batch of inputs as one line.
pub fn format_inputs(task: &TaskSpec, inputs: &[Input]) -> Result<String> {
    match task.family {
        TaskFamily::ClassificationText => {
            let texts = inputs
                .iter()
                .map(|i| match i {
                    Input::Text(t) => Ok(t.clone()),
                    other => Err(VmlError::invalid(format!("expected text input, got {other:?}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(py_str_list(&texts))
        }
        family => {
            let dim = family.input_dim().expect("numeric family");
            let rows = inputs
                .iter()
                .map(|i| match i {
                    Input::Vector(v) if v.len() == dim => Ok(v.clone()),
                    other => Err(VmlError::invalid(format!("expected {dim}-D input, got {other:?}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(array2(&rows))
        }
    }
}

/// Formats predictions or targets as one line.
pub fn format_values(task: &TaskSpec, values: &[Target]) -> Result<String> {
    let bad = |v: &Target| VmlError::invalid(format!("value {v:?} does not match task family {:?}", task.family));
    match task.family {
        TaskFamily::Regression1d => {
            let rows = values
                .iter()
                .map(|v| v.as_real().map(|r| vec![r]).ok_or_else(|| bad(v)))
                .collect::<Result<Vec<_>>>()?;
            Ok(array2(&rows))
        }
        TaskFamily::Classification2dProb => {
            let rows = values
                .iter()
                .map(|v| v.as_probs().map(<[f64]>::to_vec).ok_or_else(|| bad(v)))
                .collect::<Result<Vec<_>>>()?;
            Ok(array2(&rows))
        }
        TaskFamily::Classification2dLabel | TaskFamily::ClassificationText => {
            let labels = values
                .iter()
                .map(|v| match v {
                    Target::Label(l) => Ok(*l as i64),
                    other => Err(bad(other)),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(int_column(&labels))
        }
    }
}

/// Opening line of the summarization request used by the append-summarized
/// update strategy.
pub const SUMMARY_INSTRUCTION: &str = "Summarize the model descriptions below into a shorter description.";

/// The summarization request for `text`, bounded to roughly `cap` words.
pub fn render_summary_prompt(text: &str, cap: usize) -> Vec<ChatMessage> {
    vec![ChatMessage::user(format!(
        "{SUMMARY_INSTRUCTION} Use at most {cap} words. Keep every rule, equation and parameter value exactly as written. Reply with the summary only.\n\n** Model Descriptions: **\n\n{text}"
    ))]
}

/// The loss line inserted when the optimizer is shown the loss value.
pub fn loss_line(loss: f64) -> String {
    format!("** Overall Loss: ** {}\n\n", py_repr(loss))
}

pub fn render_learner_prompt(
    fixtures: &PromptFixtureSet,
    task: &TaskSpec,
    theta_full: &str,
    input: &Input,
) -> Result<Vec<ChatMessage>> {
    if theta_full.trim().is_empty() {
        return Err(VmlError::invalid("theta must be non-empty"));
    }
    let input = format_input(task, input)?;
    let text = fill(
        &fixtures.learner_template,
        &[
            ("theta", theta_full),
            ("input", &input),
            ("format_rules", &fixtures.learner_format),
        ],
    );
    Ok(vec![ChatMessage::user(text)])
}

/// Arguments of one optimizer prompt.
#[derive(Debug, Clone, Copy)]
pub struct OptimizerPromptArgs<'a> {
    pub theta: &'a str,
    pub inputs: &'a [Input],
    pub predictions: &'a [Target],
    pub targets: &'a [Target],
    pub include_loss_value: bool,
    pub history_window: usize,
    pub history: &'a [Exchange],
    pub loss: Option<f64>,
}

pub fn render_optimizer_prompt(
    fixtures: &PromptFixtureSet,
    task: &TaskSpec,
    args: OptimizerPromptArgs<'_>,
) -> Result<Vec<ChatMessage>> {
    if args.inputs.len() != args.predictions.len() || args.inputs.len() != args.targets.len() {
        return Err(VmlError::invalid(format!(
            "batch, predictions and targets differ in length ({}, {}, {})",
            args.inputs.len(),
            args.predictions.len(),
            args.targets.len()
        )));
    }
    if args.theta.trim().is_empty() {
        return Err(VmlError::invalid("theta must be non-empty"));
    }
    let loss = match (args.include_loss_value, args.loss) {
        (true, Some(l)) => loss_line(l),
        (true, None) => return Err(VmlError::invalid("loss value requested but not provided")),
        (false, _) => String::new(),
    };
    let text = fill(
        &fixtures.optimizer_template,
        &[
            ("inputs", &format_inputs(task, args.inputs)?),
            ("theta", args.theta),
            ("predictions", &format_values(task, args.predictions)?),
            ("targets", &format_values(task, args.targets)?),
            ("loss_line", &loss),
            ("format_rules", &fixtures.optimizer_format),
        ],
    );
    let keep = args.history_window.min(args.history.len());
    let mut messages = Vec::with_capacity(2 * keep + 1);
    for ex in &args.history[args.history.len() - keep..] {
        messages.push(ChatMessage::user(ex.prompt.clone()));
        messages.push(ChatMessage::assistant(ex.response.clone()));
    }
    messages.push(ChatMessage::user(text));
    Ok(messages)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::BuiltinTask;

    #[test]
    fn fill_is_single_pass() {
        let out = fill("a {x} b {y} {z}", &[("x", "{y}"), ("y", "Y")]);
        assert_eq!(out, "a {y} b Y {z}");
        assert_eq!(fill("{0, 1} {", &[("x", "1")]), "{0, 1} {");
    }

    #[test]
    fn builtin_sets_validate() {
        for t in BuiltinTask::ALL {
            PromptFixtureSet::builtin(&t.spec().template_variant).unwrap();
        }
        assert!(PromptFixtureSet::builtin("nope").is_err());
    }

    #[test]
    fn learner_prompt_inputs() {
        let f = PromptFixtureSet::builtin("linear").unwrap();
        let t = BuiltinTask::Linear.spec();
        let m = render_learner_prompt(&f, &t, &f.task_definition, &Input::Vector(vec![1.26])).unwrap();
        assert_eq!(m.len(), 1);
        assert!(m[0].content.contains("** Input: **\n\n[1.26]"));
        assert!(m[0].content.contains("Please ONLY reply according to this format"));
        let b = PromptFixtureSet::builtin("two_blobs").unwrap();
        let m = render_learner_prompt(
            &b,
            &BuiltinTask::TwoBlobs.spec(),
            "θ",
            &Input::Vector(vec![-2.178, 9.99]),
        )
        .unwrap();
        assert!(m[0].content.contains("[-2.178  9.99 ]"));
        let x = PromptFixtureSet::builtin("text").unwrap();
        let m = render_learner_prompt(&x, &BuiltinTask::Text.spec(), "θ", &Input::Text("fatherhood".into())).unwrap();
        assert!(m[0].content.contains("\n\nfatherhood\n\n"));
        assert!(render_learner_prompt(&f, &t, "θ", &Input::Text("a".into())).is_err());
        assert!(render_learner_prompt(&f, &t, "", &Input::Vector(vec![1.0])).is_err());
    }

    fn linear_args<'a>(inputs: &'a [Input], preds: &'a [Target], targets: &'a [Target]) -> OptimizerPromptArgs<'a> {
        OptimizerPromptArgs {
            theta: "θ",
            inputs,
            predictions: preds,
            targets,
            include_loss_value: false,
            history_window: 1,
            history: &[],
            loss: Some(1.5),
        }
    }

    #[test]
    fn optimizer_history_and_loss() {
        let f = PromptFixtureSet::builtin("linear").unwrap();
        let t = BuiltinTask::Linear.spec();
        let inputs = vec![Input::Vector(vec![1.0])];
        let preds = vec![Target::Real(2.0)];
        let targets = vec![Target::Real(3.0)];
        let history = vec![
            Exchange {
                prompt: "p1".into(),
                response: "r1".into(),
            },
            Exchange {
                prompt: "p2".into(),
                response: "r2".into(),
            },
        ];
        let mut args = linear_args(&inputs, &preds, &targets);
        assert_eq!(render_optimizer_prompt(&f, &t, args).unwrap().len(), 1);
        args.history = &history;
        let m = render_optimizer_prompt(&f, &t, args).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m[0].content, "p2");
        args.history_window = 5;
        assert_eq!(render_optimizer_prompt(&f, &t, args).unwrap().len(), 5);
        args.history_window = 0;
        args.include_loss_value = true;
        let m = render_optimizer_prompt(&f, &t, args).unwrap();
        assert!(m[0]
            .content
            .contains("[[3.]]\n\n** Overall Loss: ** 1.5\n\nIf the model"));
        let short = vec![];
        args.targets = &short;
        assert!(render_optimizer_prompt(&f, &t, args).is_err());
    }
}
