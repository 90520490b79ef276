//! Transcript fixture access shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value;
use vml_core::domain::{full_theta_text, BuiltinTask, Input, Target, TaskFamily, TaskSpec};
use vml_core::prompting::PromptFixtureSet;

pub const TRANSCRIPTS: [&str; 7] = [
    "linear",
    "polynomial",
    "sinusoid",
    "two_blobs",
    "two_circles",
    "two_circles_no_prior",
    "text",
];

#[derive(Debug, Deserialize)]
pub struct Batch {
    pub inputs: Vec<Value>,
    pub predictions: Vec<Value>,
    pub targets: Vec<Value>,
}

#[derive(Debug, Deserialize)]
pub struct Step {
    pub step: usize,
    pub forward_prompt: String,
    pub forward_outputs: Vec<String>,
    pub accuracy: Option<String>,
    pub loss: Option<String>,
    pub optimizer_prompt: String,
    pub optimizer_output: String,
    pub updated_theta: String,
    pub batch: Batch,
}

#[derive(Debug, Deserialize)]
pub struct Transcript {
    pub task: String,
    pub variant: String,
    pub prior: String,
    pub steps: Vec<Step>,
}

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn transcript(name: &str) -> Transcript {
    let path = fixtures_dir().join("transcripts").join(name).join("transcript.json");
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

impl Transcript {
    pub fn builtin_task(&self) -> BuiltinTask {
        self.variant.parse().unwrap()
    }

    pub fn spec(&self) -> TaskSpec {
        self.builtin_task().spec()
    }

    pub fn fixtures(&self) -> PromptFixtureSet {
        PromptFixtureSet::builtin(&self.variant).unwrap()
    }

    /// The full parameter text shown in the prompts of `step`: the task
    /// definition and prior, then the previous step's learned text.
    pub fn theta_at(&self, index: usize) -> String {
        let fixed = full_theta_text(&self.fixtures().task_definition, &self.prior);
        let learned = if index == 0 {
            ""
        } else {
            self.steps[index - 1].updated_theta.as_str()
        };
        full_theta_text(&fixed, learned)
    }

    pub fn step(&self, n: usize) -> &Step {
        self.steps.iter().find(|s| s.step == n).unwrap()
    }
}

pub fn input(spec: &TaskSpec, v: &Value) -> Input {
    match v {
        Value::String(s) => Input::Text(s.clone()),
        Value::Array(a) => Input::Vector(a.iter().map(|x| x.as_f64().unwrap()).collect()),
        Value::Number(n) => {
            assert!(spec.family.is_regression());
            Input::Vector(vec![n.as_f64().unwrap()])
        }
        other => panic!("unexpected input {other}"),
    }
}

pub fn target(spec: &TaskSpec, v: &Value) -> Target {
    match spec.family {
        TaskFamily::Regression1d => Target::Real(v.as_f64().unwrap()),
        TaskFamily::Classification2dProb => {
            Target::Probs(v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect())
        }
        _ => Target::Label(v.as_u64().unwrap() as usize),
    }
}

impl Step {
    pub fn inputs(&self, spec: &TaskSpec) -> Vec<Input> {
        self.batch.inputs.iter().map(|v| input(spec, v)).collect()
    }
    pub fn predictions(&self, spec: &TaskSpec) -> Vec<Target> {
        self.batch.predictions.iter().map(|v| target(spec, v)).collect()
    }
    pub fn targets(&self, spec: &TaskSpec) -> Vec<Target> {
        self.batch.targets.iter().map(|v| target(spec, v)).collect()
    }
    pub fn reals(values: &[Target]) -> Vec<f64> {
        values.iter().map(|t| t.as_real().unwrap()).collect()
    }
}
