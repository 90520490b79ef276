//! Extraction of predictions and parameter updates from model responses.

use std::sync::OnceLock;

use regex::Regex;

use crate::domain::{OptimizerUpdate, Prediction, Target, TaskFamily, TaskSpec};
use crate::error::{Result, VmlError};
use crate::numfmt::round_to;

const NEW_THETA_HEADERS: [&str; 2] = ["New Pattern Descriptions:", "New Model Descriptions:"];
const FENCES: [&str; 2] = ["```", "'''"];

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?").unwrap())
}

/// All decimal literals in `text`, in order.
pub fn parse_number_list(text: &str) -> Vec<f64> {
    number_re()
        .find_iter(text)
        .filter_map(|m| m.as_str().parse::<f64>().ok())
        .collect()
}

/// The value recorded for an unparseable response.
///
/// Regression uses NaN as a placeholder that training replaces with the batch
/// mean target. Probability tasks get the uniform vector. Label tasks get the
/// out-of-range sentinel `label_count`, which always counts as wrong.
pub fn fallback_value(task: &TaskSpec) -> Target {
    match task.family {
        TaskFamily::Regression1d => Target::Real(f64::NAN),
        TaskFamily::Classification2dProb => Target::Probs(vec![1.0 / task.label_count as f64; task.label_count]),
        TaskFamily::Classification2dLabel | TaskFamily::ClassificationText => Target::Label(task.label_count),
    }
}

/// Text after the last line that begins with `Output:`, ignoring case.
fn output_section(text: &str) -> Option<&str> {
    let mut found = None;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let lead = line.len() - line.trim_start().len();
        let body = &line[lead..];
        if body.get(..7).is_some_and(|head| head.eq_ignore_ascii_case("output:")) {
            found = Some(offset + lead + 7);
        }
        offset += line.len();
    }
    found.map(|start| &text[start..])
}

fn strip_fences(s: &str) -> &str {
    let mut s = s.trim();
    loop {
        let before = s.len();
        for f in FENCES {
            s = s.strip_prefix(f).unwrap_or(s).trim();
            s = s.strip_suffix(f).unwrap_or(s).trim();
        }
        if s.len() == before {
            return s;
        }
    }
}

/// Parses a learner response. Failures are reported through `parse_ok`.
pub fn parse_learner_output(text: &str, task: &TaskSpec) -> Prediction {
    let value = output_section(text).and_then(|section| parse_value(strip_fences(section), task));
    match value {
        Some(value) => Prediction {
            value,
            raw_text: text.to_string(),
            parse_ok: true,
        },
        None => Prediction {
            value: fallback_value(task),
            raw_text: text.to_string(),
            parse_ok: false,
        },
    }
}

fn parse_value(section: &str, task: &TaskSpec) -> Option<Target> {
    match task.family {
        TaskFamily::Regression1d => {
            let v = *parse_number_list(section).first()?;
            v.is_finite().then(|| Target::Real(round_to(v, task.decimals)))
        }
        TaskFamily::Classification2dProb => {
            let scope = bracketed(section).unwrap_or(section);
            let nums = parse_number_list(scope);
            if nums.len() < task.label_count {
                return None;
            }
            let p = &nums[..task.label_count];
            if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return None;
            }
            let s: f64 = p.iter().sum();
            if (s - 1.0).abs() > 0.01 + 1e-12 {
                return None;
            }
            let p = p
                .iter()
                .map(|v| {
                    let v = if s == 1.0 { *v } else { v / s };
                    round_to(v, task.decimals)
                })
                .collect();
            Some(Target::Probs(p))
        }
        TaskFamily::Classification2dLabel | TaskFamily::ClassificationText => {
            let v = *parse_number_list(section).first()?;
            if v.fract() != 0.0 || v < 0.0 || v >= task.label_count as f64 {
                return None;
            }
            Some(Target::Label(v as usize))
        }
    }
}

fn bracketed(s: &str) -> Option<&str> {
    let open = s.find('[')?;
    let close = s[open..].find(']')? + open;
    Some(&s[open + 1..close])
}

/// Parses an optimizer response into reasoning and the new description.
pub fn parse_optimizer_output(text: &str, _task: &TaskSpec) -> Result<OptimizerUpdate> {
    let header = NEW_THETA_HEADERS
        .iter()
        .filter_map(|h| text.rfind(h).map(|pos| (pos, h.len())))
        .max_by_key(|(pos, _)| *pos);
    let Some((pos, len)) = header else {
        return Err(VmlError::OptimizerParseFailure(
            "no 'New Pattern Descriptions:' or 'New Model Descriptions:' section".into(),
        ));
    };
    let new_theta = strip_fences(&text[pos + len..]).to_string();
    if new_theta.is_empty() {
        return Err(VmlError::OptimizerParseFailure(
            "new description section is empty".into(),
        ));
    }
    let head = &text[..pos];
    let reasoning = match head.find("Reasoning:") {
        Some(r) => strip_fences(&head[r + "Reasoning:".len()..]).to_string(),
        None => String::new(),
    };
    Ok(OptimizerUpdate { reasoning, new_theta })
}
