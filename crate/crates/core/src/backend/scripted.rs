//! Deterministic test double that replays canned responses.

use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{validate_messages, Backend, ChatMessage, SamplingParams};
use crate::error::{Result, VmlError};

/// One scripted response, optionally paired with the prompt it expects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ScriptEntry {
    pub fn reply(response: impl Into<String>) -> Self {
        ScriptEntry {
            response: response.into(),
            expected_prompt: None,
            note: None,
        }
    }
}

#[derive(Debug, Default)]
struct State {
    cursor: usize,
    prompts: Vec<String>,
}

/// Pops one response per call, in arrival order.
///
/// In strict mode an entry that carries `expected_prompt` must match the
/// final user message byte for byte.
#[derive(Debug)]
pub struct ScriptedBackend {
    entries: Vec<ScriptEntry>,
    strict: bool,
    cycle: bool,
    state: Mutex<State>,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptEntry>, strict: bool) -> Result<Self> {
        if entries.is_empty() {
            return Err(VmlError::invalid("script must be non-empty"));
        }
        Ok(ScriptedBackend {
            entries,
            strict,
            cycle: false,
            state: Mutex::new(State::default()),
        })
    }

    pub fn from_responses<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Result<Self> {
        Self::new(responses.into_iter().map(ScriptEntry::reply).collect(), false)
    }

    /// Wraps around instead of failing when the script runs out.
    pub fn cycling(mut self) -> Self {
        self.cycle = true;
        self
    }

    /// Reads a JSONL script, one `ScriptEntry` per line.
    pub fn load_jsonl(path: &Path, strict: bool) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(line).map_err(|e| VmlError::Ingestion {
                line: i + 1,
                message: e.to_string(),
            })?;
            entries.push(entry);
        }
        Self::new(entries, strict)
    }

    /// Loads `script.jsonl` from a directory.
    pub fn from_dir(dir: &Path, strict: bool) -> Result<Self> {
        Self::load_jsonl(&dir.join("script.jsonl"), strict)
    }

    pub fn calls(&self) -> usize {
        self.state.lock().expect("scripted state").prompts.len()
    }

    /// Final user messages received so far, in call order.
    pub fn prompts(&self) -> Vec<String> {
        self.state.lock().expect("scripted state").prompts.clone()
    }

    pub fn remaining(&self) -> usize {
        let cursor = self.state.lock().expect("scripted state").cursor;
        self.entries.len().saturating_sub(cursor)
    }
}

impl Backend for ScriptedBackend {
    fn chat(&self, messages: &[ChatMessage], _sampling: &SamplingParams) -> Result<String> {
        validate_messages(messages)?;
        let prompt = &messages[messages.len() - 1].content;
        let mut state = self.state.lock().expect("scripted state");
        let index = state.cursor;
        if index >= self.entries.len() && !self.cycle {
            return Err(VmlError::ScriptExhausted { calls: index });
        }
        let entry = &self.entries[index % self.entries.len()];
        if self.strict {
            if let Some(expected) = &entry.expected_prompt {
                if expected != prompt {
                    return Err(VmlError::PromptMismatch {
                        index,
                        diff: line_diff(expected, prompt),
                    });
                }
            }
        }
        state.cursor += 1;
        state.prompts.push(prompt.clone());
        Ok(entry.response.clone())
    }

    fn max_concurrency(&self) -> usize {
        1
    }

    fn describe(&self) -> String {
        format!(
            "scripted({} entries{})",
            self.entries.len(),
            if self.strict { ", strict" } else { "" }
        )
    }
}

/// Reports the first differing line with a little context.
pub fn line_diff(expected: &str, actual: &str) -> String {
    let e: Vec<&str> = expected.split('\n').collect();
    let a: Vec<&str> = actual.split('\n').collect();
    let first = (0..e.len().max(a.len())).find(|&i| e.get(i) != a.get(i)).unwrap_or(0);
    let mut out = format!("first difference at line {}\n", first + 1);
    let lo = first.saturating_sub(2);
    for line in &e[lo..first.min(e.len())] {
        out.push_str(&format!("  {line}\n"));
    }
    out.push_str(&format!("- {}\n", e.get(first).copied().unwrap_or("<end of text>")));
    out.push_str(&format!("+ {}\n", a.get(first).copied().unwrap_or("<end of text>")));
    out
}
