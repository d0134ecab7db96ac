//! Brain-to-hand task handoff.
//!
//! Wire format, after the `TASK:` marker:
//!
//! ```text
//! TASK: <objective>
//! STEPS:
//! 1. <step>
//! 2. <step>
//! EXPECTED: <expected outcome>
//! DOMAIN: <tool domain>        (optional)
//! ```

use serde::{Deserialize, Serialize};

use crate::memory::{parse_response, MemoryKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub objective: String,
    pub steps: Vec<String>,
    pub expected_outcome: String,
    /// Empty until dispatched, unless the brain named a domain.
    pub tool_domain: String,
    pub turn: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("task is malformed: {0}")]
pub struct TaskFormatError(pub String);

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Objective,
    Steps,
    Expected,
}

fn strip_label<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let t = line.trim_start();
    let head = t.get(..label.len())?;
    if head.eq_ignore_ascii_case(label) && t[label.len()..].starts_with(':') {
        Some(t[label.len() + 1..].trim())
    } else {
        None
    }
}

fn strip_bullet(line: &str) -> &str {
    let t = line.trim();
    let digits = t.len() - t.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return r.trim();
        }
    }
    t.strip_prefix("- ").or_else(|| t.strip_prefix("* ")).unwrap_or(t).trim()
}

impl TaskSpec {
    /// Parses a brain completion. Conversational text before the `TASK:`
    /// line is ignored.
    pub fn parse(text: &str, turn: u32) -> Result<Self, TaskFormatError> {
        let draft = parse_response(text, MemoryKind::Task).map_err(|e| TaskFormatError(e.to_string()))?;
        let mut objective = Vec::new();
        let mut steps = Vec::new();
        let mut expected = Vec::new();
        let mut domain = None;
        let mut section = Section::Objective;
        for line in draft.content.lines() {
            if let Some(rest) = strip_label(line, "STEPS") {
                section = Section::Steps;
                if !rest.is_empty() {
                    steps.push(strip_bullet(rest).to_string());
                }
            } else if let Some(rest) = strip_label(line, "EXPECTED") {
                section = Section::Expected;
                expected.push(rest);
            } else if let Some(rest) = strip_label(line, "DOMAIN") {
                domain = Some(rest.to_ascii_lowercase());
            } else if !line.trim().is_empty() {
                match section {
                    Section::Objective => objective.push(line.trim()),
                    Section::Steps => steps.push(strip_bullet(line).to_string()),
                    Section::Expected => expected.push(line.trim()),
                }
            }
        }
        let objective = objective.join(" ");
        let expected_outcome = expected.join("\n").trim().to_string();
        steps.retain(|s| !s.is_empty());
        if objective.is_empty() {
            return Err(TaskFormatError("missing objective after `TASK:`".into()));
        }
        if steps.is_empty() {
            return Err(TaskFormatError("missing `STEPS:` section".into()));
        }
        if expected_outcome.is_empty() {
            return Err(TaskFormatError("missing `EXPECTED:` outcome".into()));
        }
        Ok(TaskSpec { objective, steps, expected_outcome, tool_domain: domain.unwrap_or_default(), turn })
    }

    /// Canonical text, as stored in memory and shown to the hand.
    pub fn render(&self) -> String {
        let mut s = format!("TASK: {}\nSTEPS:\n", self.objective);
        for (i, step) in self.steps.iter().enumerate() {
            s.push_str(&format!("{}. {step}\n", i + 1));
        }
        s.push_str(&format!("EXPECTED: {}", self.expected_outcome));
        if !self.tool_domain.is_empty() {
            s.push_str(&format!("\nDOMAIN: {}", self.tool_domain));
        }
        s
    }
}
