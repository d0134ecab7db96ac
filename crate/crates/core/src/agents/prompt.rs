//! Prompt assembly for brain and hand calls.

use std::fmt::Write as _;

use super::backend::Message;
use super::registry::{RegistryError, ToolRegistry};
use super::DispatchMode;
use crate::memory::{MemoryKind, MemoryRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrainStep {
    Requirement,
    Analysis,
    Task,
    Evaluation,
    Summary,
    StopCheck,
}

const BRAIN_ROLE: &str = "You are the planning agent of a two-level team. You analyse the request, \
delegate concrete tasks to an execution agent, judge its results and keep concise notes. You never \
run tools yourself.";

fn instruction(step: BrainStep) -> &'static str {
    match step {
        BrainStep::Requirement => {
            "Extract the single mandatory requirement that the final result must satisfy. For \
             coding work this is usually a check that must succeed; for writing work it is the \
             stated preference. Reply with one line: `REQUIREMENT: <statement>`."
        }
        BrainStep::Analysis => {
            "Give exactly one step of analysis, building on the notes above. Reply with \
             `ANALYSIS: <one step>`. When the analysis is enough to delegate a task, end your \
             reply with the line `NEXT: task`."
        }
        BrainStep::Task => {
            "Write the next task for the execution agent in this format:\n\
             TASK: <objective>\n\
             STEPS:\n\
             1. <step>\n\
             EXPECTED: <observable expected outcome>\n\
             DOMAIN: <tool domain, optional>"
        }
        BrainStep::Evaluation => {
            "Compare the execution result above with the expected outcome of the task. Reply with \
             `EVALUATION: <critique>` followed by a line `VERDICT: pass` or `VERDICT: fail`."
        }
        BrainStep::Summary => {
            "Summarise this turn: what was done, what was learned and what remains. Be brief; the \
             file changes are attached separately. Reply with `SUMMARY: <summary>`."
        }
        BrainStep::StopCheck => {
            "Compare the current state with the mandatory requirement. Reply `SATISFIED` if it \
             holds, otherwise `NOT YET` with a short reason."
        }
    }
}

fn label(kind: MemoryKind) -> &'static str {
    match kind {
        MemoryKind::UserRequest => "Request",
        MemoryKind::MandatoryRequirement => "Mandatory requirement",
        MemoryKind::Analysis => "Analysis",
        MemoryKind::Task => "Task",
        MemoryKind::Action => "Action",
        MemoryKind::Observation => "Observation",
        MemoryKind::Evaluation => "Evaluation",
        MemoryKind::Summary => "Summary",
    }
}

pub fn render_records(records: &[MemoryRecord]) -> String {
    let mut s = String::new();
    for r in records {
        let _ = write!(s, "## {} (turn {})\n{}\n\n", label(r.kind), r.turn, r.content.trim_end());
    }
    s
}

/// Brain prompt for one step. `requirement` is embedded in every prompt
/// once it exists; `extra` carries step-specific material such as the
/// execution result under evaluation.
pub fn render_brain_prompt(
    step: BrainStep,
    requirement: Option<&str>,
    context: &[MemoryRecord],
    extra: &str,
) -> Vec<Message> {
    let mut system = BRAIN_ROLE.to_string();
    if let Some(req) = requirement {
        let _ = write!(system, "\n\nMANDATORY REQUIREMENT (always keep this in mind): {req}");
    }
    let mut user = String::new();
    let context: Vec<MemoryRecord> =
        context.iter().filter(|r| r.kind != MemoryKind::MandatoryRequirement).cloned().collect();
    if !context.is_empty() {
        user.push_str("# History\n\n");
        user.push_str(&render_records(&context));
    }
    if !extra.trim().is_empty() {
        user.push_str(extra.trim_end());
        user.push_str("\n\n");
    }
    user.push_str("# Instruction\n");
    user.push_str(instruction(step));
    vec![Message::system(system), Message::user(user)]
}

const HAND_PROTOCOL: &str = "You are an execution agent working inside a sandboxed project \
directory. Reply with exactly one command per message, written inside a fenced block:\n\
```\ncommand(arg1, arg2, name=value)\n```\n\
Quote text arguments; use triple quotes for multi-line text. Each command's output is shown to \
you before your next reply. When the task is complete, reply with `DONE: <result>` instead of a \
command.";

const MIXED_EXAMPLE: &str = "Example session (a task that needed both the web and a file edit):\n\
TASK: record the latest release number in VERSION\n\
reply:\n```\nbrowse(\"https://example.com/releases\")\n```\n\
observation: Latest release: 2.4.1\n\
reply:\n```\nedit_file(\"VERSION\", 1, 1, \"2.4.0\", \"2.4.0\", \"2.4.1\")\n```\n\
observation: edited VERSION lines 1-1\n\
reply: DONE: VERSION now reads 2.4.1";

/// Hand prompt. Hierarchical mode shows only `task_domain`'s catalog; flat
/// mode shows every catalog plus a mixed example.
pub fn render_hand_prompt(
    context: &[MemoryRecord],
    mode: DispatchMode,
    registry: &ToolRegistry,
    task_domain: &str,
    critique: Option<&str>,
) -> Result<Vec<Message>, RegistryError> {
    registry.domain(task_domain)?;
    let mut system = format!("{HAND_PROTOCOL}\n\n# Commands\n");
    match mode {
        DispatchMode::Hierarchical => system.push_str(&registry.catalog(task_domain)?),
        DispatchMode::Flat => {
            for key in registry.keys() {
                system.push_str(&registry.catalog(key)?);
            }
            system.push('\n');
            system.push_str(MIXED_EXAMPLE);
        }
    }
    let mut user = render_records(context);
    if let Some(c) = critique {
        let _ = write!(user, "## Feedback on the previous attempt\n{}\n\n", c.trim());
    }
    user.push_str("Reply with your next command, or DONE: <result>.");
    Ok(vec![Message::system(system), Message::user(user)])
}
