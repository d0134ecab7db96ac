//! The hand agent's action/observation loop.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::backend::Message;
use super::command::{parse_command, Rejection, RejectionKind, ToolCommand};
use super::prompt::render_hand_prompt;
use super::registry::{ToolContext, ToolRegistry};
use super::DispatchMode;
use crate::memory::{retrieve, MemoryKind, MemoryStore, Phase, Producer, RecordDraft};
use crate::toolkit::Sandbox;

pub const DEFAULT_ACTION_CEILING: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Action {
    Command(ToolCommand),
    Rejected(Rejection),
}

impl Action {
    pub fn text(&self) -> &str {
        match self {
            Action::Command(c) => &c.raw,
            Action::Rejected(r) => &r.raw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalStatus {
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub actions: Vec<Action>,
    pub observations: Vec<String>,
    pub final_status: FinalStatus,
    /// Commands emitted from outside the task's domain.
    pub misrouted_count: usize,
    /// Out-of-domain commands that were actually run (always zero in
    /// hierarchical mode).
    pub executed_out_of_domain: usize,
    /// Text after `DONE:`.
    pub result: Option<String>,
    /// Why the loop stopped early, if it did.
    pub aborted: Option<String>,
}

impl ExecutionReport {
    fn new() -> Self {
        ExecutionReport {
            actions: Vec::new(),
            observations: Vec::new(),
            final_status: FinalStatus::Failure,
            misrouted_count: 0,
            executed_out_of_domain: 0,
            result: None,
            aborted: None,
        }
    }

    /// Plain-text account for the evaluator.
    pub fn render(&self) -> String {
        let mut s = format!(
            "Execution status: {}\n",
            match self.final_status {
                FinalStatus::Success => "reported done",
                FinalStatus::Failure => "not completed",
            }
        );
        if let Some(r) = &self.result {
            s.push_str(&format!("Result: {r}\n"));
        }
        if let Some(a) = &self.aborted {
            s.push_str(&format!("Stopped early: {a}\n"));
        }
        s
    }
}

pub struct HandSettings<'a> {
    pub registry: &'a ToolRegistry,
    pub sandbox: &'a Sandbox,
    pub mode: DispatchMode,
    pub timeout: Duration,
    pub max_actions: usize,
    /// Show the hand the whole store instead of its task's records.
    pub full_history: bool,
}

/// Returns the `DONE:` payload when the completion finishes the task.
fn done_marker(completion: &str) -> Option<String> {
    completion.lines().find_map(|l| l.trim_start().strip_prefix("DONE:").map(|r| r.trim().to_string()))
}

/// Runs the hand until it reports `DONE:`, the action ceiling is reached, or
/// a model call fails. Every action and observation is appended to `store`;
/// `task_seq` is the task record they belong to. `call` performs one model
/// call and returns its text.
pub fn hand_execute(
    task_seq: u64,
    task_domain: &str,
    critique: Option<&str>,
    store: &mut MemoryStore,
    settings: &HandSettings<'_>,
    call: &mut dyn FnMut(&[Message]) -> Result<String, String>,
) -> ExecutionReport {
    let mut report = ExecutionReport::new();
    let mut ctx = ToolContext { sandbox: settings.sandbox, timeout: settings.timeout, trace: false };
    let allowed: Vec<&str> = match settings.mode {
        DispatchMode::Hierarchical => vec![task_domain],
        DispatchMode::Flat => settings.registry.keys(),
    };
    loop {
        if report.actions.len() >= settings.max_actions {
            report.aborted = Some(format!("action ceiling of {} reached without DONE", settings.max_actions));
            return report;
        }
        let task = match store.get(task_seq) {
            Some(t) => t.clone(),
            None => {
                report.aborted = Some(format!("no task record {task_seq}"));
                return report;
            }
        };
        let context = if settings.full_history {
            Ok(store.records().to_vec())
        } else {
            retrieve(store, Phase::Execution, Some(&task))
        };
        let prompt = context.map_err(|e| e.to_string()).and_then(|context| {
            render_hand_prompt(&context, settings.mode, settings.registry, task_domain, critique)
                .map_err(|e| e.to_string())
        });
        let completion = match prompt.and_then(|p| call(&p)) {
            Ok(c) => c,
            Err(e) => {
                report.aborted = Some(e);
                return report;
            }
        };
        if let Some(result) = done_marker(&completion) {
            report.final_status = FinalStatus::Success;
            report.result = Some(result);
            return report;
        }

        let (action, observation) = match parse_command(&completion, settings.registry, &allowed) {
            Ok(cmd) => {
                if cmd.domain != task_domain {
                    report.misrouted_count += 1;
                    report.executed_out_of_domain += 1;
                }
                let result = settings.registry.execute(&cmd, &mut ctx);
                (Action::Command(cmd), result.output)
            }
            Err(rejection) => {
                if rejection.kind == RejectionKind::Misrouted {
                    report.misrouted_count += 1;
                }
                let obs = rejection.observation(&settings.registry.commands_in(&allowed));
                (Action::Rejected(rejection), obs)
            }
        };
        let action_text = match action.text() {
            "" => "(empty reply)",
            t => t,
        };
        // Appends cannot fail for these kinds.
        let _ = store.append(RecordDraft::new(MemoryKind::Action, action_text, Producer::Hand));
        let _ = store.append(RecordDraft::new(MemoryKind::Observation, observation.as_str(), Producer::Environment));
        report.actions.push(action);
        report.observations.push(observation);
    }
}
