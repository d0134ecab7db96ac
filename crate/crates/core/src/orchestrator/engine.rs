use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::meter::{BudgetScope, CallError, Meter};
use super::vote::majority_vote;
use super::{OrchestratorError, RunConfig};
use crate::accounting::{Pricing, UsageLedger};
use crate::agents::backend::{Backend, Message};
use crate::agents::{
    dispatch_task, hand_execute, render_brain_prompt, BrainStep, ExecutionReport, HandSettings, RegistryError,
    TaskFormatError, TaskSpec, ToolRegistry,
};
use crate::memory::{
    evaluation_context, parse_response, retrieve, MemoryError, MemoryKind, MemoryRecord, MemoryStore, Phase, Producer,
    RecordDraft,
};
use crate::toolkit::{self, GitPatch, Sandbox, ToolError};

#[derive(Clone, Copy)]
pub struct Backends<'a> {
    pub brain: &'a dyn Backend,
    pub hand: &'a dyn Backend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Solved,
    BudgetExhausted,
    IterationCap,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Solved => 0,
            RunStatus::IterationCap => 2,
            RunStatus::BudgetExhausted => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TaskStats {
    pub turn: u32,
    pub domain: String,
    pub attempts: u32,
    pub passed: bool,
    pub misrouted: usize,
    pub executed_out_of_domain: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub turns_used: u32,
    pub final_patch: GitPatch,
    pub cost: f64,
    pub ledger: UsageLedger,
    pub tasks: Vec<TaskStats>,
    /// Warnings and recovered errors, in order.
    pub notes: Vec<String>,
    #[serde(skip)]
    pub transcript: Vec<MemoryRecord>,
}

impl RunOutcome {
    pub fn transcript_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.transcript {
            s.push_str(&serde_json::to_string(r).expect("records serialize"));
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StepError {
    #[error(transparent)]
    Call(#[from] CallError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    TaskFormat(#[from] TaskFormatError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Tool(#[from] ToolError),
}

impl StepError {
    fn budget(&self) -> Option<BudgetScope> {
        match self {
            StepError::Call(CallError::Budget(scope)) => Some(*scope),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Reasoned {
    pub record: Option<MemoryRecord>,
    /// The brain asked to move on to task formulation.
    pub next_task: bool,
}

#[derive(Debug, Clone)]
pub struct EvaluationVerdict {
    pub passed: bool,
    pub record: MemoryRecord,
}

/// Removes `NEXT: task` lines and reports whether one was present.
fn split_next_marker(text: &str) -> (String, bool) {
    let mut next = false;
    let kept: Vec<&str> = text
        .lines()
        .filter(|l| {
            let is_marker = l.trim().to_ascii_lowercase().replace(' ', "") == "next:task";
            next |= is_marker;
            !is_marker
        })
        .collect();
    (kept.join("\n"), next)
}

/// `VERDICT: pass` or `VERDICT: fail`; anything else counts as fail.
pub fn parse_verdict(text: &str) -> bool {
    text.lines()
        .filter_map(|l| {
            let t = l.trim();
            let head = t.get(..8)?;
            head.eq_ignore_ascii_case("verdict:").then(|| t[8..].trim().to_ascii_lowercase())
        })
        .next()
        .is_some_and(|v| v.starts_with("pass"))
}

/// First non-empty line, minus an optional `STOP:` prefix, starting with
/// `SATISFIED`.
pub fn parse_stop(text: &str) -> bool {
    let Some(line) = text.lines().map(str::trim).find(|l| !l.is_empty()) else {
        return false;
    };
    let line = line.strip_prefix("STOP:").unwrap_or(line).trim();
    line.to_ascii_uppercase().starts_with("SATISFIED")
}

/// Exclusive claim on a workdir, released on drop.
struct WorkdirLock(Option<PathBuf>);

impl WorkdirLock {
    fn acquire(workdir: &Path) -> Result<Self, OrchestratorError> {
        let git_dir = workdir.join(".git");
        if !git_dir.is_dir() {
            return Ok(WorkdirLock(None));
        }
        let dir = git_dir.join("tandem");
        fs::create_dir_all(&dir)?;
        let path = dir.join("lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(WorkdirLock(Some(path))),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(OrchestratorError::Locked(path)),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for WorkdirLock {
    fn drop(&mut self) {
        if let Some(p) = &self.0 {
            let _ = fs::remove_file(p);
        }
    }
}

/// One run's state: the memory store, the metered backends and the sandbox.
pub struct Engine<'a> {
    config: RunConfig,
    backends: Backends<'a>,
    registry: &'a ToolRegistry,
    sandbox: Sandbox,
    store: MemoryStore,
    meter: Meter,
    notes: Vec<String>,
    tasks: Vec<TaskStats>,
}

impl<'a> Engine<'a> {
    pub fn new(
        config: RunConfig,
        backends: Backends<'a>,
        registry: &'a ToolRegistry,
        pricing: Pricing,
        workdir: &Path,
    ) -> Result<Self, OrchestratorError> {
        config.validate()?;
        if registry.is_empty() {
            return Err(OrchestratorError::InvalidConfig("the tool registry is empty".into()));
        }
        let meter = Meter::new(pricing, config.max_cost, config.max_cost_per_iteration);
        Ok(Engine {
            config,
            backends,
            registry,
            sandbox: Sandbox::new(workdir)?,
            store: MemoryStore::new(),
            meter,
            notes: Vec::new(),
            tasks: Vec::new(),
        })
    }

    pub fn store(&self) -> &MemoryStore {
        &self.store
    }

    pub fn meter(&self) -> &Meter {
        &self.meter
    }

    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    fn note(&mut self, text: impl Into<String>) {
        let text = text.into();
        log::warn!("{text}");
        self.notes.push(format!("turn {}: {text}", self.store.current_turn()));
    }

    fn requirement(&self) -> Option<String> {
        self.store.first_of(MemoryKind::MandatoryRequirement).map(|r| r.content.clone())
    }

    fn reasoning_context(&self) -> Vec<MemoryRecord> {
        if self.config.memory_retrieval {
            retrieve(&self.store, Phase::Reasoning, None).expect("reasoning retrieval needs no task")
        } else {
            self.store.records().to_vec()
        }
    }

    fn brain_call(&mut self, step: BrainStep, context: &[MemoryRecord], extra: &str) -> Result<String, CallError> {
        let requirement = self.requirement();
        let messages = render_brain_prompt(step, requirement.as_deref(), context, extra);
        self.meter.call(self.backends.brain, Producer::Brain, &messages, &self.config.sampling)
    }

    fn append(&mut self, draft: RecordDraft) -> Result<MemoryRecord, MemoryError> {
        self.store.append(draft).cloned()
    }

    /// Stores the request and the single requirement the result must meet.
    pub fn extract_mandatory_requirement(&mut self, request: &str) -> Result<MemoryRecord, StepError> {
        if self.store.first_of(MemoryKind::UserRequest).is_none() {
            self.append(RecordDraft::new(MemoryKind::UserRequest, request.trim(), Producer::User))?;
        }
        let context = self.store.records().to_vec();
        let text = self.brain_call(BrainStep::Requirement, &context, "")?;
        let draft = parse_response(&text, MemoryKind::MandatoryRequirement)?;
        Ok(self.append(draft)?)
    }

    fn parse_analysis(text: &str) -> Result<(Option<String>, bool), MemoryError> {
        let (rest, next) = split_next_marker(text);
        if next && rest.trim().is_empty() {
            return Ok((None, true));
        }
        Ok((Some(parse_response(&rest, MemoryKind::Analysis)?.content), next))
    }

    /// One analysis step, by voting when more than one round is configured.
    pub fn reason_step(&mut self) -> Result<Reasoned, StepError> {
        if self.config.voting_rounds > 1 {
            return self.reason_with_voting();
        }
        let context = self.reasoning_context();
        let text = self.brain_call(BrainStep::Analysis, &context, "")?;
        let (content, next_task) = Self::parse_analysis(&text)?;
        let record = match content {
            Some(c) => Some(self.append(RecordDraft::new(MemoryKind::Analysis, c, Producer::Brain))?),
            None => None,
        };
        Ok(Reasoned { record, next_task })
    }

    /// Samples `voting_rounds` analyses and keeps the majority answer.
    pub fn reason_with_voting(&mut self) -> Result<Reasoned, StepError> {
        let context = self.reasoning_context();
        let mut samples = Vec::new();
        let mut last_err = None;
        for _ in 0..self.config.voting_rounds {
            match self.brain_call(BrainStep::Analysis, &context, "") {
                Ok(text) => match Self::parse_analysis(&text) {
                    Ok(parsed) => samples.push(parsed),
                    Err(e) => last_err = Some(StepError::from(e)),
                },
                Err(e @ CallError::Budget(_)) => return Err(e.into()),
                Err(e) => last_err = Some(e.into()),
            }
        }
        if samples.is_empty() {
            return Err(last_err.expect("at least one round ran"));
        }
        let answers: Vec<&str> = samples.iter().map(|(c, _)| c.as_deref().unwrap_or("")).collect();
        let vote = majority_vote(&answers).expect("non-empty");
        let (content, next_task) = samples[vote.winner].clone();
        let record = match content {
            Some(c) => {
                let annotated = format!("{c}\n[votes {}/{}]", vote.votes, vote.total);
                Some(self.append(RecordDraft::new(MemoryKind::Analysis, annotated, Producer::Brain))?)
            }
            None => None,
        };
        Ok(Reasoned { record, next_task })
    }

    fn parse_task(&mut self, text: &str) -> Result<TaskSpec, StepError> {
        let mut task = TaskSpec::parse(text, self.store.current_turn())?;
        let dispatch = dispatch_task(&task, self.registry)
            .map_err(|e| TaskFormatError(format!("{e}; known domains: {}", self.registry.keys().join(", "))))?;
        if let Some(w) = dispatch.warning {
            self.note(w);
        }
        task.tool_domain = dispatch.domain;
        Ok(task)
    }

    /// Asks the brain for a task, reprompting once with a format reminder.
    pub fn formulate_task(&mut self) -> Result<(TaskSpec, MemoryRecord), StepError> {
        let context = self.reasoning_context();
        let domains: Vec<String> = self.registry.domains().map(|d| format!("- {}: {}", d.key, d.description)).collect();
        let extra = format!("# Tool domains of the execution agent\n{}", domains.join("\n"));
        let text = self.brain_call(BrainStep::Task, &context, &extra)?;
        let task = match self.parse_task(&text) {
            Ok(t) => t,
            Err(StepError::TaskFormat(e)) => {
                self.note(format!("{e}; asking again"));
                let retry = format!(
                    "{extra}\n\nYour previous reply could not be used ({}). Follow the format exactly, \
                     including the STEPS and EXPECTED sections.",
                    e.0
                );
                let text = self.brain_call(BrainStep::Task, &context, &retry)?;
                self.parse_task(&text)?
            }
            Err(e) => return Err(e),
        };
        let record = self.append(RecordDraft::new(MemoryKind::Task, task.render(), Producer::Brain))?;
        Ok((task, record))
    }

    /// Runs the hand on the task; actions and observations land in the
    /// store.
    pub fn execute_task(
        &mut self,
        task: &TaskSpec,
        task_record: &MemoryRecord,
        critique: Option<&str>,
    ) -> ExecutionReport {
        let Engine { config, backends, registry, sandbox, store, meter, .. } = self;
        let settings = HandSettings {
            registry,
            sandbox,
            mode: config.dispatch_mode,
            timeout: config.sandbox_timeout,
            max_actions: config.max_actions,
            full_history: !config.memory_retrieval,
        };
        let hand = backends.hand;
        let sampling = config.sampling;
        let mut call = |m: &[Message]| meter.call(hand, Producer::Hand, m, &sampling).map_err(|e| e.to_string());
        hand_execute(task_record.seq, &task.tool_domain, critique, store, &settings, &mut call)
    }

    /// Judges a report against the task's expected outcome. A literal
    /// occurrence of the expected outcome in the output passes without a
    /// model call.
    pub fn evaluate_result(
        &mut self,
        task: &TaskSpec,
        task_record: &MemoryRecord,
        report: &ExecutionReport,
    ) -> Result<EvaluationVerdict, StepError> {
        let expected = task.expected_outcome.trim();
        let literal = !expected.is_empty()
            && (report.observations.iter().any(|o| o.contains(expected))
                || report.result.as_deref().is_some_and(|r| r.contains(expected)));
        if literal {
            let content = format!("The expected outcome {expected:?} appears in the execution output.\nVERDICT: pass");
            let record = self.append(RecordDraft::new(MemoryKind::Evaluation, content, Producer::Environment))?;
            return Ok(EvaluationVerdict { passed: true, record });
        }
        let context = if self.config.memory_retrieval {
            evaluation_context(&self.store, task_record)?
        } else {
            self.store.records().to_vec()
        };
        let extra = format!("# Task under evaluation\n{}\n\n# Execution report\n{}", task.render(), report.render());
        let text = self.brain_call(BrainStep::Evaluation, &context, &extra)?;
        let passed = parse_verdict(&text);
        let mut content = match parse_response(&text, MemoryKind::Evaluation) {
            Ok(d) => d.content,
            Err(_) => "(no usable evaluation)".to_string(),
        };
        if !content.lines().any(|l| l.trim().to_ascii_lowercase().starts_with("verdict:")) {
            content.push_str(if passed { "\nVERDICT: pass" } else { "\nVERDICT: fail" });
        }
        let record = self.append(RecordDraft::new(MemoryKind::Evaluation, content, Producer::Brain))?;
        Ok(EvaluationVerdict { passed, record })
    }

    /// Appends the turn summary: the brain's compression of `turn_note`
    /// followed by the turn's patch. Falls back to the note itself when the
    /// brain cannot be called.
    pub fn summarize_turn(&mut self, turn_start_tree: &str, turn_note: &str) -> Result<MemoryRecord, StepError> {
        let workdir = self.sandbox.root().to_path_buf();
        let diff =
            toolkit::snapshot_tree(&workdir).and_then(|now| toolkit::diff_trees(&workdir, turn_start_tree, &now));
        let diff = match diff {
            Ok(d) => d,
            Err(e) => {
                self.note(format!("could not compute the turn patch: {e}"));
                String::new()
            }
        };
        let context = self.reasoning_context();
        let extra = format!("# This turn\n{}", turn_note.trim());
        let (text, producer) = match self.brain_call(BrainStep::Summary, &context, &extra) {
            Ok(text) => match parse_response(&text, MemoryKind::Summary) {
                Ok(d) => (d.content, Producer::Brain),
                Err(e) => {
                    self.note(format!("unusable summary: {e}"));
                    (turn_note.trim().to_string(), Producer::Environment)
                }
            },
            Err(e) => {
                self.note(format!("summary not written by the brain: {e}"));
                (turn_note.trim().to_string(), Producer::Environment)
            }
        };
        let content = format!("{text}\n\nPATCH:\n{diff}");
        Ok(self.append(RecordDraft::new(MemoryKind::Summary, content, producer))?)
    }

    /// Asks whether the mandatory requirement now holds.
    pub fn check_stop(&mut self) -> Result<bool, StepError> {
        let context = self.reasoning_context();
        let text = self.brain_call(BrainStep::StopCheck, &context, "")?;
        Ok(parse_stop(&text))
    }

    /// Reasoning, task, execution with retries and evaluation. Returns the
    /// note handed to the summary.
    fn run_turn(&mut self) -> String {
        let mut analyses = 0;
        for _ in 0..self.config.max_analyses {
            match self.reason_step() {
                Ok(r) => {
                    analyses += r.record.is_some() as u32;
                    if r.next_task {
                        break;
                    }
                }
                Err(e) => return self.turn_aborted("reasoning", e),
            }
        }
        log::info!("turn {}: {analyses} analyses", self.store.current_turn());
        let (task, task_record) = match self.formulate_task() {
            Ok(t) => t,
            Err(e) => return self.turn_aborted("task formulation", e),
        };
        let mut stats = TaskStats {
            turn: task.turn,
            domain: task.tool_domain.clone(),
            attempts: 0,
            passed: false,
            misrouted: 0,
            executed_out_of_domain: 0,
        };
        let mut critique: Option<String> = None;
        let mut last_result = None;
        let note = loop {
            stats.attempts += 1;
            let report = self.execute_task(&task, &task_record, critique.as_deref());
            stats.misrouted += report.misrouted_count;
            stats.executed_out_of_domain += report.executed_out_of_domain;
            last_result = report.result.clone().or(last_result);
            if let Some(scope) = self.meter.exhausted() {
                break format!("Turn ended early: {scope:?} budget exhausted during execution.");
            }
            let verdict = match self.evaluate_result(&task, &task_record, &report) {
                Ok(v) => v,
                Err(e) => break self.turn_aborted("evaluation", e),
            };
            if verdict.passed {
                stats.passed = true;
                break format!(
                    "Task: {}\nOutcome: passed on attempt {}.\nResult: {}",
                    task.objective,
                    stats.attempts,
                    report.result.as_deref().unwrap_or("(none reported)")
                );
            }
            if stats.attempts > self.config.self_correction_limit {
                break format!(
                    "Task: {}\nOutcome: failed after {} attempts.\nLast evaluation: {}",
                    task.objective, stats.attempts, verdict.record.content
                );
            }
            critique = Some(verdict.record.content);
        };
        self.tasks.push(stats);
        note
    }

    fn turn_aborted(&mut self, phase: &str, e: StepError) -> String {
        let text = match e.budget() {
            Some(scope) => format!("Turn ended early: {scope:?} budget exhausted during {phase}."),
            None => format!("Turn ended early: {phase} failed: {e}"),
        };
        self.note(text.clone());
        text
    }

    fn flush_transcript(&mut self) {
        if let Some(path) = self.config.transcript_path.clone() {
            if let Err(e) = fs::write(&path, self.store.to_jsonl()) {
                self.note(format!("could not write transcript {}: {e}", path.display()));
            }
        }
    }

    fn finish(&mut self, status: RunStatus, turns_used: u32) -> Result<RunOutcome, OrchestratorError> {
        self.flush_transcript();
        let final_patch = toolkit::snapshot_patch(self.sandbox.root())?;
        Ok(RunOutcome {
            status,
            turns_used,
            final_patch,
            cost: self.meter.ledger().total_cost(),
            ledger: self.meter.ledger().clone(),
            tasks: self.tasks.clone(),
            notes: self.notes.clone(),
            transcript: self.store.records().to_vec(),
        })
    }

    /// Runs the loop until solved, out of turns, or out of budget.
    pub fn run(&mut self, request: &str) -> Result<RunOutcome, OrchestratorError> {
        if request.trim().is_empty() {
            return Err(OrchestratorError::EmptyRequest);
        }
        let workdir = self.sandbox.root().to_path_buf();
        toolkit::ensure_repository(&workdir)?;
        let _lock = WorkdirLock::acquire(&workdir)?;

        match self.extract_mandatory_requirement(request) {
            Ok(_) => {}
            Err(e) if e.budget().is_some() => return self.finish(RunStatus::BudgetExhausted, 0),
            Err(StepError::Call(CallError::Backend(e))) => return Err(e.into()),
            Err(StepError::Call(CallError::Pricing(e))) => return Err(e.into()),
            Err(StepError::Memory(e)) => return Err(e.into()),
            Err(e) => return Err(OrchestratorError::Internal(e.to_string())),
        }
        self.flush_transcript();

        for turn in 1..=self.config.max_iterations {
            self.store.advance_turn();
            self.meter.start_iteration();
            let start_tree = toolkit::snapshot_tree(&workdir)?;
            let note = self.run_turn();
            self.summarize_turn(&start_tree, &note).map_err(|e| OrchestratorError::Internal(e.to_string()))?;
            self.flush_transcript();
            if self.meter.exhausted() == Some(BudgetScope::Run) {
                return self.finish(RunStatus::BudgetExhausted, turn);
            }
            match self.check_stop() {
                Ok(true) => return self.finish(RunStatus::Solved, turn),
                Ok(false) => {}
                Err(e) if e.budget() == Some(BudgetScope::Run) => return self.finish(RunStatus::BudgetExhausted, turn),
                Err(e) => self.note(format!("stop check failed: {e}")),
            }
        }
        self.finish(RunStatus::IterationCap, self.config.max_iterations)
    }
}

/// Runs `request` in `workdir` to completion.
pub fn run_loop(
    request: &str,
    config: RunConfig,
    backends: Backends<'_>,
    registry: &ToolRegistry,
    pricing: Pricing,
    workdir: &Path,
) -> Result<RunOutcome, OrchestratorError> {
    Engine::new(config, backends, registry, pricing, workdir)?.run(request)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdicts() {
        assert!(parse_verdict("EVALUATION: fine\nVERDICT: pass"));
        assert!(parse_verdict("verdict: PASS - all good"));
        assert!(!parse_verdict("VERDICT: fail"));
        assert!(!parse_verdict("looks good to me"));
        assert!(!parse_verdict("VERDICT: maybe"));
    }

    #[test]
    fn stop_verdicts() {
        assert!(parse_stop("SATISFIED"));
        assert!(parse_stop("\n  STOP: satisfied, tests pass"));
        assert!(!parse_stop("NOT YET"));
        assert!(!parse_stop("UNSATISFIED"));
        assert!(!parse_stop(""));
    }

    #[test]
    fn next_marker() {
        assert_eq!(split_next_marker("ANALYSIS: a\nNEXT: task"), ("ANALYSIS: a".into(), true));
        assert_eq!(split_next_marker("ANALYSIS: next task soon"), ("ANALYSIS: next task soon".into(), false));
        assert_eq!(split_next_marker("next:Task"), ("".into(), true));
    }
}
