//! Typed, append-only agent history and phase-scoped retrieval.
//!
//! Every model response is parsed into a [`MemoryRecord`] of one
//! [`MemoryKind`]. Retrieval is a pure filter over kinds: reasoning-side
//! brain calls see the request, requirement, analyses, tasks and summaries;
//! the hand agent sees its task and the actions/observations that followed
//! it. Brain calls therefore never carry observation text.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::accounting::count_tokens;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MemoryError {
    #[error("response is empty")]
    EmptyResponse,
    #[error("expected a {expected} record but the response is marked {found}")]
    KindMismatch { expected: MemoryKind, found: MemoryKind },
    #[error("a {0} record already exists")]
    DuplicateSingleton(MemoryKind),
    #[error("{kind} records belong to turn 0, store is at turn {turn}")]
    MisplacedSingleton { kind: MemoryKind, turn: u32 },
    #[error("execution retrieval needs the current task record")]
    MissingTask,
    #[error("record {0} is not a task")]
    NotATask(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryKind {
    UserRequest,
    MandatoryRequirement,
    Analysis,
    Task,
    Action,
    Observation,
    Evaluation,
    Summary,
}

impl MemoryKind {
    pub const ALL: [MemoryKind; 8] = [
        MemoryKind::UserRequest,
        MemoryKind::MandatoryRequirement,
        MemoryKind::Analysis,
        MemoryKind::Task,
        MemoryKind::Action,
        MemoryKind::Observation,
        MemoryKind::Evaluation,
        MemoryKind::Summary,
    ];

    /// Line prefix (followed by `:`) that models are asked to emit.
    pub fn marker(self) -> &'static str {
        match self {
            MemoryKind::UserRequest => "REQUEST",
            MemoryKind::MandatoryRequirement => "REQUIREMENT",
            MemoryKind::Analysis => "ANALYSIS",
            MemoryKind::Task => "TASK",
            MemoryKind::Action => "ACTION",
            MemoryKind::Observation => "OBSERVATION",
            MemoryKind::Evaluation => "EVALUATION",
            MemoryKind::Summary => "SUMMARY",
        }
    }

    fn is_singleton(self) -> bool {
        matches!(self, MemoryKind::UserRequest | MemoryKind::MandatoryRequirement)
    }
}

impl fmt::Display for MemoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            MemoryKind::UserRequest => "UserRequest",
            MemoryKind::MandatoryRequirement => "MandatoryRequirement",
            MemoryKind::Analysis => "Analysis",
            MemoryKind::Task => "Task",
            MemoryKind::Action => "Action",
            MemoryKind::Observation => "Observation",
            MemoryKind::Evaluation => "Evaluation",
            MemoryKind::Summary => "Summary",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Producer {
    Brain,
    Hand,
    Environment,
    User,
}

/// Field order here is the transcript's column order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub kind: MemoryKind,
    pub content: String,
    pub turn: u32,
    pub seq: u64,
    pub producer: Producer,
    pub token_count: u64,
}

/// A record before the store assigns its turn, sequence number and size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordDraft {
    pub kind: MemoryKind,
    pub content: String,
    pub producer: Producer,
}

impl RecordDraft {
    pub fn new(kind: MemoryKind, content: impl Into<String>, producer: Producer) -> Self {
        RecordDraft { kind, content: content.into(), producer }
    }

    pub fn by(mut self, producer: Producer) -> Self {
        self.producer = producer;
        self
    }
}

fn marker_of(line: &str) -> Option<(MemoryKind, &str)> {
    let line = line.trim_start();
    MemoryKind::ALL.into_iter().find_map(|kind| {
        line.strip_prefix(kind.marker()).and_then(|rest| rest.strip_prefix(':')).map(|rest| (kind, rest))
    })
}

/// Extracts the payload of a model response.
///
/// If some line starts with a kind marker such as `ANALYSIS:`, everything
/// before that line is dropped and the payload is the rest of the response
/// from after the marker. Otherwise the whole trimmed response is the payload.
pub fn parse_response(text: &str, expected: MemoryKind) -> Result<RecordDraft, MemoryError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(MemoryError::EmptyResponse);
    }
    let mut offset = 0;
    for line in trimmed.split_inclusive('\n') {
        if let Some((found, rest)) = marker_of(line) {
            if found != expected {
                return Err(MemoryError::KindMismatch { expected, found });
            }
            let rest_start = offset + (line.len() - rest.len());
            let payload = trimmed[rest_start..].trim();
            if payload.is_empty() {
                return Err(MemoryError::EmptyResponse);
            }
            return Ok(RecordDraft::new(expected, payload, Producer::Brain));
        }
        offset += line.len();
    }
    Ok(RecordDraft::new(expected, trimmed, Producer::Brain))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Reasoning,
    Execution,
}

const REASONING_KINDS: [MemoryKind; 5] = [
    MemoryKind::UserRequest,
    MemoryKind::MandatoryRequirement,
    MemoryKind::Analysis,
    MemoryKind::Summary,
    MemoryKind::Task,
];

pub struct MemoryStore {
    records: Vec<MemoryRecord>,
    current_turn: u32,
    tokenizer: fn(&str) -> u64,
}

impl Default for MemoryStore {
    fn default() -> Self {
        MemoryStore { records: Vec::new(), current_turn: 0, tokenizer: count_tokens }
    }
}

impl fmt::Debug for MemoryStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MemoryStore")
            .field("records", &self.records.len())
            .field("current_turn", &self.current_turn)
            .finish()
    }
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_tokenizer(tokenizer: fn(&str) -> u64) -> Self {
        MemoryStore { tokenizer, ..Self::default() }
    }

    pub fn records(&self) -> &[MemoryRecord] {
        &self.records
    }

    pub fn current_turn(&self) -> u32 {
        self.current_turn
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, seq: u64) -> Option<&MemoryRecord> {
        self.records.get(seq as usize)
    }

    pub fn first_of(&self, kind: MemoryKind) -> Option<&MemoryRecord> {
        self.records.iter().find(|r| r.kind == kind)
    }

    pub fn last_of(&self, kind: MemoryKind) -> Option<&MemoryRecord> {
        self.records.iter().rev().find(|r| r.kind == kind)
    }

    pub fn append(&mut self, draft: RecordDraft) -> Result<&MemoryRecord, MemoryError> {
        if draft.kind.is_singleton() {
            if self.records.iter().any(|r| r.kind == draft.kind) {
                return Err(MemoryError::DuplicateSingleton(draft.kind));
            }
            if self.current_turn != 0 {
                return Err(MemoryError::MisplacedSingleton { kind: draft.kind, turn: self.current_turn });
            }
        }
        let token_count = (self.tokenizer)(&draft.content);
        self.records.push(MemoryRecord {
            kind: draft.kind,
            content: draft.content,
            turn: self.current_turn,
            seq: self.records.len() as u64,
            producer: draft.producer,
            token_count,
        });
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn advance_turn(&mut self) -> u32 {
        self.current_turn += 1;
        self.current_turn
    }

    /// Records of the given turn, in order.
    pub fn turn_records(&self, turn: u32) -> impl Iterator<Item = &MemoryRecord> {
        self.records.iter().filter(move |r| r.turn == turn)
    }

    /// One JSON object per record per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records always serialize"));
            out.push('\n');
        }
        out
    }
}

fn task_actions<'a>(store: &'a MemoryStore, task: &'a MemoryRecord) -> impl Iterator<Item = &'a MemoryRecord> {
    store.records[task.seq as usize + 1..]
        .iter()
        .filter(move |r| r.turn == task.turn)
        .filter(|r| matches!(r.kind, MemoryKind::Action | MemoryKind::Observation))
}

/// Context for the given phase, as an owned snapshot in sequence order.
pub fn retrieve(
    store: &MemoryStore,
    phase: Phase,
    current_task: Option<&MemoryRecord>,
) -> Result<Vec<MemoryRecord>, MemoryError> {
    match phase {
        Phase::Reasoning => Ok(store.records.iter().filter(|r| REASONING_KINDS.contains(&r.kind)).cloned().collect()),
        Phase::Execution => {
            let task = current_task.ok_or(MemoryError::MissingTask)?;
            if task.kind != MemoryKind::Task {
                return Err(MemoryError::NotATask(task.seq));
            }
            let mut out = vec![task.clone()];
            out.extend(task_actions(store, task).cloned());
            Ok(out)
        }
    }
}

/// Reasoning context plus the actions and observations that followed the
/// current task, which the evaluator needs to judge the outcome.
pub fn evaluation_context(store: &MemoryStore, current_task: &MemoryRecord) -> Result<Vec<MemoryRecord>, MemoryError> {
    if current_task.kind != MemoryKind::Task {
        return Err(MemoryError::NotATask(current_task.seq));
    }
    let mut out = retrieve(store, Phase::Reasoning, None)?;
    out.extend(task_actions(store, current_task).cloned());
    out.sort_by_key(|r| r.seq);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draft(kind: MemoryKind, content: &str) -> RecordDraft {
        RecordDraft::new(kind, content, Producer::Brain)
    }

    fn sample_store() -> MemoryStore {
        let mut s = MemoryStore::new();
        s.append(draft(MemoryKind::UserRequest, "fix bug")).unwrap();
        s
    }

    fn six_record_store() -> MemoryStore {
        let mut s = MemoryStore::new();
        s.append(draft(MemoryKind::UserRequest, "req")).unwrap();
        s.advance_turn();
        for (kind, c) in [
            (MemoryKind::Analysis, "a"),
            (MemoryKind::Task, "t"),
            (MemoryKind::Action, "act"),
            (MemoryKind::Observation, "obs"),
            (MemoryKind::Summary, "sum"),
        ] {
            s.append(draft(kind, c)).unwrap();
        }
        s
    }

    fn kinds(records: &[MemoryRecord]) -> Vec<MemoryKind> {
        records.iter().map(|r| r.kind).collect()
    }

    #[test]
    fn marker_drops_filler() {
        let text = "I will help you to analyze this problem.\n\
                    ANALYSIS: Merge multiple sorted linked lists into a single sorted linked list.";
        let d = parse_response(text, MemoryKind::Analysis).unwrap();
        assert_eq!(d.content, "Merge multiple sorted linked lists into a single sorted linked list.");
    }

    #[test]
    fn no_marker_keeps_full_text() {
        let text = "I will help you to analyze this problem. To solve this problem, we need to \
                    merge multiple sorted linked lists into a single sorted linked list.";
        let d = parse_response(text, MemoryKind::Analysis).unwrap();
        assert_eq!(d.content, text);
        assert_eq!(parse_response("x", MemoryKind::Analysis).unwrap().content, "x");
    }

    #[test]
    fn empty_and_mismatch() {
        assert_eq!(parse_response("   \n\t ", MemoryKind::Task), Err(MemoryError::EmptyResponse));
        assert_eq!(parse_response("TASK:   ", MemoryKind::Task), Err(MemoryError::EmptyResponse));
        assert_eq!(
            parse_response("TASK: do it", MemoryKind::Analysis),
            Err(MemoryError::KindMismatch { expected: MemoryKind::Analysis, found: MemoryKind::Task })
        );
    }

    #[test]
    fn multi_line_payload_kept() {
        let d = parse_response("ok\nTASK: open x\nSTEPS:\n1. a\nEXPECTED: y", MemoryKind::Task).unwrap();
        assert_eq!(d.content, "open x\nSTEPS:\n1. a\nEXPECTED: y");
    }

    #[test]
    fn append_assigns_dense_seq() {
        let mut s = sample_store();
        assert_eq!(s.len(), 1);
        assert_eq!((s.records()[0].seq, s.records()[0].turn), (0, 0));
        s.append(draft(MemoryKind::Analysis, "a")).unwrap();
        s.append(draft(MemoryKind::Analysis, "b")).unwrap();
        let r = s.append(draft(MemoryKind::Analysis, "ninechars")).unwrap();
        assert_eq!(r.seq, 3);
        assert_eq!(r.token_count, 3);
    }

    #[test]
    fn singletons_enforced() {
        let mut s = sample_store();
        assert_eq!(
            s.append(draft(MemoryKind::UserRequest, "again")).unwrap_err(),
            MemoryError::DuplicateSingleton(MemoryKind::UserRequest)
        );
        s.advance_turn();
        assert!(matches!(
            s.append(draft(MemoryKind::MandatoryRequirement, "late")),
            Err(MemoryError::MisplacedSingleton { .. })
        ));
    }

    #[test]
    fn custom_tokenizer() {
        let mut s = MemoryStore::with_tokenizer(|t| t.split_whitespace().count() as u64);
        let r = s.append(draft(MemoryKind::UserRequest, "one two three")).unwrap();
        assert_eq!(r.token_count, 3);
    }

    #[test]
    fn reasoning_filter() {
        let s = six_record_store();
        let got = retrieve(&s, Phase::Reasoning, None).unwrap();
        assert_eq!(
            kinds(&got),
            vec![MemoryKind::UserRequest, MemoryKind::Analysis, MemoryKind::Task, MemoryKind::Summary]
        );
    }

    #[test]
    fn execution_filter() {
        let s = six_record_store();
        let task = s.first_of(MemoryKind::Task).unwrap().clone();
        let got = retrieve(&s, Phase::Execution, Some(&task)).unwrap();
        assert_eq!(kinds(&got), vec![MemoryKind::Task, MemoryKind::Action, MemoryKind::Observation]);
        assert_eq!(retrieve(&s, Phase::Execution, None), Err(MemoryError::MissingTask));
    }

    #[test]
    fn execution_is_scoped_to_task_turn() {
        let mut s = six_record_store();
        s.advance_turn();
        let t2 = s.append(draft(MemoryKind::Task, "t2")).unwrap().clone();
        s.append(draft(MemoryKind::Action, "act2")).unwrap();
        let got = retrieve(&s, Phase::Execution, Some(&t2)).unwrap();
        assert_eq!(got.iter().map(|r| r.content.as_str()).collect::<Vec<_>>(), ["t2", "act2"]);
    }

    #[test]
    fn evaluation_sees_current_actions() {
        let s = six_record_store();
        let task = s.first_of(MemoryKind::Task).unwrap().clone();
        let got = evaluation_context(&s, &task).unwrap();
        assert_eq!(got.len(), 6);
        assert!(got.windows(2).all(|w| w[0].seq < w[1].seq));
    }

    #[test]
    fn empty_store_reasoning() {
        assert!(retrieve(&MemoryStore::new(), Phase::Reasoning, None).unwrap().is_empty());
    }

    #[test]
    fn jsonl_field_order() {
        let s = sample_store();
        assert_eq!(
            s.to_jsonl(),
            "{\"kind\":\"user_request\",\"content\":\"fix bug\",\"turn\":0,\"seq\":0,\"producer\":\"brain\",\"token_count\":2}\n"
        );
    }
}
