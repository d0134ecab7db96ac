//! Transcript structure checker.
//!
//! Turn 0 holds the request and its requirement. Every later turn must read
//! `Analysis* (Task ((Action Observation)* Evaluation)* (Action Observation)*)? Summary`,
//! i.e. evaluations close execution attempts and the summary closes the
//! turn (a turn may stop early, before its task or its evaluation).

use serde::Serialize;

use crate::memory::{MemoryKind, MemoryRecord};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("record {seq}: {message}")]
pub struct LintError {
    pub seq: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TurnStats {
    pub turn: u32,
    pub analyses: usize,
    pub has_task: bool,
    pub actions: usize,
    pub evaluations: usize,
    /// Execution attempts: one per evaluation, plus an unevaluated trailing
    /// attempt.
    pub attempts: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TranscriptStats {
    pub turns: Vec<TurnStats>,
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum State {
    Start,
    Analysing,
    /// After the task or an observation.
    Executing {
        acted: bool,
    },
    AwaitingObservation,
    Evaluated,
    Closed,
}

pub fn lint_transcript(records: &[MemoryRecord]) -> Result<TranscriptStats, LintError> {
    use MemoryKind::*;
    let err = |r: &MemoryRecord, message: String| Err(LintError { seq: r.seq, message });

    let mut stats = TranscriptStats::default();
    let mut turn = 0u32;
    let mut state = State::Start;
    for (i, r) in records.iter().enumerate() {
        if r.seq != i as u64 {
            return err(r, format!("expected seq {i}"));
        }
        if r.turn == 0 {
            let ok = matches!((i, r.kind), (0, UserRequest) | (1, MandatoryRequirement));
            if !ok {
                return err(r, format!("{} is not allowed in turn 0 at this position", r.kind));
            }
            if turn != 0 {
                return err(r, "turn number went backwards".into());
            }
            continue;
        }
        if i == 0 {
            return err(r, "transcript must start with the request".into());
        }
        if r.turn != turn {
            if r.turn != turn + 1 {
                return err(r, format!("turn {} follows turn {turn}", r.turn));
            }
            if turn > 0 && state != State::Closed {
                return err(r, format!("turn {turn} has no summary"));
            }
            turn = r.turn;
            state = State::Start;
            stats.turns.push(TurnStats { turn, ..TurnStats::default() });
        }
        let t = stats.turns.last_mut().expect("pushed at turn start");
        state = match (state, r.kind) {
            (State::Start | State::Analysing, Analysis) => {
                t.analyses += 1;
                State::Analysing
            }
            (State::Start | State::Analysing, Task) => {
                t.has_task = true;
                State::Executing { acted: false }
            }
            (State::Executing { .. } | State::Evaluated, Action) => {
                t.actions += 1;
                State::AwaitingObservation
            }
            (State::AwaitingObservation, Observation) => State::Executing { acted: true },
            (State::Executing { .. } | State::Evaluated, Evaluation) => {
                t.evaluations += 1;
                t.attempts += 1;
                State::Evaluated
            }
            (State::Executing { acted }, Summary) => {
                if acted {
                    t.attempts += 1;
                }
                State::Closed
            }
            (State::Start | State::Analysing | State::Evaluated, Summary) => State::Closed,
            (s, kind) => return err(r, format!("{kind} cannot follow {s:?} in turn {turn}")),
        };
    }
    if let Some(last) = records.last() {
        if turn > 0 && state != State::Closed {
            return err(last, format!("turn {turn} has no summary"));
        }
    }
    Ok(stats)
}
