//! The autonomous turn loop: requirement extraction, then turns of
//! reasoning, task delegation, evaluation with retries, summary and a stop
//! check, under iteration and cost caps.

mod engine;
mod lint;
mod meter;
mod vote;

pub use engine::{
    parse_stop, parse_verdict, run_loop, Backends, Engine, EvaluationVerdict, Reasoned, RunOutcome, RunStatus,
    StepError, TaskStats,
};
pub use lint::{lint_transcript, LintError, TranscriptStats, TurnStats};
pub use meter::{BudgetScope, CallError, Meter};
pub use vote::{majority_vote, normalize_vote, Vote};

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::accounting::AccountingError;
use crate::agents::backend::{BackendError, SamplingParams};
use crate::agents::{DispatchMode, DEFAULT_ACTION_CEILING};
use crate::memory::MemoryError;
use crate::toolkit::ToolError;

pub const DEFAULT_MAX_ANALYSES: u32 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub max_iterations: u32,
    /// Extra execution attempts allowed after a failed evaluation.
    pub self_correction_limit: u32,
    pub sandbox_timeout: Duration,
    /// Dollars for the whole run.
    pub max_cost: f64,
    /// Optional dollar cap for a single turn.
    pub max_cost_per_iteration: Option<f64>,
    pub voting_rounds: u32,
    pub dispatch_mode: DispatchMode,
    /// When off, every call sees the full history.
    pub memory_retrieval: bool,
    pub max_analyses: u32,
    pub max_actions: usize,
    pub sampling: SamplingParams,
    /// Rewritten after every turn when set.
    pub transcript_path: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            max_iterations: 100,
            self_correction_limit: 3,
            sandbox_timeout: Duration::from_secs(120),
            max_cost: 10.0,
            max_cost_per_iteration: None,
            voting_rounds: 1,
            dispatch_mode: DispatchMode::Hierarchical,
            memory_retrieval: true,
            max_analyses: DEFAULT_MAX_ANALYSES,
            max_actions: DEFAULT_ACTION_CEILING,
            sampling: SamplingParams::default(),
            transcript_path: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: &str| Err(OrchestratorError::InvalidConfig(m.into()));
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        if !(self.max_cost.is_finite() && self.max_cost > 0.0) {
            return bad("max_cost must be positive");
        }
        if let Some(c) = self.max_cost_per_iteration {
            if !(c.is_finite() && c > 0.0) {
                return bad("max_cost_per_iteration must be positive");
            }
        }
        if self.voting_rounds == 0 {
            return bad("voting_rounds must be at least 1");
        }
        if self.sandbox_timeout.is_zero() {
            return bad("sandbox_timeout must be positive");
        }
        if self.max_analyses == 0 || self.max_actions == 0 {
            return bad("max_analyses and max_actions must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("the request is empty")]
    EmptyRequest,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("backend failure: {0}")]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Accounting(#[from] AccountingError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error("workdir is in use by another run (lock file {0})")]
    Locked(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Internal(String),
}
