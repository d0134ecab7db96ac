//! Execution tools available to hand agents: anchored editing, function
//! replacement, sandboxed commands, call tracing and git patch snapshots.

mod edit;
mod git;
mod sandbox;
mod trace;

pub use edit::{
    corrected_edit_loop, edit_file, locate_anchor, replace_function, snap_to_candidate, AnchorSide, EditHint,
    EditOutcome, EditRequest, EditStatus, NoLint, PostEditHook,
};
pub use git::{
    apply_patch, base_revision, diff_trees, ensure_repository, is_repository, snapshot_patch, snapshot_tree, GitPatch,
};
pub use sandbox::{Observation, Sandbox, DEFAULT_OUTPUT_LIMIT, TIMEOUT_EXIT_STATUS};
pub use trace::{run_traced, run_with_optional_trace, TraceCall, TraceReport};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum ToolError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("line {line} is out of range (file has {len} lines)")]
    LineOutOfRange { line: usize, len: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("path `{0}` escapes the sandbox")]
    PathEscape(String),
    #[error("failed to spawn command: {0}")]
    SpawnFailure(String),
    #[error("no tracing driver for `{0}`")]
    DriverUnavailable(String),
    #[error("{0} is not a git repository")]
    NotARepository(PathBuf),
    #[error("patch does not apply: {0}")]
    PatchApplyFailure(String),
    #[error("git failed: {0}")]
    Git(String),
    #[error("edit still mismatched after {rounds} rounds")]
    RoundLimitExceeded { rounds: u32, hint: EditHint },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
