//! Brain and hand roles: model backends, prompts, tool domains, task
//! routing and the hand's execution loop.

pub mod backend;
mod command;
mod dispatch;
mod hand;
mod prompt;
mod registry;
mod task;

pub use command::{parse_command, Rejection, RejectionKind, ToolCommand};
pub use dispatch::{dispatch_task, Dispatch, DEFAULT_DOMAIN, KEYWORD_TABLE};
pub use hand::{hand_execute, Action, ExecutionReport, FinalStatus, HandSettings, DEFAULT_ACTION_CEILING};
pub use prompt::{render_brain_prompt, render_hand_prompt, render_records, BrainStep};
pub use registry::{
    CommandSpec, ParamSpec, RegistryError, ToolContext, ToolDomain, ToolHandler, ToolRegistry, ToolResult, BROWSER,
    CODE, FILE_EDIT,
};
pub use task::{TaskFormatError, TaskSpec};

use serde::{Deserialize, Serialize};

/// How command catalogs are exposed to the hand.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DispatchMode {
    /// Only the task's domain; anything else is rejected before it runs.
    #[default]
    Hierarchical,
    /// Every domain at once.
    Flat,
}

impl std::str::FromStr for DispatchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hierarchical" => Ok(DispatchMode::Hierarchical),
            "flat" => Ok(DispatchMode::Flat),
            other => Err(format!("unknown dispatch mode `{other}` (expected hierarchical or flat)")),
        }
    }
}
