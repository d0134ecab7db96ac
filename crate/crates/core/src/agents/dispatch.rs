//! Routing tasks to tool domains.

use super::registry::{RegistryError, ToolRegistry, BROWSER, CODE, FILE_EDIT};
use super::task::TaskSpec;

/// Checked in order; the first domain with a keyword hit wins.
pub const KEYWORD_TABLE: [(&str, &[&str]); 3] = [
    (FILE_EDIT, &["edit", "open", "file"]),
    (CODE, &["run", "execute", "python", "test"]),
    (BROWSER, &["search", "web", "url"]),
];

pub const DEFAULT_DOMAIN: &str = CODE;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dispatch {
    pub domain: String,
    /// Set when no keyword matched and the default was used.
    pub warning: Option<String>,
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase)
}

/// The task's own domain when it names one, otherwise the keyword
/// classification of its objective and steps.
pub fn dispatch_task(task: &TaskSpec, registry: &ToolRegistry) -> Result<Dispatch, RegistryError> {
    if !task.tool_domain.is_empty() {
        registry.domain(&task.tool_domain)?;
        return Ok(Dispatch { domain: task.tool_domain.clone(), warning: None });
    }
    let text = std::iter::once(task.objective.as_str())
        .chain(task.steps.iter().map(String::as_str))
        .collect::<Vec<_>>()
        .join("\n");
    let found: Vec<String> = words(&text).collect();
    for (domain, keywords) in KEYWORD_TABLE {
        if found.iter().any(|w| keywords.contains(&w.as_str())) && registry.domain(domain).is_ok() {
            return Ok(Dispatch { domain: domain.into(), warning: None });
        }
    }
    Ok(Dispatch {
        domain: DEFAULT_DOMAIN.into(),
        warning: Some(format!("no tool domain matched the task; defaulting to `{DEFAULT_DOMAIN}`")),
    })
}
