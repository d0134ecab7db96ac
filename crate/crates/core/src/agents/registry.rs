//! Tool domains, their command catalogs and handlers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Duration;

use super::command::ToolCommand;
use crate::toolkit::{self, EditStatus, Sandbox, ToolError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    /// Optional parameters carry their default.
    pub default: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandSpec {
    pub name: String,
    pub params: Vec<ParamSpec>,
    pub doc: String,
    pub example: String,
}

impl CommandSpec {
    /// `params` uses `name` for required and `name=default` for optional
    /// parameters.
    pub fn new(name: &str, params: &[&str], doc: &str, example: &str) -> Self {
        let params = params
            .iter()
            .map(|p| match p.split_once('=') {
                Some((n, d)) => ParamSpec { name: n.into(), default: Some(d.into()) },
                None => ParamSpec { name: (*p).into(), default: None },
            })
            .collect();
        CommandSpec { name: name.into(), params, doc: doc.into(), example: example.into() }
    }

    pub fn signature(&self) -> String {
        let params: Vec<String> = self
            .params
            .iter()
            .map(|p| match &p.default {
                Some(d) => format!("{}={d}", p.name),
                None => p.name.clone(),
            })
            .collect();
        format!("{}({})", self.name, params.join(", "))
    }
}

/// Per-run state the handlers work against.
#[derive(Debug)]
pub struct ToolContext<'a> {
    pub sandbox: &'a Sandbox,
    pub timeout: Duration,
    /// Toggled by `trace_code_switch`.
    pub trace: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolResult {
    pub output: String,
    pub ok: bool,
}

impl ToolResult {
    pub fn ok(output: impl Into<String>) -> Self {
        ToolResult { output: output.into(), ok: true }
    }

    pub fn failed(output: impl Into<String>) -> Self {
        ToolResult { output: output.into(), ok: false }
    }
}

pub trait ToolHandler: Send + Sync {
    /// Failures are reported in the result, never raised: they become
    /// observations.
    fn handle(&self, cmd: &ToolCommand, ctx: &mut ToolContext<'_>) -> ToolResult;
}

pub struct ToolDomain {
    pub key: String,
    pub description: String,
    pub commands: Vec<CommandSpec>,
    pub handler: Box<dyn ToolHandler>,
}

impl std::fmt::Debug for ToolDomain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToolDomain")
            .field("key", &self.key)
            .field("commands", &self.commands.iter().map(|c| &c.name).collect::<Vec<_>>())
            .finish()
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("unknown tool domain `{0}`")]
    UnknownDomain(String),
    #[error("command `{name}` is already registered by `{domain}`")]
    DuplicateCommand { name: String, domain: String },
}

#[derive(Debug, Default)]
pub struct ToolRegistry {
    domains: BTreeMap<String, ToolDomain>,
}

pub const FILE_EDIT: &str = "file-edit";
pub const CODE: &str = "code";
pub const BROWSER: &str = "browser";

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// file-edit, code, and the rejecting browser stub.
    pub fn standard() -> Self {
        let mut r = Self::new();
        r.register(ToolDomain {
            key: FILE_EDIT.into(),
            description: "Read, create and edit files in the working directory.".into(),
            commands: vec![
                CommandSpec::new(
                    "open_file",
                    &["path", "line=1"],
                    "Show up to 100 numbered lines of a file starting at `line`.",
                    "open_file(\"src/app.py\", 40)",
                ),
                CommandSpec::new(
                    "create_file",
                    &["path", "content="],
                    "Create a new file with the given content.",
                    "create_file(\"notes.txt\", \"first line\\n\")",
                ),
                CommandSpec::new(
                    "edit_file",
                    &["file", "start_line", "end_line", "start_line_string", "end_line_string", "new_content"],
                    "Replace lines start_line..end_line (inclusive). The anchor strings must appear on those lines, otherwise nothing is changed and the matching line numbers are reported.",
                    "edit_file(\"app.py\", 3, 4, \"def main():\", \"return 1\", \"def main():\\n    return 0\")",
                ),
            ],
            handler: Box::new(FileEditTools),
        })
        .expect("disjoint");
        r.register(ToolDomain {
            key: CODE.into(),
            description: "Run programs and restructure source code.".into(),
            commands: vec![
                CommandSpec::new(
                    "run_command",
                    &["command"],
                    "Run a shell command in the working directory and show its output and exit status.",
                    "run_command(\"python3 -m pytest -q\")",
                ),
                CommandSpec::new(
                    "replace_function",
                    &["file", "signature", "new_code"],
                    "Replace the whole definition whose first line starts with `signature`.",
                    "replace_function(\"util.py\", \"def parse(\", \"def parse(s):\\n    return s.split()\\n\")",
                ),
                CommandSpec::new(
                    "trace_code_switch",
                    &["enabled"],
                    "Turn call tracing of Python scripts run with run_command on (true) or off (false).",
                    "trace_code_switch(true)",
                ),
            ],
            handler: Box::new(CodeTools),
        })
        .expect("disjoint");
        r.register(ToolDomain {
            key: BROWSER.into(),
            description: "Web access (not available in this environment).".into(),
            commands: vec![
                CommandSpec::new("browse", &["url"], "Open a web page.", "browse(\"https://example.com\")"),
                CommandSpec::new(
                    "search_web",
                    &["query"],
                    "Search the web.",
                    "search_web(\"python sorted linked lists\")",
                ),
                CommandSpec::new(
                    "click_element",
                    &["selector"],
                    "Click an element on the open page.",
                    "click_element(\"#submit\")",
                ),
            ],
            handler: Box::new(BrowserStub),
        })
        .expect("disjoint");
        r
    }

    pub fn register(&mut self, domain: ToolDomain) -> Result<(), RegistryError> {
        for c in &domain.commands {
            if let Some(owner) = self.domain_of(&c.name) {
                return Err(RegistryError::DuplicateCommand { name: c.name.clone(), domain: owner.into() });
            }
        }
        self.domains.insert(domain.key.clone(), domain);
        Ok(())
    }

    pub fn domain(&self, key: &str) -> Result<&ToolDomain, RegistryError> {
        self.domains.get(key).ok_or_else(|| RegistryError::UnknownDomain(key.into()))
    }

    pub fn domains(&self) -> impl Iterator<Item = &ToolDomain> {
        self.domains.values()
    }

    pub fn keys(&self) -> Vec<&str> {
        self.domains.keys().map(String::as_str).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    pub fn domain_of(&self, command: &str) -> Option<&str> {
        self.domains.values().find(|d| d.commands.iter().any(|c| c.name == command)).map(|d| d.key.as_str())
    }

    pub fn command(&self, name: &str) -> Option<&CommandSpec> {
        self.domains.values().flat_map(|d| &d.commands).find(|c| c.name == name)
    }

    pub fn commands_in(&self, domains: &[&str]) -> Vec<&CommandSpec> {
        domains.iter().filter_map(|k| self.domains.get(*k)).flat_map(|d| &d.commands).collect()
    }

    pub fn execute(&self, cmd: &ToolCommand, ctx: &mut ToolContext<'_>) -> ToolResult {
        match self.domains.get(&cmd.domain) {
            Some(d) => d.handler.handle(cmd, ctx),
            None => ToolResult::failed(format!("error: unknown tool domain `{}`", cmd.domain)),
        }
    }

    /// Catalog text for one domain.
    pub fn catalog(&self, key: &str) -> Result<String, RegistryError> {
        let d = self.domain(key)?;
        let mut s = format!("[{}] {}\n", d.key, d.description);
        for c in &d.commands {
            let _ = writeln!(s, "- {}: {}\n  e.g. {}", c.signature(), c.doc, c.example);
        }
        Ok(s)
    }
}

fn tool_error(e: ToolError) -> ToolResult {
    ToolResult::failed(format!("error: {e}"))
}

struct FileEditTools;

const WINDOW: usize = 100;

impl ToolHandler for FileEditTools {
    fn handle(&self, cmd: &ToolCommand, ctx: &mut ToolContext<'_>) -> ToolResult {
        let arg = |n: &str| cmd.arg(n).unwrap_or_default();
        match cmd.name.as_str() {
            "open_file" => {
                let path = match ctx.sandbox.resolve(arg("path")) {
                    Ok(p) => p,
                    Err(e) => return tool_error(e),
                };
                let Ok(text) = std::fs::read_to_string(&path) else {
                    return tool_error(ToolError::FileNotFound(arg("path").into()));
                };
                let Ok(start) = arg("line").trim().parse::<usize>() else {
                    return ToolResult::failed("error: `line` must be a line number");
                };
                let lines: Vec<&str> = text.lines().collect();
                let start = start.max(1);
                let mut out = format!("[{} - {} lines]\n", arg("path"), lines.len());
                for (i, l) in lines.iter().enumerate().skip(start - 1).take(WINDOW) {
                    let _ = writeln!(out, "{:>5} | {l}", i + 1);
                }
                ToolResult::ok(out)
            }
            "create_file" => {
                let path = match ctx.sandbox.resolve(arg("path")) {
                    Ok(p) => p,
                    Err(e) => return tool_error(e),
                };
                if path.exists() {
                    return ToolResult::failed(format!(
                        "error: {} already exists; use edit_file to change it",
                        arg("path")
                    ));
                }
                if let Some(parent) = path.parent() {
                    if let Err(e) = std::fs::create_dir_all(parent) {
                        return tool_error(e.into());
                    }
                }
                match std::fs::write(&path, arg("content")) {
                    Ok(()) => ToolResult::ok(format!("created {}", arg("path"))),
                    Err(e) => tool_error(e.into()),
                }
            }
            "edit_file" => {
                let req = match cmd.edit_request() {
                    Ok(r) => r,
                    Err(e) => return ToolResult::failed(format!("error: {e}")),
                };
                match toolkit::edit_file(&req, ctx.sandbox) {
                    Ok(o) if o.status == EditStatus::Applied => {
                        ToolResult::ok(format!("edited {} lines {}-{}", req.file, req.start_line, req.end_line))
                    }
                    Ok(o) => ToolResult::failed(
                        o.hint.map(|h| h.message(Some(&req))).unwrap_or_else(|| "error: edit rejected".into()),
                    ),
                    Err(e) => tool_error(e),
                }
            }
            other => ToolResult::failed(format!("error: `{other}` is not a file-edit command")),
        }
    }
}

struct CodeTools;

impl ToolHandler for CodeTools {
    fn handle(&self, cmd: &ToolCommand, ctx: &mut ToolContext<'_>) -> ToolResult {
        let arg = |n: &str| cmd.arg(n).unwrap_or_default();
        match cmd.name.as_str() {
            "run_command" => {
                let command = arg("command");
                if command.trim().is_empty() {
                    return ToolResult::failed("error: empty command");
                }
                if let Err(e) = ctx.sandbox.check_command(command) {
                    return tool_error(e);
                }
                match toolkit::run_with_optional_trace(command, ctx.sandbox, ctx.timeout, ctx.trace) {
                    Ok((text, status)) => ToolResult { output: text, ok: status == 0 },
                    Err(e) => tool_error(e),
                }
            }
            "replace_function" => {
                match toolkit::replace_function(arg("file"), arg("signature"), arg("new_code"), ctx.sandbox) {
                    Ok(o) if o.is_applied() => {
                        ToolResult::ok(format!("replaced `{}` in {}", arg("signature"), arg("file")))
                    }
                    Ok(o) => ToolResult::failed(
                        o.hint.map(|h| h.message(None)).unwrap_or_else(|| "error: replacement rejected".into()),
                    ),
                    Err(e) => tool_error(e),
                }
            }
            "trace_code_switch" => match arg("enabled").trim().to_ascii_lowercase().as_str() {
                "true" | "on" | "1" | "yes" => {
                    ctx.trace = true;
                    ToolResult::ok("call tracing enabled")
                }
                "false" | "off" | "0" | "no" => {
                    ctx.trace = false;
                    ToolResult::ok("call tracing disabled")
                }
                other => ToolResult::failed(format!("error: expected true or false, got {other:?}")),
            },
            other => ToolResult::failed(format!("error: `{other}` is not a code command")),
        }
    }
}

struct BrowserStub;

impl ToolHandler for BrowserStub {
    fn handle(&self, cmd: &ToolCommand, _ctx: &mut ToolContext<'_>) -> ToolResult {
        ToolResult::failed(format!("error: `{}` rejected: web access is not available here", cmd.name))
    }
}
