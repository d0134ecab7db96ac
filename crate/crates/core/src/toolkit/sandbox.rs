use std::io::Read;
use std::os::unix::process::CommandExt;
use std::path::{Component, Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::ToolError;

/// Exit status recorded for commands killed by the timeout.
pub const TIMEOUT_EXIT_STATUS: i32 = -1;

pub const DEFAULT_OUTPUT_LIMIT: usize = 64 * 1024;

const ENV_ALLOWLIST: [&str; 4] = ["PATH", "LANG", "LC_ALL", "TERM"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Observation {
    /// Interleaved stdout/stderr, possibly truncated.
    pub output: String,
    pub exit_status: i32,
    pub timed_out: bool,
    pub truncated: bool,
}

impl Observation {
    pub fn render(&self) -> String {
        if self.timed_out {
            format!("exit status: timeout\n{}", self.output)
        } else {
            format!("exit status: {}\n{}", self.exit_status, self.output)
        }
    }
}

/// A working directory that tools are confined to.
#[derive(Debug, Clone)]
pub struct Sandbox {
    root: PathBuf,
    output_limit: usize,
    extra_env: Vec<(String, String)>,
}

fn normalize(path: &Path) -> Option<PathBuf> {
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            Component::ParentDir => {
                if !out.pop() {
                    return None;
                }
            }
            Component::CurDir => {}
            other => out.push(other),
        }
    }
    Some(out)
}

impl Sandbox {
    pub fn new(root: impl AsRef<Path>) -> Result<Self, ToolError> {
        let root = root.as_ref();
        let root = root.canonicalize().map_err(|_| ToolError::FileNotFound(root.to_path_buf()))?;
        Ok(Sandbox { root, output_limit: DEFAULT_OUTPUT_LIMIT, extra_env: Vec::new() })
    }

    pub fn with_output_limit(mut self, bytes: usize) -> Self {
        self.output_limit = bytes;
        self
    }

    pub fn with_env(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.extra_env.push((key.into(), value.into()));
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Maps a tool-supplied path onto the sandbox, rejecting anything that
    /// would leave it.
    pub fn resolve(&self, path: &str) -> Result<PathBuf, ToolError> {
        let p = Path::new(path.trim());
        let joined = if p.is_absolute() { p.to_path_buf() } else { self.root.join(p) };
        match normalize(&joined) {
            Some(n) if n.starts_with(&self.root) => Ok(n),
            _ => Err(ToolError::PathEscape(path.to_string())),
        }
    }

    /// Relative path arguments must stay inside the sandbox.
    pub fn check_command(&self, cmd: &str) -> Result<(), ToolError> {
        let separators = |c: char| c.is_whitespace() || matches!(c, ';' | '&' | '|' | '<' | '>' | '(' | ')' | '`');
        for token in cmd.split(separators).filter(|t| t.contains("..")) {
            let token = token.trim_matches(|c| c == '"' || c == '\'');
            let value = token.rsplit('=').next().unwrap_or(token);
            if Path::new(value).is_absolute() {
                continue;
            }
            if normalize(&self.root.join(value)).is_none_or(|n| !n.starts_with(&self.root)) {
                return Err(ToolError::PathEscape(value.to_string()));
            }
        }
        Ok(())
    }

    /// Runs `cmd` through `sh -c` in the sandbox root with a scrubbed
    /// environment. The whole process group is killed when the command
    /// finishes or times out.
    pub fn run_command(&self, cmd: &str, timeout: Duration) -> Result<Observation, ToolError> {
        if cmd.trim().is_empty() {
            return Err(ToolError::InvalidRequest("empty command".into()));
        }
        self.check_command(cmd)?;

        let mut command = Command::new("sh");
        command
            .arg("-c")
            .arg(format!("exec 2>&1\n{cmd}"))
            .current_dir(&self.root)
            .env_clear()
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .process_group(0);
        for key in ENV_ALLOWLIST {
            if let Ok(v) = std::env::var(key) {
                command.env(key, v);
            }
        }
        command.env("HOME", &self.root).env("PYTHONDONTWRITEBYTECODE", "1").env("PYTHONUNBUFFERED", "1");
        for (k, v) in &self.extra_env {
            command.env(k, v);
        }

        let mut child = command.spawn().map_err(|e| ToolError::SpawnFailure(e.to_string()))?;
        let pgid = child.id() as libc::pid_t;
        let mut stdout = child.stdout.take().expect("stdout is piped");
        let limit = self.output_limit;
        let reader = thread::spawn(move || {
            let mut kept = Vec::new();
            let mut total = 0usize;
            let mut buf = [0u8; 8192];
            loop {
                match stdout.read(&mut buf) {
                    Ok(0) | Err(_) => break,
                    Ok(n) => {
                        total += n;
                        let room = limit.saturating_sub(kept.len());
                        kept.extend_from_slice(&buf[..n.min(room)]);
                    }
                }
            }
            (kept, total)
        });

        let deadline = Instant::now() + timeout;
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break Some(status);
            }
            if Instant::now() >= deadline {
                break None;
            }
            thread::sleep(Duration::from_millis(5));
        };
        // SAFETY: signalling our own child's process group.
        unsafe {
            libc::kill(-pgid, libc::SIGKILL);
        }
        let status = match status {
            Some(s) => Some(s),
            None => {
                child.wait()?;
                None
            }
        };
        let (kept, total) = reader.join().unwrap_or_default();

        let truncated = total > kept.len();
        let mut output = String::from_utf8_lossy(&kept).into_owned();
        if truncated {
            output.push_str(&format!("\n[output truncated: showing first {} of {} bytes]", kept.len(), total));
        }
        Ok(match status {
            Some(status) => Observation {
                output,
                exit_status: status.code().unwrap_or(128 + status_signal(&status)),
                timed_out: false,
                truncated,
            },
            None => {
                output.push_str(&format!("\n[command timed out after {}s]", timeout.as_secs_f64()));
                Observation { output, exit_status: TIMEOUT_EXIT_STATUS, timed_out: true, truncated }
            }
        })
    }
}

fn status_signal(status: &std::process::ExitStatus) -> i32 {
    use std::os::unix::process::ExitStatusExt;
    status.signal().unwrap_or(0)
}
