//! Function-call tracing for Python scripts.
//!
//! The target script is launched through a small driver that installs a
//! profile hook, records every call into a function defined under the
//! sandbox root and dumps the list when the script ends, whether it returns,
//! exits or raises.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Observation, Sandbox, ToolError};

const DRIVER: &str = r#"import json, os, runpy, sys, traceback

out_path, script = sys.argv[1], sys.argv[2]
root = os.path.realpath(os.getcwd())
driver_dir = os.path.dirname(os.path.realpath(__file__))
library_roots = {os.path.realpath(p) for p in (sys.prefix, sys.base_prefix, sys.exec_prefix)}
calls = []


def user_file(filename):
    if filename.startswith("<"):
        return None
    path = os.path.realpath(filename)
    if path.startswith(driver_dir + os.sep):
        return None
    if any(path.startswith(lib + os.sep) for lib in library_roots if lib != root):
        return None
    if not path.startswith(root + os.sep):
        return None
    return os.path.relpath(path, root)


def hook(frame, event, arg):
    if event != "call":
        return
    code = frame.f_code
    if code.co_name.startswith("<"):
        return
    rel = user_file(code.co_filename)
    if rel is not None:
        calls.append({"function": code.co_name, "file": rel, "line": code.co_firstlineno})


sys.argv = sys.argv[2:]
sys.path[0] = os.path.dirname(os.path.realpath(script))
status = 0
sys.setprofile(hook)
try:
    runpy.run_path(script, run_name="__main__")
except SystemExit as e:
    if e.code is None:
        status = 0
    elif isinstance(e.code, int):
        status = e.code
    else:
        print(e.code, file=sys.stderr)
        status = 1
except BaseException:
    sys.setprofile(None)
    traceback.print_exc()
    status = 1
finally:
    sys.setprofile(None)
    with open(out_path, "w") as f:
        json.dump(calls, f)
sys.stdout.flush()
sys.stderr.flush()
os._exit(status)
"#;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceCall {
    pub function: String,
    /// Relative to the sandbox root.
    pub file: String,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceReport {
    /// In call order.
    pub calls: Vec<TraceCall>,
    pub exit_status: i32,
    pub output: String,
}

impl TraceReport {
    pub fn render(&self) -> String {
        let mut s = format!("exit status: {}\n{}", self.exit_status, self.output);
        if !s.ends_with('\n') {
            s.push('\n');
        }
        s.push_str("call trace:\n");
        if self.calls.is_empty() {
            s.push_str("  (no user functions called)\n");
        }
        for c in &self.calls {
            s.push_str(&format!("  {} ({}:{})\n", c.function, c.file, c.line));
        }
        s
    }
}

fn is_python(program: &str) -> bool {
    let name = program.rsplit('/').next().unwrap_or(program);
    name == "python" || name.strip_prefix("python").is_some_and(|v| v.chars().all(|c| c.is_ascii_digit() || c == '.'))
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

/// Splits `python[3] script.py args...` into the script and its arguments.
fn python_invocation(cmd: &str) -> Option<(String, Vec<String>)> {
    let mut tokens = cmd.split_whitespace();
    let program = tokens.next()?;
    if !is_python(program) {
        return None;
    }
    let script = tokens.next()?;
    if !script.ends_with(".py") {
        return None;
    }
    Some((script.to_string(), tokens.map(str::to_string).collect()))
}

pub fn run_traced(cmd: &str, sandbox: &Sandbox, timeout: Duration) -> Result<TraceReport, ToolError> {
    let (script, args) = python_invocation(cmd).ok_or_else(|| ToolError::DriverUnavailable(cmd.to_string()))?;
    sandbox.resolve(&script)?;
    let scratch = tempfile::Builder::new().prefix(".tandem-trace-").tempdir_in(sandbox.root())?;
    let driver = scratch.path().join("driver.py");
    let trace_out = scratch.path().join("calls.json");
    std::fs::write(&driver, DRIVER)?;

    let mut line = format!(
        "python3 {} {} {}",
        shell_quote(&driver.to_string_lossy()),
        shell_quote(&trace_out.to_string_lossy()),
        shell_quote(&script)
    );
    for a in &args {
        line.push(' ');
        line.push_str(a);
    }
    let obs = sandbox.run_command(&line, timeout)?;
    let calls =
        std::fs::read_to_string(&trace_out).ok().and_then(|s| serde_json::from_str(&s).ok()).unwrap_or_default();
    Ok(TraceReport { calls, exit_status: obs.exit_status, output: obs.output })
}

/// Runs `cmd`, through the tracer when `trace` is on and a driver exists.
/// Returns the observation text.
pub fn run_with_optional_trace(
    cmd: &str,
    sandbox: &Sandbox,
    timeout: Duration,
    trace: bool,
) -> Result<(String, i32), ToolError> {
    if trace {
        match run_traced(cmd, sandbox, timeout) {
            Ok(report) => return Ok((report.render(), report.exit_status)),
            Err(ToolError::DriverUnavailable(_)) => {
                let obs: Observation = sandbox.run_command(cmd, timeout)?;
                let text = format!("warning: tracing is not available for this command\n{}", obs.render());
                return Ok((text, obs.exit_status));
            }
            Err(e) => return Err(e),
        }
    }
    let obs = sandbox.run_command(cmd, timeout)?;
    Ok((obs.render(), obs.exit_status))
}
