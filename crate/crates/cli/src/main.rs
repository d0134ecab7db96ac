mod config;

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde_json::json;
use tandem_core::accounting::{cost_report, Pricing, Term, TokenAverages, TokenModelParams};
use tandem_core::agents::backend::{Backend, HttpBackend, Script};
use tandem_core::agents::ToolRegistry;
use tandem_core::orchestrator::{run_loop, Backends, OrchestratorError};
use tandem_core::toolkit::{edit_file, EditRequest, EditStatus, Sandbox, ToolError};

use config::{BackendChoice, RunFlags, RunSettings, API_KEY_VAR};

const EXIT_INTERNAL: u8 = 1;
const EXIT_EDIT_MISMATCH: u8 = 4;
const EXIT_CONFIG: u8 = 64;
const EXIT_NO_INPUT: u8 = 66;

#[derive(Parser)]
#[command(name = "tandem", version, about = "Brain/hand agent loop with phase-scoped memory")]
struct Cli {
    /// Log progress to stderr (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the agent loop on a request inside a workdir.
    Run {
        /// The request text.
        #[arg(required_unless_present = "issue", conflicts_with = "issue")]
        request: Option<String>,
        /// Read the request from a file, e.g. an issue description.
        #[arg(long)]
        issue: Option<PathBuf>,
        #[command(flatten)]
        flags: Box<RunFlags>,
    },
    /// Replace a line range, guarded by anchor strings.
    Edit {
        file: PathBuf,
        start_line: usize,
        end_line: usize,
        start_anchor: String,
        end_anchor: String,
        /// File holding the new content, `-` for stdin.
        content_file: PathBuf,
    },
    /// Print the token cost model as JSON.
    AnalyzeCost {
        /// Use the published averages unchanged.
        #[arg(long, conflicts_with_all = ["n", "m", "k", "avg"])]
        paper_defaults: bool,
        /// Analyses per turn.
        #[arg(short)]
        n: Option<f64>,
        /// Action/observation pairs per turn.
        #[arg(short)]
        m: Option<f64>,
        /// Turns.
        #[arg(short)]
        k: Option<f64>,
        /// Average tokens per record, e.g. `obs=2000,task=700` or `all=1`.
        #[arg(long, value_delimiter = ',')]
        avg: Vec<String>,
        /// Count observations as input only.
        #[arg(long)]
        obs_input_only: bool,
    },
}

/// An error paired with the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait ExitWith<T> {
    fn exit_with(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitWith<T> for Result<T, E> {
    fn exit_with(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Cmd::Run { request, issue, flags } => cmd_run(request, issue, *flags),
        Cmd::Edit { file, start_line, end_line, start_anchor, end_anchor, content_file } => {
            cmd_edit(&file, start_line, end_line, start_anchor, end_anchor, &content_file)
        }
        Cmd::AnalyzeCost { paper_defaults: _, n, m, k, avg, obs_input_only } => {
            cmd_analyze_cost(n, m, k, &avg, obs_input_only)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn load_pricing(path: &Path) -> anyhow::Result<Pricing> {
    let text = fs::read_to_string(path).with_context(|| format!("reading pricing table {}", path.display()))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(anyhow::Error::from)
    } else {
        toml::from_str(&text).map_err(anyhow::Error::from)
    };
    parsed.with_context(|| format!("parsing pricing table {}", path.display()))
}

fn write_output(path: &Path, contents: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn cmd_run(request: Option<String>, issue: Option<PathBuf>, flags: RunFlags) -> Result<u8, Failure> {
    let request = match (request, issue) {
        (Some(r), _) => r,
        (None, Some(path)) => {
            fs::read_to_string(&path).with_context(|| format!("reading {}", path.display())).exit_with(EXIT_CONFIG)?
        }
        (None, None) => unreachable!("clap requires one of them"),
    };
    if request.trim().is_empty() {
        return Err(Failure { code: EXIT_CONFIG, error: anyhow!("the request is empty") });
    }
    let RunSettings { backend, pricing, workdir, config, patch_out, report_out } =
        flags.resolve().exit_with(EXIT_CONFIG)?;
    fs::create_dir_all(&workdir)
        .with_context(|| format!("creating workdir {}", workdir.display()))
        .exit_with(EXIT_CONFIG)?;

    let (brain, hand): (Box<dyn Backend>, Box<dyn Backend>) = match &backend {
        BackendChoice::Mock(script) => {
            let (b, h) = Script::load(script).exit_with(EXIT_CONFIG)?.into_backends();
            (Box::new(b), Box::new(h))
        }
        BackendChoice::Http { api_base, brain_model, hand_model } => {
            if pricing.is_none() {
                return Err(Failure {
                    code: EXIT_CONFIG,
                    error: anyhow!("a pricing table (--pricing) is required with a real backend"),
                });
            }
            let b = HttpBackend::from_env(api_base.clone(), brain_model.clone(), API_KEY_VAR).exit_with(EXIT_CONFIG)?;
            let h = HttpBackend::from_env(api_base.clone(), hand_model.clone(), API_KEY_VAR).exit_with(EXIT_CONFIG)?;
            (Box::new(b), Box::new(h))
        }
    };
    let pricing = match &pricing {
        Some(path) => load_pricing(path).exit_with(EXIT_CONFIG)?,
        // scripted runs cost nothing unless a table says otherwise
        None => Pricing::default().with_model(brain.model(), 0.0, 0.0).with_model(hand.model(), 0.0, 0.0),
    };
    for model in [brain.model(), hand.model()] {
        pricing.rate(model).exit_with(EXIT_CONFIG)?;
    }

    let registry = ToolRegistry::standard();
    let outcome =
        match run_loop(&request, config, Backends { brain: &*brain, hand: &*hand }, &registry, pricing, &workdir) {
            Ok(o) => o,
            Err(e @ OrchestratorError::InvalidConfig(_)) => return Err(Failure { code: EXIT_CONFIG, error: e.into() }),
            Err(e) => return Err(Failure { code: EXIT_INTERNAL, error: e.into() }),
        };
    write_output(&patch_out, &outcome.final_patch.diff).exit_with(EXIT_INTERNAL)?;
    let report = serde_json::to_string_pretty(&outcome).expect("outcome serializes");
    write_output(&report_out, &(report + "\n")).exit_with(EXIT_INTERNAL)?;

    let code = outcome.status.exit_code();
    let status = serde_json::to_value(outcome.status).expect("status serializes");
    let mut summary = format!("status: {} (exit {code})\n", status.as_str().unwrap_or_default());
    summary += &format!("turns: {}\n", outcome.turns_used);
    summary += &format!("cost: ${:.6} over {} calls\n", outcome.cost, outcome.ledger.entries().len());
    let files = outcome.final_patch.diff.matches("\ndiff --git ").count()
        + outcome.final_patch.diff.starts_with("diff --git ") as usize;
    summary += &format!("patch: {} ({files} files changed)\n", patch_out.display());
    summary += &format!("report: {}\n", report_out.display());
    for note in &outcome.notes {
        summary += &format!("note: {note}\n");
    }
    emit(&summary);
    Ok(code as u8)
}

fn cmd_edit(
    file: &Path,
    start_line: usize,
    end_line: usize,
    start_anchor: String,
    end_anchor: String,
    content_file: &Path,
) -> Result<u8, Failure> {
    if !file.is_file() {
        return Err(Failure { code: EXIT_NO_INPUT, error: anyhow!("file not found: {}", file.display()) });
    }
    let mut new_content = String::new();
    if content_file == Path::new("-") {
        std::io::stdin().read_to_string(&mut new_content).exit_with(EXIT_NO_INPUT)?;
    } else {
        new_content = fs::read_to_string(content_file)
            .with_context(|| format!("reading {}", content_file.display()))
            .exit_with(EXIT_NO_INPUT)?;
    }
    let dir = match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = file.file_name().expect("is a file").to_string_lossy().into_owned();
    let sandbox = Sandbox::new(dir).exit_with(EXIT_INTERNAL)?;
    let req = EditRequest {
        file: name,
        start_line,
        end_line,
        start_line_string: start_anchor,
        end_line_string: end_anchor,
        new_content,
    };
    let outcome = match edit_file(&req, &sandbox) {
        Ok(o) => o,
        Err(e @ ToolError::FileNotFound(_)) => return Err(Failure { code: EXIT_NO_INPUT, error: e.into() }),
        Err(e) => return Err(Failure { code: EXIT_INTERNAL, error: e.into() }),
    };
    let out = match (&outcome.status, &outcome.hint) {
        (EditStatus::Mismatch, Some(hint)) => json!({
            "status": "mismatch",
            "hint": hint,
            "message": hint.message(Some(&req)),
        }),
        _ => json!({ "status": "applied" }),
    };
    emit(&(serde_json::to_string_pretty(&out).expect("json") + "\n"));
    Ok(if outcome.is_applied() { 0 } else { EXIT_EDIT_MISMATCH })
}

fn parse_averages(specs: &[String], avg: &mut TokenAverages) -> anyhow::Result<()> {
    for spec in specs.iter().filter(|s| !s.trim().is_empty()) {
        let (name, value) = spec.split_once('=').ok_or_else(|| anyhow!("expected term=value, got `{spec}`"))?;
        let value: f64 = value.trim().parse().with_context(|| format!("bad number in `{spec}`"))?;
        match name.trim() {
            "all" => *avg = TokenAverages::splat(value),
            other => {
                let term = Term::from_name(other).ok_or_else(|| {
                    let names: Vec<&str> = Term::ALL.iter().map(|t| t.name()).collect();
                    anyhow!("unknown term `{other}` (expected all or one of {})", names.join(", "))
                })?;
                avg[term] = value;
            }
        }
    }
    Ok(())
}

fn cmd_analyze_cost(
    n: Option<f64>,
    m: Option<f64>,
    k: Option<f64>,
    avg: &[String],
    obs_input_only: bool,
) -> Result<u8, Failure> {
    let mut p = TokenModelParams::paper_defaults();
    p.n = n.unwrap_or(p.n);
    p.m = m.unwrap_or(p.m);
    p.k = k.unwrap_or(p.k);
    parse_averages(avg, &mut p.avg).exit_with(EXIT_CONFIG)?;
    let report = cost_report(&p, !obs_input_only).exit_with(EXIT_CONFIG)?;
    emit(&(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"));
    Ok(0)
}
