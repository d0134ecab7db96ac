//! The `run` settings: a TOML file overlaid by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use clap::Args;
use serde::Deserialize;
use tandem_core::agents::DispatchMode;
use tandem_core::orchestrator::RunConfig;

pub const DEFAULT_API_BASE: &str = "https://api.openai.com/v1";
pub const API_KEY_VAR: &str = "TANDEM_API_KEY";

/// Keys accepted in the config file. Every key has a flag of the same name
/// (with dashes), and flags win.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub mock: Option<PathBuf>,
    pub brain_model: Option<String>,
    pub hand_model: Option<String>,
    pub api_base: Option<String>,
    pub pricing: Option<PathBuf>,
    pub workdir: Option<PathBuf>,
    pub max_iterations: Option<u32>,
    pub max_cost: Option<f64>,
    pub max_cost_per_iteration: Option<f64>,
    pub self_corrections: Option<u32>,
    /// Seconds.
    pub timeout: Option<u64>,
    pub dispatch_mode: Option<DispatchMode>,
    pub memory_retrieval: Option<bool>,
    pub voting: Option<u32>,
    pub max_analyses: Option<u32>,
    pub max_actions: Option<usize>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub transcript: Option<PathBuf>,
    pub patch_out: Option<PathBuf>,
    pub report_out: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: FileConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        // paths in the file are relative to the file
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.mock,
            &mut cfg.pricing,
            &mut cfg.workdir,
            &mut cfg.transcript,
            &mut cfg.patch_out,
            &mut cfg.report_out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct RunFlags {
    /// Replay a JSONL script instead of calling a model API.
    #[arg(long, value_name = "SCRIPT")]
    pub mock: Option<PathBuf>,
    #[arg(long)]
    pub brain_model: Option<String>,
    #[arg(long)]
    pub hand_model: Option<String>,
    /// OpenAI-compatible endpoint; the key is read from TANDEM_API_KEY.
    #[arg(long)]
    pub api_base: Option<String>,
    /// Pricing table (TOML or JSON), dollars per million tokens.
    #[arg(long)]
    pub pricing: Option<PathBuf>,
    #[arg(long)]
    pub workdir: Option<PathBuf>,
    #[arg(long)]
    pub max_iterations: Option<u32>,
    /// Dollars for the whole run.
    #[arg(long)]
    pub max_cost: Option<f64>,
    #[arg(long)]
    pub max_cost_per_iteration: Option<f64>,
    #[arg(long)]
    pub self_corrections: Option<u32>,
    /// Per-command sandbox timeout in seconds.
    #[arg(long)]
    pub timeout: Option<u64>,
    #[arg(long, value_parser = ["hierarchical", "flat"])]
    pub dispatch_mode: Option<String>,
    #[arg(long, value_enum)]
    pub memory_retrieval: Option<Switch>,
    /// Samples per reasoning step; the majority answer is kept.
    #[arg(long)]
    pub voting: Option<u32>,
    #[arg(long)]
    pub max_analyses: Option<u32>,
    #[arg(long)]
    pub max_actions: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    /// Defaults to .git/tandem/transcript.jsonl in the workdir.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Defaults to .git/tandem/final.patch in the workdir.
    #[arg(long)]
    pub patch_out: Option<PathBuf>,
    /// Outcome and cost ledger as JSON; defaults to .git/tandem/report.json.
    #[arg(long)]
    pub report_out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub enum BackendChoice {
    Mock(PathBuf),
    Http { api_base: String, brain_model: String, hand_model: String },
}

pub struct RunSettings {
    pub backend: BackendChoice,
    pub pricing: Option<PathBuf>,
    pub workdir: PathBuf,
    pub config: RunConfig,
    pub patch_out: PathBuf,
    pub report_out: PathBuf,
}

impl RunFlags {
    pub fn resolve(self) -> anyhow::Result<RunSettings> {
        let file = match &self.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let workdir = self.workdir.or(file.workdir).unwrap_or_else(|| PathBuf::from("."));
        let backend = match self.mock.or(file.mock) {
            Some(script) => BackendChoice::Mock(script),
            None => {
                let brain_model = self.brain_model.or(file.brain_model);
                let hand_model = self.hand_model.or(file.hand_model);
                let (Some(brain_model), Some(hand_model)) = (brain_model, hand_model) else {
                    bail!("--brain-model and --hand-model are required unless --mock is given");
                };
                let api_base = self.api_base.or(file.api_base).unwrap_or_else(|| DEFAULT_API_BASE.into());
                BackendChoice::Http { api_base, brain_model, hand_model }
            }
        };

        let mut config = RunConfig::default();
        let d = &mut config;
        if let Some(v) = self.max_iterations.or(file.max_iterations) {
            d.max_iterations = v;
        }
        if let Some(v) = self.max_cost.or(file.max_cost) {
            d.max_cost = v;
        }
        d.max_cost_per_iteration = self.max_cost_per_iteration.or(file.max_cost_per_iteration);
        if let Some(v) = self.self_corrections.or(file.self_corrections) {
            d.self_correction_limit = v;
        }
        if let Some(v) = self.timeout.or(file.timeout) {
            d.sandbox_timeout = Duration::from_secs(v);
        }
        let mode = match self.dispatch_mode {
            Some(s) => Some(s.parse::<DispatchMode>().map_err(anyhow::Error::msg)?),
            None => file.dispatch_mode,
        };
        if let Some(v) = mode {
            d.dispatch_mode = v;
        }
        if let Some(v) = self.memory_retrieval.map(|s| s == Switch::On).or(file.memory_retrieval) {
            d.memory_retrieval = v;
        }
        if let Some(v) = self.voting.or(file.voting) {
            d.voting_rounds = v;
        }
        if let Some(v) = self.max_analyses.or(file.max_analyses) {
            d.max_analyses = v;
        }
        if let Some(v) = self.max_actions.or(file.max_actions) {
            d.max_actions = v;
        }
        if let Some(v) = self.temperature.or(file.temperature) {
            d.sampling.temperature = v;
        }
        if let Some(v) = self.max_tokens.or(file.max_tokens) {
            d.sampling.max_tokens = v;
        }
        let state = workdir.join(".git").join("tandem");
        d.transcript_path = Some(self.transcript.or(file.transcript).unwrap_or_else(|| state.join("transcript.jsonl")));
        config.validate()?;

        Ok(RunSettings {
            backend,
            pricing: self.pricing.or(file.pricing),
            patch_out: self.patch_out.or(file.patch_out).unwrap_or_else(|| state.join("final.patch")),
            report_out: self.report_out.or(file.report_out).unwrap_or_else(|| state.join("report.json")),
            workdir,
            config,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    #[derive(Parser)]
    struct Wrapper {
        #[command(flatten)]
        flags: RunFlags,
    }

    fn flags(args: &[&str]) -> RunFlags {
        Wrapper::parse_from(std::iter::once("x").chain(args.iter().copied())).flags
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tandem.toml");
        fs::write(&path, "mock = \"s.jsonl\"\nmax_iterations = 7\nmax_cost = 2.5\ndispatch_mode = \"flat\"\nmemory_retrieval = false\n")
            .unwrap();
        let s = flags(&["--config", path.to_str().unwrap(), "--max-iterations", "3"]).resolve().unwrap();
        assert_eq!(s.config.max_iterations, 3);
        assert_eq!(s.config.max_cost, 2.5);
        assert_eq!(s.config.dispatch_mode, DispatchMode::Flat);
        assert!(!s.config.memory_retrieval);
        assert!(matches!(s.backend, BackendChoice::Mock(p) if p == dir.path().join("s.jsonl")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tandem.toml");
        fs::write(&path, "max_iteration = 7\n").unwrap();
        let err = flags(&["--config", path.to_str().unwrap()]).resolve().err().unwrap();
        assert!(format!("{err:#}").contains("unknown field"), "{err:#}");
    }

    #[test]
    fn real_backend_needs_models() {
        assert!(flags(&["--brain-model", "b"]).resolve().is_err());
        let s = flags(&["--brain-model", "b", "--hand-model", "h"]).resolve().unwrap();
        assert!(matches!(s.backend, BackendChoice::Http { ref api_base, .. } if api_base == DEFAULT_API_BASE));
    }

    #[test]
    fn invalid_values_fail_validation() {
        assert!(flags(&["--mock", "s", "--max-cost", "0"]).resolve().is_err());
        assert!(flags(&["--mock", "s", "--voting", "0"]).resolve().is_err());
    }
}
