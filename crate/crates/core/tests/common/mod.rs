#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use tandem_core::accounting::Pricing;
use tandem_core::agents::backend::{Message, Recording, Script, ScriptedBackend};
use tandem_core::agents::ToolRegistry;
use tandem_core::orchestrator::{run_loop, Backends, OrchestratorError, RunConfig, RunOutcome};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn copy_dir(src: &Path, dst: &Path) {
    fs::create_dir_all(dst).unwrap();
    for entry in fs::read_dir(src).unwrap() {
        let entry = entry.unwrap();
        let to = dst.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &to);
        } else {
            fs::copy(entry.path(), &to).unwrap();
        }
    }
}

pub fn free_pricing() -> Pricing {
    Pricing::default().with_model("mock-brain", 0.0, 0.0).with_model("mock-hand", 0.0, 0.0)
}

pub fn add_request() -> String {
    fs::read_to_string(fixtures().join("add/request.txt")).unwrap()
}

pub fn add_script() -> Script {
    Script::load(&fixtures().join("add/script.jsonl")).unwrap()
}

/// A fresh copy of the add fixture's workspace.
pub fn add_workspace() -> tempfile::TempDir {
    let d = tempfile::tempdir().unwrap();
    copy_dir(&fixtures().join("add/workspace"), d.path());
    d
}

pub struct Recorded {
    pub outcome: Result<RunOutcome, OrchestratorError>,
    pub brain_prompts: Vec<Vec<Message>>,
    pub hand_prompts: Vec<Vec<Message>>,
    pub brain_left: usize,
    pub hand_left: usize,
}

pub fn run_script(request: &str, script: Script, workdir: &Path, config: RunConfig, pricing: Pricing) -> Recorded {
    let (brain, hand) = script.into_backends();
    let brain = Recording::new(brain);
    let hand = Recording::new(hand);
    let registry = ToolRegistry::standard();
    let outcome = run_loop(request, config, Backends { brain: &brain, hand: &hand }, &registry, pricing, workdir);
    Recorded {
        outcome,
        brain_prompts: brain.prompts(),
        hand_prompts: hand.prompts(),
        brain_left: ScriptedBackend::remaining(brain.inner()),
        hand_left: ScriptedBackend::remaining(hand.inner()),
    }
}

pub fn joined(prompt: &[Message]) -> String {
    prompt.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n")
}

pub fn git(dir: &Path, args: &[&str]) -> String {
    let out = Command::new("git").current_dir(dir).args(args).output().unwrap();
    assert!(out.status.success(), "git {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Checks out `workdir`'s base revision into a new directory.
pub fn fresh_checkout(workdir: &Path, base: &str) -> tempfile::TempDir {
    let fresh = tempfile::tempdir().unwrap();
    git(fresh.path(), &["init", "-q"]);
    git(fresh.path(), &["fetch", "-q", workdir.to_str().unwrap(), "refs/tandem/base"]);
    git(fresh.path(), &["checkout", "-q", base]);
    fresh
}
