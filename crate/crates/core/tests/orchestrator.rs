mod common;

use std::fs;
use std::process::Command;

use common::*;
use tandem_core::accounting::Pricing;
use tandem_core::agents::backend::{Script, ScriptEntry};
use tandem_core::agents::DispatchMode;
use tandem_core::memory::{MemoryKind, Producer};
use tandem_core::orchestrator::{lint_transcript, OrchestratorError, RunConfig, RunStatus};
use tandem_core::toolkit::apply_patch;

const REQUIREMENT: &str = "the command `python3 test_add.py` must exit with status 0";

#[test]
fn add_fixture_is_solved_in_two_turns() {
    let w = add_workspace();
    let run = run_script(&add_request(), add_script(), w.path(), RunConfig::default(), free_pricing());
    let outcome = run.outcome.unwrap();
    assert_eq!(outcome.status, RunStatus::Solved);
    assert_eq!(outcome.turns_used, 2);
    assert_eq!((run.brain_left, run.hand_left), (0, 0), "script not fully consumed");
    assert!(outcome.notes.is_empty(), "{:?}", outcome.notes);

    let stats = lint_transcript(&outcome.transcript).unwrap();
    assert_eq!(stats.turns.len(), 2);
    assert_eq!(outcome.tasks.len(), 2);
    assert_eq!(outcome.tasks[0].domain, "file-edit");
    assert_eq!(outcome.tasks[1].domain, "code");
    assert!(outcome.tasks.iter().all(|t| t.passed && t.attempts == 1 && t.misrouted == 0));

    // only add.py changed
    let patch = &outcome.final_patch;
    assert!(patch.diff.contains("+++ b/add.py"));
    assert!(patch.diff.contains("+def add(a, b):\n+    return a + b\n"));
    assert_eq!(patch.diff.matches("diff --git").count(), 1, "{}", patch.diff);

    let fresh = fresh_checkout(w.path(), &patch.base_revision);
    apply_patch(patch, fresh.path()).unwrap();
    let out = Command::new("python3").arg("test_add.py").current_dir(fresh.path()).output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout), "all tests passed\n");
}

#[test]
fn summaries_embed_turn_patches() {
    let w = add_workspace();
    let outcome =
        run_script(&add_request(), add_script(), w.path(), RunConfig::default(), free_pricing()).outcome.unwrap();
    let summaries: Vec<_> = outcome.transcript.iter().filter(|r| r.kind == MemoryKind::Summary).collect();
    assert_eq!(summaries.len(), 2);
    assert!(summaries[0]
        .content
        .starts_with("created add.py with add(a, b).\n\nPATCH:\ndiff --git a/add.py b/add.py\n"));
    assert!(summaries[0].content.contains("+++ b/add.py"));
    // nothing changed in turn 2
    assert_eq!(summaries[1].content, "test_add.py passes.\n\nPATCH:\n");

    // each summary is smaller than the actions and observations it covers
    for s in &summaries {
        let raw: u64 = outcome
            .transcript
            .iter()
            .filter(|r| r.turn == s.turn && matches!(r.kind, MemoryKind::Action | MemoryKind::Observation))
            .map(|r| r.token_count)
            .sum();
        assert!(s.token_count < raw, "turn {}: summary {} vs raw {raw}", s.turn, s.token_count);
    }
}

#[test]
fn identical_runs_give_identical_transcripts() {
    let a = add_workspace();
    let b = add_workspace();
    let ta = run_script(&add_request(), add_script(), a.path(), RunConfig::default(), free_pricing()).outcome.unwrap();
    let tb = run_script(&add_request(), add_script(), b.path(), RunConfig::default(), free_pricing()).outcome.unwrap();
    assert_eq!(ta.transcript_jsonl(), tb.transcript_jsonl());
    assert_eq!(ta.final_patch.diff, tb.final_patch.diff);
}

#[test]
fn brain_prompts_carry_requirement_and_no_raw_observations() {
    let w = add_workspace();
    let run = run_script(&add_request(), add_script(), w.path(), RunConfig::default(), free_pricing());
    run.outcome.unwrap();
    assert_eq!(run.brain_prompts.len(), 10);
    for (i, p) in run.brain_prompts.iter().enumerate().skip(1) {
        let text = joined(p);
        assert!(text.contains(REQUIREMENT), "brain prompt {i} lacks the requirement");
        // the test file body only ever shows up as an observation
        let is_evaluation = text.contains("# Task under evaluation");
        assert_eq!(text.contains("check(2.5, 0.5, 3.0)"), is_evaluation, "brain prompt {i}");
    }
    // the hand in turn 2 never sees turn 1's observations
    let last_hand = joined(run.hand_prompts.last().unwrap());
    assert!(!last_hand.contains("check(2.5, 0.5, 3.0)"));
    assert!(last_hand.contains("all tests passed"));
}

#[test]
fn without_retrieval_everything_is_resent() {
    let w = add_workspace();
    let config = RunConfig { memory_retrieval: false, ..RunConfig::default() };
    let run = run_script(&add_request(), add_script(), w.path(), config, free_pricing());
    assert_eq!(run.outcome.unwrap().status, RunStatus::Solved);
    let stop_check = joined(&run.brain_prompts[5]);
    assert!(stop_check.contains("check(2.5, 0.5, 3.0)"));
}

fn workspace() -> tempfile::TempDir {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("README"), "fixture\n").unwrap();
    d
}

/// One turn whose task passes by literal match, ending with `stop`.
fn passing_turn(stop: &str) -> Vec<ScriptEntry> {
    vec![
        ScriptEntry::brain("ANALYSIS: just check\nNEXT: task"),
        ScriptEntry::brain("TASK: say ok\nSTEPS:\n1. run echo\nEXPECTED: ok-marker"),
        ScriptEntry::hand("run_command(\"echo ok-marker\")"),
        ScriptEntry::hand("DONE: printed it"),
        ScriptEntry::brain("SUMMARY: printed the marker."),
        ScriptEntry::brain(stop),
    ]
}

fn with_requirement(turns: Vec<ScriptEntry>) -> Script {
    let mut entries = vec![ScriptEntry::brain("REQUIREMENT: print ok-marker")];
    entries.extend(turns);
    Script::from_entries(entries)
}

#[test]
fn iteration_cap() {
    let w = workspace();
    let config = RunConfig { max_iterations: 1, ..RunConfig::default() };
    let run = run_script("print it", with_requirement(passing_turn("NOT YET")), w.path(), config, free_pricing());
    let outcome = run.outcome.unwrap();
    assert_eq!(outcome.status, RunStatus::IterationCap);
    assert_eq!(outcome.status.exit_code(), 2);
    assert_eq!(outcome.turns_used, 1);
    assert!(outcome.final_patch.is_empty());
    lint_transcript(&outcome.transcript).unwrap();
}

#[test]
fn budget_exhausted_in_first_turn() {
    // measure the requirement call, then allow just that much
    let w = workspace();
    let dry = run_script(
        "print it",
        with_requirement(passing_turn("SATISFIED")),
        w.path(),
        RunConfig::default(),
        free_pricing(),
    );
    let first = dry.outcome.unwrap().ledger.entries()[0].clone();

    let w = workspace();
    // one dollar per token
    let pricing = Pricing::default().with_model("mock-brain", 1e6, 1e6).with_model("mock-hand", 1e6, 1e6);
    let max_cost = (first.prompt_tokens + first.completion_tokens) as f64 + 1.0;
    let config = RunConfig { max_cost, ..RunConfig::default() };
    let outcome =
        run_script("print it", with_requirement(passing_turn("SATISFIED")), w.path(), config, pricing).outcome.unwrap();
    assert_eq!(outcome.status, RunStatus::BudgetExhausted);
    assert_eq!(outcome.status.exit_code(), 3);
    assert_eq!(outcome.turns_used, 1);
    assert!(outcome.cost <= max_cost);
    let costs: Vec<f64> = outcome.ledger.entries().iter().map(|e| e.cumulative_cost).collect();
    assert!(costs.windows(2).all(|w| w[0] <= w[1]));
    // the interrupted turn still closes with a summary written by the loop
    lint_transcript(&outcome.transcript).unwrap();
    let summary = outcome.transcript.last().unwrap();
    assert_eq!(summary.kind, MemoryKind::Summary);
    assert_eq!(summary.producer, Producer::Environment);
    assert!(summary.content.contains("budget exhausted"));
}

#[test]
fn budget_overshoot_is_at_most_one_call() {
    for max_cost in [50.0, 200.0, 400.0, 800.0] {
        let w = workspace();
        let pricing = Pricing::default().with_model("mock-brain", 1e6, 1e6).with_model("mock-hand", 1e6, 1e6);
        let mut turns = Vec::new();
        for _ in 0..4 {
            turns.extend(passing_turn("NOT YET"));
        }
        let config = RunConfig { max_cost, max_iterations: 4, ..RunConfig::default() };
        let outcome = run_script("print it", with_requirement(turns), w.path(), config, pricing).outcome.unwrap();
        let entries = outcome.ledger.entries();
        let last = entries.last().map_or(0.0, |e| e.cost);
        assert!(outcome.cost <= max_cost + last, "{max_cost}: {}", outcome.cost);
        let sum: f64 = entries.iter().map(|e| e.cost).sum();
        assert!((sum - outcome.cost).abs() < 1e-9);
        lint_transcript(&outcome.transcript).unwrap();
    }
}

#[test]
fn failed_evaluations_are_retried_up_to_the_limit() {
    let w = workspace();
    let mut entries = vec![
        ScriptEntry::brain("REQUIREMENT: x"),
        ScriptEntry::brain("NEXT: task"),
        ScriptEntry::brain("TASK: t\nSTEPS:\n1. run it\nEXPECTED: never printed"),
    ];
    for i in 0..4 {
        let hand = ScriptEntry::hand("DONE: tried");
        // each retry is shown the previous critique
        entries.push(if i > 0 { hand.expecting(format!("wrong, attempt {}", i - 1)) } else { hand });
        entries.push(ScriptEntry::brain(format!("EVALUATION: wrong, attempt {i}\nVERDICT: fail")));
    }
    entries.push(ScriptEntry::brain("SUMMARY: gave up."));
    entries.push(ScriptEntry::brain("NOT YET"));
    let config = RunConfig { max_iterations: 1, ..RunConfig::default() };
    let run = run_script("x", Script::from_entries(entries), w.path(), config, free_pricing());
    let outcome = run.outcome.unwrap();
    assert_eq!((run.brain_left, run.hand_left), (0, 0));
    assert_eq!(outcome.tasks[0].attempts, 4);
    assert!(!outcome.tasks[0].passed);
    let stats = lint_transcript(&outcome.transcript).unwrap();
    assert_eq!(stats.turns[0].evaluations, 4);
}

#[test]
fn malformed_task_is_reprompted_once() {
    let w = workspace();
    let entries = vec![
        ScriptEntry::brain("REQUIREMENT: x"),
        ScriptEntry::brain("NEXT: task"),
        ScriptEntry::brain("TASK: t\nSTEPS:\n1. run it"),
        ScriptEntry::brain("TASK: t\nSTEPS:\n1. run it\nEXPECTED: ok").expecting("could not be used"),
        ScriptEntry::hand("DONE: ok"),
        ScriptEntry::brain("SUMMARY: done"),
        ScriptEntry::brain("SATISFIED"),
    ];
    let run = run_script("x", Script::from_entries(entries), w.path(), RunConfig::default(), free_pricing());
    assert_eq!(run.outcome.unwrap().status, RunStatus::Solved);

    let w = workspace();
    let entries = vec![
        ScriptEntry::brain("REQUIREMENT: x"),
        ScriptEntry::brain("NEXT: task"),
        ScriptEntry::brain("TASK: t\nSTEPS:\n1. run it"),
        ScriptEntry::brain("still no format"),
        ScriptEntry::brain("SUMMARY: could not form a task"),
        ScriptEntry::brain("NOT YET"),
    ];
    let config = RunConfig { max_iterations: 1, ..RunConfig::default() };
    let run = run_script("x", Script::from_entries(entries), w.path(), config, free_pricing());
    let outcome = run.outcome.unwrap();
    assert_eq!(outcome.status, RunStatus::IterationCap);
    assert!(outcome.notes.iter().any(|n| n.contains("task formulation failed")), "{:?}", outcome.notes);
    let stats = lint_transcript(&outcome.transcript).unwrap();
    assert!(!stats.turns[0].has_task);
}

#[test]
fn voting_keeps_the_majority_analysis() {
    let w = workspace();
    let mut entries = vec![
        ScriptEntry::brain("REQUIREMENT: print ok-marker"),
        ScriptEntry::brain("ANALYSIS: Use echo.\nNEXT: task"),
        ScriptEntry::brain("ANALYSIS: use printf"),
        ScriptEntry::brain("ANALYSIS:  use   ECHO.\nNEXT: task"),
    ];
    entries.extend(passing_turn("SATISFIED").into_iter().skip(1));
    let config = RunConfig { voting_rounds: 3, ..RunConfig::default() };
    let run = run_script("x", Script::from_entries(entries), w.path(), config, free_pricing());
    let outcome = run.outcome.unwrap();
    assert_eq!(outcome.status, RunStatus::Solved);
    let analysis = outcome.transcript.iter().find(|r| r.kind == MemoryKind::Analysis).unwrap();
    assert_eq!(analysis.content, "Use echo.\n[votes 2/3]");
}

#[test]
fn analyses_stop_at_the_ceiling() {
    let w = workspace();
    let mut entries = vec![ScriptEntry::brain("REQUIREMENT: x")];
    for i in 0..3 {
        entries.push(ScriptEntry::brain(format!("ANALYSIS: thought {i}")));
    }
    entries.extend(passing_turn("SATISFIED").into_iter().skip(1));
    let config = RunConfig { max_analyses: 3, ..RunConfig::default() };
    let run = run_script("x", Script::from_entries(entries), w.path(), config, free_pricing());
    let outcome = run.outcome.unwrap();
    assert_eq!(outcome.status, RunStatus::Solved);
    assert_eq!(lint_transcript(&outcome.transcript).unwrap().turns[0].analyses, 3);
}

#[test]
fn tool_and_backend_failures_do_not_stop_the_loop() {
    let w = workspace();
    let entries = vec![
        ScriptEntry::brain("REQUIREMENT: x"),
        ScriptEntry::brain("NEXT: task"),
        ScriptEntry::brain("TASK: t\nSTEPS:\n1. run it\nEXPECTED: ok-marker"),
        ScriptEntry::hand("run_command(\"cat ../../etc/passwd\")"),
        ScriptEntry::failing(Producer::Hand, "connection reset"),
        ScriptEntry::brain("EVALUATION: nothing happened\nVERDICT: fail"),
        ScriptEntry::hand("run_command(\"echo ok-marker\")"),
        ScriptEntry::hand("DONE: ok"),
        ScriptEntry::brain("SUMMARY: printed after a retry"),
        ScriptEntry::brain("SATISFIED"),
    ];
    let run = run_script("x", Script::from_entries(entries), w.path(), RunConfig::default(), free_pricing());
    let outcome = run.outcome.unwrap();
    assert_eq!(outcome.status, RunStatus::Solved);
    assert_eq!(outcome.tasks[0].attempts, 2);
    let escape = outcome.transcript.iter().find(|r| r.kind == MemoryKind::Observation).unwrap();
    assert!(escape.content.contains("escapes the sandbox"), "{}", escape.content);
}

#[test]
fn flat_mode_counts_but_runs_foreign_commands() {
    let w = workspace();
    let entries = vec![
        ScriptEntry::brain("REQUIREMENT: x"),
        ScriptEntry::brain("NEXT: task"),
        ScriptEntry::brain("TASK: t\nSTEPS:\n1. run it\nEXPECTED: ok-marker\nDOMAIN: code"),
        ScriptEntry::hand("create_file(\"notes.txt\", \"hi\")"),
        ScriptEntry::hand("browse(\"https://example.com\")"),
        ScriptEntry::hand("run_command(\"echo ok-marker\")"),
        ScriptEntry::hand("DONE: ok"),
        ScriptEntry::brain("SUMMARY: done"),
        ScriptEntry::brain("SATISFIED"),
    ];
    let config = RunConfig { dispatch_mode: DispatchMode::Flat, ..RunConfig::default() };
    let run = run_script("x", Script::from_entries(entries.clone()), w.path(), config, free_pricing());
    let outcome = run.outcome.unwrap();
    assert_eq!(outcome.tasks[0].misrouted, 2);
    assert_eq!(outcome.tasks[0].executed_out_of_domain, 2);
    assert!(w.path().join("notes.txt").exists());

    let w = workspace();
    let run = run_script("x", Script::from_entries(entries), w.path(), RunConfig::default(), free_pricing());
    let outcome = run.outcome.unwrap();
    assert_eq!(outcome.tasks[0].misrouted, 2);
    assert_eq!(outcome.tasks[0].executed_out_of_domain, 0);
    assert!(!w.path().join("notes.txt").exists());
}

#[test]
fn rejects_empty_request_and_locked_workdir() {
    let w = workspace();
    let run = run_script("  ", with_requirement(vec![]), w.path(), RunConfig::default(), free_pricing());
    assert!(matches!(run.outcome, Err(OrchestratorError::EmptyRequest)));

    let w = workspace();
    tandem_core::toolkit::ensure_repository(w.path()).unwrap();
    fs::create_dir_all(w.path().join(".git/tandem")).unwrap();
    fs::write(w.path().join(".git/tandem/lock"), "").unwrap();
    let run =
        run_script("x", with_requirement(passing_turn("SATISFIED")), w.path(), RunConfig::default(), free_pricing());
    assert!(matches!(run.outcome, Err(OrchestratorError::Locked(_))));
}

#[test]
fn transcript_file_is_written() {
    let w = add_workspace();
    let out = tempfile::tempdir().unwrap();
    let path = out.path().join("t.jsonl");
    let config = RunConfig { transcript_path: Some(path.clone()), ..RunConfig::default() };
    let outcome = run_script(&add_request(), add_script(), w.path(), config, free_pricing()).outcome.unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text, outcome.transcript_jsonl());
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    let keys: Vec<&String> = first.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["content", "kind", "producer", "seq", "token_count", "turn"]);
    assert!(text.lines().next().unwrap().starts_with("{\"kind\":\"user_request\",\"content\":"));
}
