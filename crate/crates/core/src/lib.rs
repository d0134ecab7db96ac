//! Turn-based brain/hand agent engine.
//!
//! A brain-level model reasons, formulates tasks, evaluates and summarizes;
//! hand-level models execute tasks with a narrow tool catalog inside a
//! sandboxed working directory. History is stored as typed records and
//! retrieved per phase so expensive brain calls never carry raw
//! observations.

pub mod accounting;
pub mod agents;
pub mod memory;
pub mod orchestrator;
pub mod toolkit;
