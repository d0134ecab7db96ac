//! Event-level enumeration of a run, used as the ground truth for the
//! closed-form formulas.

use serde::{Deserialize, Serialize};

use super::{PerTerm, Term, TokenAverages};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    /// Every event is a call that sees the input plus every prior event.
    Flat,
    /// Only analysis, task and summary calls happen on the priced model and
    /// each sees the input plus the retained analysis/task/summary records.
    Retrieval,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Simulation {
    pub mode: SimMode,
    pub calls: u64,
    /// How many times a record of each category was sent as context.
    pub input_counts: PerTerm<u64>,
    /// How many records of each category were generated as output.
    pub output_counts: PerTerm<u64>,
    pub input_terms: PerTerm<f64>,
    pub input: f64,
    pub output: f64,
}

fn turn_events(n: u32, m: u32, mode: SimMode) -> Vec<Term> {
    let mut events = vec![Term::Analysis; n as usize];
    events.push(Term::Task);
    if mode == SimMode::Flat {
        for _ in 0..m {
            events.push(Term::Action);
            events.push(Term::Obs);
        }
        events.push(Term::Eval);
    }
    events.push(Term::Sumy);
    events
}

pub fn simulate_tokens(n: u32, m: u32, k: u32, avg: &TokenAverages, mode: SimMode, obs_as_output: bool) -> Simulation {
    // records currently in the context window, by category
    let mut context = PerTerm::<u64>::splat(0);
    context[Term::Input] = 1;
    let mut input_counts = PerTerm::<u64>::splat(0);
    let mut output_counts = PerTerm::<u64>::splat(0);
    let mut calls = 0;

    let events = turn_events(n, m, mode);
    for _turn in 0..k {
        for &event in &events {
            calls += 1;
            for t in Term::ALL {
                input_counts[t] += context[t];
            }
            if event != Term::Obs || obs_as_output {
                output_counts[event] += 1;
            }
            context[event] += 1;
        }
    }

    let mut input_terms = PerTerm::splat(0.0);
    let mut output_coeffs = PerTerm::splat(0.0);
    for t in Term::ALL {
        input_terms[t] = input_counts[t] as f64 * avg[t];
        output_coeffs[t] = output_counts[t] as f64;
    }
    let input_coeffs = PerTerm(input_counts.0.map(|c| c as f64));
    Simulation {
        mode,
        calls,
        input_counts,
        output_counts,
        input_terms,
        input: avg.weigh(&input_coeffs),
        output: avg.weigh(&output_coeffs),
    }
}
