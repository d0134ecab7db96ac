use serde::Serialize;

use super::{
    before_input_terms, before_output_terms, simulate_tokens, tokens_after_paper, tokens_before_paper, AccountingError,
    SimMode, Term, TokenAverages, TokenModelParams, TokenTotals,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SavingsSource {
    Formulas,
    Simulator,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Savings {
    pub source: SavingsSource,
    pub input: f64,
    pub output: f64,
    /// Integer run shape the simulator was evaluated at, if rounding happened.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounded_to: Option<[u32; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceClaim {
    pub input_saving: f64,
    pub output_saving: f64,
}

/// Savings fractions reported alongside the published averages.
pub const PAPER_REFERENCE_CLAIM: ReferenceClaim = ReferenceClaim { input_saving: 0.7981, output_saving: 0.8306 };

fn fraction_saved(before: TokenTotals, after: TokenTotals) -> Result<(f64, f64), AccountingError> {
    if before.input == 0.0 {
        return Err(AccountingError::DivisionByZero("input"));
    }
    if before.output == 0.0 {
        return Err(AccountingError::DivisionByZero("output"));
    }
    Ok((1.0 - after.input / before.input, 1.0 - after.output / before.output))
}

fn rounded_shape(p: &TokenModelParams) -> [u32; 3] {
    [p.n.round() as u32, p.m.round() as u32, (p.k.round() as u32).max(1)]
}

fn simulated_totals(shape: [u32; 3], avg: &TokenAverages, mode: SimMode) -> TokenTotals {
    let s = simulate_tokens(shape[0], shape[1], shape[2], avg, mode, true);
    TokenTotals { input: s.input, output: s.output }
}

/// `1 - after / before` for input and output tokens.
pub fn savings(p: &TokenModelParams, via: SavingsSource) -> Result<Savings, AccountingError> {
    p.validate()?;
    match via {
        SavingsSource::Formulas => {
            let (input, output) = fraction_saved(tokens_before_paper(p), tokens_after_paper(p))?;
            Ok(Savings { source: via, input, output, rounded_to: None })
        }
        SavingsSource::Simulator => {
            let shape = rounded_shape(p);
            let before = simulated_totals(shape, &p.avg, SimMode::Flat);
            let after = simulated_totals(shape, &p.avg, SimMode::Retrieval);
            let (input, output) = fraction_saved(before, after)?;
            let exact = [p.n, p.m, p.k].iter().zip(shape).all(|(real, int)| *real == int as f64);
            Ok(Savings { source: via, input, output, rounded_to: (!exact).then_some(shape) })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermDelta {
    pub term: Term,
    pub formula: f64,
    pub simulator: f64,
    /// `formula - simulator`
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscrepancyEntry {
    pub n: u32,
    pub m: u32,
    pub k: u32,
    pub input: Vec<TermDelta>,
    pub output: Vec<TermDelta>,
}

impl DiscrepancyEntry {
    /// Terms whose formula and simulator values differ on either side.
    pub fn disagreeing_terms(&self) -> Vec<Term> {
        Term::ALL
            .into_iter()
            .filter(|t| self.input.iter().chain(&self.output).any(|d| d.term == *t && d.delta != 0.0))
            .collect()
    }
}

/// Per-term comparison of the before-retrieval formulas against the flat
/// event enumeration at one integer run shape.
pub fn discrepancy_point(n: u32, m: u32, k: u32, avg: &TokenAverages, obs_as_output: bool) -> DiscrepancyEntry {
    let sim = simulate_tokens(n, m, k, avg, SimMode::Flat, obs_as_output);
    let in_coeffs = before_input_terms(n as f64, m as f64, k as f64);
    let out_coeffs = before_output_terms(n as f64, m as f64, k as f64);
    let row = |formula: f64, simulator: f64, term| TermDelta { term, formula, simulator, delta: formula - simulator };
    let input =
        Term::ALL.into_iter().map(|t| row(in_coeffs[t] * avg[t], sim.input_counts[t] as f64 * avg[t], t)).collect();
    let output =
        Term::ALL.into_iter().map(|t| row(out_coeffs[t] * avg[t], sim.output_counts[t] as f64 * avg[t], t)).collect();
    DiscrepancyEntry { n, m, k, input, output }
}

/// [`discrepancy_point`] over every shape in the inclusive ranges, in
/// lexicographic `(n, m, k)` order.
pub fn discrepancy_grid(
    n: std::ops::RangeInclusive<u32>,
    m: std::ops::RangeInclusive<u32>,
    k: std::ops::RangeInclusive<u32>,
    avg: &TokenAverages,
) -> Vec<DiscrepancyEntry> {
    let mut out = Vec::new();
    for n in n {
        for m in m.clone() {
            for k in k.clone() {
                out.push(discrepancy_point(n, m, k, avg, true));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FormulaSection {
    pub before: TokenTotals,
    pub after: TokenTotals,
    pub savings: Option<Savings>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulatorSection {
    pub shape: [u32; 3],
    pub flat: TokenTotals,
    pub retrieval: TokenTotals,
    pub savings: Option<Savings>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceSection {
    pub claim: ReferenceClaim,
    /// Whether the formulas, evaluated at these parameters, give the claim
    /// to within half a basis point.
    pub matches_formulas: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub params: TokenModelParams,
    pub obs_as_output: bool,
    pub formulas: FormulaSection,
    pub simulator: SimulatorSection,
    pub reference: ReferenceSection,
    pub discrepancies: DiscrepancyEntry,
    pub disagreeing_terms: Vec<Term>,
}

/// Everything `analyze-cost` prints. Deterministic for fixed inputs.
pub fn cost_report(p: &TokenModelParams, obs_as_output: bool) -> Result<CostReport, AccountingError> {
    p.validate()?;
    let formula_savings = savings(p, SavingsSource::Formulas).ok();
    let shape = rounded_shape(p);
    let flat = simulate_tokens(shape[0], shape[1], shape[2], &p.avg, SimMode::Flat, obs_as_output);
    let retrieval = simulate_tokens(shape[0], shape[1], shape[2], &p.avg, SimMode::Retrieval, obs_as_output);
    let flat = TokenTotals { input: flat.input, output: flat.output };
    let retrieval = TokenTotals { input: retrieval.input, output: retrieval.output };
    let sim_savings = fraction_saved(flat, retrieval).ok().map(|(input, output)| Savings {
        source: SavingsSource::Simulator,
        input,
        output,
        rounded_to: Some(shape),
    });
    let matches_formulas = formula_savings.as_ref().is_some_and(|s| {
        (s.input - PAPER_REFERENCE_CLAIM.input_saving).abs() < 5e-5
            && (s.output - PAPER_REFERENCE_CLAIM.output_saving).abs() < 5e-5
    });
    let discrepancies = discrepancy_point(shape[0], shape[1], shape[2], &p.avg, obs_as_output);
    Ok(CostReport {
        params: *p,
        obs_as_output,
        formulas: FormulaSection {
            before: tokens_before_paper(p),
            after: tokens_after_paper(p),
            savings: formula_savings,
        },
        simulator: SimulatorSection { shape, flat, retrieval, savings: sim_savings },
        reference: ReferenceSection { claim: PAPER_REFERENCE_CLAIM, matches_formulas },
        disagreeing_terms: discrepancies.disagreeing_terms(),
        discrepancies,
    })
}
