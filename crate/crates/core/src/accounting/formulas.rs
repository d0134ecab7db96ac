//! The published closed-form token formulas, evaluated term for term.
//!
//! Every `Σ` is rewritten as a polynomial in its bounds so that the
//! fractional averages `n = 2.53`, `m = 3.78`, `k = 5.64` can be plugged in.
//! The expressions are kept as printed: the `(3 - i)` factor in the
//! action/observation terms, the `(3 + 2m) i` coefficient in the analysis
//! term and the `j = 0..=m` bounds are reproduced even though the event model
//! in [`super::simulate`] disagrees with them.

use serde::{Deserialize, Serialize};

use super::{AccountingError, PerTerm, Term, TokenAverages};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenModelParams {
    /// Analyses per turn.
    pub n: f64,
    /// Action/observation pairs per turn.
    pub m: f64,
    /// Turns.
    pub k: f64,
    pub avg: TokenAverages,
}

impl TokenModelParams {
    pub fn paper_defaults() -> Self {
        TokenModelParams { n: 2.53, m: 3.78, k: 5.64, avg: TokenAverages::paper_defaults() }
    }

    pub fn validate(&self) -> Result<(), AccountingError> {
        let finite = |x: f64| x.is_finite();
        if !(finite(self.n) && self.n >= 0.0) {
            return Err(AccountingError::InvalidParams(format!("n must be >= 0, got {}", self.n)));
        }
        if !(finite(self.m) && self.m >= 0.0) {
            return Err(AccountingError::InvalidParams(format!("m must be >= 0, got {}", self.m)));
        }
        if !(finite(self.k) && self.k >= 1.0) {
            return Err(AccountingError::InvalidParams(format!("k must be >= 1, got {}", self.k)));
        }
        if let Some((term, value)) = self.avg.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(AccountingError::InvalidParams(format!("average for `{term}` must be >= 0, got {value}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenTotals {
    pub input: f64,
    pub output: f64,
}

/// `Σ_{i=0}^{k-1} i`
fn sum_index(k: f64) -> f64 {
    k * (k - 1.0) / 2.0
}

/// `Σ_{i=0}^{k-1} (k - i)`, also `Σ_{j=1}^{n} j` with `n` in place of `k`.
fn sum_descending(k: f64) -> f64 {
    k * (k + 1.0) / 2.0
}

/// Per-term coefficients of the input total before retrieval.
pub fn before_input_terms(n: f64, m: f64, k: f64) -> PerTerm<f64> {
    let events = 3.0 + 2.0 * m + n;
    let mut c = PerTerm::splat(0.0);
    // k(3+2m+n)
    c[Term::Input] = k * events;
    // Σ_i (k-i-1)(3+2m+n)
    c[Term::Sumy] = events * sum_index(k);
    // Σ_i ((k-i)(3+2m+n) - n - 2m - 2)
    c[Term::Eval] = events * sum_descending(k) - k * (n + 2.0 * m + 2.0);
    // Σ_i ((k-i)(3+2m+n) - n - 1)
    c[Term::Task] = events * sum_descending(k) - k * (n + 1.0);
    // Σ_i Σ_{j=0}^{n-1} ((3+2m+n)k - (3+2m)i - j - 1)
    c[Term::Analysis] = n * k * (events * k) - (3.0 + 2.0 * m) * n * sum_index(k) - k * sum_descending(n);
    // Σ_i Σ_{j=0}^{m} ((3-i)(3+2m+n) - 2n - 2 - 2j)
    let pairs = m + 1.0;
    let action =
        pairs * (3.0 * events * k - events * sum_index(k) - (2.0 * n + 2.0) * k) - 2.0 * k * (m * (m + 1.0) / 2.0);
    c[Term::Action] = action;
    // same inner expression minus one, over the same (m+1)k terms
    c[Term::Obs] = action - k * pairs;
    c
}

/// Per-term coefficients of the output total before retrieval.
pub fn before_output_terms(n: f64, m: f64, k: f64) -> PerTerm<f64> {
    let mut c = PerTerm::splat(0.0);
    c[Term::Sumy] = k;
    c[Term::Eval] = k;
    c[Term::Task] = k;
    c[Term::Analysis] = n * k;
    c[Term::Action] = m * k;
    c[Term::Obs] = m * k;
    c
}

/// Per-term coefficients of the input total after retrieval.
pub fn after_input_terms(n: f64, k: f64) -> PerTerm<f64> {
    let calls = 2.0 + n;
    let mut c = PerTerm::splat(0.0);
    // k(2+n)
    c[Term::Input] = k * calls;
    // Σ_i ((k-i)(2+n) - n - 2)
    c[Term::Sumy] = calls * sum_descending(k) - k * (n + 2.0);
    // Σ_i ((k-i)(2+n) - n - 1)
    c[Term::Task] = calls * sum_descending(k) - k * (n + 1.0);
    // Σ_i Σ_{j=1}^{n} ((k-i)(2+n) - j)
    c[Term::Analysis] = n * calls * sum_descending(k) - k * sum_descending(n);
    c
}

/// Per-term coefficients of the output total after retrieval.
pub fn after_output_terms(n: f64, k: f64) -> PerTerm<f64> {
    let mut c = PerTerm::splat(0.0);
    c[Term::Sumy] = k;
    c[Term::Task] = k;
    c[Term::Analysis] = n * k;
    c
}

/// Input and output totals without memory retrieval. May be negative for
/// large `k`, where the `(3 - i)` factor dominates.
pub fn tokens_before_paper(p: &TokenModelParams) -> TokenTotals {
    TokenTotals {
        input: p.avg.weigh(&before_input_terms(p.n, p.m, p.k)),
        output: p.avg.weigh(&before_output_terms(p.n, p.m, p.k)),
    }
}

/// Input and output totals with memory retrieval.
pub fn tokens_after_paper(p: &TokenModelParams) -> TokenTotals {
    TokenTotals { input: p.avg.weigh(&after_input_terms(p.n, p.k)), output: p.avg.weigh(&after_output_terms(p.n, p.k)) }
}
