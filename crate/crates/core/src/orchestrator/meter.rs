//! Metered model calls: budget projection before, charging after.

use serde::Serialize;

use crate::accounting::{count_tokens, within_budget, AccountingError, Pricing, Usage, UsageLedger};
use crate::agents::backend::{prompt_tokens, Backend, BackendError, Message, SamplingParams};
use crate::memory::Producer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetScope {
    Run,
    Iteration,
}

#[derive(Debug, thiserror::Error)]
pub enum CallError {
    #[error("{0:?} budget exhausted")]
    Budget(BudgetScope),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Pricing(#[from] AccountingError),
}

/// Owns the ledger. A call is refused when the prompt alone would push
/// spending past a cap; the completion is charged afterwards, so a run
/// overshoots its cap by at most the one call that crossed it.
#[derive(Debug, Clone)]
pub struct Meter {
    pricing: Pricing,
    ledger: UsageLedger,
    max_cost: f64,
    per_iteration: Option<f64>,
    iteration_start: usize,
    exhausted: Option<BudgetScope>,
}

impl Meter {
    pub fn new(pricing: Pricing, max_cost: f64, per_iteration: Option<f64>) -> Self {
        Meter { pricing, ledger: UsageLedger::new(), max_cost, per_iteration, iteration_start: 0, exhausted: None }
    }

    pub fn ledger(&self) -> &UsageLedger {
        &self.ledger
    }

    pub fn into_ledger(self) -> UsageLedger {
        self.ledger
    }

    pub fn exhausted(&self) -> Option<BudgetScope> {
        self.exhausted
    }

    /// Starts a new per-iteration budget window.
    pub fn start_iteration(&mut self) {
        self.iteration_start = self.ledger.entries().len();
        if self.exhausted == Some(BudgetScope::Iteration) {
            self.exhausted = None;
        }
    }

    pub fn call(
        &mut self,
        backend: &dyn Backend,
        role: Producer,
        messages: &[Message],
        params: &SamplingParams,
    ) -> Result<String, CallError> {
        if let Some(scope) = self.exhausted {
            return Err(CallError::Budget(scope));
        }
        let proxy_prompt = prompt_tokens(messages);
        let projected = self.pricing.cost(backend.model(), proxy_prompt, 0)?;
        if !within_budget(self.ledger.total_cost(), self.max_cost, projected) {
            self.exhausted = Some(BudgetScope::Run);
            return Err(CallError::Budget(BudgetScope::Run));
        }
        if let Some(cap) = self.per_iteration {
            if !within_budget(self.ledger.cost_since(self.iteration_start), cap, projected) {
                self.exhausted = Some(BudgetScope::Iteration);
                return Err(CallError::Budget(BudgetScope::Iteration));
            }
        }
        let completion = backend.complete(messages, params)?;
        let proxy =
            Usage { prompt_tokens: proxy_prompt, completion_tokens: count_tokens(&completion.text), reported: false };
        self.ledger.charge(role, backend.model(), completion.usage, proxy, &self.pricing)?;
        Ok(completion.text)
    }
}
