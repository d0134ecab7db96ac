use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AccountingError;
use crate::memory::Producer;

/// Dollar rates per one million tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRate {
    pub input: f64,
    pub output: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pricing {
    #[serde(default)]
    pub models: BTreeMap<String, ModelRate>,
}

impl Pricing {
    pub fn with_model(mut self, model: impl Into<String>, input: f64, output: f64) -> Self {
        self.models.insert(model.into(), ModelRate { input, output });
        self
    }

    pub fn rate(&self, model: &str) -> Result<ModelRate, AccountingError> {
        self.models.get(model).copied().ok_or_else(|| AccountingError::UnknownModel(model.to_string()))
    }

    pub fn cost(&self, model: &str, prompt_tokens: u64, completion_tokens: u64) -> Result<f64, AccountingError> {
        let rate = self.rate(model)?;
        Ok((prompt_tokens as f64 * rate.input + completion_tokens as f64 * rate.output) / 1_000_000.0)
    }
}

/// Token usage for one backend call. `reported` is false when the numbers
/// come from the proxy tokenizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    #[serde(default)]
    pub reported: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerEntry {
    pub call_id: u64,
    pub role: Producer,
    pub model: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub proxy_prompt_tokens: u64,
    pub proxy_completion_tokens: u64,
    pub cost: f64,
    /// Running total after this entry.
    pub cumulative_cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ModelTotals {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct UsageLedger {
    entries: Vec<LedgerEntry>,
    totals: BTreeMap<String, ModelTotals>,
    total_cost: f64,
}

impl UsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one call. Backend-reported usage wins over the proxy counts,
    /// which are kept alongside.
    pub fn charge(
        &mut self,
        role: Producer,
        model: &str,
        usage: Usage,
        proxy: Usage,
        pricing: &Pricing,
    ) -> Result<&LedgerEntry, AccountingError> {
        let billed = if usage.reported { usage } else { proxy };
        let cost = pricing.cost(model, billed.prompt_tokens, billed.completion_tokens)?;
        self.total_cost += cost;
        let totals = self.totals.entry(model.to_string()).or_default();
        totals.calls += 1;
        totals.prompt_tokens += billed.prompt_tokens;
        totals.completion_tokens += billed.completion_tokens;
        totals.cost += cost;
        self.entries.push(LedgerEntry {
            call_id: self.entries.len() as u64,
            role,
            model: model.to_string(),
            prompt_tokens: billed.prompt_tokens,
            completion_tokens: billed.completion_tokens,
            proxy_prompt_tokens: proxy.prompt_tokens,
            proxy_completion_tokens: proxy.completion_tokens,
            cost,
            cumulative_cost: self.total_cost,
        });
        Ok(self.entries.last().expect("just pushed"))
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn totals(&self) -> &BTreeMap<String, ModelTotals> {
        &self.totals
    }

    pub fn total_cost(&self) -> f64 {
        self.total_cost
    }

    /// Cost of entries after the first `since` calls.
    pub fn cost_since(&self, since: usize) -> f64 {
        self.entries.iter().skip(since).map(|e| e.cost).sum()
    }
}

pub fn within_budget(spent: f64, max_cost: f64, projected: f64) -> bool {
    spent + projected <= max_cost
}
