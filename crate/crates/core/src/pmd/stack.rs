use std::collections::VecDeque;

use crate::error::{PmdError, Result};
use crate::pmd::config::{PmdConfig, Variant};
use crate::soft_dp::softmax_into;
use crate::tables::{Logits, PolicyTable, QTable, Table};

/// FIFO of the most recent Q-tables, newest first.
#[derive(Debug, Clone, PartialEq)]
pub struct QStack {
    entries: VecDeque<QTable>,
    capacity: usize,
}

impl QStack {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "stack capacity must be positive");
        Self {
            entries: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    /// Pushes `q` as the newest entry and returns the evicted oldest entry
    /// when the stack was full.
    pub fn push(&mut self, q: QTable) -> Option<QTable> {
        let evicted = if self.entries.len() == self.capacity {
            self.entries.pop_back()
        } else {
            None
        };
        self.entries.push_front(q);
        evicted
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn newest(&self) -> Option<&QTable> {
        self.entries.front()
    }

    pub fn oldest(&self) -> Option<&QTable> {
        self.entries.back()
    }

    /// Entries from newest to oldest.
    pub fn iter(&self) -> impl Iterator<Item = &QTable> {
        self.entries.iter()
    }
}

/// Logits as a geometric sum over the stack, newest first:
/// `alpha sum_i beta^i Q_i` for exact/vanilla, and the same sum scaled by
/// `1 / (1 - beta^M)` for the weight-corrected rule.
pub fn logits_from_stack(stack: &QStack, cfg: &PmdConfig) -> Result<Logits> {
    let newest = stack.newest().ok_or(PmdError::EmptyStack)?;
    let scale = match cfg.variant() {
        Variant::Exact | Variant::Vanilla => cfg.alpha(),
        Variant::WeightCorrected => cfg.alpha() / (1.0 - cfg.beta_pow_memory()),
    };
    let mut out = Table::zeros(newest.n_states(), newest.n_actions());
    let mut weight = scale;
    for q in stack.iter() {
        out.add_scaled(weight, q);
        weight *= cfg.beta();
    }
    Ok(Logits(out))
}

/// Per-state softmax of the logits.
pub fn softmax_policy(logits: &Logits) -> Result<PolicyTable> {
    if !logits.is_finite() {
        return Err(PmdError::NonFiniteLogits);
    }
    let mut out = Table::zeros(logits.n_states(), logits.n_actions());
    for s in 0..logits.n_states() {
        softmax_into(logits.row(s), out.row_mut(s));
    }
    Ok(PolicyTable(out))
}
