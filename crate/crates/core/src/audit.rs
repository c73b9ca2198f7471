//! Data-access tagging for no-lookahead audits.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Perception,
    Decision,
    Evaluation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Access {
    pub phase: Phase,
    /// Trading day being processed.
    pub day: usize,
    /// Bar index that was read.
    pub index: usize,
}

/// Append-only log of every tagged read made during a run.
#[derive(Debug, Default)]
pub struct AccessAudit {
    log: RefCell<Vec<Access>>,
}

impl AccessAudit {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, phase: Phase, day: usize, index: usize) {
        self.log.borrow_mut().push(Access { phase, day, index });
    }

    pub fn accesses(&self) -> Vec<Access> {
        self.log.borrow().clone()
    }

    pub fn len(&self) -> usize {
        self.log.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.log.borrow().is_empty()
    }

    /// Reads past the processed day outside the evaluation phase.
    pub fn violations(&self) -> Vec<Access> {
        self.log
            .borrow()
            .iter()
            .filter(|a| a.phase != Phase::Evaluation && a.index > a.day)
            .copied()
            .collect()
    }
}
