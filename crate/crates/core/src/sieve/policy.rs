// SPDX-License-Identifier: Apache-2.0

//! Filtering policies selectable by name.

use crate::error::{ScenarioError, SieveError};
use crate::oracle::DpowVerifier;
use std::collections::BTreeMap;

use crate::types::{MessageId, MessageStore, Rational, SieveMessage, Step, WeightedMessageSet};

use super::{bootstrap_sieve, dpow_valid, online_sieve};

pub struct FilterInput<'a> {
    pub step: Step,
    pub received: &'a MessageStore,
    /// The node's filtered set of step `step − 1`, when it was active then.
    pub prev_filtered: Option<&'a WeightedMessageSet>,
    pub rho: Rational,
    pub verifier: &'a dyn DpowVerifier,
}

pub trait FilterPolicy: Send + Sync {
    fn name(&self) -> &'static str;
    fn filter(&self, input: FilterInput<'_>) -> Result<WeightedMessageSet, SieveError>;
}

/// Online-Sieve while caught up, Bootstrap-Sieve after a gap.
pub struct Sieve;

impl FilterPolicy for Sieve {
    fn name(&self) -> &'static str {
        "sieve"
    }

    fn filter(&self, i: FilterInput<'_>) -> Result<WeightedMessageSet, SieveError> {
        match i.prev_filtered {
            Some(prev) => Ok(online_sieve(
                i.step,
                i.received.iter(),
                prev,
                i.rho,
                i.verifier,
            )),
            None => bootstrap_sieve(i.step, i.received, i.rho, i.verifier),
        }
    }
}

/// Every DPoW-valid message claiming the previous step.
pub struct NoFilter;

impl FilterPolicy for NoFilter {
    fn name(&self) -> &'static str {
        "no-filter"
    }

    fn filter(&self, i: FilterInput<'_>) -> Result<WeightedMessageSet, SieveError> {
        if i.step == 0 {
            return Ok(WeightedMessageSet::new());
        }
        Ok(i.received
            .iter()
            .filter(|m| m.timestamp == i.step - 1 && dpow_valid(m, i.verifier))
            .map(|m| (m.id(), m.clone()))
            .collect())
    }
}

/// Joins by replaying Online-Sieve from step 1 over the received history.
pub struct NaiveOnline;

impl FilterPolicy for NaiveOnline {
    fn name(&self) -> &'static str {
        "naive-online"
    }

    fn filter(&self, i: FilterInput<'_>) -> Result<WeightedMessageSet, SieveError> {
        if let Some(prev) = i.prev_filtered {
            return Ok(online_sieve(
                i.step,
                i.received.iter(),
                prev,
                i.rho,
                i.verifier,
            ));
        }
        let mut l = WeightedMessageSet::new();
        for s in 1..=i.step {
            l = online_sieve(s, i.received.iter(), &l, i.rho, i.verifier);
        }
        Ok(l)
    }
}

/// Bootstrap-Sieve for step `from`, finished late, followed by Online-Sieve
/// over the buffered messages of every later step. Each step only sees the
/// messages that had arrived by its start; `visible` maps a message to the
/// first step it was available in, and unlisted messages count as always
/// available.
pub struct CatchUp {
    pub from: Step,
    pub visible: BTreeMap<MessageId, Step>,
}

impl CatchUp {
    fn seen_by(&self, s: Step, m: &SieveMessage) -> bool {
        self.visible.get(&m.id()).is_none_or(|v| *v <= s)
    }
}

impl FilterPolicy for CatchUp {
    fn name(&self) -> &'static str {
        "catch-up"
    }

    fn filter(&self, i: FilterInput<'_>) -> Result<WeightedMessageSet, SieveError> {
        let from = self.from.min(i.step);
        let early: MessageStore = i
            .received
            .iter()
            .filter(|m| self.seen_by(from, m))
            .cloned()
            .collect();
        let mut l = bootstrap_sieve(from, &early, i.rho, i.verifier)?;
        for s in from + 1..=i.step {
            let seen = i.received.iter().filter(|m| self.seen_by(s, m));
            l = online_sieve(s, seen, &l, i.rho, i.verifier);
        }
        Ok(l)
    }
}

pub const POLICIES: &[&str] = &["sieve", "no-filter", "naive-online"];

pub fn policy_from_name(name: &str) -> Result<Box<dyn FilterPolicy>, ScenarioError> {
    match name {
        "sieve" => Ok(Box::new(Sieve)),
        "no-filter" => Ok(Box::new(NoFilter)),
        "naive-online" => Ok(Box::new(NaiveOnline)),
        other => Err(ScenarioError::Unknown {
            kind: "filter policy",
            name: other.to_string(),
            available: POLICIES.join(", "),
        }),
    }
}
