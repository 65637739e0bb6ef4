// SPDX-License-Identifier: Apache-2.0

//! Commit latency and leader statistics.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::types::{BlockId, NodeId, Step};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Metrics {
    /// One sample per proposal step whose latency resolved within the horizon.
    pub latencies: Vec<Step>,
    pub unresolved: u64,
    pub leader_trials: u64,
    pub leader_successes: u64,
}

impl Metrics {
    pub fn mean_latency(&self) -> Option<f64> {
        (!self.latencies.is_empty())
            .then(|| self.latencies.iter().sum::<Step>() as f64 / self.latencies.len() as f64)
    }

    pub fn merge(&mut self, other: &Metrics) {
        self.latencies.extend(&other.latencies);
        self.unresolved += other.unresolved;
        self.leader_trials += other.leader_trials;
        self.leader_successes += other.leader_successes;
    }
}

/// What the run records for the metrics.
#[derive(Default)]
pub struct CommitLog {
    /// Correct proposals, with the step they were made in.
    pub proposals: Vec<(Step, BlockId)>,
    /// First step at which each block appeared in each node's commit.
    pub first_commit: BTreeMap<NodeId, BTreeMap<BlockId, Step>>,
}

impl CommitLog {
    pub fn commit(&mut self, node: NodeId, step: Step, blocks: impl IntoIterator<Item = BlockId>) {
        let seen = self.first_commit.entry(node).or_default();
        for b in blocks {
            seen.entry(b).or_insert(step);
        }
    }

    /// First step `t >= from` at which every correct node awake at `t` has
    /// committed `b`.
    fn decided(
        &self,
        b: &BlockId,
        from: Step,
        horizon: Step,
        correct: &[NodeId],
        active: &dyn Fn(NodeId, Step) -> bool,
    ) -> Option<Step> {
        (from..horizon).find(|&t| {
            correct.iter().filter(|n| active(**n, t)).all(|n| {
                self.first_commit
                    .get(n)
                    .and_then(|m| m.get(b))
                    .is_some_and(|&c| c <= t)
            })
        })
    }

    pub fn metrics(
        &self,
        horizon: Step,
        correct: &[NodeId],
        active: &dyn Fn(NodeId, Step) -> bool,
    ) -> Metrics {
        let decided: Vec<(Step, Option<Step>)> = self
            .proposals
            .iter()
            .map(|(s, b)| (*s, self.decided(b, *s, horizon, correct, active)))
            .collect();
        let mut m = Metrics::default();
        for s in (0..horizon).filter(|s| s % 2 == 0) {
            let best = decided
                .iter()
                .filter(|(p, _)| *p >= s)
                .filter_map(|(_, c)| c.map(|c| c - s))
                .min();
            match best {
                Some(l) => m.latencies.push(l),
                None => m.unresolved += 1,
            }
        }
        for c in (1..horizon).filter(|c| c % 2 == 1 && c + 2 < horizon) {
            m.leader_trials += 1;
            let won = decided
                .iter()
                .any(|(p, d)| *p + 1 == c && *d == Some(c + 2));
            if won {
                m.leader_successes += 1;
            }
        }
        m
    }
}
