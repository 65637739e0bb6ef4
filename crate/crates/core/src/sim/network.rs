// SPDX-License-Identifier: Apache-2.0

//! Synchronous network: sends made during tick `t` are readable from `t+1`.
//! Sleeping nodes keep a backlog. Any Byzantine message observed by a correct
//! node is forwarded to every correct node on the following tick.

use std::collections::{BTreeMap, BTreeSet};

use crate::types::{MessageId, NodeId, SieveMessage};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Targets {
    All,
    Only(Vec<NodeId>),
}

#[derive(Debug, Default)]
pub struct Network {
    correct: BTreeSet<NodeId>,
    byzantine: BTreeSet<NodeId>,
    inbox: BTreeMap<NodeId, Vec<SieveMessage>>,
    /// Ids already queued for or handed to each node.
    known: BTreeMap<NodeId, BTreeSet<MessageId>>,
    in_flight: Vec<(NodeId, SieveMessage)>,
    byzantine_ids: BTreeSet<MessageId>,
    echoed: BTreeSet<MessageId>,
    echo_queue: Vec<SieveMessage>,
}

impl Network {
    pub fn new(
        correct: impl IntoIterator<Item = NodeId>,
        byzantine: impl IntoIterator<Item = NodeId>,
    ) -> Self {
        let correct: BTreeSet<NodeId> = correct.into_iter().collect();
        let byzantine: BTreeSet<NodeId> = byzantine.into_iter().collect();
        let all = correct.iter().chain(&byzantine);
        Self {
            inbox: all.clone().map(|n| (*n, Vec::new())).collect(),
            known: all.map(|n| (*n, BTreeSet::new())).collect(),
            correct,
            byzantine,
            ..Default::default()
        }
    }

    /// Buffers a send until the tick barrier. Targeted Byzantine sends also
    /// reach every Byzantine node.
    pub fn send(&mut self, from: NodeId, message: SieveMessage, to: &Targets) {
        let from_byzantine = self.byzantine.contains(&from);
        if from_byzantine {
            self.byzantine_ids.insert(message.id());
        }
        self.known.entry(from).or_default().insert(message.id());
        let recipients: BTreeSet<NodeId> = match to {
            Targets::All => self
                .correct
                .iter()
                .chain(&self.byzantine)
                .copied()
                .collect(),
            Targets::Only(list) => {
                let mut r: BTreeSet<NodeId> = list.iter().copied().collect();
                if from_byzantine {
                    r.extend(&self.byzantine);
                }
                r
            }
        };
        for r in recipients {
            if r != from {
                self.in_flight.push((r, message.clone()));
            }
        }
    }

    /// Phase (i): everything that reached `node` since it last looked.
    pub fn take(&mut self, node: NodeId) -> Vec<SieveMessage> {
        let msgs = std::mem::take(self.inbox.entry(node).or_default());
        if self.correct.contains(&node) {
            for m in &msgs {
                let id = m.id();
                if self.byzantine_ids.contains(&id) && self.echoed.insert(id) {
                    self.echo_queue.push(m.clone());
                }
            }
        }
        msgs
    }

    fn enqueue(&mut self, to: NodeId, m: SieveMessage) {
        if self.known.entry(to).or_default().insert(m.id()) {
            self.inbox.entry(to).or_default().push(m);
        }
    }

    /// Tick barrier: releases buffered sends and pending echoes.
    pub fn barrier(&mut self) {
        for (to, m) in std::mem::take(&mut self.in_flight) {
            self.enqueue(to, m);
        }
        let correct: Vec<NodeId> = self.correct.iter().copied().collect();
        for m in std::mem::take(&mut self.echo_queue) {
            for &c in &correct {
                self.enqueue(c, m.clone());
            }
        }
    }

    pub fn pending_for(&self, node: NodeId) -> usize {
        self.inbox.get(&node).map_or(0, Vec::len)
    }
}
