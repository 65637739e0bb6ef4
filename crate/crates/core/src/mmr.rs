// SPDX-License-Identifier: Apache-2.0

//! Total-order broadcast on top of the filtered deliveries: grade
//! computation, proposal and commit steps, and token-based leader election.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::error::MmrError;
use crate::sieve::UpperLayer;
use crate::types::{
    exceeds_fraction, BlockId, Chain, Dpow, NodeId, Rational, Step, WeightedMessageSet,
};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MmrMessage {
    pub vote: Chain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal: Option<Chain>,
}

impl MmrMessage {
    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("chains always serialise")
    }

    /// Undecodable or malformed payloads count as a vote for the empty chain.
    pub fn decode(payload: &[u8]) -> MmrMessage {
        match serde_json::from_slice::<MmrMessage>(payload) {
            Ok(m) if m.vote.is_well_formed() => MmrMessage {
                proposal: m.proposal.filter(Chain::is_well_formed),
                vote: m.vote,
            },
            _ => MmrMessage::default(),
        }
    }
}

/// A delivered message as MMR sees it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ballot {
    pub message: MmrMessage,
    pub dpow: Dpow,
    pub weight: u64,
}

pub fn ballots_from(filtered: &WeightedMessageSet) -> Vec<Ballot> {
    filtered
        .values()
        .map(|m| Ballot {
            message: MmrMessage::decode(&m.payload),
            dpow: m.dpow,
            weight: m.weight,
        })
        .collect()
}

/// Weight of votes for each chain, counting a vote for every prefix.
fn tally(delivered: &[Ballot]) -> (BTreeMap<Vec<BlockId>, (Chain, u64)>, u64) {
    let mut t: BTreeMap<Vec<BlockId>, (Chain, u64)> = BTreeMap::new();
    let mut total = 0;
    for b in delivered {
        total += b.weight;
        let ids = b.message.vote.ids();
        for len in 1..=ids.len() {
            t.entry(ids[..len].to_vec())
                .or_insert_with(|| (b.message.vote.prefix(len), 0))
                .1 += b.weight;
        }
    }
    (t, total)
}

fn chains_above(delivered: &[Ballot], frac: Rational) -> Vec<Chain> {
    let (t, total) = tally(delivered);
    let mut out = vec![Chain::empty()];
    out.extend(
        t.into_values()
            .filter(|(_, w)| exceeds_fraction(*w, total, frac))
            .map(|(c, _)| c),
    );
    out
}

/// Chains backed by more than a third of the delivered weight, plus the empty chain.
pub fn grade0_chains(delivered: &[Ballot]) -> Vec<Chain> {
    chains_above(delivered, Rational::new(1, 3))
}

fn maximal(chains: Vec<Chain>) -> Vec<Chain> {
    chains
        .iter()
        .filter(|c| {
            !chains
                .iter()
                .any(|d| d.len() > c.len() && c.is_prefix_of(d))
        })
        .cloned()
        .collect()
}

pub fn grade1_chain(delivered: &[Ballot]) -> Result<Chain, MmrError> {
    let mut max = maximal(chains_above(delivered, Rational::new(2, 3)));
    if max.len() > 1 {
        return Err(MmrError::MultipleMaximalGrade1);
    }
    Ok(max.pop().unwrap_or_default())
}

pub fn maximal_grade0(delivered: &[Ballot]) -> Result<Vec<Chain>, MmrError> {
    let max = maximal(grade0_chains(delivered));
    if max.len() > 2 {
        return Err(MmrError::MoreThanTwoMaximalGrade0(max.len()));
    }
    Ok(max)
}

pub fn token(dpow: &Dpow, i: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(dpow.0);
    h.update(i.to_be_bytes());
    h.finalize().into()
}

/// The ballot owning the largest token; equal tokens go to the smaller dpow.
pub fn elect_leader(delivered: &[Ballot]) -> Option<&Ballot> {
    delivered
        .iter()
        .map(|b| {
            let best = (0..b.weight)
                .map(|i| token(&b.dpow, i))
                .max()
                .unwrap_or([0; 32]);
            (best, std::cmp::Reverse(b.dpow), b)
        })
        .max_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)))
        .map(|(_, _, b)| b)
}

/// What one step produced at a node.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StepOutcome {
    pub step: Step,
    pub message: MmrMessage,
    pub committed: Option<Chain>,
    pub leader: Option<Dpow>,
    pub errors: Vec<MmrError>,
}

#[derive(Clone, Debug)]
pub struct MmrState {
    pub node: NodeId,
    /// Transactions awaiting commitment.
    pub submitted: BTreeSet<String>,
    pub committed: Chain,
    next_tx: u64,
}

impl MmrState {
    pub fn new(node: NodeId) -> Self {
        let mut st = Self {
            node,
            submitted: BTreeSet::new(),
            committed: Chain::empty(),
            next_tx: 0,
        };
        st.refill();
        st
    }

    fn refill(&mut self) {
        if self.submitted.is_empty() {
            self.submitted
                .insert(format!("{}-tx{}", self.node, self.next_tx));
            self.next_tx += 1;
        }
    }

    /// A fresh block's transactions: the first submission not yet in `base`
    /// or the committed chain.
    fn fresh_batch(&mut self, base: &Chain) -> Vec<String> {
        let used: BTreeSet<&String> = base
            .blocks
            .iter()
            .chain(&self.committed.blocks)
            .flat_map(|b| &b.transactions)
            .collect();
        if let Some(tx) = self.submitted.iter().find(|tx| !used.contains(tx)) {
            return vec![tx.clone()];
        }
        let tx = format!("{}-tx{}", self.node, self.next_tx);
        self.next_tx += 1;
        self.submitted.insert(tx.clone());
        vec![tx]
    }

    pub fn on_ttrb_deliver(
        &mut self,
        s: Step,
        delivered: &[Ballot],
        rng: &mut ChaCha8Rng,
    ) -> StepOutcome {
        let mut out = StepOutcome {
            step: s,
            ..Default::default()
        };
        if s == 0 {
            let batch = self.fresh_batch(&Chain::empty());
            out.message = MmrMessage {
                vote: Chain::empty(),
                proposal: Some(Chain::empty().extended(batch, self.node)),
            };
            return out;
        }
        let grade0 = maximal_grade0(delivered).unwrap_or_else(|e| {
            out.errors.push(e);
            vec![Chain::empty()]
        });
        let grade1 = grade1_chain(delivered).unwrap_or_else(|e| {
            out.errors.push(e);
            Chain::empty()
        });
        if s % 2 == 1 {
            let leader = elect_leader(delivered);
            if delivered.is_empty() {
                out.errors.push(MmrError::EmptyDelivery);
            }
            out.leader = leader.map(|b| b.dpow);
            let proposal = leader.and_then(|b| b.message.proposal.as_ref());
            let vote = match proposal {
                Some(p) if grade0.iter().any(|g| g.is_prefix_of(p)) => p.clone(),
                _ => grade0
                    .iter()
                    .min_by_key(|c| c.tip())
                    .cloned()
                    .unwrap_or_default(),
            };
            out.message = MmrMessage {
                vote,
                proposal: None,
            };
            if !grade1.is_empty() {
                let committed: BTreeSet<&String> =
                    grade1.blocks.iter().flat_map(|b| &b.transactions).collect();
                self.submitted.retain(|tx| !committed.contains(tx));
                if grade1.len() > self.committed.len() {
                    self.committed = grade1.clone();
                }
                out.committed = Some(grade1);
            }
            self.refill();
        } else {
            let base = if grade0.len() == 2 {
                grade0[rng.gen_range(0..2)].clone()
            } else {
                grade0.into_iter().next().unwrap_or_default()
            };
            let batch = self.fresh_batch(&base);
            out.message = MmrMessage {
                vote: grade1,
                proposal: Some(base.extended(batch, self.node)),
            };
        }
        out
    }
}

/// MMR as the layer above the broadcast; keeps the per-step outcomes.
pub struct MmrNode {
    pub state: MmrState,
    pub rng: ChaCha8Rng,
    pub outcomes: Vec<StepOutcome>,
}

impl MmrNode {
    pub fn new(node: NodeId, rng: ChaCha8Rng) -> Self {
        Self {
            state: MmrState::new(node),
            rng,
            outcomes: Vec::new(),
        }
    }
}

impl UpperLayer for MmrNode {
    fn deliver(&mut self, s: Step, filtered: &WeightedMessageSet) -> Vec<u8> {
        let ballots = ballots_from(filtered);
        let out = self.state.on_ttrb_deliver(s, &ballots, &mut self.rng);
        let payload = out.message.encode();
        self.outcomes.push(out);
        payload
    }
}

/// Application that ignores deliveries and sends a fixed payload.
pub struct Opaque;

impl UpperLayer for Opaque {
    fn deliver(&mut self, s: Step, _filtered: &WeightedMessageSet) -> Vec<u8> {
        format!("step-{s}").into_bytes()
    }
}
