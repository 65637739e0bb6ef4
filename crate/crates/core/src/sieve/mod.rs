// SPDX-License-Identifier: Apache-2.0

//! Time-travel-resilient broadcast: per-node state machine and the two
//! filtering policies.

pub mod dag;
pub mod policy;

use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore;
use rand_chacha::ChaCha8Rng;

use crate::error::SieveError;
use crate::oracle::{Delivery, DpowVerifier};
use crate::types::{
    encode_gamma, exceeds_complement, weight, MessageId, MessageStore, Rational, SieveMessage,
    Step, Tick, WeightedMessageSet,
};

pub use dag::{
    exists_heavier_disjoint_dag, find_heaviest_consistent_dag, heaviest_dag_avoiding, ConsistentDag,
};
pub use policy::{policy_from_name, CatchUp, FilterInput, FilterPolicy, POLICIES};

fn dpow_valid(m: &SieveMessage, verifier: &dyn DpowVerifier) -> bool {
    verifier.verify(&m.dpow, &m.gamma(), m.weight)
}

/// Keeps timestamp-`s−1` messages whose coffer holds a `(1−ρ)` supermajority
/// of `prev_filtered`. With an empty `prev_filtered` every DPoW-valid
/// timestamp-`s−1` message is kept.
pub fn online_sieve<'a>(
    s: Step,
    received: impl IntoIterator<Item = &'a SieveMessage>,
    prev_filtered: &WeightedMessageSet,
    rho: Rational,
    verifier: &dyn DpowVerifier,
) -> WeightedMessageSet {
    if s == 0 {
        return WeightedMessageSet::new();
    }
    let prev_weight = weight(prev_filtered.values());
    received
        .into_iter()
        .filter(|m| m.timestamp == s - 1 && dpow_valid(m, verifier))
        .filter(|m| {
            if prev_weight == 0 {
                return true;
            }
            let shared = weight(m.coffer.iter().filter_map(|id| prev_filtered.get(id)));
            exceeds_complement(shared, prev_weight, rho)
        })
        .map(|m| (m.id(), m.clone()))
        .collect()
}

/// Messages whose DPoW verifies and whose whole coffer closure was received
/// and verifies as well.
pub fn verify_dpows_recursively(
    received: &MessageStore,
    verifier: &dyn DpowVerifier,
) -> WeightedMessageSet {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Visiting,
        Done(bool),
    }
    let mut marks: BTreeMap<MessageId, Mark> = BTreeMap::new();
    // explicit stack: (id, children pushed)
    for root in received.ids() {
        let mut stack = vec![(*root, false)];
        while let Some((id, expanded)) = stack.pop() {
            if let Some(Mark::Done(_)) = marks.get(&id) {
                continue;
            }
            let Some(m) = received.get(&id) else {
                marks.insert(id, Mark::Done(false));
                continue;
            };
            if !expanded {
                if marks.get(&id) == Some(&Mark::Visiting) {
                    // a reference cycle cannot come from real evaluations
                    marks.insert(id, Mark::Done(false));
                    continue;
                }
                marks.insert(id, Mark::Visiting);
                stack.push((id, true));
                for c in &m.coffer {
                    if !matches!(marks.get(c), Some(Mark::Done(_))) {
                        stack.push((*c, false));
                    }
                }
            } else {
                let ok = dpow_valid(m, verifier)
                    && m.coffer
                        .iter()
                        .all(|c| marks.get(c) == Some(&Mark::Done(true)));
                marks.insert(id, Mark::Done(ok));
            }
        }
    }
    received
        .iter()
        .filter(|m| marks.get(&m.id()) == Some(&Mark::Done(true)))
        .map(|m| (m.id(), m.clone()))
        .collect()
}

/// Recovers the step-`s` filtered set from the full received history.
///
/// Messages claiming a timestamp of `s` or later are left out of the search
/// pool. Timestamp-`s'` messages are scrutinised in ascending dpow order.
pub fn bootstrap_sieve(
    s: Step,
    received: &MessageStore,
    rho: Rational,
    verifier: &dyn DpowVerifier,
) -> Result<WeightedMessageSet, SieveError> {
    if s == 0 {
        return Ok(WeightedMessageSet::new());
    }
    let mut pool = verify_dpows_recursively(received, verifier);
    pool.retain(|_, m| m.timestamp < s);
    for sp in 1..s {
        let layer: Vec<MessageId> = pool
            .values()
            .filter(|m| m.timestamp == sp)
            .map(|m| m.id())
            .collect();
        for id in layer {
            let m = pool[&id].clone();
            let keep = match find_heaviest_consistent_dag(&m, &pool, received, sp - 1, rho)? {
                None => false,
                Some(c) => !exists_heavier_disjoint_dag(&c, &pool, received, sp - 1, rho)?,
            };
            if !keep {
                pool.remove(&id);
            }
        }
    }
    pool.retain(|_, m| m.timestamp == s - 1);
    Ok(pool)
}

/// The payload and coffer awaiting their DPoW.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PendingTtrb {
    pub payload: Vec<u8>,
    pub coffer: BTreeSet<MessageId>,
    pub nonce: u64,
}

/// Layer above the broadcast: consumes filtered sets, produces payloads.
pub trait UpperLayer {
    fn deliver(&mut self, s: Step, filtered: &WeightedMessageSet) -> Vec<u8>;
}

/// What a node asks of the harness after a tick.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TickAction {
    Idle,
    RequestDpow { gamma: Vec<u8>, weight: u64 },
    Broadcast(SieveMessage),
}

/// Outcome of the first tick of a step, reported for checking and tracing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepDelivery {
    pub step: Step,
    pub filtered: WeightedMessageSet,
    pub bootstrapped: bool,
}

#[derive(Clone, Debug)]
pub struct SieveState {
    pub received: MessageStore,
    pub last_active: Option<Step>,
    pub filtered: WeightedMessageSet,
    pub pending: Option<PendingTtrb>,
    pub power: u64,
    pub ticks_per_step: u64,
    pub rho: Rational,
}

impl SieveState {
    pub fn new(power: u64, ticks_per_step: u64, rho: Rational) -> Self {
        Self {
            received: MessageStore::new(),
            last_active: None,
            filtered: WeightedMessageSet::new(),
            pending: None,
            power,
            ticks_per_step,
            rho,
        }
    }

    pub fn receive(&mut self, incoming: impl IntoIterator<Item = SieveMessage>) {
        for m in incoming {
            self.received.insert(m);
        }
    }

    /// Runs filtering for step `s` and hands the result upward, returning
    /// the delivery and the payload of the reply.
    pub fn filter_step(
        &mut self,
        s: Step,
        policy: &dyn FilterPolicy,
        verifier: &dyn DpowVerifier,
        upper: &mut dyn UpperLayer,
    ) -> Result<(StepDelivery, Vec<u8>), SieveError> {
        let online = s > 0 && self.last_active == Some(s - 1);
        let prev = online.then_some(&self.filtered);
        let filtered = policy.filter(FilterInput {
            step: s,
            received: &self.received,
            prev_filtered: prev,
            rho: self.rho,
            verifier,
        })?;
        self.filtered = filtered;
        self.last_active = Some(s);
        let payload = upper.deliver(s, &self.filtered);
        Ok((
            StepDelivery {
                step: s,
                filtered: self.filtered.clone(),
                bootstrapped: !online && s > 0,
            },
            payload,
        ))
    }

    /// Records `payload` as pending with the current filtered set as coffer.
    pub fn prepare(&mut self, payload: Vec<u8>, rng: &mut ChaCha8Rng) -> TickAction {
        let pending = PendingTtrb {
            payload,
            coffer: self.filtered.keys().copied().collect(),
            nonce: rng.next_u64(),
        };
        let gamma = encode_gamma(&pending.payload, &pending.coffer, pending.nonce);
        self.pending = Some(pending);
        TickAction::RequestDpow {
            gamma,
            weight: self.power,
        }
    }

    /// Assembles the pending message around its DPoW.
    pub fn complete(&mut self, delivery: &Delivery, timestamp: Step) -> Option<SieveMessage> {
        let p = self.pending.take()?;
        let m = SieveMessage {
            payload: p.payload,
            timestamp,
            coffer: p.coffer,
            nonce: p.nonce,
            dpow: delivery.dpow,
            weight: delivery.weight,
        };
        self.received.insert(m.clone());
        Some(m)
    }

    pub fn new_step(
        &mut self,
        s: Step,
        policy: &dyn FilterPolicy,
        verifier: &dyn DpowVerifier,
        upper: &mut dyn UpperLayer,
        rng: &mut ChaCha8Rng,
    ) -> Result<(StepDelivery, TickAction), SieveError> {
        let (d, payload) = self.filter_step(s, policy, verifier, upper)?;
        Ok((d, self.prepare(payload, rng)))
    }

    /// One active tick: absorb `incoming`, then filter on the first tick or
    /// broadcast on the last.
    #[allow(clippy::too_many_arguments)]
    pub fn upon_new_tick(
        &mut self,
        t: Tick,
        incoming: impl IntoIterator<Item = SieveMessage>,
        responses: &[Delivery],
        policy: &dyn FilterPolicy,
        verifier: &dyn DpowVerifier,
        upper: &mut dyn UpperLayer,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Option<StepDelivery>, TickAction), SieveError> {
        self.receive(incoming);
        let k = self.ticks_per_step;
        if t.is_multiple_of(k) {
            let (d, a) = self.new_step(t / k, policy, verifier, upper, rng)?;
            return Ok((Some(d), a));
        }
        if t % k == k - 1 {
            let Some(delivery) = responses.first() else {
                return Err(SieveError::MissingDpowAtLastTick { tick: t });
            };
            let Some(m) = self.complete(delivery, t / k) else {
                return Err(SieveError::MissingDpowAtLastTick { tick: t });
            };
            return Ok((None, TickAction::Broadcast(m)));
        }
        Ok((None, TickAction::Idle))
    }
}
