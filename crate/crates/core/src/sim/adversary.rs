// SPDX-License-Identifier: Apache-2.0

//! Byzantine strategies behind a common trait, selected by name.
//!
//! Strategies only obtain DPoW values through their own oracle deliveries or
//! from messages they received.

use std::collections::BTreeSet;

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ScenarioError, SieveError};
use crate::mmr::{MmrMessage, MmrNode, Opaque};
use crate::oracle::{Delivery, DeliveryConvention, DpowVerifier};
use crate::sieve::{policy::Sieve, SieveState, UpperLayer};
use crate::types::{
    encode_gamma, Chain, MessageId, MessageStore, NodeId, Rational, SieveMessage, Step, Tick,
    WeightedMessageSet,
};

use super::network::Targets;
use super::scenario::Application;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StrategySpec {
    /// Follows the protocol.
    Honest,
    /// Burns oracle weight and never sends.
    Passive { weight: u64 },
    /// Withholds each message for `delay` steps and relabels it to look fresh.
    TimeTravel { delay: Step },
    /// Starts work early and labels the result with the step it completes in.
    AntiqueTimestamper {
        start_tick: Tick,
        count: u32,
        weight: u64,
    },
    /// Quietly builds `count` messages for `label_step`, a successor citing
    /// only them, and releases the batch at `release_tick`.
    HistoryForger {
        label_step: Step,
        count: u32,
        release_tick: Tick,
    },
    /// Sends one variant to half of the correct nodes and another to the rest.
    Equivocator,
    /// Proposes its own block on the empty chain and votes the empty chain.
    LeaderGriefer,
}

pub const STRATEGIES: &[&str] = &[
    "honest",
    "passive",
    "time-travel",
    "antique-timestamper",
    "history-forger",
    "equivocator",
    "leader-griefer",
];

impl StrategySpec {
    pub fn name(&self) -> &'static str {
        match self {
            StrategySpec::Honest => "honest",
            StrategySpec::Passive { .. } => "passive",
            StrategySpec::TimeTravel { .. } => "time-travel",
            StrategySpec::AntiqueTimestamper { .. } => "antique-timestamper",
            StrategySpec::HistoryForger { .. } => "history-forger",
            StrategySpec::Equivocator => "equivocator",
            StrategySpec::LeaderGriefer => "leader-griefer",
        }
    }

    /// Default parameters for a strategy name.
    pub fn from_name(name: &str) -> Result<StrategySpec, ScenarioError> {
        Ok(match name {
            "honest" => StrategySpec::Honest,
            "passive" => StrategySpec::Passive { weight: 1 },
            "time-travel" => StrategySpec::TimeTravel { delay: 2 },
            "antique-timestamper" => StrategySpec::AntiqueTimestamper {
                start_tick: 0,
                count: u32::MAX,
                weight: 1,
            },
            "history-forger" => StrategySpec::HistoryForger {
                label_step: 0,
                count: 2,
                release_tick: 5,
            },
            "equivocator" => StrategySpec::Equivocator,
            "leader-griefer" => StrategySpec::LeaderGriefer,
            other => {
                return Err(ScenarioError::Unknown {
                    kind: "strategy",
                    name: other.to_string(),
                    available: STRATEGIES.join(", "),
                })
            }
        })
    }

    pub fn build(&self, setup: &ByzSetup) -> Box<dyn Adversary> {
        match *self {
            StrategySpec::Honest => Box::new(Honest {
                core: HonestCore::new(setup),
                name: "honest",
            }),
            StrategySpec::Passive { weight } => Box::new(Passive { weight }),
            StrategySpec::TimeTravel { delay } => Box::new(TimeTravel {
                core: HonestCore::new(setup),
                delay,
            }),
            StrategySpec::AntiqueTimestamper {
                start_tick,
                count,
                weight,
            } => Box::new(AntiqueTimestamper {
                known: MessageStore::new(),
                start_tick,
                remaining: count,
                weight,
                pending: None,
            }),
            StrategySpec::HistoryForger {
                label_step,
                count,
                release_tick,
            } => Box::new(HistoryForger {
                known: MessageStore::new(),
                label_step,
                remaining: count,
                release_tick,
                forged: BTreeSet::new(),
                pending: None,
                done: false,
            }),
            StrategySpec::Equivocator => Box::new(Equivocator {
                core: HonestCore::new(setup),
                alternate: None,
            }),
            StrategySpec::LeaderGriefer => {
                let mut core = HonestCore::new(setup);
                core.upper = Box::new(Griefer { node: setup.node });
                Box::new(Honest {
                    core,
                    name: "leader-griefer",
                })
            }
        }
    }
}

/// Fixed facts a strategy is built from.
pub struct ByzSetup {
    pub node: NodeId,
    pub power: Rational,
    pub ticks_per_step: u64,
    pub rho: Rational,
    pub application: Application,
    pub rng_seed: u64,
}

/// What a Byzantine node sees on an active tick.
pub struct ByzContext<'a> {
    pub node: NodeId,
    pub tick: Tick,
    pub ticks_per_step: u64,
    pub power: Rational,
    pub convention: DeliveryConvention,
    pub incoming: &'a [SieveMessage],
    pub deliveries: &'a [Delivery],
    pub has_pending: bool,
    pub correct: &'a [NodeId],
    pub verifier: &'a dyn DpowVerifier,
}

impl ByzContext<'_> {
    pub fn step(&self) -> Step {
        self.tick / self.ticks_per_step
    }

    pub fn is_first_tick(&self) -> bool {
        self.tick.is_multiple_of(self.ticks_per_step)
    }

    /// Tick at which a request of weight `w` issued now would land, if awake throughout.
    pub fn expected_delivery(&self, w: u64) -> Tick {
        self.tick
            + self
                .convention
                .required_ticks(w, self.ticks_per_step, self.power)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ByzAction {
    Request {
        gamma: Vec<u8>,
        weight: u64,
    },
    /// Sends at tick `at`, or as soon as some Byzantine node is awake.
    Send {
        message: SieveMessage,
        to: Targets,
        at: Tick,
    },
}

pub trait Adversary: Send {
    fn name(&self) -> &'static str;
    fn on_tick(
        &mut self,
        cx: &ByzContext<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<ByzAction>, SieveError>;
}

fn send_now(cx: &ByzContext<'_>, message: SieveMessage) -> ByzAction {
    ByzAction::Send {
        message,
        to: Targets::All,
        at: cx.tick,
    }
}

fn layer(known: &MessageStore, ts: Option<Step>) -> BTreeSet<MessageId> {
    match ts {
        Some(ts) => known
            .iter()
            .filter(|m| m.timestamp == ts)
            .map(|m| m.id())
            .collect(),
        None => BTreeSet::new(),
    }
}

/// A message in the making whose DPoW is outstanding.
struct Draft {
    payload: Vec<u8>,
    coffer: BTreeSet<MessageId>,
    nonce: u64,
    label: Step,
}

impl Draft {
    fn new(
        payload: Vec<u8>,
        coffer: BTreeSet<MessageId>,
        label: Step,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            payload,
            coffer,
            nonce: rng.next_u64(),
            label,
        }
    }

    fn gamma(&self) -> Vec<u8> {
        encode_gamma(&self.payload, &self.coffer, self.nonce)
    }

    fn finish(self, d: &Delivery) -> SieveMessage {
        SieveMessage {
            payload: self.payload,
            timestamp: self.label,
            coffer: self.coffer,
            nonce: self.nonce,
            dpow: d.dpow,
            weight: d.weight,
        }
    }
}

fn filler_payload(what: &str, node: NodeId, tick: Tick) -> Vec<u8> {
    MmrMessage {
        vote: Chain::empty(),
        proposal: Some(Chain::empty().extended(vec![format!("{node}-{what}-{tick}")], node)),
    }
    .encode()
}

/// Runs the correct node's filtering and application on behalf of a
/// Byzantine identity, with whole-unit message weights.
pub struct HonestCore {
    pub sieve: SieveState,
    pub upper: Box<dyn UpperLayer + Send>,
    label: Option<Step>,
}

impl HonestCore {
    pub fn new(setup: &ByzSetup) -> Self {
        use rand::SeedableRng;
        let weight = (setup.power.to_integer()).max(1);
        let upper: Box<dyn UpperLayer + Send> = match setup.application {
            Application::Mmr => Box::new(MmrNode::new(
                setup.node,
                ChaCha8Rng::seed_from_u64(setup.rng_seed),
            )),
            Application::Opaque => Box::new(Opaque),
        };
        Self {
            sieve: SieveState::new(weight, setup.ticks_per_step, setup.rho),
            upper,
            label: None,
        }
    }

    /// Absorbs input; on a step's first tick filters and, when the oracle is
    /// free, returns the request and the payload it covers.
    fn tick(
        &mut self,
        cx: &ByzContext<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<(ByzAction, Vec<u8>)>, SieveError> {
        self.sieve.receive(cx.incoming.iter().cloned());
        if !cx.is_first_tick() {
            return Ok(None);
        }
        let (_, payload) =
            self.sieve
                .filter_step(cx.step(), &Sieve, cx.verifier, self.upper.as_mut())?;
        if cx.has_pending || self.sieve.pending.is_some() {
            return Ok(None);
        }
        self.label = Some(cx.step());
        let crate::sieve::TickAction::RequestDpow { gamma, weight } =
            self.sieve.prepare(payload.clone(), rng)
        else {
            unreachable!("prepare always requests")
        };
        Ok(Some((ByzAction::Request { gamma, weight }, payload)))
    }

    fn complete(&mut self, cx: &ByzContext<'_>) -> Option<SieveMessage> {
        let d = cx.deliveries.first()?;
        let label = self.label.take()?;
        self.sieve.complete(d, label)
    }
}

struct Honest {
    core: HonestCore,
    name: &'static str,
}

impl Adversary for Honest {
    fn name(&self) -> &'static str {
        self.name
    }

    fn on_tick(
        &mut self,
        cx: &ByzContext<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<ByzAction>, SieveError> {
        let mut out = Vec::new();
        if let Some(m) = self.core.complete(cx) {
            out.push(send_now(cx, m));
        }
        if let Some((req, _)) = self.core.tick(cx, rng)? {
            out.push(req);
        }
        Ok(out)
    }
}

struct Passive {
    weight: u64,
}

impl Adversary for Passive {
    fn name(&self) -> &'static str {
        "passive"
    }

    fn on_tick(
        &mut self,
        cx: &ByzContext<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<ByzAction>, SieveError> {
        if cx.has_pending {
            return Ok(Vec::new());
        }
        let mut gamma = b"burn".to_vec();
        gamma.extend(rng.next_u64().to_be_bytes());
        Ok(vec![ByzAction::Request {
            gamma,
            weight: self.weight.max(1),
        }])
    }
}

struct TimeTravel {
    core: HonestCore,
    delay: Step,
}

impl Adversary for TimeTravel {
    fn name(&self) -> &'static str {
        "time-travel"
    }

    fn on_tick(
        &mut self,
        cx: &ByzContext<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<ByzAction>, SieveError> {
        let mut out = Vec::new();
        if let Some(mut m) = self.core.complete(cx) {
            let generated = m.timestamp;
            m.timestamp = generated + self.delay.saturating_sub(1);
            out.push(ByzAction::Send {
                message: m,
                to: Targets::All,
                at: (generated + self.delay) * cx.ticks_per_step - 1,
            });
        }
        if let Some((req, _)) = self.core.tick(cx, rng)? {
            out.push(req);
        }
        Ok(out)
    }
}

struct AntiqueTimestamper {
    known: MessageStore,
    start_tick: Tick,
    remaining: u32,
    weight: u64,
    pending: Option<Draft>,
}

impl Adversary for AntiqueTimestamper {
    fn name(&self) -> &'static str {
        "antique-timestamper"
    }

    fn on_tick(
        &mut self,
        cx: &ByzContext<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<ByzAction>, SieveError> {
        for m in cx.incoming {
            self.known.insert(m.clone());
        }
        let mut out = Vec::new();
        if let Some(d) = cx.deliveries.first() {
            if let Some(draft) = self.pending.take() {
                let m = draft.finish(d);
                self.known.insert(m.clone());
                out.push(send_now(cx, m));
            }
        }
        if !cx.has_pending
            && self.pending.is_none()
            && self.remaining > 0
            && cx.tick >= self.start_tick
        {
            let w = self.weight.max(1);
            let label = cx.expected_delivery(w) / cx.ticks_per_step;
            let coffer = layer(&self.known, label.checked_sub(1));
            let draft = Draft::new(
                filler_payload("antique", cx.node, cx.tick),
                coffer,
                label,
                rng,
            );
            out.push(ByzAction::Request {
                gamma: draft.gamma(),
                weight: w,
            });
            self.pending = Some(draft);
            self.remaining -= 1;
        }
        Ok(out)
    }
}

struct HistoryForger {
    known: MessageStore,
    label_step: Step,
    remaining: u32,
    release_tick: Tick,
    forged: BTreeSet<MessageId>,
    pending: Option<Draft>,
    done: bool,
}

impl Adversary for HistoryForger {
    fn name(&self) -> &'static str {
        "history-forger"
    }

    fn on_tick(
        &mut self,
        cx: &ByzContext<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<ByzAction>, SieveError> {
        for m in cx.incoming {
            self.known.insert(m.clone());
        }
        let mut out = Vec::new();
        if let Some(d) = cx.deliveries.first() {
            if let Some(draft) = self.pending.take() {
                let is_successor = draft.label > self.label_step;
                let m = draft.finish(d);
                self.known.insert(m.clone());
                if !is_successor {
                    self.forged.insert(m.id());
                }
                out.push(ByzAction::Send {
                    message: m,
                    to: Targets::All,
                    at: self.release_tick.max(cx.tick),
                });
            }
        }
        if !cx.has_pending && self.pending.is_none() && !self.done {
            let draft = if self.remaining > 0 {
                self.remaining -= 1;
                let coffer = layer(&self.known, self.label_step.checked_sub(1));
                Draft::new(
                    filler_payload("forged", cx.node, cx.tick),
                    coffer,
                    self.label_step,
                    rng,
                )
            } else {
                self.done = true;
                Draft::new(
                    filler_payload("successor", cx.node, cx.tick),
                    self.forged.clone(),
                    self.label_step + 1,
                    rng,
                )
            };
            out.push(ByzAction::Request {
                gamma: draft.gamma(),
                weight: 1,
            });
            self.pending = Some(draft);
        }
        Ok(out)
    }
}

struct Equivocator {
    core: HonestCore,
    /// The second variant, once its request is issued.
    alternate: Option<Draft>,
}

impl Adversary for Equivocator {
    fn name(&self) -> &'static str {
        "equivocator"
    }

    fn on_tick(
        &mut self,
        cx: &ByzContext<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<ByzAction>, SieveError> {
        let mut out = Vec::new();
        let half = cx.correct.len().div_ceil(2);
        let (first, second) = cx.correct.split_at(half);
        if let Some(d) = cx.deliveries.first() {
            if let Some(draft) = self.alternate.take() {
                out.push(ByzAction::Send {
                    message: draft.finish(d),
                    to: Targets::Only(second.to_vec()),
                    at: cx.tick,
                });
            } else if let Some(m) = self.core.complete(cx) {
                let target = if second.is_empty() {
                    Targets::All
                } else {
                    Targets::Only(first.to_vec())
                };
                let alt = Draft::new(
                    filler_payload("equivocation", cx.node, cx.tick),
                    m.coffer.clone(),
                    m.timestamp,
                    rng,
                );
                out.push(ByzAction::Send {
                    message: m,
                    to: target,
                    at: cx.tick,
                });
                if !second.is_empty() {
                    out.push(ByzAction::Request {
                        gamma: alt.gamma(),
                        weight: self.core.sieve.power,
                    });
                    self.alternate = Some(alt);
                }
            }
        }
        let busy = self.alternate.is_some() || cx.has_pending;
        let cx2 = ByzContext {
            has_pending: busy,
            ..*cx
        };
        if let Some((req, _)) = self.core.tick(&cx2, rng)? {
            out.push(req);
        }
        Ok(out)
    }
}

/// Proposal steps offer a private block on the empty chain; every vote is
/// for the empty chain.
struct Griefer {
    node: NodeId,
}

impl UpperLayer for Griefer {
    fn deliver(&mut self, s: Step, _filtered: &WeightedMessageSet) -> Vec<u8> {
        let proposal = s
            .is_multiple_of(2)
            .then(|| Chain::empty().extended(vec![format!("{}-grief-{s}", self.node)], self.node));
        MmrMessage {
            vote: Chain::empty(),
            proposal,
        }
        .encode()
    }
}
