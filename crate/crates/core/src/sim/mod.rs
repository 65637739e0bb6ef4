// SPDX-License-Identifier: Apache-2.0

//! Deterministic tick-level simulator.
//!
//! Every tick runs receive, compute and broadcast for each awake node, then
//! a barrier. Correct nodes run the configured filter policy and the
//! configured application; Byzantine nodes run their strategy.

pub mod adversary;
pub mod checks;
pub mod metrics;
pub mod network;
pub mod random;
pub mod scenario;
pub mod trace;

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::error::SimError;
use crate::mmr::{MmrNode, Opaque, StepOutcome};
use crate::oracle::{BackendSpec, Oracle, RequestOutcome};
use crate::sieve::{
    policy_from_name, CatchUp, FilterPolicy, SieveState, StepDelivery, TickAction, UpperLayer,
};
use crate::types::{Chain, MessageId, NodeId, Rational, SieveMessage, Step, Tick};

use adversary::{Adversary, ByzAction, ByzContext, ByzSetup};
use checks::{Checker, CorrectSend, Verdict};
use metrics::{CommitLog, Metrics};
use network::{Network, Targets};
use scenario::{Application, Scenario};
use trace::{EventKind, Trace, TraceLevel, TraceOutput};

/// Overrides applied on top of a scenario.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub mode: Option<String>,
    pub backend: Option<BackendSpec>,
    pub horizon: Option<Step>,
    pub trace: TraceLevel,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentRecord {
    pub tick: Tick,
    pub sender: NodeId,
    pub message: SieveMessage,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub scenario: String,
    pub seed: u64,
    pub mode: String,
    pub backend: &'static str,
    pub horizon: Step,
    pub verdicts: Vec<Verdict>,
    pub metrics: Metrics,
    /// Filtered sets handed up by correct nodes.
    pub deliveries: BTreeMap<(NodeId, Step), StepDelivery>,
    pub sent: Vec<SentRecord>,
    /// Longest commit of each correct node at the end of the run.
    pub commits: BTreeMap<NodeId, Chain>,
    pub trace: TraceOutput,
    pub supremacy_violation: Option<(Step, Step)>,
}

impl RunOutcome {
    /// True when every asserted verdict passed.
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| !v.asserted || v.passed)
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    pub fn delivery(&self, node: NodeId, s: Step) -> Option<&StepDelivery> {
        self.deliveries.get(&(node, s))
    }
}

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(k);
    r
}

enum App {
    Mmr(Box<MmrNode>),
    Opaque(Opaque),
}

impl App {
    fn layer(&mut self) -> &mut dyn UpperLayer {
        match self {
            App::Mmr(m) => m.as_mut(),
            App::Opaque(o) => o,
        }
    }
}

struct CorrectNode {
    id: NodeId,
    sieve: SieveState,
    app: App,
    rng: ChaCha8Rng,
    /// Step the outstanding request was made in.
    label: Option<Step>,
    /// Silent until this step after a rejoin.
    resume_at: Step,
    catch_up_from: Option<Step>,
    /// First step in which each received message was available.
    visible: BTreeMap<MessageId, Step>,
    commit: Chain,
}

struct ByzNode {
    id: NodeId,
    power: Rational,
    adversary: Box<dyn Adversary>,
    rng: ChaCha8Rng,
}

struct Scheduled {
    from: NodeId,
    message: SieveMessage,
    to: Targets,
    at: Tick,
}

fn message_detail(m: &SieveMessage) -> serde_json::Value {
    json!({
        "id": m.id().short(),
        "timestamp": m.timestamp,
        "weight": m.weight,
        "coffer": m.coffer.len(),
    })
}

pub fn run(scenario: &Scenario, opts: &RunOptions) -> Result<RunOutcome, SimError> {
    let mut sc = scenario.clone();
    if let Some(m) = &opts.mode {
        sc.mode = m.clone();
    }
    if let Some(b) = opts.backend {
        sc.backend = b;
    }
    if let Some(h) = opts.horizon {
        sc.horizon = h;
    }
    sc.validate()?;
    let seed = opts.seed.unwrap_or(sc.seed);
    Simulation::new(&sc, seed, opts.trace).run()
}

struct Simulation<'a> {
    sc: &'a Scenario,
    seed: u64,
    k: u64,
    inactive: BTreeMap<NodeId, BTreeSet<Step>>,
    correct_ids: Vec<NodeId>,
    byz_ids: Vec<NodeId>,
    oracle: Oracle,
    net: Network,
    policy: Box<dyn FilterPolicy>,
    correct: Vec<CorrectNode>,
    byzantine: Vec<ByzNode>,
    scheduled: Vec<Scheduled>,
    checker: Checker,
    ordering: bool,
    trace: Trace,
    correct_sends: BTreeMap<Step, Vec<CorrectSend>>,
    deliveries: BTreeMap<(NodeId, Step), StepDelivery>,
    sent: Vec<SentRecord>,
    log: CommitLog,
}

impl<'a> Simulation<'a> {
    fn new(sc: &'a Scenario, seed: u64, level: TraceLevel) -> Self {
        let k = sc.ticks_per_step;
        let mut oracle = Oracle::new(k, sc.delivery, sc.backend.build(), stream(seed, 0));
        let inactive = sc
            .nodes
            .iter()
            .map(|n| (n.node_id(), n.inactive.iter().copied().collect()))
            .collect();
        let correct_ids: Vec<NodeId> = sc.correct_nodes().map(|n| n.node_id()).collect();
        let byz_ids: Vec<NodeId> = sc.byzantine_nodes().map(|n| n.node_id()).collect();
        for n in &sc.nodes {
            oracle.add_node(n.node_id(), n.power, !n.is_correct());
        }
        let correct = sc
            .correct_nodes()
            .map(|n| {
                let id = n.node_id();
                let base = 3 * u64::from(n.id) + 1;
                let app = match sc.application {
                    Application::Mmr => {
                        App::Mmr(Box::new(MmrNode::new(id, stream(seed, base + 1))))
                    }
                    Application::Opaque => App::Opaque(Opaque),
                };
                CorrectNode {
                    id,
                    sieve: SieveState::new(n.power.to_integer(), k, sc.rho),
                    app,
                    rng: stream(seed, base),
                    label: None,
                    resume_at: 0,
                    catch_up_from: None,
                    visible: BTreeMap::new(),
                    commit: Chain::empty(),
                }
            })
            .collect();
        let byzantine = sc
            .byzantine_nodes()
            .map(|n| {
                let id = n.node_id();
                let base = 3 * u64::from(n.id) + 1;
                let setup = ByzSetup {
                    node: id,
                    power: n.power,
                    ticks_per_step: k,
                    rho: sc.rho,
                    application: sc.application,
                    rng_seed: rand::RngCore::next_u64(&mut stream(seed, base + 1)),
                };
                ByzNode {
                    id,
                    power: n.power,
                    adversary: n.strategy.as_ref().expect("validated").build(&setup),
                    rng: stream(seed, base),
                }
            })
            .collect();
        let asserted = !sc.violation && sc.mode == "sieve";
        let ordering = sc.application == Application::Mmr;
        let ordering_asserted = asserted && sc.rho <= Rational::new(1, 3);
        Self {
            sc,
            seed,
            k,
            inactive,
            net: Network::new(correct_ids.iter().copied(), byz_ids.iter().copied()),
            correct_ids,
            byz_ids,
            oracle,
            policy: policy_from_name(&sc.mode).expect("validated"),
            correct,
            byzantine,
            scheduled: Vec::new(),
            checker: Checker::new(sc.rho, asserted, ordering.then_some(ordering_asserted)),
            ordering,
            trace: Trace::new(level),
            correct_sends: BTreeMap::new(),
            deliveries: BTreeMap::new(),
            sent: Vec::new(),
            log: CommitLog::default(),
        }
    }

    fn active(&self, n: NodeId, s: Step) -> bool {
        self.inactive.get(&n).is_none_or(|i| !i.contains(&s))
    }

    fn run(mut self) -> Result<RunOutcome, SimError> {
        let horizon = self.sc.horizon;
        for t in 0..horizon * self.k {
            let s = t / self.k;
            for i in 0..self.correct.len() {
                if self.active(self.correct[i].id, s) {
                    self.correct_tick(i, t)?;
                }
            }
            for i in 0..self.byzantine.len() {
                if self.active(self.byzantine[i].id, s) {
                    self.byzantine_tick(i, t)?;
                }
            }
            self.dispatch(t);
            let inactive = &self.inactive;
            self.oracle
                .end_tick(|n| inactive.get(&n).is_none_or(|i| !i.contains(&s)));
            self.net.barrier();
        }
        self.finish()
    }

    fn correct_tick(&mut self, i: usize, t: Tick) -> Result<(), SimError> {
        let s = t / self.k;
        let id = self.correct[i].id;
        let incoming = self.net.take(id);
        let responses = self.oracle.deliver_due(id, t);
        if self.trace.enabled() {
            for m in &incoming {
                self.trace
                    .emit(t, id, EventKind::Receive, message_detail(m));
            }
            for d in &responses {
                self.trace.emit(
                    t,
                    id,
                    EventKind::DpowDeliver,
                    json!({ "dpow": d.dpow.short(), "weight": d.weight }),
                );
            }
        }
        let node = &mut self.correct[i];
        let avail = t.div_ceil(self.k);
        for m in &incoming {
            node.visible.entry(m.id()).or_insert(avail);
        }
        node.sieve.receive(incoming);
        if let (Some(d), Some(label)) = (responses.first(), node.label) {
            if let Some(m) = node.sieve.complete(d, label) {
                node.label = None;
                node.visible.entry(m.id()).or_insert(avail);
                self.correct_sends
                    .entry(label)
                    .or_default()
                    .push(CorrectSend {
                        node: id,
                        id: m.id(),
                        weight: m.weight,
                    });
                self.broadcast(t, id, m, Targets::All);
            }
        }
        if !t.is_multiple_of(self.k) {
            return Ok(());
        }
        let rejoin = s > 0 && !self.active(id, s - 1);
        let node = &mut self.correct[i];
        if rejoin && self.sc.bootstrap_delay > 0 {
            node.catch_up_from = Some(s);
            node.resume_at = s + self.sc.bootstrap_delay;
        }
        if s < node.resume_at {
            return Ok(());
        }
        let catch_up = node.catch_up_from.take().map(|from| CatchUp {
            from,
            visible: std::mem::take(&mut node.visible),
        });
        let policy: &dyn FilterPolicy = match &catch_up {
            Some(c) => c,
            None => self.policy.as_ref(),
        };
        let (delivery, payload) =
            node.sieve
                .filter_step(s, policy, &self.oracle, node.app.layer())?;
        let prev = s.checked_sub(1).and_then(|p| self.correct_sends.get(&p));
        self.checker.on_delivery(
            t,
            id,
            s,
            &delivery.filtered,
            prev.map_or(&[][..], Vec::as_slice),
            &self.oracle.ground_truth(),
            &self.oracle,
            self.ordering,
        );
        if self.trace.enabled() {
            let ids: Vec<String> = delivery.filtered.keys().map(|m| m.short()).collect();
            self.trace.emit(
                t,
                id,
                EventKind::TtrbDeliver,
                json!({ "step": s, "messages": ids, "bootstrapped": delivery.bootstrapped }),
            );
        }
        self.deliveries.insert((id, s), delivery);
        if let App::Mmr(mmr) = &node.app {
            let out = mmr.outcomes.last().cloned().unwrap_or_default();
            let longest = mmr.state.committed.clone();
            self.on_mmr(i, t, &out, longest);
        }
        let node = &mut self.correct[i];
        if self.oracle.has_pending(id) || node.sieve.pending.is_some() {
            return Ok(());
        }
        let TickAction::RequestDpow { gamma, weight } = node.sieve.prepare(payload, &mut node.rng)
        else {
            unreachable!("prepare always requests")
        };
        match self.oracle.request_dpow(id, &gamma, weight, t)? {
            RequestOutcome::Scheduled { required_ticks } => {
                node.label = Some(s);
                self.trace.emit(
                    t,
                    id,
                    EventKind::DpowRequest,
                    json!({ "weight": weight, "required_ticks": required_ticks }),
                );
            }
            RequestOutcome::RejectedPending => node.sieve.pending = None,
        }
        Ok(())
    }

    fn on_mmr(&mut self, i: usize, t: Tick, out: &StepOutcome, longest: Chain) {
        let id = self.correct[i].id;
        let s = out.step;
        self.checker.on_mmr(t, id, out, &self.correct[i].commit);
        if let Some(p) = out.message.proposal.as_ref().and_then(Chain::tip) {
            self.log.proposals.push((s, p));
        }
        if let Some(l) = &out.leader {
            self.trace.emit(
                t,
                id,
                EventKind::Leader,
                json!({ "step": s, "dpow": l.short() }),
            );
        }
        if let Some(c) = &out.committed {
            self.log.commit(id, s, c.ids());
            self.trace.emit(
                t,
                id,
                EventKind::Commit,
                json!({ "step": s, "length": c.len(), "tip": c.tip().map(|b| hex::encode(&b.0[..4])) }),
            );
        }
        self.correct[i].commit = longest;
    }

    fn byzantine_tick(&mut self, i: usize, t: Tick) -> Result<(), SimError> {
        let id = self.byzantine[i].id;
        let incoming = self.net.take(id);
        let deliveries = self.oracle.deliver_due(id, t);
        for d in &deliveries {
            self.trace.emit(
                t,
                id,
                EventKind::DpowDeliver,
                json!({ "dpow": d.dpow.short(), "weight": d.weight }),
            );
        }
        let node = &mut self.byzantine[i];
        let cx = ByzContext {
            node: id,
            tick: t,
            ticks_per_step: self.k,
            power: node.power,
            convention: self.sc.delivery,
            incoming: &incoming,
            deliveries: &deliveries,
            has_pending: self.oracle.has_pending(id),
            correct: &self.correct_ids,
            verifier: &self.oracle,
        };
        let actions = node.adversary.on_tick(&cx, &mut node.rng)?;
        for a in actions {
            match a {
                ByzAction::Request { gamma, weight } => {
                    if let RequestOutcome::Scheduled { required_ticks } =
                        self.oracle.request_dpow(id, &gamma, weight, t)?
                    {
                        self.trace.emit(
                            t,
                            id,
                            EventKind::DpowRequest,
                            json!({ "weight": weight, "required_ticks": required_ticks }),
                        );
                    }
                }
                ByzAction::Send { message, to, at } => self.scheduled.push(Scheduled {
                    from: id,
                    message,
                    to,
                    at,
                }),
            }
        }
        Ok(())
    }

    /// Releases due Byzantine sends while some Byzantine node is awake.
    fn dispatch(&mut self, t: Tick) {
        let s = t / self.k;
        if !self.byz_ids.iter().any(|b| self.active(*b, s)) {
            return;
        }
        let (due, later): (Vec<_>, Vec<_>) = std::mem::take(&mut self.scheduled)
            .into_iter()
            .partition(|x| x.at <= t);
        self.scheduled = later;
        for x in due {
            self.broadcast(t, x.from, x.message, x.to);
        }
    }

    fn broadcast(&mut self, t: Tick, from: NodeId, m: SieveMessage, to: Targets) {
        if self.trace.enabled() {
            let mut detail = message_detail(&m);
            if let Targets::Only(list) = &to {
                detail["to"] = json!(list);
            }
            self.trace.emit(t, from, EventKind::Send, detail);
        }
        self.net.send(from, m.clone(), &to);
        self.sent.push(SentRecord {
            tick: t,
            sender: from,
            message: m,
        });
    }

    fn finish(mut self) -> Result<RunOutcome, SimError> {
        let horizon = self.sc.horizon;
        let violation =
            self.checker
                .audit(&self.oracle.ground_truth(), horizon - 1, !self.sc.violation);
        let metrics = if self.ordering {
            let inactive = &self.inactive;
            self.log.metrics(horizon, &self.correct_ids, &|n, s| {
                inactive.get(&n).is_none_or(|i| !i.contains(&s))
            })
        } else {
            Metrics::default()
        };
        let verdicts = self.checker.into_verdicts();
        let end = horizon * self.k;
        for v in &verdicts {
            self.trace.emit(
                end,
                NodeId(0),
                EventKind::CheckerVerdict,
                json!({ "name": v.name, "passed": v.passed, "asserted": v.asserted, "checks": v.checks }),
            );
        }
        Ok(RunOutcome {
            scenario: self.sc.name.clone(),
            seed: self.seed,
            mode: self.sc.mode.clone(),
            backend: self.oracle.backend_name(),
            horizon,
            verdicts,
            metrics,
            deliveries: self.deliveries,
            sent: self.sent,
            commits: self.correct.into_iter().map(|n| (n.id, n.commit)).collect(),
            trace: self.trace.finish(),
            supremacy_violation: violation,
        })
    }
}
