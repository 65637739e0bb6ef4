// SPDX-License-Identifier: Apache-2.0

//! The DPoW oracle: registration of `⟨γ, w⟩`, delivery scheduled by
//! computing power and activity, verification, and ground-truth generation
//! steps.
//!
//! Protocol code only ever sees the oracle through [`DpowVerifier`]; the
//! generation steps and the evaluation history are reachable only through
//! [`GroundTruth`], which the invariant checkers use.

use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::error::{OracleError, ScenarioError};
use crate::powlib::{self, MerkleProof, PowParams};
use crate::types::{Dpow, NodeId, Rational, Step, Tick};

/// Node-visible verification interface.
pub trait DpowVerifier {
    fn verify(&self, dpow: &Dpow, gamma: &[u8], w: u64) -> bool;
}

/// How many active ticks a request of weight `w` needs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeliveryConvention {
    /// `⌈w(K−1)/P⌉`: an in-step request of weight `P` issued on the first
    /// tick lands on the last tick of the same step.
    #[default]
    LastTick,
    /// `⌈wK/P⌉`, which lands such a request on the next step's first tick.
    FullStep,
}

impl DeliveryConvention {
    pub fn required_ticks(self, w: u64, ticks_per_step: u64, power: Rational) -> u64 {
        let span = match self {
            DeliveryConvention::LastTick => ticks_per_step - 1,
            DeliveryConvention::FullStep => ticks_per_step,
        };
        let num = w as u128 * span as u128 * *power.denom() as u128;
        let den = *power.numer() as u128;
        num.div_ceil(den).max(1) as u64
    }
}

/// Produces and checks DPoW values. Registered by name, see [`backend_from_name`].
pub trait DpowBackend: Send {
    fn name(&self) -> &'static str;
    /// Produces a fresh evaluation for a newly registered `⟨γ, w⟩`.
    fn evaluate(&mut self, gamma: &[u8], w: u64, rng: &mut ChaCha8Rng) -> Dpow;
    /// Backend-level validity of a registered evaluation.
    fn check(&self, dpow: &Dpow, gamma: &[u8], w: u64) -> bool;
}

/// Uniformly random 256-bit evaluations.
#[derive(Debug, Default)]
pub struct IdealBackend;

impl DpowBackend for IdealBackend {
    fn name(&self) -> &'static str {
        "ideal"
    }

    fn evaluate(&mut self, _gamma: &[u8], _w: u64, rng: &mut ChaCha8Rng) -> Dpow {
        let mut d = [0u8; 32];
        rng.fill_bytes(&mut d);
        Dpow(d)
    }

    fn check(&self, _dpow: &Dpow, _gamma: &[u8], _w: u64) -> bool {
        true
    }
}

/// Evaluations are Merkle roots of real proofs over `leaves_per_weight · w` leaves.
#[derive(Debug)]
pub struct MerkleBackend {
    pub params: PowParams,
    pub leaves_per_weight: u64,
    proofs: BTreeMap<Dpow, MerkleProof>,
}

impl MerkleBackend {
    pub fn new(params: PowParams, leaves_per_weight: u64) -> Self {
        Self {
            params,
            leaves_per_weight: leaves_per_weight.max(params.k as u64),
            proofs: BTreeMap::new(),
        }
    }

    fn challenge(gamma: &[u8], w: u64) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(gamma);
        h.update(w.to_be_bytes());
        h.finalize().into()
    }
}

impl DpowBackend for MerkleBackend {
    fn name(&self) -> &'static str {
        "merkle"
    }

    fn evaluate(&mut self, gamma: &[u8], w: u64, _rng: &mut ChaCha8Rng) -> Dpow {
        let chi = Self::challenge(gamma, w);
        let (proof, _) = powlib::prove(&chi, w * self.leaves_per_weight, self.params)
            .expect("leaves_per_weight is at least k");
        let dpow = Dpow(proof.root);
        self.proofs.insert(dpow, proof);
        dpow
    }

    fn check(&self, dpow: &Dpow, gamma: &[u8], w: u64) -> bool {
        let chi = Self::challenge(gamma, w);
        self.proofs
            .get(dpow)
            .is_some_and(|p| powlib::verify(p, &chi, w * self.leaves_per_weight, self.params).0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendSpec {
    #[default]
    Ideal,
    Merkle {
        k: u32,
        leaves_per_weight: u64,
    },
}

pub const BACKENDS: &[&str] = &["ideal", "merkle"];

pub fn backend_from_name(name: &str) -> Result<BackendSpec, ScenarioError> {
    match name {
        "ideal" => Ok(BackendSpec::Ideal),
        "merkle" => Ok(BackendSpec::Merkle {
            k: 4,
            leaves_per_weight: 8,
        }),
        other => Err(ScenarioError::Unknown {
            kind: "dpow backend",
            name: other.to_string(),
            available: BACKENDS.join(", "),
        }),
    }
}

impl BackendSpec {
    pub fn build(self) -> Box<dyn DpowBackend> {
        match self {
            BackendSpec::Ideal => Box::new(IdealBackend),
            BackendSpec::Merkle {
                k,
                leaves_per_weight,
            } => Box::new(MerkleBackend::new(PowParams { k }, leaves_per_weight)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleRecord {
    pub gamma: Vec<u8>,
    pub weight: u64,
    pub dpow: Dpow,
    pub generation_step: Step,
    pub registered_tick: Tick,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PendingRequest {
    pub node: NodeId,
    pub dpow: Dpow,
    pub call_tick: Tick,
    pub required_ticks: u64,
    pub accumulated_ticks: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RequestOutcome {
    Scheduled { required_ticks: u64 },
    RejectedPending,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Delivery {
    pub dpow: Dpow,
    pub gamma: Vec<u8>,
    pub weight: u64,
}

/// A completed evaluation, the unit of the correct-supremacy audit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Evaluation {
    pub node: NodeId,
    pub byzantine: bool,
    pub weight: u64,
    pub call_step: Step,
    pub delivery_step: Step,
    pub dpow: Dpow,
}

pub struct Oracle {
    ticks_per_step: u64,
    convention: DeliveryConvention,
    registry: BTreeMap<(Vec<u8>, u64), Dpow>,
    records: BTreeMap<Dpow, OracleRecord>,
    pending: BTreeMap<NodeId, PendingRequest>,
    powers: BTreeMap<NodeId, Rational>,
    byzantine: BTreeSet<NodeId>,
    history: Vec<Evaluation>,
    backend: Box<dyn DpowBackend>,
    rng: ChaCha8Rng,
}

impl Oracle {
    pub fn new(
        ticks_per_step: u64,
        convention: DeliveryConvention,
        backend: Box<dyn DpowBackend>,
        rng: ChaCha8Rng,
    ) -> Self {
        assert!(ticks_per_step >= 2, "a step needs at least two ticks");
        Self {
            ticks_per_step,
            convention,
            registry: BTreeMap::new(),
            records: BTreeMap::new(),
            pending: BTreeMap::new(),
            powers: BTreeMap::new(),
            byzantine: BTreeSet::new(),
            history: Vec::new(),
            backend,
            rng,
        }
    }

    pub fn add_node(&mut self, node: NodeId, power: Rational, byzantine: bool) {
        self.powers.insert(node, power);
        if byzantine {
            self.byzantine.insert(node);
        }
    }

    pub fn has_pending(&self, node: NodeId) -> bool {
        self.pending.contains_key(&node)
    }

    pub fn pending(&self, node: NodeId) -> Option<&PendingRequest> {
        self.pending.get(&node)
    }

    pub fn request_dpow(
        &mut self,
        node: NodeId,
        gamma: &[u8],
        w: u64,
        tick: Tick,
    ) -> Result<RequestOutcome, OracleError> {
        if w == 0 {
            return Err(OracleError::ZeroWeight);
        }
        if self.pending.contains_key(&node) {
            return Ok(RequestOutcome::RejectedPending);
        }
        let key = (gamma.to_vec(), w);
        let dpow = match self.registry.get(&key) {
            Some(d) => *d,
            None => {
                let dpow = self.backend.evaluate(gamma, w, &mut self.rng);
                if self.records.contains_key(&dpow) {
                    return Err(OracleError::Collision);
                }
                self.records.insert(
                    dpow,
                    OracleRecord {
                        gamma: gamma.to_vec(),
                        weight: w,
                        dpow,
                        generation_step: tick / self.ticks_per_step,
                        registered_tick: tick,
                    },
                );
                self.registry.insert(key, dpow);
                dpow
            }
        };
        let power = *self
            .powers
            .get(&node)
            .expect("requesting node must be registered with the oracle");
        let required_ticks = self
            .convention
            .required_ticks(w, self.ticks_per_step, power);
        self.pending.insert(
            node,
            PendingRequest {
                node,
                dpow,
                call_tick: tick,
                required_ticks,
                accumulated_ticks: 0,
            },
        );
        Ok(RequestOutcome::Scheduled { required_ticks })
    }

    /// Phase (i): hands over the evaluation whose active-tick requirement has
    /// been met. The caller guarantees `node` is active at `tick`.
    pub fn deliver_due(&mut self, node: NodeId, tick: Tick) -> Vec<Delivery> {
        let due = self
            .pending
            .get(&node)
            .is_some_and(|p| tick > p.call_tick && p.accumulated_ticks >= p.required_ticks);
        if !due {
            return Vec::new();
        }
        let p = self.pending.remove(&node).unwrap();
        let rec = &self.records[&p.dpow];
        self.history.push(Evaluation {
            node,
            byzantine: self.byzantine.contains(&node),
            weight: rec.weight,
            call_step: p.call_tick / self.ticks_per_step,
            delivery_step: tick / self.ticks_per_step,
            dpow: p.dpow,
        });
        vec![Delivery {
            dpow: p.dpow,
            gamma: rec.gamma.clone(),
            weight: rec.weight,
        }]
    }

    /// Tick barrier: every node active during `tick` accumulates one tick.
    pub fn end_tick(&mut self, active: impl Fn(NodeId) -> bool) {
        for p in self.pending.values_mut() {
            if active(p.node) {
                p.accumulated_ticks += 1;
            }
        }
    }

    pub fn ground_truth(&self) -> GroundTruth<'_> {
        GroundTruth { oracle: self }
    }

    pub fn backend_name(&self) -> &'static str {
        self.backend.name()
    }
}

impl DpowVerifier for Oracle {
    fn verify(&self, dpow: &Dpow, gamma: &[u8], w: u64) -> bool {
        self.records
            .get(dpow)
            .is_some_and(|r| r.weight == w && r.gamma == gamma)
            && self.backend.check(dpow, gamma, w)
    }
}

/// Checker-only view of the oracle.
pub struct GroundTruth<'a> {
    oracle: &'a Oracle,
}

impl GroundTruth<'_> {
    pub fn generation_step_of(&self, dpow: &Dpow) -> Result<Step, OracleError> {
        self.oracle
            .records
            .get(dpow)
            .map(|r| r.generation_step)
            .ok_or(OracleError::UnknownDpow)
    }

    pub fn record(&self, dpow: &Dpow) -> Option<&OracleRecord> {
        self.oracle.records.get(dpow)
    }

    pub fn history(&self) -> &[Evaluation] {
        &self.oracle.history
    }

    /// `Σ_B < ρ Σ` over evaluations called and delivered within `[from, to]`.
    /// An interval without evaluations passes vacuously.
    pub fn audit_correct_supremacy(&self, rho: Rational, from: Step, to: Step) -> bool {
        audit_interval(&self.oracle.history, rho, from, to)
    }

    /// First interval within `[0, last]` violating correct supremacy, if any.
    pub fn first_supremacy_violation(&self, rho: Rational, last: Step) -> Option<(Step, Step)> {
        first_violation(&self.oracle.history, rho, last)
    }
}

pub fn audit_interval(history: &[Evaluation], rho: Rational, from: Step, to: Step) -> bool {
    let (mut byz, mut all) = (0u64, 0u64);
    for e in history {
        if e.call_step >= from && e.delivery_step <= to {
            all += e.weight;
            if e.byzantine {
                byz += e.weight;
            }
        }
    }
    all == 0 || (byz as u128) * (*rho.denom() as u128) < (*rho.numer() as u128) * (all as u128)
}

/// Scans every interval using per-(call, delivery) step buckets.
pub fn first_violation(history: &[Evaluation], rho: Rational, last: Step) -> Option<(Step, Step)> {
    let n = last as usize + 1;
    let mut byz = vec![vec![0u64; n]; n];
    let mut all = vec![vec![0u64; n]; n];
    for e in history {
        let (c, d) = (e.call_step as usize, e.delivery_step as usize);
        if d < n {
            all[c][d] += e.weight;
            if e.byzantine {
                byz[c][d] += e.weight;
            }
        }
    }
    for from in 0..n {
        // column sums over calls in [from, to] for each delivery step
        let (mut sb, mut sa) = (0u64, 0u64);
        for to in from..n {
            for c in from..=to {
                sb += byz[c][to];
                sa += all[c][to];
            }
            if sa > 0
                && (sb as u128) * (*rho.denom() as u128) >= (*rho.numer() as u128) * (sa as u128)
            {
                return Some((from as Step, to as Step));
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    const K: u64 = 3;

    fn oracle() -> Oracle {
        let mut o = Oracle::new(
            K,
            DeliveryConvention::LastTick,
            Box::new(IdealBackend),
            ChaCha8Rng::seed_from_u64(1),
        );
        o.add_node(NodeId(1), Rational::from_integer(1), false);
        o.add_node(NodeId(3), Rational::new(3, 2), true);
        o
    }

    /// Runs the oracle for `node` with an always-on schedule unless
    /// `inactive_steps` says otherwise, returning the delivery tick.
    fn run_until_delivery(o: &mut Oracle, node: NodeId, from: Tick, inactive: &[Step]) -> Tick {
        let mut t = from;
        loop {
            let active = !inactive.contains(&(t / K));
            if active && t > from && !o.deliver_due(node, t).is_empty() {
                return t;
            }
            o.end_tick(|n| n != node || active);
            t += 1;
            assert!(t < from + 1000);
        }
    }

    #[test]
    fn correct_node_delivers_on_last_tick() {
        let mut o = oracle();
        let out = o.request_dpow(NodeId(1), b"g", 1, 0).unwrap();
        assert_eq!(out, RequestOutcome::Scheduled { required_ticks: 2 });
        assert_eq!(run_until_delivery(&mut o, NodeId(1), 0, &[]), 2);
    }

    #[test]
    fn full_step_convention_spills_into_next_step() {
        assert_eq!(
            DeliveryConvention::FullStep.required_ticks(1, K, Rational::from_integer(1)),
            3
        );
        assert_eq!(
            DeliveryConvention::LastTick.required_ticks(1, K, Rational::new(3, 2)),
            2
        );
        assert_eq!(
            DeliveryConvention::LastTick.required_ticks(4, 5, Rational::from_integer(4)),
            4
        );
    }

    #[test]
    fn byzantine_cadence_every_two_ticks() {
        let mut o = oracle();
        let mut t = 0;
        let mut deliveries = vec![];
        for i in 0..4u8 {
            o.request_dpow(NodeId(3), &[i], 1, t).unwrap();
            t = run_until_delivery(&mut o, NodeId(3), t, &[]);
            deliveries.push(t);
        }
        assert_eq!(deliveries, vec![2, 4, 6, 8]);
    }

    #[test]
    fn second_request_rejected() {
        let mut o = oracle();
        o.request_dpow(NodeId(1), b"g", 1, 0).unwrap();
        let before = o.pending(NodeId(1)).cloned();
        assert_eq!(
            o.request_dpow(NodeId(1), b"h", 1, 1).unwrap(),
            RequestOutcome::RejectedPending
        );
        assert_eq!(o.pending(NodeId(1)).cloned(), before);
        assert!(!o.verify(&Dpow([0; 32]), b"h", 1));
        assert_eq!(o.records.len(), 1);
    }

    #[test]
    fn no_pending_no_delivery() {
        let mut o = oracle();
        assert!(o.deliver_due(NodeId(1), 5).is_empty());
    }

    #[test]
    fn inactivity_freezes_progress() {
        let mut o = oracle();
        o.request_dpow(NodeId(1), b"g", 1, 1).unwrap();
        // active at tick 1 (one tick accumulated), asleep during steps 1..=5
        let t = run_until_delivery(&mut o, NodeId(1), 1, &[1, 2, 3, 4, 5]);
        // request tick + 2 required ticks + 15 ticks of inactivity
        assert_eq!(t, 1 + 2 + 15);
    }

    #[test]
    fn verify_and_ground_truth() {
        let mut o = oracle();
        o.request_dpow(NodeId(1), b"g", 1, 4).unwrap();
        let t = run_until_delivery(&mut o, NodeId(1), 4, &[]);
        assert_eq!(t, 6);
        let hist = o.ground_truth().history().to_vec();
        let dpow = hist[0].dpow;
        assert!(o.verify(&dpow, b"g", 1));
        assert!(!o.verify(&dpow, b"g", 2));
        assert!(!o.verify(&dpow, b"other", 1));
        assert_eq!(o.ground_truth().generation_step_of(&dpow), Ok(1));
        assert_eq!(
            o.ground_truth().generation_step_of(&Dpow([9; 32])),
            Err(OracleError::UnknownDpow)
        );
    }

    #[test]
    fn merkle_backend_verifies() {
        let mut o = Oracle::new(
            K,
            DeliveryConvention::LastTick,
            BackendSpec::Merkle {
                k: 4,
                leaves_per_weight: 8,
            }
            .build(),
            ChaCha8Rng::seed_from_u64(2),
        );
        o.add_node(NodeId(1), Rational::from_integer(2), false);
        o.request_dpow(NodeId(1), b"g", 2, 0).unwrap();
        o.end_tick(|_| true);
        o.end_tick(|_| true);
        let d = o.deliver_due(NodeId(1), 2);
        assert_eq!(d.len(), 1);
        assert!(o.verify(&d[0].dpow, b"g", 2));
        assert!(!o.verify(&d[0].dpow, b"g", 1));
    }

    fn eval(byzantine: bool, w: u64, call: Step, deliv: Step) -> Evaluation {
        Evaluation {
            node: NodeId(0),
            byzantine,
            weight: w,
            call_step: call,
            delivery_step: deliv,
            dpow: Dpow::default(),
        }
    }

    #[test]
    fn supremacy_audit() {
        let half = Rational::new(1, 2);
        let h = vec![
            eval(false, 1, 0, 0),
            eval(false, 1, 0, 0),
            eval(true, 1, 0, 0),
        ];
        assert!(audit_interval(&h, half, 0, 0));
        assert!(!audit_interval(&h, Rational::new(1, 3), 0, 0));
        assert!(audit_interval(&[], half, 0, 3));
        let all_correct = vec![eval(false, 3, 0, 0), eval(false, 3, 1, 1)];
        assert_eq!(
            first_violation(&all_correct, Rational::new(1, 100), 1),
            None
        );
        let heavy = vec![eval(false, 1, 0, 0), eval(true, 2, 0, 0)];
        assert_eq!(first_violation(&heavy, half, 2), Some((0, 0)));
    }

    #[test]
    fn interval_scan_matches_brute_force() {
        let h = vec![
            eval(false, 2, 0, 0),
            eval(true, 1, 0, 1),
            eval(true, 1, 1, 1),
            eval(false, 2, 1, 1),
            eval(true, 3, 2, 2),
            eval(false, 1, 2, 3),
        ];
        let rho = Rational::new(1, 2);
        let brute = (0..=3)
            .flat_map(|a| (a..=3).map(move |b| (a, b)))
            .find(|&(a, b)| !audit_interval(&h, rho, a, b));
        assert_eq!(first_violation(&h, rho, 3), brute);
    }
}
