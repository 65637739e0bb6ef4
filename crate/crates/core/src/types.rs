// SPDX-License-Identifier: Apache-2.0

//! Value types shared by every layer: DPoW evaluations, Sieve messages,
//! weighted message sets, blocks and chains, plus the coffer-DAG predicates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::error::ParseError;

/// Exact rational used for ρ and for computing powers.
pub type Rational = Ratio<u64>;

pub type Step = u64;
pub type Tick = u64;

/// Node identifier. Nodes are processed in ascending id order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// A DPoW evaluation value. Doubles as the message identifier.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Dpow(pub [u8; 32]);

pub type MessageId = Dpow;

impl Dpow {
    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for Dpow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dpow({})", self.short())
    }
}

impl fmt::Display for Dpow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl Serialize for Dpow {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for Dpow {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("dpow must be 32 bytes"))?;
        Ok(Dpow(arr))
    }
}

/// Parses `"3/2"`, `"1.5"` or `"2"` into an exact rational.
pub fn parse_rational(s: &str) -> Result<Rational, ParseError> {
    let s = s.trim();
    let bad = || ParseError::Rational(s.to_string());
    if let Some((n, d)) = s.split_once('/') {
        let n: u64 = n.trim().parse().map_err(|_| bad())?;
        let d: u64 = d.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        return Ok(Rational::new(n, d));
    }
    if let Some((int, frac)) = s.split_once('.') {
        if frac.is_empty() || frac.len() > 18 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let int: u64 = if int.is_empty() {
            0
        } else {
            int.parse().map_err(|_| bad())?
        };
        let den = 10u64.pow(frac.len() as u32);
        let f: u64 = frac.parse().map_err(|_| bad())?;
        let num = int
            .checked_mul(den)
            .and_then(|v| v.checked_add(f))
            .ok_or_else(bad)?;
        return Ok(Rational::new(num, den));
    }
    s.parse::<u64>()
        .map(Rational::from_integer)
        .map_err(|_| bad())
}

pub fn format_rational(r: &Rational) -> String {
    if *r.denom() == 1 {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// `part > frac * whole`, exactly.
pub fn exceeds_fraction(part: u64, whole: u64, frac: Rational) -> bool {
    (part as u128) * (*frac.denom() as u128) > (*frac.numer() as u128) * (whole as u128)
}

/// `part > (1 - rho) * whole`, exactly. Requires `rho <= 1`.
pub fn exceeds_complement(part: u64, whole: u64, rho: Rational) -> bool {
    let den = *rho.denom() as u128;
    let keep = den - *rho.numer() as u128;
    (part as u128) * den > keep * (whole as u128)
}

/// The unit of Sieve broadcast. The DPoW is computed over
/// `(payload, coffer, nonce)`; the timestamp is a free-standing claim.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SieveMessage {
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
    pub timestamp: Step,
    pub coffer: BTreeSet<MessageId>,
    pub nonce: u64,
    pub dpow: Dpow,
    pub weight: u64,
}

impl SieveMessage {
    pub fn id(&self) -> MessageId {
        self.dpow
    }

    /// Canonical byte encoding of γ = ⟨payload, coffer, nonce⟩ handed to the oracle.
    pub fn gamma(&self) -> Vec<u8> {
        encode_gamma(&self.payload, &self.coffer, self.nonce)
    }
}

pub fn encode_gamma(payload: &[u8], coffer: &BTreeSet<MessageId>, nonce: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 32 * coffer.len() + 24);
    out.extend_from_slice(&(payload.len() as u64).to_be_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&(coffer.len() as u64).to_be_bytes());
    for id in coffer {
        out.extend_from_slice(&id.0);
    }
    out.extend_from_slice(&nonce.to_be_bytes());
    out
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

/// Run-wide message store resolving coffer references.
#[derive(Clone, Debug, Default)]
pub struct MessageStore {
    messages: BTreeMap<MessageId, SieveMessage>,
}

impl MessageStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts `m` unless a message with the same id is already known.
    /// Returns whether it was new.
    pub fn insert(&mut self, m: SieveMessage) -> bool {
        use std::collections::btree_map::Entry;
        match self.messages.entry(m.id()) {
            Entry::Vacant(e) => {
                e.insert(m);
                true
            }
            Entry::Occupied(_) => false,
        }
    }

    pub fn get(&self, id: &MessageId) -> Option<&SieveMessage> {
        self.messages.get(id)
    }

    pub fn contains(&self, id: &MessageId) -> bool {
        self.messages.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SieveMessage> {
        self.messages.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &MessageId> {
        self.messages.keys()
    }

    /// Weight of a coffer, or `None` if any reference is unresolved.
    pub fn coffer_weight(&self, m: &SieveMessage) -> Option<u64> {
        m.coffer
            .iter()
            .map(|id| self.get(id).map(|c| c.weight))
            .sum()
    }
}

impl FromIterator<SieveMessage> for MessageStore {
    fn from_iter<I: IntoIterator<Item = SieveMessage>>(iter: I) -> Self {
        let mut store = MessageStore::new();
        for m in iter {
            store.insert(m);
        }
        store
    }
}

/// A set of messages keyed by id.
pub type WeightedMessageSet = BTreeMap<MessageId, SieveMessage>;

pub fn weight<'a>(set: impl IntoIterator<Item = &'a SieveMessage>) -> u64 {
    set.into_iter().map(|m| m.weight).sum()
}

pub fn restrict_to_timestamp(set: &WeightedMessageSet, s: Step) -> WeightedMessageSet {
    set.iter()
        .filter(|(_, m)| m.timestamp == s)
        .map(|(k, v)| (*k, v.clone()))
        .collect()
}

/// `x ⊆ coffer(m)` and `weight(x) > (1 - rho) * weight(coffer(m))`.
///
/// Coffer weights are resolved through `store`; an unresolvable coffer is never
/// consistent.
pub fn is_consistent_successor<'a>(
    x: impl IntoIterator<Item = &'a SieveMessage>,
    m: &SieveMessage,
    store: &MessageStore,
    rho: Rational,
) -> bool {
    let mut x_weight = 0;
    for member in x {
        if !m.coffer.contains(&member.id()) {
            return false;
        }
        x_weight += member.weight;
    }
    match store.coffer_weight(m) {
        Some(cw) => exceeds_complement(x_weight, cw, rho),
        None => false,
    }
}

/// Whether `c` is a timestamp-`seed_step` consistent DAG: every member has
/// timestamp at least `seed_step`, the seed layer is non-empty, and every
/// member of layer `s+1` is a consistent successor of layer `s`.
pub fn is_consistent_dag(
    c: &WeightedMessageSet,
    seed_step: Step,
    store: &MessageStore,
    rho: Rational,
) -> bool {
    let mut layers: BTreeMap<Step, Vec<&SieveMessage>> = BTreeMap::new();
    for m in c.values() {
        if m.timestamp < seed_step {
            return false;
        }
        layers.entry(m.timestamp).or_default().push(m);
    }
    if !layers.contains_key(&seed_step) {
        return false;
    }
    for (&ts, members) in &layers {
        if ts == seed_step {
            continue;
        }
        let below: &[&SieveMessage] = layers.get(&(ts - 1)).map(Vec::as_slice).unwrap_or(&[]);
        if !members
            .iter()
            .all(|m| is_consistent_successor(below.iter().copied(), m, store, rho))
        {
            return false;
        }
    }
    true
}

/// Block identity: digest over (parent digest, transactions, submitter).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct BlockId(pub [u8; 32]);

impl fmt::Debug for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BlockId({})", hex::encode(&self.0[..4]))
    }
}

impl Serialize for BlockId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        Dpow(self.0).serialize(s)
    }
}

impl<'de> Deserialize<'de> for BlockId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Dpow::deserialize(d).map(|v| BlockId(v.0))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub transactions: Vec<String>,
    pub parent: Option<BlockId>,
    pub submitter: NodeId,
}

impl Block {
    pub fn id(&self) -> BlockId {
        let mut h = Sha256::new();
        h.update(b"block");
        match &self.parent {
            Some(p) => {
                h.update([1u8]);
                h.update(p.0);
            }
            None => h.update([0u8]),
        }
        h.update(self.submitter.0.to_be_bytes());
        h.update((self.transactions.len() as u64).to_be_bytes());
        for tx in &self.transactions {
            h.update((tx.len() as u64).to_be_bytes());
            h.update(tx.as_bytes());
        }
        BlockId(h.finalize().into())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Chain {
    pub blocks: Vec<Block>,
}

impl Chain {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn ids(&self) -> Vec<BlockId> {
        self.blocks.iter().map(Block::id).collect()
    }

    pub fn tip(&self) -> Option<BlockId> {
        self.blocks.last().map(Block::id)
    }

    /// Every block after the first points to its predecessor and the first has no parent.
    pub fn is_well_formed(&self) -> bool {
        let mut prev = None;
        for b in &self.blocks {
            if b.parent != prev {
                return false;
            }
            prev = Some(b.id());
        }
        true
    }

    /// Appends a block built on the current tip.
    pub fn extended(&self, transactions: Vec<String>, submitter: NodeId) -> Chain {
        let mut blocks = self.blocks.clone();
        blocks.push(Block {
            transactions,
            parent: self.tip(),
            submitter,
        });
        Chain { blocks }
    }

    pub fn prefix(&self, len: usize) -> Chain {
        Chain {
            blocks: self.blocks[..len].to_vec(),
        }
    }

    pub fn is_prefix_of(&self, other: &Chain) -> bool {
        self.len() <= other.len()
            && self
                .blocks
                .iter()
                .zip(&other.blocks)
                .all(|(a, b)| a.id() == b.id())
    }
}

pub fn are_compatible(a: &Chain, b: &Chain) -> bool {
    a.is_prefix_of(b) || b.is_prefix_of(a)
}
