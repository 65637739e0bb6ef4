// SPDX-License-Identifier: Apache-2.0

//! Consistent-DAG search.
//!
//! Layer `j` of a DAG seeded at step `σ` holds timestamp-`σ+j` messages.
//! For a fixed continuation `Z` of layer `j+1`, the best choice for layer `j`
//! is the largest admissible set inside every coffer of `Z`, so the candidate
//! layers are the admissible set intersected with coffers of the next layer.
//! Each layer is a `u128` bitset; the search memoises on `(layer, set)`.

use std::collections::{BTreeSet, HashMap};

use crate::error::SieveError;
use crate::types::{
    exceeds_complement, MessageId, MessageStore, Rational, SieveMessage, Step, WeightedMessageSet,
};

type Bits = u128;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConsistentDag {
    pub members: WeightedMessageSet,
    pub seed: WeightedMessageSet,
    pub weight: u64,
}

struct Layers<'a> {
    msgs: Vec<Vec<&'a SieveMessage>>,
    weights: Vec<Vec<u64>>,
    /// Coffer of each message restricted to the layer below.
    coffer_bits: Vec<Vec<Bits>>,
    /// Total coffer weight, `None` when a reference cannot be resolved.
    coffer_weight: Vec<Vec<Option<u64>>>,
}

impl<'a> Layers<'a> {
    fn build(
        pool: &'a WeightedMessageSet,
        store: &MessageStore,
        seed_step: Step,
    ) -> Result<Self, SieveError> {
        let top = pool
            .values()
            .map(|m| m.timestamp)
            .filter(|&ts| ts >= seed_step)
            .max();
        let Some(top) = top else {
            return Ok(Self {
                msgs: vec![Vec::new()],
                weights: vec![Vec::new()],
                coffer_bits: vec![Vec::new()],
                coffer_weight: vec![Vec::new()],
            });
        };
        let depth = (top - seed_step + 1) as usize;
        let mut msgs: Vec<Vec<&SieveMessage>> = vec![Vec::new(); depth];
        for m in pool.values() {
            if m.timestamp >= seed_step {
                msgs[(m.timestamp - seed_step) as usize].push(m);
            }
        }
        for (j, layer) in msgs.iter().enumerate() {
            if layer.len() > Bits::BITS as usize {
                return Err(SieveError::LayerTooWide {
                    step: seed_step + j as Step,
                    size: layer.len(),
                });
            }
        }
        let mut coffer_bits = Vec::with_capacity(depth);
        let mut coffer_weight = Vec::with_capacity(depth);
        for j in 0..depth {
            let below: HashMap<MessageId, usize> = if j == 0 {
                HashMap::new()
            } else {
                msgs[j - 1]
                    .iter()
                    .enumerate()
                    .map(|(i, m)| (m.id(), i))
                    .collect()
            };
            coffer_bits.push(
                msgs[j]
                    .iter()
                    .map(|m| {
                        m.coffer
                            .iter()
                            .filter_map(|id| below.get(id))
                            .fold(0, |acc, &i| acc | (1 << i))
                    })
                    .collect(),
            );
            coffer_weight.push(msgs[j].iter().map(|m| store.coffer_weight(m)).collect());
        }
        let weights = msgs
            .iter()
            .map(|l| l.iter().map(|m| m.weight).collect())
            .collect();
        Ok(Self {
            msgs,
            weights,
            coffer_bits,
            coffer_weight,
        })
    }

    fn depth(&self) -> usize {
        self.msgs.len()
    }

    fn full(&self, j: usize) -> Bits {
        match self.msgs[j].len() {
            128 => Bits::MAX,
            n => (1 << n) - 1,
        }
    }

    fn weight(&self, j: usize, bits: Bits) -> u64 {
        iter_bits(bits).map(|i| self.weights[j][i]).sum()
    }

    fn locate(&self, id: &MessageId) -> Option<(usize, usize)> {
        self.msgs
            .iter()
            .enumerate()
            .find_map(|(j, layer)| layer.iter().position(|m| m.id() == *id).map(|i| (j, i)))
    }

    /// Layer-`j` messages that are consistent successors of `below`.
    fn successors(&self, j: usize, below: Bits, rho: Rational) -> Bits {
        let w = self.weight(j - 1, below);
        let mut out = 0;
        for i in 0..self.msgs[j].len() {
            let fits = below & !self.coffer_bits[j][i] == 0;
            if fits && self.coffer_weight[j][i].is_some_and(|cw| exceeds_complement(w, cw, rho)) {
                out |= 1 << i;
            }
        }
        out
    }

    /// `base` intersected with every subset of next-layer coffers.
    fn candidates(&self, j: usize, base: Bits) -> Vec<Bits> {
        let mut seen: BTreeSet<Bits> = BTreeSet::from([base]);
        if j + 1 < self.depth() {
            for &cb in &self.coffer_bits[j + 1] {
                let next: Vec<Bits> = seen.iter().map(|c| c & cb).collect();
                seen.extend(next);
            }
        }
        seen.into_iter().collect()
    }
}

fn iter_bits(bits: Bits) -> impl Iterator<Item = usize> {
    (0..Bits::BITS as usize).filter(move |i| bits >> i & 1 == 1)
}

struct Search<'l, 'a> {
    layers: &'l Layers<'a>,
    rho: Rational,
    required: Option<(usize, usize)>,
    memo: HashMap<(usize, Bits), Option<(u64, Bits)>>,
}

impl Search<'_, '_> {
    fn admissible(&self, j: usize, c: Bits) -> bool {
        match self.required {
            Some((rj, ri)) if rj == j => c >> ri & 1 == 1,
            Some((rj, _)) if rj > j => c != 0,
            _ => true,
        }
    }

    /// Heaviest weight of layers above `j`, given layer `j` is `y`, and the
    /// chosen next layer.
    fn best_above(&mut self, j: usize, y: Bits) -> Option<(u64, Bits)> {
        if let Some(hit) = self.memo.get(&(j, y)) {
            return *hit;
        }
        let result = if j + 1 == self.layers.depth() {
            self.admissible(j + 1, 0).then_some((0, 0))
        } else {
            let base = self.layers.successors(j + 1, y, self.rho);
            let mut best: Option<(u64, Bits)> = None;
            for c in self.layers.candidates(j + 1, base) {
                if !self.admissible(j + 1, c) {
                    continue;
                }
                let above = if c == 0 {
                    self.admissible(j + 2, 0).then_some(0)
                } else {
                    self.best_above(j + 1, c).map(|(w, _)| w)
                };
                if let Some(above) = above {
                    let total = self.layers.weight(j + 1, c) + above;
                    if best.is_none_or(|(w, _)| total > w) {
                        best = Some((total, c));
                    }
                }
            }
            best
        };
        self.memo.insert((j, y), result);
        result
    }

    fn best_from_seeds(&mut self, seeds: Bits) -> Option<(u64, Vec<Bits>)> {
        let mut best: Option<(u64, Bits)> = None;
        for y in self.layers.candidates(0, seeds) {
            if y == 0 || !self.admissible(0, y) {
                continue;
            }
            if let Some((above, _)) = self.best_above(0, y) {
                let total = self.layers.weight(0, y) + above;
                if best.is_none_or(|(w, _)| total > w) {
                    best = Some((total, y));
                }
            }
        }
        let (total, seed) = best?;
        let mut chosen = vec![seed];
        let mut j = 0;
        while let Some(Some((_, next))) = self.memo.get(&(j, chosen[j])).copied() {
            if next == 0 {
                break;
            }
            chosen.push(next);
            j += 1;
        }
        Some((total, chosen))
    }
}

fn assemble(layers: &Layers<'_>, chosen: &[Bits], weight: u64) -> ConsistentDag {
    let mut members = WeightedMessageSet::new();
    for (j, &bits) in chosen.iter().enumerate() {
        for i in iter_bits(bits) {
            let m = layers.msgs[j][i];
            members.insert(m.id(), m.clone());
        }
    }
    let seed = iter_bits(chosen[0])
        .map(|i| (layers.msgs[0][i].id(), layers.msgs[0][i].clone()))
        .collect();
    ConsistentDag {
        members,
        seed,
        weight,
    }
}

/// A maximum-weight timestamp-`seed_step` consistent DAG within `pool`
/// containing `m`. Coffer weights resolve through `store`.
pub fn find_heaviest_consistent_dag(
    m: &SieveMessage,
    pool: &WeightedMessageSet,
    store: &MessageStore,
    seed_step: Step,
    rho: Rational,
) -> Result<Option<ConsistentDag>, SieveError> {
    let layers = Layers::build(pool, store, seed_step)?;
    let Some(required) = layers.locate(&m.id()) else {
        return Ok(None);
    };
    let mut search = Search {
        layers: &layers,
        rho,
        required: Some(required),
        memo: HashMap::new(),
    };
    Ok(search
        .best_from_seeds(layers.full(0))
        .map(|(w, chosen)| assemble(&layers, &chosen, w)))
}

/// The heaviest consistent DAG whose seed avoids `excluded`.
pub fn heaviest_dag_avoiding(
    excluded: &WeightedMessageSet,
    pool: &WeightedMessageSet,
    store: &MessageStore,
    seed_step: Step,
    rho: Rational,
) -> Result<Option<ConsistentDag>, SieveError> {
    let layers = Layers::build(pool, store, seed_step)?;
    let seeds = layers.msgs[0]
        .iter()
        .enumerate()
        .filter(|(_, m)| !excluded.contains_key(&m.id()))
        .fold(0, |acc, (i, _)| acc | (1 << i));
    let mut search = Search {
        layers: &layers,
        rho,
        required: None,
        memo: HashMap::new(),
    };
    Ok(search
        .best_from_seeds(seeds)
        .map(|(w, chosen)| assemble(&layers, &chosen, w)))
}

/// Whether some consistent DAG in `pool` seeded disjointly from `c` is
/// strictly heavier than `c`.
pub fn exists_heavier_disjoint_dag(
    c: &ConsistentDag,
    pool: &WeightedMessageSet,
    store: &MessageStore,
    seed_step: Step,
    rho: Rational,
) -> Result<bool, SieveError> {
    Ok(heaviest_dag_avoiding(&c.seed, pool, store, seed_step, rho)?
        .is_some_and(|d| d.weight > c.weight))
}

#[cfg(test)]
pub(crate) mod brute {
    use super::*;
    use crate::types::is_consistent_dag;

    /// Enumerates every subset of `pool`; only for small pools.
    pub fn heaviest(
        required: Option<&MessageId>,
        seed_filter: impl Fn(&SieveMessage) -> bool,
        pool: &WeightedMessageSet,
        store: &MessageStore,
        seed_step: Step,
        rho: Rational,
    ) -> Option<u64> {
        let all: Vec<&SieveMessage> = pool.values().collect();
        assert!(all.len() <= 16);
        let mut best = None;
        for mask in 1u32..(1 << all.len()) {
            let c: WeightedMessageSet = (0..all.len())
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| (all[i].id(), all[i].clone()))
                .collect();
            if required.is_some_and(|id| !c.contains_key(id)) {
                continue;
            }
            if c.values()
                .any(|m| m.timestamp == seed_step && !seed_filter(m))
            {
                continue;
            }
            if is_consistent_dag(&c, seed_step, store, rho) {
                let w = crate::types::weight(c.values());
                if best.is_none_or(|b| w > b) {
                    best = Some(w);
                }
            }
        }
        best
    }
}
