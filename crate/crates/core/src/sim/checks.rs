// SPDX-License-Identifier: Apache-2.0

//! Invariant verdicts, fed as the run progresses.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::mmr::StepOutcome;
use crate::oracle::{DpowVerifier, GroundTruth};
use crate::types::{
    are_compatible, exceeds_complement, exceeds_fraction, weight, Chain, MessageId, NodeId,
    Rational, Step, Tick, WeightedMessageSet,
};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Failure {
    pub tick: Tick,
    pub node: NodeId,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub name: &'static str,
    pub passed: bool,
    /// Whether a failure counts against the run.
    pub asserted: bool,
    pub checks: u64,
    pub first_failure: Option<Failure>,
}

pub const TTRB1: &str = "ttrb1";
pub const TTRB2: &str = "ttrb2";
pub const SI1: &str = "si1";
pub const SI2: &str = "si2";
pub const SUPREMACY_IN_FILTERED: &str = "supremacy-in-filtered";
pub const CORRECT_SUPREMACY: &str = "correct-supremacy";
pub const GRADE1_UNIQUE: &str = "grade1-unique";
pub const GRADE0_AT_MOST_TWO: &str = "grade0-at-most-two";
pub const COMMIT_CONSISTENCY: &str = "commit-consistency";
pub const COMMIT_MONOTONE: &str = "commit-monotone";
pub const MMR1: &str = "mmr1";
pub const MMR2: &str = "mmr2";

const BROADCAST: &[&str] = &[TTRB1, TTRB2, SI1, SI2, SUPREMACY_IN_FILTERED];
const ORDERING: &[&str] = &[
    GRADE1_UNIQUE,
    GRADE0_AT_MOST_TWO,
    COMMIT_CONSISTENCY,
    COMMIT_MONOTONE,
    MMR1,
    MMR2,
];

/// A correct node's step-`s` broadcast, as the checker needs it.
#[derive(Clone, Debug)]
pub struct CorrectSend {
    pub node: NodeId,
    pub id: MessageId,
    pub weight: u64,
}

pub struct Checker {
    verdicts: BTreeMap<&'static str, Verdict>,
    rho: Rational,
    longest_commit: Chain,
}

impl Checker {
    /// `broadcast_asserted` covers the broadcast-layer verdicts,
    /// `ordering` enables and asserts the ordering-layer ones.
    pub fn new(rho: Rational, broadcast_asserted: bool, ordering: Option<bool>) -> Self {
        let mut verdicts = BTreeMap::new();
        let mut add = |name: &'static str, asserted: bool| {
            verdicts.insert(
                name,
                Verdict {
                    name,
                    passed: true,
                    asserted,
                    checks: 0,
                    first_failure: None,
                },
            );
        };
        for n in BROADCAST {
            add(n, broadcast_asserted);
        }
        if let Some(asserted) = ordering {
            for n in ORDERING {
                add(n, asserted);
            }
        }
        Self {
            verdicts,
            rho,
            longest_commit: Chain::empty(),
        }
    }

    fn record(
        &mut self,
        name: &'static str,
        ok: bool,
        tick: Tick,
        node: NodeId,
        detail: impl FnOnce() -> String,
    ) {
        let Some(v) = self.verdicts.get_mut(name) else {
            return;
        };
        v.checks += 1;
        if !ok && v.passed {
            v.passed = false;
            v.first_failure = Some(Failure {
                tick,
                node,
                detail: detail(),
            });
        }
    }

    /// A correct node's filtered set for step `s`, against ground truth and
    /// the correct broadcasts of step `s−1`.
    #[allow(clippy::too_many_arguments)]
    pub fn on_delivery(
        &mut self,
        tick: Tick,
        node: NodeId,
        s: Step,
        filtered: &WeightedMessageSet,
        correct_prev: &[CorrectSend],
        truth: &GroundTruth<'_>,
        verifier: &dyn DpowVerifier,
        ordering: bool,
    ) {
        if s == 0 {
            return;
        }
        for m in filtered.values() {
            let valid = verifier.verify(&m.dpow, &m.gamma(), m.weight);
            let generated = truth.generation_step_of(&m.dpow).ok();
            self.record(TTRB1, valid && generated == Some(s - 1), tick, node, || {
                format!(
                    "step {s}: {} (timestamp {}) generated at {:?}, dpow valid {valid}",
                    m.dpow.short(),
                    m.timestamp,
                    generated
                )
            });
            self.record(SI1, generated == Some(s - 1), tick, node, || {
                format!("step {s}: {} generated at {:?}", m.dpow.short(), generated)
            });
        }
        for c in correct_prev {
            let got = filtered.get(&c.id);
            let present = got.is_some();
            let ok = got.is_some_and(|m| m.weight == c.weight);
            self.record(TTRB2, ok, tick, node, || {
                format!(
                    "step {s}: message {} of {} missing or mis-weighted",
                    c.id.short(),
                    c.node
                )
            });
            self.record(SI2, present, tick, node, || {
                format!("step {s}: message {} of {} missing", c.id.short(), c.node)
            });
            if ordering {
                self.record(MMR2, present, tick, node, || {
                    format!("step {s}: message {} of {} missing", c.id.short(), c.node)
                });
            }
        }
        let total = weight(filtered.values());
        let correct_weight: u64 = correct_prev
            .iter()
            .filter_map(|c| filtered.get(&c.id))
            .map(|m| m.weight)
            .sum();
        if total > 0 {
            self.record(
                SUPREMACY_IN_FILTERED,
                exceeds_complement(correct_weight, total, self.rho),
                tick,
                node,
                || format!("step {s}: correct weight {correct_weight} of {total}"),
            );
            if ordering {
                self.record(
                    MMR1,
                    exceeds_fraction(correct_weight, total, Rational::new(2, 3)),
                    tick,
                    node,
                    || format!("step {s}: correct weight {correct_weight} of {total}"),
                );
            }
        }
    }

    pub fn on_mmr(&mut self, tick: Tick, node: NodeId, out: &StepOutcome, previous: &Chain) {
        use crate::error::MmrError;
        let multi1 = out.errors.contains(&MmrError::MultipleMaximalGrade1);
        self.record(GRADE1_UNIQUE, !multi1, tick, node, || {
            format!("step {}: several maximal grade-1 chains", out.step)
        });
        let multi0 = out
            .errors
            .iter()
            .find(|e| matches!(e, MmrError::MoreThanTwoMaximalGrade0(_)));
        self.record(GRADE0_AT_MOST_TWO, multi0.is_none(), tick, node, || {
            format!(
                "step {}: {}",
                out.step,
                multi0.map(|e| e.to_string()).unwrap_or_default()
            )
        });
        if let Some(c) = &out.committed {
            let ok = are_compatible(c, &self.longest_commit);
            let held = self.longest_commit.len();
            self.record(COMMIT_CONSISTENCY, ok, tick, node, || {
                format!(
                    "step {}: commit of length {} conflicts with committed length {}",
                    out.step,
                    c.len(),
                    held
                )
            });
            if ok && c.len() > self.longest_commit.len() {
                self.longest_commit = c.clone();
            }
            self.record(
                COMMIT_MONOTONE,
                are_compatible(c, previous),
                tick,
                node,
                || {
                    format!(
                        "step {}: commit does not extend the node's earlier commit",
                        out.step
                    )
                },
            );
        }
    }

    /// Post-run audit of the oracle history over `[0, last]`.
    pub fn audit(
        &mut self,
        truth: &GroundTruth<'_>,
        last: Step,
        asserted: bool,
    ) -> Option<(Step, Step)> {
        let violation = truth.first_supremacy_violation(self.rho, last);
        self.verdicts.insert(
            CORRECT_SUPREMACY,
            Verdict {
                name: CORRECT_SUPREMACY,
                passed: violation.is_none(),
                asserted,
                checks: 1,
                first_failure: violation.map(|(a, b)| Failure {
                    tick: b,
                    node: NodeId(0),
                    detail: format!("byzantine share reaches rho over steps {a}..={b}"),
                }),
            },
        );
        violation
    }

    pub fn into_verdicts(self) -> Vec<Verdict> {
        self.verdicts.into_values().collect()
    }
}
