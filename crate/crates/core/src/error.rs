// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

use crate::types::{NodeId, Step, Tick};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("not a rational number: {0:?}")]
    Rational(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("node {0} already has a pending DPoW request")]
    RejectedPending(NodeId),
    #[error("unknown DPoW evaluation")]
    UnknownDpow,
    #[error("weight must be positive")]
    ZeroWeight,
    #[error("DPoW value collision; the sampled value already exists")]
    Collision,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PowError {
    #[error("weight {w} is smaller than the number of revealed paths {k}")]
    WeightTooSmall { w: u64, k: u32 },
    #[error("malformed proof: {0}")]
    MalformedProof(String),
    #[error("no k satisfies the target: minimum work must be below 1")]
    Untunable,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SieveError {
    #[error("no DPoW delivery at the last tick {tick} of the step")]
    MissingDpowAtLastTick { tick: Tick },
    #[error("timestamp layer {step} holds {size} messages; the DAG search supports at most 128")]
    LayerTooWide { step: Step, size: usize },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MmrError {
    #[error("more than one maximal grade-1 chain")]
    MultipleMaximalGrade1,
    #[error("{0} maximal grade-0 chains (at most 2 allowed)")]
    MoreThanTwoMaximalGrade0(usize),
    #[error("empty delivery set at a commit step")]
    EmptyDelivery,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown {kind} {name:?}; available: {available}")]
    Unknown {
        kind: &'static str,
        name: String,
        available: String,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("assertion failure at tick {tick}, node {node}: {invariant}: {detail}")]
    Assertion {
        tick: Tick,
        node: NodeId,
        invariant: String,
        detail: String,
    },
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Sieve(#[from] SieveError),
}
