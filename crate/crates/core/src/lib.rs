// SPDX-License-Identifier: Apache-2.0

//! Sieve filtering and the MMR total-order broadcast over a DPoW oracle,
//! together with a deterministic tick-level simulator.

pub mod error;
pub mod mmr;
pub mod oracle;
pub mod powlib;
pub mod sieve;
pub mod sim;
pub mod types;

pub use error::*;
pub use types::*;
