// SPDX-License-Identifier: Apache-2.0

//! Merkle-tree deterministic proof-of-work.
//!
//! The prover commits to `w` leaves `H(chi ‖ i)` for `i = 0..w`, derives `k`
//! distinct leaf indices from the root, and reveals the authentication paths
//! of those leaves. Every call to the random oracle goes through
//! [`CountingHasher`], so call counts are exact.

use num_bigint::BigUint;
use num_rational::Ratio;
use num_traits::{One, Zero};
use sha2::{Digest as _, Sha256};

use crate::error::PowError;
use crate::types::Rational;

pub type Digest = [u8; 32];

pub const PROOF_FORMAT_VERSION: u8 = 1;

const INTERNAL_TAG: u8 = 0x01;
const PAD_LABEL: &[u8] = b"sieve-mmr/merkle-pad";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PowParams {
    /// Number of revealed paths.
    pub k: u32,
}

impl Default for PowParams {
    fn default() -> Self {
        Self { k: 8 }
    }
}

/// Random-oracle calls made by one prove or verify invocation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CallCount {
    pub leaves: u64,
    pub internal: u64,
    pub index_derivation: u64,
}

impl CallCount {
    pub fn total(&self) -> u64 {
        self.leaves + self.internal + self.index_derivation
    }

    /// Calls spent on leaves and tree nodes, i.e. excluding index derivation.
    pub fn tree(&self) -> u64 {
        self.leaves + self.internal
    }
}

#[derive(Default)]
struct CountingHasher {
    calls: CallCount,
}

impl CountingHasher {
    fn leaf(&mut self, chi: &[u8], index: u64) -> Digest {
        self.calls.leaves += 1;
        let mut h = Sha256::new();
        h.update(chi);
        h.update(index.to_be_bytes());
        h.finalize().into()
    }

    fn node(&mut self, left: &Digest, right: &Digest) -> Digest {
        self.calls.internal += 1;
        let mut h = Sha256::new();
        h.update([INTERNAL_TAG]);
        h.update(left);
        h.update(right);
        h.finalize().into()
    }

    fn index_seed(&mut self, root: &Digest, i: u64) -> Digest {
        self.calls.index_derivation += 1;
        let mut h = Sha256::new();
        h.update(root);
        h.update(i.to_be_bytes());
        h.finalize().into()
    }
}

fn pad_digest() -> Digest {
    Sha256::digest(PAD_LABEL).into()
}

fn depth_for(w: u64) -> u32 {
    if w <= 1 {
        0
    } else {
        64 - (w - 1).leading_zeros()
    }
}

/// `⌈w · h / 2^256⌉ − 1`, a leaf index in `0..w`.
fn scale_index(h: &Digest, w: u64) -> u64 {
    let product = BigUint::from_bytes_be(h) * BigUint::from(w);
    let shifted: BigUint = &product >> 256u32;
    let exact = (&shifted << 256u32) == product;
    let ceil = if exact { shifted } else { shifted + 1u32 };
    let ceil: u64 = ceil.try_into().unwrap_or(w);
    ceil.clamp(1, w) - 1
}

fn derive_indices(hasher: &mut CountingHasher, root: &Digest, w: u64, k: u32) -> Vec<u64> {
    let mut out: Vec<u64> = Vec::with_capacity(k as usize);
    let mut i = 0u64;
    while out.len() < k as usize {
        let idx = scale_index(&hasher.index_seed(root, i), w);
        if !out.contains(&idx) {
            out.push(idx);
        }
        i += 1;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MerklePath {
    pub index: u64,
    pub leaf: Digest,
    /// Sibling digests from the leaf level upwards.
    pub siblings: Vec<Digest>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MerkleProof {
    pub root: Digest,
    pub paths: Vec<MerklePath>,
}

pub fn prove(chi: &[u8], w: u64, params: PowParams) -> Result<(MerkleProof, CallCount), PowError> {
    if params.k == 0 || w < params.k as u64 {
        return Err(PowError::WeightTooSmall { w, k: params.k });
    }
    let mut hasher = CountingHasher::default();
    let depth = depth_for(w);
    let width = 1u64 << depth;
    let pad = pad_digest();

    let mut levels: Vec<Vec<Digest>> = Vec::with_capacity(depth as usize + 1);
    let leaves: Vec<Digest> = (0..width)
        .map(|i| if i < w { hasher.leaf(chi, i) } else { pad })
        .collect();
    levels.push(leaves);
    while levels.last().map_or(0, Vec::len) > 1 {
        let prev = levels.last().unwrap();
        let next: Vec<Digest> = prev.chunks(2).map(|p| hasher.node(&p[0], &p[1])).collect();
        levels.push(next);
    }
    let root = levels.last().unwrap()[0];

    let indices = derive_indices(&mut hasher, &root, w, params.k);
    let paths = indices
        .into_iter()
        .map(|index| {
            let mut pos = index as usize;
            let siblings = levels[..depth as usize]
                .iter()
                .map(|level| {
                    let sib = level[pos ^ 1];
                    pos >>= 1;
                    sib
                })
                .collect();
            MerklePath {
                index,
                leaf: levels[0][index as usize],
                siblings,
            }
        })
        .collect();
    Ok((MerkleProof { root, paths }, hasher.calls))
}

/// Checks `proof` against `(chi, w)`. Never errors; any mismatch yields `false`.
pub fn verify(proof: &MerkleProof, chi: &[u8], w: u64, params: PowParams) -> (bool, CallCount) {
    let mut hasher = CountingHasher::default();
    if params.k == 0 || w < params.k as u64 || proof.paths.len() != params.k as usize {
        return (false, hasher.calls);
    }
    let depth = depth_for(w) as usize;
    let expected = derive_indices(&mut hasher, &proof.root, w, params.k);
    for (path, want) in proof.paths.iter().zip(&expected) {
        if path.index != *want || path.siblings.len() != depth {
            return (false, hasher.calls);
        }
        let leaf = hasher.leaf(chi, path.index);
        if leaf != path.leaf {
            return (false, hasher.calls);
        }
        let mut cur = leaf;
        let mut pos = path.index;
        for sib in &path.siblings {
            cur = if pos & 1 == 0 {
                hasher.node(&cur, sib)
            } else {
                hasher.node(sib, &cur)
            };
            pos >>= 1;
        }
        if cur != proof.root {
            return (false, hasher.calls);
        }
    }
    (true, hasher.calls)
}

/// Upper bound `t^k` on the acceptance probability of a prover making fewer
/// than `t(2w + k)` oracle calls.
pub fn cheating_success_bound(t: Rational, k: u32) -> Ratio<BigUint> {
    let num = BigUint::from(*t.numer()).pow(k);
    let den = BigUint::from(*t.denom()).pow(k);
    Ratio::new(num, den)
}

/// Smallest `k` with `t^k < 2^-target_bits`.
pub fn minimal_k(target_bits: u32, t: Rational) -> Result<u32, PowError> {
    if t >= Rational::one() || t.is_zero() {
        return Err(PowError::Untunable);
    }
    let bound = Ratio::new(BigUint::one(), BigUint::one() << target_bits);
    // t^k halves at least every ceil(1/log2(1/t)) steps; the loop terminates.
    let mut k = 1u32;
    loop {
        if cheating_success_bound(t, k) < bound {
            return Ok(k);
        }
        k += 1;
    }
}

/// Binary layout, all integers big-endian:
///
/// ```text
/// version:u8 | body_len:u32 | root:32 | k:u32 | depth:u8 |
///   k × ( index:u64 | leaf:32 | depth × sibling:32 )
/// ```
pub fn encode_proof(proof: &MerkleProof) -> Vec<u8> {
    let depth = proof.paths.first().map_or(0, |p| p.siblings.len());
    let mut body = Vec::new();
    body.extend_from_slice(&proof.root);
    body.extend_from_slice(&(proof.paths.len() as u32).to_be_bytes());
    body.push(depth as u8);
    for p in &proof.paths {
        body.extend_from_slice(&p.index.to_be_bytes());
        body.extend_from_slice(&p.leaf);
        for s in &p.siblings {
            body.extend_from_slice(s);
        }
    }
    let mut out = Vec::with_capacity(body.len() + 5);
    out.push(PROOF_FORMAT_VERSION);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn decode_proof(bytes: &[u8]) -> Result<MerkleProof, PowError> {
    let bad = |why: &str| PowError::MalformedProof(why.to_string());
    let (&version, rest) = bytes.split_first().ok_or_else(|| bad("empty input"))?;
    if version != PROOF_FORMAT_VERSION {
        return Err(bad("unsupported version"));
    }
    if rest.len() < 4 {
        return Err(bad("truncated length prefix"));
    }
    let (len, body) = rest.split_at(4);
    let len = u32::from_be_bytes(len.try_into().unwrap()) as usize;
    if body.len() != len {
        return Err(bad("length prefix does not match body"));
    }
    if body.len() < 37 {
        return Err(bad("truncated header"));
    }
    let root: Digest = body[..32].try_into().unwrap();
    let k = u32::from_be_bytes(body[32..36].try_into().unwrap()) as usize;
    let depth = body[36] as usize;
    if depth > 63 {
        return Err(bad("depth out of range"));
    }
    let path_len = 8 + 32 + 32 * depth;
    let paths_bytes = &body[37..];
    if k.checked_mul(path_len) != Some(paths_bytes.len()) {
        return Err(bad("path section has the wrong size"));
    }
    let paths = paths_bytes
        .chunks(path_len)
        .map(|c| MerklePath {
            index: u64::from_be_bytes(c[..8].try_into().unwrap()),
            leaf: c[8..40].try_into().unwrap(),
            siblings: c[40..].chunks(32).map(|s| s.try_into().unwrap()).collect(),
        })
        .collect();
    Ok(MerkleProof { root, paths })
}
