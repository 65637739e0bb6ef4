// SPDX-License-Identifier: Apache-2.0

use num_bigint::BigUint;
use proptest::prelude::*;

use sieve_mmr::powlib::{decode_proof, encode_proof, minimal_k, prove, verify, PowParams};
use sieve_mmr::{are_compatible, format_rational, parse_rational, Chain, NodeId, Rational};

// t^k < 2^-bits, by cross-multiplication.
fn below(num: u64, den: u64, k: u32, bits: u32) -> bool {
    (BigUint::from(num).pow(k) << bits) < BigUint::from(den).pow(k)
}

fn chain(txs: &[u8]) -> Chain {
    txs.iter().fold(Chain::empty(), |c, t| {
        c.extended(vec![format!("tx{t}")], NodeId(1))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn honest_proofs_verify_and_survive_encoding(
        chi in proptest::collection::vec(any::<u8>(), 0..40),
        w in 1u64..600,
        k in 1u32..6,
    ) {
        prop_assume!(w >= k as u64);
        let params = PowParams { k };
        let (proof, _) = prove(&chi, w, params).unwrap();
        let decoded = decode_proof(&encode_proof(&proof)).unwrap();
        prop_assert_eq!(&decoded, &proof);
        prop_assert!(verify(&decoded, &chi, w, params).0);
    }

    #[test]
    fn any_flipped_byte_is_caught(
        chi in proptest::collection::vec(any::<u8>(), 1..16),
        w in 4u64..200,
        pos in any::<prop::sample::Index>(),
        bit in 0u8..8,
    ) {
        let params = PowParams { k: 3 };
        let (proof, _) = prove(&chi, w, params).unwrap();
        let mut bytes = encode_proof(&proof);
        let i = pos.index(bytes.len());
        bytes[i] ^= 1 << bit;
        match decode_proof(&bytes) {
            Err(_) => {}
            Ok(p) => prop_assert!(!verify(&p, &chi, w, params).0, "flip at byte {} accepted", i),
        }
    }

    #[test]
    fn truncated_proofs_do_not_decode(
        w in 3u64..100,
        cut in any::<prop::sample::Index>(),
    ) {
        let (proof, _) = prove(b"chi", w, PowParams { k: 3 }).unwrap();
        let bytes = encode_proof(&proof);
        let n = cut.index(bytes.len());
        prop_assert!(decode_proof(&bytes[..n]).is_err());
    }

    #[test]
    fn minimal_k_is_tight(num in 1u64..50, extra in 1u64..50, bits in 1u32..80) {
        let den = num + extra;
        let k = minimal_k(bits, Rational::new(num, den)).unwrap();
        prop_assert!(below(num, den, k, bits));
        prop_assert!(k == 1 || !below(num, den, k - 1, bits));
    }

    #[test]
    fn rationals_round_trip(num in 0u64..10_000, den in 1u64..10_000) {
        let r = Rational::new(num, den);
        prop_assert_eq!(parse_rational(&format_rational(&r)).unwrap(), r);
    }

    #[test]
    fn compatibility_is_prefix_order(
        base in proptest::collection::vec(0u8..4, 0..6),
        a in proptest::collection::vec(0u8..4, 0..4),
        b in proptest::collection::vec(0u8..4, 0..4),
    ) {
        let x: Vec<u8> = base.iter().chain(&a).copied().collect();
        let y: Vec<u8> = base.iter().chain(&b).copied().collect();
        let (cx, cy) = (chain(&x), chain(&y));
        prop_assert_eq!(are_compatible(&cx, &cy), are_compatible(&cy, &cx));
        prop_assert!(are_compatible(&chain(&base), &cx));
        prop_assert_eq!(are_compatible(&cx, &cy), x.starts_with(&y) || y.starts_with(&x));
    }
}
