// SPDX-License-Identifier: Apache-2.0

//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sieve_mmr::powlib::{decode_proof, encode_proof, prove, verify, PowParams};
use sieve_mmr::sieve::{find_heaviest_consistent_dag, heaviest_dag_avoiding};
use sieve_mmr::sim::adversary::STRATEGIES;
use sieve_mmr::sim::checks::{
    COMMIT_CONSISTENCY, COMMIT_MONOTONE, CORRECT_SUPREMACY, GRADE0_AT_MOST_TWO, GRADE1_UNIQUE,
    TTRB1, TTRB2,
};
use sieve_mmr::sim::random::random_scenario;
use sieve_mmr::sim::scenario::{builtin_names, Scenario};
use sieve_mmr::sim::trace::TraceLevel;
use sieve_mmr::sim::{run, RunOptions, RunOutcome};
use sieve_mmr::{
    are_compatible, Dpow, MessageId, MessageStore, NodeId, Rational, SieveMessage, Step,
    WeightedMessageSet,
};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run_builtin(name: &str, mode: &str, seed: u64) -> Result<RunOutcome, String> {
    let sc = Scenario::builtin(name).map_err(|e| e.to_string())?;
    run(
        &sc,
        &RunOptions {
            seed: Some(seed),
            mode: Some(mode.into()),
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())
}

/// The message `node` broadcast with timestamp `ts`.
fn sent_by(o: &RunOutcome, node: u32, ts: Step) -> Result<MessageId, String> {
    let found: Vec<MessageId> = o
        .sent
        .iter()
        .filter(|r| r.sender == NodeId(node) && r.message.timestamp == ts)
        .map(|r| r.message.id())
        .collect();
    match found.as_slice() {
        [id] => Ok(*id),
        other => Err(format!(
            "n{node} sent {} timestamp-{ts} messages",
            other.len()
        )),
    }
}

fn delivered(o: &RunOutcome, node: u32, s: Step) -> Result<BTreeSet<MessageId>, String> {
    o.delivery(NodeId(node), s)
        .map(|d| d.filtered.keys().copied().collect())
        .ok_or_else(|| format!("n{node} delivered nothing at step {s}"))
}

fn within(t: Instant, limit: Duration) -> Result<(), String> {
    ensure(t.elapsed() < limit, || {
        format!("took {:?}, limit {:?}", t.elapsed(), limit)
    })
}

fn fig3() -> Check {
    let t = Instant::now();
    let o = run_builtin("fig3", "sieve", 0)?;
    let expect: BTreeSet<MessageId> =
        [sent_by(&o, 1, 1)?, sent_by(&o, 2, 1)?, sent_by(&o, 4, 1)?].into();
    let antique = sent_by(&o, 3, 1)?;
    for n in [1, 2] {
        let got = delivered(&o, n, 2)?;
        ensure(got == expect, || format!("n{n} delivered {got:?}"))?;
        ensure(!got.contains(&antique), || format!("n{n} kept the antique"))?;
    }
    ensure(o.passed(), || "a verdict failed".into())?;
    within(t, Duration::from_secs(1))?;
    Ok(format!(
        "step-2 set at n1 and n2 is exactly {{3, 4, c}} ({:?})",
        t.elapsed()
    ))
}

fn fig5() -> Check {
    let t = Instant::now();
    let o = run_builtin("fig5", "sieve", 0)?;
    let expect: BTreeSet<MessageId> =
        [sent_by(&o, 1, 1)?, sent_by(&o, 2, 1)?, sent_by(&o, 4, 1)?].into();
    let d = o
        .delivery(NodeId(5), 2)
        .ok_or("joiner delivered nothing at step 2")?;
    ensure(d.bootstrapped, || "joiner did not bootstrap".into())?;
    let got: BTreeSet<MessageId> = d.filtered.keys().copied().collect();
    ensure(got == expect, || format!("joiner delivered {got:?}"))?;
    ensure(!got.contains(&sent_by(&o, 3, 1)?), || {
        "joiner kept the antique".into()
    })?;
    ensure(o.passed(), || "a verdict failed".into())?;
    within(t, Duration::from_secs(1))?;
    Ok(format!(
        "joiner bootstraps to exactly {{3, 4, c}} ({:?})",
        t.elapsed()
    ))
}

fn fig4() -> Check {
    let t = Instant::now();
    let naive = run_builtin("fig4", "naive-online", 0)?;
    let m3 = sent_by(&naive, 1, 1)?;
    ensure(!delivered(&naive, 3, 2)?.contains(&m3), || {
        "naive joiner kept the correct message".into()
    })?;
    let v = naive.verdict(TTRB2).ok_or("no ttrb2 verdict")?;
    ensure(!v.passed, || "ttrb2 passed in naive mode".into())?;
    let sieve = run_builtin("fig4", "sieve", 0)?;
    let m3 = sent_by(&sieve, 1, 1)?;
    ensure(delivered(&sieve, 3, 2)?.contains(&m3), || {
        "bootstrapping joiner lost the correct message".into()
    })?;
    ensure(sieve.passed(), || "a verdict failed under sieve".into())?;
    within(t, Duration::from_secs(1))?;
    Ok(format!(
        "naive replay drops the correct message and fails ttrb2; bootstrap keeps it ({:?})",
        t.elapsed()
    ))
}

struct Suite {
    runs: Vec<(Rational, Scenario, RunOutcome)>,
    elapsed: Duration,
}

fn random_suite() -> Result<Suite, String> {
    let t = Instant::now();
    let mut runs = Vec::new();
    for rho in [Rational::new(1, 3), Rational::new(1, 2)] {
        for seed in 0..500 {
            let sc = random_scenario(seed, rho);
            let o = run(&sc, &RunOptions::default())
                .map_err(|e| format!("seed {seed}, rho {rho}: {e}"))?;
            runs.push((rho, sc, o));
        }
    }
    Ok(Suite {
        runs,
        elapsed: t.elapsed(),
    })
}

fn ttrb_suite(suite: &Suite) -> Check {
    let mut strategies = BTreeSet::new();
    let mut audited = 0;
    for (rho, sc, o) in &suite.runs {
        for n in sc.byzantine_nodes() {
            strategies.insert(n.strategy.as_ref().map(|s| s.name()));
        }
        let audit = o.verdict(CORRECT_SUPREMACY).ok_or("no audit verdict")?;
        if !audit.passed {
            continue;
        }
        audited += 1;
        for name in [TTRB1, TTRB2] {
            let v = o.verdict(name).ok_or("missing verdict")?;
            ensure(v.passed, || {
                format!(
                    "{} (rho {rho}): {name} failed: {:?}",
                    sc.name, v.first_failure
                )
            })?;
        }
    }
    ensure(audited >= 1000, || {
        format!("only {audited} runs passed the supremacy audit")
    })?;
    ensure(strategies.len() == STRATEGIES.len(), || {
        format!("strategies exercised: {strategies:?}")
    })?;
    ensure(suite.elapsed < Duration::from_secs(600), || {
        format!("took {:?}", suite.elapsed)
    })?;
    Ok(format!(
        "{audited} audited runs, all {} strategies, ttrb1 and ttrb2 hold ({:?})",
        strategies.len(),
        suite.elapsed
    ))
}

fn consistency_suite(suite: &Suite) -> Check {
    let mut runs = 0;
    let mut commits = 0;
    for (rho, sc, o) in &suite.runs {
        if *rho != Rational::new(1, 3) {
            continue;
        }
        runs += 1;
        for name in [
            COMMIT_CONSISTENCY,
            COMMIT_MONOTONE,
            GRADE1_UNIQUE,
            GRADE0_AT_MOST_TWO,
        ] {
            let v = o.verdict(name).ok_or("missing verdict")?;
            ensure(v.passed, || {
                format!("{}: {name} failed: {:?}", sc.name, v.first_failure)
            })?;
        }
        let chains: Vec<_> = o.commits.values().collect();
        for (i, a) in chains.iter().enumerate() {
            commits += a.len();
            for b in &chains[i + 1..] {
                ensure(are_compatible(a, b), || {
                    format!("{}: final commits diverge", sc.name)
                })?;
            }
        }
    }
    ensure(runs >= 500, || format!("only {runs} runs at rho 1/3"))?;
    Ok(format!(
        "{runs} runs at rho 1/3, {commits} committed blocks, no divergence"
    ))
}

fn cl1() -> Check {
    let mut samples = 0;
    for name in ["all-correct", "all-correct-3"] {
        for seed in 0..100 {
            let o = run_builtin(name, "sieve", seed)?;
            ensure(o.passed(), || {
                format!("{name} seed {seed}: a verdict failed")
            })?;
            let m = &o.metrics;
            ensure(m.latencies.iter().all(|&l| l == 3), || {
                format!("{name} seed {seed}: latencies {:?}", m.latencies)
            })?;
            // proposal steps too close to the horizon to be decided in it
            let tail = (0..o.horizon)
                .filter(|s| s % 2 == 0 && s + 3 >= o.horizon)
                .count() as u64;
            ensure(m.unresolved == tail, || {
                format!(
                    "{name} seed {seed}: {} unresolved proposal steps",
                    m.unresolved
                )
            })?;
            samples += m.latencies.len();
        }
    }
    Ok(format!(
        "{samples} proposal steps over 200 runs, each decided after exactly 3 steps"
    ))
}

fn cl2() -> Check {
    let t = Instant::now();
    let mut latencies = Vec::new();
    let (mut trials, mut wins, mut seed) = (0u64, 0u64, 0u64);
    while latencies.len() < 500 {
        let o = run_builtin("adversarial-leader", "sieve", seed)?;
        ensure(o.passed(), || format!("seed {seed}: a verdict failed"))?;
        latencies.extend(&o.metrics.latencies);
        trials += o.metrics.leader_trials;
        wins += o.metrics.leader_successes;
        seed += 1;
    }
    let mean = latencies.iter().sum::<u64>() as f64 / latencies.len() as f64;
    let p = 1.0 / 3.0;
    let sigma = (p * (1.0 - p) / trials as f64).sqrt();
    let freq = wins as f64 / trials as f64;
    ensure(mean <= 7.5, || format!("mean latency {mean:.3}"))?;
    ensure(freq > p - 3.0 * sigma, || {
        format!("leader success {freq:.3} below {:.3}", p - 3.0 * sigma)
    })?;
    within(t, Duration::from_secs(600))?;
    Ok(format!(
        "{} samples over {seed} seeds, mean latency {mean:.3}, leader success {wins}/{trials} = {freq:.3} ({:?})",
        latencies.len(),
        t.elapsed()
    ))
}

// Exhaustive reference for consistent DAGs, written from the definition.

fn dpow(rng: &mut ChaCha8Rng) -> Dpow {
    let mut b = [0u8; 32];
    rng.fill_bytes(&mut b);
    Dpow(b)
}

/// A random layered pool over timestamps `0..depth`; coffers point into the
/// layer below, sometimes at a message that is missing from the store.
fn random_pool(rng: &mut ChaCha8Rng, max: usize) -> (Vec<SieveMessage>, MessageStore) {
    let depth = rng.gen_range(1..=4);
    let n = rng.gen_range(1..=max);
    let mut msgs: Vec<SieveMessage> = Vec::new();
    for i in 0..n {
        let ts = if i < depth {
            i as Step
        } else {
            rng.gen_range(0..depth) as Step
        };
        let below: Vec<MessageId> = msgs
            .iter()
            .filter(|m| ts > 0 && m.timestamp == ts - 1)
            .map(SieveMessage::id)
            .collect();
        let mut coffer: BTreeSet<MessageId> =
            below.into_iter().filter(|_| rng.gen_bool(0.7)).collect();
        if ts > 0 && rng.gen_bool(0.05) {
            coffer.insert(dpow(rng));
        }
        msgs.push(SieveMessage {
            payload: vec![i as u8],
            timestamp: ts,
            coffer,
            nonce: i as u64,
            dpow: dpow(rng),
            weight: rng.gen_range(1..=4),
        });
    }
    let store = msgs.iter().cloned().collect();
    (msgs, store)
}

fn reference_consistent(
    members: &[&SieveMessage],
    store: &BTreeMap<MessageId, &SieveMessage>,
    seed_step: Step,
    rho: Rational,
) -> bool {
    if !members.iter().any(|m| m.timestamp == seed_step)
        || members.iter().any(|m| m.timestamp < seed_step)
    {
        return false;
    }
    members.iter().filter(|m| m.timestamp > seed_step).all(|m| {
        let below: Vec<&&SieveMessage> = members
            .iter()
            .filter(|x| x.timestamp + 1 == m.timestamp)
            .collect();
        if !below.iter().all(|x| m.coffer.contains(&x.id())) {
            return false;
        }
        let mut coffer_weight = 0u64;
        for id in &m.coffer {
            match store.get(id) {
                Some(c) => coffer_weight += c.weight,
                None => return false,
            }
        }
        let x: u64 = below.iter().map(|x| x.weight).sum();
        // x > (1 − ρ) · coffer_weight
        let (num, den) = (*rho.numer() as u128, *rho.denom() as u128);
        x as u128 * den > (den - num) * coffer_weight as u128
    })
}

/// Every consistent DAG seeded at step 0, as member bitmask and weight.
fn all_dags(msgs: &[SieveMessage], rho: Rational) -> Vec<(u32, u64)> {
    let store: BTreeMap<MessageId, &SieveMessage> = msgs.iter().map(|m| (m.id(), m)).collect();
    (1u32..1 << msgs.len())
        .filter_map(|mask| {
            let members: Vec<&SieveMessage> = (0..msgs.len())
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| &msgs[i])
                .collect();
            reference_consistent(&members, &store, 0, rho)
                .then(|| (mask, members.iter().map(|m| m.weight).sum()))
        })
        .collect()
}

const RHOS: [(u64, u64); 4] = [(1, 4), (1, 3), (2, 5), (1, 2)];

fn dag_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut queries = 0;
    for case in 0..500 {
        let (msgs, store) = random_pool(&mut rng, 12);
        let (n, d) = RHOS[case % RHOS.len()];
        let rho = Rational::new(n, d);
        let pool: WeightedMessageSet = msgs.iter().map(|m| (m.id(), m.clone())).collect();
        let dags = all_dags(&msgs, rho);
        for (i, m) in msgs.iter().enumerate() {
            let expect = dags
                .iter()
                .filter(|(mask, _)| mask >> i & 1 == 1)
                .map(|(_, w)| *w)
                .max();
            let got = find_heaviest_consistent_dag(m, &pool, &store, 0, rho)
                .map_err(|e| e.to_string())?
                .map(|c| c.weight);
            ensure(got == expect, || {
                format!("pool {case}, message {i}: search {got:?}, exhaustive {expect:?}")
            })?;
            queries += 1;
        }
        let expect = dags.iter().map(|(_, w)| *w).max();
        let got = heaviest_dag_avoiding(&WeightedMessageSet::new(), &pool, &store, 0, rho)
            .map_err(|e| e.to_string())?
            .map(|c| c.weight);
        ensure(got == expect, || {
            format!("pool {case}: unrestricted {got:?} vs {expect:?}")
        })?;
    }
    Ok(format!(
        "500 pools of up to 12 messages, {queries} per-message searches match"
    ))
}

fn disjoint_dags() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut pairs = 0u64;
    for case in 0..500 {
        let (msgs, _) = random_pool(&mut rng, 9);
        let (n, d) = RHOS[case % RHOS.len()];
        let rho = Rational::new(n, d);
        let dags = all_dags(&msgs, rho);
        let seed_mask: u32 = (0..msgs.len())
            .filter(|&i| msgs[i].timestamp == 0)
            .fold(0, |acc, i| acc | 1 << i);
        for (i, (a, _)) in dags.iter().enumerate() {
            for (b, _) in &dags[i + 1..] {
                if a & b & seed_mask != 0 {
                    continue;
                }
                pairs += 1;
                ensure(a & b == 0, || {
                    format!(
                        "pool {case}: DAGs {a:#b} and {b:#b} have disjoint seeds but share a layer"
                    )
                })?;
            }
        }
    }
    ensure(pairs >= 500, || format!("only {pairs} seed-disjoint pairs"))?;
    Ok(format!(
        "{pairs} seed-disjoint DAG pairs over 500 pools stay disjoint in every layer"
    ))
}

fn pow_backend() -> Check {
    let t = Instant::now();
    let mut tampers = 0u64;
    for w in [16u64, 64, 256] {
        for k in [4u32, 8] {
            let params = PowParams { k };
            let chi = format!("challenge-{w}-{k}").into_bytes();
            let (proof, pc) = prove(&chi, w, params).map_err(|e| e.to_string())?;
            let (ok, vc) = verify(&proof, &chi, w, params);
            ensure(ok, || format!("w={w} k={k}: round trip rejected"))?;
            let retries = pc.index_derivation - k as u64;
            ensure(pc.total() >= 2 * w - 1, || {
                format!("w={w} k={k}: prover made {} calls", pc.total())
            })?;
            ensure(pc.total() <= 2 * w + k as u64 + retries, || {
                format!("w={w} k={k}: prover made {} calls", pc.total())
            })?;
            let log = 64 - (w - 1).leading_zeros() as u64;
            ensure(vc.tree() <= k as u64 * (log + 1), || {
                format!("w={w} k={k}: verifier made {} tree calls", vc.tree())
            })?;
            ensure(vc.index_derivation == k as u64 + retries, || {
                format!(
                    "w={w} k={k}: verifier made {} index calls",
                    vc.index_derivation
                )
            })?;
            let bytes = encode_proof(&proof);
            for bit in 0..bytes.len() * 8 {
                let mut bad = bytes.clone();
                bad[bit / 8] ^= 1 << (bit % 8);
                let accepted = decode_proof(&bad).is_ok_and(|p| verify(&p, &chi, w, params).0);
                ensure(!accepted, || {
                    format!("w={w} k={k}: flipping bit {bit} went unnoticed")
                })?;
                tampers += 1;
            }
        }
    }
    within(t, Duration::from_secs(30))?;
    Ok(format!(
        "6 parameter pairs round-trip, {tampers} single-bit tampers rejected ({:?})",
        t.elapsed()
    ))
}

fn determinism() -> Check {
    let mut runs = 0;
    for name in builtin_names() {
        let sc = Scenario::builtin(name).map_err(|e| e.to_string())?;
        for seed in [0, 1, 7] {
            let opts = RunOptions {
                seed: Some(seed),
                trace: TraceLevel::Digest,
                ..Default::default()
            };
            let a = run(&sc, &opts).map_err(|e| e.to_string())?;
            let b = run(&sc, &opts).map_err(|e| e.to_string())?;
            ensure(
                a.trace.digest.is_some() && a.trace.digest == b.trace.digest,
                || format!("{name} seed {seed}: digests differ"),
            )?;
            runs += 1;
        }
    }
    Ok(format!(
        "{runs} scenario/seed pairs reproduce their trace digest"
    ))
}

fn main() {
    let suite = random_suite();
    let from_suite = |f: fn(&Suite) -> Check| -> Check {
        match &suite {
            Ok(s) => f(s),
            Err(e) => Err(e.clone()),
        }
    };
    let results: Vec<(&str, Check)> = vec![
        ("fig3 online filtering", fig3()),
        ("fig5 bootstrap filtering", fig5()),
        ("fig4 naive replay vs bootstrap", fig4()),
        ("ttrb over random scenarios", from_suite(ttrb_suite)),
        ("consistency at rho 1/3", from_suite(consistency_suite)),
        ("best-case latency", cl1()),
        ("latency under a griefing leader", cl2()),
        ("dag search vs exhaustive", dag_oracle()),
        ("disjoint seeds stay disjoint", disjoint_dags()),
        ("merkle dpow backend", pow_backend()),
        ("trace determinism", determinism()),
    ];
    let mut failed = 0;
    for (i, (name, r)) in results.iter().enumerate() {
        match r {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria pass",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
