// SPDX-License-Identifier: Apache-2.0

//! Random scenarios that respect correct supremacy by construction.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::oracle::{BackendSpec, DeliveryConvention};
use crate::types::{Rational, Step};

use super::adversary::{StrategySpec, STRATEGIES};
use super::scenario::{Application, NodeSpec, Role, Scenario, SCHEMA_VERSION};

pub const MAX_NODES: u32 = 8;
pub const MAX_STEPS: Step = 30;

/// Byzantine strategies worth sampling; parameters are filled in per scenario.
fn strategy(rng: &mut ChaCha8Rng, k: u64, horizon: Step) -> StrategySpec {
    let ticks = horizon * k;
    match *STRATEGIES.choose(rng).expect("non-empty") {
        "passive" => StrategySpec::Passive { weight: 1 },
        "time-travel" => StrategySpec::TimeTravel {
            delay: rng.gen_range(1..=3),
        },
        "antique-timestamper" => StrategySpec::AntiqueTimestamper {
            start_tick: rng.gen_range(0..ticks),
            count: rng.gen_range(1..=4),
            weight: 1,
        },
        "history-forger" => {
            let label_step = rng.gen_range(0..horizon);
            StrategySpec::HistoryForger {
                label_step,
                count: rng.gen_range(1..=3),
                release_tick: rng.gen_range(label_step * k..ticks),
            }
        }
        name => StrategySpec::from_name(name).expect("registered"),
    }
}

/// A scenario of up to eight nodes and thirty steps whose total Byzantine
/// power stays below `ρ·Cmin·(K−1) / (K·(1−ρ))`, with Cmin the smallest computing
/// correct power over all steps.
pub fn random_scenario(seed: u64, rho: Rational) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k: u64 = rng.gen_range(2..=4);
    let horizon: Step = rng.gen_range(4..=MAX_STEPS);
    let n_correct = rng.gen_range(2..=MAX_NODES - 1);
    let n_byz = rng.gen_range(0..=(MAX_NODES - n_correct).min(3));
    let mut nodes = Vec::new();
    for id in 1..=n_correct {
        let inactive = if id == 1 {
            Vec::new()
        } else {
            (0..horizon).filter(|_| rng.gen_bool(0.15)).collect()
        };
        nodes.push(NodeSpec {
            id,
            role: Role::Correct,
            power: Rational::from_integer(rng.gen_range(1..=3)),
            inactive,
            strategy: None,
        });
    }
    let bootstrap_delay = if rng.gen_bool(0.2) {
        rng.gen_range(1..=2)
    } else {
        0
    };
    let mut sc = Scenario {
        version: SCHEMA_VERSION,
        name: format!("random-{seed}"),
        description: String::new(),
        ticks_per_step: k,
        rho,
        horizon,
        seed,
        application: Application::Mmr,
        mode: "sieve".into(),
        delivery: DeliveryConvention::LastTick,
        backend: BackendSpec::Ideal,
        violation: false,
        bootstrap_delay,
        nodes,
    };
    let c_min = (0..horizon)
        .map(|s| sc.computing_power_at(s))
        .min()
        .expect("horizon > 0");
    let bound = rho * c_min * Rational::from_integer(k - 1)
        / (Rational::from_integer(k) * (Rational::from_integer(1) - rho));
    // Largest multiple of 1/100 strictly below the bound.
    let hundredths = (bound * Rational::from_integer(100))
        .ceil()
        .to_integer()
        .saturating_sub(1);
    let mut budget = hundredths;
    for j in 0..n_byz {
        if budget == 0 {
            break;
        }
        let share = if j + 1 == n_byz {
            budget
        } else {
            rng.gen_range(1..=budget)
        };
        budget -= share;
        let inactive = (0..horizon).filter(|_| rng.gen_bool(0.1)).collect();
        sc.nodes.push(NodeSpec {
            id: n_correct + j + 1,
            role: Role::Byzantine,
            power: Rational::new(share, 100),
            inactive,
            strategy: Some(strategy(&mut rng, k, horizon)),
        });
    }
    if rng.gen_bool(0.1) {
        sc.backend = BackendSpec::Merkle {
            k: 2,
            leaves_per_weight: 4,
        };
    }
    sc
}
