// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};

use sieve_mmr::oracle::{backend_from_name, BACKENDS};
use sieve_mmr::powlib::{self, PowParams};
use sieve_mmr::sieve::POLICIES;
use sieve_mmr::sim::adversary::STRATEGIES;
use sieve_mmr::sim::metrics::Metrics;
use sieve_mmr::sim::scenario::{builtin_names, Scenario};
use sieve_mmr::sim::trace::TraceLevel;
use sieve_mmr::sim::{run, RunOptions, RunOutcome};
use sieve_mmr::{format_rational, parse_rational, MessageId, NodeId};

/// Sieve/MMR simulator and proof-of-work tooling.
#[derive(Parser)]
#[command(name = "sieve-mmr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and print its report as JSON.
    Run(RunArgs),
    /// Run a scenario over a seed range and print one CSV row per seed.
    Sweep(SweepArgs),
    /// Check that a scenario parses and validates.
    Validate {
        scenario: String,
        #[command(flatten)]
        dir: ScenarioDir,
    },
    /// List built-in scenarios and registered strategies, filters and backends.
    List,
    /// Proof-of-work parameter tuning and proof files.
    Pow {
        #[command(subcommand)]
        action: PowAction,
    },
}

#[derive(Args)]
struct ScenarioDir {
    /// Directory searched for `<name>.toml` before the built-ins.
    #[arg(long, env = "SIEVE_MMR_SCENARIOS")]
    scenario_dir: Option<PathBuf>,
}

#[derive(Args)]
struct Overrides {
    /// Filter policy of the correct nodes.
    #[arg(long, value_parser = PossibleValuesParser::new(POLICIES))]
    mode: Option<String>,
    /// DPoW backend.
    #[arg(long, value_parser = PossibleValuesParser::new(BACKENDS))]
    backend: Option<String>,
    /// Number of steps to simulate.
    #[arg(long)]
    horizon: Option<u64>,
}

impl Overrides {
    fn options(&self, seed: Option<u64>, trace: TraceLevel) -> Result<RunOptions> {
        Ok(RunOptions {
            seed,
            mode: self.mode.clone(),
            backend: self.backend.as_deref().map(backend_from_name).transpose()?,
            horizon: self.horizon,
            trace,
        })
    }
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file, name in the scenario directory, or built-in name.
    scenario: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the full event trace here, one JSON object per line.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Print only the trace digest.
    #[arg(long)]
    trace_digest: bool,
    #[command(flatten)]
    overrides: Overrides,
    #[command(flatten)]
    dir: ScenarioDir,
}

#[derive(Args)]
struct SweepArgs {
    scenario: String,
    /// Seed range, `a..b` or `a..=b`.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Range<u64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(flatten)]
    dir: ScenarioDir,
}

#[derive(Subcommand)]
enum PowAction {
    /// Smallest k with (min-work)^k below 2^-target-bits.
    Tune {
        #[arg(long)]
        target_bits: u32,
        /// Fraction of the honest work a cheater performs, e.g. `1/2`.
        #[arg(long)]
        min_work: String,
    },
    /// Build a proof for a hex challenge and write it to a file.
    Prove {
        #[arg(long)]
        chi: String,
        #[arg(long)]
        w: u64,
        #[arg(long)]
        k: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a proof file against a hex challenge.
    Verify {
        #[arg(long)]
        chi: String,
        #[arg(long)]
        w: u64,
        #[arg(long)]
        k: u32,
        #[arg(long)]
        proof: PathBuf,
    },
}

fn parse_seeds(s: &str) -> Result<Range<u64>, String> {
    let bad = || format!("expected a..b or a..=b, got {s:?}");
    let (a, b, inclusive) = match s.split_once("..=") {
        Some((a, b)) => (a, b, true),
        None => {
            let (a, b) = s.split_once("..").ok_or_else(bad)?;
            (a, b, false)
        }
    };
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    let end = if inclusive { b + 1 } else { b };
    Ok(a..end.max(a))
}

fn load(spec: &str, dir: &ScenarioDir) -> Result<Scenario> {
    Ok(Scenario::load(spec, dir.scenario_dir.as_deref())?)
}

fn latency_stats(m: &Metrics) -> Value {
    let mut l = m.latencies.clone();
    l.sort_unstable();
    let pct = |p: usize| l[(l.len() - 1) * p / 100];
    if l.is_empty() {
        return json!({ "no_commits": true, "samples": 0, "unresolved": m.unresolved });
    }
    json!({
        "samples": l.len(),
        "min": l[0],
        "mean": m.mean_latency(),
        "p50": pct(50),
        "p90": pct(90),
        "max": l[l.len() - 1],
        "unresolved": m.unresolved,
    })
}

fn report(sc: &Scenario, o: &RunOutcome) -> Value {
    let senders: BTreeMap<MessageId, NodeId> =
        o.sent.iter().map(|r| (r.message.id(), r.sender)).collect();
    let deliveries: Vec<Value> = o
        .deliveries
        .iter()
        .map(|((node, step), d)| {
            let msgs: Vec<Value> = d
                .filtered
                .values()
                .map(|m| {
                    json!({
                        "id": m.id().short(),
                        "sender": senders.get(&m.id()).map(ToString::to_string),
                        "timestamp": m.timestamp,
                        "weight": m.weight,
                    })
                })
                .collect();
            json!({ "node": node.to_string(), "step": step, "bootstrapped": d.bootstrapped, "messages": msgs })
        })
        .collect();
    let commits: BTreeMap<String, usize> = o
        .commits
        .iter()
        .map(|(n, c)| (n.to_string(), c.len()))
        .collect();
    json!({
        "scenario": o.scenario,
        "scenario_digest": sc.digest(),
        "seed": o.seed,
        "mode": o.mode,
        "backend": o.backend,
        "horizon": o.horizon,
        "passed": o.passed(),
        "verdicts": o.verdicts,
        "supremacy_violation": o.supremacy_violation,
        "latency": latency_stats(&o.metrics),
        "leader": { "trials": o.metrics.leader_trials, "successes": o.metrics.leader_successes },
        "commits": commits,
        "trace_digest": o.trace.digest,
        "deliveries": deliveries,
    })
}

fn cmd_run(a: &RunArgs) -> Result<bool> {
    let sc = load(&a.scenario, &a.dir)?;
    let level = if a.trace.is_some() {
        TraceLevel::Full
    } else {
        TraceLevel::Digest
    };
    let o = run(&sc, &a.overrides.options(a.seed, level)?)?;
    if let Some(path) = &a.trace {
        let mut text = o.trace.lines.join("\n");
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    if a.trace_digest {
        println!("{}", o.trace.digest.as_deref().unwrap_or_default());
    } else {
        println!("{}", serde_json::to_string_pretty(&report(&sc, &o))?);
    }
    Ok(o.passed())
}

const SWEEP_HEADER: &str = "seed,passed,failed,samples,mean_latency,min_latency,max_latency,unresolved,leader_trials,leader_successes,trace_digest,error";

fn sweep_row(seed: u64, r: &Result<RunOutcome, String>) -> String {
    match r {
        Err(e) => format!("{seed},false,,,,,,,,,,{}", e.replace([',', '\n'], ";")),
        Ok(o) => {
            let m = &o.metrics;
            let failed: Vec<&str> = o
                .verdicts
                .iter()
                .filter(|v| v.asserted && !v.passed)
                .map(|v| v.name)
                .collect();
            let opt = |v: Option<String>| v.unwrap_or_default();
            format!(
                "{seed},{},{},{},{},{},{},{},{},{},{},",
                o.passed(),
                failed.join(";"),
                m.latencies.len(),
                opt(m.mean_latency().map(|x| format!("{x:.4}"))),
                opt(m.latencies.iter().min().map(u64::to_string)),
                opt(m.latencies.iter().max().map(u64::to_string)),
                m.unresolved,
                m.leader_trials,
                m.leader_successes,
                o.trace.digest.as_deref().unwrap_or_default(),
            )
        }
    }
}

fn cmd_sweep(a: &SweepArgs) -> Result<bool> {
    let sc = load(&a.scenario, &a.dir)?;
    let seeds: Vec<u64> = a.seeds.clone().collect();
    let opts: Vec<RunOptions> = seeds
        .iter()
        .map(|s| a.overrides.options(Some(*s), TraceLevel::Digest))
        .collect::<Result<_>>()?;
    let results: Vec<Result<RunOutcome, String>> = opts
        .par_iter()
        .map(|o| run(&sc, o).map_err(|e| e.to_string()))
        .collect();
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    let mut total = Metrics::default();
    let mut ok = true;
    for (seed, r) in seeds.iter().zip(&results) {
        out.push_str(&sweep_row(*seed, r));
        out.push('\n');
        match r {
            Ok(o) => {
                total.merge(&o.metrics);
                ok &= o.passed();
            }
            Err(_) => ok = false,
        }
    }
    match &a.output {
        Some(path) => {
            fs::write(path, &out).with_context(|| format!("writing {}", path.display()))?
        }
        None => std::io::stdout().write_all(out.as_bytes())?,
    }
    if !seeds.is_empty() {
        let passed = results
            .iter()
            .filter(|r| r.as_ref().is_ok_and(RunOutcome::passed))
            .count();
        eprintln!("runs,passed,samples,mean_latency,unresolved,leader_trials,leader_successes");
        eprintln!(
            "{},{},{},{},{},{},{}",
            seeds.len(),
            passed,
            total.latencies.len(),
            total
                .mean_latency()
                .map(|x| format!("{x:.4}"))
                .unwrap_or_default(),
            total.unresolved,
            total.leader_trials,
            total.leader_successes,
        );
    }
    Ok(ok)
}

fn cmd_validate(spec: &str, dir: &ScenarioDir) -> Result<bool> {
    let sc = load(spec, dir)?;
    println!("ok {} {}", sc.name, sc.digest());
    Ok(true)
}

fn cmd_list() -> Result<bool> {
    println!("scenarios: {}", builtin_names().join(", "));
    println!("strategies: {}", STRATEGIES.join(", "));
    println!("filters: {}", POLICIES.join(", "));
    println!("backends: {}", BACKENDS.join(", "));
    Ok(true)
}

fn chi_bytes(hex_chi: &str) -> Result<Vec<u8>> {
    hex::decode(hex_chi).context("--chi must be hex")
}

fn cmd_pow(action: &PowAction) -> Result<bool> {
    match action {
        PowAction::Tune {
            target_bits,
            min_work,
        } => {
            let t = parse_rational(min_work)?;
            let k = powlib::minimal_k(*target_bits, t)?;
            println!("k = {k}");
            println!("bound: ({})^{k} < 2^-{target_bits}", format_rational(&t));
            Ok(true)
        }
        PowAction::Prove { chi, w, k, out } => {
            let (proof, calls) = powlib::prove(&chi_bytes(chi)?, *w, PowParams { k: *k })?;
            write_file(out, &powlib::encode_proof(&proof))?;
            println!("root {}", hex::encode(proof.root));
            println!("hash calls {}", calls.total());
            Ok(true)
        }
        PowAction::Verify { chi, w, k, proof } => {
            let bytes = fs::read(proof).with_context(|| format!("reading {}", proof.display()))?;
            let p = powlib::decode_proof(&bytes)?;
            let (ok, _) = powlib::verify(&p, &chi_bytes(chi)?, *w, PowParams { k: *k });
            println!("{}", if ok { "valid" } else { "invalid" });
            Ok(ok)
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Validate { scenario, dir } => cmd_validate(scenario, dir),
        Command::List => cmd_list(),
        Command::Pow { action } => cmd_pow(action),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
