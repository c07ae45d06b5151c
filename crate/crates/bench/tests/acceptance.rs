//! Acceptance suite. Every criterion prints one PASS/FAIL line to stdout
//! (outside the test harness capture) and then asserts.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use coalition_bench::report::{run_manifest_to, RunResults};
use coalition_bench::{Regime, RunManifest};
use coalition_core::allocation::waterfill;
use coalition_core::belief::{kl_gaussian, mle_gaussian};
use coalition_core::dynamics::{best_reply_step, run_best_reply, DynamicsConfig, VetoRule};
use coalition_core::game::{enumerate_structures, is_nash_stable};
use coalition_core::markov::{build_chain, formation_probabilities, MarkovModel};
use coalition_core::matching::{matching_weight, max_weight_matching};
use coalition_core::par::Execution;
use coalition_core::seed::{derive_seed, RngStreams};
use coalition_core::{BeliefState, CoalitionStructure, Environment, Network, PayoffEngine, Scenario, SimulationSetting, TypeSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: u32, name: &str, pass: bool, elapsed: Duration, detail: &str) {
    let line = format!(
        "\n{} criterion {id:>2} {name}: {detail} ({:.2} s)\n",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
}

fn two_types() -> Vec<TypeSpec> {
    vec![TypeSpec::new(1, 12.0, 3.0), TypeSpec::new(2, 18.0, 3.0)]
}

fn network(setting: &str, seed: u64) -> Network {
    let s = SimulationSetting::named(setting).unwrap();
    Network::new(Scenario::generate(&s, &Environment::urban(), &two_types(), seed).unwrap()).unwrap()
}

fn manifest(settings: &[&str], topologies: usize, regimes: &[Regime]) -> RunManifest {
    RunManifest {
        settings: settings.iter().map(|s| s.to_string()).collect(),
        topologies,
        repetitions: 1,
        seed: 2024,
        regimes: regimes.to_vec(),
        ..RunManifest::example()
    }
}

fn run_into_temp(m: &RunManifest) -> (tempfile::TempDir, RunResults) {
    let dir = tempfile::tempdir().unwrap();
    let results = run_manifest_to(m, dir.path()).unwrap();
    (dir, results)
}

#[test]
fn criterion_01_partition_enumeration() {
    let t = Instant::now();
    let counts: Vec<usize> = (1..=6).map(|d| enumerate_structures(d, 8).unwrap().len()).collect();
    let distinct = (1..=6).all(|d| {
        let all = enumerate_structures(d, 8).unwrap();
        all.iter().collect::<BTreeSet<_>>().len() == all.len()
    });
    let elapsed = t.elapsed();
    let pass = counts == [1, 2, 5, 15, 52, 203] && distinct && elapsed < Duration::from_secs(1);
    report(1, "partition enumeration", pass, elapsed, &format!("counts {counts:?}"));
    assert!(pass);
}

fn brute_force_matching(w: &[Vec<f64>]) -> f64 {
    let (rows, cols) = (w.len(), w[0].len());
    let transpose = rows > cols;
    let get = |i: usize, j: usize| if transpose { w[j][i] } else { w[i][j] };
    let (small, large) = if transpose { (cols, rows) } else { (rows, cols) };
    // every injective map from the small side into the large side
    fn rec(i: usize, small: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64, get: &dyn Fn(usize, usize) -> f64) {
        if i == small {
            *best = best.max(acc);
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                rec(i + 1, small, used, acc + get(i, j), best, get);
                used[j] = false;
            }
        }
    }
    let mut best = f64::NEG_INFINITY;
    rec(0, small, &mut vec![false; large], 0.0, &mut best, &get);
    best
}

#[test]
fn criterion_02_matching_oracle() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let rows = rng.random_range(1..=6);
        let cols = rng.random_range(1..=6);
        let w: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..cols).map(|_| rng.random_range(-20..=20) as f64).collect())
            .collect();
        let pairs = max_weight_matching(&w);
        let valid = pairs.len() == rows.min(cols)
            && pairs.iter().map(|p| p.0).collect::<BTreeSet<_>>().len() == pairs.len()
            && pairs.iter().map(|p| p.1).collect::<BTreeSet<_>>().len() == pairs.len();
        if !valid || matching_weight(&w, &pairs) != brute_force_matching(&w) {
            mismatches += 1;
        }
    }
    let elapsed = t.elapsed();
    let pass = mismatches == 0 && elapsed < Duration::from_secs(10);
    report(2, "matching oracle", pass, elapsed, &format!("{mismatches} mismatches in 1000 matrices"));
    assert!(pass);
}

#[test]
fn criterion_03_waterfilling_kkt() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_level = 0.0f64;
    let mut worst_budget = 0.0f64;
    let mut kkt_violations = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=12);
        let gains: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.random_range(-3.0..2.0))).collect();
        let budget = rng.random_range(0.01..50.0);
        let pv = waterfill(&gains, budget);
        let level = pv.water_level.unwrap();
        for (p, g) in pv.p.iter().zip(&gains) {
            if *p > 0.0 {
                worst_level = worst_level.max(((p + 1.0 / g) - level).abs() / level);
            } else if 1.0 / g < level * (1.0 - 1e-9) {
                kkt_violations += 1;
            }
        }
        worst_budget = worst_budget.max((pv.p.iter().sum::<f64>() - budget).abs() / budget);
    }
    let hand = waterfill(&[1.0, 0.5], 3.0);
    let hand_ok = (hand.p[0] - 2.0).abs() < 1e-12 && (hand.p[1] - 1.0).abs() < 1e-12;
    let elapsed = t.elapsed();
    let pass = worst_level <= 1e-9 && worst_budget <= 1e-9 && kkt_violations == 0 && hand_ok;
    report(
        3,
        "water-filling KKT",
        pass,
        elapsed,
        &format!(
            "level dev {worst_level:.1e}, budget dev {worst_budget:.1e}, {kkt_violations} inactive violations, hand case {:?}",
            hand.p
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_04_kl_and_mle() {
    let t = Instant::now();
    let kl = kl_gaussian(12.0, 3.0, 18.0, 3.0).unwrap();
    let est = mle_gaussian(&[1.0, 2.0, 3.0]).unwrap();
    let pass = (kl - 2.0).abs() <= 1e-12 && est.mu == 2.0 && est.var == 2.0 / 3.0;
    report(
        4,
        "KL and MLE closed forms",
        pass,
        t.elapsed(),
        &format!("KL {kl}, MLE ({}, {})", est.mu, est.var),
    );
    assert!(pass);
}

#[test]
fn criterion_05_stability_cross_check() {
    let t = Instant::now();
    let mut failures = Vec::new();
    for k in 0..50u64 {
        let setting = if k % 2 == 0 { "S1" } else { "S2" };
        let net = network(setting, derive_seed(5, &[k]));
        let engine = PayoffEngine::with_default_cap(&net).unwrap();
        let truth = BeliefState::truth(&net.true_type, net.num_types());
        let chain = build_chain(&engine, &truth, VetoRule::NextBest, Execution::Parallel, 8).unwrap();
        let absorbing: BTreeSet<&CoalitionStructure> = chain.absorbing.iter().map(|&a| &chain.states[a]).collect();
        let stable: BTreeSet<&CoalitionStructure> = chain
            .states
            .iter()
            .filter(|s| is_nash_stable(s, &truth, &engine).is_stable())
            .collect();
        if absorbing != stable {
            failures.push(format!("{setting}#{k}: absorbing {absorbing:?} vs stable {stable:?}"));
        }
        for (r, start) in [CoalitionStructure::singletons(net.num_drones()), CoalitionStructure::grand(net.num_drones())]
            .iter()
            .enumerate()
        {
            let cfg = DynamicsConfig::default();
            match run_best_reply(start, &truth, &engine, &cfg, &mut RngStreams::new(derive_seed(k, &[r as u64]))) {
                Ok(out) if stable.contains(&out.structure) => {}
                Ok(out) => failures.push(format!("{setting}#{k}: best reply ended in {}", out.structure)),
                Err(e) => failures.push(format!("{setting}#{k}: {e}")),
            }
        }
    }
    let elapsed = t.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(120);
    report(
        5,
        "stability cross-check",
        pass,
        elapsed,
        &format!("50 scenarios, {} failures {:?}", failures.len(), failures.first()),
    );
    assert!(pass, "{failures:#?}");
}

/// Absorption counts of `n` simulated best-reply trajectories from
/// singletons, indexed like the chain's states.
fn simulate_absorption(
    chain: &MarkovModel,
    engine: &PayoffEngine,
    beliefs: &BeliefState,
    n: usize,
    seed: u64,
) -> Vec<usize> {
    let d = engine.num_drones();
    let mut counts = vec![0; chain.len()];
    let mut rngs = RngStreams::new(seed);
    for _ in 0..n {
        let mut state = CoalitionStructure::singletons(d);
        let mut idx = chain.index_of(&state).unwrap();
        while !chain.absorbing.contains(&idx) {
            let proposer = rngs.controller.random_range(0..d);
            if let Some((next, _)) = best_reply_step(&state, proposer, beliefs, engine, VetoRule::NextBest, &mut rngs.ties) {
                state = next;
                idx = chain.index_of(&state).unwrap();
            }
        }
        counts[idx] += 1;
    }
    counts
}

fn positive_absorbing(chain: &MarkovModel, probs: &[f64]) -> usize {
    chain.absorbing.iter().filter(|&&a| probs[a] > 0.0).count()
}

struct Fixture {
    net: Network,
    beliefs: BeliefState,
}

/// 4-drone topologies whose chain from singletons, under the uniform prior
/// beliefs, ends in more than one structure. Under point-mass beliefs these
/// chains almost always have a single reachable absorbing state.
fn markov_fixtures(count: usize) -> (Vec<Fixture>, usize, usize) {
    let mut fixtures = Vec::new();
    let mut exactly_two = 0;
    let mut scanned = 0;
    for k in 0..5000u64 {
        let net = network("S2", derive_seed(6, &[k]));
        let engine = PayoffEngine::with_default_cap(&net).unwrap();
        let beliefs = BeliefState::uniform(&net.true_type, net.num_types());
        let chain = build_chain(&engine, &beliefs, VetoRule::NextBest, Execution::Parallel, 8).unwrap();
        let probs = formation_probabilities(&chain, &chain.point_mass(&CoalitionStructure::singletons(4)).unwrap()).unwrap();
        scanned += 1;
        let formed = positive_absorbing(&chain, &probs);
        let total: f64 = chain.absorbing.iter().map(|&a| probs[a]).sum();
        if chain.absorbing.len() == 2 && formed == 2 && (total - 1.0).abs() < 1e-9 {
            exactly_two += 1;
        }
        if formed >= 2 {
            drop(engine);
            fixtures.push(Fixture { net, beliefs });
            if fixtures.len() == count {
                break;
            }
        }
    }
    (fixtures, exactly_two, scanned)
}

#[test]
fn criterion_06_markov_oracle() {
    let t = Instant::now();
    const TRAJECTORIES: usize = 10_000;
    let (fixtures, exactly_two, scanned) = markov_fixtures(10);

    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for (k, f) in fixtures.iter().enumerate() {
        let engine = PayoffEngine::with_default_cap(&f.net).unwrap();
        let chain = build_chain(&engine, &f.beliefs, VetoRule::NextBest, Execution::Parallel, 8).unwrap();
        let probs = formation_probabilities(&chain, &chain.point_mass(&CoalitionStructure::singletons(4)).unwrap()).unwrap();
        let counts = simulate_absorption(&chain, &engine, &f.beliefs, TRAJECTORIES, derive_seed(60, &[k as u64]));
        for &a in &chain.absorbing {
            let p = probs[a];
            let freq = counts[a] as f64 / TRAJECTORIES as f64;
            let sigma = (p * (1.0 - p) / TRAJECTORIES as f64).sqrt();
            if sigma > 0.0 {
                worst = worst.max((freq - p).abs() / sigma);
            }
            if (freq - p).abs() > 3.0 * sigma + 1.0 / TRAJECTORIES as f64 {
                failures.push(format!("fixture {k} state {}: p {p:.4} freq {freq:.4}", chain.states[a]));
            }
        }
    }
    let elapsed = t.elapsed();
    let pass = fixtures.len() == 10 && failures.is_empty() && exactly_two > 0;
    report(
        6,
        "Markov oracle",
        pass,
        elapsed,
        &format!(
            "{} fixtures, worst |z| {worst:.2}, {} failures; {exactly_two} of {scanned} 4-drone chains with exactly two absorbing states",
            fixtures.len(),
            failures.len()
        ),
    );
    assert!(pass, "{failures:#?}");
}

static FULL_RUN: OnceLock<(Duration, RunResults)> = OnceLock::new();

/// 100 topologies of S1..S4 with every regime; shared by criteria 7 and 9.
fn full_run() -> &'static (Duration, RunResults) {
    FULL_RUN.get_or_init(|| {
        let t = Instant::now();
        let m = manifest(&["S1", "S2", "S3", "S4"], 100, &Regime::ALL);
        let (_dir, results) = run_into_temp(&m);
        (t.elapsed(), results)
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn criterion_07_dominance_chain() {
    let (elapsed, results) = full_run();
    let mut violations = Vec::new();
    let mut means = Vec::new();
    for t in &results.topologies {
        let get = |r: Regime| t.runs.iter().find(|run| run.0 == r).map(|run| &run.3).unwrap();
        let (base, full, opt) = (get(Regime::Baseline), get(Regime::FullInfo), get(Regime::SocialOptimal));
        let tag = format!("{}#{}", t.setting.name, t.topology);
        if opt.total_rate < full.best_stable || full.best_stable < base.total_rate {
            violations.push(format!(
                "{tag}: optimum {} best_stable {} baseline {}",
                opt.total_rate, full.best_stable, base.total_rate
            ));
        }
        if full.per_drone.iter().zip(&base.per_drone).any(|(f, b)| f < b) {
            violations.push(format!("{tag}: a drone earns less than its baseline rate in {}", full.structure));
        }
    }
    for s in ["S1", "S2", "S3", "S4"] {
        let values = |r: Regime, best: bool| -> Vec<f64> {
            results
                .topologies
                .iter()
                .filter(|t| t.setting.name == s)
                .flat_map(|t| t.runs.iter().filter(|run| run.0 == r))
                .map(|run| if best { run.3.best_stable } else { run.3.total_rate })
                .collect()
        };
        means.push((
            s,
            mean(&values(Regime::Baseline, false)),
            mean(&values(Regime::FullInfo, true)),
            mean(&values(Regime::SocialOptimal, false)),
        ));
    }
    let strict = means.iter().all(|&(_, b, f, o)| b < f && f < o);
    let pass = violations.is_empty() && strict && *elapsed < Duration::from_secs(3600);
    let table: Vec<String> = means
        .iter()
        .map(|&(s, b, f, o)| {
            let rel = |x: f64, y: f64| if x < y { "<" } else if x == y { "=" } else { ">" };
            format!("{s} {b:.4} {} {f:.4} {} {o:.4}", rel(b, f), rel(f, o))
        })
        .collect();
    report(
        7,
        "dominance chain",
        pass,
        *elapsed,
        &format!("{} violations; means {}", violations.len(), table.join(", ")),
    );
    assert!(pass, "{violations:#?}\n{means:?}");
}

/// Fraction of runs whose mean Frobenius norm reaches 0, and the mean over
/// runs of the per-run average norm.
fn learning_stats(types: Vec<TypeSpec>, stop: bool) -> (f64, f64, usize) {
    let mut m = manifest(&["S1"], 100, &[Regime::Proposed]);
    m.types = types;
    m.dynamics.stop_on_convergence = stop;
    let (_dir, results) = run_into_temp(&m);
    let series: Vec<Vec<f64>> = results
        .topologies
        .iter()
        .flat_map(|t| t.runs.iter().map(|run| run.3.frobenius.iter().map(|f| f.mean).collect()))
        .collect();
    let reached = series.iter().filter(|s| s.iter().take(100).any(|&x| x == 0.0)).count();
    let avg = mean(&series.iter().map(|s| mean(s)).collect::<Vec<_>>());
    (reached as f64 / series.len() as f64, avg, series.len())
}

#[test]
fn criterion_08_learning_convergence() {
    let t = Instant::now();
    let (reached, _, runs) = learning_stats(two_types(), true);
    let (_, narrow, _) = learning_stats(two_types(), false);
    let (_, wide, _) = learning_stats(vec![TypeSpec::new(1, 12.0, 6.0), TypeSpec::new(2, 18.0, 6.0)], false);
    let pass = runs == 100 && reached >= 0.9 && wide > narrow;
    report(
        8,
        "learning convergence",
        pass,
        t.elapsed(),
        &format!(
            "{:.0}% of {runs} S1 runs reach norm 0; 100-round mean norm sigma 3 {narrow:.4}, sigma 6 {wide:.4}",
            reached * 100.0
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_best_reply_budget() {
    let (elapsed, results) = full_run();
    let runs: Vec<_> = results
        .rows
        .iter()
        .filter(|r| matches!(r.regime, Regime::FullInfo | Regime::Proposed))
        .collect();
    let within = runs.iter().filter(|r| r.converged && r.changes <= 50).count();
    let share = within as f64 / runs.len() as f64;
    let max = runs.iter().map(|r| r.changes).max().unwrap_or(0);
    let pass = share >= 0.95;
    report(
        9,
        "best-reply budget",
        pass,
        *elapsed,
        &format!("{within} of {} runs within 50 changes, most {max}", runs.len()),
    );
    assert!(pass);
}

fn dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_10_determinism() {
    let t = Instant::now();
    let mut m = manifest(&["S1", "S2", "S3"], 8, &Regime::ALL);
    m.repetitions = 2;
    let (a, _) = run_into_temp(&m);
    let (b, _) = run_into_temp(&m);
    m.execution = Execution::Sequential;
    let (c, _) = run_into_temp(&m);
    let (fa, fb, fc) = (dir_files(a.path()), dir_files(b.path()), dir_files(c.path()));
    // the echoed manifest records the execution mode, everything else must match
    let strip = |f: &[(String, Vec<u8>)]| -> Vec<(String, Vec<u8>)> {
        f.iter().filter(|(n, _)| n != "manifest.toml").cloned().collect()
    };
    let csvs = fa.iter().filter(|(n, _)| n.ends_with(".csv")).count();
    let pass = fa == fb && strip(&fa) == strip(&fc) && csvs == 4;
    report(
        10,
        "determinism",
        pass,
        t.elapsed(),
        &format!("{} files ({csvs} CSVs) identical across re-run and sequential run", fa.len()),
    );
    assert!(pass);
}
