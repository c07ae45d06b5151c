//! The four comparison regimes evaluated on one topology.

use std::fmt;
use std::str::FromStr;

use coalition_core::belief::FrobeniusReport;
use coalition_core::dynamics::{run_best_reply, run_repeated_game, DynamicsConfig};
use coalition_core::game::enumerate_structures;
use coalition_core::markov::{build_chain, formation_probabilities};
use coalition_core::par::Execution;
use coalition_core::scenario::baseline_rates;
use coalition_core::seed::RngStreams;
use coalition_core::{BeliefState, CoalitionStructure, Error, PayoffEngine};
use serde::{Deserialize, Serialize};

use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Baseline,
    FullInfo,
    Proposed,
    SocialOptimal,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::Baseline, Regime::FullInfo, Regime::Proposed, Regime::SocialOptimal];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Baseline => "baseline",
            Regime::FullInfo => "full_info",
            Regime::Proposed => "proposed",
            Regime::SocialOptimal => "social_optimal",
        }
    }

    /// Tag mixed into per-run seeds.
    pub fn tag(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> coalition_core::Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown regime {s:?}")))
    }
}

/// A stable structure the full-information dynamics can end in, with its
/// formation probability from all singletons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormedStructure {
    pub structure: CoalitionStructure,
    pub probability: f64,
    pub total_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeOutcome {
    pub regime: Regime,
    pub structure: CoalitionStructure,
    /// Rate of every drone under the true types, bits/s.
    pub per_drone: Vec<f64>,
    pub total_rate: f64,
    /// Best total over the structures the dynamics can form.
    pub best_stable: f64,
    /// Total weighted by formation probabilities.
    pub expected: f64,
    /// Structure-changing moves; for the proposed regime the largest count
    /// in any one round.
    pub changes: usize,
    pub rounds: Option<usize>,
    pub converged: bool,
    /// Social optimum without the individual-rationality constraint.
    pub fallback: bool,
    /// Frobenius report after every round of the proposed regime.
    pub frobenius: Vec<FrobeniusReport>,
    pub formed: Vec<FormedStructure>,
}

/// Per-run knobs shared by the regimes.
#[derive(Debug, Clone)]
pub struct RegimeContext<'a> {
    pub dynamics: &'a DynamicsConfig,
    pub structure_cap: usize,
    pub seed: u64,
}

/// Per-drone rates of a structure under the true types.
pub fn true_rates(structure: &CoalitionStructure, engine: &PayoffEngine) -> Vec<f64> {
    let mut rates = vec![0.0; engine.num_drones()];
    for block in structure.blocks() {
        let r = engine.true_rates(block);
        for (k, &d) in block.iter().enumerate() {
            rates[d] = r[k];
        }
    }
    rates
}

fn outcome(regime: Regime, structure: CoalitionStructure, engine: &PayoffEngine) -> RegimeOutcome {
    let per_drone = true_rates(&structure, engine);
    let total_rate = per_drone.iter().sum();
    RegimeOutcome {
        regime,
        structure,
        per_drone,
        total_rate,
        best_stable: total_rate,
        expected: total_rate,
        changes: 0,
        rounds: None,
        converged: true,
        fallback: false,
        frobenius: Vec::new(),
        formed: Vec::new(),
    }
}

/// Highest-total structure in which no drone falls below its baseline
/// rate; the unconstrained maximum (flagged) if no structure qualifies.
pub fn social_optimum(engine: &PayoffEngine, cap: usize) -> Result<(CoalitionStructure, bool)> {
    let d = engine.num_drones();
    let base = baseline_rates(engine.network());
    let mut best: Option<(f64, CoalitionStructure)> = None;
    let mut best_any: Option<(f64, CoalitionStructure)> = None;
    for s in enumerate_structures(d, cap)? {
        let rates = true_rates(&s, engine);
        let total: f64 = rates.iter().sum();
        if best_any.as_ref().is_none_or(|b| total > b.0) {
            best_any = Some((total, s.clone()));
        }
        if rates.iter().zip(&base).all(|(r, b)| r >= b) && best.as_ref().is_none_or(|b| total > b.0) {
            best = Some((total, s));
        }
    }
    match best {
        Some((_, s)) => Ok((s, false)),
        None => Ok((best_any.expect("at least one structure").1, true)),
    }
}

pub fn run_regime(engine: &PayoffEngine, regime: Regime, ctx: &RegimeContext) -> Result<RegimeOutcome> {
    let net = engine.network();
    let d = net.num_drones();
    let m = net.num_types();
    match regime {
        Regime::Baseline => Ok(outcome(regime, CoalitionStructure::singletons(d), engine)),
        Regime::SocialOptimal => {
            let (s, fallback) = social_optimum(engine, ctx.structure_cap)?;
            let mut out = outcome(regime, s, engine);
            out.fallback = fallback;
            Ok(out)
        }
        Regime::FullInfo => {
            let truth = BeliefState::truth(&net.true_type, m);
            let start = CoalitionStructure::singletons(d);
            let (structure, changes, converged) =
                match run_best_reply(&start, &truth, engine, ctx.dynamics, &mut RngStreams::new(ctx.seed)) {
                    Ok(run) => {
                        let changes = run.changes();
                        (run.structure, changes, true)
                    }
                    Err(Error::NonConvergence { last, trace, .. }) => (last.parse()?, trace.len(), false),
                    Err(e) => return Err(e.into()),
                };
            let mut out = outcome(regime, structure, engine);
            out.changes = changes;
            out.converged = converged;
            if d <= ctx.structure_cap {
                let chain = build_chain(engine, &truth, ctx.dynamics.veto_rule, Execution::Sequential, ctx.structure_cap)?;
                let probs = formation_probabilities(&chain, &chain.point_mass(&start)?)?;
                out.formed = chain
                    .absorbing
                    .iter()
                    .filter(|&&a| probs[a] > 0.0)
                    .map(|&a| {
                        let s = chain.states[a].clone();
                        let total_rate = true_rates(&s, engine).iter().sum();
                        FormedStructure {
                            structure: s,
                            probability: probs[a],
                            total_rate,
                        }
                    })
                    .collect();
                out.best_stable = out.formed.iter().map(|f| f.total_rate).fold(f64::NEG_INFINITY, f64::max);
                out.expected = out.formed.iter().map(|f| f.probability * f.total_rate).sum();
            }
            Ok(out)
        }
        Regime::Proposed => {
            let cfg = DynamicsConfig {
                seed: ctx.seed,
                ..ctx.dynamics.clone()
            };
            let run = run_repeated_game(engine, &cfg)?;
            let mut out = outcome(regime, run.final_structure.clone(), engine);
            out.changes = run.rounds.iter().map(|r| r.structure_changes).max().unwrap_or(0);
            out.rounds = Some(run.rounds.len());
            out.converged = run.converged;
            out.frobenius = run.rounds.iter().map(|r| r.frobenius.clone()).collect();
            Ok(out)
        }
    }
}
