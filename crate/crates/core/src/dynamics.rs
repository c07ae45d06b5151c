//! Best-reply coalition formation under fixed beliefs, and the repeated game
//! that interleaves it with grand-coalition rounds and belief learning.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::belief::{belief_hash, frobenius_convergence, BeliefLearner, FrobeniusReport, TypePrediction};
use crate::error::{Error, Result};
use crate::game::{is_nash_stable, joined, BeliefState, CoalitionStructure, PayoffEngine};
use crate::seed::RngStreams;
use crate::DroneId;

/// What happens when the proposer's preferred coalition refuses it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VetoRule {
    /// Try the next best option, down to the last strictly improving one.
    #[default]
    NextBest,
    /// Pick one of the best options at random; stay put if it refuses.
    StayOnVeto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsConfig {
    /// Probability of a grand-coalition round.
    pub epsilon: f64,
    pub init_grand_rounds: usize,
    pub max_rounds: usize,
    /// Rounds of unchanged predictions needed to stop, and the number of
    /// silent proposal sweeps needed to end a best-reply run.
    pub stability_window: usize,
    pub step_cap: usize,
    /// Trailing samples used per estimate; `None` keeps the whole history.
    pub belief_window: Option<usize>,
    pub veto_rule: VetoRule,
    /// Stop once beliefs and structure have settled; otherwise play all
    /// `max_rounds`.
    pub stop_on_convergence: bool,
    pub seed: u64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            init_grand_rounds: 5,
            max_rounds: 100,
            stability_window: 10,
            step_cap: 10_000,
            belief_window: None,
            veto_rule: VetoRule::NextBest,
            stop_on_convergence: true,
            seed: 0,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Validation(format!("epsilon {} is not a probability", self.epsilon)));
        }
        for (name, v) in [
            ("init_grand_rounds", self.init_grand_rounds),
            ("max_rounds", self.max_rounds),
            ("stability_window", self.stability_window),
            ("step_cap", self.step_cap),
        ] {
            if v == 0 {
                return Err(Error::Validation(format!("{name} must be at least 1")));
            }
        }
        if self.belief_window == Some(0) {
            return Err(Error::Validation("belief_window must be at least 1".into()));
        }
        Ok(())
    }
}

/// One alternative open to a proposer.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Candidate {
    /// Block index in the current structure; `None` means going alone.
    pub target: Option<usize>,
    pub value: f64,
    pub admissible: bool,
}

/// Strictly improving options of `proposer`, grouped into tiers of equal
/// value, best tier first. Within a tier options are in block order.
pub(crate) fn ranked_options(
    state: &CoalitionStructure,
    proposer: DroneId,
    beliefs: &BeliefState,
    engine: &PayoffEngine,
) -> Vec<Vec<Candidate>> {
    let own = state.block_of(proposer);
    let current = engine.expected_payoff(proposer, own, beliefs);
    let mut options: Vec<Candidate> = Vec::new();
    let mut consider = |target: Option<usize>, members: &[DroneId]| {
        let with = joined(members, proposer);
        let value = engine.expected_payoff(proposer, &with, beliefs);
        if value > current {
            let admissible = members
                .iter()
                .all(|&j| engine.expected_payoff(j, &with, beliefs) >= engine.expected_payoff(j, members, beliefs));
            options.push(Candidate {
                target,
                value,
                admissible,
            });
        }
    };
    for (t, block) in state.blocks().iter().enumerate() {
        if !block.contains(&proposer) {
            consider(Some(t), block);
        }
    }
    if own.len() > 1 {
        consider(None, &[]);
    }
    // stable sort keeps block order inside a tier
    options.sort_by(|a, b| b.value.total_cmp(&a.value));
    let mut tiers: Vec<Vec<Candidate>> = Vec::new();
    for o in options {
        match tiers.last_mut() {
            Some(t) if t[0].value == o.value => t.push(o),
            _ => tiers.push(vec![o]),
        }
    }
    tiers
}

/// An accepted move, with the payoffs that justified it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Move {
    pub step: usize,
    pub proposer: DroneId,
    pub from: CoalitionStructure,
    pub to: CoalitionStructure,
    /// Members of the joined coalition before the move; empty when going alone.
    pub target: Vec<DroneId>,
    pub proposer_before: f64,
    pub proposer_after: f64,
    pub target_before: Vec<f64>,
    pub target_after: Vec<f64>,
}

/// One proposal: `proposer` moves to its best admissible option (ties broken
/// with `ties`), or nothing changes.
pub fn best_reply_step(
    state: &CoalitionStructure,
    proposer: DroneId,
    beliefs: &BeliefState,
    engine: &PayoffEngine,
    veto_rule: VetoRule,
    ties: &mut ChaCha8Rng,
) -> Option<(CoalitionStructure, Option<usize>)> {
    let tiers = ranked_options(state, proposer, beliefs, engine);
    for mut tier in tiers {
        tier.shuffle(ties);
        match veto_rule {
            VetoRule::NextBest => {
                if let Some(c) = tier.iter().find(|c| c.admissible) {
                    return Some((state.with_move(proposer, c.target), c.target));
                }
            }
            VetoRule::StayOnVeto => {
                let c = &tier[0];
                return c.admissible.then(|| (state.with_move(proposer, c.target), c.target));
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestReplyOutcome {
    pub structure: CoalitionStructure,
    /// Proposals made.
    pub steps: usize,
    pub moves: Vec<Move>,
}

impl BestReplyOutcome {
    pub fn changes(&self) -> usize {
        self.moves.len()
    }
}

/// Repeated proposals by uniformly drawn drones until a Nash-stable
/// structure is reached. A run ends after `D * stability_window` proposals
/// in a row change nothing and the structure passes the deviation scan.
pub fn run_best_reply(
    initial: &CoalitionStructure,
    beliefs: &BeliefState,
    engine: &PayoffEngine,
    config: &DynamicsConfig,
    rngs: &mut RngStreams,
) -> Result<BestReplyOutcome> {
    let d = engine.num_drones();
    if initial.num_drones() != d {
        return Err(Error::Validation(format!("structure {initial} does not cover {d} drones")));
    }
    let mut state = initial.clone();
    let mut moves = Vec::new();
    if is_nash_stable(&state, beliefs, engine).is_stable() {
        return Ok(BestReplyOutcome {
            structure: state,
            steps: 0,
            moves,
        });
    }
    let quiet_needed = d * config.stability_window;
    let mut quiet = 0;
    for step in 1..=config.step_cap {
        let proposer = rngs.controller.random_range(0..d);
        match best_reply_step(&state, proposer, beliefs, engine, config.veto_rule, &mut rngs.ties) {
            Some((next, target)) => {
                let members: Vec<DroneId> = target.map(|t| state.blocks()[t].clone()).unwrap_or_default();
                let with = joined(&members, proposer);
                moves.push(Move {
                    step,
                    proposer,
                    from: state.clone(),
                    to: next.clone(),
                    proposer_before: engine.expected_payoff(proposer, state.block_of(proposer), beliefs),
                    proposer_after: engine.expected_payoff(proposer, &with, beliefs),
                    target_before: members.iter().map(|&j| engine.expected_payoff(j, &members, beliefs)).collect(),
                    target_after: members.iter().map(|&j| engine.expected_payoff(j, &with, beliefs)).collect(),
                    target: members,
                });
                state = next;
                quiet = 0;
            }
            None => {
                quiet += 1;
                if quiet >= quiet_needed {
                    if is_nash_stable(&state, beliefs, engine).is_stable() {
                        return Ok(BestReplyOutcome {
                            structure: state,
                            steps: step,
                            moves,
                        });
                    }
                    quiet = 0;
                }
            }
        }
    }
    Err(Error::NonConvergence {
        steps: config.step_cap,
        last: state.to_string(),
        trace: moves.iter().map(|m| m.to.to_string()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub grand: bool,
    pub structure: CoalitionStructure,
    /// Each drone's expected payoff in its coalition under the beliefs held
    /// at the start of the round.
    pub expected_payoffs: Vec<f64>,
    /// Sample broadcast by each drone; `None` for drones alone this round.
    pub shared_samples: Vec<Option<f64>>,
    /// Hash of the beliefs after this round's update.
    pub belief_hash: String,
    pub frobenius: FrobeniusReport,
    pub best_reply_steps: usize,
    pub structure_changes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatedGameOutcome {
    /// Structure of the last best-reply round.
    pub final_structure: CoalitionStructure,
    pub beliefs: BeliefState,
    pub predictions: TypePrediction,
    pub rounds: Vec<RoundRecord>,
    pub converged: bool,
}

impl RepeatedGameOutcome {
    /// Mean Frobenius norm after every round.
    pub fn frobenius_series(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.frobenius.mean).collect()
    }

    /// First round after which all predictions are correct.
    pub fn first_exact_round(&self) -> Option<u64> {
        self.rounds.iter().find(|r| r.frobenius.mean == 0.0).map(|r| r.round)
    }
}

/// Grand-coalition rounds with probability `epsilon` (always during the
/// first `init_grand_rounds`), best-reply rounds otherwise, each followed by
/// sample sharing inside coalitions and a belief update.
///
/// A best-reply round starts from the previous best-reply round's structure,
/// or from all singletons for the first one. Play stops when every drone's
/// predicted types have held for `stability_window` rounds and the last two
/// best-reply rounds ended in the same structure.
pub fn run_repeated_game(engine: &PayoffEngine, config: &DynamicsConfig) -> Result<RepeatedGameOutcome> {
    config.validate()?;
    let net = engine.network();
    let d = net.num_drones();
    let types = &net.scenario.type_set;
    let own = &net.true_type;
    let mut rngs = RngStreams::new(config.seed);
    let mut learner = BeliefLearner::new(types, own, config.belief_window)?;
    let sample_dists: Vec<Normal<f64>> = own
        .iter()
        .map(|&t| Normal::new(types[t].mu, types[t].sigma).map_err(|e| Error::Domain(e.to_string())))
        .collect::<Result<_>>()?;

    let (mut beliefs, mut predictions) = learner.snapshot();
    let mut rounds = Vec::new();
    let mut last_reply: Option<CoalitionStructure> = None;
    let mut reply_repeated = false;
    let mut steady = 0usize;
    let mut converged = false;

    for round in 0..config.max_rounds as u64 {
        let grand = (round as usize) < config.init_grand_rounds || rngs.controller.random_bool(config.epsilon);
        let (structure, steps, changes) = if grand {
            (CoalitionStructure::grand(d), 0, 0)
        } else {
            let start = last_reply.clone().unwrap_or_else(|| CoalitionStructure::singletons(d));
            let out = run_best_reply(&start, &beliefs, engine, config, &mut rngs)?;
            reply_repeated = last_reply.as_ref() == Some(&out.structure);
            last_reply = Some(out.structure.clone());
            let changes = out.changes();
            (out.structure, out.steps, changes)
        };
        let expected_payoffs: Vec<f64> = (0..d)
            .map(|i| engine.expected_payoff(i, structure.block_of(i), &beliefs))
            .collect();

        // one draw per drone every round keeps the sample stream aligned
        let draws: Vec<f64> = sample_dists.iter().map(|n| n.sample(&mut rngs.samples).max(0.0)).collect();
        let mut shared = vec![None; d];
        for block in structure.blocks().iter().filter(|b| b.len() > 1) {
            learner.observe_coalition(block, &draws, round)?;
            for &j in block {
                shared[j] = Some(draws[j]);
            }
        }
        let (new_beliefs, new_predictions) = learner.snapshot();
        if new_predictions.predicted == predictions.predicted {
            steady += 1;
        } else {
            steady = 0;
        }
        beliefs = new_beliefs;
        predictions = new_predictions;

        rounds.push(RoundRecord {
            round,
            grand,
            structure,
            expected_payoffs,
            shared_samples: shared,
            belief_hash: belief_hash(&beliefs),
            frobenius: frobenius_convergence(&predictions.predicted, own, types.len()),
            best_reply_steps: steps,
            structure_changes: changes,
        });

        if steady >= config.stability_window && reply_repeated {
            converged = true;
            if config.stop_on_convergence {
                break;
            }
        }
    }

    let final_structure = match last_reply {
        Some(s) => s,
        None => run_best_reply(&CoalitionStructure::singletons(d), &beliefs, engine, config, &mut rngs)?.structure,
    };
    Ok(RepeatedGameOutcome {
        final_structure,
        beliefs,
        predictions,
        rounds,
        converged,
    })
}

/// Writes one JSON record per line.
pub fn write_trace<W: Write>(records: &[RoundRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<RoundRecord>> {
    let mut records = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            records.push(serde_json::from_str(&line)?);
        }
    }
    Ok(records)
}

/// Rebuilds the beliefs from a trace's shared samples, checking every
/// round's belief hash, and returns the final structure and beliefs.
pub fn replay_trace(
    records: &[RoundRecord],
    engine: &PayoffEngine,
    belief_window: Option<usize>,
) -> Result<(CoalitionStructure, BeliefState)> {
    let net = engine.network();
    let mut learner = BeliefLearner::new(&net.scenario.type_set, &net.true_type, belief_window)?;
    let mut last_reply = None;
    for r in records {
        for block in r.structure.blocks().iter().filter(|b| b.len() > 1) {
            let draws: Vec<f64> = r.shared_samples.iter().map(|s| s.unwrap_or(f64::NAN)).collect();
            if block.iter().any(|&j| r.shared_samples[j].is_none()) {
                return Err(Error::Validation(format!("round {} lacks a coalition member's sample", r.round)));
            }
            learner.observe_coalition(block, &draws, r.round)?;
        }
        let hash = belief_hash(&learner.snapshot().0);
        if hash != r.belief_hash {
            return Err(Error::Validation(format!("belief hash mismatch at round {}", r.round)));
        }
        if !r.grand {
            last_reply = Some(r.structure.clone());
        }
    }
    let beliefs = learner.snapshot().0;
    let last = last_reply.ok_or_else(|| Error::Validation("trace has no best-reply round".into()))?;
    Ok((last, beliefs))
}
