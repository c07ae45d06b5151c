//! The Markov chain over coalition structures induced by best-reply
//! dynamics under fixed beliefs.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ranked_options, VetoRule};
use crate::error::{Error, Result};
use crate::game::{enumerate_structures, BeliefState, CoalitionStructure, PayoffEngine};
use crate::par::{self, Execution};

/// Diagonal entries within this distance of 1 mark absorbing states.
pub const ABSORBING_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovModel {
    pub states: Vec<CoalitionStructure>,
    /// Sparse rows: `(column, probability)` sorted by column.
    pub transitions: Vec<Vec<(usize, f64)>>,
    pub absorbing: Vec<usize>,
    /// Absorption probability per state, once computed.
    pub formation_probs: Option<Vec<f64>>,
}

impl MarkovModel {
    /// Builds a model from a dense row-stochastic matrix.
    pub fn from_dense(states: Vec<CoalitionStructure>, matrix: &[Vec<f64>]) -> Result<Self> {
        if matrix.len() != states.len() || matrix.iter().any(|r| r.len() != states.len()) {
            return Err(Error::Validation("transition matrix does not match the state list".into()));
        }
        let transitions = matrix
            .iter()
            .map(|r| r.iter().copied().enumerate().filter(|&(_, p)| p != 0.0).collect())
            .collect();
        let mut model = Self {
            states,
            transitions,
            absorbing: Vec::new(),
            formation_probs: None,
        };
        model.check_stochastic()?;
        model.absorbing = absorbing_states(&model);
        Ok(model)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self, s: &CoalitionStructure) -> Option<usize> {
        self.states.iter().position(|x| x == s)
    }

    pub fn probability(&self, from: usize, to: usize) -> f64 {
        self.transitions[from]
            .binary_search_by_key(&to, |e| e.0)
            .map(|k| self.transitions[from][k].1)
            .unwrap_or(0.0)
    }

    pub fn dense(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut m = vec![vec![0.0; n]; n];
        for (i, row) in self.transitions.iter().enumerate() {
            for &(j, p) in row {
                m[i][j] = p;
            }
        }
        m
    }

    /// Point mass on `s`.
    pub fn point_mass(&self, s: &CoalitionStructure) -> Result<Vec<f64>> {
        let i = self
            .index_of(s)
            .ok_or_else(|| Error::Validation(format!("{s} is not a state of the chain")))?;
        let mut v = vec![0.0; self.len()];
        v[i] = 1.0;
        Ok(v)
    }

    fn check_stochastic(&self) -> Result<()> {
        for (i, row) in self.transitions.iter().enumerate() {
            let s: f64 = row.iter().map(|e| e.1).sum();
            if (s - 1.0).abs() > 1e-9 || row.iter().any(|e| e.1 < 0.0) {
                return Err(Error::Validation(format!("row {i} is not a distribution (sum {s})")));
            }
        }
        Ok(())
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

/// Transition row of one state: each drone proposes with probability `1/D`
/// and moves to one of its admissible best options uniformly, mirroring
/// [`crate::dynamics::best_reply_step`].
fn transition_row(
    state: &CoalitionStructure,
    beliefs: &BeliefState,
    engine: &PayoffEngine,
    veto_rule: VetoRule,
    index: &HashMap<CoalitionStructure, usize>,
) -> Vec<(usize, f64)> {
    let d = engine.num_drones();
    let me = index[state];
    let mut row: BTreeMap<usize, f64> = BTreeMap::new();
    let share = 1.0 / d as f64;
    for proposer in 0..d {
        let tiers = ranked_options(state, proposer, beliefs, engine);
        let mut outcomes: Vec<(usize, f64)> = Vec::new();
        match veto_rule {
            VetoRule::NextBest => {
                if let Some(tier) = tiers.iter().find(|t| t.iter().any(|c| c.admissible)) {
                    let ok: Vec<_> = tier.iter().filter(|c| c.admissible).collect();
                    let k = ok.len() as f64;
                    for c in ok {
                        outcomes.push((index[&state.with_move(proposer, c.target)], share / k));
                    }
                }
            }
            VetoRule::StayOnVeto => {
                if let Some(tier) = tiers.first() {
                    let k = tier.len() as f64;
                    for c in tier {
                        let to = if c.admissible {
                            index[&state.with_move(proposer, c.target)]
                        } else {
                            me
                        };
                        outcomes.push((to, share / k));
                    }
                }
            }
        }
        if outcomes.is_empty() {
            outcomes.push((me, share));
        }
        for (to, p) in outcomes {
            *row.entry(to).or_insert(0.0) += p;
        }
    }
    row.into_iter().collect()
}

/// The full chain over all partitions of the drones, rows built in parallel
/// under `exec`.
pub fn build_chain(
    engine: &PayoffEngine,
    beliefs: &BeliefState,
    veto_rule: VetoRule,
    exec: Execution,
    cap: usize,
) -> Result<MarkovModel> {
    let states = enumerate_structures(engine.num_drones(), cap)?;
    let index: HashMap<CoalitionStructure, usize> = states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    let transitions = par::map(exec, &states, |s| transition_row(s, beliefs, engine, veto_rule, &index));
    let mut model = MarkovModel {
        states,
        transitions,
        absorbing: Vec::new(),
        formation_probs: None,
    };
    model.check_stochastic()?;
    model.absorbing = absorbing_states(&model);
    Ok(model)
}

pub fn absorbing_states(model: &MarkovModel) -> Vec<usize> {
    (0..model.len())
        .filter(|&i| (model.probability(i, i) - 1.0).abs() <= ABSORBING_TOLERANCE)
        .collect()
}

fn reachable(model: &MarkovModel, start: impl IntoIterator<Item = usize>) -> Vec<bool> {
    let mut seen = vec![false; model.len()];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for s in start {
        if !seen[s] {
            seen[s] = true;
            queue.push_back(s);
        }
    }
    while let Some(i) = queue.pop_front() {
        for &(j, p) in &model.transitions[i] {
            if p > 0.0 && !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen
}

/// Absorption probability of every state from `initial`, computed on the
/// states reachable from `initial` with `B = (I - Q)^-1 R`. Non-absorbing
/// states get 0.
pub fn formation_probabilities(model: &MarkovModel, initial: &[f64]) -> Result<Vec<f64>> {
    let n = model.len();
    if initial.len() != n {
        return Err(Error::Validation("initial distribution does not match the state count".into()));
    }
    if (initial.iter().sum::<f64>() - 1.0).abs() > 1e-9 || initial.iter().any(|&p| p < 0.0) {
        return Err(Error::Validation("initial vector is not a distribution".into()));
    }
    let is_absorbing: Vec<bool> = {
        let mut v = vec![false; n];
        for &a in &model.absorbing {
            v[a] = true;
        }
        v
    };
    let live = reachable(model, (0..n).filter(|&i| initial[i] > 0.0));
    let transient: Vec<usize> = (0..n).filter(|&i| live[i] && !is_absorbing[i]).collect();
    let absorbing: Vec<usize> = (0..n).filter(|&i| live[i] && is_absorbing[i]).collect();

    // transient states that cannot reach absorption
    let mut escapes = vec![false; n];
    for &a in &absorbing {
        escapes[a] = true;
    }
    let mut changed = true;
    while changed {
        changed = false;
        for &t in &transient {
            if !escapes[t] && model.transitions[t].iter().any(|&(j, p)| p > 0.0 && escapes[j]) {
                escapes[t] = true;
                changed = true;
            }
        }
    }
    let trapped: Vec<usize> = transient.iter().copied().filter(|&t| !escapes[t]).collect();
    if !trapped.is_empty() {
        return Err(Error::TrappedClass(trapped));
    }

    let mut probs = vec![0.0; n];
    for &a in &absorbing {
        probs[a] = initial[a];
    }
    if transient.is_empty() {
        return Ok(probs);
    }
    let tpos: HashMap<usize, usize> = transient.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    let apos: HashMap<usize, usize> = absorbing.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    let (nt, na) = (transient.len(), absorbing.len());
    let mut a = DMatrix::<f64>::identity(nt, nt);
    let mut r = DMatrix::<f64>::zeros(nt, na);
    for (k, &i) in transient.iter().enumerate() {
        for &(j, p) in &model.transitions[i] {
            if let Some(&c) = tpos.get(&j) {
                a[(k, c)] -= p;
            } else if let Some(&c) = apos.get(&j) {
                r[(k, c)] += p;
            }
        }
    }
    let b = a
        .lu()
        .solve(&r)
        .ok_or_else(|| Error::Singular("I - Q is not invertible".into()))?;
    for (k, &i) in transient.iter().enumerate() {
        if initial[i] > 0.0 {
            for (c, &ai) in absorbing.iter().enumerate() {
                probs[ai] += initial[i] * b[(k, c)];
            }
        }
    }
    Ok(probs)
}

/// Formation probabilities from all singletons, stored on the model.
pub fn attach_formation_probabilities(model: &mut MarkovModel) -> Result<()> {
    let d = model.states.first().map_or(0, CoalitionStructure::num_drones);
    let init = model.point_mass(&CoalitionStructure::singletons(d))?;
    model.formation_probs = Some(formation_probabilities(model, &init)?);
    Ok(())
}

/// Solution of `pi^T W = pi^T`, `sum pi = 1`. Fails when the chain has more
/// than one closed class, since the solution is then not unique.
pub fn stationary_distribution(model: &MarkovModel) -> Result<Vec<f64>> {
    let n = model.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut a = DMatrix::<f64>::zeros(n, n);
    for (i, row) in model.transitions.iter().enumerate() {
        for &(j, p) in row {
            a[(j, i)] += p;
        }
    }
    for i in 0..n {
        a[(i, i)] -= 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = DMatrix::<f64>::zeros(n, 1);
    rhs[(n - 1, 0)] = 1.0;
    let lu = a.lu();
    let det = lu.determinant();
    if !det.is_finite() || det.abs() < 1e-12 {
        return Err(Error::Singular("the stationary distribution is not unique".into()));
    }
    let x = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("the stationary distribution is not unique".into()))?;
    Ok(x.iter().copied().collect())
}

/// `sum_w probs[w] * totals[w]`.
pub fn expected_total(probs: &[f64], totals: &[f64]) -> f64 {
    probs.iter().zip(totals).map(|(p, t)| p * t).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::best_reply_step;
    use crate::game::is_nash_stable;
    use crate::propagation::Environment;
    use crate::scenario::{Network, Scenario, SimulationSetting, TypeSpec};
    use crate::seed::RngStreams;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn net(setting: &str, seed: u64) -> Network {
        let types = vec![TypeSpec::new(1, 12.0, 3.0), TypeSpec::new(2, 18.0, 3.0)];
        let s = Scenario::generate(&SimulationSetting::named(setting).unwrap(), &Environment::urban(), &types, seed).unwrap();
        Network::new(s).unwrap()
    }

    fn labels(n: usize) -> Vec<CoalitionStructure> {
        enumerate_structures(n, 8).unwrap()
    }

    #[test]
    fn single_drone_chain() {
        let types = vec![TypeSpec::new(1, 12.0, 3.0), TypeSpec::new(2, 18.0, 3.0)];
        let s = Scenario::generate(&SimulationSetting::with_drones("one", 1), &Environment::urban(), &types, 0).unwrap();
        let n = Network::new(s).unwrap();
        let engine = PayoffEngine::with_default_cap(&n).unwrap();
        let b = BeliefState::truth(&n.true_type, 2);
        let mut m = build_chain(&engine, &b, VetoRule::NextBest, Execution::Sequential, 8).unwrap();
        assert_eq!(m.dense(), vec![vec![1.0]]);
        assert_eq!(m.absorbing, vec![0]);
        attach_formation_probabilities(&mut m).unwrap();
        assert_eq!(m.formation_probs, Some(vec![1.0]));
    }

    #[test]
    fn identity_and_flip() {
        let id = MarkovModel::from_dense(labels(2), &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(id.absorbing, vec![0, 1]);
        let flip = MarkovModel::from_dense(labels(2), &[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(flip.absorbing.is_empty());
        let pi = stationary_distribution(&flip).unwrap();
        assert_relative_eq!(pi[0], 0.5, epsilon = 1e-12);
        assert!(matches!(
            formation_probabilities(&flip, &[1.0, 0.0]),
            Err(Error::TrappedClass(_))
        ));
        assert!(MarkovModel::from_dense(labels(2), &[vec![0.5, 0.4], vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn hand_absorption() {
        // 0 -> {0: .2, 1: .5, 3: .3}, 1 -> {2: .5, 4: .5}, 2..4 absorbing
        let m = MarkovModel::from_dense(
            labels(3),
            &[
                vec![0.2, 0.5, 0.0, 0.3, 0.0],
                vec![0.0, 0.0, 0.5, 0.0, 0.5],
                vec![0.0, 0.0, 1.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 0.0, 0.0, 1.0],
            ],
        )
        .unwrap();
        let p = formation_probabilities(&m, &[1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        // from 0: absorb via 1 w.p. .5/.8, via 3 w.p. .3/.8
        assert_relative_eq!(p[2], 0.3125, epsilon = 1e-12);
        assert_relative_eq!(p[4], 0.3125, epsilon = 1e-12);
        assert_relative_eq!(p[3], 0.375, epsilon = 1e-12);
        assert_eq!(p[0], 0.0);
        // a mixed start adds the absorbing mass directly
        let q = formation_probabilities(&m, &[0.5, 0.0, 0.0, 0.0, 0.5]).unwrap();
        assert_relative_eq!(q[4], 0.5 + 0.5 * 0.3125, epsilon = 1e-12);
        assert!(stationary_distribution(&m).is_err());
        assert_relative_eq!(expected_total(&p, &[0.0, 0.0, 10.0, 6.0, 0.0]), 5.375, epsilon = 1e-12);
    }

    #[test]
    fn unreachable_states_do_not_matter() {
        // state 1 is a trap but unreachable from 0
        let m = MarkovModel::from_dense(
            labels(2),
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
        )
        .unwrap();
        assert_eq!(formation_probabilities(&m, &[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn absorbing_equals_nash_stable() {
        for seed in 0..15 {
            for setting in ["S1", "S2"] {
                let n = net(setting, seed);
                let engine = PayoffEngine::with_default_cap(&n).unwrap();
                let mut b = BeliefState::uniform(&n.true_type, 2);
                if seed % 2 == 0 {
                    b = BeliefState::truth(&n.true_type, 2);
                }
                let m = build_chain(&engine, &b, VetoRule::NextBest, Execution::Parallel, 8).unwrap();
                let stable: Vec<usize> = (0..m.len())
                    .filter(|&i| is_nash_stable(&m.states[i], &b, &engine).is_stable())
                    .collect();
                assert_eq!(m.absorbing, stable);
                assert!(!stable.is_empty());
                let seq = build_chain(&engine, &b, VetoRule::NextBest, Execution::Sequential, 8).unwrap();
                assert_eq!(seq, m);
            }
        }
    }

    #[test]
    fn one_step_frequencies_match() {
        let n = net("S1", 11);
        let engine = PayoffEngine::with_default_cap(&n).unwrap();
        let b = BeliefState::truth(&n.true_type, 2);
        for rule in [VetoRule::NextBest, VetoRule::StayOnVeto] {
            let m = build_chain(&engine, &b, rule, Execution::Sequential, 8).unwrap();
            let mut rngs = RngStreams::new(17);
            let trials = 20_000;
            for (i, s) in m.states.iter().enumerate() {
                let mut counts = vec![0usize; m.len()];
                for _ in 0..trials {
                    let p = rngs.controller.random_range(0..3);
                    let next = best_reply_step(s, p, &b, &engine, rule, &mut rngs.ties).map_or(i, |(t, _)| m.index_of(&t).unwrap());
                    counts[next] += 1;
                }
                for j in 0..m.len() {
                    let p = m.probability(i, j);
                    let f = counts[j] as f64 / trials as f64;
                    let sigma = (p * (1.0 - p) / trials as f64).sqrt();
                    assert!((f - p).abs() <= 3.0 * sigma + 1.0 / trials as f64, "{rule:?} {i}->{j}: {f} vs {p}");
                }
            }
        }
    }

    #[test]
    fn stationary_single_absorbing() {
        let m = MarkovModel::from_dense(
            labels(2),
            &[vec![0.5, 0.5], vec![0.0, 1.0]],
        )
        .unwrap();
        let pi = stationary_distribution(&m).unwrap();
        assert_relative_eq!(pi[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(pi[1], 1.0, epsilon = 1e-12);
    }
}
