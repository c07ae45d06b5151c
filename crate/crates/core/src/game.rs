//! Coalition structures, beliefs over types, expected payoffs, Nash
//! stability and Bayesian-core membership.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use dashmap::DashMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::allocation::evaluate_coalition;
use crate::error::{Error, Result};
use crate::scenario::Network;
use crate::DroneId;

/// Largest drone count for which partitions are enumerated by default
/// (Bell(8) = 4140 structures).
pub const DEFAULT_STRUCTURE_CAP: usize = 8;

/// Default limit on the number of type vectors summed in one expected payoff.
pub const DEFAULT_TYPE_SPACE_CAP: usize = 1 << 16;

/// A partition of the drones into disjoint coalitions, kept in canonical
/// form (sorted members, blocks ordered by smallest member) so that equality
/// is structural.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CoalitionStructure {
    blocks: Vec<Vec<DroneId>>,
}

impl CoalitionStructure {
    pub fn new(blocks: Vec<Vec<DroneId>>) -> Result<Self> {
        let n: usize = blocks.iter().map(Vec::len).sum();
        let mut seen = vec![false; n];
        for b in &blocks {
            if b.is_empty() {
                return Err(Error::Validation("empty coalition".into()));
            }
            for &d in b {
                if d >= n || seen[d] {
                    return Err(Error::Validation(format!("drone {d} is duplicated or out of range 0..{n}")));
                }
                seen[d] = true;
            }
        }
        Ok(Self::canonical(blocks))
    }

    fn canonical(mut blocks: Vec<Vec<DroneId>>) -> Self {
        blocks.retain(|b| !b.is_empty());
        for b in &mut blocks {
            b.sort_unstable();
        }
        blocks.sort_unstable_by_key(|b| b[0]);
        Self { blocks }
    }

    pub fn singletons(d: usize) -> Self {
        Self {
            blocks: (0..d).map(|i| vec![i]).collect(),
        }
    }

    pub fn grand(d: usize) -> Self {
        Self {
            blocks: vec![(0..d).collect()],
        }
    }

    pub fn blocks(&self) -> &[Vec<DroneId>] {
        &self.blocks
    }

    pub fn num_drones(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn block_index_of(&self, drone: DroneId) -> usize {
        self.blocks
            .iter()
            .position(|b| b.contains(&drone))
            .unwrap_or_else(|| panic!("drone {drone} not in {self}"))
    }

    pub fn block_of(&self, drone: DroneId) -> &[DroneId] {
        &self.blocks[self.block_index_of(drone)]
    }

    /// Structure after `drone` leaves its block and joins block `target`
    /// (`None`: goes alone).
    pub fn with_move(&self, drone: DroneId, target: Option<usize>) -> Self {
        let mut blocks = self.blocks.clone();
        let from = self.block_index_of(drone);
        blocks[from].retain(|&d| d != drone);
        match target {
            Some(t) => blocks[t].push(drone),
            None => blocks.push(vec![drone]),
        }
        Self::canonical(blocks)
    }

    pub fn is_grand(&self) -> bool {
        self.blocks.len() == 1
    }
}

impl fmt::Display for CoalitionStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.blocks {
            f.write_str("{")?;
            for (i, d) in b.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{d}")?;
            }
            f.write_str("}")?;
        }
        Ok(())
    }
}

impl FromStr for CoalitionStructure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Validation(format!("cannot parse coalition structure {s:?}"));
        let s = s.trim();
        if !s.starts_with('{') || !s.ends_with('}') {
            return Err(bad());
        }
        let blocks = s[1..s.len() - 1]
            .split("}{")
            .map(|b| {
                b.split(',')
                    .map(|d| d.trim().parse::<DroneId>().map_err(|_| bad()))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(blocks)
    }
}

impl Serialize for CoalitionStructure {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CoalitionStructure {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// All partitions of `0..d` in restricted-growth-string order.
pub fn enumerate_structures(d: usize, cap: usize) -> Result<Vec<CoalitionStructure>> {
    if d > cap {
        return Err(Error::CapExceeded {
            what: "partition enumeration over drones",
            size: d,
            cap,
        });
    }
    if d == 0 {
        return Ok(vec![CoalitionStructure { blocks: Vec::new() }]);
    }
    let mut out = Vec::new();
    let mut labels = vec![0usize; d];
    fn rec(i: usize, max: usize, labels: &mut [usize], out: &mut Vec<CoalitionStructure>) {
        if i == labels.len() {
            let mut blocks = vec![Vec::new(); max + 1];
            for (drone, &l) in labels.iter().enumerate() {
                blocks[l].push(drone);
            }
            out.push(CoalitionStructure { blocks });
            return;
        }
        for l in 0..=max + 1 {
            labels[i] = l;
            rec(i + 1, max.max(l), labels, out);
        }
    }
    rec(1, 0, &mut labels, &mut out);
    Ok(out)
}

/// Every drone's probability table over the type set for every drone.
/// A drone's row about itself is a point mass on its true type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    num_types: usize,
    /// `table[observer][observed][type_index]`.
    table: Vec<Vec<Vec<f64>>>,
}

impl BeliefState {
    /// Uniform beliefs about others.
    pub fn uniform(own_types: &[usize], num_types: usize) -> Self {
        let d = own_types.len();
        let table = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| {
                        if i == j {
                            point_mass(own_types[i], num_types)
                        } else {
                            vec![1.0 / num_types as f64; num_types]
                        }
                    })
                    .collect()
            })
            .collect();
        Self { num_types, table }
    }

    /// Everyone knows everyone's true type.
    pub fn truth(true_types: &[usize], num_types: usize) -> Self {
        let d = true_types.len();
        let table = (0..d)
            .map(|_| (0..d).map(|j| point_mass(true_types[j], num_types)).collect())
            .collect();
        Self { num_types, table }
    }

    /// Builds a state from explicit rows, checking the simplex and self rows.
    pub fn from_table(table: Vec<Vec<Vec<f64>>>, own_types: &[usize], num_types: usize) -> Result<Self> {
        let state = Self { num_types, table };
        state.validate(own_types)?;
        Ok(state)
    }

    pub fn validate(&self, own_types: &[usize]) -> Result<()> {
        let d = own_types.len();
        if self.table.len() != d || self.table.iter().any(|r| r.len() != d) {
            return Err(Error::Validation("belief table is not D x D".into()));
        }
        for (i, rows) in self.table.iter().enumerate() {
            for (j, row) in rows.iter().enumerate() {
                if row.len() != self.num_types || row.iter().any(|&p| !(p >= 0.0)) {
                    return Err(Error::Validation(format!("belief row ({i},{j}) is not a distribution")));
                }
                if (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return Err(Error::Validation(format!("belief row ({i},{j}) does not sum to 1")));
                }
                if i == j && *row != point_mass(own_types[i], self.num_types) {
                    return Err(Error::Validation(format!("drone {i} is unsure of its own type")));
                }
            }
        }
        Ok(())
    }

    pub fn num_drones(&self) -> usize {
        self.table.len()
    }

    pub fn num_types(&self) -> usize {
        self.num_types
    }

    pub fn row(&self, observer: DroneId, observed: DroneId) -> &[f64] {
        &self.table[observer][observed]
    }

    pub fn set_row(&mut self, observer: DroneId, observed: DroneId, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.num_types);
        self.table[observer][observed] = row;
    }

    /// Most likely type index of `observed` according to `observer`, lowest
    /// index on ties.
    pub fn argmax(&self, observer: DroneId, observed: DroneId) -> usize {
        argmax_lowest(self.row(observer, observed))
    }
}

pub(crate) fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn point_mass(index: usize, m: usize) -> Vec<f64> {
    let mut v = vec![0.0; m];
    v[index] = 1.0;
    v
}

/// Probability that `observer` assigns to the others having the given
/// `(drone, type_index)` profile.
pub fn joint_belief(observer: DroneId, members: &[(DroneId, usize)], beliefs: &BeliefState) -> f64 {
    members
        .iter()
        .map(|&(j, t)| {
            debug_assert_ne!(j, observer, "the observer is not part of its own uncertainty");
            beliefs.row(observer, j)[t]
        })
        .product()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct RateKey {
    members: u64,
    types: Box<[u8]>,
}

/// Expected-payoff evaluator for one network.
///
/// Per-member rates of a coalition under a hypothesised type profile do not
/// depend on beliefs, so they are memoised for the lifetime of the engine.
/// The memo is a concurrent map; engines may be shared across threads.
#[derive(Debug)]
pub struct PayoffEngine<'a> {
    net: &'a Network,
    cache: DashMap<RateKey, Arc<[f64]>>,
}

impl<'a> PayoffEngine<'a> {
    /// Fails when the largest type space an expected payoff may sum over
    /// (the grand coalition seen by one member) exceeds `type_space_cap`.
    pub fn new(net: &'a Network, type_space_cap: usize) -> Result<Self> {
        let d = net.num_drones();
        if d > 64 {
            return Err(Error::CapExceeded {
                what: "drone count",
                size: d,
                cap: 64,
            });
        }
        if net.num_types() > u8::MAX as usize {
            return Err(Error::Validation("at most 255 types are supported".into()));
        }
        let size = (net.num_types() as u128).saturating_pow(d.saturating_sub(1) as u32);
        if size > type_space_cap as u128 {
            return Err(Error::CapExceeded {
                what: "type space",
                size: size.min(usize::MAX as u128) as usize,
                cap: type_space_cap,
            });
        }
        Ok(Self {
            net,
            cache: DashMap::new(),
        })
    }

    pub fn with_default_cap(net: &'a Network) -> Result<Self> {
        Self::new(net, DEFAULT_TYPE_SPACE_CAP)
    }

    pub fn network(&self) -> &'a Network {
        self.net
    }

    pub fn num_drones(&self) -> usize {
        self.net.num_drones()
    }

    pub fn cache_len(&self) -> usize {
        self.cache.len()
    }

    /// Per-member rates of `members` (sorted) when member `i` has type
    /// `types[i]`.
    pub fn conditional_rates(&self, members: &[DroneId], types: &[usize]) -> Arc<[f64]> {
        debug_assert!(members.windows(2).all(|w| w[0] < w[1]));
        let key = RateKey {
            members: members.iter().fold(0u64, |m, &d| m | (1 << d)),
            types: types.iter().map(|&t| t as u8).collect(),
        };
        if let Some(hit) = self.cache.get(&key) {
            return hit.clone();
        }
        let powers: Vec<f64> = types.iter().map(|&t| self.net.type_power(t)).collect();
        let rates: Arc<[f64]> = evaluate_coalition(members, self.net, &powers).per_drone_rate.into();
        self.cache.insert(key, rates.clone());
        rates
    }

    /// Rates of every member under the true types.
    pub fn true_rates(&self, coalition: &[DroneId]) -> Arc<[f64]> {
        let mut members = coalition.to_vec();
        members.sort_unstable();
        let types: Vec<usize> = members.iter().map(|&d| self.net.true_type[d]).collect();
        self.conditional_rates(&members, &types)
    }

    /// `believer`'s expectation of `subject`'s rate in `coalition`, averaging
    /// over the believer's belief about every member's type.
    pub fn believed_payoff(&self, believer: DroneId, subject: DroneId, coalition: &[DroneId], beliefs: &BeliefState) -> f64 {
        let mut members = coalition.to_vec();
        members.sort_unstable();
        let pos = members
            .binary_search(&subject)
            .unwrap_or_else(|_| panic!("drone {subject} not in coalition {members:?}"));
        let supports: Vec<Vec<(usize, f64)>> = members
            .iter()
            .map(|&j| {
                beliefs
                    .row(believer, j)
                    .iter()
                    .copied()
                    .enumerate()
                    .filter(|&(_, p)| p > 0.0)
                    .collect()
            })
            .collect();
        let mut digits = vec![0usize; members.len()];
        let mut types = vec![0usize; members.len()];
        let mut total = 0.0;
        loop {
            let mut prob = 1.0;
            for (k, s) in supports.iter().enumerate() {
                let (t, p) = s[digits[k]];
                types[k] = t;
                prob *= p;
            }
            total += prob * self.conditional_rates(&members, &types)[pos];
            // odometer increment
            let mut k = 0;
            loop {
                if k == digits.len() {
                    return total;
                }
                digits[k] += 1;
                if digits[k] < supports[k].len() {
                    break;
                }
                digits[k] = 0;
                k += 1;
            }
        }
    }

    /// Expected payoff of `observer` in `coalition` under its own beliefs.
    pub fn expected_payoff(&self, observer: DroneId, coalition: &[DroneId], beliefs: &BeliefState) -> f64 {
        self.believed_payoff(observer, observer, coalition, beliefs)
    }
}

/// `coalition` with `drone` added, sorted.
pub fn joined(coalition: &[DroneId], drone: DroneId) -> Vec<DroneId> {
    let mut c = coalition.to_vec();
    c.push(drone);
    c.sort_unstable();
    c
}

/// A profitable, unanimously accepted move that witnesses instability.
#[derive(Debug, Clone, PartialEq)]
pub struct Deviation {
    pub drone: DroneId,
    /// Members of the coalition joined; empty when going alone.
    pub target: Vec<DroneId>,
    pub gain_from: f64,
    pub gain_to: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stability {
    Stable,
    Unstable(Deviation),
}

impl Stability {
    pub fn is_stable(&self) -> bool {
        matches!(self, Stability::Stable)
    }
}

/// Scans every drone and every alternative (other blocks and, for members of
/// non-singleton blocks, going alone). Unstable iff some drone strictly gains
/// and no member of the target block loses.
pub fn is_nash_stable(structure: &CoalitionStructure, beliefs: &BeliefState, engine: &PayoffEngine) -> Stability {
    for drone in 0..structure.num_drones() {
        let own = structure.block_of(drone);
        let current = engine.expected_payoff(drone, own, beliefs);
        let mut targets: Vec<&[DroneId]> = structure
            .blocks()
            .iter()
            .filter(|b| !b.contains(&drone))
            .map(Vec::as_slice)
            .collect();
        if own.len() > 1 {
            targets.push(&[]);
        }
        for s in targets {
            let with = joined(s, drone);
            let value = engine.expected_payoff(drone, &with, beliefs);
            if value <= current {
                continue;
            }
            let accepted = s
                .iter()
                .all(|&j| engine.expected_payoff(j, &with, beliefs) >= engine.expected_payoff(j, s, beliefs));
            if accepted {
                return Stability::Unstable(Deviation {
                    drone,
                    target: s.to_vec(),
                    gain_from: current,
                    gain_to: value,
                });
            }
        }
    }
    Stability::Stable
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoreKind {
    Weak,
    Strong,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CoreVerdict {
    InCore,
    /// `coalition` blocks the grand coalition; `believer` is set when the
    /// block exists only in that drone's beliefs about the others.
    Blocked {
        coalition: Vec<DroneId>,
        believer: Option<DroneId>,
    },
}

/// Membership of the grand coalition's payoff profile in the weak or strong
/// Bayesian core.
///
/// A proper sub-coalition `S` blocks weakly when every member expects at
/// least its grand-coalition payoff in `S`. The strong core additionally
/// rules out any member `d` of `S` who weakly prefers `S` and believes every
/// other member of `S` does as well, so the strong core is contained in the
/// weak core.
pub fn bayesian_core(engine: &PayoffEngine, beliefs: &BeliefState, kind: CoreKind, cap: usize) -> Result<CoreVerdict> {
    let d = engine.num_drones();
    if d > cap {
        return Err(Error::CapExceeded {
            what: "coalition enumeration over drones",
            size: d,
            cap,
        });
    }
    let grand: Vec<DroneId> = (0..d).collect();
    let own_grand: Vec<f64> = (0..d).map(|i| engine.expected_payoff(i, &grand, beliefs)).collect();
    for mask in 1u64..(1u64 << d) - 1 {
        let s: Vec<DroneId> = (0..d).filter(|&i| mask >> i & 1 == 1).collect();
        let self_ok: Vec<bool> = s
            .iter()
            .map(|&i| engine.expected_payoff(i, &s, beliefs) >= own_grand[i])
            .collect();
        if self_ok.iter().all(|&b| b) {
            return Ok(CoreVerdict::Blocked {
                coalition: s,
                believer: None,
            });
        }
        if kind == CoreKind::Strong {
            for (k, &believer) in s.iter().enumerate() {
                if !self_ok[k] {
                    continue;
                }
                let others_ok = s.iter().filter(|&&j| j != believer).all(|&j| {
                    engine.believed_payoff(believer, j, &s, beliefs) >= engine.believed_payoff(believer, j, &grand, beliefs)
                });
                if others_ok {
                    return Ok(CoreVerdict::Blocked {
                        coalition: s,
                        believer: Some(believer),
                    });
                }
            }
        }
    }
    Ok(CoreVerdict::InCore)
}
