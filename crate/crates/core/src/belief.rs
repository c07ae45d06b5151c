//! Type learning from shared power samples: Gaussian MLE, KL classification
//! against the type set, frequency beliefs and the Frobenius convergence
//! metric.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::game::{argmax_lowest, BeliefState};
use crate::scenario::TypeSpec;
use crate::DroneId;

/// Floor on a zero estimated standard deviation, relative to the mean.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianEstimate {
    pub mu: f64,
    /// Biased (1/N) variance.
    pub var: f64,
}

pub fn mle_gaussian(samples: &[f64]) -> Result<GaussianEstimate> {
    if samples.is_empty() {
        return Err(Error::Domain("MLE needs at least one sample".into()));
    }
    let n = samples.len() as f64;
    let mu = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
    Ok(GaussianEstimate { mu, var })
}

/// KL divergence of `N(mu1, sigma1^2)` from `N(mu2, sigma2^2)`, in nats.
/// A zero `sigma1` is replaced by `SIGMA_FLOOR * |mu1|`.
pub fn kl_gaussian(mu1: f64, sigma1: f64, mu2: f64, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::Domain(format!("reference sigma must be positive, got {sigma2}")));
    }
    if !(sigma1 >= 0.0) {
        return Err(Error::Domain(format!("sigma must be non-negative, got {sigma1}")));
    }
    let s1 = if sigma1 > 0.0 {
        sigma1
    } else {
        (SIGMA_FLOOR * mu1.abs()).max(f64::MIN_POSITIVE)
    };
    Ok((sigma2 / s1).ln() + (s1 * s1 + (mu1 - mu2).powi(2)) / (2.0 * sigma2 * sigma2) - 0.5)
}

/// Index into `type_set` of the type closest to `estimate` in KL divergence;
/// the lowest index wins ties.
pub fn classify(estimate: GaussianEstimate, type_set: &[TypeSpec]) -> Result<usize> {
    if type_set.is_empty() {
        return Err(Error::Validation("empty type set".into()));
    }
    let sigma = estimate.var.sqrt();
    let mut best = (0, f64::INFINITY);
    for (m, t) in type_set.iter().enumerate() {
        let kl = kl_gaussian(estimate.mu, sigma, t.mu, t.sigma)?;
        if kl < best.1 {
            best = (m, kl);
        }
    }
    Ok(best.0)
}

/// Power samples each drone has received from each other drone.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationLog {
    /// `samples[observer][observed]` as `(round, watts)`, rounds increasing.
    samples: Vec<Vec<Vec<(u64, f64)>>>,
}

impl ObservationLog {
    pub fn new(num_drones: usize) -> Self {
        Self {
            samples: vec![vec![Vec::new(); num_drones]; num_drones],
        }
    }

    pub fn num_drones(&self) -> usize {
        self.samples.len()
    }

    pub fn push(&mut self, observer: DroneId, observed: DroneId, round: u64, watts: f64) -> Result<()> {
        if observer == observed {
            return Err(Error::Validation("a drone does not observe itself".into()));
        }
        let list = &mut self.samples[observer][observed];
        if list.last().is_some_and(|&(r, _)| r >= round) {
            return Err(Error::Validation(format!(
                "round {round} is not after the last observation of {observed} by {observer}"
            )));
        }
        list.push((round, watts));
        Ok(())
    }

    pub fn pair(&self, observer: DroneId, observed: DroneId) -> &[(u64, f64)] {
        &self.samples[observer][observed]
    }
}

/// Per-pair classification counts and the resulting predicted type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypePrediction {
    /// `counts[observer][observed][type_index]`.
    pub counts: Vec<Vec<Vec<u64>>>,
    /// Predicted type index (argmax belief, lowest index on ties); the
    /// diagonal holds each drone's own type.
    pub predicted: Vec<Vec<usize>>,
}

/// Samples of a pair's history, trimmed to the trailing `window`.
fn windowed(xs: &[f64], window: Option<usize>) -> &[f64] {
    match window {
        Some(w) if xs.len() > w => &xs[xs.len() - w..],
        _ => xs,
    }
}

fn beliefs_from_counts(counts: &[Vec<Vec<u64>>], own_types: &[usize], m: usize) -> (BeliefState, TypePrediction) {
    let d = own_types.len();
    let mut beliefs = BeliefState::uniform(own_types, m);
    let mut predicted = vec![vec![0; d]; d];
    for i in 0..d {
        for j in 0..d {
            if i != j {
                let total: u64 = counts[i][j].iter().sum();
                if total > 0 {
                    let row = counts[i][j].iter().map(|&c| c as f64 / total as f64).collect();
                    beliefs.set_row(i, j, row);
                }
            }
            predicted[i][j] = beliefs.argmax(i, j);
        }
    }
    (
        beliefs,
        TypePrediction {
            counts: counts.to_vec(),
            predicted,
        },
    )
}

/// Recomputes beliefs from the whole log: for every interaction round of a
/// pair, the MLE over the pair's history up to that round (trailing `window`
/// samples) is classified and counted. Pairs never observed keep the uniform
/// prior.
pub fn update_beliefs(
    log: &ObservationLog,
    type_set: &[TypeSpec],
    window: Option<usize>,
    own_types: &[usize],
) -> Result<(BeliefState, TypePrediction)> {
    let d = own_types.len();
    let m = type_set.len();
    let mut counts = vec![vec![vec![0u64; m]; d]; d];
    for i in 0..d {
        for j in 0..d {
            let xs: Vec<f64> = log.pair(i, j).iter().map(|s| s.1).collect();
            for t in 1..=xs.len() {
                let est = mle_gaussian(windowed(&xs[..t], window))?;
                counts[i][j][classify(est, type_set)?] += 1;
            }
        }
    }
    Ok(beliefs_from_counts(&counts, own_types, m))
}

/// Incremental form of [`update_beliefs`]: classifies each new sample once.
#[derive(Debug, Clone)]
pub struct BeliefLearner {
    type_set: Vec<TypeSpec>,
    window: Option<usize>,
    own_types: Vec<usize>,
    log: ObservationLog,
    history: Vec<Vec<Vec<f64>>>,
    counts: Vec<Vec<Vec<u64>>>,
}

impl BeliefLearner {
    pub fn new(type_set: &[TypeSpec], own_types: &[usize], window: Option<usize>) -> Result<Self> {
        if type_set.is_empty() {
            return Err(Error::Validation("empty type set".into()));
        }
        if window == Some(0) {
            return Err(Error::Validation("belief window must be at least 1".into()));
        }
        let d = own_types.len();
        Ok(Self {
            type_set: type_set.to_vec(),
            window,
            own_types: own_types.to_vec(),
            log: ObservationLog::new(d),
            history: vec![vec![Vec::new(); d]; d],
            counts: vec![vec![vec![0; type_set.len()]; d]; d],
        })
    }

    /// Logs one sample of `observed` received by `observer` and classifies
    /// the pair's updated history.
    pub fn observe(&mut self, observer: DroneId, observed: DroneId, round: u64, watts: f64) -> Result<()> {
        self.log.push(observer, observed, round, watts)?;
        let xs = &mut self.history[observer][observed];
        xs.push(watts);
        let est = mle_gaussian(windowed(xs, self.window))?;
        self.counts[observer][observed][classify(est, &self.type_set)?] += 1;
        Ok(())
    }

    /// Every member of a coalition receives the one sample drawn by each of
    /// its coalition mates this round.
    pub fn observe_coalition(&mut self, members: &[DroneId], samples: &[f64], round: u64) -> Result<()> {
        for &i in members {
            for &j in members {
                if i != j {
                    self.observe(i, j, round, samples[j])?;
                }
            }
        }
        Ok(())
    }

    pub fn log(&self) -> &ObservationLog {
        &self.log
    }

    pub fn snapshot(&self) -> (BeliefState, TypePrediction) {
        beliefs_from_counts(&self.counts, &self.own_types, self.type_set.len())
    }
}

/// Frobenius distance between predicted and true type-indicator matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrobeniusReport {
    /// One norm per type.
    pub per_type: Vec<f64>,
    /// Mean of `per_type`.
    pub mean: f64,
    /// Norm of all per-type difference matrices taken together.
    pub combined: f64,
}

/// For type `m`, `A[i][j] = 1` iff `i` predicts type `m` for `j` (the
/// diagonal holds each drone's own type) and `T[i][j] = 1` iff `j` is of
/// type `m`; returns `||A - T||_F` per type.
pub fn frobenius_convergence(predicted: &[Vec<usize>], truth: &[usize], num_types: usize) -> FrobeniusReport {
    let d = truth.len();
    let mut sq = vec![0usize; num_types];
    for i in 0..d {
        for j in 0..d {
            let p = if i == j { truth[j] } else { predicted[i][j] };
            if p != truth[j] {
                sq[p] += 1;
                sq[truth[j]] += 1;
            }
        }
    }
    let per_type: Vec<f64> = sq.iter().map(|&s| (s as f64).sqrt()).collect();
    let mean = if num_types == 0 {
        0.0
    } else {
        per_type.iter().sum::<f64>() / num_types as f64
    };
    let combined = (sq.iter().sum::<usize>() as f64).sqrt();
    FrobeniusReport { per_type, mean, combined }
}

/// Hex SHA-256 of the belief table's bit patterns.
pub fn belief_hash(beliefs: &BeliefState) -> String {
    let mut h = Sha256::new();
    let d = beliefs.num_drones();
    h.update((d as u64).to_le_bytes());
    h.update((beliefs.num_types() as u64).to_le_bytes());
    for i in 0..d {
        for j in 0..d {
            for p in beliefs.row(i, j) {
                h.update(p.to_bits().to_le_bytes());
            }
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Index of the largest frequency, lowest index on ties.
pub fn predicted_type(frequencies: &[f64]) -> usize {
    argmax_lowest(frequencies)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::{prop_assert_eq, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn two_types() -> Vec<TypeSpec> {
        vec![TypeSpec::new(1, 12.0, 3.0), TypeSpec::new(2, 18.0, 3.0)]
    }

    #[test]
    fn mle_examples() {
        assert_eq!(mle_gaussian(&[1.0, 2.0, 3.0]).unwrap(), GaussianEstimate { mu: 2.0, var: 2.0 / 3.0 });
        assert_eq!(mle_gaussian(&[5.5; 4]).unwrap(), GaussianEstimate { mu: 5.5, var: 0.0 });
        assert_eq!(mle_gaussian(&[7.0]).unwrap(), GaussianEstimate { mu: 7.0, var: 0.0 });
        assert!(mle_gaussian(&[]).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_gaussian(12.0, 3.0, 12.0, 3.0).unwrap(), 0.0);
        assert!((kl_gaussian(12.0, 3.0, 18.0, 3.0).unwrap() - 2.0).abs() <= 1e-12);
        let ab = kl_gaussian(12.0, 3.0, 18.0, 6.0).unwrap();
        let ba = kl_gaussian(18.0, 6.0, 12.0, 3.0).unwrap();
        assert_relative_eq!(ab, 0.8181471805599454, epsilon = 1e-12);
        assert_relative_eq!(ba, 2.8068528194400546, epsilon = 1e-12);
        assert!(kl_gaussian(1.0, 1.0, 1.0, 0.0).is_err());
        assert!(kl_gaussian(12.0, 0.0, 12.0, 3.0).unwrap().is_finite());
    }

    #[test]
    fn classify_examples() {
        let ts = two_types();
        assert_eq!(classify(GaussianEstimate { mu: 12.0, var: 9.0 }, &ts).unwrap(), 0);
        assert_eq!(classify(GaussianEstimate { mu: 18.0, var: 9.0 }, &ts).unwrap(), 1);
        assert_relative_eq!(kl_gaussian(14.9, 3.0, 12.0, 3.0).unwrap(), 0.4672222222222222, epsilon = 1e-12);
        assert_relative_eq!(kl_gaussian(14.9, 3.0, 18.0, 3.0).unwrap(), 0.5338888888888889, epsilon = 1e-12);
        assert_eq!(classify(GaussianEstimate { mu: 14.9, var: 9.0 }, &ts).unwrap(), 0);
        assert_eq!(classify(GaussianEstimate { mu: 15.0, var: 9.0 }, &ts).unwrap(), 0);
        // zero variance reduces to nearest mean
        assert_eq!(classify(GaussianEstimate { mu: 15.2, var: 0.0 }, &ts).unwrap(), 1);
        assert!(classify(GaussianEstimate { mu: 1.0, var: 1.0 }, &[]).is_err());
    }

    #[test]
    fn classification_is_consistent() {
        let ts = two_types();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut wrong = 0;
        for trial in 0..1000 {
            let truth = trial % 2;
            let dist = Normal::new(ts[truth].mu, ts[truth].sigma).unwrap();
            let xs: Vec<f64> = (0..30).map(|_| dist.sample(&mut rng)).collect();
            if classify(mle_gaussian(&xs).unwrap(), &ts).unwrap() != truth {
                wrong += 1;
            }
        }
        assert!(wrong < 50, "{wrong} misclassified");
    }

    proptest! {
        #[test]
        fn classify_scale_invariant(mu in 0.1f64..50.0, sd in 0.01f64..20.0, k in 0.01f64..100.0) {
            let ts = vec![TypeSpec::new(1, 12.0, 3.0), TypeSpec::new(2, 18.0, 3.0), TypeSpec::new(3, 24.0, 5.0)];
            let scaled: Vec<TypeSpec> = ts.iter().map(|t| TypeSpec::new(t.id, t.mu * k, t.sigma * k)).collect();
            let a = classify(GaussianEstimate { mu, var: sd * sd }, &ts).unwrap();
            let b = classify(GaussianEstimate { mu: mu * k, var: (sd * k).powi(2) }, &scaled).unwrap();
            // skip near-ties where rounding may flip the argmin
            let kls: Vec<f64> = ts.iter().map(|t| kl_gaussian(mu, sd, t.mu, t.sigma).unwrap()).collect();
            let mut sorted = kls.clone();
            sorted.sort_by(f64::total_cmp);
            if sorted[1] - sorted[0] > 1e-9 * sorted[1].abs().max(1.0) {
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn no_observations_is_uniform() {
        let log = ObservationLog::new(3);
        let (b, p) = update_beliefs(&log, &two_types(), None, &[1, 0, 1]).unwrap();
        assert_eq!(b, BeliefState::uniform(&[1, 0, 1], 2));
        assert_eq!(p.predicted[0][1], 0);
        assert_eq!(p.predicted[0][0], 1);
    }

    #[test]
    fn frequency_counting() {
        let mut log = ObservationLog::new(2);
        // running means 12, 12, 14 -> T1, T1, T1; then 30 pulls it to T2
        for (r, x) in [12.0, 12.0, 18.0, 30.0].into_iter().enumerate() {
            log.push(0, 1, r as u64, x).unwrap();
        }
        let (b, p) = update_beliefs(&log, &two_types(), None, &[0, 1]).unwrap();
        assert_eq!(p.counts[0][1], vec![3, 1]);
        assert_eq!(b.row(0, 1), &[0.75, 0.25]);
        assert_eq!(p.predicted[0][1], 0);

        let mut log = ObservationLog::new(2);
        for r in 0..5 {
            log.push(1, 0, r, 20.0).unwrap();
        }
        let (b, _) = update_beliefs(&log, &two_types(), None, &[0, 1]).unwrap();
        assert_eq!(b.row(1, 0), &[0.0, 1.0]);
    }

    #[test]
    fn two_thirds_one_third() {
        let mut log = ObservationLog::new(2);
        // T1, T1, then a sample making the running MLE (mu 15.5, var ~16) land on T2
        for (r, x) in [11.0, 13.0, 22.5].into_iter().enumerate() {
            log.push(0, 1, r as u64, x).unwrap();
        }
        let (b, _) = update_beliefs(&log, &two_types(), None, &[0, 0]).unwrap();
        assert_relative_eq!(b.row(0, 1)[0], 2.0 / 3.0);
        assert_relative_eq!(b.row(0, 1)[1], 1.0 / 3.0);
    }

    #[test]
    fn log_rejects_bad_rounds() {
        let mut log = ObservationLog::new(2);
        log.push(0, 1, 3, 1.0).unwrap();
        assert!(log.push(0, 1, 3, 1.0).is_err());
        assert!(log.push(0, 0, 4, 1.0).is_err());
    }

    #[test]
    fn learner_matches_replay() {
        let ts = two_types();
        let own = [0, 1, 1, 0];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for window in [None, Some(3)] {
            let mut learner = BeliefLearner::new(&ts, &own, window).unwrap();
            for round in 0..25u64 {
                let samples: Vec<f64> = own
                    .iter()
                    .map(|&t| Normal::new(ts[t].mu, 6.0).unwrap().sample(&mut rng).max(0.0))
                    .collect();
                let members: Vec<usize> = (0..4).filter(|&d| (round as usize + d) % 3 != 0).collect();
                learner.observe_coalition(&members, &samples, round).unwrap();
                let (b, p) = learner.snapshot();
                let (rb, rp) = update_beliefs(learner.log(), &ts, window, &own).unwrap();
                assert_eq!(b, rb);
                assert_eq!(p, rp);
                b.validate(&own).unwrap();
                for i in 0..4 {
                    for j in 0..4 {
                        let s: f64 = b.row(i, j).iter().sum();
                        assert!((s - 1.0).abs() <= 1e-12 && b.row(i, j).iter().all(|&x| x >= 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn frobenius_examples() {
        let truth = [0, 1, 1];
        let right: Vec<Vec<usize>> = (0..3).map(|_| truth.to_vec()).collect();
        let r = frobenius_convergence(&right, &truth, 2);
        assert_eq!(r.per_type, vec![0.0, 0.0]);
        assert_eq!(r.mean, 0.0);

        let mut one_wrong = right.clone();
        one_wrong[0][2] = 0;
        let r = frobenius_convergence(&one_wrong, &truth, 2);
        assert_eq!(r.per_type, vec![1.0, 1.0]);
        assert_eq!(r.combined, 2f64.sqrt());
        assert_eq!(r.mean, 1.0);

        // the diagonal always holds the truth
        let mut diag = right;
        diag[1][1] = 0;
        assert_eq!(frobenius_convergence(&diag, &truth, 2).mean, 0.0);

        // uniform prior with M = 2 predicts type index 0 for everyone
        let log = ObservationLog::new(3);
        let (_, p) = update_beliefs(&log, &two_types(), None, &truth).unwrap();
        let r = frobenius_convergence(&p.predicted, &truth, 2);
        // four off-diagonal entries about drones 1 and 2 are wrong
        assert_eq!(r.per_type, vec![2.0, 2.0]);
        assert_eq!(r.combined, 8f64.sqrt());
    }

    #[test]
    fn hash_tracks_content() {
        let a = BeliefState::uniform(&[0, 1], 2);
        let mut b = a.clone();
        assert_eq!(belief_hash(&a), belief_hash(&b));
        b.set_row(0, 1, vec![0.25, 0.75]);
        assert_ne!(belief_hash(&a), belief_hash(&b));
        assert_eq!(belief_hash(&a).len(), 64);
    }
}
