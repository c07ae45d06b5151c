//! Resource allocation inside one coalition: the pooled channels are matched
//! to the pooled users by maximum total gain, then the pooled power budget is
//! water-filled over the matched links.

use serde::{Deserialize, Serialize};

use crate::matching::max_weight_matching;
use crate::propagation;
use crate::scenario::Network;
use crate::{ChannelId, DroneId, UserId};

/// Channel-to-user (`x`) and drone-to-user (`y`) assignment of one coalition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentMatrices {
    pub channels: Vec<ChannelId>,
    pub users: Vec<UserId>,
    pub drones: Vec<DroneId>,
    /// `x[q][n] = 1` iff `channels[q]` serves `users[n]`.
    pub x: Vec<Vec<u8>>,
    /// `y[d][n] = 1` iff `drones[d]` serves `users[n]`.
    pub y: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerVector {
    /// Power per entry of the slope vector passed to [`waterfill`].
    pub p: Vec<f64>,
    pub total_budget: f64,
    /// Common value of `p + 1/slope` over active entries; `None` if nothing
    /// is active.
    pub water_level: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub matrices: AssignmentMatrices,
    /// Power per user of `matrices.users`.
    pub powers: PowerVector,
    pub user_rate: Vec<f64>,
    /// Rate delivered by each drone of `matrices.drones`, bits/s.
    pub per_drone_rate: Vec<f64>,
    pub total_rate: f64,
}

impl AllocationResult {
    pub fn rate_of(&self, drone: DroneId) -> Option<f64> {
        self.matrices
            .drones
            .iter()
            .position(|&d| d == drone)
            .map(|i| self.per_drone_rate[i])
    }
}

/// Channels and users pooled by a coalition, in ascending id order.
pub fn pooled_resources(coalition: &[DroneId], net: &Network) -> (Vec<ChannelId>, Vec<UserId>) {
    let mut channels: Vec<ChannelId> = coalition
        .iter()
        .flat_map(|&d| net.scenario.drones[d].channels.iter().copied())
        .collect();
    let mut users: Vec<UserId> = coalition.iter().flat_map(|&d| net.users_of[d].iter().copied()).collect();
    channels.sort_unstable();
    users.sort_unstable();
    (channels, users)
}

/// Gain (inverse mean path loss) of every pooled channel towards every pooled
/// user. A channel's gain is that of the drone owning it, so channels of the
/// same drone give identical rows.
pub fn weight_matrix(coalition: &[DroneId], net: &Network) -> Vec<Vec<f64>> {
    let (channels, users) = pooled_resources(coalition, net);
    channels
        .iter()
        .map(|&q| users.iter().map(|&n| net.gain[net.channel_owner[q]][n]).collect())
        .collect()
}

/// Linear gain for a loss given in dB.
pub fn gain_from_loss_db(loss_db: f64) -> f64 {
    propagation::db_to_linear(-loss_db)
}

/// Maximises `sum log2(1 + p_i * slope_i)` subject to `sum p_i <= budget`.
///
/// Exact: slopes are sorted, and the number of active entries is the largest
/// `k` whose water level stays above the `k`-th smallest `1/slope`.
pub fn waterfill(slopes: &[f64], budget: f64) -> PowerVector {
    let mut order: Vec<usize> = (0..slopes.len()).filter(|&i| slopes[i] > 0.0).collect();
    order.sort_by(|&a, &b| slopes[b].total_cmp(&slopes[a]).then(a.cmp(&b)));
    let mut p = vec![0.0; slopes.len()];
    if budget <= 0.0 || order.is_empty() {
        return PowerVector {
            p,
            total_budget: budget.max(0.0),
            water_level: None,
        };
    }

    let mut inv_sum = 0.0;
    let mut active = 0;
    let mut level = 0.0;
    for (k, &i) in order.iter().enumerate() {
        let inv = 1.0 / slopes[i];
        let candidate = (budget + inv_sum + inv) / (k + 1) as f64;
        if candidate <= inv {
            break;
        }
        inv_sum += inv;
        active = k + 1;
        level = candidate;
    }
    for &i in &order[..active] {
        p[i] = level - 1.0 / slopes[i];
    }
    PowerVector {
        p,
        total_budget: budget,
        water_level: Some(level),
    }
}

/// Matching + water-filling for one coalition, with `assumed_powers[i]` the
/// power contributed by `coalition[i]`.
pub fn evaluate_coalition(coalition: &[DroneId], net: &Network, assumed_powers: &[f64]) -> AllocationResult {
    assert_eq!(coalition.len(), assumed_powers.len(), "one assumed power per member");
    let mut members: Vec<(DroneId, f64)> = coalition.iter().copied().zip(assumed_powers.iter().copied()).collect();
    members.sort_by_key(|m| m.0);
    let drones: Vec<DroneId> = members.iter().map(|m| m.0).collect();
    let budget: f64 = members.iter().map(|m| m.1).sum();

    let (channels, users) = pooled_resources(&drones, net);
    let weights: Vec<Vec<f64>> = channels
        .iter()
        .map(|&q| users.iter().map(|&n| net.gain[net.channel_owner[q]][n]).collect())
        .collect();
    let pairs = max_weight_matching(&weights);

    let mut x = vec![vec![0u8; users.len()]; channels.len()];
    let mut y = vec![vec![0u8; users.len()]; drones.len()];
    let mut server: Vec<Option<DroneId>> = vec![None; users.len()];
    let mut slopes = vec![0.0; users.len()];
    for &(qi, ni) in &pairs {
        let owner = net.channel_owner[channels[qi]];
        let di = drones.binary_search(&owner).expect("owner is a member");
        x[qi][ni] = 1;
        y[di][ni] = 1;
        server[ni] = Some(di);
        slopes[ni] = net.sinr_per_watt[owner][users[ni]];
    }

    let powers = waterfill(&slopes, budget);
    let env = net.env();
    let user_rate: Vec<f64> = slopes
        .iter()
        .zip(&powers.p)
        .map(|(s, p)| propagation::rate_from_sinr(s * p, env))
        .collect();
    let mut per_drone_rate = vec![0.0; drones.len()];
    for (ni, r) in user_rate.iter().enumerate() {
        if let Some(di) = server[ni] {
            per_drone_rate[di] += r;
        }
    }
    let total_rate = per_drone_rate.iter().sum();
    AllocationResult {
        matrices: AssignmentMatrices {
            channels,
            users,
            drones,
            x,
            y,
        },
        powers,
        user_rate,
        per_drone_rate,
        total_rate,
    }
}
