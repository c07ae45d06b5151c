//! Network instances: users, drones, channel ownership, types and the
//! non-cooperative baseline.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::{self, Point};
use crate::propagation::{self, Environment, Position3D};
use crate::{ChannelId, DroneId, UserId};

pub const DEFAULT_AREA_M: f64 = 4000.0;
pub const DEFAULT_ALTITUDE_M: f64 = 1000.0;

/// A candidate distribution of a drone's available power (Gaussian, Watts).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeSpec {
    pub id: u32,
    pub mu: f64,
    pub sigma: f64,
}

impl TypeSpec {
    pub fn new(id: u32, mu: f64, sigma: f64) -> Self {
        Self { id, mu, sigma }
    }
}

/// Parses `"1:12:3,2:18:3"` (id:mu:sigma, comma separated).
pub fn parse_type_set(spec: &str) -> Result<Vec<TypeSpec>> {
    let types = spec
        .split(',')
        .map(|item| {
            let parts: Vec<&str> = item.trim().split(':').collect();
            let bad = || Error::Validation(format!("type {item:?} is not id:mu:sigma"));
            if parts.len() != 3 {
                return Err(bad());
            }
            Ok(TypeSpec {
                id: parts[0].parse().map_err(|_| bad())?,
                mu: parts[1].parse().map_err(|_| bad())?,
                sigma: parts[2].parse().map_err(|_| bad())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    validate_type_set(&types)?;
    Ok(types)
}

pub fn validate_type_set(types: &[TypeSpec]) -> Result<()> {
    if types.is_empty() {
        return Err(Error::Validation("type set is empty".into()));
    }
    for t in types {
        if !(t.mu > 0.0 && t.sigma > 0.0) {
            return Err(Error::Validation(format!("type {} needs mu > 0 and sigma > 0", t.id)));
        }
    }
    if types.windows(2).any(|w| w[0].id >= w[1].id) {
        return Err(Error::Validation("type ids must be unique and ascending".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationSetting {
    pub name: String,
    pub d: usize,
    pub q: usize,
    pub n: usize,
    pub users_per_drone: usize,
    pub channels_per_drone: usize,
}

impl SimulationSetting {
    pub const NAMES: [&'static str; 4] = ["S1", "S2", "S3", "S4"];

    pub fn with_drones(name: &str, d: usize) -> Self {
        Self {
            name: name.to_string(),
            d,
            q: 3 * d,
            n: 3 * d,
            users_per_drone: 3,
            channels_per_drone: 3,
        }
    }

    pub fn named(name: &str) -> Result<Self> {
        match name {
            "S1" => Ok(Self::with_drones("S1", 3)),
            "S2" => Ok(Self::with_drones("S2", 4)),
            "S3" => Ok(Self::with_drones("S3", 5)),
            "S4" => Ok(Self::with_drones("S4", 6)),
            other => Err(Error::Validation(format!("unknown setting {other:?}; expected S1..S4"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Validation("setting needs at least one drone".into()));
        }
        if self.d * self.users_per_drone != self.n || self.d * self.channels_per_drone != self.q {
            return Err(Error::Validation(format!(
                "setting {}: {} drones x {} users/{} channels does not give N = {}, Q = {}",
                self.name, self.d, self.users_per_drone, self.channels_per_drone, self.n, self.q
            )));
        }
        if self.users_per_drone > self.channels_per_drone {
            return Err(Error::Validation("more users per drone than channels".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroneSpec {
    pub id: DroneId,
    pub position: Position3D,
    pub channels: Vec<ChannelId>,
    pub true_type: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSpec {
    pub id: UserId,
    pub position: Position3D,
    pub baseline_drone: DroneId,
}

/// Immutable network instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub area_m: f64,
    pub seed: u64,
    pub env: Environment,
    pub type_set: Vec<TypeSpec>,
    pub drones: Vec<DroneSpec>,
    pub users: Vec<UserSpec>,
}

impl Scenario {
    /// Random instance for a setting: users uniform over the square area,
    /// drones at the (equal-size) k-means cluster centroids, true types
    /// uniform over the type set.
    pub fn generate(setting: &SimulationSetting, env: &Environment, type_set: &[TypeSpec], seed: u64) -> Result<Self> {
        setting.validate()?;
        env.validate()?;
        validate_type_set(type_set)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let area = DEFAULT_AREA_M;
        let points: Vec<Point> = (0..setting.n)
            .map(|_| [rng.random::<f64>() * area, rng.random::<f64>() * area])
            .collect();
        let clustering = kmeans::kmeans_placement(&points, setting.d, rng.random(), Some(setting.users_per_drone))?;
        let drones = (0..setting.d)
            .map(|d| DroneSpec {
                id: d,
                position: Position3D::new(clustering.centroids[d][0], clustering.centroids[d][1], DEFAULT_ALTITUDE_M),
                channels: (d * setting.channels_per_drone..(d + 1) * setting.channels_per_drone).collect(),
                true_type: type_set[rng.random_range(0..type_set.len())].id,
            })
            .collect();
        let users = points
            .iter()
            .zip(&clustering.assignment)
            .enumerate()
            .map(|(id, (p, &d))| UserSpec {
                id,
                position: Position3D::ground(p[0], p[1]),
                baseline_drone: d,
            })
            .collect();
        let scenario = Self {
            area_m: area,
            seed,
            env: *env,
            type_set: type_set.to_vec(),
            drones,
            users,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        validate_type_set(&self.type_set)?;
        if self.drones.is_empty() {
            return Err(Error::Validation("scenario has no drones".into()));
        }
        let q_total: usize = self.drones.iter().map(|d| d.channels.len()).sum();
        let mut seen = vec![false; q_total];
        for (i, d) in self.drones.iter().enumerate() {
            if d.id != i {
                return Err(Error::Validation(format!("drone ids must be 0..D in order, found {} at {i}", d.id)));
            }
            if d.position.z <= 0.0 {
                return Err(Error::Validation(format!("drone {i} must fly above ground")));
            }
            if !self.type_set.iter().any(|t| t.id == d.true_type) {
                return Err(Error::Validation(format!("drone {i} has unknown type {}", d.true_type)));
            }
            for &q in &d.channels {
                if q >= q_total || seen[q] {
                    return Err(Error::Validation(format!("channel {q} is out of range or owned twice")));
                }
                seen[q] = true;
            }
        }
        let mut served = vec![0usize; self.drones.len()];
        for (i, u) in self.users.iter().enumerate() {
            if u.id != i {
                return Err(Error::Validation(format!("user ids must be 0..N in order, found {} at {i}", u.id)));
            }
            if u.position.z < 0.0 {
                return Err(Error::Validation(format!("user {i} is below ground")));
            }
            let d = *served
                .get(u.baseline_drone)
                .ok_or_else(|| Error::Validation(format!("user {i} names unknown drone {}", u.baseline_drone)))?;
            served[u.baseline_drone] = d + 1;
        }
        for (d, &n) in served.iter().enumerate() {
            if n > self.drones[d].channels.len() {
                return Err(Error::Validation(format!(
                    "drone {d} serves {n} users with {} channels",
                    self.drones[d].channels.len()
                )));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn num_drones(&self) -> usize {
        self.drones.len()
    }
}

/// A scenario with its link gains precomputed (mean path-loss mode).
#[derive(Debug, Clone)]
pub struct Network {
    pub scenario: Scenario,
    /// `1 / L` (linear) from every drone to every user.
    pub gain: Vec<Vec<f64>>,
    /// SINR per transmitted watt from every drone to every user.
    pub sinr_per_watt: Vec<Vec<f64>>,
    pub channel_owner: Vec<DroneId>,
    pub users_of: Vec<Vec<UserId>>,
    /// Index into `type_set` of each drone's true type.
    pub true_type: Vec<usize>,
}

impl Network {
    pub fn new(scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        let env = scenario.env;
        let mut gain = Vec::with_capacity(scenario.drones.len());
        let mut sinr = Vec::with_capacity(scenario.drones.len());
        for d in &scenario.drones {
            let mut g_row = Vec::with_capacity(scenario.users.len());
            let mut s_row = Vec::with_capacity(scenario.users.len());
            for u in &scenario.users {
                let lb = propagation::mean_path_loss(&d.position, &u.position, &env)?;
                g_row.push(propagation::db_to_linear(-lb.mean_loss_db));
                s_row.push(env.sinr_per_watt(lb.mean_loss_db));
            }
            gain.push(g_row);
            sinr.push(s_row);
        }
        let q_total: usize = scenario.drones.iter().map(|d| d.channels.len()).sum();
        let mut channel_owner = vec![0; q_total];
        for d in &scenario.drones {
            for &q in &d.channels {
                channel_owner[q] = d.id;
            }
        }
        let mut users_of = vec![Vec::new(); scenario.drones.len()];
        for u in &scenario.users {
            users_of[u.baseline_drone].push(u.id);
        }
        let true_type = scenario
            .drones
            .iter()
            .map(|d| scenario.type_set.iter().position(|t| t.id == d.true_type).expect("validated"))
            .collect();
        Ok(Self {
            scenario,
            gain,
            sinr_per_watt: sinr,
            channel_owner,
            users_of,
            true_type,
        })
    }

    pub fn num_drones(&self) -> usize {
        self.scenario.drones.len()
    }

    pub fn num_types(&self) -> usize {
        self.scenario.type_set.len()
    }

    pub fn env(&self) -> &Environment {
        &self.scenario.env
    }

    /// Expected power of the type at `type_index`.
    pub fn type_power(&self, type_index: usize) -> f64 {
        self.scenario.type_set[type_index].mu
    }

    pub fn true_power(&self, drone: DroneId) -> f64 {
        self.type_power(self.true_type[drone])
    }

    pub fn true_powers(&self) -> Vec<f64> {
        (0..self.num_drones()).map(|d| self.true_power(d)).collect()
    }
}

/// Per-drone rate without cooperation: every drone serves its own users on
/// its own channels with its own expected power.
pub fn baseline_rates(net: &Network) -> Vec<f64> {
    (0..net.num_drones())
        .map(|d| {
            let r = crate::allocation::evaluate_coalition(&[d], net, &[net.true_power(d)]);
            r.per_drone_rate[0]
        })
        .collect()
}
