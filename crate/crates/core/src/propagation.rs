//! Elevation-dependent air-to-ground channel model.
//!
//! Path loss in dB is free-space loss plus an environment-dependent excess
//! loss `zeta` (Gaussian in dB, mean `mu_los`/`mu_nlos`, elevation-dependent
//! spread) plus a small-scale fading term `10 log10(omega)`, with `omega`
//! Rician for LoS links and Rayleigh for NLoS links. Payoff computations use
//! the mean mode: `zeta` at its mean, `omega` at its mean of 1, and the two
//! conditional losses averaged with the LoS probability.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// Environment constants of the channel model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub alpha: f64,
    pub gamma: f64,
    /// LoS shadowing spread at zero elevation, dB.
    pub k1: f64,
    /// LoS shadowing decay, per radian.
    pub k2: f64,
    /// NLoS shadowing spread at zero elevation, dB.
    pub g1: f64,
    /// NLoS shadowing decay, per radian.
    pub g2: f64,
    pub mu_los: f64,
    pub mu_nlos: f64,
    /// Rician factor at zero elevation, dB.
    pub k0_db: f64,
    /// Rician factor at vertical elevation, dB.
    pub k_half_pi_db: f64,
    pub theta_min_deg: f64,
    pub carrier_hz: f64,
    pub noise_plus_interference_dbm_per_hz: f64,
    pub antenna_gain_db: f64,
    pub bandwidth_hz: f64,
}

/// Named environment presets.
pub const PRESET_NAMES: [&str; 3] = ["urban", "dense_urban", "high_rise_urban"];

impl Environment {
    fn with_terrain(alpha: f64, gamma: f64, k: (f64, f64), g: (f64, f64), mu: (f64, f64)) -> Self {
        Self {
            alpha,
            gamma,
            k1: k.0,
            k2: k.1,
            g1: g.0,
            g2: g.1,
            mu_los: mu.0,
            mu_nlos: mu.1,
            k0_db: 3.0,
            k_half_pi_db: 30.0,
            theta_min_deg: 15.0,
            carrier_hz: 2.0e9,
            noise_plus_interference_dbm_per_hz: -70.0,
            antenna_gain_db: 10.0,
            bandwidth_hz: 1.0,
        }
    }

    pub fn urban() -> Self {
        Self::with_terrain(0.6, 0.11, (10.39, 0.05), (29.06, 0.03), (1.0, 20.0))
    }

    pub fn dense_urban() -> Self {
        Self::with_terrain(0.36, 0.21, (8.96, 0.04), (35.97, 0.04), (1.6, 23.0))
    }

    pub fn high_rise_urban() -> Self {
        Self::with_terrain(0.05, 0.61, (7.37, 0.03), (37.08, 0.03), (2.3, 34.0))
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "urban" => Ok(Self::urban()),
            "dense_urban" => Ok(Self::dense_urban()),
            "high_rise_urban" => Ok(Self::high_rise_urban()),
            other => Err(Error::Validation(format!(
                "unknown environment {other:?}; expected one of {PRESET_NAMES:?}"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("k1", self.k1),
            ("g1", self.g1),
            ("bandwidth_hz", self.bandwidth_hz),
            ("carrier_hz", self.carrier_hz),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Linear factor turning transmit power (W) into SINR for a link with
    /// the given mean loss: `G / (L * B * (N0 + I0))`.
    pub fn sinr_per_watt(&self, mean_loss_db: f64) -> f64 {
        let noise_w = db_to_linear(self.noise_plus_interference_dbm_per_hz - 30.0) * self.bandwidth_hz;
        db_to_linear(self.antenna_gain_db) * db_to_linear(-mean_loss_db) / noise_w
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3D {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn ground(x: f64, y: f64) -> Self {
        Self { x, y, z: 0.0 }
    }

    pub fn distance(&self, other: &Position3D) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2) + (self.z - other.z).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Los,
    Nlos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossMode {
    #[default]
    Mean,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub distance_m: f64,
    pub elevation_rad: f64,
    pub p_los: f64,
    pub loss_los_db: f64,
    pub loss_nlos_db: f64,
    pub mean_loss_db: f64,
}

pub fn elevation_angle(drone: &Position3D, user: &Position3D) -> Result<f64> {
    if drone.z <= 0.0 {
        return Err(Error::Domain(format!("drone altitude must be positive, got {}", drone.z)));
    }
    let d = drone.distance(user);
    if d == 0.0 {
        return Err(Error::Domain("drone and user coincide".into()));
    }
    Ok((drone.z / d).clamp(-1.0, 1.0).asin())
}

/// LoS probability with the base clamped at zero and the result at one.
pub fn los_probability(theta: f64, env: &Environment) -> f64 {
    let base = (theta.to_degrees() - env.theta_min_deg).max(0.0);
    (env.alpha * base.powf(env.gamma)).min(1.0)
}

/// Standard deviation of the shadowing term, dB.
pub fn shadow_std(theta: f64, env: &Environment, link: Link) -> f64 {
    match link {
        Link::Los => env.k1 * (-env.k2 * theta).exp(),
        Link::Nlos => env.g1 * (-env.g2 * theta).exp(),
    }
}

/// Rician K factor (linear) at elevation `theta`.
pub fn rician_k(theta: f64, env: &Environment) -> f64 {
    let a = db_to_linear(env.k0_db);
    let b = (2.0 / PI) * (db_to_linear(env.k_half_pi_db) / a).ln();
    a * (b * theta).exp()
}

pub fn free_space_loss_db(distance_m: f64, env: &Environment) -> f64 {
    20.0 * (4.0 * PI * env.carrier_hz * distance_m / SPEED_OF_LIGHT).log10()
}

/// One draw of the shadowing term `zeta`, dB.
pub fn sample_shadowing<R: Rng + ?Sized>(theta: f64, env: &Environment, link: Link, rng: &mut R) -> f64 {
    let mean = match link {
        Link::Los => env.mu_los,
        Link::Nlos => env.mu_nlos,
    };
    let sd = shadow_std(theta, env, link);
    if sd == 0.0 {
        return mean;
    }
    Normal::new(mean, sd).expect("finite shadowing parameters").sample(rng)
}

/// One draw of the small-scale power gain with unit mean. `k = 0` is Rayleigh,
/// `k = inf` is the deterministic LoS limit.
pub fn sample_fading<R: Rng + ?Sized>(k: f64, rng: &mut R) -> f64 {
    if k.is_infinite() {
        return 1.0;
    }
    let los = (k / (k + 1.0)).sqrt();
    let scatter = (0.5 / (k + 1.0)).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    (los + scatter * re).powi(2) + (scatter * im).powi(2)
}

/// Link budget between a drone and a ground user.
///
/// Sampled mode draws shadowing and fading independently for the LoS and NLoS
/// hypotheses and then averages them with the LoS probability, same as the
/// mean mode does for the deterministic terms.
pub fn path_loss<R: Rng + ?Sized>(
    drone: &Position3D,
    user: &Position3D,
    env: &Environment,
    mode: LossMode,
    rng: Option<&mut R>,
) -> Result<LinkBudget> {
    let theta = elevation_angle(drone, user)?;
    let distance_m = drone.distance(user);
    let fspl = free_space_loss_db(distance_m, env);
    let p_los = los_probability(theta, env);
    let (loss_los_db, loss_nlos_db) = match mode {
        LossMode::Mean => (fspl + env.mu_los, fspl + env.mu_nlos),
        LossMode::Sampled => {
            let rng = rng.ok_or_else(|| Error::Validation("sampled path loss needs an rng".into()))?;
            let los = fspl
                + sample_shadowing(theta, env, Link::Los, rng)
                + linear_to_db(sample_fading(rician_k(theta, env), rng));
            let nlos = fspl
                + sample_shadowing(theta, env, Link::Nlos, rng)
                + linear_to_db(sample_fading(0.0, rng));
            (los, nlos)
        }
    };
    Ok(LinkBudget {
        distance_m,
        elevation_rad: theta,
        p_los,
        loss_los_db,
        loss_nlos_db,
        mean_loss_db: p_los * loss_los_db + (1.0 - p_los) * loss_nlos_db,
    })
}

/// Mean-mode link budget, which needs no randomness.
pub fn mean_path_loss(drone: &Position3D, user: &Position3D, env: &Environment) -> Result<LinkBudget> {
    path_loss::<rand_chacha::ChaCha8Rng>(drone, user, env, LossMode::Mean, None)
}

/// Achievable rate in bits/s for a given mean loss and transmit power.
pub fn rate(mean_loss_db: f64, power_w: f64, env: &Environment) -> f64 {
    rate_from_sinr(power_w * env.sinr_per_watt(mean_loss_db), env)
}

pub fn rate_from_sinr(sinr: f64, env: &Environment) -> f64 {
    env.bandwidth_hz * sinr.ln_1p() / std::f64::consts::LN_2
}
