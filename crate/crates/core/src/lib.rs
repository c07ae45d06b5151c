//! Bayesian coalition formation among drone base stations whose available
//! transmit power is only known to others through a finite set of candidate
//! distributions ("types").
//!
//! The crate is organised bottom-up:
//!
//! - [`propagation`]: air-to-ground path loss, LoS probability, SINR and rate.
//! - [`scenario`] and [`kmeans`]: network instances, drone placement and the
//!   non-cooperative baseline.
//! - [`allocation`] and [`matching`]: channel/user matching and water-filling
//!   inside one coalition.
//! - [`game`]: coalition structures, beliefs, expected payoffs, Nash
//!   stability and Bayesian-core checks.
//! - [`belief`]: MLE + KL-divergence type classification and frequency beliefs.
//! - [`dynamics`]: best-reply coalition formation and the repeated game with
//!   belief learning.
//! - [`markov`]: the Markov chain induced by best-reply dynamics.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise.

pub mod allocation;
pub mod belief;
pub mod dynamics;
pub mod error;
pub mod game;
pub mod kmeans;
pub mod markov;
pub mod matching;
pub mod par;
pub mod propagation;
pub mod scenario;
pub mod seed;

pub use error::{Error, Result};
pub use game::{BeliefState, CoalitionStructure, PayoffEngine};
pub use propagation::Environment;
pub use scenario::{Network, Scenario, SimulationSetting, TypeSpec};

/// Drone index, `0..D`.
pub type DroneId = usize;
/// User index, `0..N`.
pub type UserId = usize;
/// Channel index, `0..Q`.
pub type ChannelId = usize;
