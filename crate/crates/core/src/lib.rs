//! Simulator of infrastructure-assisted mmWave vehicular video streaming and
//! a DDPG agent that learns the MBS chunk-pushing policy.

#![allow(clippy::needless_range_loop)]

pub mod agent;
pub mod baselines;
pub mod config;
pub mod env;
pub mod experiment;
pub mod metrics;
pub mod mobility;
pub mod neural;
pub mod oracle;
pub mod par;
pub mod plot;

pub use config::{load_config, SimConfig};
pub use env::{Env, NetworkState, PushAction, StepOutcome};
