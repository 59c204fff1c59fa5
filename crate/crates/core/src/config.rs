//! Simulation and learning parameters.
//!
//! Config files are flat `key = value` documents (TOML syntax, no tables).
//! Every key is optional; absent keys take the desk-profile default. The
//! schema is documented in `configs/README.md`. Two profiles ship with the
//! repository: `configs/paper.cfg` and `configs/desk.cfg`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config schema violation: {0}")]
    Schema(String),
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("malformed override `{0}` (expected key=value)")]
    Override(String),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MobilityMode {
    Fsmc,
    Trace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialPositions {
    /// Uniform over `{0, .., K}`.
    Uniform,
    /// Every vehicle waits at the highway entrance (`p = 0`).
    Origin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initializer {
    Xavier,
    FanIn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectionMode {
    /// Sequential episodes from `reset` with exploration noise.
    Rollout,
    /// Replay buffer regenerated each episode from random states acted on by
    /// the target actor, followed by a block of periodic updates.
    Paper,
}

/// Vehicles that contribute to the stall penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StallScope {
    /// Only vehicles in cells `1..=K`; waiting and departed vehicles add nothing.
    OnHighway,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    // network
    pub n_mbs: usize,
    pub n_vehicles: usize,
    pub n_quality: usize,
    /// Mbps, strictly ascending.
    pub quality_bitrates: Vec<f64>,
    pub chunk_playtime_s: f64,
    pub queue_cap: u32,
    pub buffer_cap: u32,
    pub playback_rate: u32,
    /// Buffer fill at reset; `buffer_cap / 2` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_buffer: Option<u32>,
    /// Largest per-entry push produced by `decode_action`; `queue_cap` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub push_cap: Option<u32>,
    pub initial_positions: InitialPositions,

    // mobility and channel
    pub velocity_kmh: f64,
    pub coverage_m: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transition_prob_override: Option<f64>,
    pub r_max_mbps: f64,
    pub mobility_mode: MobilityMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_path: Option<String>,

    // reward
    pub eps_quality: f64,
    pub zeta_drop: f64,
    pub eta_drop: f64,
    pub nu_stall: f64,
    pub stall_scope: StallScope,
    /// Parsed for compatibility with published parameter tables; unused.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub buffer_consumption: Option<f64>,

    // learning
    pub discount: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub soft_tau: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub hidden_layers: Vec<usize>,
    pub initializer: Initializer,
    pub update_period: usize,
    /// Updates start once the replay buffer holds this many transitions.
    pub warmup: usize,
    pub collection_mode: CollectionMode,
    /// Paper-mode phase 1: number of minibatches generated per episode.
    pub phase1_minibatches: usize,
    /// Paper-mode phase 1: random states per minibatch.
    pub phase1_states: usize,
    pub episode_len: usize,
    pub n_episodes: usize,
    pub seed: u64,
    pub exploration_sigma0: f64,
    pub exploration_decay: f64,

    #[serde(skip)]
    derived: Derived,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Derived {
    rho: f64,
    chunk_sizes: Vec<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Probability that a vehicle crosses into the next cell during a one-second slot.
pub fn resolve_rho(velocity_kmh: f64, coverage_m: f64) -> Result<f64, ConfigError> {
    if !(velocity_kmh > 0.0 && velocity_kmh.is_finite()) {
        return Err(invalid("velocity_kmh", "must be positive and finite"));
    }
    if !(coverage_m > 0.0 && coverage_m.is_finite()) {
        return Err(invalid("coverage_m", "must be positive and finite"));
    }
    Ok((1000.0 * velocity_kmh / (3600.0 * coverage_m)).min(1.0))
}

impl SimConfig {
    /// Desk-scale profile: 4 mBSs, 8 vehicles, 3 quality levels.
    pub fn desk() -> Self {
        let mut cfg = Self {
            n_mbs: 4,
            n_vehicles: 8,
            n_quality: 3,
            quality_bitrates: vec![1.0, 4.0, 16.0],
            chunk_playtime_s: 1.0,
            queue_cap: 60,
            buffer_cap: 24,
            playback_rate: 4,
            initial_buffer: None,
            push_cap: Some(8),
            initial_positions: InitialPositions::Uniform,
            velocity_kmh: 70.0,
            coverage_m: 500.0,
            transition_prob_override: None,
            r_max_mbps: 32.0,
            mobility_mode: MobilityMode::Fsmc,
            trace_path: None,
            eps_quality: 1.0,
            zeta_drop: 0.05,
            eta_drop: 0.05,
            nu_stall: 10.0,
            stall_scope: StallScope::OnHighway,
            buffer_consumption: None,
            discount: 0.9,
            lr_actor: 1e-4,
            lr_critic: 1e-3,
            soft_tau: 1e-2,
            batch_size: 32,
            replay_capacity: 100_000,
            hidden_layers: vec![32, 32],
            initializer: Initializer::Xavier,
            update_period: 5,
            warmup: 1000,
            collection_mode: CollectionMode::Rollout,
            phase1_minibatches: 4,
            phase1_states: 128,
            episode_len: 200,
            n_episodes: 3000,
            seed: 7,
            exploration_sigma0: 0.2,
            exploration_decay: 0.999,
            derived: Derived::default(),
        };
        cfg.finalize().expect("desk profile is valid");
        cfg
    }

    /// Published full-scale parameters (20 mBSs, 200 vehicles, 5 quality levels).
    pub fn paper() -> Self {
        let mut cfg = Self {
            n_mbs: 20,
            n_vehicles: 200,
            n_quality: 5,
            quality_bitrates: vec![1.0, 2.5, 5.0, 10.0, 25.0],
            queue_cap: 2400,
            buffer_cap: 240,
            playback_rate: 40,
            velocity_kmh: 80.0,
            coverage_m: 150.0,
            r_max_mbps: 1000.0,
            eta_drop: 1.0,
            nu_stall: 1.0,
            stall_scope: StallScope::All,
            buffer_consumption: Some(2.0),
            push_cap: Some(2400),
            discount: 0.99,
            lr_actor: 3e-4,
            lr_critic: 3e-4,
            soft_tau: 1e-2,
            update_period: 1,
            batch_size: 1000,
            hidden_layers: vec![500, 400, 300, 200],
            n_episodes: 500_000,
            ..Self::desk()
        };
        cfg.finalize().expect("paper profile is valid");
        cfg
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Self::from_str_with_overrides(text, &[])
    }

    /// Parses `text`, applies `key=value` overrides on top, and validates.
    pub fn from_str_with_overrides(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| ConfigError::Schema(e.message().to_string()))?;
        for item in overrides {
            let (key, value) = parse_override(item)?;
            table.insert(key, value);
        }
        let mut cfg: SimConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Schema(e.message().to_string()))?;
        cfg.finalize()?;
        Ok(cfg)
    }

    pub fn apply_overrides(&self, overrides: &[String]) -> Result<Self, ConfigError> {
        Self::from_str_with_overrides(&self.to_toml_string(), overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }

    /// Validates a hand-edited config and recomputes derived values.
    pub fn finalized(mut self) -> Result<Self, ConfigError> {
        self.finalize()?;
        Ok(self)
    }

    fn finalize(&mut self) -> Result<(), ConfigError> {
        self.validate()?;
        let rho = match self.transition_prob_override {
            Some(p) => p,
            None => resolve_rho(self.velocity_kmh, self.coverage_m)?,
        };
        self.derived = Derived {
            rho,
            chunk_sizes: self
                .quality_bitrates
                .iter()
                .map(|q| q * self.chunk_playtime_s)
                .collect(),
        };
        Ok(())
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.n_mbs == 0 {
            return Err(invalid("n_mbs", "must be at least 1"));
        }
        if self.n_vehicles == 0 {
            return Err(invalid("n_vehicles", "must be at least 1"));
        }
        if self.n_quality == 0 {
            return Err(invalid("n_quality", "must be at least 1"));
        }
        if self.quality_bitrates.len() != self.n_quality {
            return Err(invalid(
                "quality_bitrates",
                format!("expected {} entries, got {}", self.n_quality, self.quality_bitrates.len()),
            ));
        }
        if self.quality_bitrates.iter().any(|q| !(*q > 0.0 && q.is_finite())) {
            return Err(invalid("quality_bitrates", "every bitrate must be positive and finite"));
        }
        if self.quality_bitrates.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("quality_bitrates", "must be strictly increasing"));
        }
        if !(self.chunk_playtime_s > 0.0 && self.chunk_playtime_s.is_finite()) {
            return Err(invalid("chunk_playtime_s", "must be positive"));
        }
        if self.queue_cap == 0 {
            return Err(invalid("queue_cap", "must be at least 1"));
        }
        if self.buffer_cap == 0 {
            return Err(invalid("buffer_cap", "must be at least 1"));
        }
        if self.playback_rate == 0 {
            return Err(invalid("playback_rate", "must be at least 1"));
        }
        if self.buffer_cap < self.playback_rate {
            return Err(invalid("buffer_cap", "must be at least playback_rate"));
        }
        if let Some(b) = self.initial_buffer {
            if b > self.buffer_cap {
                return Err(invalid("initial_buffer", "exceeds buffer_cap"));
            }
        }
        if let Some(cap) = self.push_cap {
            if cap == 0 || cap > self.queue_cap {
                return Err(invalid("push_cap", "must lie in 1..=queue_cap"));
            }
        }
        if let Some(p) = self.transition_prob_override {
            if !(p > 0.0 && p <= 1.0) {
                return Err(invalid("transition_prob_override", "must lie in (0, 1]"));
            }
        } else {
            resolve_rho(self.velocity_kmh, self.coverage_m)?;
        }
        if !(self.r_max_mbps > 0.0 && self.r_max_mbps.is_finite()) {
            return Err(invalid("r_max_mbps", "must be positive and finite"));
        }
        if self.mobility_mode == MobilityMode::Trace && self.trace_path.is_none() {
            return Err(invalid("trace_path", "required when mobility_mode = \"trace\""));
        }
        if !(self.eps_quality > 0.0 && self.eps_quality.is_finite()) {
            return Err(invalid("eps_quality", "must be positive and finite"));
        }
        if !(self.zeta_drop > 0.0 && self.zeta_drop.is_finite()) {
            return Err(invalid("zeta_drop", "must be positive and finite"));
        }
        if !self.eta_drop.is_finite() {
            return Err(invalid("eta_drop", "must be finite"));
        }
        if !(self.nu_stall > 0.0 && self.nu_stall.is_finite()) {
            return Err(invalid("nu_stall", "must be positive and finite"));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(invalid("discount", "must lie in [0, 1]"));
        }
        if !(self.soft_tau > 0.0 && self.soft_tau < 1.0) {
            return Err(invalid("soft_tau", "must lie in (0, 1)"));
        }
        if !(self.lr_actor > 0.0 && self.lr_actor.is_finite()) {
            return Err(invalid("lr_actor", "must be positive"));
        }
        if !(self.lr_critic > 0.0 && self.lr_critic.is_finite()) {
            return Err(invalid("lr_critic", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be at least 1"));
        }
        if self.replay_capacity < self.batch_size {
            return Err(invalid("replay_capacity", "must be at least batch_size"));
        }
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return Err(invalid("hidden_layers", "needs at least one non-empty layer"));
        }
        if self.update_period == 0 {
            return Err(invalid("update_period", "must be at least 1"));
        }
        if self.phase1_minibatches == 0 || self.phase1_states == 0 {
            return Err(invalid("phase1_states", "phase-1 sizes must be positive"));
        }
        if self.episode_len == 0 {
            return Err(invalid("episode_len", "must be at least 1"));
        }
        if !(self.exploration_sigma0 >= 0.0 && self.exploration_sigma0.is_finite()) {
            return Err(invalid("exploration_sigma0", "must be non-negative"));
        }
        if !(self.exploration_decay > 0.0 && self.exploration_decay <= 1.0) {
            return Err(invalid("exploration_decay", "must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn rho(&self) -> f64 {
        self.derived.rho
    }

    /// Chunk size per quality level in Mb (bitrate times playtime).
    pub fn chunk_sizes(&self) -> &[f64] {
        &self.derived.chunk_sizes
    }

    pub fn initial_buffer(&self) -> u32 {
        self.initial_buffer.unwrap_or(self.buffer_cap / 2)
    }

    pub fn push_cap(&self) -> u32 {
        self.push_cap.unwrap_or(self.queue_cap)
    }

    pub fn top_bitrate(&self) -> f64 {
        *self.quality_bitrates.last().expect("validated non-empty")
    }

    /// Entries in the queue and action tensors.
    pub fn action_dim(&self) -> usize {
        self.n_mbs * self.n_vehicles * self.n_quality
    }

    pub fn state_dim(&self) -> usize {
        self.action_dim() + 4 * self.n_vehicles
    }

    /// Exploration noise scale at the start of `episode` (0-based).
    pub fn exploration_sigma(&self, episode: usize) -> f64 {
        self.exploration_sigma0 * self.exploration_decay.powi(episode as i32)
    }
}

impl fmt::Display for SimConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_toml_string())
    }
}

fn parse_override(item: &str) -> Result<(String, toml::Value), ConfigError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(item.to_string()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::Override(item.to_string()));
    }
    let raw = raw.trim();
    // Bare words (enum variants, paths) fall back to strings.
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

pub fn load_config(path: impl AsRef<Path>) -> Result<SimConfig, ConfigError> {
    load_config_with_overrides(path, &[])
}

pub fn load_config_with_overrides(
    path: impl AsRef<Path>,
    overrides: &[String],
) -> Result<SimConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    SimConfig::from_str_with_overrides(&text, overrides)
}
