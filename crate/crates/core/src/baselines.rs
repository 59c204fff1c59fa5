//! Comparison policies: random pushing (Comp1) and a fixed-quality DDPG (Comp2).

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::config::SimConfig;
use crate::env::{self, ChunkTensor, NetworkState, PushAction, StepOutcome};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PolicyError {
    #[error("push bound must be in (0, c̄], got {0}")]
    Bound(u32),
    #[error("unknown policy `{0}`")]
    Unknown(String),
    #[error("quality level {0} unavailable")]
    Quality(usize),
}

/// Uniform random pushes on every active entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comp1Policy {
    pub bound: u32,
}

impl Comp1Policy {
    pub fn new(bound: u32, cfg: &SimConfig) -> Result<Self, PolicyError> {
        if bound == 0 || bound > cfg.queue_cap {
            return Err(PolicyError::Bound(bound));
        }
        Ok(Self { bound })
    }

    /// Bound as a fraction of the queue capacity (rounded).
    pub fn from_fraction(fraction: f64, cfg: &SimConfig) -> Result<Self, PolicyError> {
        Self::new((fraction * f64::from(cfg.queue_cap)).round() as u32, cfg)
    }

    pub fn action<R: Rng + ?Sized>(&self, state: &NetworkState, cfg: &SimConfig, rng: &mut R) -> PushAction {
        comp1_action(state, self.bound, cfg, rng)
    }
}

/// Each active `(j, i, q)` drawn uniformly from `0..=bound`; inactive entries zero.
pub fn comp1_action<R: Rng + ?Sized>(state: &NetworkState, bound: u32, cfg: &SimConfig, rng: &mut R) -> PushAction {
    let (k, n, l) = (cfg.n_mbs, cfg.n_vehicles, cfg.n_quality);
    let mut t = ChunkTensor::zeros(k, n, l);
    for j in 0..k {
        for i in 0..n {
            if env::is_active(&state.positions, j, i) {
                for q in 0..l {
                    t.set(j, i, q, rng.random_range(0..=bound));
                }
            }
        }
    }
    PushAction { l: t }
}

/// Quality tier of the fixed-quality baseline. Tiers name the lowest, middle
/// and highest available level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comp2Tier {
    Q1,
    Q3,
    Q5,
}

impl Comp2Tier {
    pub fn level(self, n_quality: usize) -> usize {
        match self {
            Comp2Tier::Q1 => 0,
            Comp2Tier::Q3 => (n_quality - 1) / 2,
            Comp2Tier::Q5 => n_quality - 1,
        }
    }
}

/// Comp2 reward on quality-collapsed queues:
/// `Σ_i (b_i − F) − Σ_j (c̃_j + l_j − c̄)` where `c̃_j` and `l_j` total the
/// residual `max(c − w, 0)` and the pushes held at mBS `j`. The buffer sum runs
/// over vehicles on the highway; all values are taken before the update.
pub fn comp2_reward(state: &NetworkState, action: &PushAction, outcome: &StepOutcome, cfg: &SimConfig) -> f64 {
    let (k, n) = (cfg.n_mbs, cfg.n_vehicles);
    let f = f64::from(cfg.playback_rate);
    let buffers: f64 = (0..n)
        .filter(|&i| state.positions.on_highway(i, k))
        .map(|i| f64::from(state.vehicle_side.buffers[i]) - f)
        .sum();
    let mut slack = 0.0;
    for j in 0..k {
        let mut held = 0u32;
        for i in 0..n {
            let c = state.queues.row(j, i);
            let w = outcome.delivery.w.row(j, i);
            let residual: u32 = c.iter().zip(w).map(|(&c, &w)| c.saturating_sub(w)).sum();
            held += residual + action.l.row(j, i).iter().sum::<u32>();
        }
        slack += f64::from(held) - f64::from(cfg.queue_cap);
    }
    buffers - slack
}

/// Policies selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyKind {
    Ddpg,
    Comp1 { fraction: f64 },
    Comp2(Comp2Tier),
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::Ddpg,
        PolicyKind::Comp1 { fraction: 0.5 },
        PolicyKind::Comp1 { fraction: 1.0 },
        PolicyKind::Comp2(Comp2Tier::Q1),
        PolicyKind::Comp2(Comp2Tier::Q3),
        PolicyKind::Comp2(Comp2Tier::Q5),
    ];

    pub fn is_learned(self) -> bool {
        !matches!(self, PolicyKind::Comp1 { .. })
    }

    /// Quality lane the policy is restricted to, if any.
    pub fn lane(self, cfg: &SimConfig) -> Option<usize> {
        match self {
            PolicyKind::Comp2(t) => Some(t.level(cfg.n_quality)),
            _ => None,
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::Ddpg => write!(f, "ddpg"),
            PolicyKind::Comp1 { fraction } => write!(f, "comp1-{fraction:.1}"),
            PolicyKind::Comp2(Comp2Tier::Q1) => write!(f, "comp2-q1"),
            PolicyKind::Comp2(Comp2Tier::Q3) => write!(f, "comp2-q3"),
            PolicyKind::Comp2(Comp2Tier::Q5) => write!(f, "comp2-q5"),
        }
    }
}

impl FromStr for PolicyKind {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ddpg" => Ok(PolicyKind::Ddpg),
            "comp1-0.5" => Ok(PolicyKind::Comp1 { fraction: 0.5 }),
            "comp1-1.0" => Ok(PolicyKind::Comp1 { fraction: 1.0 }),
            "comp2-q1" => Ok(PolicyKind::Comp2(Comp2Tier::Q1)),
            "comp2-q3" => Ok(PolicyKind::Comp2(Comp2Tier::Q3)),
            "comp2-q5" => Ok(PolicyKind::Comp2(Comp2Tier::Q5)),
            other => Err(PolicyError::Unknown(other.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Env;
    use crate::mobility::PositionVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_bound_is_rejected() {
        let cfg = SimConfig::desk();
        assert_eq!(Comp1Policy::new(0, &cfg), Err(PolicyError::Bound(0)));
        assert_eq!(Comp1Policy::new(61, &cfg), Err(PolicyError::Bound(61)));
        assert_eq!(Comp1Policy::from_fraction(0.5, &cfg).unwrap().bound, 30);
    }

    #[test]
    fn comp1_mean_and_mask() {
        let cfg = SimConfig::desk();
        let mut env = Env::new(&cfg, 3).unwrap();
        let mut state = env.state().clone();
        state.positions = PositionVector(vec![1, 0, 2, 4, 5, 3, 1, 2]);
        env.set_state(state.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (mut sum, mut count) = (0u64, 0u64);
        for _ in 0..(100_000 / 20) {
            let a = comp1_action(&state, 60, &cfg, &mut rng);
            for j in 0..cfg.n_mbs {
                for i in 0..cfg.n_vehicles {
                    let row = a.l.row(j, i);
                    if env::is_active(&state.positions, j, i) {
                        sum += row.iter().map(|&x| u64::from(x)).sum::<u64>();
                        count += row.len() as u64;
                    } else {
                        assert!(row.iter().all(|&x| x == 0));
                    }
                }
            }
        }
        assert!(count >= 100_000);
        let mean = sum as f64 / count as f64;
        assert!((mean - 30.0).abs() < 0.2, "{mean}");
    }

    #[test]
    fn policy_names_round_trip() {
        for p in PolicyKind::ALL {
            assert_eq!(p.to_string().parse::<PolicyKind>().unwrap(), p);
        }
        assert!("comp3".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn tiers_map_to_levels() {
        assert_eq!(Comp2Tier::Q3.level(5), 2);
        assert_eq!(Comp2Tier::Q5.level(5), 4);
        assert_eq!(Comp2Tier::Q3.level(3), 1);
        assert_eq!(Comp2Tier::Q1.level(3), 0);
    }

    fn comp2_setup(buffers: Vec<u32>, queue: u32, push: u32) -> f64 {
        let mut cfg = SimConfig::desk();
        cfg.n_mbs = 1;
        cfg.n_vehicles = buffers.len();
        cfg.r_max_mbps = 1e-9;
        let cfg = cfg.finalized().unwrap();
        let mut env = Env::new(&cfg, 0).unwrap();
        let mut state = env.state().clone();
        state.positions = PositionVector(vec![1; buffers.len()]);
        state.vehicle_side.buffers = buffers;
        state.queues.set(0, 0, 2, queue);
        env.set_state(state.clone());
        let mut action = PushAction::zeros(&cfg);
        action.l.set(0, 0, 2, push);
        let outcome = env.step(&action).unwrap();
        comp2_reward(&state, &action, &outcome, &cfg)
    }

    #[test]
    fn comp2_reward_examples() {
        // buffers at F, queue refilled exactly to c̄
        assert_eq!(comp2_setup(vec![4, 4], 50, 10), 0.0);
        // empty queue: the slack term pays back c̄
        assert_eq!(comp2_setup(vec![9, 4], 0, 0), 65.0);
        let rewards: Vec<f64> = (10..15).map(|l| comp2_setup(vec![4], 50, l)).collect();
        assert!(rewards.windows(2).all(|w| w[1] < w[0]), "{rewards:?}");
    }
}
