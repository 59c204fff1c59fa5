//! DDPG actor-critic with replay, target networks and Gaussian exploration.

use std::collections::VecDeque;
use std::io::Read;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::baselines::comp2_reward;
use crate::config::{CollectionMode, SimConfig};
use crate::env::{self, derive_seed, encode_state, Env, EnvError};
use crate::metrics::{EpisodeMetrics, EpisodeTotals};
use crate::neural::{adam_step, soft_blend, AdamState, DenseNet, NeuralError, OutputHead};
use crate::par::{self, Execution};

const MAGIC: &[u8; 4] = b"VSCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const AGENT_STREAM: u64 = 0xA6E7;
/// Consecutive failed updates tolerated before training gives up.
const MAX_NON_FINITE: usize = 50;
/// Minibatch gradients are summed over this many fixed chunks.
pub const GRAD_CHUNKS: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("empty minibatch")]
    EmptyBatch,
    #[error("feature dimension {got}, expected {expected}")]
    Dim { expected: usize, got: usize },
    #[error("non-finite loss or gradient; update skipped")]
    NonFinite,
    #[error("training diverged: {0} consecutive non-finite updates")]
    Diverged(usize),
    #[error("checkpoint version {found}, expected {CHECKPOINT_VERSION}")]
    Version { found: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
}

/// Bounded FIFO of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }

    pub fn get(&self, idx: usize) -> Option<&Transition> {
        self.items.get(idx)
    }

    /// Distinct indices, at most `n` (fewer if the buffer is smaller).
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        rand::seq::index::sample(rng, self.items.len(), n.min(self.items.len())).into_vec()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        self.sample_indices(n, rng).into_iter().map(|i| &self.items[i]).collect()
    }
}

/// Anything that can score state-action pairs and differentiate with respect
/// to the action. Implemented by the critic network and by test doubles.
pub trait ActionCritic: Sync {
    /// Q per row and ∂Q/∂a per row.
    fn q_and_action_grad(&self, s: ArrayView2<f64>, a: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>), NeuralError>;
}

fn concat(s: ArrayView2<f64>, a: ArrayView2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[s, a]).expect("same row count")
}

impl ActionCritic for DenseNet {
    fn q_and_action_grad(&self, s: ArrayView2<f64>, a: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>), NeuralError> {
        let cache = self.forward(concat(s, a).view())?;
        let q = cache.output().column(0).to_owned();
        let ones = Array2::ones((s.nrows(), 1));
        let (_, dx) = self.backward(&cache, ones.view())?;
        Ok((q, dx.slice(s![.., s.ncols()..]).to_owned()))
    }
}

/// Which actor produced an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActorRole {
    Online,
    Target,
}

/// Instrumentation hooks for training.
pub trait Observer {
    /// A collection step chose `greedy` (before noise) for `features` using `role`.
    fn collected(&mut self, _role: ActorRole, _features: &[f64], _greedy: &[f64]) {}
    fn episode_end(&mut self, _metrics: &EpisodeMetrics) {}
}

pub struct NoObserver;

impl Observer for NoObserver {}

/// Reward the learner optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardKind {
    Composite,
    Comp2,
}

#[derive(Debug, Clone)]
pub struct DdpgAgent {
    pub actor: DenseNet,
    pub critic: DenseNet,
    pub target_actor: DenseNet,
    pub target_critic: DenseNet,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
    pub discount: f64,
    pub tau: f64,
    pub sigma0: f64,
    pub decay: f64,
    /// Episodes completed; drives the noise schedule.
    pub episode: u64,
    pub updates: u64,
    pub exec: Execution,
    rng: ChaCha8Rng,
}

impl DdpgAgent {
    pub fn new(cfg: &SimConfig, seed: u64) -> Result<Self, AgentError> {
        let (sd, ad) = (cfg.state_dim(), cfg.action_dim());
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, AGENT_STREAM));
        let mut actor_dims = vec![sd];
        actor_dims.extend(&cfg.hidden_layers);
        actor_dims.push(ad);
        let mut critic_dims = vec![sd + ad];
        critic_dims.extend(&cfg.hidden_layers);
        critic_dims.push(1);
        let actor = DenseNet::initialized(&actor_dims, OutputHead::Sigmoid, cfg.initializer, &mut rng)?;
        let critic = DenseNet::initialized(&critic_dims, OutputHead::Identity, cfg.initializer, &mut rng)?;
        Ok(Self {
            actor_opt: AdamState::new(&actor.params, cfg.lr_actor),
            critic_opt: AdamState::new(&critic.params, cfg.lr_critic),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            discount: cfg.discount,
            tau: cfg.soft_tau,
            sigma0: cfg.exploration_sigma0,
            decay: cfg.exploration_decay,
            episode: 0,
            updates: 0,
            exec: Execution::default(),
            rng,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.actor.output_dim()
    }

    /// Current exploration scale.
    pub fn sigma(&self) -> f64 {
        self.sigma0 * self.decay.powi(self.episode.min(i32::MAX as u64) as i32)
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// `μ(s)`, plus clamped Gaussian noise when exploring.
    pub fn act<R: Rng + ?Sized>(&self, features: &[f64], explore: bool, rng: &mut R) -> Result<Vec<f64>, AgentError> {
        let greedy = greedy_action(&self.actor, features)?;
        Ok(if explore { add_noise(greedy, self.sigma(), rng) } else { greedy })
    }

    fn act_own(&mut self, role: ActorRole, features: &[f64], observer: &mut dyn Observer) -> Result<Vec<f64>, AgentError> {
        let net = match role {
            ActorRole::Online => &self.actor,
            ActorRole::Target => &self.target_actor,
        };
        let greedy = greedy_action(net, features)?;
        observer.collected(role, features, &greedy);
        let sigma = self.sigma();
        Ok(add_noise(greedy, sigma, &mut self.rng))
    }

    /// One critic step on the minibatch; returns the loss before the step.
    pub fn critic_update(&mut self, batch: &[&Transition]) -> Result<f64, AgentError> {
        if batch.is_empty() {
            return Err(AgentError::EmptyBatch);
        }
        let n = batch.len() as f64;
        let parts = par::partition(batch.len(), GRAD_CHUNKS);
        let (critic, t_actor, t_critic, discount) = (&self.critic, &self.target_actor, &self.target_critic, self.discount);
        let results = par::map_slice(&parts, self.exec, |range| -> Result<_, NeuralError> {
            let chunk = &batch[range.clone()];
            let s = stack(chunk, |t| &t.s);
            let a = stack(chunk, |t| &t.a);
            let s2 = stack(chunk, |t| &t.s_next);
            let a2 = t_actor.predict(s2.view())?;
            let q2 = t_critic.predict(concat(s2.view(), a2.view()).view())?;
            let cache = critic.forward(concat(s.view(), a.view()).view())?;
            let mut upstream = Array2::zeros((chunk.len(), 1));
            let mut sse = 0.0;
            for (r, t) in chunk.iter().enumerate() {
                let y = t.r + discount * q2[(r, 0)];
                let diff = cache.output()[(r, 0)] - y;
                sse += diff * diff;
                upstream[(r, 0)] = 2.0 * diff / n;
            }
            let (grads, _) = critic.backward(&cache, upstream.view())?;
            Ok((grads, sse))
        });
        let mut iter = results.into_iter();
        let (mut grads, mut sse) = iter.next().expect("at least one chunk")?;
        for r in iter {
            let (g, e) = r?;
            grads.add_assign(&g);
            sse += e;
        }
        let loss = sse / n;
        if !loss.is_finite() {
            return Err(AgentError::NonFinite);
        }
        adam_step(&mut self.critic_opt, &mut self.critic.params, &grads).map_err(nonfinite)?;
        Ok(loss)
    }

    /// One actor ascent step through the online critic; returns mean Q before the step.
    pub fn actor_update(&mut self, batch: &[&Transition]) -> Result<f64, AgentError> {
        if batch.is_empty() {
            return Err(AgentError::EmptyBatch);
        }
        let states = stack(batch, |t| &t.s);
        actor_step(&mut self.actor, &mut self.actor_opt, &self.critic, states.view(), self.exec)
    }

    /// Actor ascent against an arbitrary critic (e.g. a frozen test double).
    pub fn actor_update_with<C: ActionCritic>(&mut self, critic: &C, states: ArrayView2<f64>) -> Result<f64, AgentError> {
        actor_step(&mut self.actor, &mut self.actor_opt, critic, states, self.exec)
    }

    pub fn soft_update(&mut self) -> Result<(), AgentError> {
        soft_blend(&mut self.target_actor.params, &self.actor.params, self.tau)?;
        soft_blend(&mut self.target_critic.params, &self.critic.params, self.tau)?;
        Ok(())
    }

    /// Critic step, actor step, then both target blends. Returns (loss, objective).
    pub fn update_cycle(&mut self, batch: &[&Transition]) -> Result<(f64, f64), AgentError> {
        let loss = self.critic_update(batch)?;
        let objective = self.actor_update(batch)?;
        self.soft_update()?;
        self.updates += 1;
        Ok((loss, objective))
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<(), AgentError> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self, AgentError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Layout (little endian): magic `VSCK`, u32 version, f64 discount, tau,
    /// sigma0, decay, u64 episode, updates, rng (32-byte seed, u64 stream,
    /// u128 word position), actor, critic, target actor, target critic
    /// (each: u8 head, u32 layer count, u32 dims, f64 params), actor and
    /// critic Adam states (u64 step, f64 lr, beta1, beta2, eps, f64 moments),
    /// then the SHA-256 of everything before it.
    pub fn to_bytes(&self) -> Result<Vec<u8>, AgentError> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        for x in [self.discount, self.tau, self.sigma0, self.decay] {
            w.write_f64::<LittleEndian>(x)?;
        }
        w.write_u64::<LittleEndian>(self.episode)?;
        w.write_u64::<LittleEndian>(self.updates)?;
        w.extend_from_slice(&self.rng.get_seed());
        w.write_u64::<LittleEndian>(self.rng.get_stream())?;
        w.write_u128::<LittleEndian>(self.rng.get_word_pos())?;
        for net in [&self.actor, &self.critic, &self.target_actor, &self.target_critic] {
            net.write_to(&mut w)?;
        }
        self.actor_opt.write_to(&mut w)?;
        self.critic_opt.write_to(&mut w)?;
        let digest = Sha256::digest(&w);
        w.extend_from_slice(&digest);
        Ok(w)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AgentError> {
        if bytes.len() < 8 + 32 || &bytes[..4] != MAGIC {
            return Err(AgentError::Corrupt("missing header".into()));
        }
        let found = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if found != CHECKPOINT_VERSION {
            return Err(AgentError::Version { found });
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(AgentError::Corrupt("checksum mismatch".into()));
        }
        let mut r = &body[8..];
        Self::read_body(&mut r).map_err(|e| match e {
            AgentError::Io(e) => AgentError::Corrupt(e.to_string()),
            AgentError::Neural(e) => AgentError::Corrupt(e.to_string()),
            other => other,
        })
        .and_then(|agent| {
            if r.is_empty() {
                Ok(agent)
            } else {
                Err(AgentError::Corrupt("trailing bytes".into()))
            }
        })
    }

    fn read_body(r: &mut &[u8]) -> Result<Self, AgentError> {
        let discount = r.read_f64::<LittleEndian>()?;
        let tau = r.read_f64::<LittleEndian>()?;
        let sigma0 = r.read_f64::<LittleEndian>()?;
        let decay = r.read_f64::<LittleEndian>()?;
        let episode = r.read_u64::<LittleEndian>()?;
        let updates = r.read_u64::<LittleEndian>()?;
        let mut seed = [0u8; 32];
        r.read_exact(&mut seed)?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(r.read_u64::<LittleEndian>()?);
        rng.set_word_pos(r.read_u128::<LittleEndian>()?);
        let actor = DenseNet::read_from(r)?;
        let critic = DenseNet::read_from(r)?;
        let target_actor = DenseNet::read_from(r)?;
        let target_critic = DenseNet::read_from(r)?;
        if actor.dims() != target_actor.dims() || critic.dims() != target_critic.dims() {
            return Err(AgentError::Corrupt("target shapes differ from online shapes".into()));
        }
        let actor_opt = AdamState::read_from(r, &actor.params)?;
        let critic_opt = AdamState::read_from(r, &critic.params)?;
        Ok(Self {
            actor,
            critic,
            target_actor,
            target_critic,
            actor_opt,
            critic_opt,
            discount,
            tau,
            sigma0,
            decay,
            episode,
            updates,
            exec: Execution::default(),
            rng,
        })
    }
}

fn nonfinite(e: NeuralError) -> AgentError {
    match e {
        NeuralError::NonFinite => AgentError::NonFinite,
        other => AgentError::Neural(other),
    }
}

fn stack<'a>(batch: &[&'a Transition], field: impl Fn(&'a Transition) -> &'a Vec<f64>) -> Array2<f64> {
    let cols = field(batch[0]).len();
    let mut out = Array2::zeros((batch.len(), cols));
    for (mut row, t) in out.rows_mut().into_iter().zip(batch) {
        row.assign(&ndarray::ArrayView1::from(field(t).as_slice()));
    }
    out
}

fn greedy_action(actor: &DenseNet, features: &[f64]) -> Result<Vec<f64>, AgentError> {
    if features.len() != actor.input_dim() {
        return Err(AgentError::Dim {
            expected: actor.input_dim(),
            got: features.len(),
        });
    }
    let x = ArrayView2::from_shape((1, features.len()), features).expect("row vector");
    Ok(actor.predict(x)?.into_raw_vec_and_offset().0)
}

fn add_noise<R: Rng + ?Sized>(mut action: Vec<f64>, sigma: f64, rng: &mut R) -> Vec<f64> {
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("positive sigma");
        for a in &mut action {
            *a = (*a + normal.sample(rng)).clamp(0.0, 1.0);
        }
    }
    action
}

fn actor_step<C: ActionCritic>(
    actor: &mut DenseNet,
    opt: &mut AdamState,
    critic: &C,
    states: ArrayView2<f64>,
    exec: Execution,
) -> Result<f64, AgentError> {
    let rows = states.nrows();
    if rows == 0 {
        return Err(AgentError::EmptyBatch);
    }
    let n = rows as f64;
    let parts = par::partition(rows, GRAD_CHUNKS);
    let net = &*actor;
    let results = par::map_slice(&parts, exec, |range| -> Result<_, NeuralError> {
        let s = states.slice(s![range.clone(), ..]);
        let cache = net.forward(s)?;
        let (q, dq_da) = critic.q_and_action_grad(s, cache.output().view())?;
        // descend on −Q/n
        let upstream = dq_da.mapv(|g| -g / n);
        let (grads, _) = net.backward(&cache, upstream.view())?;
        Ok((grads, q.sum()))
    });
    let mut iter = results.into_iter();
    let (mut grads, mut q_sum) = iter.next().expect("at least one chunk")?;
    for r in iter {
        let (g, q) = r?;
        grads.add_assign(&g);
        q_sum += q;
    }
    adam_step(opt, &mut actor.params, &grads).map_err(nonfinite)?;
    Ok(q_sum / n)
}

/// Training run state: the agent, its replay buffer and the per-episode log.
pub struct Trainer<'a> {
    pub agent: DdpgAgent,
    pub replay: ReplayBuffer,
    cfg: SimConfig,
    reward: RewardKind,
    lane: Option<usize>,
    seed: u64,
    observer: Box<dyn Observer + 'a>,
    failures: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &SimConfig, seed: u64, reward: RewardKind, lane: Option<usize>) -> Result<Self, AgentError> {
        Ok(Self {
            agent: DdpgAgent::new(cfg, seed)?,
            replay: ReplayBuffer::new(cfg.replay_capacity),
            cfg: cfg.clone(),
            reward,
            lane,
            seed,
            observer: Box::new(NoObserver),
            failures: 0,
        })
    }

    pub fn with_observer(mut self, observer: impl Observer + 'a) -> Self {
        self.observer = Box::new(observer);
        self
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    fn record(&mut self, result: Result<(f64, f64), AgentError>, stats: &mut (f64, f64, u64)) -> Result<(), AgentError> {
        match result {
            Ok((loss, obj)) => {
                self.failures = 0;
                stats.0 += loss;
                stats.1 += obj;
                stats.2 += 1;
                Ok(())
            }
            Err(AgentError::NonFinite) => {
                self.failures += 1;
                if self.failures >= MAX_NON_FINITE {
                    Err(AgentError::Diverged(self.failures))
                } else {
                    Ok(())
                }
            }
            Err(e) => Err(e),
        }
    }

    fn try_update(&mut self, stats: &mut (f64, f64, u64)) -> Result<(), AgentError> {
        let batch_size = self.cfg.batch_size;
        let idx = self.replay.sample_indices(batch_size, self.agent.rng_mut());
        let batch: Vec<&Transition> = idx.iter().map(|&i| self.replay.get(i).expect("sampled index")).collect();
        let result = self.agent.update_cycle(&batch);
        self.record(result, stats)
    }

    /// Runs `episodes` training episodes on `env`.
    pub fn train(&mut self, env: &mut Env, episodes: usize) -> Result<Vec<EpisodeMetrics>, AgentError> {
        let mut log = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            let m = match self.cfg.collection_mode {
                CollectionMode::Rollout => self.rollout_episode(env)?,
                CollectionMode::Paper => self.paper_episode(env)?,
            };
            self.observer.episode_end(&m);
            log.push(m);
        }
        Ok(log)
    }

    fn training_reward(&self, state: &env::NetworkState, action: &env::PushAction, outcome: &env::StepOutcome) -> f64 {
        match self.reward {
            RewardKind::Composite => outcome.reward,
            RewardKind::Comp2 => comp2_reward(state, action, outcome, &self.cfg),
        }
    }

    fn rollout_episode(&mut self, env: &mut Env) -> Result<EpisodeMetrics, AgentError> {
        let episode = self.agent.episode;
        env.reset(derive_seed(self.seed, episode));
        let mut totals = EpisodeTotals::default();
        let mut stats = (0.0, 0.0, 0u64);
        let ready = self.cfg.warmup.max(self.cfg.batch_size);
        let mut s = env.encode();
        for t in 0..self.cfg.episode_len {
            let raw = self.agent.act_own(ActorRole::Online, &s, self.observer.as_mut())?;
            let state = env.state().clone();
            let action = env::decode_action_lane(&raw, &state, &self.cfg, self.lane);
            let outcome = env.step(&action)?;
            let r = self.training_reward(&state, &action, &outcome);
            let s_next = encode_state(&outcome.next_state, &self.cfg);
            totals.add_with_training_reward(&outcome, r);
            self.replay.push(Transition {
                s: std::mem::replace(&mut s, s_next.clone()),
                a: raw,
                r,
                s_next,
            });
            if self.replay.len() >= ready && (t + 1) % self.cfg.update_period == 0 {
                self.try_update(&mut stats)?;
            }
        }
        self.agent.episode += 1;
        Ok(finish(totals, episode, stats))
    }

    /// Phase 1 refills the buffer from random states acted on by the target
    /// actor; Phase 2 runs the periodic updates. The logged metrics come from
    /// a greedy rollout of the online actor afterwards.
    fn paper_episode(&mut self, env: &mut Env) -> Result<EpisodeMetrics, AgentError> {
        let episode = self.agent.episode;
        env.reset(derive_seed(self.seed, episode));
        self.replay.clear();
        for _ in 0..self.cfg.phase1_minibatches * self.cfg.phase1_states {
            let state = env::random_state(&self.cfg, env.rng_mut());
            let s = encode_state(&state, &self.cfg);
            let raw = self.agent.act_own(ActorRole::Target, &s, self.observer.as_mut())?;
            let action = env::decode_action_lane(&raw, &state, &self.cfg, self.lane);
            env.set_state(state.clone());
            let outcome = env.step(&action)?;
            let r = self.training_reward(&state, &action, &outcome);
            let s_next = encode_state(&outcome.next_state, &self.cfg);
            self.replay.push(Transition { s, a: raw, r, s_next });
        }
        let mut stats = (0.0, 0.0, 0u64);
        for t in 0..self.cfg.episode_len {
            if (t + 1) % self.cfg.update_period == 0 {
                self.try_update(&mut stats)?;
            }
        }
        env.reset(derive_seed(self.seed, episode));
        let mut totals = EpisodeTotals::default();
        for _ in 0..self.cfg.episode_len {
            let state = env.state().clone();
            let raw = self.agent.act(&env::encode_state(&state, &self.cfg), false, &mut rand::rng())?;
            let action = env::decode_action_lane(&raw, &state, &self.cfg, self.lane);
            let outcome = env.step(&action)?;
            let r = self.training_reward(&state, &action, &outcome);
            totals.add_with_training_reward(&outcome, r);
        }
        self.agent.episode += 1;
        Ok(finish(totals, episode, stats))
    }
}

fn finish(totals: EpisodeTotals, episode: u64, stats: (f64, f64, u64)) -> EpisodeMetrics {
    let mut m = totals.finish(episode as usize);
    if stats.2 > 0 {
        m.critic_loss = Some(stats.0 / stats.2 as f64);
        m.actor_objective = Some(stats.1 / stats.2 as f64);
    }
    m
}

pub fn checkpoint_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
