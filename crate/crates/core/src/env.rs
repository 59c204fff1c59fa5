//! The simulated network: mBS transmitter queues, vehicle buffers, the random
//! link capacity, high-quality-first delivery, rewards, and the MDP
//! `reset`/`step` interface with its state/action encodings.
//!
//! Indexing convention: mBS `j` is stored 0-based, so storage index `j`
//! corresponds to cell `j + 1`. mBS `j` serves (and queues for) vehicle `i`
//! when `p_i ∈ {j, j + 1}`, i.e. the vehicle is in its cell or the one before.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{InitialPositions, MobilityMode, SimConfig, StallScope};
use crate::mobility::{self, MobilityError, MobilitySource, PositionVector};

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("tensor shape {got:?} does not match network shape {expected:?}")]
    Shape {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("action entry (mbs {mbs}, vehicle {vehicle}, quality {quality}) = {value} is out of range")]
    ActionRange {
        mbs: usize,
        vehicle: usize,
        quality: usize,
        value: u32,
    },
    #[error("action pushes to inactive pair (mbs {mbs}, vehicle {vehicle})")]
    InactivePush { mbs: usize, vehicle: usize },
    #[error("capacity bound must be positive, got {0}")]
    Capacity(f64),
    #[error(transparent)]
    Mobility(#[from] MobilityError),
}

/// Dense `K x N x L` tensor of chunk counts, row-major in (mbs, vehicle, quality).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ChunkTensor {
    dims: (usize, usize, usize),
    data: Vec<u32>,
}

impl ChunkTensor {
    pub fn zeros(k: usize, n: usize, l: usize) -> Self {
        Self {
            dims: (k, n, l),
            data: vec![0; k * n * l],
        }
    }

    pub fn for_config(cfg: &SimConfig) -> Self {
        Self::zeros(cfg.n_mbs, cfg.n_vehicles, cfg.n_quality)
    }

    pub fn from_vec(k: usize, n: usize, l: usize, data: Vec<u32>) -> Self {
        assert_eq!(data.len(), k * n * l, "tensor data length");
        Self { dims: (k, n, l), data }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    #[inline]
    fn offset(&self, j: usize, i: usize) -> usize {
        (j * self.dims.1 + i) * self.dims.2
    }

    #[inline]
    pub fn get(&self, j: usize, i: usize, q: usize) -> u32 {
        self.data[self.offset(j, i) + q]
    }

    #[inline]
    pub fn set(&mut self, j: usize, i: usize, q: usize, value: u32) {
        let at = self.offset(j, i) + q;
        self.data[at] = value;
    }

    /// The `L` quality lanes of pair `(j, i)`.
    pub fn row(&self, j: usize, i: usize) -> &[u32] {
        let at = self.offset(j, i);
        &self.data[at..at + self.dims.2]
    }

    pub fn row_mut(&mut self, j: usize, i: usize) -> &mut [u32] {
        let at = self.offset(j, i);
        let l = self.dims.2;
        &mut self.data[at..at + l]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.data
    }

    pub fn total(&self) -> u64 {
        self.data.iter().map(|&x| u64::from(x)).sum()
    }

    fn check_dims(&self, expected: (usize, usize, usize)) -> Result<(), EnvError> {
        if self.dims != expected {
            return Err(EnvError::Shape {
                expected,
                got: self.dims,
            });
        }
        Ok(())
    }
}

/// Chunks queued at mBS `j` for vehicle `i` at quality `q`.
pub type QueueTensor = ChunkTensor;

/// Chunks pushed from the MBS to each mBS this slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PushAction {
    pub l: ChunkTensor,
}

impl PushAction {
    pub fn zeros(cfg: &SimConfig) -> Self {
        Self {
            l: ChunkTensor::for_config(cfg),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleSideState {
    pub buffers: Vec<u32>,
    pub delivered: Vec<u64>,
    /// Running average bitrate of received chunks; 0 until the first delivery.
    pub avg_quality: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub positions: PositionVector,
    pub queues: QueueTensor,
    pub vehicle_side: VehicleSideState,
    pub slot: usize,
}

#[inline]
pub fn is_active(positions: &PositionVector, j: usize, i: usize) -> bool {
    let p = positions.0[i] as usize;
    p == j || p == j + 1
}

/// Serving mBS (storage index) of vehicle `i`, if it is on the highway.
#[inline]
pub fn serving_mbs(positions: &PositionVector, i: usize, n_mbs: usize) -> Option<usize> {
    let p = positions.0[i] as usize;
    (1..=n_mbs).contains(&p).then(|| p - 1)
}

impl NetworkState {
    /// Checks every bound the optimization problem imposes plus the
    /// inactive-queue and average-quality invariants.
    pub fn check_invariants(&self, cfg: &SimConfig) -> Result<(), String> {
        let (k, n, l) = (cfg.n_mbs, cfg.n_vehicles, cfg.n_quality);
        if self.queues.dims() != (k, n, l) {
            return Err("queue tensor shape".into());
        }
        for j in 0..k {
            for i in 0..n {
                let active = is_active(&self.positions, j, i);
                for q in 0..l {
                    let c = self.queues.get(j, i, q);
                    if c > cfg.queue_cap {
                        return Err(format!("queue ({j},{i},{q}) = {c} exceeds cap"));
                    }
                    if !active && c != 0 {
                        return Err(format!("inactive queue ({j},{i},{q}) holds {c}"));
                    }
                }
            }
        }
        let top = cfg.top_bitrate();
        let bottom = cfg.quality_bitrates[0];
        for i in 0..n {
            if self.positions.0[i] > k as u32 + 1 {
                return Err(format!("vehicle {i} beyond departed state"));
            }
            if self.vehicle_side.buffers[i] > cfg.buffer_cap {
                return Err(format!("buffer {i} exceeds cap"));
            }
            let qbar = self.vehicle_side.avg_quality[i];
            if self.vehicle_side.delivered[i] == 0 {
                if qbar != 0.0 {
                    return Err(format!("vehicle {i} has average quality without deliveries"));
                }
            } else if !(qbar >= bottom - 1e-9 && qbar <= top + 1e-9) {
                return Err(format!("vehicle {i} average quality {qbar} out of range"));
            }
        }
        Ok(())
    }
}

/// Initial state for an episode.
pub fn reset_state<R: Rng + ?Sized>(cfg: &SimConfig, mobility: &MobilitySource, rng: &mut R) -> NetworkState {
    let n = cfg.n_vehicles;
    let positions = match mobility {
        MobilitySource::Trace(schedule) => schedule.trace_step(0),
        MobilitySource::Fsmc { .. } => match cfg.initial_positions {
            InitialPositions::Uniform => PositionVector(
                (0..n)
                    .map(|_| rng.random_range(0..=cfg.n_mbs as u32))
                    .collect(),
            ),
            InitialPositions::Origin => PositionVector(vec![0; n]),
        },
    };
    NetworkState {
        positions,
        queues: ChunkTensor::for_config(cfg),
        vehicle_side: VehicleSideState {
            buffers: vec![cfg.initial_buffer(); n],
            delivered: vec![0; n],
            avg_quality: vec![0.0; n],
        },
        slot: 0,
    }
}

/// A state drawn uniformly from the state space (respecting the inactive-queue
/// invariant), used by the paper-mode replay collection.
pub fn random_state<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> NetworkState {
    let (k, n, l) = (cfg.n_mbs, cfg.n_vehicles, cfg.n_quality);
    let positions = PositionVector((0..n).map(|_| rng.random_range(0..=k as u32 + 1)).collect());
    let mut queues = ChunkTensor::zeros(k, n, l);
    for j in 0..k {
        for i in 0..n {
            if is_active(&positions, j, i) {
                for q in 0..l {
                    queues.set(j, i, q, rng.random_range(0..=cfg.queue_cap));
                }
            }
        }
    }
    let horizon = (cfg.episode_len as u64) * u64::from(cfg.playback_rate);
    let buffers = (0..n).map(|_| rng.random_range(0..=cfg.buffer_cap)).collect();
    let delivered: Vec<u64> = (0..n).map(|_| rng.random_range(0..=horizon)).collect();
    let (lo, hi) = (cfg.quality_bitrates[0], cfg.top_bitrate());
    let avg_quality = delivered
        .iter()
        .map(|&h| if h == 0 { 0.0 } else { rng.random_range(lo..=hi) })
        .collect();
    NetworkState {
        positions,
        queues,
        vehicle_side: VehicleSideState {
            buffers,
            delivered,
            avg_quality,
        },
        slot: 0,
    }
}

/// Link capacity (Mbps) from each vehicle's serving mBS; off-highway vehicles get 0.
/// One uniform draw is consumed per vehicle regardless of position.
pub fn sample_capacities<R: Rng + ?Sized>(
    positions: &PositionVector,
    n_mbs: usize,
    r_max: f64,
    rng: &mut R,
) -> Result<Vec<f64>, EnvError> {
    if !(r_max > 0.0 && r_max.is_finite()) {
        return Err(EnvError::Capacity(r_max));
    }
    Ok((0..positions.len())
        .map(|i| {
            let u: f64 = rng.random();
            if positions.on_highway(i, n_mbs) {
                u * r_max
            } else {
                0.0
            }
        })
        .collect())
}

/// Greedy delivery: spend the capacity on the highest quality first, then the
/// next, never sending more chunks than are queued.
pub fn deliver_high_quality_first(queue_row: &[u32], capacity: f64, chunk_sizes: &[f64]) -> Vec<u32> {
    let mut out = vec![0; queue_row.len()];
    let mut remaining = capacity.max(0.0);
    for q in (0..queue_row.len()).rev() {
        let fits = (remaining / chunk_sizes[q]).floor();
        let w = if fits >= f64::from(queue_row[q]) {
            queue_row[q]
        } else {
            fits as u32
        };
        out[q] = w;
        remaining -= f64::from(w) * chunk_sizes[q];
    }
    out
}

/// Deliveries this slot.
#[derive(Debug, Clone, PartialEq)]
pub struct DeliveryResult {
    pub w: ChunkTensor,
    pub capacities: Vec<f64>,
}

impl DeliveryResult {
    /// Chunks vehicle `i` received, per quality (they all come from its serving mBS).
    pub fn per_vehicle(&self, positions: &PositionVector, n_mbs: usize) -> Vec<Vec<u32>> {
        let (_, n, l) = self.w.dims();
        (0..n)
            .map(|i| match serving_mbs(positions, i, n_mbs) {
                Some(j) => self.w.row(j, i).to_vec(),
                None => vec![0; l],
            })
            .collect()
    }
}

pub fn deliver_all(queues: &QueueTensor, positions: &PositionVector, capacities: &[f64], chunk_sizes: &[f64]) -> ChunkTensor {
    let (k, n, l) = queues.dims();
    let mut w = ChunkTensor::zeros(k, n, l);
    for i in 0..n {
        if let Some(j) = serving_mbs(positions, i, k) {
            let row = deliver_high_quality_first(queues.row(j, i), capacities[i], chunk_sizes);
            w.row_mut(j, i).copy_from_slice(&row);
        }
    }
    w
}

/// `c' = min(max(c - w, 0) + l, c̄)` per entry; returns the overflow per entry.
pub fn apply_push(
    queues: &QueueTensor,
    action: &PushAction,
    deliveries: &ChunkTensor,
    queue_cap: u32,
) -> Result<(QueueTensor, ChunkTensor), EnvError> {
    action.l.check_dims(queues.dims())?;
    deliveries.check_dims(queues.dims())?;
    let mut next = queues.clone();
    let mut drops = ChunkTensor::zeros(queues.dims.0, queues.dims.1, queues.dims.2);
    for idx in 0..queues.data.len() {
        let kept = queues.data[idx].saturating_sub(deliveries.data[idx]);
        let total = u64::from(kept) + u64::from(action.l.data[idx]);
        let cap = u64::from(queue_cap);
        next.data[idx] = total.min(cap) as u32;
        drops.data[idx] = total.saturating_sub(cap) as u32;
    }
    Ok((next, drops))
}

/// Clears queues whose vehicle left the mBS's service window; returns the
/// number of discarded chunks.
pub fn handoff_discard(queues: &QueueTensor, positions_next: &PositionVector) -> (QueueTensor, u64) {
    let (k, n, _) = queues.dims();
    let mut next = queues.clone();
    let mut discarded = 0u64;
    for j in 0..k {
        for i in 0..n {
            if !is_active(positions_next, j, i) {
                for c in next.row_mut(j, i) {
                    discarded += u64::from(*c);
                    *c = 0;
                }
            }
        }
    }
    (next, discarded)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferUpdate {
    pub vehicle_side: VehicleSideState,
    /// `b_i < F` on the pre-update buffer.
    pub stalls: Vec<bool>,
    pub vehicle_drops: Vec<u32>,
    /// Chunks played this slot, `min(b_i, F)`.
    pub played: Vec<u32>,
}

/// Playback, arrivals, the `b̄` clamp, and the delivered-count/average-quality recursion.
pub fn update_buffers(
    prev: &VehicleSideState,
    per_vehicle: &[Vec<u32>],
    bitrates: &[f64],
    playback_rate: u32,
    buffer_cap: u32,
) -> BufferUpdate {
    let n = prev.buffers.len();
    let mut next = prev.clone();
    let mut stalls = Vec::with_capacity(n);
    let mut vehicle_drops = Vec::with_capacity(n);
    let mut played = Vec::with_capacity(n);
    for i in 0..n {
        let b = prev.buffers[i];
        let arrivals: u32 = per_vehicle[i].iter().sum();
        stalls.push(b < playback_rate);
        played.push(b.min(playback_rate));
        let raw = b.saturating_sub(playback_rate) + arrivals;
        next.buffers[i] = raw.min(buffer_cap);
        vehicle_drops.push(raw.saturating_sub(buffer_cap));
        if arrivals > 0 {
            let h_prev = prev.delivered[i];
            let h = h_prev + u64::from(arrivals);
            let bits: f64 = per_vehicle[i]
                .iter()
                .zip(bitrates)
                .map(|(&w, &q)| f64::from(w) * q)
                .sum();
            next.delivered[i] = h;
            next.avg_quality[i] = (h_prev as f64 * prev.avg_quality[i] + bits) / h as f64;
        }
    }
    BufferUpdate {
        vehicle_side: next,
        stalls,
        vehicle_drops,
        played,
    }
}

/// Mean bitrate of the chunks a vehicle received this slot.
fn slot_quality(w: &[u32], bitrates: &[f64]) -> Option<f64> {
    let total: u32 = w.iter().sum();
    (total > 0).then(|| {
        w.iter()
            .zip(bitrates)
            .map(|(&x, &q)| f64::from(x) * q)
            .sum::<f64>()
            / f64::from(total)
    })
}

/// Per-vehicle `m_i / (ε + |q̄_i(t-1) - m_i|)`, zero for vehicles that received nothing.
pub fn reward_quality(prev: &VehicleSideState, per_vehicle: &[Vec<u32>], bitrates: &[f64], eps: f64) -> (Vec<f64>, f64) {
    let per: Vec<f64> = per_vehicle
        .iter()
        .enumerate()
        .map(|(i, w)| match slot_quality(w, bitrates) {
            Some(m) => m / (eps + (prev.avg_quality[i] - m).abs()),
            None => 0.0,
        })
        .collect();
    let mean = per.iter().sum::<f64>() / per.len() as f64;
    (per, mean)
}

/// Per-mBS sum over active `(i, q)` of `(1 - η) - max(c̃ + l - c̄, 0) / (ζ + l)`.
#[allow(clippy::too_many_arguments)]
pub fn reward_drop(
    queues_pre: &QueueTensor,
    deliveries: &ChunkTensor,
    action: &PushAction,
    positions: &PositionVector,
    zeta: f64,
    eta: f64,
    queue_cap: u32,
) -> (Vec<f64>, f64) {
    let (k, n, l) = queues_pre.dims();
    let per: Vec<f64> = (0..k)
        .map(|j| {
            let mut sum = 0.0;
            for i in (0..n).filter(|&i| is_active(positions, j, i)) {
                for q in 0..l {
                    let kept = queues_pre.get(j, i, q).saturating_sub(deliveries.get(j, i, q));
                    let push = action.l.get(j, i, q);
                    let overflow = (f64::from(kept) + f64::from(push) - f64::from(queue_cap)).max(0.0);
                    sum += (1.0 - eta) - overflow / (zeta + f64::from(push));
                }
            }
            sum
        })
        .collect();
    let mean = per.iter().sum::<f64>() / k as f64;
    (per, mean)
}

/// Per-vehicle `ν · min(b_i - F, 0)` on the pre-update buffers.
pub fn reward_stall(buffers: &[u32], playback_rate: u32, nu: f64) -> (Vec<f64>, f64) {
    let per: Vec<f64> = buffers
        .iter()
        .map(|&b| nu * (f64::from(b) - f64::from(playback_rate)).min(0.0))
        .collect();
    let mean = per.iter().sum::<f64>() / per.len() as f64;
    (per, mean)
}

/// Integer event counts for one slot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepEvents {
    pub pushed_chunks: u64,
    /// Backhaul volume in Mb.
    pub pushed_bits: f64,
    pub delivered_chunks: u64,
    pub mbs_drops: u64,
    pub vehicle_drops: u64,
    pub handoff_discards: u64,
    pub played_chunks: u64,
    /// Vehicles with `b_i < F` this slot (all vehicles).
    pub stall_vehicle_slots: u64,
    /// On-highway vehicles whose playback has started (`h_i > 0`).
    pub active_vehicle_slots: u64,
    pub active_stalls: u64,
    pub delivered_per_quality: Vec<u64>,
    /// Sum of bitrates over delivered chunks.
    pub delivered_quality_sum: f64,
    pub mean_delivered_quality: Option<f64>,
    /// Mean `|m_i - q̄_i(t-1)|` over vehicles that received chunks and had history.
    pub quality_fluctuation: Option<f64>,
    pub fluctuation_sum: f64,
    pub fluctuation_count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub reward_quality: f64,
    pub reward_drop: f64,
    pub reward_stall: f64,
    pub events: StepEvents,
    pub delivery: DeliveryResult,
    pub next_state: NetworkState,
}

/// Validates range and active mask of an action against `state`.
pub fn check_action(cfg: &SimConfig, state: &NetworkState, action: &PushAction) -> Result<(), EnvError> {
    action.l.check_dims((cfg.n_mbs, cfg.n_vehicles, cfg.n_quality))?;
    for j in 0..cfg.n_mbs {
        for i in 0..cfg.n_vehicles {
            let active = is_active(&state.positions, j, i);
            for (q, &value) in action.l.row(j, i).iter().enumerate() {
                if value > cfg.queue_cap {
                    return Err(EnvError::ActionRange {
                        mbs: j,
                        vehicle: i,
                        quality: q,
                        value,
                    });
                }
                if !active && value > 0 {
                    return Err(EnvError::InactivePush { mbs: j, vehicle: i });
                }
            }
        }
    }
    Ok(())
}

/// One slot of the controlled chain. Order: capacities, delivery, push,
/// buffers and rewards (from pre-update values), mobility, handoff discard.
pub fn transition<R: Rng + ?Sized>(
    cfg: &SimConfig,
    mobility: &MobilitySource,
    state: &NetworkState,
    action: &PushAction,
    rng: &mut R,
) -> Result<StepOutcome, EnvError> {
    check_action(cfg, state, action)?;
    let k = cfg.n_mbs;
    let sizes = cfg.chunk_sizes();
    let bitrates = &cfg.quality_bitrates;

    let capacities = sample_capacities(&state.positions, k, cfg.r_max_mbps, rng)?;
    let w = deliver_all(&state.queues, &state.positions, &capacities, sizes);
    let (pushed_queues, drops) = apply_push(&state.queues, action, &w, cfg.queue_cap)?;

    let delivery = DeliveryResult { w, capacities };
    let per_vehicle = delivery.per_vehicle(&state.positions, k);
    let prev = &state.vehicle_side;
    let (_, r_q) = reward_quality(prev, &per_vehicle, bitrates, cfg.eps_quality);
    let (_, r_p) = reward_drop(
        &state.queues,
        &delivery.w,
        action,
        &state.positions,
        cfg.zeta_drop,
        cfg.eta_drop,
        cfg.queue_cap,
    );
    let (mut per_f, _) = reward_stall(&prev.buffers, cfg.playback_rate, cfg.nu_stall);
    if cfg.stall_scope == StallScope::OnHighway {
        for (i, r) in per_f.iter_mut().enumerate() {
            if !state.positions.on_highway(i, k) {
                *r = 0.0;
            }
        }
    }
    let r_f = per_f.iter().sum::<f64>() / per_f.len() as f64;
    let buffers = update_buffers(prev, &per_vehicle, bitrates, cfg.playback_rate, cfg.buffer_cap);

    let positions_next = mobility.next(&state.positions, state.slot + 1, k, rng);
    let (queues_next, discarded) = handoff_discard(&pushed_queues, &positions_next);

    let mut events = StepEvents {
        pushed_chunks: action.l.total(),
        pushed_bits: action
            .l
            .as_slice()
            .chunks(cfg.n_quality)
            .map(|row| row.iter().zip(sizes).map(|(&x, &c)| f64::from(x) * c).sum::<f64>())
            .sum(),
        delivered_chunks: delivery.w.total(),
        mbs_drops: drops.total(),
        vehicle_drops: buffers.vehicle_drops.iter().map(|&x| u64::from(x)).sum(),
        handoff_discards: discarded,
        played_chunks: buffers.played.iter().map(|&x| u64::from(x)).sum(),
        delivered_per_quality: vec![0; cfg.n_quality],
        ..StepEvents::default()
    };
    for i in 0..cfg.n_vehicles {
        let stalled = buffers.stalls[i];
        events.stall_vehicle_slots += u64::from(stalled);
        if state.positions.on_highway(i, k) && prev.delivered[i] > 0 {
            events.active_vehicle_slots += 1;
            events.active_stalls += u64::from(stalled);
        }
        for (q, &x) in per_vehicle[i].iter().enumerate() {
            events.delivered_per_quality[q] += u64::from(x);
            events.delivered_quality_sum += f64::from(x) * bitrates[q];
        }
        if let Some(m) = slot_quality(&per_vehicle[i], bitrates) {
            if prev.delivered[i] > 0 {
                events.fluctuation_sum += (m - prev.avg_quality[i]).abs();
                events.fluctuation_count += 1;
            }
        }
    }
    if events.delivered_chunks > 0 {
        events.mean_delivered_quality = Some(events.delivered_quality_sum / events.delivered_chunks as f64);
    }
    if events.fluctuation_count > 0 {
        events.quality_fluctuation = Some(events.fluctuation_sum / events.fluctuation_count as f64);
    }

    Ok(StepOutcome {
        reward: r_q * r_p + r_f,
        reward_quality: r_q,
        reward_drop: r_p,
        reward_stall: r_f,
        events,
        delivery,
        next_state: NetworkState {
            positions: positions_next,
            queues: queues_next,
            vehicle_side: buffers.vehicle_side,
            slot: state.slot + 1,
        },
    })
}

/// Splitmix64 finalizer, used to derive independent stream seeds.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A stateful environment instance with its own random stream.
///
/// Capacity and mobility draws do not depend on the actions taken, so two
/// policies run on the same seed see identical channels and trajectories.
#[derive(Debug, Clone)]
pub struct Env {
    cfg: SimConfig,
    mobility: MobilitySource,
    rng: ChaCha8Rng,
    state: NetworkState,
}

impl Env {
    /// Builds the mobility source from the config (loading the trace file in trace mode).
    pub fn new(cfg: &SimConfig, seed: u64) -> Result<Self, EnvError> {
        let mobility = match cfg.mobility_mode {
            MobilityMode::Fsmc => MobilitySource::Fsmc { rho: cfg.rho() },
            MobilityMode::Trace => {
                let path = cfg.trace_path.as_deref().expect("validated in config");
                let schedule = mobility::load_trace(path)?;
                schedule.check_network(cfg.n_vehicles, cfg.n_mbs)?;
                MobilitySource::Trace(Arc::new(schedule))
            }
        };
        Ok(Self::with_mobility(cfg, mobility, seed))
    }

    pub fn with_mobility(cfg: &SimConfig, mobility: MobilitySource, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = reset_state(cfg, &mobility, &mut rng);
        Self {
            cfg: cfg.clone(),
            mobility,
            rng,
            state,
        }
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn mobility(&self) -> &MobilitySource {
        &self.mobility
    }

    pub fn state(&self) -> &NetworkState {
        &self.state
    }

    /// Restarts the episode with a fresh stream derived from `seed`.
    pub fn reset(&mut self, seed: u64) -> &NetworkState {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = reset_state(&self.cfg, &self.mobility, &mut self.rng);
        &self.state
    }

    /// Replaces the current state (used for paper-mode random-state collection).
    pub fn set_state(&mut self, state: NetworkState) {
        self.state = state;
    }

    pub fn step(&mut self, action: &PushAction) -> Result<StepOutcome, EnvError> {
        let outcome = transition(&self.cfg, &self.mobility, &self.state, action, &mut self.rng)?;
        self.state = outcome.next_state.clone();
        Ok(outcome)
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn encode(&self) -> Vec<f64> {
        encode_state(&self.state, &self.cfg)
    }
}

/// Feature layout (all values in `[0, 1]`):
/// `[queues / c̄ (K·N·L, order mbs, vehicle, quality) | buffers / b̄ (N) |
///   positions / (K + 1) (N) | h / (h + T·F) (N) | q̄ / q_L (N)]`.
pub fn encode_state(state: &NetworkState, cfg: &SimConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(cfg.state_dim());
    let c_bar = f64::from(cfg.queue_cap);
    out.extend(state.queues.as_slice().iter().map(|&c| f64::from(c) / c_bar));
    let vs = &state.vehicle_side;
    let b_bar = f64::from(cfg.buffer_cap);
    out.extend(vs.buffers.iter().map(|&b| f64::from(b) / b_bar));
    let k1 = (cfg.n_mbs + 1) as f64;
    out.extend(state.positions.0.iter().map(|&p| f64::from(p) / k1));
    let scale = (cfg.episode_len as f64) * f64::from(cfg.playback_rate);
    out.extend(vs.delivered.iter().map(|&h| {
        let h = h as f64;
        h / (h + scale)
    }));
    let top = cfg.top_bitrate();
    out.extend(vs.avg_quality.iter().map(|&q| q / top));
    out
}

/// Continuous actor output to an integer push tensor: `round(raw · cap)` on
/// active entries, zero elsewhere. `lane` restricts pushes to one quality level.
pub fn decode_action_lane(raw: &[f64], state: &NetworkState, cfg: &SimConfig, lane: Option<usize>) -> PushAction {
    let (k, n, l) = (cfg.n_mbs, cfg.n_vehicles, cfg.n_quality);
    assert_eq!(raw.len(), k * n * l);
    let cap = f64::from(cfg.push_cap());
    let mut action = ChunkTensor::zeros(k, n, l);
    for j in 0..k {
        for i in 0..n {
            if !is_active(&state.positions, j, i) {
                continue;
            }
            let base = (j * n + i) * l;
            for q in 0..l {
                if lane.is_some_and(|only| only != q) {
                    continue;
                }
                let x = raw[base + q].clamp(0.0, 1.0);
                action.set(j, i, q, (x * cap).round() as u32);
            }
        }
    }
    PushAction { l: action }
}

pub fn decode_action(raw: &[f64], state: &NetworkState, cfg: &SimConfig) -> PushAction {
    decode_action_lane(raw, state, cfg, None)
}

/// Inverse of the decode scaling: `l / push_cap`.
pub fn encode_action(action: &PushAction, cfg: &SimConfig) -> Vec<f64> {
    let cap = f64::from(cfg.push_cap());
    action.l.as_slice().iter().map(|&x| f64::from(x) / cap).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> SimConfig {
        SimConfig::desk()
    }

    #[test]
    fn published_delivery_example() {
        let w = deliver_high_quality_first(&[0, 0, 5, 5, 1], 61.0, &[1.0, 3.0, 5.0, 8.0, 40.0]);
        assert_eq!(w, vec![0, 0, 1, 2, 1]);
    }

    #[test]
    fn zero_capacity_delivers_nothing() {
        assert_eq!(deliver_high_quality_first(&[3, 3], 0.0, &[1.0, 2.0]), vec![0, 0]);
    }

    #[test]
    fn push_recursion_examples() {
        let one = |c: u32, w: u32, l: u32, cap: u32| {
            let q = ChunkTensor::from_vec(1, 1, 1, vec![c]);
            let d = ChunkTensor::from_vec(1, 1, 1, vec![w]);
            let a = PushAction {
                l: ChunkTensor::from_vec(1, 1, 1, vec![l]),
            };
            let (next, drops) = apply_push(&q, &a, &d, cap).unwrap();
            (next.get(0, 0, 0), drops.get(0, 0, 0))
        };
        assert_eq!(one(10, 3, 5, 12), (12, 0));
        assert_eq!(one(10, 0, 5, 12), (12, 3));
        assert_eq!(one(7, 7, 0, 12), (0, 0));
    }

    #[test]
    fn push_shape_mismatch_is_an_error() {
        let q = ChunkTensor::zeros(1, 1, 2);
        let a = PushAction {
            l: ChunkTensor::zeros(1, 2, 1),
        };
        assert!(matches!(apply_push(&q, &a, &q, 5), Err(EnvError::Shape { .. })));
    }

    #[test]
    fn handoff_clears_left_behind_queue() {
        // K = 3, one vehicle moving from cell 1 to cell 2: mBS 0 (cell 1) loses it.
        let mut q = ChunkTensor::zeros(3, 1, 2);
        q.row_mut(0, 0).copy_from_slice(&[2, 3]);
        q.row_mut(1, 0).copy_from_slice(&[1, 0]);
        let (next, discarded) = handoff_discard(&q, &PositionVector(vec![2]));
        assert_eq!(discarded, 5);
        assert_eq!(next.row(0, 0), &[0, 0]);
        assert_eq!(next.row(1, 0), &[1, 0]);
        let (same, none) = handoff_discard(&q, &PositionVector(vec![1]));
        assert_eq!((same, none), (q, 0));
    }

    fn side(b: u32, h: u64, qbar: f64) -> VehicleSideState {
        VehicleSideState {
            buffers: vec![b],
            delivered: vec![h],
            avg_quality: vec![qbar],
        }
    }

    #[test]
    fn buffer_examples() {
        let up = update_buffers(&side(30, 0, 0.0), &[vec![0]], &[1.0], 40, 240);
        assert_eq!((up.vehicle_side.buffers[0], up.stalls[0]), (0, true));

        let up = update_buffers(&side(20, 0, 0.0), &[vec![10]], &[1.0], 4, 24);
        assert_eq!((up.vehicle_side.buffers[0], up.vehicle_drops[0]), (24, 2));
        assert!(!up.stalls[0]);

        let up = update_buffers(&side(10, 4, 2.5), &[vec![0, 0, 1]], &[1.0, 2.5, 5.0], 4, 24);
        assert_eq!(up.vehicle_side.delivered[0], 5);
        assert!((up.vehicle_side.avg_quality[0] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn quality_reward_examples() {
        let rates = [1.0, 5.0];
        let (r, _) = reward_quality(&side(0, 3, 5.0), &[vec![0, 2]], &rates, 1.0);
        assert_eq!(r[0], 5.0);
        let (r, _) = reward_quality(&side(0, 3, 1.0), &[vec![0, 2]], &rates, 1.0);
        assert!((r[0] - 1.0).abs() < 1e-15);
        let (r, mean) = reward_quality(&side(0, 3, 1.0), &[vec![0, 0]], &rates, 1.0);
        assert_eq!((r[0], mean), (0.0, 0.0));
    }

    #[test]
    fn drop_reward_examples() {
        let pos = PositionVector(vec![1]);
        let w = ChunkTensor::zeros(1, 1, 1);
        let push = |l: u32| PushAction {
            l: ChunkTensor::from_vec(1, 1, 1, vec![l]),
        };
        // c̃ = 10, l = 5, c̄ = 12 → overflow 3
        let q = ChunkTensor::from_vec(1, 1, 1, vec![10]);
        let (per, mean) = reward_drop(&q, &w, &push(5), &pos, 0.05, 1.0, 12);
        assert!((per[0] - (-3.0 / 5.05)).abs() < 1e-12);
        assert_eq!(mean, per[0]);
        // no overflow with η = 1
        let (_, mean) = reward_drop(&q, &w, &push(1), &pos, 0.05, 1.0, 12);
        assert_eq!(mean, 0.0);
        let (per, _) = reward_drop(&q, &w, &push(0), &pos, 0.05, 0.5, 12);
        assert_eq!(per[0], 0.5);
    }

    #[test]
    fn stall_reward_examples() {
        assert_eq!(reward_stall(&[30], 40, 1.0).0, vec![-10.0]);
        assert_eq!(reward_stall(&[50], 40, 1.0).0, vec![0.0]);
        assert_eq!(reward_stall(&[0], 40, 1.0).0, vec![-40.0]);
    }

    #[test]
    fn capacities_zero_off_highway() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let caps = sample_capacities(&PositionVector(vec![0, 1, 5]), 4, 100.0, &mut rng).unwrap();
        assert_eq!(caps[0], 0.0);
        assert!(caps[1] > 0.0 && caps[1] < 100.0);
        assert_eq!(caps[2], 0.0);
        assert!(sample_capacities(&PositionVector(vec![1]), 4, 0.0, &mut rng).is_err());
    }

    #[test]
    fn capacity_mean_is_half_of_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pos = PositionVector(vec![1]);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| sample_capacities(&pos, 1, 100.0, &mut rng).unwrap()[0])
            .sum::<f64>()
            / n as f64;
        assert!((mean - 50.0).abs() < 0.5, "{mean}");
    }

    #[test]
    fn reset_fills_buffers_to_half() {
        let env = Env::new(&desk(), 7).unwrap();
        let s = env.state();
        assert!(s.queues.as_slice().iter().all(|&c| c == 0));
        assert!(s.vehicle_side.buffers.iter().all(|&b| b == 12));
        let paper = SimConfig::paper();
        let s = reset_state(&paper, &MobilitySource::Fsmc { rho: paper.rho() }, &mut ChaCha8Rng::seed_from_u64(7));
        assert!(s.vehicle_side.buffers.iter().all(|&b| b == 120));
    }

    #[test]
    fn empty_initial_buffer_stalls_first_slot() {
        let cfg = desk().apply_overrides(&["initial_buffer=0".into()]).unwrap();
        let mut env = Env::new(&cfg, 3).unwrap();
        let out = env.step(&PushAction::zeros(&cfg)).unwrap();
        assert_eq!(out.events.stall_vehicle_slots, cfg.n_vehicles as u64);
    }

    #[test]
    fn full_buffers_and_no_action_give_zero_reward() {
        let cfg = desk()
            .apply_overrides(&["initial_buffer=24".into()])
            .unwrap();
        let mut env = Env::new(&cfg, 5).unwrap();
        // 24 chunks at F = 4 last 6 slots
        for _ in 0..6 {
            let out = env.step(&PushAction::zeros(&cfg)).unwrap();
            assert_eq!(out.reward, 0.0);
        }
        let out = env.step(&PushAction::zeros(&cfg)).unwrap();
        assert!(out.reward < 0.0);
    }

    #[test]
    fn inactive_push_is_rejected() {
        let cfg = desk();
        let env = Env::new(&cfg, 1).unwrap();
        let state = env.state();
        let (j, i) = (0..cfg.n_mbs)
            .flat_map(|j| (0..cfg.n_vehicles).map(move |i| (j, i)))
            .find(|&(j, i)| !is_active(&state.positions, j, i))
            .expect("some inactive pair");
        let mut action = PushAction::zeros(&cfg);
        action.l.set(j, i, 0, 1);
        assert!(matches!(
            check_action(&cfg, state, &action),
            Err(EnvError::InactivePush { .. })
        ));
    }

    #[test]
    fn encoding_layout() {
        let cfg = desk();
        let env = Env::new(&cfg, 7).unwrap();
        let x = env.encode();
        assert_eq!(x.len(), 128);
        assert!(x[..96].iter().all(|&v| v == 0.0));
        assert!(x.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let mut s = env.state().clone();
        s.vehicle_side.delivered[0] = 3;
        s.vehicle_side.avg_quality[0] = cfg.top_bitrate();
        let x = encode_state(&s, &cfg);
        assert_eq!(x[96 + 3 * 8], 1.0);
    }

    #[test]
    fn decoding_rules() {
        let cfg = desk();
        let env = Env::new(&cfg, 7).unwrap();
        let s = env.state();
        let zero = decode_action(&vec![0.0; 96], s, &cfg);
        assert_eq!(zero.l.total(), 0);
        let full = decode_action(&vec![1.0; 96], s, &cfg);
        let half = decode_action(&vec![0.5; 96], s, &cfg);
        for j in 0..cfg.n_mbs {
            for i in 0..cfg.n_vehicles {
                let active = is_active(&s.positions, j, i);
                for q in 0..cfg.n_quality {
                    assert_eq!(full.l.get(j, i, q), if active { 8 } else { 0 });
                    assert_eq!(half.l.get(j, i, q), if active { 4 } else { 0 });
                }
            }
        }
    }
}
