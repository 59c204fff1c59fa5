//! Training and evaluation drivers that write per-cell CSVs, checkpoints, a
//! summary table and a run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::agent::{checkpoint_hash, AgentError, DdpgAgent, RewardKind, Trainer};
use crate::baselines::{Comp1Policy, PolicyError, PolicyKind};
use crate::config::{ConfigError, MobilityMode, SimConfig};
use crate::env::{self, derive_seed, Env, EnvError, NetworkState, PushAction, StepOutcome};
use crate::metrics::{self, EpisodeMetrics, EpisodeTotals};
use crate::mobility::{MobilitySource, TraceSchedule};
use crate::par::{self, Execution};

const COMP1_STREAM: u64 = 0xC0A1;
const EVAL_STREAM: u64 = 0xE7A1;
/// Window (in episodes) for converged summary values.
pub const SUMMARY_WINDOW: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("velocity sweep needs a checkpoint trained at the reference velocity")]
    MissingCheckpoint,
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("conservation violated at slot {slot}: {what}")]
    Conservation { slot: usize, what: String },
    #[error("state invariant violated at slot {slot}: {what}")]
    Invariant { slot: usize, what: String },
    #[error("checkpoint does not fit this network: {0}")]
    CheckpointShape(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Running totals for the chunk and buffer conservation identities:
/// `pushed = delivered + mbs_drops + discards + queued` and
/// `initial_fill + delivered = played + vehicle_drops + buffered`.
#[derive(Debug, Clone, Default)]
pub struct ConservationAudit {
    initial_queued: u64,
    initial_fill: u64,
    pushed: u64,
    delivered: u64,
    mbs_drops: u64,
    discards: u64,
    played: u64,
    vehicle_drops: u64,
}

impl ConservationAudit {
    pub fn new(start: &NetworkState) -> Self {
        Self {
            initial_queued: start.queues.total(),
            initial_fill: start.vehicle_side.buffers.iter().map(|&b| u64::from(b)).sum(),
            ..Self::default()
        }
    }

    pub fn observe(&mut self, o: &StepOutcome) -> Result<(), String> {
        let e = &o.events;
        self.pushed += e.pushed_chunks;
        self.delivered += e.delivered_chunks;
        self.mbs_drops += e.mbs_drops;
        self.discards += e.handoff_discards;
        self.played += e.played_chunks;
        self.vehicle_drops += e.vehicle_drops;
        let queued = o.next_state.queues.total();
        let buffered: u64 = o.next_state.vehicle_side.buffers.iter().map(|&b| u64::from(b)).sum();
        let lhs = self.initial_queued + self.pushed;
        let rhs = self.delivered + self.mbs_drops + self.discards + queued;
        if lhs != rhs {
            return Err(format!("chunks: queued0 + pushed = {lhs}, delivered + drops + discards + queued = {rhs}"));
        }
        let lhs = self.initial_fill + self.delivered;
        let rhs = self.played + self.vehicle_drops + buffered;
        if lhs != rhs {
            return Err(format!("buffers: fill0 + delivered = {lhs}, played + drops + buffered = {rhs}"));
        }
        Ok(())
    }
}

/// A policy ready to act.
#[derive(Debug, Clone)]
pub enum Policy {
    Learned { agent: Box<DdpgAgent>, lane: Option<usize> },
    Comp1(Comp1Policy),
}

impl Policy {
    pub fn action(&self, state: &NetworkState, cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<PushAction, ExperimentError> {
        Ok(match self {
            Policy::Learned { agent, lane } => {
                let raw = agent.act(&env::encode_state(state, cfg), false, rng)?;
                env::decode_action_lane(&raw, state, cfg, *lane)
            }
            Policy::Comp1(p) => p.action(state, cfg, rng),
        })
    }
}

/// Which episode seeds an evaluation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeSeeds {
    /// The seeds training episodes `first..` used (for matched comparisons).
    Training { first: u64 },
    /// A held-out stream.
    Evaluation,
}

impl EpisodeSeeds {
    fn base(self, seed: u64) -> (u64, u64) {
        match self {
            EpisodeSeeds::Training { first } => (seed, first),
            EpisodeSeeds::Evaluation => (derive_seed(seed, EVAL_STREAM), 0),
        }
    }
}

/// Options for [`evaluate`].
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub episodes: usize,
    pub seeds: EpisodeSeeds,
    /// Check state invariants and conservation on every slot.
    pub audit: bool,
}

/// Runs `policy` without learning and returns one row per episode.
pub fn evaluate(
    cfg: &SimConfig,
    mobility: &MobilitySource,
    policy: &Policy,
    seed: u64,
    opts: EvalOptions,
) -> Result<Vec<EpisodeMetrics>, ExperimentError> {
    let mut env = Env::with_mobility(cfg, mobility.clone(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, COMP1_STREAM));
    let (base, first) = opts.seeds.base(seed);
    let mut rows = Vec::with_capacity(opts.episodes);
    for e in 0..opts.episodes {
        env.reset(derive_seed(base, first + e as u64));
        let mut audit = ConservationAudit::new(env.state());
        let mut totals = EpisodeTotals::default();
        for slot in 0..cfg.episode_len {
            let action = policy.action(env.state(), cfg, &mut rng)?;
            let outcome = env.step(&action)?;
            if opts.audit {
                audit
                    .observe(&outcome)
                    .map_err(|what| ExperimentError::Conservation { slot, what })?;
                outcome
                    .next_state
                    .check_invariants(cfg)
                    .map_err(|what| ExperimentError::Invariant { slot, what })?;
            }
            totals.add(&outcome);
        }
        rows.push(totals.finish(e));
    }
    Ok(rows)
}

pub fn mobility_for(cfg: &SimConfig) -> Result<MobilitySource, ExperimentError> {
    Ok(Env::new(cfg, 0)?.mobility().clone())
}

/// Trains a learned policy; Comp2 kinds use their own reward and lane.
pub fn train_policy(
    cfg: &SimConfig,
    mobility: &MobilitySource,
    kind: PolicyKind,
    seed: u64,
    episodes: usize,
    exec: Execution,
) -> Result<(DdpgAgent, Vec<EpisodeMetrics>), ExperimentError> {
    let reward = match kind {
        PolicyKind::Comp2(_) => RewardKind::Comp2,
        _ => RewardKind::Composite,
    };
    let mut trainer = Trainer::new(cfg, seed, reward, kind.lane(cfg))?;
    trainer.agent.exec = exec;
    let mut env = Env::with_mobility(cfg, mobility.clone(), seed);
    let log = trainer.train(&mut env, episodes)?;
    Ok((trainer.agent, log))
}

/// Writes one metrics CSV.
pub fn write_metrics(path: &Path, rows: &[EpisodeMetrics]) -> Result<(), ExperimentError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    metrics::write_csv(rows, std::io::BufWriter::new(file))?;
    Ok(())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    fs::write(path, bytes).map_err(io_err(path))
}

/// Experiment families.
#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentKind {
    /// All six policies on one network.
    Compare,
    /// `compare` repeated for each `(n_mbs, n_vehicles)` setting.
    Scale(Vec<(usize, usize)>),
    /// One checkpoint evaluated at several velocities (km/h).
    Velocity(Vec<f64>),
    /// FSMC and trace mobility side by side.
    Trace(Arc<TraceSchedule>),
}

impl ExperimentKind {
    fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Compare => "compare",
            ExperimentKind::Scale(_) => "sweep-scale",
            ExperimentKind::Velocity(_) => "sweep-velocity",
            ExperimentKind::Trace(_) => "trace",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub policies: Vec<PolicyKind>,
    pub train_episodes: usize,
    pub eval_episodes: usize,
    /// Reused by the velocity sweep (and by trace runs when present).
    pub checkpoint: Option<PathBuf>,
    pub exec: Execution,
}

#[derive(Debug, Clone, Serialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub kind: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub policies: Vec<String>,
    pub train_episodes: usize,
    pub eval_episodes: usize,
    pub schema_version: u32,
    pub checkpoints: Vec<FileRecord>,
    pub outputs: Vec<String>,
    pub config: String,
}

impl Manifest {
    pub fn new(kind: &str, cfg: &SimConfig, opts: &RunOptions) -> Self {
        Self {
            kind: kind.to_string(),
            config_hash: cfg.hash(),
            seeds: opts.seeds.clone(),
            policies: opts.policies.iter().map(|p| p.to_string()).collect(),
            train_episodes: opts.train_episodes,
            eval_episodes: opts.eval_episodes,
            schema_version: metrics::SCHEMA_VERSION,
            checkpoints: Vec::new(),
            outputs: Vec::new(),
            config: cfg.to_toml_string(),
        }
    }

    /// Writes `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), ExperimentError> {
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_bytes(&path, json.as_bytes())
    }
}

/// Writes a checkpoint and returns its record (path relative to `root`).
pub fn save_agent(agent: &DdpgAgent, path: &Path, root: &Path) -> Result<FileRecord, ExperimentError> {
    let bytes = agent.to_bytes()?;
    write_bytes(path, &bytes)?;
    Ok(FileRecord {
        path: rel(root, path),
        sha256: checkpoint_hash(&bytes),
    })
}

/// One row of `summary.csv`: mean and sample standard deviation across seeds of
/// each seed's mean over the last [`SUMMARY_WINDOW`] evaluation episodes.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub setting: String,
    pub policy: String,
    pub metric: String,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub seeds: usize,
}

pub const SUMMARY_METRICS: [&str; 9] = [
    "total_reward",
    "mean_quality",
    "mean_quality_fluctuation",
    "stall_rate",
    "mbs_drop_rate",
    "vehicle_drop_rate",
    "transmission_efficiency",
    "backhaul_chunks",
    "backhaul_bits",
];

pub fn summarize(setting: &str, policy: &str, per_seed: &[Vec<EpisodeMetrics>]) -> Vec<SummaryRow> {
    SUMMARY_METRICS
        .iter()
        .map(|&metric| {
            let vals: Vec<f64> = per_seed
                .iter()
                .filter_map(|rows| {
                    let tail = &rows[rows.len().saturating_sub(SUMMARY_WINDOW)..];
                    metrics::column_mean(tail, metric)
                })
                .collect();
            let n = vals.len();
            let mean = (n > 0).then(|| vals.iter().sum::<f64>() / n as f64);
            let std = mean.filter(|_| n > 1).map(|m| {
                (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64).sqrt()
            });
            SummaryRow {
                setting: setting.to_string(),
                policy: policy.to_string(),
                metric: metric.to_string(),
                mean,
                std,
                seeds: n,
            }
        })
        .collect()
}

/// Result of one (setting, policy, seed) cell.
struct CellResult {
    setting: String,
    policy: String,
    eval: Vec<EpisodeMetrics>,
    outputs: Vec<String>,
    checkpoint: Option<FileRecord>,
}

#[derive(Debug, Clone)]
struct Cell {
    setting: String,
    cfg: SimConfig,
    mobility: MobilitySource,
    kind: PolicyKind,
    seed: u64,
    /// Pretrained agent for learned kinds, if any.
    pretrained: Option<DdpgAgent>,
}

fn run_cell(cell: &Cell, opts: &RunOptions) -> Result<CellResult, ExperimentError> {
    let dir = opts.out_dir.join(&cell.setting);
    let stem = format!("{}_seed{}", cell.kind, cell.seed);
    let mut outputs = Vec::new();
    let mut checkpoint = None;
    let policy = match cell.kind {
        PolicyKind::Comp1 { fraction } => Policy::Comp1(Comp1Policy::from_fraction(fraction, &cell.cfg)?),
        kind => {
            let agent = match &cell.pretrained {
                Some(agent) => agent.clone(),
                None => {
                    let (agent, log) = train_policy(&cell.cfg, &cell.mobility, kind, cell.seed, opts.train_episodes, opts.exec)?;
                    let log_path = dir.join(format!("train_{stem}.csv"));
                    write_metrics(&log_path, &log)?;
                    outputs.push(rel(&opts.out_dir, &log_path));
                    let ckpt = dir.join(format!("{stem}.ckpt"));
                    checkpoint = Some(save_agent(&agent, &ckpt, &opts.out_dir)?);
                    agent
                }
            };
            Policy::Learned {
                agent: Box::new(agent),
                lane: kind.lane(&cell.cfg),
            }
        }
    };
    let eval = evaluate(
        &cell.cfg,
        &cell.mobility,
        &policy,
        cell.seed,
        EvalOptions {
            episodes: opts.eval_episodes,
            seeds: EpisodeSeeds::Evaluation,
            audit: true,
        },
    )?;
    let eval_path = dir.join(format!("eval_{stem}.csv"));
    write_metrics(&eval_path, &eval)?;
    outputs.push(rel(&opts.out_dir, &eval_path));
    Ok(CellResult {
        setting: cell.setting.clone(),
        policy: cell.kind.to_string(),
        eval,
        outputs,
        checkpoint,
    })
}

fn rel(root: &Path, p: &Path) -> String {
    p.strip_prefix(root).unwrap_or(p).display().to_string()
}

pub fn load_agent(path: &Path, cfg: &SimConfig) -> Result<(DdpgAgent, FileRecord), ExperimentError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let agent = DdpgAgent::from_bytes(&bytes)?;
    if agent.state_dim() != cfg.state_dim() || agent.action_dim() != cfg.action_dim() {
        return Err(ExperimentError::CheckpointShape(format!(
            "network is {}→{}, config needs {}→{}",
            agent.state_dim(),
            agent.action_dim(),
            cfg.state_dim(),
            cfg.action_dim()
        )));
    }
    let record = FileRecord {
        path: path.display().to_string(),
        sha256: checkpoint_hash(&bytes),
    };
    Ok((agent, record))
}

fn with_override(cfg: &SimConfig, key: &str, value: impl ToString) -> Result<SimConfig, ExperimentError> {
    Ok(cfg.apply_overrides(&[format!("{key}={}", value.to_string())])?)
}

/// Runs an experiment family and writes everything under `opts.out_dir`.
pub fn run_experiment(kind: &ExperimentKind, cfg: &SimConfig, opts: &RunOptions) -> Result<Manifest, ExperimentError> {
    let mut cells = Vec::new();
    let mut checkpoints = Vec::new();
    match kind {
        ExperimentKind::Compare => {
            let mobility = mobility_for(cfg)?;
            push_cells(&mut cells, "compare", cfg, &mobility, opts, None);
        }
        ExperimentKind::Scale(settings) => {
            for &(k, n) in settings {
                let c = cfg.apply_overrides(&[format!("n_mbs={k}"), format!("n_vehicles={n}")])?;
                let mobility = mobility_for(&c)?;
                push_cells(&mut cells, &format!("K{k}_N{n}"), &c, &mobility, opts, None);
            }
        }
        ExperimentKind::Velocity(velocities) => {
            let path = opts.checkpoint.as_ref().ok_or(ExperimentError::MissingCheckpoint)?;
            let (agent, record) = load_agent(path, cfg)?;
            checkpoints.push(record);
            for &v in velocities {
                let c = with_override(cfg, "velocity_kmh", v)?;
                let c = c.apply_overrides(&["mobility_mode=\"fsmc\"".to_string()])?;
                let mobility = MobilitySource::Fsmc { rho: c.rho() };
                push_cells(&mut cells, &format!("v{v}"), &c, &mobility, opts, Some(&agent));
            }
        }
        ExperimentKind::Trace(schedule) => {
            let pretrained = match &opts.checkpoint {
                Some(path) => {
                    let (agent, record) = load_agent(path, cfg)?;
                    checkpoints.push(record);
                    Some(agent)
                }
                None => None,
            };
            let fsmc = MobilitySource::Fsmc { rho: cfg.rho() };
            push_cells(&mut cells, "fsmc", cfg, &fsmc, opts, pretrained.as_ref());
            let trace = MobilitySource::Trace(schedule.clone());
            let mut tcfg = cfg.clone();
            tcfg.mobility_mode = MobilityMode::Trace;
            push_cells(&mut cells, "trace", &tcfg, &trace, opts, pretrained.as_ref());
        }
    }
    for setting in cells.iter().map(|c| c.setting.clone()).collect::<std::collections::BTreeSet<_>>() {
        let dir = opts.out_dir.join(setting);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }

    let results = par::map_slice(&cells, opts.exec, |cell| run_cell(cell, opts));
    let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut summary = Vec::new();
    let mut outputs = Vec::new();
    let mut seen = Vec::new();
    for r in &results {
        outputs.extend(r.outputs.iter().cloned());
        checkpoints.extend(r.checkpoint.iter().cloned());
        let key = (r.setting.clone(), r.policy.clone());
        if !seen.contains(&key) {
            seen.push(key);
        }
    }
    for (setting, policy) in &seen {
        let per_seed: Vec<Vec<EpisodeMetrics>> = results
            .iter()
            .filter(|r| &r.setting == setting && &r.policy == policy)
            .map(|r| r.eval.clone())
            .collect();
        summary.extend(summarize(setting, policy, &per_seed));
    }
    let summary_path = opts.out_dir.join("summary.csv");
    {
        let file = fs::File::create(&summary_path).map_err(io_err(&summary_path))?;
        let mut w = csv::Writer::from_writer(file);
        for row in &summary {
            w.serialize(row)?;
        }
        w.flush().map_err(io_err(&summary_path))?;
    }
    outputs.push("summary.csv".to_string());

    let mut manifest = Manifest::new(kind.name(), cfg, opts);
    manifest.checkpoints = checkpoints;
    manifest.outputs = outputs;
    manifest.write(&opts.out_dir)?;
    Ok(manifest)
}

fn push_cells(
    cells: &mut Vec<Cell>,
    setting: &str,
    cfg: &SimConfig,
    mobility: &MobilitySource,
    opts: &RunOptions,
    pretrained: Option<&DdpgAgent>,
) {
    for &seed in &opts.seeds {
        for &kind in &opts.policies {
            // a pretrained checkpoint stands in for the ddpg policy only
            let pre = match (kind, pretrained) {
                (PolicyKind::Ddpg, Some(a)) => Some(a.clone()),
                (PolicyKind::Comp2(_), Some(_)) => continue,
                _ => None,
            };
            cells.push(Cell {
                setting: setting.to_string(),
                cfg: cfg.clone(),
                mobility: mobility.clone(),
                kind,
                seed,
                pretrained: pre,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SimConfig {
        SimConfig::desk()
            .apply_overrides(&[
                "hidden_layers=[8]".into(),
                "episode_len=10".into(),
                "batch_size=8".into(),
                "warmup=8".into(),
            ])
            .unwrap()
    }

    #[test]
    fn audit_catches_tampering() {
        let cfg = tiny();
        let mut env = Env::new(&cfg, 1).unwrap();
        let mut audit = ConservationAudit::new(env.state());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let policy = Policy::Comp1(Comp1Policy::new(10, &cfg).unwrap());
        for _ in 0..5 {
            let a = policy.action(env.state(), &cfg, &mut rng).unwrap();
            let o = env.step(&a).unwrap();
            audit.observe(&o).unwrap();
        }
        let a = policy.action(env.state(), &cfg, &mut rng).unwrap();
        let mut o = env.step(&a).unwrap();
        o.events.mbs_drops += 1;
        assert!(audit.observe(&o).is_err());
    }

    #[test]
    fn matched_seeds_share_channels() {
        let cfg = tiny();
        let mobility = mobility_for(&cfg).unwrap();
        let opts = EvalOptions {
            episodes: 2,
            seeds: EpisodeSeeds::Evaluation,
            audit: true,
        };
        let a = evaluate(&cfg, &mobility, &Policy::Comp1(Comp1Policy::new(5, &cfg).unwrap()), 3, opts).unwrap();
        let b = evaluate(&cfg, &mobility, &Policy::Comp1(Comp1Policy::new(60, &cfg).unwrap()), 3, opts).unwrap();
        assert_eq!(a.len(), 2);
        assert_ne!(a, b);
        // positions are action independent, so active slots agree
        let agent = DdpgAgent::new(&cfg, 0).unwrap();
        let c = evaluate(&cfg, &mobility, &Policy::Learned { agent: Box::new(agent), lane: None }, 3, opts).unwrap();
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn summary_uses_sample_std() {
        let mk = |eff: f64| {
            let mut t = EpisodeTotals {
                slots: 1,
                pushed_chunks: 10,
                ..Default::default()
            };
            t.delivered_chunks = (eff * 10.0) as u64;
            vec![t.finish(0)]
        };
        let rows = summarize("s", "p", &[mk(0.2), mk(0.4)]);
        let eff = rows.iter().find(|r| r.metric == "transmission_efficiency").unwrap();
        assert!((eff.mean.unwrap() - 0.3).abs() < 1e-12);
        assert!((eff.std.unwrap() - 0.02f64.sqrt()).abs() < 1e-12);
        let single = summarize("s", "p", &[mk(0.2)]);
        assert_eq!(single[0].std, None);
    }

    #[test]
    fn velocity_sweep_requires_checkpoint() {
        let opts = RunOptions {
            out_dir: std::env::temp_dir(),
            seeds: vec![1],
            policies: vec![PolicyKind::Ddpg],
            train_episodes: 1,
            eval_episodes: 1,
            checkpoint: None,
            exec: Execution::Sequential,
        };
        let err = run_experiment(&ExperimentKind::Velocity(vec![49.0]), &tiny(), &opts).unwrap_err();
        assert!(matches!(err, ExperimentError::MissingCheckpoint));
    }
}
