//! Exact one-slot transition laws for tiny instances, and a chi-square harness
//! that checks the simulator against them.
//!
//! The capacity `r ~ U(0, r_max)` enters the greedy rule piecewise-constantly:
//! at each tier the outcome changes only where the remaining capacity crosses a
//! multiple of that tier's chunk size. Splitting the capacity range tier by
//! tier (highest quality first, the remainder passed down) yields a finite set
//! of intervals, each with a fixed delivery vector. Every pmf below is a ratio
//! of interval lengths to `r_max`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::env::{self, derive_seed, ChunkTensor, PushAction, VehicleSideState};
use crate::mobility::{fsmc_step, position_transition_prob, PositionVector};
use crate::par::{self, Execution};

pub const MAX_LEVELS: usize = 3;
pub const MAX_QUEUE: u32 = 10;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OracleError {
    #[error("instance too large for exact enumeration: {0}")]
    Scope(String),
    #[error("insufficient samples for `{target}`: pooled bin expects {expected:.2} < 5")]
    InsufficientSamples { target: String, expected: f64 },
    #[error("unknown fixture `{0}` (expected l1 or l2)")]
    UnknownFixture(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// Marginal pmf of the chunks delivered at one quality level; index = chunk count.
#[derive(Debug, Clone, PartialEq)]
pub struct DeliveryPmf(pub Vec<f64>);

impl DeliveryPmf {
    pub fn prob(&self, w: usize) -> f64 {
        self.0.get(w).copied().unwrap_or(0.0)
    }
}

/// Joint law of the greedy delivery vector for one (mBS, vehicle) pair.
#[derive(Debug, Clone)]
pub struct DeliveryLaw {
    queue_row: Vec<u32>,
    /// (probability, delivery vector)
    cells: Vec<(f64, Vec<u32>)>,
}

fn check_scope(queue_row: &[u32], chunk_sizes: &[f64], r_max: f64) -> Result<(), OracleError> {
    if queue_row.len() != chunk_sizes.len() {
        return Err(OracleError::Invalid("queue row and chunk sizes differ in length".into()));
    }
    if queue_row.is_empty() || queue_row.len() > MAX_LEVELS {
        return Err(OracleError::Scope(format!("{} quality levels (max {MAX_LEVELS})", queue_row.len())));
    }
    if let Some(c) = queue_row.iter().find(|&&c| c > MAX_QUEUE) {
        return Err(OracleError::Scope(format!("queue entry {c} (max {MAX_QUEUE})")));
    }
    if r_max.is_nan() || r_max <= 0.0 || chunk_sizes.iter().any(|&s| s.is_nan() || s <= 0.0) {
        return Err(OracleError::Invalid("sizes and r_max must be positive".into()));
    }
    Ok(())
}

impl DeliveryLaw {
    pub fn new(queue_row: &[u32], chunk_sizes: &[f64], r_max: f64) -> Result<Self, OracleError> {
        check_scope(queue_row, chunk_sizes, r_max)?;
        let mut cells = Vec::new();
        let mut w = vec![0; queue_row.len()];
        split_tier(queue_row, chunk_sizes, queue_row.len(), 0.0, r_max, &mut w, &mut cells);
        let cells = cells.into_iter().map(|(len, w)| (len / r_max, w)).collect();
        Ok(Self {
            queue_row: queue_row.to_vec(),
            cells,
        })
    }

    pub fn cells(&self) -> &[(f64, Vec<u32>)] {
        &self.cells
    }

    pub fn marginal(&self, q: usize) -> DeliveryPmf {
        let mut pmf = vec![0.0; self.queue_row[q] as usize + 1];
        for (p, w) in &self.cells {
            pmf[w[q] as usize] += p;
        }
        DeliveryPmf(pmf)
    }

    /// Pmf of the total number of chunks delivered.
    pub fn total(&self) -> Vec<f64> {
        let max: u32 = self.queue_row.iter().sum();
        let mut pmf = vec![0.0; max as usize + 1];
        for (p, w) in &self.cells {
            pmf[w.iter().sum::<u32>() as usize] += p;
        }
        pmf
    }
}

/// Partitions remaining capacity `[lo, hi)` at tier `tier - 1` and recurses.
fn split_tier(
    queue_row: &[u32],
    sizes: &[f64],
    tier: usize,
    lo: f64,
    hi: f64,
    w: &mut Vec<u32>,
    out: &mut Vec<(f64, Vec<u32>)>,
) {
    if hi <= lo {
        return;
    }
    if tier == 0 {
        out.push((hi - lo, w.clone()));
        return;
    }
    let q = tier - 1;
    let size = sizes[q];
    for k in 0..=queue_row[q] {
        let start = f64::from(k) * size;
        let end = if k == queue_row[q] {
            f64::INFINITY
        } else {
            f64::from(k + 1) * size
        };
        let (a, b) = (lo.max(start), hi.min(end));
        if b > a {
            w[q] = k;
            split_tier(queue_row, sizes, q, a - start, b - start, w, out);
        }
    }
    w[q] = 0;
}

/// Marginal delivery pmf per quality level.
pub fn delivery_pmf(queue_row: &[u32], chunk_sizes: &[f64], r_max: f64) -> Result<Vec<DeliveryPmf>, OracleError> {
    let law = DeliveryLaw::new(queue_row, chunk_sizes, r_max)?;
    Ok((0..queue_row.len()).map(|q| law.marginal(q)).collect())
}

/// Pmf over `c' ∈ 0..=c̄` for one queue entry: `c' = min(c - w + l, c̄)`,
/// with the mass beyond `c̄` folded onto `c̄`.
pub fn queue_transition_pmf(c: u32, l: u32, queue_cap: u32, delivery: &DeliveryPmf) -> Result<Vec<f64>, OracleError> {
    if c > MAX_QUEUE {
        return Err(OracleError::Scope(format!("queue entry {c} (max {MAX_QUEUE})")));
    }
    if c > queue_cap || l > queue_cap {
        return Err(OracleError::Invalid("queue entry or push exceeds the cap".into()));
    }
    let mut pmf = vec![0.0; queue_cap as usize + 1];
    for w in 0..=c {
        let next = (c - w + l).min(queue_cap);
        pmf[next as usize] += delivery.prob(w as usize);
    }
    Ok(pmf)
}

/// Pmf over `b' ∈ 0..=b̄` for one vehicle: `b' = min(max(b - F, 0) + Σ_q w_q, b̄)`.
/// Tiers are composed conditionally: the capacity left after tier `q` is
/// what tier `q - 1` sees.
pub fn buffer_transition_pmf(
    b: u32,
    law: &DeliveryLaw,
    playback_rate: u32,
    buffer_cap: u32,
) -> Vec<f64> {
    let base = b.saturating_sub(playback_rate);
    let mut pmf = vec![0.0; buffer_cap as usize + 1];
    for (p, w) in law.cells() {
        let next = (base + w.iter().sum::<u32>()).min(buffer_cap);
        pmf[next as usize] += p;
    }
    pmf
}

/// The tier product with per-tier marginals treated as independent and each
/// lower tier served only after the higher one is exhausted. Matches
/// [`buffer_transition_pmf`] with one quality level; with more, it ignores
/// lower-tier chunks that fit alongside a partially served higher tier.
pub fn independent_tier_buffer_pmf(
    b: u32,
    queue_row: &[u32],
    marginals: &[DeliveryPmf],
    playback_rate: u32,
    buffer_cap: u32,
) -> Vec<f64> {
    let base = b.saturating_sub(playback_rate) as usize;
    let total: u32 = queue_row.iter().sum();
    let mut pmf = vec![0.0; buffer_cap as usize + 1];
    for extra in 0..=total as usize {
        // find the tier whose range contains `extra`
        let mut above = 0usize;
        let mut prob = 0.0;
        for q in (0..queue_row.len()).rev() {
            let c = queue_row[q] as usize;
            let in_first = q + 1 == queue_row.len() && extra <= c;
            if in_first || (extra > above && extra <= above + c) {
                let exhausted: f64 = (q + 1..queue_row.len())
                    .map(|h| marginals[h].prob(queue_row[h] as usize))
                    .product();
                prob = exhausted * marginals[q].prob(extra - above);
                break;
            }
            above += c;
        }
        let next = (base + extra).min(buffer_cap as usize);
        pmf[next] += prob;
    }
    pmf
}

/// Greedy delivery rule used by the validation harness (swap in a corrupted
/// one for negative controls).
pub type DeliveryRule = fn(&[u32], f64, &[f64]) -> Vec<u32>;

/// High-quality-first rule that rounds the top tier up: a deliberately wrong rule.
pub fn corrupted_rule(queue_row: &[u32], capacity: f64, chunk_sizes: &[f64]) -> Vec<u32> {
    let mut w = env::deliver_high_quality_first(queue_row, capacity, chunk_sizes);
    let top = w.len() - 1;
    if w[top] < queue_row[top] && capacity > 0.0 {
        w[top] += 1;
    }
    w
}

/// Single-mBS, single-vehicle validation setup.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub name: &'static str,
    pub chunk_sizes: Vec<f64>,
    pub bitrates: Vec<f64>,
    pub r_max: f64,
    pub queue_row: Vec<u32>,
    pub push: Vec<u32>,
    pub queue_cap: u32,
    pub buffer: u32,
    pub playback_rate: u32,
    pub buffer_cap: u32,
    pub rho: f64,
}

impl Fixture {
    pub fn l1() -> Self {
        Self {
            name: "l1",
            chunk_sizes: vec![10.0],
            bitrates: vec![10.0],
            r_max: 35.0,
            queue_row: vec![3],
            push: vec![1],
            queue_cap: 3,
            buffer: 6,
            playback_rate: 2,
            buffer_cap: 6,
            rho: 0.2,
        }
    }

    pub fn l2() -> Self {
        Self {
            name: "l2",
            chunk_sizes: vec![3.0, 8.0],
            bitrates: vec![3.0, 8.0],
            r_max: 30.0,
            queue_row: vec![2, 2],
            push: vec![1, 0],
            queue_cap: 3,
            buffer: 5,
            playback_rate: 2,
            buffer_cap: 7,
            rho: 0.2,
        }
    }

    pub fn by_name(name: &str) -> Result<Self, OracleError> {
        match name {
            "l1" => Ok(Self::l1()),
            "l2" => Ok(Self::l2()),
            other => Err(OracleError::UnknownFixture(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChiSquareResult {
    pub target: String,
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub bins: usize,
    pub samples: u64,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub fixture: String,
    pub samples: u64,
    pub results: Vec<ChiSquareResult>,
    pub advance_fraction: f64,
}

impl ValidationReport {
    pub fn min_p_value(&self) -> f64 {
        self.results.iter().map(|r| r.p_value).fold(1.0, f64::min)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("fixture,target,samples,bins,dof,statistic,p_value\n");
        for r in &self.results {
            s.push_str(&format!(
                "{},{},{},{},{},{:.6},{:.6e}\n",
                self.fixture, r.target, r.samples, r.bins, r.dof, r.statistic, r.p_value
            ));
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("fixture {} ({} samples)\n", self.fixture, self.samples);
        for r in &self.results {
            s.push_str(&format!(
                "  {:<14} chi2 = {:>10.3}  dof = {:>2}  p = {:.4e}\n",
                r.target, r.statistic, r.dof, r.p_value
            ));
        }
        s.push_str(&format!("  advance fraction = {:.5}\n", self.advance_fraction));
        s
    }
}

/// Pearson chi-square with adjacent bins pooled until each expects >= 5.
pub fn chi_square(target: &str, observed: &[u64], probs: &[f64]) -> Result<ChiSquareResult, OracleError> {
    assert_eq!(observed.len(), probs.len());
    let n: u64 = observed.iter().sum();
    let nf = n as f64;
    let mut statistic = 0.0;
    // mass observed where the model puts none
    if observed.iter().zip(probs).any(|(&o, &p)| o > 0 && p <= 0.0) {
        statistic = f64::INFINITY;
    }
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    let (mut acc_e, mut acc_o) = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probs) {
        if p <= 0.0 {
            continue;
        }
        acc_e += p * nf;
        acc_o += o as f64;
        if acc_e >= 5.0 {
            pooled.push((acc_o, acc_e));
            acc_e = 0.0;
            acc_o = 0.0;
        }
    }
    if acc_e > 0.0 {
        match pooled.last_mut() {
            Some(last) => {
                last.0 += acc_o;
                last.1 += acc_e;
            }
            None => pooled.push((acc_o, acc_e)),
        }
    }
    if let Some(&(_, e)) = pooled.iter().find(|&&(_, e)| e < 5.0) {
        return Err(OracleError::InsufficientSamples {
            target: target.to_string(),
            expected: e,
        });
    }
    let bins = pooled.len();
    if statistic.is_finite() {
        statistic = pooled.iter().map(|&(o, e)| (o - e) * (o - e) / e).sum();
    }
    let dof = bins.saturating_sub(1);
    let p_value = if statistic.is_infinite() {
        0.0
    } else if dof == 0 {
        1.0
    } else {
        ChiSquared::new(dof as f64).expect("positive dof").sf(statistic)
    };
    Ok(ChiSquareResult {
        target: target.to_string(),
        statistic,
        dof,
        p_value,
        bins,
        samples: n,
    })
}

const BLOCKS: usize = 16;

struct Counts {
    queue: Vec<Vec<u64>>,
    buffer: Vec<u64>,
    position: Vec<u64>,
}

/// Runs the simulator's one-slot path (capacity draw, delivery, push recursion,
/// buffer update, FSMC step) `samples` times from the fixture's fixed state and
/// compares the frequencies with the analytic pmfs.
pub fn validate_empirical(
    fixture: &Fixture,
    samples: u64,
    rule: DeliveryRule,
    seed: u64,
    exec: Execution,
) -> Result<ValidationReport, OracleError> {
    let levels = fixture.queue_row.len();
    let law = DeliveryLaw::new(&fixture.queue_row, &fixture.chunk_sizes, fixture.r_max)?;
    let queue_targets: Vec<Vec<f64>> = (0..levels)
        .map(|q| queue_transition_pmf(fixture.queue_row[q], fixture.push[q], fixture.queue_cap, &law.marginal(q)))
        .collect::<Result<_, _>>()?;
    let buffer_target = buffer_transition_pmf(fixture.buffer, &law, fixture.playback_rate, fixture.buffer_cap);
    // single vehicle, K = 1, starting in cell 1: stays (1 - rho) or leaves (rho)
    let from = PositionVector(vec![1]);
    let position_target: Vec<f64> = (0..=2u32)
        .map(|cell| position_transition_prob(&from, &PositionVector(vec![cell]), fixture.rho, 1).unwrap())
        .collect();

    let ranges = par::partition(samples as usize, BLOCKS);
    let blocks = par::map_slice(&ranges, exec, |range| {
        let block = range.start as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, block));
        simulate_block(fixture, rule, range.len(), &mut rng)
    });
    let mut total = Counts {
        queue: queue_targets.iter().map(|t| vec![0; t.len()]).collect(),
        buffer: vec![0; buffer_target.len()],
        position: vec![0; 3],
    };
    for b in &blocks {
        for (acc, part) in total.queue.iter_mut().zip(&b.queue) {
            acc.iter_mut().zip(part).for_each(|(a, x)| *a += x);
        }
        total.buffer.iter_mut().zip(&b.buffer).for_each(|(a, x)| *a += x);
        total.position.iter_mut().zip(&b.position).for_each(|(a, x)| *a += x);
    }

    let mut results = Vec::new();
    for (q, (observed, target)) in total.queue.iter().zip(&queue_targets).enumerate().take(levels) {
        results.push(chi_square(&format!("queue_q{}", q + 1), observed, target)?);
    }
    results.push(chi_square("buffer", &total.buffer, &buffer_target)?);
    results.push(chi_square("position", &total.position, &position_target)?);
    Ok(ValidationReport {
        fixture: fixture.name.to_string(),
        samples,
        results,
        advance_fraction: total.position[2] as f64 / samples.max(1) as f64,
    })
}

fn simulate_block(fixture: &Fixture, rule: DeliveryRule, n: usize, rng: &mut ChaCha8Rng) -> Counts {
    let levels = fixture.queue_row.len();
    let queues = ChunkTensor::from_vec(1, 1, levels, fixture.queue_row.clone());
    let action = PushAction {
        l: ChunkTensor::from_vec(1, 1, levels, fixture.push.clone()),
    };
    let side = VehicleSideState {
        buffers: vec![fixture.buffer],
        delivered: vec![0],
        avg_quality: vec![0.0],
    };
    let position = PositionVector(vec![1]);
    let mut counts = Counts {
        queue: (0..levels).map(|_| vec![0; fixture.queue_cap as usize + 1]).collect(),
        buffer: vec![0; fixture.buffer_cap as usize + 1],
        position: vec![0; 3],
    };
    for _ in 0..n {
        let caps = env::sample_capacities(&position, 1, fixture.r_max, rng).expect("positive r_max");
        let w = rule(&fixture.queue_row, caps[0], &fixture.chunk_sizes);
        let w_tensor = ChunkTensor::from_vec(1, 1, levels, w.clone());
        let (next, _) = env::apply_push(&queues, &action, &w_tensor, fixture.queue_cap).expect("fixture shapes");
        for q in 0..levels {
            counts.queue[q][next.get(0, 0, q) as usize] += 1;
        }
        let up = env::update_buffers(&side, &[w], &fixture.bitrates, fixture.playback_rate, fixture.buffer_cap);
        counts.buffer[up.vehicle_side.buffers[0] as usize] += 1;
        let moved = fsmc_step(&position, fixture.rho, 1, rng);
        counts.position[moved.0[0] as usize] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn assert_pmf(pmf: &[f64]) {
        assert!(pmf.iter().all(|&p| p >= 0.0));
        assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_level_interval_lengths() {
        let pmf = delivery_pmf(&[2], &[10.0], 25.0).unwrap();
        let expected = [10.0 / 25.0, 10.0 / 25.0, 5.0 / 25.0];
        for (p, e) in pmf[0].0.iter().zip(expected) {
            assert!((p - e).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_queue_is_point_mass() {
        let pmf = delivery_pmf(&[0], &[10.0], 25.0).unwrap();
        assert_eq!(pmf[0].0, vec![1.0]);
    }

    #[test]
    fn scope_is_enforced() {
        assert!(matches!(delivery_pmf(&[11], &[1.0], 5.0), Err(OracleError::Scope(_))));
        assert!(matches!(
            delivery_pmf(&[1, 1, 1, 1], &[1.0, 2.0, 3.0, 4.0], 5.0),
            Err(OracleError::Scope(_))
        ));
    }

    #[test]
    fn two_level_pmf_matches_monte_carlo() {
        let (row, sizes, r_max) = ([3u32, 2], [2.0, 7.0], 20.0);
        let pmf = delivery_pmf(&row, &sizes, r_max).unwrap();
        let n = 1_000_000;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = [vec![0u64; 4], vec![0u64; 3]];
        for _ in 0..n {
            let r = rng.random::<f64>() * r_max;
            let w = env::deliver_high_quality_first(&row, r, &sizes);
            counts[0][w[0] as usize] += 1;
            counts[1][w[1] as usize] += 1;
        }
        for q in 0..2 {
            assert_pmf(&pmf[q].0);
            for (w, &c) in counts[q].iter().enumerate() {
                let p = pmf[q].prob(w);
                let sigma = (p * (1.0 - p) / n as f64).sqrt();
                let freq = c as f64 / n as f64;
                assert!((freq - p).abs() <= 3.0 * sigma + 1e-12, "q{q} w{w}: {freq} vs {p}");
            }
        }
    }

    #[test]
    fn queue_pmf_is_shifted_delivery_pmf() {
        let pmf = &delivery_pmf(&[2], &[10.0], 25.0).unwrap()[0];
        let next = queue_transition_pmf(2, 1, 20, pmf).unwrap();
        assert_eq!(next[1], pmf.prob(2));
        assert_eq!(next[2], pmf.prob(1));
        assert_eq!(next[3], pmf.prob(0));
        assert_pmf(&next);
        // c̄ = c + l - 1 merges the top two masses
        let folded = queue_transition_pmf(2, 1, 2, pmf).unwrap();
        assert_eq!(folded.len(), 3);
        assert!((folded[2] - (pmf.prob(0) + pmf.prob(1))).abs() < 1e-15);
        assert_eq!(folded[1], pmf.prob(2));
    }

    #[test]
    fn no_delivery_keeps_queue() {
        let pmf = DeliveryPmf(vec![1.0, 0.0, 0.0]);
        let next = queue_transition_pmf(2, 0, 5, &pmf).unwrap();
        assert_eq!(next[2], 1.0);
    }

    #[test]
    fn single_level_buffer_pmf_is_shifted_copy() {
        let law = DeliveryLaw::new(&[2], &[10.0], 25.0).unwrap();
        let pmf = buffer_transition_pmf(7, &law, 3, 20);
        let d = law.marginal(0);
        for w in 0..=2 {
            assert_eq!(pmf[4 + w], d.prob(w));
        }
        let literal = independent_tier_buffer_pmf(7, &[2], &[d], 3, 20);
        for (a, b) in pmf.iter().zip(&literal) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_queues_give_point_mass_at_drained_buffer() {
        let law = DeliveryLaw::new(&[0, 0], &[1.0, 3.0], 10.0).unwrap();
        let pmf = buffer_transition_pmf(9, &law, 4, 12);
        assert_eq!(pmf[5], 1.0);
        let law = DeliveryLaw::new(&[0], &[1.0], 10.0).unwrap();
        assert_eq!(buffer_transition_pmf(3, &law, 4, 12)[0], 1.0);
    }

    /// Brute force: midpoint rule over a fine capacity grid, independent of the
    /// interval partition.
    fn brute_force_buffer(b: u32, row: &[u32], sizes: &[f64], r_max: f64, f: u32, cap: u32) -> Vec<f64> {
        let grid = 2_000_000;
        let mut pmf = vec![0.0; cap as usize + 1];
        for g in 0..grid {
            let r = (g as f64 + 0.5) / grid as f64 * r_max;
            let w: u32 = env::deliver_high_quality_first(row, r, sizes).iter().sum();
            pmf[(b.saturating_sub(f) + w).min(cap) as usize] += 1.0 / grid as f64;
        }
        pmf
    }

    #[test]
    fn two_tier_buffer_pmf_matches_enumeration() {
        let (row, sizes, r_max) = ([1u32, 1], [3.0, 8.0], 15.0);
        let law = DeliveryLaw::new(&row, &sizes, r_max).unwrap();
        let exact = buffer_transition_pmf(5, &law, 2, 10);
        let brute = brute_force_buffer(5, &row, &sizes, r_max, 2, 10);
        assert_pmf(&exact);
        for (a, b) in exact.iter().zip(&brute) {
            assert!((a - b).abs() < 1e-5, "{exact:?} vs {brute:?}");
        }
        // the independent-tier product misses the (1 top, 1 lower) and
        // (0 top, 1 lower) overlaps, so it disagrees here
        let marginals: Vec<_> = (0..2).map(|q| law.marginal(q)).collect();
        let literal = independent_tier_buffer_pmf(5, &row, &marginals, 2, 10);
        let gap: f64 = literal.iter().zip(&exact).map(|(a, b)| (a - b).abs()).sum();
        assert!(gap > 0.1, "{literal:?}");
    }

    #[test]
    fn fixture_l1_passes_and_negative_control_fails() {
        let fx = Fixture::l1();
        let good = validate_empirical(&fx, 100_000, env::deliver_high_quality_first, 1, Execution::Parallel).unwrap();
        assert!(good.min_p_value() > 0.01, "{}", good.to_text());
        assert!((good.advance_fraction - 0.2).abs() < 0.004);
        let bad = validate_empirical(&fx, 100_000, corrupted_rule, 1, Execution::Parallel).unwrap();
        assert!(bad.min_p_value() < 1e-6, "{}", bad.to_text());
    }

    #[test]
    fn execution_modes_agree() {
        let fx = Fixture::l2();
        let a = validate_empirical(&fx, 20_000, env::deliver_high_quality_first, 3, Execution::Sequential).unwrap();
        let b = validate_empirical(&fx, 20_000, env::deliver_high_quality_first, 3, Execution::Parallel).unwrap();
        assert_eq!(a.results, b.results);
    }

    #[test]
    fn tiny_sample_is_rejected() {
        let err = validate_empirical(&Fixture::l1(), 3, env::deliver_high_quality_first, 0, Execution::Sequential)
            .unwrap_err();
        assert!(matches!(err, OracleError::InsufficientSamples { .. }));
    }
}
