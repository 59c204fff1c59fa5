//! Per-episode metrics from summed integer event counts.

use serde::{Deserialize, Serialize};

use crate::env::StepOutcome;

pub const SCHEMA_VERSION: u32 = 1;

/// Running sums over the slots of one episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeTotals {
    pub slots: u64,
    pub pushed_chunks: u64,
    pub pushed_bits: f64,
    pub delivered_chunks: u64,
    pub mbs_drops: u64,
    pub vehicle_drops: u64,
    pub handoff_discards: u64,
    pub played_chunks: u64,
    pub active_vehicle_slots: u64,
    pub active_stalls: u64,
    pub delivered_quality_sum: f64,
    pub fluctuation_sum: f64,
    pub fluctuation_count: u64,
    pub reward: f64,
    pub reward_quality: f64,
    pub reward_drop: f64,
    pub reward_stall: f64,
    /// Reward the learner was trained on (differs from `reward` for Comp2).
    pub training_reward: f64,
}

impl EpisodeTotals {
    pub fn add(&mut self, o: &StepOutcome) {
        self.add_with_training_reward(o, o.reward);
    }

    pub fn add_with_training_reward(&mut self, o: &StepOutcome, training_reward: f64) {
        let e = &o.events;
        self.slots += 1;
        self.pushed_chunks += e.pushed_chunks;
        self.pushed_bits += e.pushed_bits;
        self.delivered_chunks += e.delivered_chunks;
        self.mbs_drops += e.mbs_drops;
        self.vehicle_drops += e.vehicle_drops;
        self.handoff_discards += e.handoff_discards;
        self.played_chunks += e.played_chunks;
        self.active_vehicle_slots += e.active_vehicle_slots;
        self.active_stalls += e.active_stalls;
        self.delivered_quality_sum += e.delivered_quality_sum;
        self.fluctuation_sum += e.fluctuation_sum;
        self.fluctuation_count += e.fluctuation_count;
        self.reward += o.reward;
        self.reward_quality += o.reward_quality;
        self.reward_drop += o.reward_drop;
        self.reward_stall += o.reward_stall;
        self.training_reward += training_reward;
    }

    pub fn finish(&self, episode: usize) -> EpisodeMetrics {
        let ratio = |num: f64, den: u64| (den > 0).then(|| num / den as f64);
        EpisodeMetrics {
            schema_version: SCHEMA_VERSION,
            episode,
            slots: self.slots,
            backhaul_chunks: self.pushed_chunks,
            backhaul_bits: self.pushed_bits,
            mean_quality: ratio(self.delivered_quality_sum, self.delivered_chunks),
            mean_quality_fluctuation: ratio(self.fluctuation_sum, self.fluctuation_count),
            stall_rate: ratio(self.active_stalls as f64, self.active_vehicle_slots),
            mbs_drop_rate: ratio(self.mbs_drops as f64, self.pushed_chunks),
            vehicle_drop_rate: ratio(self.vehicle_drops as f64, self.delivered_chunks),
            transmission_efficiency: ratio(self.delivered_chunks as f64, self.pushed_chunks),
            total_reward: self.reward,
            reward_quality: self.reward_quality,
            reward_drop: self.reward_drop,
            reward_stall: self.reward_stall,
            training_reward: self.training_reward,
            critic_loss: None,
            actor_objective: None,
        }
    }
}

/// One CSV row. Undefined ratios (zero denominators) serialize as empty fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub schema_version: u32,
    pub episode: usize,
    pub slots: u64,
    pub backhaul_chunks: u64,
    pub backhaul_bits: f64,
    pub mean_quality: Option<f64>,
    pub mean_quality_fluctuation: Option<f64>,
    pub stall_rate: Option<f64>,
    pub mbs_drop_rate: Option<f64>,
    pub vehicle_drop_rate: Option<f64>,
    pub transmission_efficiency: Option<f64>,
    pub total_reward: f64,
    pub reward_quality: f64,
    pub reward_drop: f64,
    pub reward_stall: f64,
    pub training_reward: f64,
    pub critic_loss: Option<f64>,
    pub actor_objective: Option<f64>,
}

impl EpisodeMetrics {
    pub fn all_finite(&self) -> bool {
        let opt = [
            self.mean_quality,
            self.mean_quality_fluctuation,
            self.stall_rate,
            self.mbs_drop_rate,
            self.vehicle_drop_rate,
            self.transmission_efficiency,
            self.critic_loss,
            self.actor_objective,
        ];
        opt.iter().flatten().all(|x| x.is_finite())
            && [self.backhaul_bits, self.total_reward, self.training_reward].iter().all(|x| x.is_finite())
    }

    /// Looks up a numeric column by its CSV name.
    pub fn field(&self, name: &str) -> Option<f64> {
        match name {
            "episode" => Some(self.episode as f64),
            "backhaul_chunks" => Some(self.backhaul_chunks as f64),
            "backhaul_bits" => Some(self.backhaul_bits),
            "mean_quality" => self.mean_quality,
            "mean_quality_fluctuation" => self.mean_quality_fluctuation,
            "stall_rate" => self.stall_rate,
            "mbs_drop_rate" => self.mbs_drop_rate,
            "vehicle_drop_rate" => self.vehicle_drop_rate,
            "transmission_efficiency" => self.transmission_efficiency,
            "total_reward" => Some(self.total_reward),
            "reward_quality" => Some(self.reward_quality),
            "reward_drop" => Some(self.reward_drop),
            "reward_stall" => Some(self.reward_stall),
            "training_reward" => Some(self.training_reward),
            "critic_loss" => self.critic_loss,
            "actor_objective" => self.actor_objective,
            _ => None,
        }
    }
}

/// Aggregates one episode's step outcomes.
pub fn aggregate(episode: usize, outcomes: &[StepOutcome]) -> EpisodeMetrics {
    let mut totals = EpisodeTotals::default();
    outcomes.iter().for_each(|o| totals.add(o));
    totals.finish(episode)
}

/// Mean of a column over the rows where it is defined.
pub fn column_mean(rows: &[EpisodeMetrics], name: &str) -> Option<f64> {
    let vals: Vec<f64> = rows.iter().filter_map(|r| r.field(name)).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

pub fn write_csv<W: std::io::Write>(rows: &[EpisodeMetrics], w: W) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum SchemaError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("unsupported schema version {0} (expected {SCHEMA_VERSION})")]
    Version(u32),
}

pub fn read_csv<R: std::io::Read>(r: R) -> Result<Vec<EpisodeMetrics>, SchemaError> {
    let mut rd = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for rec in rd.deserialize() {
        let row: EpisodeMetrics = rec?;
        if row.schema_version != SCHEMA_VERSION {
            return Err(SchemaError::Version(row.schema_version));
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn totals(pushed: u64, delivered: u64) -> EpisodeTotals {
        EpisodeTotals {
            slots: 1,
            pushed_chunks: pushed,
            delivered_chunks: delivered,
            ..Default::default()
        }
    }

    #[test]
    fn efficiency_ratio_and_undefined_case() {
        let m = totals(100, 80).finish(0);
        assert_eq!(m.transmission_efficiency, Some(0.8));
        let m = totals(0, 0).finish(0);
        assert_eq!(m.transmission_efficiency, None);
        let mut buf = Vec::new();
        write_csv(&[m], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
        let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
        let col = header.iter().position(|&h| h == "transmission_efficiency").unwrap();
        assert_eq!(row[col], "");
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![totals(10, 7).finish(0), totals(0, 0).finish(1)];
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let mut row = totals(1, 1).finish(0);
        row.schema_version = 99;
        let mut buf = Vec::new();
        write_csv(&[row], &mut buf).unwrap();
        assert!(matches!(read_csv(buf.as_slice()), Err(SchemaError::Version(99))));
    }

    #[test]
    fn column_mean_skips_undefined() {
        let rows = vec![totals(10, 5).finish(0), totals(0, 0).finish(1), totals(10, 10).finish(2)];
        assert_eq!(column_mean(&rows, "transmission_efficiency"), Some(0.75));
        assert_eq!(column_mean(&rows, "nope"), None);
    }
}
