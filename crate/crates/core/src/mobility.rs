//! Vehicle-to-mBS association over time.
//!
//! Cell indices: `0` means the vehicle has not entered the highway yet,
//! `1..=K` is the serving mBS, and `K + 1` means it has left (absorbing).

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};

#[derive(Debug, thiserror::Error)]
pub enum MobilityError {
    #[error("position vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("cannot read trace {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("trace row {row}: {reason}")]
    Malformed { row: u64, reason: String },
    #[error("trace row {row}: vehicle {vehicle} moves from cell {from} to cell {to}")]
    NonMonotone {
        row: u64,
        vehicle: usize,
        from: u32,
        to: u32,
    },
    #[error("trace has no rows")]
    Empty,
    #[error("trace covers {trace} vehicles but the network has {network}")]
    VehicleCount { trace: usize, network: usize },
    #[error("trace uses cell {cell}, beyond K + 1 = {limit}")]
    CellOutOfRange { cell: u32, limit: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PositionVector(pub Vec<u32>);

impl PositionVector {
    pub fn new(cells: Vec<u32>) -> Self {
        Self(cells)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    /// True if vehicle `i` is inside the coverage of some mBS.
    pub fn on_highway(&self, i: usize, n_mbs: usize) -> bool {
        (1..=n_mbs as u32).contains(&self.0[i])
    }
}

/// One FSMC slot: every vehicle not yet departed advances with probability `rho`.
pub fn fsmc_step<R: Rng + ?Sized>(p: &PositionVector, rho: f64, n_mbs: usize, rng: &mut R) -> PositionVector {
    let departed = n_mbs as u32 + 1;
    let cells = p
        .0
        .iter()
        .map(|&cell| {
            // one draw per vehicle keeps the stream layout independent of positions
            let u: f64 = rng.random();
            if cell < departed && u < rho {
                cell + 1
            } else {
                cell
            }
        })
        .collect();
    PositionVector(cells)
}

/// Product over vehicles of the per-vehicle transition probability.
pub fn position_transition_prob(
    p: &PositionVector,
    p_next: &PositionVector,
    rho: f64,
    n_mbs: usize,
) -> Result<f64, MobilityError> {
    if p.len() != p_next.len() {
        return Err(MobilityError::LengthMismatch(p.len(), p_next.len()));
    }
    let departed = n_mbs as u32 + 1;
    Ok(p.0
        .iter()
        .zip(&p_next.0)
        .map(|(&from, &to)| {
            if from >= departed {
                if to == from {
                    1.0
                } else {
                    0.0
                }
            } else if to == from + 1 {
                rho
            } else if to == from {
                1.0 - rho
            } else {
                0.0
            }
        })
        .product())
}

/// Per-slot associations decoded from a trace file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceSchedule {
    n_vehicles: usize,
    slots: Vec<Vec<u32>>,
}

impl TraceSchedule {
    pub fn from_rows(slots: Vec<Vec<u32>>) -> Result<Self, MobilityError> {
        let n_vehicles = slots.first().ok_or(MobilityError::Empty)?.len();
        for (t, row) in slots.iter().enumerate() {
            if row.len() != n_vehicles {
                return Err(MobilityError::Malformed {
                    row: t as u64,
                    reason: format!("slot {t} has {} vehicles, expected {n_vehicles}", row.len()),
                });
            }
        }
        for t in 1..slots.len() {
            for v in 0..n_vehicles {
                let (from, to) = (slots[t - 1][v], slots[t][v]);
                if to != from && to != from + 1 {
                    return Err(MobilityError::NonMonotone {
                        row: t as u64,
                        vehicle: v,
                        from,
                        to,
                    });
                }
            }
        }
        Ok(Self { n_vehicles, slots })
    }

    pub fn horizon(&self) -> usize {
        self.slots.len()
    }

    pub fn n_vehicles(&self) -> usize {
        self.n_vehicles
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.slots
    }

    /// Associations at `slot`; past the horizon the last row repeats.
    pub fn trace_step(&self, slot: usize) -> PositionVector {
        let t = slot.min(self.slots.len() - 1);
        PositionVector(self.slots[t].clone())
    }

    pub fn check_network(&self, n_vehicles: usize, n_mbs: usize) -> Result<(), MobilityError> {
        if self.n_vehicles != n_vehicles {
            return Err(MobilityError::VehicleCount {
                trace: self.n_vehicles,
                network: n_vehicles,
            });
        }
        let limit = n_mbs as u32 + 1;
        if let Some(&cell) = self.slots.iter().flatten().find(|&&c| c > limit) {
            return Err(MobilityError::CellOutOfRange { cell, limit });
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["slot", "vehicle_id", "cell"])?;
        for (t, row) in self.slots.iter().enumerate() {
            for (v, cell) in row.iter().enumerate() {
                w.write_record([t.to_string(), v.to_string(), cell.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Parses `slot,vehicle_id,cell` rows. Rows may appear in any order but every
/// `(slot, vehicle)` pair in the rectangle must be present exactly once.
pub fn parse_trace<R: Read>(reader: R) -> Result<TraceSchedule, MobilityError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header_ok = rdr
        .headers()
        .map(|h| h.iter().collect::<Vec<_>>() == ["slot", "vehicle_id", "cell"])
        .unwrap_or(false);
    if !header_ok {
        return Err(MobilityError::Malformed {
            row: 1,
            reason: "header must be `slot,vehicle_id,cell`".into(),
        });
    }
    // (slot, vehicle, cell, line)
    let mut entries: Vec<(usize, usize, u32, u64)> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| MobilityError::Malformed {
            row: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 {
            return Err(MobilityError::Malformed {
                row: line,
                reason: format!("expected 3 fields, found {}", record.len()),
            });
        }
        let field = |idx: usize, name: &str| -> Result<u64, MobilityError> {
            record[idx].parse::<u64>().map_err(|_| MobilityError::Malformed {
                row: line,
                reason: format!("`{}` is not a valid {name}", &record[idx]),
            })
        };
        let slot = field(0, "slot")? as usize;
        let vehicle = field(1, "vehicle id")? as usize;
        let cell = u32::try_from(field(2, "cell")?).map_err(|_| MobilityError::Malformed {
            row: line,
            reason: "cell index too large".into(),
        })?;
        entries.push((slot, vehicle, cell, line));
    }
    if entries.is_empty() {
        return Err(MobilityError::Empty);
    }
    let horizon = entries.iter().map(|e| e.0).max().unwrap() + 1;
    let n_vehicles = entries.iter().map(|e| e.1).max().unwrap() + 1;
    let mut grid: Vec<Vec<Option<(u32, u64)>>> = vec![vec![None; n_vehicles]; horizon];
    for &(slot, vehicle, cell, line) in &entries {
        if grid[slot][vehicle].replace((cell, line)).is_some() {
            return Err(MobilityError::Malformed {
                row: line,
                reason: format!("duplicate entry for slot {slot}, vehicle {vehicle}"),
            });
        }
    }
    let mut slots = Vec::with_capacity(horizon);
    for (t, row) in grid.iter().enumerate() {
        let mut cells = Vec::with_capacity(n_vehicles);
        for (v, entry) in row.iter().enumerate() {
            let (cell, line) = entry.ok_or_else(|| MobilityError::Malformed {
                row: 0,
                reason: format!("missing entry for slot {t}, vehicle {v}"),
            })?;
            if t > 0 {
                let (prev, _) = grid[t - 1][v].expect("previous slot checked");
                if cell != prev && cell != prev + 1 {
                    return Err(MobilityError::NonMonotone {
                        row: line,
                        vehicle: v,
                        from: prev,
                        to: cell,
                    });
                }
            }
            cells.push(cell);
        }
        slots.push(cells);
    }
    TraceSchedule::from_rows(slots)
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<TraceSchedule, MobilityError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| MobilityError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_trace(std::io::BufReader::new(file))
}

/// Parameters of the synthetic highway trace generator.
#[derive(Debug, Clone)]
pub struct TraceGenParams {
    pub vehicles: usize,
    pub slots: usize,
    pub mean_speed_kmh: f64,
    pub coverage_m: f64,
    pub n_mbs: usize,
    /// Log-space standard deviation of the per-slot speed multiplier.
    pub speed_jitter: f64,
}

/// Continuous-position traffic: each slot a vehicle covers
/// `mean_speed * J` metres with `J ~ LogNormal(-s^2/2, s)` (mean one), capped
/// at one cell. Starting positions are uniform over `[-O, K*O)` so the initial
/// cells are spread over `{0..K}` like the FSMC reset.
pub fn generate_trace<R: Rng + ?Sized>(params: &TraceGenParams, rng: &mut R) -> TraceSchedule {
    let o = params.coverage_m;
    let k = params.n_mbs as f64;
    let step_m = params.mean_speed_kmh * 1000.0 / 3600.0;
    let s = params.speed_jitter.max(0.0);
    let jitter = LogNormal::new(-0.5 * s * s, s).expect("valid lognormal");
    let cell_of = |x: f64| -> u32 {
        if x < 0.0 {
            0
        } else if x >= k * o {
            params.n_mbs as u32 + 1
        } else {
            1 + (x / o).floor() as u32
        }
    };
    let mut x: Vec<f64> = (0..params.vehicles)
        .map(|_| rng.random_range(-o..k * o))
        .collect();
    let mut slots = Vec::with_capacity(params.slots);
    for t in 0..params.slots {
        if t > 0 {
            for xi in x.iter_mut() {
                let dx = (step_m * jitter.sample(rng)).min(o);
                *xi += dx;
            }
        }
        slots.push(x.iter().map(|&xi| cell_of(xi)).collect());
    }
    TraceSchedule::from_rows(slots).expect("generator emits monotone rows")
}

/// Where positions come from during an episode.
#[derive(Debug, Clone)]
pub enum MobilitySource {
    Fsmc { rho: f64 },
    Trace(Arc<TraceSchedule>),
}

impl MobilitySource {
    pub fn next<R: Rng + ?Sized>(
        &self,
        current: &PositionVector,
        next_slot: usize,
        n_mbs: usize,
        rng: &mut R,
    ) -> PositionVector {
        match self {
            MobilitySource::Fsmc { rho } => fsmc_step(current, *rho, n_mbs, rng),
            MobilitySource::Trace(schedule) => schedule.trace_step(next_slot),
        }
    }
}
