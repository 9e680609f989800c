//! Run records, their newline-delimited JSON form, and frame tables.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::EnergyLedger;
use crate::lattice::{HexCoord, PortionKey};
use crate::protocol::{MovePurpose, Role, SensorId};
use crate::scenario::Scenario;
use crate::{GridSpec, Point};

pub const TRACE_FORMAT: &str = "pushpull-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o")]
    Io(#[from] std::io::Error),
    #[error("line {line}")]
    Json { line: usize, source: serde_json::Error },
    #[error("not a trace: {0}")]
    Header(String),
    #[error("frames")]
    Csv(#[from] csv::Error),
}

/// Slave count and order value of one hexagon governor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateEntry {
    pub sensor: SensorId,
    pub slaves: u32,
    pub order: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSnapshot {
    pub id: SensorId,
    pub role: Role,
    pub position: Point,
    pub hex: Option<HexCoord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalSensor {
    pub id: SensorId,
    pub role: Role,
    pub position: Point,
    pub portion: Option<GridSpec>,
    pub hex: Option<HexCoord>,
    pub master: Option<SensorId>,
    pub slaves: Vec<SensorId>,
    pub incoming: Vec<SensorId>,
    pub order: u64,
    pub base_order: u64,
    pub moving: bool,
    pub energy: EnergyLedger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Record {
    Header {
        format: String,
        version: u32,
        scenario: Box<Scenario>,
        side: f64,
        initial: Vec<Point>,
    },
    Starter {
        t: f64,
        sensor: SensorId,
        portion: GridSpec,
    },
    Message {
        t: f64,
        sender: SensorId,
        kind: String,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        to: Option<SensorId>,
        deliveries: u32,
    },
    MoveIssued {
        t: f64,
        sensor: SensorId,
        from: Point,
        to: Point,
        purpose: MovePurpose,
    },
    MoveDone {
        t: f64,
        sensor: SensorId,
        at: Point,
        meters: f64,
        completed: bool,
    },
    OrderChange {
        t: f64,
        sensor: SensorId,
        from: u64,
        to: u64,
    },
    RoleChange {
        t: f64,
        sensor: SensorId,
        from: Role,
        to: Role,
    },
    /// A push agreed between two governors of one portion. Entries list the
    /// source first; potentials are `(sum s^2, sum s*order)` with `s = slaves + 1`
    /// over every governor of the portion.
    Transfer {
        t: f64,
        portion: PortionKey,
        mover: SensorId,
        pre: [StateEntry; 2],
        post: [StateEntry; 2],
        #[serde(with = "decimal_pair")]
        f_pre: (u128, u128),
        #[serde(with = "decimal_pair")]
        f_post: (u128, u128),
    },
    TriggerAbandoned {
        t: f64,
        sensor: SensorId,
        hole: HexCoord,
        ring: u32,
    },
    Anomaly {
        t: f64,
        sensor: SensorId,
        message: String,
    },
    Snapshot {
        t: f64,
        sensors: Vec<SensorSnapshot>,
    },
    Final {
        t: f64,
        terminated: bool,
        sensors: Vec<FinalSensor>,
    },
}

/// Potentials overflow 64 bits and the buffered tagged-enum decoding has no
/// 128-bit integers, so they travel as decimal strings.
mod decimal_pair {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &(u128, u128), s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeTuple;
        let mut t = s.serialize_tuple(2)?;
        t.serialize_element(&v.0.to_string())?;
        t.serialize_element(&v.1.to_string())?;
        t.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(u128, u128), D::Error> {
        let (a, b) = <(String, String)>::deserialize(d)?;
        Ok((a.parse().map_err(D::Error::custom)?, b.parse().map_err(D::Error::custom)?))
    }
}

impl Record {
    pub fn time(&self) -> f64 {
        match self {
            Record::Header { .. } => 0.0,
            Record::Starter { t, .. }
            | Record::Message { t, .. }
            | Record::MoveIssued { t, .. }
            | Record::MoveDone { t, .. }
            | Record::OrderChange { t, .. }
            | Record::RoleChange { t, .. }
            | Record::Transfer { t, .. }
            | Record::TriggerAbandoned { t, .. }
            | Record::Anomaly { t, .. }
            | Record::Snapshot { t, .. }
            | Record::Final { t, .. } => *t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub records: Vec<Record>,
}

impl Trace {
    pub fn scenario(&self) -> Option<&Scenario> {
        match self.records.first() {
            Some(Record::Header { scenario, .. }) => Some(scenario),
            _ => None,
        }
    }

    pub fn side(&self) -> Option<f64> {
        match self.records.first() {
            Some(Record::Header { side, .. }) => Some(*side),
            _ => None,
        }
    }

    pub fn final_state(&self) -> Option<(f64, bool, &[FinalSensor])> {
        match self.records.last() {
            Some(Record::Final { t, terminated, sensors }) => Some((*t, *terminated, sensors)),
            _ => None,
        }
    }

    pub fn snapshots(&self) -> impl Iterator<Item = (f64, &[SensorSnapshot])> {
        self.records.iter().filter_map(|r| match r {
            Record::Snapshot { t, sensors } => Some((*t, sensors.as_slice())),
            _ => None,
        })
    }

    pub fn anomalies(&self) -> impl Iterator<Item = &str> {
        self.records.iter().filter_map(|r| match r {
            Record::Anomaly { message, .. } => Some(message.as_str()),
            _ => None,
        })
    }

    pub fn write_ndjson<W: Write>(&self, mut out: W) -> Result<(), TraceError> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r).map_err(|source| TraceError::Json { line: 0, source })?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_ndjson<R: BufRead>(input: R) -> Result<Self, TraceError> {
        let mut records = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: Record = serde_json::from_str(&line).map_err(|source| TraceError::Json { line: i + 1, source })?;
            records.push(r);
        }
        match records.first() {
            Some(Record::Header { format, version, .. }) if format == TRACE_FORMAT && *version == TRACE_VERSION => {}
            Some(Record::Header { format, version, .. }) => {
                return Err(TraceError::Header(format!("unsupported {format} version {version}")))
            }
            _ => return Err(TraceError::Header("first line is not a header".into())),
        }
        Ok(Trace { records })
    }

    /// Snapshot positions as a flat table.
    pub fn write_frames<W: Write>(&self, out: W) -> Result<(), TraceError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "sensor_id", "x", "y", "role", "home_hex"])?;
        for (t, sensors) in self.snapshots() {
            for s in sensors {
                let hex = s.hex.map(|h| h.to_string()).unwrap_or_default();
                w.write_record([
                    format!("{t}"),
                    s.id.to_string(),
                    format!("{}", s.position.x),
                    format!("{}", s.position.y),
                    s.role.as_str().to_string(),
                    hex,
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
