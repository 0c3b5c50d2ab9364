//! Discrete-event simulation of one gated egress port.
//!
//! Time-sensitive packets leave exactly in their reserved windows. Best-effort
//! frames queue per priority with drop-tail and are dispatched in the
//! residual slots by a pluggable [`Policy`]. A frame is only started when it
//! ends before its gate closes, so reserved windows are never entered.

mod engine;
mod metrics;
mod rng;
mod scenario;
mod workload;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::combinability::csv_err;
use crate::error::{invalid, Result};
use crate::flow::{FlowId, Ticks};

pub use engine::run_simulation;
pub use metrics::{compute_metrics, FlowMetrics, MetricsReport};
pub use rng::SimRng;
pub use scenario::{Scenario, ScenarioFile};
pub use workload::{
    generate_workload, standard_split, BeSource, Workload, WorkloadSpec, BE_SIZE_BYTES, STANDARD_PERIODS, TS_SIZE_BYTES,
};

/// How best-effort queues are served in residual slots.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// Utility-maximising choice among the queues whose head fits.
    Dqs,
    /// Oldest frame first; when it does not fit, the port waits.
    ResidualFifo,
    /// Highest-priority queue whose head fits.
    StrictPriority,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Dqs, Policy::ResidualFifo, Policy::StrictPriority];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Dqs => "dqs",
            Policy::ResidualFifo => "residual-fifo",
            Policy::StrictPriority => "strict-priority",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dqs" => Ok(Policy::Dqs),
            "residual-fifo" | "fifo" => Ok(Policy::ResidualFifo),
            "strict-priority" | "sp" => Ok(Policy::StrictPriority),
            other => Err(invalid(format!("unknown policy {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    GateChange,
    Arrival,
    Drop,
    TxStart,
    TxEnd,
    /// A reserved window opened with no packet of its flow ready.
    Miss,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::GateChange => "gate-change",
            EventKind::Arrival => "arrival",
            EventKind::Drop => "drop",
            EventKind::TxStart => "tx-start",
            EventKind::TxEnd => "tx-end",
            EventKind::Miss => "miss",
        }
    }
}

/// One logged event. Gate changes carry only the queue whose gate toggled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub time: Ticks,
    pub kind: EventKind,
    pub flow: Option<FlowId>,
    pub packet: Option<u64>,
    pub queue: Option<u8>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct EventLog {
    pub events: Vec<Event>,
}

impl EventLog {
    /// CSV with header `time_ns,event,flow_id,packet_index,queue`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time_ns", "event", "flow_id", "packet_index", "queue"])
            .map_err(csv_err)?;
        let opt = |v: Option<String>| v.unwrap_or_default();
        for e in &self.events {
            w.write_record([
                e.time.to_string(),
                e.kind.name().to_string(),
                opt(e.flow.map(|f| f.to_string())),
                opt(e.packet.map(|p| p.to_string())),
                opt(e.queue.map(|q| q.to_string())),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Transmission intervals `(start, end, flow, packet)` in start order.
    pub fn transmissions(&self) -> Vec<(Ticks, Ticks, FlowId, u64)> {
        let mut open = std::collections::HashMap::new();
        let mut out = Vec::new();
        for e in &self.events {
            let (Some(flow), Some(packet)) = (e.flow, e.packet) else {
                continue;
            };
            match e.kind {
                EventKind::TxStart => {
                    open.insert((flow, packet), e.time);
                }
                EventKind::TxEnd => {
                    if let Some(start) = open.remove(&(flow, packet)) {
                        out.push((start, e.time, flow, packet));
                    }
                }
                _ => {}
            }
        }
        out.sort_unstable();
        out
    }
}

#[cfg(test)]
mod tests;
