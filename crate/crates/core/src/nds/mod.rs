//! Offline synthesis of collision-free schedules for time-sensitive flows.
//!
//! [`compute_static_schedule`] first tries fixed offsets for the whole set.
//! When the periods do not allow that, it partitions the set, fixes offsets
//! per subset where possible and then relaxes individual packets within
//! their jitter budgets. [`verify_schedule`] re-checks any result
//! independently and [`emit_gcl`] turns it into gate states.

mod admission;
mod gcl;
mod offsets;
mod partition;
mod relax;
mod static_schedule;
mod verify;

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::combinability::{csv_err, TimedWindow};
use crate::error::{Error, Result};
use crate::flow::{Flow, FlowId, Ticks};

pub use admission::admission_check;
pub use gcl::{emit_gcl, GateControlList, GclRow, QueueAssignment};
pub use offsets::{nonconflict_offsets, processing_order, OffsetAssignment};
pub use partition::partition_flowset;
pub use relax::{eliminate_conflicts, ConstraintSet, FlowConstraint, PacketTable, TableEntry};
pub use static_schedule::compute_static_schedule;
pub use verify::verify_schedule;

/// Resource limits for schedule synthesis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Limits {
    pub hyperperiod_cap: Ticks,
    pub timeout: Duration,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            hyperperiod_cap: 10_000_000_000,
            timeout: Duration::from_secs(10),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleMode {
    /// Every flow repeats with a fixed offset.
    IdealOffsets,
    /// Packets are placed individually over one hyperperiod.
    PerPacketTable,
}

/// Per-flow data a schedule needs to expand its windows.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledFlow {
    pub id: FlowId,
    pub period: Ticks,
    pub service_time: Ticks,
    pub emergence: Ticks,
    /// Fixed offset; present in ideal mode only.
    pub offset: Option<Ticks>,
}

/// Transmission window of one packet. `start` is absolute, so a start past
/// the hyperperiod belongs to a packet whose emergence lies there.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PacketWindow {
    pub flow: FlowId,
    pub index: u64,
    pub start: Ticks,
    pub end: Ticks,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub mode: ScheduleMode,
    pub hyperperiod: Ticks,
    pub flows: Vec<ScheduledFlow>,
    /// Every packet of one hyperperiod; empty in ideal mode.
    pub packet_table: Vec<PacketWindow>,
}

impl Schedule {
    pub(crate) fn ideal(flows: &[Flow], offsets: &[Ticks], hyperperiod: Ticks) -> Result<Self> {
        Ok(Self {
            mode: ScheduleMode::IdealOffsets,
            hyperperiod,
            flows: scheduled_flows(flows, Some(offsets))?,
            packet_table: Vec::new(),
        })
    }

    /// Offsets of flows that repeat unchanged.
    pub fn offsets(&self) -> BTreeMap<FlowId, Ticks> {
        self.flows.iter().filter_map(|f| Some((f.id, f.offset?))).collect()
    }

    pub fn flow(&self, id: FlowId) -> Result<&ScheduledFlow> {
        self.flows.iter().find(|f| f.id == id).ok_or(Error::UnknownFlow(id))
    }

    /// All windows of one hyperperiod, ordered by flow then packet index.
    pub fn windows(&self) -> Result<Vec<PacketWindow>> {
        match self.mode {
            ScheduleMode::PerPacketTable => {
                let mut table = self.packet_table.clone();
                table.sort_by_key(|w| (w.flow, w.index));
                Ok(table)
            }
            ScheduleMode::IdealOffsets => {
                let mut out = Vec::new();
                for f in &self.flows {
                    let o = f.offset.ok_or(Error::UnknownFlow(f.id))?;
                    for n in 0..self.hyperperiod / f.period {
                        let start = n
                            .checked_mul(f.period)
                            .and_then(|v| v.checked_add(o))
                            .ok_or(Error::Overflow("window start"))?;
                        out.push(PacketWindow {
                            flow: f.id,
                            index: n,
                            start,
                            end: start + f.service_time,
                        });
                    }
                }
                Ok(out)
            }
        }
    }

    /// Window of packet `n` for any `n`, repeating the hyperperiod.
    pub fn window_of(&self, id: FlowId, n: u64) -> Result<PacketWindow> {
        let f = self.flow(id)?;
        let per_cycle = self.hyperperiod / f.period;
        let (cycle, index) = (n / per_cycle, n % per_cycle);
        let base = match (self.mode, f.offset) {
            (ScheduleMode::IdealOffsets, Some(o)) => index * f.period + o,
            _ => {
                self.packet_table
                    .iter()
                    .find(|w| w.flow == id && w.index == index)
                    .ok_or(Error::UnknownFlow(id))?
                    .start
            }
        };
        let start = cycle
            .checked_mul(self.hyperperiod)
            .and_then(|v| v.checked_add(base))
            .ok_or(Error::Overflow("window start"))?;
        Ok(PacketWindow {
            flow: id,
            index: n,
            start,
            end: start + f.service_time,
        })
    }

    pub(crate) fn timed_windows(&self) -> Result<Vec<TimedWindow>> {
        Ok(self
            .windows()?
            .into_iter()
            .map(|w| TimedWindow {
                flow: w.flow,
                index: w.index,
                start: w.start,
                len: w.end - w.start,
            })
            .collect())
    }

    /// CSV with header `flow_id,packet_index,start_ns,end_ns`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["flow_id", "packet_index", "start_ns", "end_ns"])
            .map_err(csv_err)?;
        for win in self.windows()? {
            w.write_record([
                win.flow.to_string(),
                win.index.to_string(),
                win.start.to_string(),
                win.end.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn scheduled_flows(flows: &[Flow], offsets: Option<&[Ticks]>) -> Result<Vec<ScheduledFlow>> {
    flows
        .iter()
        .enumerate()
        .map(|(i, f)| {
            Ok(ScheduledFlow {
                id: f.id,
                period: f.period()?,
                service_time: f.service_time,
                emergence: f.emergence(),
                offset: offsets.map(|o| o[i]),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Violation {
    Overlap {
        flows: [FlowId; 2],
        packets: [u64; 2],
        time: Ticks,
    },
    /// Window opens before the packet emerges or later than its delay bound allows.
    Deadline {
        flow: FlowId,
        packet: u64,
        emergence: Ticks,
        start: Ticks,
    },
    Jitter {
        flow: FlowId,
        jitter: Ticks,
        bound: Ticks,
    },
    Bandwidth {
        demand_bps: f64,
        capacity_bps: u64,
    },
    /// The table does not hold exactly one window per packet.
    Coverage { flow: FlowId, expected: u64, found: u64 },
    /// Offset search ran out of delay budget.
    DelayBudget { flow: FlowId },
    /// A packet could not be moved far enough within its jitter bound.
    RelaxationExhausted { flow: FlowId, packet: u64 },
    Timeout { elapsed_ms: u64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScheduleVerdict {
    pub schedulable: bool,
    /// Set when offset search failed.
    pub unsolved: bool,
    pub violations: Vec<Violation>,
}

impl ScheduleVerdict {
    pub(crate) fn ok() -> Self {
        Self {
            schedulable: true,
            unsolved: false,
            violations: Vec::new(),
        }
    }

    pub(crate) fn failed(unsolved: bool, violations: Vec<Violation>) -> Self {
        Self {
            schedulable: false,
            unsolved,
            violations,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
