//! Gate control lists for a gated egress port.
//!
//! Queue `q` is bit `q` of a gate mask. Time-sensitive queues take the
//! highest numbers, one per period class; best-effort traffic uses the
//! queues below them.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::combinability::csv_err;
use crate::error::{invalid, Error, Result};
use crate::flow::{Flow, FlowId, Ticks};

use super::Schedule;

const MAX_QUEUES: u8 = 32;

/// Which queue every flow is served from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueAssignment {
    pub queue_count: u8,
    pub ts: BTreeMap<FlowId, u8>,
    /// Best-effort queues, highest priority first.
    pub be: Vec<u8>,
}

impl QueueAssignment {
    /// One queue per distinct period, shortest period on the highest queue.
    ///
    /// At most `queue_count − 1` queues go to time-sensitive traffic; when
    /// there are more periods than that, the shortest-period classes share
    /// the top queue.
    pub fn by_period(flows: &[Flow], queue_count: u8) -> Result<Self> {
        if queue_count == 0 || queue_count > MAX_QUEUES {
            return Err(Error::QueueAssignment(format!(
                "queue count must be between 1 and {MAX_QUEUES}, got {queue_count}"
            )));
        }
        let ts: Vec<&Flow> = flows.iter().filter(|f| f.is_time_sensitive()).collect();
        let classes: BTreeSet<Ticks> = ts.iter().map(|f| f.period()).collect::<Result<_>>()?;
        if !classes.is_empty() && queue_count < 2 {
            return Err(Error::QueueAssignment(
                "time-sensitive traffic needs at least two queues".into(),
            ));
        }
        let available = usize::from(queue_count) - 1;
        let merged = classes.len().saturating_sub(available);
        let queue_of: BTreeMap<Ticks, u8> = classes
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let slot = k.saturating_sub(merged);
                (t, queue_count - 1 - slot as u8)
            })
            .collect();
        let mut map = BTreeMap::new();
        for f in ts {
            map.insert(f.id, queue_of[&f.period()?]);
        }
        let used: BTreeSet<u8> = map.values().copied().collect();
        let be = (0..queue_count).rev().filter(|q| !used.contains(q)).collect();
        Ok(Self {
            queue_count,
            ts: map,
            be,
        })
    }

    /// Queue for a best-effort flow of the given priority (0 highest).
    pub fn be_queue(&self, priority: u8) -> Option<u8> {
        let last = self.be.len().checked_sub(1)?;
        Some(self.be[usize::from(priority).min(last)])
    }

    pub fn be_mask(&self) -> u32 {
        self.be.iter().fold(0, |m, &q| m | 1 << q)
    }

    pub fn ts_mask(&self) -> u32 {
        self.ts.values().fold(0, |m, &q| m | 1 << q)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GclRow {
    pub start: Ticks,
    pub end: Ticks,
    pub gate_mask: u32,
}

impl GclRow {
    pub fn is_open(&self, queue: u8) -> bool {
        self.gate_mask & (1 << queue) != 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GateControlList {
    pub cycle: Ticks,
    pub queue_count: u8,
    pub rows: Vec<GclRow>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GclDoc {
    cycle_ns: Ticks,
    rows: Vec<RowDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RowDoc {
    start_ns: Ticks,
    end_ns: Ticks,
    gates: String,
}

impl GateControlList {
    pub fn to_json(&self) -> Result<String> {
        let width = usize::from(self.queue_count);
        let doc = GclDoc {
            cycle_ns: self.cycle,
            rows: self
                .rows
                .iter()
                .map(|r| RowDoc {
                    start_ns: r.start,
                    end_ns: r.end,
                    gates: format!("0b{:0width$b}", r.gate_mask),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// Parses the JSON form. The queue count is the width of the gate strings.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GclDoc = serde_json::from_str(text)?;
        let mut width = None;
        let mut rows = Vec::with_capacity(doc.rows.len());
        for r in doc.rows {
            let bits = r
                .gates
                .strip_prefix("0b")
                .ok_or_else(|| invalid(format!("gate string {:?} lacks the 0b prefix", r.gates)))?;
            if width.is_some_and(|w| w != bits.len()) {
                return Err(invalid("gate strings differ in width"));
            }
            width = Some(bits.len());
            let gate_mask =
                u32::from_str_radix(bits, 2).map_err(|e| invalid(format!("gate string {:?}: {e}", r.gates)))?;
            rows.push(GclRow {
                start: r.start_ns,
                end: r.end_ns,
                gate_mask,
            });
        }
        let queue_count = u8::try_from(width.unwrap_or(0))
            .ok()
            .filter(|&w| (1..=MAX_QUEUES).contains(&w))
            .ok_or_else(|| invalid("gate strings must have between 1 and 32 digits"))?;
        let gcl = Self {
            cycle: doc.cycle_ns,
            queue_count,
            rows,
        };
        gcl.validate()?;
        Ok(gcl)
    }

    /// CSV with header `start_ns,end_ns,gate_mask_hex`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["start_ns", "end_ns", "gate_mask_hex"]).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([r.start.to_string(), r.end.to_string(), format!("{:#04x}", r.gate_mask)])
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Rows must be sorted, contiguous and tile `[0, cycle)`.
    pub fn validate(&self) -> Result<()> {
        if self.cycle == 0 || self.rows.is_empty() {
            return Err(invalid("a gate control list needs a positive cycle and at least one row"));
        }
        let mut cursor = 0;
        for r in &self.rows {
            if r.start != cursor || r.end <= r.start {
                return Err(invalid(format!("row [{}, {}) breaks the tiling at {cursor}", r.start, r.end)));
            }
            cursor = r.end;
        }
        if cursor != self.cycle {
            return Err(invalid(format!("rows end at {cursor}, cycle is {}", self.cycle)));
        }
        Ok(())
    }

    /// Index of the row in force at absolute time `t`.
    pub fn row_at(&self, t: Ticks) -> usize {
        let phase = t % self.cycle;
        self.rows.partition_point(|r| r.end <= phase)
    }

    /// Time during which any of `mask`'s gates is open, per cycle.
    pub fn open_time(&self, mask: u32) -> Ticks {
        self.rows
            .iter()
            .filter(|r| r.gate_mask & mask != 0)
            .map(|r| r.end - r.start)
            .sum()
    }

    /// Absolute instant at which `queue`'s gate next closes, at or after `t`.
    /// `None` if the gate never closes.
    pub fn open_until(&self, t: Ticks, queue: u8) -> Option<Ticks> {
        let mut i = self.row_at(t);
        let base = t - t % self.cycle;
        let mut lap = 0;
        for _ in 0..=self.rows.len() {
            let r = &self.rows[i];
            if !r.is_open(queue) {
                return Some((base + lap + r.start).max(t));
            }
            i += 1;
            if i == self.rows.len() {
                i = 0;
                lap += self.cycle;
            }
        }
        None
    }
}

/// Renders a schedule as gate states over one hyperperiod.
///
/// During each reserved window only the owning flow's queue is open; all
/// best-effort gates are open between windows. Adjacent rows with equal
/// masks are merged.
pub fn emit_gcl(schedule: &Schedule, assignment: &QueueAssignment) -> Result<GateControlList> {
    let cycle = schedule.hyperperiod.max(1);
    let mut pieces: Vec<(Ticks, Ticks, u8)> = Vec::new();
    for w in schedule.windows()? {
        let q = *assignment
            .ts
            .get(&w.flow)
            .ok_or_else(|| Error::QueueAssignment(format!("flow {} has no queue", w.flow)))?;
        let s = w.start % cycle;
        let e = s + (w.end - w.start);
        if e <= cycle {
            pieces.push((s, e, q));
        } else {
            pieces.push((s, cycle, q));
            pieces.push((0, e - cycle, q));
        }
    }
    pieces.sort_unstable();

    let be = assignment.be_mask();
    let mut rows: Vec<GclRow> = Vec::new();
    let mut push = |start: Ticks, end: Ticks, gate_mask: u32| match rows.last_mut() {
        Some(last) if last.gate_mask == gate_mask && last.end == start => last.end = end,
        _ => rows.push(GclRow { start, end, gate_mask }),
    };
    let mut cursor = 0;
    for (s, e, q) in pieces {
        if s < cursor {
            return Err(invalid(format!("reserved windows overlap at {s}")));
        }
        if s > cursor {
            push(cursor, s, be);
        }
        push(s, e, 1 << q);
        cursor = e;
    }
    if cursor < cycle {
        push(cursor, cycle, be);
    }
    let gcl = GateControlList {
        cycle,
        queue_count: assignment.queue_count,
        rows,
    };
    gcl.validate()?;
    Ok(gcl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nds::ScheduledFlow;
    use crate::nds::ScheduleMode;

    fn single(t: Ticks, tau: Ticks, o: Ticks) -> Schedule {
        Schedule {
            mode: ScheduleMode::IdealOffsets,
            hyperperiod: t,
            flows: vec![ScheduledFlow {
                id: FlowId(1),
                period: t,
                service_time: tau,
                emergence: 0,
                offset: Some(o),
            }],
            packet_table: Vec::new(),
        }
    }

    #[test]
    fn single_window() {
        let flows = [Flow::periodic(1, 10, 2)];
        let qa = QueueAssignment::by_period(&flows, 8).unwrap();
        let gcl = emit_gcl(&single(10, 2, 1), &qa).unwrap();
        let rows: Vec<(Ticks, Ticks, u32)> = gcl.rows.iter().map(|r| (r.start, r.end, r.gate_mask)).collect();
        assert_eq!(rows, vec![(0, 1, 0x7f), (1, 3, 0x80), (3, 10, 0x7f)]);
        assert_eq!(gcl.cycle, 10);
    }

    #[test]
    fn empty_schedule_opens_every_best_effort_gate() {
        let qa = QueueAssignment::by_period(&[], 8).unwrap();
        let s = Schedule {
            mode: ScheduleMode::IdealOffsets,
            hyperperiod: 1,
            flows: vec![],
            packet_table: vec![],
        };
        let gcl = emit_gcl(&s, &qa).unwrap();
        assert_eq!(gcl.rows, vec![GclRow { start: 0, end: 1, gate_mask: 0xff }]);
    }

    #[test]
    fn wrapping_window_is_split() {
        let flows = [Flow::periodic(1, 10, 3)];
        let qa = QueueAssignment::by_period(&flows, 8).unwrap();
        let gcl = emit_gcl(&single(10, 3, 8), &qa).unwrap();
        let rows: Vec<(Ticks, Ticks, u32)> = gcl.rows.iter().map(|r| (r.start, r.end, r.gate_mask)).collect();
        assert_eq!(rows, vec![(0, 1, 0x80), (1, 8, 0x7f), (8, 10, 0x80)]);
    }

    #[test]
    fn periods_map_to_descending_queues() {
        let flows = [
            Flow::periodic(1, 20, 1),
            Flow::periodic(2, 10, 1),
            Flow::periodic(3, 40, 1),
            Flow::periodic(4, 10, 1),
        ];
        let qa = QueueAssignment::by_period(&flows, 8).unwrap();
        assert_eq!(qa.ts[&FlowId(2)], 7);
        assert_eq!(qa.ts[&FlowId(4)], 7);
        assert_eq!(qa.ts[&FlowId(1)], 6);
        assert_eq!(qa.ts[&FlowId(3)], 5);
        assert_eq!(qa.be, vec![4, 3, 2, 1, 0]);
        assert_eq!(qa.be_queue(0), Some(4));
        assert_eq!(qa.be_queue(9), Some(0));
    }

    #[test]
    fn surplus_periods_merge_into_the_top_queue() {
        let flows: Vec<Flow> = (1..=4).map(|k| Flow::periodic(k, 10 * u64::from(k), 1)).collect();
        let qa = QueueAssignment::by_period(&flows, 3).unwrap();
        // Two TS queues for four classes: periods 10, 20, 30 share queue 2.
        assert_eq!(qa.ts.values().copied().collect::<Vec<_>>(), vec![2, 2, 2, 1]);
        assert_eq!(qa.be, vec![0]);
        assert!(QueueAssignment::by_period(&flows, 1).is_err());
    }

    #[test]
    fn json_and_csv_forms() {
        let flows = [Flow::periodic(1, 10, 2)];
        let qa = QueueAssignment::by_period(&flows, 8).unwrap();
        let gcl = emit_gcl(&single(10, 2, 1), &qa).unwrap();
        let json = gcl.to_json().unwrap();
        assert!(json.contains("\"gates\": \"0b10000000\""));
        assert!(json.contains("\"cycle_ns\": 10"));
        assert_eq!(GateControlList::from_json(&json).unwrap(), gcl);

        let mut buf = Vec::new();
        gcl.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "start_ns,end_ns,gate_mask_hex\n0,1,0x7f\n1,3,0x80\n3,10,0x7f\n");
    }

    #[test]
    fn gate_lookup_across_cycles() {
        let flows = [Flow::periodic(1, 10, 2)];
        let qa = QueueAssignment::by_period(&flows, 8).unwrap();
        let gcl = emit_gcl(&single(10, 2, 1), &qa).unwrap();
        assert_eq!(gcl.row_at(0), 0);
        assert_eq!(gcl.row_at(12), 1);
        assert_eq!(gcl.row_at(19), 2);
        assert_eq!(gcl.open_until(4, 0), Some(11));
        assert_eq!(gcl.open_until(1, 0), Some(1));
        assert_eq!(gcl.open_until(2, 7), Some(3));
        assert_eq!(gcl.open_time(0x80), 2);
    }
}
