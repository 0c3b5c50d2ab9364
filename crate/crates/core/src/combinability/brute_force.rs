//! Direct enumeration of colliding windows.
//!
//! Every window `[n·T_i + o_i, n·T_i + o_i + τ_i)` is materialised and
//! compared with its neighbours. This is deliberately naive; it serves as the
//! reference the analytic results are checked against.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{Flow, FlowId, Ticks};

use super::hyperperiod;

/// Windows materialised by one enumeration at most.
pub const MAX_WINDOWS: u128 = 20_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConflictKind {
    #[serde(rename = "CFK")]
    FirstKind,
    #[serde(rename = "CSK")]
    SecondKind,
}

impl ConflictKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::FirstKind => "CFK",
            Self::SecondKind => "CSK",
        }
    }
}

/// One pair of colliding packets.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConflictEntry {
    /// Start of the shared interval.
    pub time_start: Ticks,
    /// End of the shared interval (may exceed the cycle for wrapping windows).
    pub time_end: Ticks,
    pub kind: ConflictKind,
    pub flow_ids: [FlowId; 2],
    pub packet_indices: [u64; 2],
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictList {
    pub entries: Vec<ConflictEntry>,
}

impl ConflictList {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn has_kind(&self, kind: ConflictKind) -> bool {
        self.entries.iter().any(|e| e.kind == kind)
    }

    /// Entries involving both given flows.
    pub fn between(&self, a: FlowId, b: FlowId) -> impl Iterator<Item = &ConflictEntry> {
        self.entries
            .iter()
            .filter(move |e| e.flow_ids == [a, b] || e.flow_ids == [b, a])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// CSV with header `time_start,time_end,kind,flow_ids,packet_indices`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time_start", "time_end", "kind", "flow_ids", "packet_indices"])
            .map_err(csv_err)?;
        for e in &self.entries {
            w.write_record([
                e.time_start.to_string(),
                e.time_end.to_string(),
                e.kind.label().to_string(),
                format!("{} {}", e.flow_ids[0], e.flow_ids[1]),
                format!("{} {}", e.packet_indices[0], e.packet_indices[1]),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// One reserved transmission window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimedWindow {
    pub flow: FlowId,
    pub index: u64,
    pub start: Ticks,
    pub len: Ticks,
}

/// Enumerates every collision between windows.
///
/// With `horizon` at least one hyperperiod the windows are laid on a circle
/// of one hyperperiod, so a window crossing the cycle end is compared with
/// the next cycle's first windows. With a shorter horizon only windows
/// starting in `[0, horizon)` are compared, on a straight line.
pub fn brute_force_conflicts(flows: &[Flow], offsets: &[Ticks], horizon: Ticks) -> Result<ConflictList> {
    if flows.len() != offsets.len() {
        return Err(Error::InvalidSpec("one offset per flow is required".into()));
    }
    if flows.len() < 2 || horizon == 0 {
        return Ok(ConflictList::default());
    }
    let periods: Vec<Ticks> = flows.iter().map(Flow::period).collect::<Result<_>>()?;
    let cycle = hyperperiod(&periods)?;
    let circular = u128::from(horizon) >= cycle;
    let span: u128 = if circular { cycle } else { u128::from(horizon) };

    let mut count = 0u128;
    for (i, &t) in periods.iter().enumerate() {
        count += if circular {
            span / u128::from(t)
        } else {
            u128::from(horizon.saturating_sub(offsets[i])).div_ceil(u128::from(t))
        };
    }
    if count > MAX_WINDOWS {
        return Err(Error::InvalidSpec(format!(
            "{count} windows exceed the enumeration limit; shorten the horizon"
        )));
    }
    let span = u64::try_from(span).map_err(|_| Error::Overflow("horizon"))?;

    let mut windows = Vec::with_capacity(count as usize);
    for (i, f) in flows.iter().enumerate() {
        let t = periods[i];
        if circular {
            for n in 0..span / t {
                let abs = u128::from(offsets[i]) + u128::from(n) * u128::from(t);
                windows.push(TimedWindow {
                    flow: f.id,
                    index: n,
                    start: (abs % u128::from(span)) as u64,
                    len: f.service_time,
                });
            }
        } else {
            let mut n = 0;
            let mut start = offsets[i];
            while start < span {
                windows.push(TimedWindow {
                    flow: f.id,
                    index: n,
                    start,
                    len: f.service_time,
                });
                n += 1;
                start = start.checked_add(t).ok_or(Error::Overflow("window start"))?;
            }
        }
    }
    Ok(sweep_windows(windows, circular.then_some(span)))
}

/// Collisions among arbitrary windows.
///
/// With `cycle` set, starts are taken modulo the cycle and windows running
/// past its end meet the first windows of the next cycle.
pub fn sweep_windows(mut windows: Vec<TimedWindow>, cycle: Option<Ticks>) -> ConflictList {
    if let Some(c) = cycle {
        for w in &mut windows {
            w.start %= c.max(1);
        }
    }
    windows.sort_by_key(|w| (w.start, w.flow, w.index));
    let span = cycle.unwrap_or(0).max(1);

    let mut entries = Vec::new();
    let total = windows.len();
    for a in 0..total {
        let wa = windows[a];
        let end_a = wa.start + wa.len;
        // Later-starting windows (wrapping once around the circle) that begin
        // before `wa` ends.
        for step in 1..total {
            let b = a + step;
            let (wb, b_start) = if b < total {
                (windows[b], windows[b].start)
            } else if cycle.is_some() {
                let wb = windows[b - total];
                (wb, wb.start + span)
            } else {
                break;
            };
            if b_start >= end_a {
                break;
            }
            if wa.flow == wb.flow {
                continue;
            }
            let kind = if b_start == wa.start {
                ConflictKind::FirstKind
            } else {
                ConflictKind::SecondKind
            };
            let (first, second) = if wa.flow < wb.flow { (wa, wb) } else { (wb, wa) };
            let wrap = if cycle.is_some() { b_start - b_start % span } else { 0 };
            entries.push(ConflictEntry {
                time_start: b_start - wrap,
                time_end: (b_start + wb.len).min(end_a) - wrap,
                kind,
                flow_ids: [first.flow, second.flow],
                packet_indices: [first.index, second.index],
            });
        }
    }
    entries.sort();
    entries.dedup();
    ConflictList { entries }
}
