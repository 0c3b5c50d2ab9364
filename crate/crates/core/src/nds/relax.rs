//! Per-packet conflict elimination over one hyperperiod.
//!
//! Colliding packets are predicted from the pairwise solution spaces rather
//! than found by scanning. A table without predicted collisions is returned
//! as is. Otherwise every movable packet is placed earliest-deadline-first
//! at the first free instant at or after its ideal start, so a shifted
//! packet may push later neighbours along within their own bounds.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Bound::Excluded;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::combinability::{gcd_u64, modulo, solve_chain};
use crate::error::{invalid, Error, Result};
use crate::flow::{Flow, FlowId, Ticks};

use super::PacketWindow;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableEntry {
    pub flow: FlowId,
    pub index: u64,
    /// Absolute start; packet `n` of a flow starting at `o` ideally sits at `o + n·T`.
    pub start: Ticks,
    pub service_time: Ticks,
    /// Pinned packets belong to flows with a fixed offset and never move.
    pub pinned: bool,
}

/// Every packet of one hyperperiod.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketTable {
    pub cycle: Ticks,
    pub entries: Vec<TableEntry>,
}

impl PacketTable {
    /// Packets at `origin + n·T`; flows without an origin start from their
    /// emergence time. Nothing is pinned.
    pub fn from_origins(flows: &[Flow], origins: &[Option<Ticks>], cycle: Ticks) -> Result<Self> {
        if flows.len() != origins.len() {
            return Err(invalid("one origin entry per flow is required"));
        }
        let mut entries = Vec::new();
        for (f, o) in flows.iter().zip(origins) {
            let t = f.period()?;
            let origin = o.unwrap_or_else(|| f.emergence());
            for n in 0..cycle / t {
                entries.push(TableEntry {
                    flow: f.id,
                    index: n,
                    start: n
                        .checked_mul(t)
                        .and_then(|v| v.checked_add(origin))
                        .ok_or(Error::Overflow("packet start"))?,
                    service_time: f.service_time,
                    pinned: false,
                });
            }
        }
        Ok(Self { cycle, entries })
    }

    /// Fixes every packet of the given flows in place.
    pub fn pin(mut self, flows: &[FlowId]) -> Self {
        for e in &mut self.entries {
            e.pinned |= flows.contains(&e.flow);
        }
        self
    }

    pub fn windows(&self) -> Vec<PacketWindow> {
        self.entries
            .iter()
            .map(|e| PacketWindow {
                flow: e.flow,
                index: e.index,
                start: e.start,
                end: e.start + e.service_time,
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowConstraint {
    pub period: Ticks,
    pub emergence: Ticks,
    pub delay_bound: Option<Ticks>,
    pub jitter_bound: Option<Ticks>,
    pub priority: u8,
}

/// Delay and jitter bounds of every flow, with what is needed to locate each
/// packet's emergence time.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub flows: BTreeMap<FlowId, FlowConstraint>,
}

impl ConstraintSet {
    pub fn from_flows(flows: &[Flow]) -> Result<Self> {
        let mut set = BTreeMap::new();
        for f in flows {
            if let (Some(d), Some(j)) = (f.delay_bound, f.jitter_bound) {
                if j > d {
                    return Err(invalid(format!("flow {}: jitter bound exceeds delay bound", f.id)));
                }
            }
            set.insert(
                f.id,
                FlowConstraint {
                    period: f.period()?,
                    emergence: f.emergence(),
                    delay_bound: f.delay_bound,
                    jitter_bound: f.jitter_bound,
                    priority: f.priority,
                },
            );
        }
        Ok(Self { flows: set })
    }

    fn get(&self, id: FlowId) -> Result<&FlowConstraint> {
        self.flows.get(&id).ok_or(Error::UnknownFlow(id))
    }
}

/// Moves colliding packets later until the table is collision-free.
///
/// No packet moves further than its jitter bound, past its delay bound, or
/// far enough to meet the next packet of its own flow.
pub fn eliminate_conflicts(table: &PacketTable, constraints: &ConstraintSet) -> Result<PacketTable> {
    eliminate_until(table, constraints, None)
}

pub(crate) fn eliminate_until(
    table: &PacketTable,
    constraints: &ConstraintSet,
    deadline: Option<Instant>,
) -> Result<PacketTable> {
    let started = Instant::now();
    let timed_out = || deadline.is_some_and(|d| Instant::now() >= d);
    let timeout_err = || Error::Timeout {
        elapsed_ms: started.elapsed().as_millis() as u64,
    };
    if table.cycle == 0 {
        return Err(invalid("table cycle must be positive"));
    }

    let conflicting = predict_conflicting(table, constraints, &timed_out)?.ok_or_else(timeout_err)?;
    if conflicting.is_empty() {
        return Ok(table.clone());
    }
    let mut occupancy = Occupancy::new(table.cycle);
    let mut out = table.clone();

    let mut movable = Vec::new();
    for (pos, e) in table.entries.iter().enumerate() {
        if e.service_time > table.cycle {
            return Err(invalid(format!("flow {} does not fit in the cycle", e.flow)));
        }
        if e.pinned {
            if occupancy.blocker(e.start, e.service_time).is_some() {
                let other = occupancy.owner(e.start, e.service_time).unwrap_or((e.flow, e.index));
                return Err(Error::PinnedCollision {
                    flows: [other.0, e.flow],
                    packets: [other.1, e.index],
                });
            }
            occupancy.insert(e.start, e.service_time, (e.flow, e.index));
            continue;
        }
        let c = constraints.get(e.flow)?;
        let emergence = e
            .index
            .checked_mul(c.period)
            .and_then(|v| v.checked_add(c.emergence))
            .ok_or(Error::Overflow("packet emergence"))?;
        let mut slack = c.period - e.service_time;
        if let Some(j) = c.jitter_bound {
            slack = slack.min(j);
        }
        if let Some(d) = c.delay_bound {
            slack = slack.min((emergence + d).saturating_sub(e.start));
        }
        let latest = e.start + slack;
        movable.push(((latest, c.priority, e.flow, e.index), pos));
    }
    movable.sort_unstable();

    for (n, &((latest, _, flow, index), pos)) in movable.iter().enumerate() {
        if n % 1024 == 0 && timed_out() {
            return Err(timeout_err());
        }
        let e = table.entries[pos];
        let start = occupancy
            .first_fit(e.start, e.service_time, latest)
            .ok_or(Error::RelaxationExhausted { flow, packet: index })?;
        occupancy.insert(start, e.service_time, (flow, index));
        out.entries[pos].start = start;
    }
    Ok(out)
}

/// Packets involved in at least one collision.
///
/// Each flow's packets must sit on a lattice `origin + n·T`; a pair of flows
/// then collides exactly on the tuples of its first- and second-kind
/// solution spaces, reduced to one hyperperiod.
fn predict_conflicting(
    table: &PacketTable,
    constraints: &ConstraintSet,
    timed_out: &dyn Fn() -> bool,
) -> Result<Option<BTreeSet<(FlowId, u64)>>> {
    let mut lattices: BTreeMap<FlowId, (Ticks, Ticks, Ticks)> = BTreeMap::new();
    for e in &table.entries {
        let t = constraints.get(e.flow)?.period;
        if !table.cycle.is_multiple_of(t) {
            return Err(invalid(format!("cycle is not a multiple of the period of flow {}", e.flow)));
        }
        let origin = e
            .start
            .checked_sub(e.index * t)
            .ok_or_else(|| invalid(format!("flow {} is not laid out periodically", e.flow)))?;
        let prev = lattices.insert(e.flow, (origin, t, e.service_time));
        if prev.is_some_and(|p| p != (origin, t, e.service_time)) {
            return Err(invalid(format!("flow {} is not laid out periodically", e.flow)));
        }
    }

    let cycle = i128::from(table.cycle);
    let flows: Vec<(FlowId, (Ticks, Ticks, Ticks))> = lattices.into_iter().collect();
    let mut hit = BTreeSet::new();
    for (a, &(fa, (oa, ta, tau_a))) in flows.iter().enumerate() {
        if timed_out() {
            return Ok(None);
        }
        for &(fb, (ob, tb, tau_b)) in &flows[a + 1..] {
            let g = gcd_u64(ta, tb);
            let diff = i128::from(ob) - i128::from(oa);
            // gap = start_b − start_a; windows meet iff −τ_b < gap < τ_a.
            let lo = 1 - i128::from(tau_b);
            let hi = i128::from(tau_a) - 1;
            let mut gap = lo + modulo(diff - lo, g) as i128;
            let lcm = i128::from(ta / g) * i128::from(tb);
            let repeats = cycle / lcm;
            let (na, nb) = (cycle / i128::from(ta), cycle / i128::from(tb));
            while gap <= hi {
                // x_a·T_a − x_b·T_b = o_b − o_a + v with v = start_a − start_b.
                let space = solve_chain(
                    &[i128::from(ta), i128::from(tb)],
                    &[i128::from(oa), i128::from(ob)],
                    &[-gap],
                )?;
                for k in 0..repeats {
                    let x = space.indices(k as u64)?;
                    hit.insert((fa, x[0].rem_euclid(na) as u64));
                    hit.insert((fb, x[1].rem_euclid(nb) as u64));
                }
                gap += i128::from(g);
            }
        }
    }
    Ok(Some(hit))
}

/// Busy intervals on a circle of one cycle.
struct Occupancy {
    cycle: Ticks,
    busy: BTreeMap<Ticks, (Ticks, (FlowId, u64))>,
}

impl Occupancy {
    fn new(cycle: Ticks) -> Self {
        Self {
            cycle,
            busy: BTreeMap::new(),
        }
    }

    fn pieces(&self, t: Ticks, len: Ticks) -> [(Ticks, Ticks, Ticks); 2] {
        let c = self.cycle;
        let s = t % c;
        let base = t - s;
        let first = (s, (s + len).min(c), base);
        let second = if s + len > c { (0, s + len - c, base + c) } else { (0, 0, base) };
        [first, second]
    }

    fn insert(&mut self, t: Ticks, len: Ticks, owner: (FlowId, u64)) {
        for (a, b, _) in self.pieces(t, len) {
            if a < b {
                self.busy.insert(a, (b, owner));
            }
        }
    }

    /// First busy piece meeting `[a, b)`.
    fn hit(&self, a: Ticks, b: Ticks) -> Option<(Ticks, (FlowId, u64))> {
        if a >= b {
            return None;
        }
        if let Some((_, &(end, who))) = self.busy.range(..=a).next_back() {
            if end > a {
                return Some((end, who));
            }
        }
        self.busy.range((Excluded(a), Excluded(b))).next().map(|(_, &v)| v)
    }

    /// Absolute end of the earliest busy piece overlapping `[t, t+len)`.
    fn blocker(&self, t: Ticks, len: Ticks) -> Option<Ticks> {
        self.pieces(t, len)
            .into_iter()
            .find_map(|(a, b, base)| self.hit(a, b).map(|(end, _)| base + end))
    }

    fn owner(&self, t: Ticks, len: Ticks) -> Option<(FlowId, u64)> {
        self.pieces(t, len)
            .into_iter()
            .find_map(|(a, b, _)| self.hit(a, b).map(|(_, who)| who))
    }

    fn first_fit(&self, mut t: Ticks, len: Ticks, latest: Ticks) -> Option<Ticks> {
        while t <= latest {
            match self.blocker(t, len) {
                None => return Some(t),
                Some(end) => t = end,
            }
        }
        None
    }
}
