use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use crate::dqs::{select_strategy, update_arrival_estimator, ArrivalEstimator, PortSnapshot, QueueState};
use crate::error::{invalid, Result};
use crate::flow::{service_time, Flow, FlowId, Ticks};

use super::metrics::{MetricsReport, Tally};
use super::rng::SimRng;
use super::scenario::Scenario;
use super::{Event, EventKind, EventLog, Policy};

/// Arrival rates are re-estimated at the first decision after this many ticks.
const ESTIMATOR_WINDOW: Ticks = 100_000;

// Same-instant order: gates switch, the port frees, packets arrive, reserved
// windows start; the best-effort dispatcher runs after all of them.
const GATE: u8 = 0;
const TX_END: u8 = 1;
const ARRIVAL: u8 = 2;
const WINDOW: u8 = 3;

#[derive(Clone, Copy, Debug)]
struct Packet {
    flow: FlowId,
    index: u64,
    arrival: Ticks,
    ready: Ticks,
    service: Ticks,
    seq: u64,
}

struct TsFlow {
    flow: Flow,
    period: Ticks,
    queue: u8,
    next_index: u64,
    pending: VecDeque<Packet>,
}

struct BeQueue {
    gate: u8,
    packets: VecDeque<Packet>,
    arrivals_since: u64,
}

struct Source {
    flow: FlowId,
    slot: usize,
    min_size: u32,
    max_size: u32,
    mean_gap: f64,
    backlog_left: u32,
    next_index: u64,
    rng: SimRng,
}

struct Window {
    start: Ticks,
    flow_slot: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Payload {
    Gate(usize),
    TxEnd,
    TsArrival(usize),
    BeArrival(usize),
    Window(usize),
}

struct Engine<'a> {
    sc: &'a Scenario,
    rate_bps: u64,
    q_max: u32,
    heap: BinaryHeap<Reverse<(Ticks, u8, u64, Payload)>>,
    ts: Vec<TsFlow>,
    be: Vec<BeQueue>,
    sources: Vec<Source>,
    windows: Vec<Window>,
    in_flight: Option<(Packet, u8, Ticks)>,
    seq: u64,
    estimator: ArrivalEstimator,
    last_estimate: Ticks,
    log: Vec<Event>,
    tally: Tally,
}

/// Runs a scenario to its horizon.
///
/// Transmissions started before the horizon are allowed to finish, so every
/// logged start has its end. Utilisation only counts busy time inside the
/// horizon.
pub fn run_simulation(scenario: &Scenario) -> Result<(EventLog, MetricsReport)> {
    scenario.validate()?;
    let mut e = Engine::new(scenario)?;
    e.run()?;
    let queued = e.backlog();
    let report = e.tally.report(scenario, &queued);
    Ok((EventLog { events: e.log }, report))
}

impl<'a> Engine<'a> {
    fn new(sc: &'a Scenario) -> Result<Self> {
        let mut ts = Vec::new();
        let mut slot_of = BTreeMap::new();
        for f in sc.flowset.flows.iter().filter(|f| f.is_time_sensitive()) {
            slot_of.insert(f.id, ts.len());
            ts.push(TsFlow {
                flow: f.clone(),
                period: f.period()?,
                queue: sc.assignment.ts[&f.id],
                next_index: 0,
                pending: VecDeque::new(),
            });
        }
        let be: Vec<BeQueue> = sc
            .assignment
            .be
            .iter()
            .map(|&gate| BeQueue {
                gate,
                packets: VecDeque::new(),
                arrivals_since: 0,
            })
            .collect();

        let mut sources = Vec::new();
        for (k, s) in sc.be_sources.iter().enumerate() {
            let f = sc
                .flowset
                .flows
                .iter()
                .find(|f| f.id == s.flow)
                .ok_or_else(|| invalid(format!("unknown flow {}", s.flow)))?;
            let gate = sc
                .assignment
                .be_queue(f.priority)
                .ok_or_else(|| invalid("no best-effort queue is available"))?;
            let slot = sc.assignment.be.iter().position(|&q| q == gate).unwrap_or(0);
            let stream = u32::try_from(k + 1).map_err(|_| invalid("too many sources"))?;
            sources.push(Source {
                flow: s.flow,
                slot,
                min_size: s.min_size_bytes,
                max_size: f.size_bytes,
                mean_gap: s.mean_interarrival_ns,
                backlog_left: s.backlog,
                next_index: 0,
                rng: SimRng::stream(sc.seed, stream),
            });
        }

        let windows = sc
            .schedule
            .windows()?
            .into_iter()
            .map(|w| Window {
                start: w.start,
                flow_slot: slot_of[&w.flow],
            })
            .collect();

        Ok(Self {
            sc,
            rate_bps: sc.flowset.link.rate_bps,
            q_max: sc.flowset.link.max_queue_len,
            heap: BinaryHeap::new(),
            ts,
            estimator: ArrivalEstimator::new(be.len()),
            be,
            sources,
            windows,
            in_flight: None,
            seq: 0,
            last_estimate: 0,
            log: Vec::new(),
            tally: Tally::default(),
        })
    }

    fn push(&mut self, time: Ticks, order: u8, key: u64, p: Payload) {
        if time < self.sc.horizon || order == TX_END {
            self.heap.push(Reverse((time, order, key, p)));
        }
    }

    fn event(&mut self, time: Ticks, kind: EventKind, flow: Option<FlowId>, packet: Option<u64>, queue: Option<u8>) {
        self.log.push(Event {
            time,
            kind,
            flow,
            packet,
            queue,
        });
    }

    fn run(&mut self) -> Result<()> {
        self.push(0, GATE, 0, Payload::Gate(0));
        for i in 0..self.ts.len() {
            let t = self.ts[i].flow.arrival;
            self.push(t, ARRIVAL, u64::from(self.ts[i].flow.id.0), Payload::TsArrival(i));
        }
        for k in 0..self.sources.len() {
            let t = if self.sources[k].backlog_left > 0 {
                0
            } else {
                let mean = self.sources[k].mean_gap;
                self.sources[k].rng.gap(mean)
            };
            self.push(t, ARRIVAL, u64::from(self.sources[k].flow.0), Payload::BeArrival(k));
        }
        for w in 0..self.windows.len() {
            self.push(self.windows[w].start, WINDOW, w as u64, Payload::Window(w));
        }

        let mut previous_mask = 0u32;
        while let Some(&Reverse((now, ..))) = self.heap.peek() {
            while let Some(&Reverse((t, _, _, p))) = self.heap.peek() {
                if t != now {
                    break;
                }
                self.heap.pop();
                match p {
                    Payload::Gate(row) => previous_mask = self.gate(now, row, previous_mask),
                    Payload::TxEnd => self.tx_end(now),
                    Payload::TsArrival(i) => self.ts_arrival(now, i),
                    Payload::BeArrival(k) => self.be_arrival(now, k)?,
                    Payload::Window(w) => self.window(now, w),
                }
            }
            if now < self.sc.horizon && self.in_flight.is_none() {
                self.dispatch(now)?;
            }
        }
        Ok(())
    }

    /// Logs the gates that toggle at `row` and schedules the next row whose
    /// mask differs.
    fn gate(&mut self, now: Ticks, row: usize, previous: u32) -> u32 {
        let gcl = &self.sc.gcl;
        let mask = gcl.rows[row].gate_mask;
        let changed = mask ^ previous;
        for q in 0..gcl.queue_count {
            if changed & (1 << q) != 0 {
                self.event(now, EventKind::GateChange, None, None, Some(q));
            }
        }
        let n = gcl.rows.len();
        let base = now - now % gcl.cycle;
        for step in 1..=n {
            let next = (row + step) % n;
            if gcl.rows[next].gate_mask != mask {
                let lap = if row + step >= n { gcl.cycle } else { 0 };
                let at = base + lap + gcl.rows[next].start;
                self.push(at, GATE, 0, Payload::Gate(next));
                break;
            }
        }
        mask
    }

    fn tx_end(&mut self, now: Ticks) {
        let (p, queue, start) = self.in_flight.take().expect("port is transmitting");
        self.event(now, EventKind::TxEnd, Some(p.flow), Some(p.index), Some(queue));
        self.tally.transmitted(p.flow, now - p.arrival, start, now, self.sc.horizon);
    }

    fn ts_arrival(&mut self, now: Ticks, i: usize) {
        let seq = self.next_seq();
        let f = &mut self.ts[i];
        let p = Packet {
            flow: f.flow.id,
            index: f.next_index,
            arrival: now,
            ready: now + f.flow.processing,
            service: f.flow.service_time,
            seq,
        };
        f.next_index += 1;
        f.pending.push_back(p);
        let (queue, next) = (f.queue, now + f.period);
        self.event(now, EventKind::Arrival, Some(p.flow), Some(p.index), Some(queue));
        self.tally.arrived(p.flow);
        self.push(next, ARRIVAL, u64::from(p.flow.0), Payload::TsArrival(i));
    }

    fn be_arrival(&mut self, now: Ticks, k: usize) -> Result<()> {
        let seq = self.next_seq();
        let s = &mut self.sources[k];
        let size = s.rng.inclusive(u64::from(s.min_size), u64::from(s.max_size)) as u32;
        let p = Packet {
            flow: s.flow,
            index: s.next_index,
            arrival: now,
            ready: now,
            service: service_time(size, self.rate_bps)?,
            seq,
        };
        s.next_index += 1;
        let next = if s.backlog_left > 0 {
            s.backlog_left -= 1;
            if s.backlog_left > 0 {
                now
            } else {
                now + s.rng.gap(s.mean_gap)
            }
        } else {
            now + s.rng.gap(s.mean_gap)
        };
        let slot = s.slot;
        let gate = self.be[slot].gate;
        self.be[slot].arrivals_since += 1;
        self.event(now, EventKind::Arrival, Some(p.flow), Some(p.index), Some(gate));
        self.tally.arrived(p.flow);
        if self.be[slot].packets.len() as u32 >= self.q_max {
            self.event(now, EventKind::Drop, Some(p.flow), Some(p.index), Some(gate));
            self.tally.dropped(p.flow, gate);
        } else {
            self.be[slot].packets.push_back(p);
        }
        self.push(next, ARRIVAL, u64::from(p.flow.0), Payload::BeArrival(k));
        Ok(())
    }

    fn window(&mut self, now: Ticks, w: usize) {
        let i = self.windows[w].flow_slot;
        let cycle = self.sc.gcl.cycle;
        self.push(now + cycle, WINDOW, w as u64, Payload::Window(w));

        let f = &mut self.ts[i];
        let queue = f.queue;
        let ready = f.pending.front().is_some_and(|p| p.ready <= now);
        if !ready || self.in_flight.is_some() {
            let (flow, next) = (f.flow.id, f.next_index);
            self.event(now, EventKind::Miss, Some(flow), Some(next), Some(queue));
            self.tally.missed();
            return;
        }
        let p = f.pending.pop_front().expect("checked above");
        self.start(now, p, queue);
    }

    fn start(&mut self, now: Ticks, p: Packet, queue: u8) {
        self.event(now, EventKind::TxStart, Some(p.flow), Some(p.index), Some(queue));
        self.in_flight = Some((p, queue, now));
        let key = self.next_seq();
        self.push(now + p.service, TX_END, key, Payload::TxEnd);
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    fn dispatch(&mut self, now: Ticks) -> Result<()> {
        if self.be.iter().all(|q| q.packets.is_empty()) {
            return Ok(());
        }
        let gcl = &self.sc.gcl;
        let row = &gcl.rows[gcl.row_at(now)];
        // Residual slot of each queue: time until its gate next closes.
        let residual: Vec<Option<Ticks>> = self
            .be
            .iter()
            .map(|q| {
                row.is_open(q.gate)
                    .then(|| gcl.open_until(now, q.gate).map_or(Ticks::MAX, |end| end - now))
            })
            .collect();
        let fits = |slot: usize, q: &BeQueue| {
            q.packets
                .front()
                .zip(residual[slot])
                .is_some_and(|(p, r)| p.service <= r)
        };

        let chosen = match self.sc.policy {
            Policy::StrictPriority => self.be.iter().enumerate().position(|(s, q)| fits(s, q)),
            Policy::ResidualFifo => self
                .be
                .iter()
                .enumerate()
                .filter_map(|(s, q)| q.packets.front().map(|p| (p.seq, s)))
                .min()
                .map(|(_, s)| s)
                .filter(|&s| fits(s, &self.be[s])),
            Policy::Dqs => {
                self.refresh_estimator(now)?;
                let slot_residual = residual.iter().flatten().copied().min().unwrap_or(0);
                let queues = self
                    .be
                    .iter()
                    .enumerate()
                    .map(|(s, q)| QueueState {
                        index: s,
                        len: q.packets.len() as u32,
                        head_service_time: q.packets.front().map_or(0, |p| p.service),
                        next_service_time: q.packets.get(1).map_or(0, |p| p.service),
                        gate_open: residual[s].is_some(),
                    })
                    .collect();
                let port = PortSnapshot { queues };
                select_strategy(&port, &self.sc.utility, &self.estimator, slot_residual)?.served()
            }
        };
        if let Some(s) = chosen {
            let gate = self.be[s].gate;
            let p = self.be[s].packets.pop_front().expect("served queue is non-empty");
            self.start(now, p, gate);
        }
        Ok(())
    }

    fn refresh_estimator(&mut self, now: Ticks) -> Result<()> {
        let window = now - self.last_estimate;
        if window < ESTIMATOR_WINDOW {
            return Ok(());
        }
        let mut est = std::mem::replace(&mut self.estimator, ArrivalEstimator::new(0));
        for (s, q) in self.be.iter_mut().enumerate() {
            est = update_arrival_estimator(est, s, q.arrivals_since, window)?;
            q.arrivals_since = 0;
        }
        self.estimator = est;
        self.last_estimate = now;
        Ok(())
    }

    fn backlog(&self) -> BTreeMap<FlowId, u64> {
        let mut out = BTreeMap::new();
        for f in &self.ts {
            *out.entry(f.flow.id).or_insert(0) += f.pending.len() as u64;
        }
        for q in &self.be {
            for p in &q.packets {
                *out.entry(p.flow).or_insert(0) += 1;
            }
        }
        out
    }
}
