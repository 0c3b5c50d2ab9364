use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::combinability::csv_err;
use crate::error::Result;
use crate::flow::{FlowId, Ticks, TrafficClass};

use super::scenario::Scenario;
use super::{EventKind, EventLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowMetrics {
    pub flow: FlowId,
    pub class: TrafficClass,
    pub arrived: u64,
    pub transmitted: u64,
    pub dropped: u64,
    pub queued: u64,
    /// Arrival to end of transmission, over transmitted packets.
    pub delay_min: Option<Ticks>,
    pub delay_max: Option<Ticks>,
    pub delay_mean: Option<f64>,
    pub jitter: Option<Ticks>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub horizon: Ticks,
    pub busy: Ticks,
    pub utilization: f64,
    pub ts_utilization: f64,
    pub be_utilization: f64,
    /// Reserved windows that found no packet ready.
    pub misses: u64,
    pub drops_per_queue: BTreeMap<u8, u64>,
    pub arrived: u64,
    pub transmitted: u64,
    pub dropped: u64,
    pub queued: u64,
    pub flows: Vec<FlowMetrics>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn flow(&self, id: FlowId) -> Option<&FlowMetrics> {
        self.flows.iter().find(|f| f.flow == id)
    }

    pub fn total_drops(&self) -> u64 {
        self.dropped
    }

    /// One row per flow.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "flow_id",
            "class",
            "arrived",
            "transmitted",
            "dropped",
            "queued",
            "delay_min_ns",
            "delay_max_ns",
            "delay_mean_ns",
            "jitter_ns",
        ])
        .map_err(csv_err)?;
        let opt = |v: Option<Ticks>| v.map(|x| x.to_string()).unwrap_or_default();
        for f in &self.flows {
            w.write_record([
                f.flow.to_string(),
                match f.class {
                    TrafficClass::TimeSensitive => "TS".into(),
                    TrafficClass::BestEffort => "BE".into(),
                },
                f.arrived.to_string(),
                f.transmitted.to_string(),
                f.dropped.to_string(),
                f.queued.to_string(),
                opt(f.delay_min),
                opt(f.delay_max),
                f.delay_mean.map(|m| format!("{m:.3}")).unwrap_or_default(),
                opt(f.jitter),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
struct FlowTally {
    arrived: u64,
    transmitted: u64,
    dropped: u64,
    delay_sum: u128,
    delay_min: Option<Ticks>,
    delay_max: Option<Ticks>,
    busy: Ticks,
}

/// Running counters kept by the engine.
#[derive(Clone, Debug, Default)]
pub(crate) struct Tally {
    flows: BTreeMap<FlowId, FlowTally>,
    drops_per_queue: BTreeMap<u8, u64>,
    misses: u64,
}

impl Tally {
    pub(crate) fn arrived(&mut self, flow: FlowId) {
        self.flows.entry(flow).or_default().arrived += 1;
    }

    pub(crate) fn dropped(&mut self, flow: FlowId, queue: u8) {
        self.flows.entry(flow).or_default().dropped += 1;
        *self.drops_per_queue.entry(queue).or_insert(0) += 1;
    }

    pub(crate) fn missed(&mut self) {
        self.misses += 1;
    }

    pub(crate) fn transmitted(&mut self, flow: FlowId, delay: Ticks, start: Ticks, end: Ticks, horizon: Ticks) {
        let t = self.flows.entry(flow).or_default();
        t.transmitted += 1;
        t.delay_sum += u128::from(delay);
        t.delay_min = Some(t.delay_min.map_or(delay, |m| m.min(delay)));
        t.delay_max = Some(t.delay_max.map_or(delay, |m| m.max(delay)));
        t.busy += end.min(horizon).saturating_sub(start);
    }

    pub(crate) fn report(&self, sc: &Scenario, queued: &BTreeMap<FlowId, u64>) -> MetricsReport {
        let mut busy = [0; 2];
        let mut flows = Vec::new();
        let mut totals = [0u64; 4];
        for f in &sc.flowset.flows {
            let t = self.flows.get(&f.id).cloned().unwrap_or_default();
            let q = queued.get(&f.id).copied().unwrap_or(0);
            busy[usize::from(!f.is_time_sensitive())] += t.busy;
            totals[0] += t.arrived;
            totals[1] += t.transmitted;
            totals[2] += t.dropped;
            totals[3] += q;
            flows.push(FlowMetrics {
                flow: f.id,
                class: f.class,
                arrived: t.arrived,
                transmitted: t.transmitted,
                dropped: t.dropped,
                queued: q,
                delay_min: t.delay_min,
                delay_max: t.delay_max,
                delay_mean: (t.transmitted > 0).then(|| t.delay_sum as f64 / t.transmitted as f64),
                jitter: t.delay_max.zip(t.delay_min).map(|(a, b)| a - b),
            });
        }
        let h = sc.horizon as f64;
        MetricsReport {
            horizon: sc.horizon,
            busy: busy[0] + busy[1],
            utilization: (busy[0] + busy[1]) as f64 / h,
            ts_utilization: busy[0] as f64 / h,
            be_utilization: busy[1] as f64 / h,
            misses: self.misses,
            drops_per_queue: self.drops_per_queue.clone(),
            arrived: totals[0],
            transmitted: totals[1],
            dropped: totals[2],
            queued: totals[3],
            flows,
        }
    }
}

/// Rebuilds the metrics of a run from its event log alone. Packets neither
/// transmitted nor dropped count as still queued.
pub fn compute_metrics(log: &EventLog, scenario: &Scenario) -> MetricsReport {
    let mut tally = Tally::default();
    let mut arrival: HashMap<(FlowId, u64), Ticks> = HashMap::new();
    let mut started: HashMap<(FlowId, u64), Ticks> = HashMap::new();
    for e in &log.events {
        match (e.kind, e.flow, e.packet) {
            (EventKind::Arrival, Some(f), Some(n)) => {
                tally.arrived(f);
                arrival.insert((f, n), e.time);
            }
            (EventKind::Drop, Some(f), Some(_)) => tally.dropped(f, e.queue.unwrap_or(0)),
            (EventKind::TxStart, Some(f), Some(n)) => {
                started.insert((f, n), e.time);
            }
            (EventKind::TxEnd, Some(f), Some(n)) => {
                let start = started.remove(&(f, n)).unwrap_or(e.time);
                let a = arrival.get(&(f, n)).copied().unwrap_or(start);
                tally.transmitted(f, e.time - a, start, e.time, scenario.horizon);
            }
            (EventKind::Miss, ..) => tally.missed(),
            _ => {}
        }
    }
    let queued = tally
        .flows
        .iter()
        .map(|(&f, t)| (f, t.arrived - t.transmitted - t.dropped))
        .collect();
    tally.report(scenario, &queued)
}
