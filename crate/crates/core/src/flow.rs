//! Flow and link model shared by every other module.
//!
//! Time is integral throughout: one tick is one nanosecond. Periods, service
//! times, offsets and processing times are all whole ticks, and arithmetic on
//! them is checked rather than wrapping.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Integral time in nanoseconds. Used both for instants and for durations.
pub type Ticks = u64;

pub const TICKS_PER_SECOND: u64 = 1_000_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlowId(pub u32);

impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrafficClass {
    /// Periodic traffic with reserved transmission windows.
    #[serde(rename = "TS")]
    TimeSensitive,
    /// Aperiodic traffic served in residual slots.
    #[serde(rename = "BE")]
    BestEffort,
}

/// One traffic stream crossing the egress port.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Flow {
    pub id: FlowId,
    pub class: TrafficClass,
    /// Period, present for time-sensitive flows only.
    pub period: Option<Ticks>,
    /// Frame size. For best-effort sources this is the largest frame emitted.
    pub size_bytes: u32,
    /// Transmission time of one frame on the egress link.
    pub service_time: Ticks,
    /// Arrival of the first packet at the switch.
    pub arrival: Ticks,
    /// Offset at which the flow emerges at this port, before processing.
    pub initial_offset: Ticks,
    pub processing: Ticks,
    pub accumulated_jitter: Ticks,
    /// Longest admissible wait between emergence and window start.
    /// `None` means unconstrained.
    pub delay_bound: Option<Ticks>,
    pub jitter_bound: Option<Ticks>,
    /// 0 is the highest priority.
    pub priority: u8,
}

impl Flow {
    /// A time-sensitive flow with an explicit service time.
    ///
    /// The frame size is recorded at one byte per tick (an 8 Gbit/s link),
    /// which keeps small hand-written examples self-consistent.
    pub fn periodic(id: u32, period: Ticks, service_time: Ticks) -> Self {
        Self {
            id: FlowId(id),
            class: TrafficClass::TimeSensitive,
            period: Some(period),
            size_bytes: u32::try_from(service_time).unwrap_or(u32::MAX),
            service_time,
            arrival: 0,
            initial_offset: 0,
            processing: 0,
            accumulated_jitter: 0,
            delay_bound: None,
            jitter_bound: None,
            priority: 0,
        }
    }

    /// A time-sensitive flow whose service time is derived from the link rate.
    pub fn time_sensitive(id: u32, period: Ticks, size_bytes: u32, rate_bps: u64) -> Result<Self> {
        let service_time = service_time(size_bytes, rate_bps)?;
        let flow = Self {
            size_bytes,
            ..Self::periodic(id, period, service_time)
        };
        flow.validate()?;
        Ok(flow)
    }

    /// A best-effort source emitting frames of up to `max_size_bytes`.
    pub fn best_effort(id: u32, max_size_bytes: u32, rate_bps: u64, priority: u8) -> Result<Self> {
        Ok(Self {
            id: FlowId(id),
            class: TrafficClass::BestEffort,
            period: None,
            size_bytes: max_size_bytes,
            service_time: service_time(max_size_bytes, rate_bps)?,
            arrival: 0,
            initial_offset: 0,
            processing: 0,
            accumulated_jitter: 0,
            delay_bound: None,
            jitter_bound: None,
            priority,
        })
    }

    pub fn with_arrival(mut self, arrival: Ticks) -> Self {
        self.arrival = arrival;
        self.initial_offset = arrival;
        self
    }

    pub fn with_processing(mut self, processing: Ticks) -> Self {
        self.processing = processing;
        self
    }

    pub fn with_bounds(mut self, delay: Option<Ticks>, jitter: Option<Ticks>) -> Self {
        self.delay_bound = delay;
        self.jitter_bound = jitter;
        self
    }

    pub fn with_priority(mut self, priority: u8) -> Self {
        self.priority = priority;
        self
    }

    pub fn is_time_sensitive(&self) -> bool {
        self.class == TrafficClass::TimeSensitive
    }

    /// Period of a time-sensitive flow.
    pub fn period(&self) -> Result<Ticks> {
        match (self.class, self.period) {
            (TrafficClass::TimeSensitive, Some(t)) if t > 0 => Ok(t),
            (TrafficClass::TimeSensitive, _) => Err(invalid(format!("flow {} has no positive period", self.id))),
            (TrafficClass::BestEffort, _) => Err(Error::NotApplicable(format!("flow {} is best-effort", self.id))),
        }
    }

    /// Earliest instant the first packet may leave: initial offset plus processing.
    pub fn emergence(&self) -> Ticks {
        self.initial_offset.saturating_add(self.processing)
    }

    pub fn validate(&self) -> Result<()> {
        if self.service_time == 0 {
            return Err(invalid(format!("flow {} has zero service time", self.id)));
        }
        if self.arrival > self.emergence() {
            return Err(invalid(format!("flow {} emerges before it arrives", self.id)));
        }
        match self.class {
            TrafficClass::TimeSensitive => {
                let period = self.period()?;
                if self.size_bytes == 0 {
                    return Err(invalid(format!("flow {} has zero size", self.id)));
                }
                if self.service_time >= period {
                    return Err(invalid(format!(
                        "flow {}: service time {} is not shorter than period {}",
                        self.id, self.service_time, period
                    )));
                }
            }
            TrafficClass::BestEffort => {
                if self.period.is_some() {
                    return Err(invalid(format!("best-effort flow {} carries a period", self.id)));
                }
            }
        }
        Ok(())
    }
}

/// Transmission time of `size_bytes` on a link of `rate_bps`, rounded up to whole ticks.
pub fn service_time(size_bytes: u32, rate_bps: u64) -> Result<Ticks> {
    if rate_bps == 0 {
        return Err(invalid("link rate must be positive"));
    }
    if size_bytes == 0 {
        return Err(invalid("frame size must be at least one byte"));
    }
    let bits = u128::from(size_bytes) * 8 * u128::from(TICKS_PER_SECOND);
    let ticks = bits.div_ceil(u128::from(rate_bps));
    Ticks::try_from(ticks).map_err(|_| Error::Overflow("service time"))
}

/// Bandwidth of a time-sensitive flow in bit/s.
pub fn flow_bandwidth(flow: &Flow) -> Result<f64> {
    let period = flow.period()?;
    if flow.size_bytes == 0 {
        return Err(invalid(format!("flow {} has zero size", flow.id)));
    }
    Ok(f64::from(flow.size_bytes) * 8.0 * TICKS_PER_SECOND as f64 / period as f64)
}

/// The directed edge leaving the egress port.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EdgeSpec {
    pub rate_bps: u64,
    pub queue_count: u8,
    pub max_queue_len: u32,
}

impl EdgeSpec {
    pub const DEFAULT_QUEUES: u8 = 8;
    pub const DEFAULT_MAX_QUEUE_LEN: u32 = 64;

    pub fn gigabit() -> Self {
        Self {
            rate_bps: 1_000_000_000,
            queue_count: Self::DEFAULT_QUEUES,
            max_queue_len: Self::DEFAULT_MAX_QUEUE_LEN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rate_bps == 0 {
            return Err(invalid("link rate must be positive"));
        }
        if self.queue_count == 0 {
            return Err(invalid("at least one queue is required"));
        }
        Ok(())
    }
}

/// Path of an end-to-end flow with its emergence offset at every egress port.
///
/// Only carried as data: scheduling works on a single egress port.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowRoute {
    pub path: Vec<String>,
    pub offsets: Vec<Ticks>,
    pub packets: Range<u64>,
}

impl FlowRoute {
    pub fn new(path: Vec<String>, offsets: Vec<Ticks>, packets: Range<u64>) -> Result<Self> {
        if path.len() < 2 {
            return Err(invalid("a route needs at least two nodes"));
        }
        if offsets.len() != path.len() - 1 {
            return Err(invalid(format!(
                "route with {} nodes has {} egress ports but {} offsets",
                path.len(),
                path.len() - 1,
                offsets.len()
            )));
        }
        Ok(Self { path, offsets, packets })
    }
}

/// A link together with the flows it carries; the ingestion unit of every tool.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "FlowSetDoc", into = "FlowSetDoc")]
pub struct FlowSet {
    pub link: EdgeSpec,
    pub flows: Vec<Flow>,
}

impl FlowSet {
    pub fn new(link: EdgeSpec, flows: Vec<Flow>) -> Result<Self> {
        link.validate()?;
        let mut seen = BTreeSet::new();
        for f in &flows {
            f.validate()?;
            if !seen.insert(f.id) {
                return Err(invalid(format!("duplicate flow id {}", f.id)));
            }
        }
        Ok(Self { link, flows })
    }

    pub fn time_sensitive(&self) -> Vec<Flow> {
        self.flows.iter().filter(|f| f.is_time_sensitive()).cloned().collect()
    }

    pub fn best_effort(&self) -> Vec<Flow> {
        self.flows.iter().filter(|f| !f.is_time_sensitive()).cloned().collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: FlowSetDoc = serde_json::from_str(text)?;
        doc.try_into()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&FlowSetDoc::from(self))?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct LinkDoc {
    pub rate_bps: u64,
    #[serde(default = "default_queues")]
    pub queues: u8,
    #[serde(default = "default_max_queue_len")]
    pub max_queue_len: u32,
}

fn default_queues() -> u8 {
    EdgeSpec::DEFAULT_QUEUES
}

fn default_max_queue_len() -> u32 {
    EdgeSpec::DEFAULT_MAX_QUEUE_LEN
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct FlowDoc {
    pub id: u32,
    pub class: TrafficClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period_ns: Option<u64>,
    pub size_bytes: u32,
    #[serde(default)]
    pub arrival_ns: u64,
    #[serde(default)]
    pub processing_ns: u64,
    #[serde(default)]
    pub accumulated_jitter_ns: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_bound_ns: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jitter_bound_ns: Option<u64>,
    #[serde(default)]
    pub priority: u8,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct FlowSetDoc {
    pub link: LinkDoc,
    pub flows: Vec<FlowDoc>,
}

impl TryFrom<FlowSetDoc> for FlowSet {
    type Error = Error;

    fn try_from(doc: FlowSetDoc) -> Result<Self> {
        let link = EdgeSpec {
            rate_bps: doc.link.rate_bps,
            queue_count: doc.link.queues,
            max_queue_len: doc.link.max_queue_len,
        };
        link.validate()?;
        let flows = doc
            .flows
            .into_iter()
            .map(|d| {
                Ok(Flow {
                    id: FlowId(d.id),
                    class: d.class,
                    period: d.period_ns,
                    size_bytes: d.size_bytes,
                    service_time: service_time(d.size_bytes, link.rate_bps)?,
                    arrival: d.arrival_ns,
                    initial_offset: d.arrival_ns,
                    processing: d.processing_ns,
                    accumulated_jitter: d.accumulated_jitter_ns,
                    delay_bound: d.delay_bound_ns,
                    jitter_bound: d.jitter_bound_ns,
                    priority: d.priority,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        FlowSet::new(link, flows)
    }
}

impl From<FlowSet> for FlowSetDoc {
    fn from(set: FlowSet) -> Self {
        Self::from(&set)
    }
}

impl From<&FlowSet> for FlowSetDoc {
    fn from(set: &FlowSet) -> Self {
        Self {
            link: LinkDoc {
                rate_bps: set.link.rate_bps,
                queues: set.link.queue_count,
                max_queue_len: set.link.max_queue_len,
            },
            flows: set
                .flows
                .iter()
                .map(|f| FlowDoc {
                    id: f.id.0,
                    class: f.class,
                    period_ns: f.period,
                    size_bytes: f.size_bytes,
                    arrival_ns: f.arrival,
                    processing_ns: f.processing,
                    accumulated_jitter_ns: f.accumulated_jitter,
                    delay_bound_ns: f.delay_bound,
                    jitter_bound_ns: f.jitter_bound,
                    priority: f.priority,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn service_time_examples() {
        assert_eq!(service_time(512, 1_000_000_000).unwrap(), 4096);
        assert_eq!(service_time(64, 1_000_000_000).unwrap(), 512);
        assert_eq!(service_time(1, 8_000_000_000).unwrap(), 1);
        // rounds up
        assert_eq!(service_time(1, 3_000_000_000).unwrap(), 3);
    }

    #[test]
    fn service_time_rejects_zero_rate() {
        assert!(matches!(service_time(64, 0), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn bandwidth_examples() {
        let f = Flow::time_sensitive(0, 5_000_000, 512, 1_000_000_000).unwrap();
        assert_eq!(flow_bandwidth(&f).unwrap(), 819_200.0);
        let f = Flow::time_sensitive(1, 500_000, 64, 1_000_000_000).unwrap();
        assert_eq!(flow_bandwidth(&f).unwrap(), 1_024_000.0);
    }

    #[test]
    fn bandwidth_rejects_degenerate_flows() {
        let mut f = Flow::periodic(0, 100, 5);
        f.size_bytes = 0;
        assert!(matches!(flow_bandwidth(&f), Err(Error::InvalidSpec(_))));
        let be = Flow::best_effort(1, 1518, 1_000_000_000, 0).unwrap();
        assert!(matches!(flow_bandwidth(&be), Err(Error::NotApplicable(_))));
    }

    #[test]
    fn service_time_must_be_shorter_than_period() {
        assert!(Flow::periodic(0, 10, 10).validate().is_err());
        assert!(Flow::periodic(0, 10, 9).validate().is_ok());
    }

    #[test]
    fn route_shape_is_checked() {
        let nodes = |n: usize| (0..n).map(|i| format!("n{i}")).collect::<Vec<_>>();
        assert!(FlowRoute::new(nodes(1), vec![], 0..10).is_err());
        assert!(FlowRoute::new(nodes(4), vec![0, 5], 0..10).is_err());
        assert!(FlowRoute::new(nodes(4), vec![0, 5, 9], 0..10).is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{"link":{"rate_bps":1000000000},"flows":[{"id":0,"class":"TS","period_ns":500000,"size_bytes":64,"colour":"red"}]}"#;
        assert!(FlowSet::from_json(text).is_err());
        let text = r#"{"link":{"rate_bps":1000000000,"extra":1},"flows":[]}"#;
        assert!(FlowSet::from_json(text).is_err());
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let text = r#"{"link":{"rate_bps":1000000000},"flows":[
            {"id":0,"class":"TS","period_ns":500000,"size_bytes":64},
            {"id":0,"class":"TS","period_ns":500000,"size_bytes":64}]}"#;
        assert!(FlowSet::from_json(text).is_err());
    }

    #[test]
    fn parses_minimal_document() {
        let text = r#"{"link":{"rate_bps":1000000000},"flows":[
            {"id":3,"class":"TS","period_ns":500000,"size_bytes":512,"arrival_ns":7},
            {"id":4,"class":"BE","size_bytes":1518,"priority":2}]}"#;
        let set = FlowSet::from_json(text).unwrap();
        assert_eq!(set.link.queue_count, 8);
        assert_eq!(set.flows[0].service_time, 4096);
        assert_eq!(set.flows[0].emergence(), 7);
        assert_eq!(set.flows[1].class, TrafficClass::BestEffort);
        assert_eq!(set.time_sensitive().len(), 1);
    }

    fn arb_flow(id: u32) -> impl Strategy<Value = Flow> {
        (
            any::<bool>(),
            1_000u64..10_000_000,
            1u32..1518,
            0u64..1_000_000,
            0u64..1_000,
            0u64..1_000,
            proptest::option::of(0u64..1_000_000),
            proptest::option::of(0u64..1_000_000),
            0u8..8,
        )
            .prop_map(move |(ts, period, size, arrival, proc_, acc, db, jb, prio)| {
                let rate = 1_000_000_000;
                let mut f = if ts {
                    Flow::periodic(id, period.max(20_000), service_time(size.min(512), rate).unwrap())
                } else {
                    Flow::best_effort(id, size, rate, prio).unwrap()
                };
                f.size_bytes = if ts { size.min(512) } else { size };
                f.arrival = arrival;
                f.initial_offset = arrival;
                f.processing = proc_;
                f.accumulated_jitter = acc;
                f.delay_bound = db;
                f.jitter_bound = jb;
                f.priority = prio;
                f
            })
    }

    proptest! {
        #[test]
        fn flowset_json_round_trip(flows in proptest::collection::vec(any::<u8>(), 0..6)
            .prop_flat_map(|v| v.iter().enumerate().map(|(i, _)| arb_flow(i as u32)).collect::<Vec<_>>()),
            queues in 1u8..9, qmax in 1u32..256)
        {
            let link = EdgeSpec { rate_bps: 1_000_000_000, queue_count: queues, max_queue_len: qmax };
            let set = FlowSet::new(link, flows).unwrap();
            let back = FlowSet::from_json(&set.to_json().unwrap()).unwrap();
            prop_assert_eq!(back, set);
        }

        #[test]
        fn service_time_is_monotone(size in 1u32..10_000, extra in 0u32..1000, rate in 1u64..100_000_000_000, faster in 0u64..1_000_000_000) {
            prop_assert!(service_time(size, rate).unwrap() <= service_time(size + extra, rate).unwrap());
            prop_assert!(service_time(size, rate + faster).unwrap() <= service_time(size, rate).unwrap());
        }
    }
}
