use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::flow::{EdgeSpec, Flow, FlowId, FlowSet, Ticks, TICKS_PER_SECOND};

use super::rng::SimRng;

/// The three period classes: 0.5 ms, 2 ms and 5 ms.
pub const STANDARD_PERIODS: [Ticks; 3] = [500_000, 2_000_000, 5_000_000];
pub const TS_SIZE_BYTES: (u32, u32) = (64, 512);
pub const BE_SIZE_BYTES: (u32, u32) = (64, 1518);

/// Flows per period class for the standard flow counts.
pub fn standard_split(count: usize) -> Option<[usize; 3]> {
    match count {
        5 => Some([2, 2, 1]),
        20 => Some([6, 7, 7]),
        50 => Some([16, 17, 17]),
        100 => Some([33, 33, 34]),
        _ => None,
    }
}

/// Poisson source of best-effort frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeSource {
    pub flow: FlowId,
    pub min_size_bytes: u32,
    /// Frame sizes are uniform up to the flow's `size_bytes`.
    pub mean_interarrival_ns: f64,
    /// Frames already queued at time zero.
    #[serde(default)]
    pub backlog: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub flow_count: usize,
    /// Relative class weights; required for counts without a standard split.
    #[serde(default)]
    pub ratios: Option<[usize; 3]>,
    /// Best-effort load as a fraction of the link rate.
    #[serde(default)]
    pub be_load: f64,
    #[serde(default = "default_sources")]
    pub be_sources: usize,
}

fn default_sources() -> usize {
    4
}

impl WorkloadSpec {
    pub fn standard(flow_count: usize, be_load: f64) -> Self {
        Self {
            flow_count,
            ratios: None,
            be_load,
            be_sources: default_sources(),
        }
    }

    fn split(&self) -> Result<[usize; 3]> {
        let Some(r) = self.ratios else {
            return standard_split(self.flow_count)
                .ok_or_else(|| invalid(format!("no standard split for {} flows; give ratios", self.flow_count)));
        };
        let total: usize = r.iter().sum();
        if total == 0 {
            return Err(invalid("ratios must not all be zero"));
        }
        // Largest remainder, earlier classes first on ties.
        let n = self.flow_count;
        let mut counts = r.map(|w| n * w / total);
        let mut rest: Vec<(usize, usize)> = (0..3).map(|k| (n * r[k] % total, k)).collect();
        rest.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let short = n - counts.iter().sum::<usize>();
        for &(_, k) in rest.iter().take(short) {
            counts[k] += 1;
        }
        Ok(counts)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Workload {
    pub flowset: FlowSet,
    pub be_sources: Vec<BeSource>,
}

/// Draws a seeded workload: time-sensitive flows spread over the three
/// period classes with uniform sizes and first arrivals, plus Poisson
/// best-effort sources sharing the requested load.
///
/// Time-sensitive flows get ids `0..n` in class order, a delay bound of one
/// period and a jitter bound of half a period. Best-effort sources follow
/// with priorities `0, 1, …`.
pub fn generate_workload(spec: &WorkloadSpec, edge: EdgeSpec, seed: u64) -> Result<Workload> {
    let split = spec.split()?;
    if !(0.0..=10.0).contains(&spec.be_load) {
        return Err(invalid("best-effort load must lie in [0, 10]"));
    }
    let mut rng = SimRng::stream(seed, 0);
    let mut flows = Vec::with_capacity(spec.flow_count + spec.be_sources);
    let mut id = 0u32;
    for (k, &n) in split.iter().enumerate() {
        let t = STANDARD_PERIODS[k];
        for _ in 0..n {
            let size = rng.inclusive(u64::from(TS_SIZE_BYTES.0), u64::from(TS_SIZE_BYTES.1)) as u32;
            let arrival = rng.below(t);
            let f = Flow::time_sensitive(id, t, size, edge.rate_bps)?
                .with_arrival(arrival)
                .with_bounds(Some(t), Some(t / 2));
            flows.push(f);
            id += 1;
        }
    }

    let mut be_sources = Vec::new();
    if spec.be_load > 0.0 && spec.be_sources > 0 {
        let mean_bits = f64::from(BE_SIZE_BYTES.0 + BE_SIZE_BYTES.1) / 2.0 * 8.0;
        let per_source_bps = spec.be_load * edge.rate_bps as f64 / spec.be_sources as f64;
        let mean_gap = mean_bits * TICKS_PER_SECOND as f64 / per_source_bps;
        for k in 0..spec.be_sources {
            let priority = u8::try_from(k).map_err(|_| invalid("too many best-effort sources"))?;
            flows.push(Flow::best_effort(id, BE_SIZE_BYTES.1, edge.rate_bps, priority)?);
            be_sources.push(BeSource {
                flow: FlowId(id),
                min_size_bytes: BE_SIZE_BYTES.0,
                mean_interarrival_ns: mean_gap,
                backlog: 0,
            });
            id += 1;
        }
    }
    Ok(Workload {
        flowset: FlowSet::new(edge, flows)?,
        be_sources,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn class_counts(w: &Workload) -> [usize; 3] {
        let mut c = [0; 3];
        for f in w.flowset.time_sensitive() {
            let k = STANDARD_PERIODS.iter().position(|&t| Some(t) == f.period).unwrap();
            c[k] += 1;
        }
        c
    }

    #[test]
    fn standard_splits() {
        let edge = EdgeSpec::gigabit();
        for (n, split) in [(5, [2, 2, 1]), (20, [6, 7, 7]), (50, [16, 17, 17]), (100, [33, 33, 34])] {
            let w = generate_workload(&WorkloadSpec::standard(n, 0.0), edge, 1).unwrap();
            assert_eq!(class_counts(&w), split);
            assert!(w.be_sources.is_empty());
        }
    }

    #[test]
    fn flows_respect_the_profile() {
        let w = generate_workload(&WorkloadSpec::standard(100, 0.5), EdgeSpec::gigabit(), 3).unwrap();
        for f in w.flowset.time_sensitive() {
            assert!((64..=512).contains(&f.size_bytes));
            assert!(f.arrival < f.period.unwrap());
            assert_eq!(f.service_time, u64::from(f.size_bytes) * 8);
        }
        assert_eq!(w.be_sources.len(), 4);
        // 50 % of 1 Gbit/s over four sources of 791-byte frames on average.
        let gap = w.be_sources[0].mean_interarrival_ns;
        assert!((gap - 6328.0 * 4.0 / 0.5).abs() < 1e-6, "{gap}");
    }

    #[test]
    fn same_seed_same_flows() {
        let spec = WorkloadSpec::standard(20, 0.5);
        let a = generate_workload(&spec, EdgeSpec::gigabit(), 9).unwrap();
        let b = generate_workload(&spec, EdgeSpec::gigabit(), 9).unwrap();
        let c = generate_workload(&spec, EdgeSpec::gigabit(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn other_counts_need_ratios() {
        let mut spec = WorkloadSpec::standard(7, 0.0);
        assert!(generate_workload(&spec, EdgeSpec::gigabit(), 1).is_err());
        spec.ratios = Some([1, 1, 1]);
        let w = generate_workload(&spec, EdgeSpec::gigabit(), 1).unwrap();
        assert_eq!(class_counts(&w), [3, 2, 2]);
    }
}
