//! Seeded suites over the standard workloads, comparing best-effort policies.

use std::io::Write;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combinability::csv_err;
use crate::error::{invalid, Result};
use crate::flow::{EdgeSpec, Ticks};
use crate::nds::{compute_static_schedule, Limits, ScheduleMode};
use crate::sim::{generate_workload, run_simulation, FlowMetrics, Policy, Scenario, WorkloadSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub counts: Vec<usize>,
    pub seeds: Vec<u64>,
    pub be_load: f64,
    pub policies: Vec<Policy>,
    /// Gate cycles simulated per run.
    pub cycles: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            counts: vec![5, 20, 50, 100],
            seeds: (1..=20).collect(),
            be_load: 0.5,
            policies: Policy::ALL.to_vec(),
            cycles: 10,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.counts.is_empty() || self.seeds.is_empty() || self.policies.is_empty() {
            return Err(invalid("an experiment needs counts, seeds and policies"));
        }
        if self.cycles == 0 {
            return Err(invalid("at least one cycle must be simulated"));
        }
        Ok(())
    }
}

/// Outcome of one (count, seed, policy) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub count: usize,
    pub seed: u64,
    pub policy: Policy,
    pub schedulable: bool,
    pub ideal: bool,
    pub synthesis: Duration,
    pub utilization: f64,
    pub ts_utilization: f64,
    pub be_utilization: f64,
    pub drops: u64,
    pub misses: u64,
    pub ts_max_delay: Option<Ticks>,
    pub ts_max_jitter: Option<Ticks>,
    pub error: Option<String>,
    pub flows: Vec<FlowMetrics>,
}

impl ExperimentRow {
    fn failed(count: usize, seed: u64, policy: Policy, synthesis: Duration, error: String) -> Self {
        Self {
            count,
            seed,
            policy,
            schedulable: false,
            ideal: false,
            synthesis,
            utilization: 0.0,
            ts_utilization: 0.0,
            be_utilization: 0.0,
            drops: 0,
            misses: 0,
            ts_max_delay: None,
            ts_max_jitter: None,
            error: Some(error),
            flows: Vec::new(),
        }
    }
}

/// Runs every combination, in parallel, and returns rows sorted by count,
/// seed and policy. Failing runs are recorded rather than aborting the suite.
pub fn run_experiment(spec: &ExperimentSpec, edge: EdgeSpec, limits: &Limits) -> Result<Vec<ExperimentRow>> {
    spec.validate()?;
    let jobs: Vec<(usize, u64)> = spec
        .counts
        .iter()
        .flat_map(|&c| spec.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let mut rows: Vec<ExperimentRow> = jobs
        .par_iter()
        .flat_map_iter(|&(count, seed)| run_one(spec, edge, limits, count, seed))
        .collect();
    rows.sort_by_key(|r| (r.count, r.seed, r.policy));
    Ok(rows)
}

fn run_one(spec: &ExperimentSpec, edge: EdgeSpec, limits: &Limits, count: usize, seed: u64) -> Vec<ExperimentRow> {
    let fail_all = |synthesis, msg: String| {
        spec.policies
            .iter()
            .map(|&p| ExperimentRow::failed(count, seed, p, synthesis, msg.clone()))
            .collect::<Vec<_>>()
    };
    let workload = match generate_workload(&WorkloadSpec::standard(count, spec.be_load), edge, seed) {
        Ok(w) => w,
        Err(e) => return fail_all(Duration::ZERO, e.to_string()),
    };
    let started = Instant::now();
    let synthesis = compute_static_schedule(&workload.flowset.flows, &edge, limits);
    let elapsed = started.elapsed();
    let schedule = match synthesis {
        Ok((Some(s), _)) => s,
        Ok((None, v)) => return fail_all(elapsed, format!("unschedulable: {:?}", v.violations.first())),
        Err(e) => return fail_all(elapsed, e.to_string()),
    };
    let ideal = schedule.mode == ScheduleMode::IdealOffsets;

    spec.policies
        .iter()
        .map(|&policy| {
            let run = Scenario::build(workload.clone(), schedule.clone(), policy, spec.cycles, seed)
                .and_then(|sc| run_simulation(&sc));
            match run {
                Ok((_, report)) => {
                    let ts: Vec<&FlowMetrics> = report
                        .flows
                        .iter()
                        .filter(|f| f.class == crate::flow::TrafficClass::TimeSensitive)
                        .collect();
                    ExperimentRow {
                        count,
                        seed,
                        policy,
                        schedulable: true,
                        ideal,
                        synthesis: elapsed,
                        utilization: report.utilization,
                        ts_utilization: report.ts_utilization,
                        be_utilization: report.be_utilization,
                        drops: report.dropped,
                        misses: report.misses,
                        ts_max_delay: ts.iter().filter_map(|f| f.delay_max).max(),
                        ts_max_jitter: ts.iter().filter_map(|f| f.jitter).max(),
                        error: None,
                        flows: report.flows,
                    }
                }
                Err(e) => ExperimentRow::failed(count, seed, policy, elapsed, e.to_string()),
            }
        })
        .collect()
}

/// One row per run.
pub fn write_summary_csv<W: Write>(rows: &[ExperimentRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "count",
        "seed",
        "policy",
        "schedulable",
        "ideal",
        "synthesis_ms",
        "utilization",
        "ts_utilization",
        "be_utilization",
        "drops",
        "misses",
        "ts_max_delay_ns",
        "ts_max_jitter_ns",
        "error",
    ])
    .map_err(csv_err)?;
    let opt = |v: Option<Ticks>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.count.to_string(),
            r.seed.to_string(),
            r.policy.to_string(),
            r.schedulable.to_string(),
            r.ideal.to_string(),
            format!("{:.3}", r.synthesis.as_secs_f64() * 1e3),
            format!("{:.6}", r.utilization),
            format!("{:.6}", r.ts_utilization),
            format!("{:.6}", r.be_utilization),
            r.drops.to_string(),
            r.misses.to_string(),
            opt(r.ts_max_delay),
            opt(r.ts_max_jitter),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-flow delay and jitter of every run.
pub fn write_flows_csv<W: Write>(rows: &[ExperimentRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "count",
        "seed",
        "policy",
        "flow_id",
        "class",
        "transmitted",
        "dropped",
        "delay_min_ns",
        "delay_max_ns",
        "delay_mean_ns",
        "jitter_ns",
    ])
    .map_err(csv_err)?;
    let opt = |v: Option<Ticks>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        for f in &r.flows {
            w.write_record([
                r.count.to_string(),
                r.seed.to_string(),
                r.policy.to_string(),
                f.flow.to_string(),
                if f.class == crate::flow::TrafficClass::TimeSensitive { "TS" } else { "BE" }.to_string(),
                f.transmitted.to_string(),
                f.dropped.to_string(),
                opt(f.delay_min),
                opt(f.delay_max),
                f.delay_mean.map(|m| format!("{m:.3}")).unwrap_or_default(),
                opt(f.jitter),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentSpec {
        ExperimentSpec {
            counts: vec![20, 5],
            seeds: vec![3, 1],
            be_load: 0.5,
            policies: Policy::ALL.to_vec(),
            cycles: 1,
        }
    }

    #[test]
    fn rows_come_out_in_canonical_order() {
        let rows = run_experiment(&small(), EdgeSpec::gigabit(), &Limits::default()).unwrap();
        assert_eq!(rows.len(), 2 * 2 * 3);
        let keys: Vec<(usize, u64, Policy)> = rows.iter().map(|r| (r.count, r.seed, r.policy)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert!(rows.iter().all(|r| r.schedulable && r.ideal && r.ts_max_jitter == Some(0)));
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let spec = small();
        let a = run_experiment(&spec, EdgeSpec::gigabit(), &Limits::default()).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool
            .install(|| run_experiment(&spec, EdgeSpec::gigabit(), &Limits::default()))
            .unwrap();
        let strip = |rows: Vec<ExperimentRow>| {
            rows.into_iter()
                .map(|mut r| {
                    r.synthesis = Duration::ZERO;
                    r
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(a), strip(b));
    }

    #[test]
    fn empty_spec_is_rejected() {
        let spec = ExperimentSpec {
            seeds: vec![],
            ..ExperimentSpec::default()
        };
        assert!(run_experiment(&spec, EdgeSpec::gigabit(), &Limits::default()).is_err());
    }

    #[test]
    fn summary_csv_has_one_line_per_row() {
        let rows = run_experiment(&small(), EdgeSpec::gigabit(), &Limits::default()).unwrap();
        let mut out = Vec::new();
        write_summary_csv(&rows, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), rows.len() + 1);
    }
}
