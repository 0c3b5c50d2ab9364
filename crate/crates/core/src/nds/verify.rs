use std::collections::BTreeMap;

use crate::combinability::{brute_force_conflicts, sweep_windows};
use crate::error::Result;
use crate::flow::{EdgeSpec, Flow, FlowId, Ticks};

use super::admission::approximate_demand;
use super::{admission_check, Schedule, ScheduleMode, ScheduleVerdict, Violation};

/// Checks a schedule against the flows it claims to serve.
///
/// Independent of how the schedule was built: overlaps come from direct
/// window enumeration, and every window is compared with its packet's
/// emergence time and the flow's delay and jitter bounds.
pub fn verify_schedule(schedule: &Schedule, flows: &[Flow], edge: &EdgeSpec) -> Result<ScheduleVerdict> {
    let ts: Vec<&Flow> = flows.iter().filter(|f| f.is_time_sensitive()).collect();
    let mut violations = Vec::new();

    let owned: Vec<Flow> = ts.iter().map(|&f| f.clone()).collect();
    if !admission_check(&owned, edge) {
        violations.push(Violation::Bandwidth {
            demand_bps: approximate_demand(&ts),
            capacity_bps: edge.rate_bps,
        });
    }

    let l = schedule.hyperperiod;
    let windows = schedule.windows()?;
    let mut per_flow: BTreeMap<FlowId, Vec<(u64, Ticks, Ticks)>> = BTreeMap::new();
    for w in &windows {
        per_flow.entry(w.flow).or_default().push((w.index, w.start, w.end));
    }

    for f in &ts {
        let t = f.period()?;
        let expected = if l.is_multiple_of(t) { l / t } else { 0 };
        let mut got = per_flow.remove(&f.id).unwrap_or_default();
        got.sort_unstable();
        let indices_ok = got.iter().enumerate().all(|(k, w)| w.0 == k as u64);
        let lengths_ok = got.iter().all(|w| w.2 - w.1 == f.service_time);
        if got.len() as u64 != expected || !indices_ok || !lengths_ok {
            violations.push(Violation::Coverage {
                flow: f.id,
                expected,
                found: got.len() as u64,
            });
            continue;
        }
        let mut delays = Vec::with_capacity(got.len());
        for &(n, start, _) in &got {
            let emergence = f.emergence() + n * t;
            let late = f.delay_bound.is_some_and(|d| start > emergence.saturating_add(d));
            if start < emergence || late {
                violations.push(Violation::Deadline {
                    flow: f.id,
                    packet: n,
                    emergence,
                    start,
                });
            } else {
                delays.push(start - emergence);
            }
        }
        if let (Some(bound), Some(max), Some(min)) = (f.jitter_bound, delays.iter().max(), delays.iter().min()) {
            if max - min > bound {
                violations.push(Violation::Jitter {
                    flow: f.id,
                    jitter: max - min,
                    bound,
                });
            }
        }
    }
    for (&flow, extra) in &per_flow {
        violations.push(Violation::Coverage {
            flow,
            expected: 0,
            found: extra.len() as u64,
        });
    }

    let conflicts = match schedule.mode {
        ScheduleMode::IdealOffsets => {
            let offsets = schedule.offsets();
            let known: Vec<Flow> = owned.iter().filter(|f| offsets.contains_key(&f.id)).cloned().collect();
            let o: Vec<Ticks> = known.iter().map(|f| offsets[&f.id]).collect();
            brute_force_conflicts(&known, &o, l.max(1))?
        }
        ScheduleMode::PerPacketTable => sweep_windows(schedule.timed_windows()?, Some(l.max(1))),
    };
    violations.extend(conflicts.entries.into_iter().map(|c| Violation::Overlap {
        flows: c.flow_ids,
        packets: c.packet_indices,
        time: c.time_start,
    }));

    Ok(ScheduleVerdict {
        schedulable: violations.is_empty(),
        unsolved: false,
        violations,
    })
}
