use std::time::Instant;

use crate::combinability::{gcd_periods, hyperperiod, MAX_WINDOWS};
use crate::error::{invalid, Error, Result};
use crate::flow::{EdgeSpec, Flow, Ticks};

use super::admission::approximate_demand;
use super::offsets::{offsets_among, Obstacle};
use super::relax::{eliminate_until, ConstraintSet, PacketTable};
use super::{
    admission_check, nonconflict_offsets, partition_flowset, scheduled_flows, verify_schedule, Limits, Schedule,
    ScheduleMode, ScheduleVerdict, Violation,
};

/// Synthesises a collision-free schedule for the time-sensitive flows.
///
/// Fixed offsets are used for the whole set when its periods share a divisor
/// larger than the total service time. Otherwise the set is partitioned,
/// subsets get fixed offsets where they can, and the remaining flows are
/// placed packet by packet over one hyperperiod. A schedule is returned only
/// together with a schedulable verdict.
pub fn compute_static_schedule(
    flows: &[Flow],
    edge: &EdgeSpec,
    limits: &Limits,
) -> Result<(Option<Schedule>, ScheduleVerdict)> {
    let started = Instant::now();
    let deadline = started + limits.timeout;
    let ts: Vec<Flow> = flows.iter().filter(|f| f.is_time_sensitive()).cloned().collect();
    for f in &ts {
        f.validate()?;
    }
    ConstraintSet::from_flows(&ts)?;

    if !admission_check(&ts, edge) {
        let refs: Vec<&Flow> = ts.iter().collect();
        let v = Violation::Bandwidth {
            demand_bps: approximate_demand(&refs),
            capacity_bps: edge.rate_bps,
        };
        return Ok((None, ScheduleVerdict::failed(false, vec![v])));
    }
    if ts.is_empty() {
        let empty = Schedule::ideal(&[], &[], 1)?;
        return Ok((Some(empty), ScheduleVerdict::ok()));
    }

    let periods: Vec<Ticks> = ts.iter().map(Flow::period).collect::<Result<_>>()?;
    let l = hyperperiod(&periods)?;
    if l > u128::from(limits.hyperperiod_cap) {
        return Err(Error::HyperperiodOverflow {
            hyperperiod: l,
            cap: u128::from(limits.hyperperiod_cap),
        });
    }
    let l = l as Ticks;
    let g = gcd_periods(&periods)?;
    let total: u128 = ts.iter().map(|f| u128::from(f.service_time)).sum();

    if g > 1 && total < u128::from(g) {
        let a = nonconflict_offsets(&ts)?;
        if let Some(flow) = a.failed {
            return Ok((None, ScheduleVerdict::failed(true, vec![Violation::DelayBudget { flow }])));
        }
        return Ok((Some(Schedule::ideal(&ts, &a.offsets, l)?), ScheduleVerdict::ok()));
    }

    let timeout = |started: Instant| Violation::Timeout {
        elapsed_ms: started.elapsed().as_millis() as u64,
    };
    let mut fixed: Vec<Option<Ticks>> = vec![None; ts.len()];
    let mut obstacles: Vec<Obstacle> = Vec::new();
    let mut unsolved = false;
    for subset in partition_flowset(&ts)? {
        if Instant::now() >= deadline {
            return Ok((None, ScheduleVerdict::failed(false, vec![timeout(started)])));
        }
        let members: Vec<Flow> = subset.iter().map(|&i| ts[i].clone()).collect();
        let sub_periods: Vec<Ticks> = subset.iter().map(|&i| periods[i]).collect();
        let gi = gcd_periods(&sub_periods)?;
        let sum: u128 = members.iter().map(|f| u128::from(f.service_time)).sum();
        if gi <= 1 || sum >= u128::from(gi) {
            continue;
        }
        let a = offsets_among(&members, &obstacles)?;
        if a.unsolved() {
            unsolved = true;
            continue;
        }
        for (k, &i) in subset.iter().enumerate() {
            fixed[i] = Some(a.offsets[k]);
            obstacles.push(Obstacle {
                offset: a.offsets[k],
                period: periods[i],
                service_time: ts[i].service_time,
            });
        }
    }

    if fixed.iter().all(Option::is_some) {
        let offsets: Vec<Ticks> = fixed.iter().flatten().copied().collect();
        return Ok((Some(Schedule::ideal(&ts, &offsets, l)?), ScheduleVerdict::ok()));
    }

    let packets: u128 = periods.iter().map(|&t| u128::from(l / t)).sum();
    if packets > MAX_WINDOWS {
        return Err(invalid(format!("a table of {packets} packets exceeds the enumeration limit")));
    }
    // Fixed offsets only seed the table; their packets may still move within
    // their own jitter bounds.
    let table = PacketTable::from_origins(&ts, &fixed, l)?;
    let constraints = ConstraintSet::from_flows(&ts)?;
    let relaxed = match eliminate_until(&table, &constraints, Some(deadline)) {
        Ok(t) => t,
        Err(Error::RelaxationExhausted { flow, packet }) => {
            let v = Violation::RelaxationExhausted { flow, packet };
            return Ok((None, ScheduleVerdict::failed(unsolved, vec![v])));
        }
        Err(Error::Timeout { elapsed_ms }) => {
            return Ok((None, ScheduleVerdict::failed(unsolved, vec![Violation::Timeout { elapsed_ms }])));
        }
        Err(Error::PinnedCollision { flows, packets }) => {
            let v = Violation::Overlap {
                flows,
                packets,
                time: 0,
            };
            return Ok((None, ScheduleVerdict::failed(unsolved, vec![v])));
        }
        Err(e) => return Err(e),
    };
    let schedule = Schedule {
        mode: ScheduleMode::PerPacketTable,
        hyperperiod: l,
        flows: scheduled_flows(&ts, None)?,
        packet_table: relaxed.windows(),
    };
    let mut verdict = verify_schedule(&schedule, &ts, edge)?;
    if !verdict.schedulable {
        verdict.unsolved |= unsolved;
        return Ok((None, verdict));
    }
    Ok((Some(schedule), verdict))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combinability::brute_force_conflicts;
    use proptest::prelude::*;

    fn coprime_trio(jitter: Ticks) -> Vec<Flow> {
        vec![
            Flow::periodic(1, 14, 3),
            Flow::periodic(2, 27, 3).with_arrival(5),
            Flow::periodic(3, 61, 4).with_arrival(9),
        ]
        .into_iter()
        .map(|f| f.with_bounds(Some(jitter), Some(jitter)))
        .collect()
    }

    fn edge() -> EdgeSpec {
        EdgeSpec {
            rate_bps: 8_000_000_000,
            ..EdgeSpec::gigabit()
        }
    }

    #[test]
    fn coprime_trio_with_slack_becomes_a_packet_table() {
        let (s, v) = compute_static_schedule(&coprime_trio(6), &edge(), &Limits::default()).unwrap();
        assert!(v.schedulable, "{v:?}");
        let s = s.unwrap();
        assert_eq!(s.mode, ScheduleMode::PerPacketTable);
        assert_eq!(s.hyperperiod, 23058);
        assert_eq!(s.packet_table.len(), 1647 + 854 + 378);
        let offsets = [0, 5, 9];
        let flows = coprime_trio(6);
        assert!(!brute_force_conflicts(&flows, &offsets, 23058).unwrap().is_empty());
        assert!(verify_schedule(&s, &flows, &edge()).unwrap().schedulable);
    }

    #[test]
    fn coprime_trio_without_slack_is_unschedulable() {
        let (s, v) = compute_static_schedule(&coprime_trio(0), &edge(), &Limits::default()).unwrap();
        assert!(s.is_none());
        assert!(!v.schedulable);
        assert!(matches!(v.violations[0], Violation::RelaxationExhausted { .. }));
    }

    #[test]
    fn common_divisor_gives_ideal_offsets() {
        let flows = [Flow::periodic(1, 10, 2), Flow::periodic(2, 20, 3), Flow::periodic(3, 40, 4)];
        let (s, v) = compute_static_schedule(&flows, &edge(), &Limits::default()).unwrap();
        assert!(v.schedulable);
        let s = s.unwrap();
        assert_eq!(s.mode, ScheduleMode::IdealOffsets);
        let offsets: Vec<Ticks> = s.offsets().values().copied().collect();
        assert!(brute_force_conflicts(&flows, &offsets, 40).unwrap().is_empty());
    }

    #[test]
    fn hyperperiod_cap_is_enforced() {
        let limits = Limits {
            hyperperiod_cap: 1000,
            ..Limits::default()
        };
        assert!(matches!(
            compute_static_schedule(&coprime_trio(10), &edge(), &limits),
            Err(Error::HyperperiodOverflow { hyperperiod: 23058, .. })
        ));
    }

    #[test]
    fn over_capacity_is_a_bandwidth_violation() {
        let mut a = Flow::periodic(1, 2, 1);
        a.size_bytes = 2;
        let mut b = Flow::periodic(2, 2, 1);
        b.size_bytes = 2;
        let (s, v) = compute_static_schedule(&[a, b], &edge(), &Limits::default()).unwrap();
        assert!(s.is_none());
        assert!(matches!(v.violations[0], Violation::Bandwidth { .. }));
    }

    #[test]
    fn empty_set_is_trivially_schedulable() {
        let (s, v) = compute_static_schedule(&[], &edge(), &Limits::default()).unwrap();
        assert!(v.schedulable);
        assert!(s.unwrap().windows().unwrap().is_empty());
    }

    fn arb_flows() -> impl Strategy<Value = Vec<Flow>> {
        proptest::collection::vec((2u64..40, 1u64..5, 0u64..50, 0u64..20), 1..5).prop_map(|specs| {
            specs
                .into_iter()
                .enumerate()
                .filter(|(_, (t, tau, _, _))| tau < t)
                .map(|(i, (t, tau, a, j))| {
                    Flow::periodic(i as u32, t, tau)
                        .with_arrival(a)
                        .with_bounds(Some(t), Some(j.min(t)))
                        .with_priority((i % 3) as u8)
                })
                .collect()
        })
    }

    /// Periods share a divisor `g` and the service times fit inside it.
    fn arb_lattice_flows() -> impl Strategy<Value = Vec<Flow>> {
        (8u64..40, proptest::collection::vec((1u64..5, 1u64..4, 0u64..100), 2..6)).prop_map(|(g, specs)| {
            let mut budget = g - 1;
            specs
                .into_iter()
                .enumerate()
                .filter_map(|(i, (tau, k, a))| {
                    let tau = tau.min(budget);
                    if tau == 0 {
                        return None;
                    }
                    budget -= tau;
                    Some(Flow::periodic(i as u32, g * k, tau).with_arrival(a).with_bounds(Some(g * k), None))
                })
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn verifier_accepts_every_returned_schedule(flows in arb_flows()) {
            let limits = Limits { hyperperiod_cap: 200_000, ..Limits::default() };
            if let Ok((Some(s), v)) = compute_static_schedule(&flows, &edge(), &limits) {
                prop_assert!(v.schedulable);
                let check = verify_schedule(&s, &flows, &edge()).unwrap();
                prop_assert!(check.schedulable, "{:?}", check.violations);
            }
        }

        #[test]
        fn synthesis_is_deterministic(flows in arb_flows()) {
            let limits = Limits { hyperperiod_cap: 200_000, ..Limits::default() };
            let a = compute_static_schedule(&flows, &edge(), &limits).ok();
            let b = compute_static_schedule(&flows, &edge(), &limits).ok();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn ideal_path_is_monotone_under_removal(flows in arb_lattice_flows(), drop in 0usize..6) {
            let ideal = |fs: &[Flow]| {
                matches!(
                    compute_static_schedule(fs, &edge(), &Limits::default()),
                    Ok((Some(Schedule { mode: ScheduleMode::IdealOffsets, .. }), _))
                )
            };
            prop_assume!(ideal(&flows));
            let mut fewer = flows.clone();
            fewer.remove(drop % flows.len());
            prop_assert!(ideal(&fewer));
        }
    }
}
