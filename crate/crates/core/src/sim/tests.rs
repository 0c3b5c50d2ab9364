use super::*;
use crate::flow::{EdgeSpec, Flow, FlowSet, TrafficClass};
use crate::nds::{compute_static_schedule, Limits, ScheduleMode};

/// One byte per tick, matching `Flow::periodic`.
fn byte_link() -> EdgeSpec {
    EdgeSpec {
        rate_bps: 8_000_000_000,
        ..EdgeSpec::gigabit()
    }
}

fn build(workload: Workload, policy: Policy, cycles: u64, seed: u64) -> Scenario {
    let (schedule, verdict) =
        compute_static_schedule(&workload.flowset.flows, &workload.flowset.link, &Limits::default()).unwrap();
    assert!(verdict.schedulable, "{verdict:?}");
    Scenario::build(workload, schedule.unwrap(), policy, cycles, seed).unwrap()
}

fn standard(n: usize, load: f64, policy: Policy, seed: u64, cycles: u64) -> Scenario {
    let w = generate_workload(&WorkloadSpec::standard(n, load), EdgeSpec::gigabit(), seed).unwrap();
    build(w, policy, cycles, seed)
}

fn ts_starts(log: &EventLog, sc: &Scenario) -> Vec<(Ticks, FlowId, u64)> {
    let ts: std::collections::BTreeSet<FlowId> = sc.flowset.time_sensitive().iter().map(|f| f.id).collect();
    log.events
        .iter()
        .filter(|e| e.kind == EventKind::TxStart && e.flow.is_some_and(|f| ts.contains(&f)))
        .map(|e| (e.time, e.flow.unwrap(), e.packet.unwrap()))
        .collect()
}

/// Checks the structural invariants of a log against its scenario.
fn check_log(log: &EventLog, sc: &Scenario) {
    assert!(log.events.windows(2).all(|w| w[0].time <= w[1].time), "time goes backwards");
    let tx = log.transmissions();
    let starts = log.events.iter().filter(|e| e.kind == EventKind::TxStart).count();
    assert_eq!(tx.len(), starts, "unmatched tx-start");
    for w in tx.windows(2) {
        assert!(w[0].1 <= w[1].0, "transmissions {:?} and {:?} overlap", w[0], w[1]);
    }
    let be_mask = sc.assignment.be_mask();
    let be_flows: std::collections::BTreeSet<FlowId> = sc.flowset.best_effort().iter().map(|f| f.id).collect();
    for &(s, e, f, _) in &tx {
        if !be_flows.contains(&f) {
            continue;
        }
        let mut t = s;
        while t < e {
            let row = &sc.gcl.rows[sc.gcl.row_at(t)];
            assert!(row.gate_mask & be_mask != 0, "best-effort frame of {f} enters a reserved row at {t}");
            t += row.end - t % sc.gcl.cycle;
        }
    }
}

fn conserved(report: &MetricsReport) -> bool {
    report
        .flows
        .iter()
        .all(|f| f.arrived == f.transmitted + f.queued + f.dropped)
}

#[test]
fn single_flow_closed_form() {
    let f = Flow::periodic(1, 10, 2).with_processing(1);
    let w = Workload {
        flowset: FlowSet::new(byte_link(), vec![f]).unwrap(),
        be_sources: vec![],
    };
    let sc = build(w, Policy::ResidualFifo, 10, 1);
    assert_eq!(sc.schedule.offsets()[&FlowId(1)], 1);
    let (log, report) = run_simulation(&sc).unwrap();
    let m = report.flow(FlowId(1)).unwrap();
    // Arrival to end of transmission: one tick of processing plus two of service.
    assert_eq!((m.delay_min, m.delay_max, m.jitter), (Some(3), Some(3), Some(0)));
    assert_eq!(m.transmitted, 10);
    assert_eq!(report.utilization, 0.2);
    check_log(&log, &sc);
}

#[test]
fn residual_slot_hand_trace() {
    let ts = Flow::periodic(1, 10, 2);
    let mut be = Flow::periodic(2, 10, 3);
    be.class = TrafficClass::BestEffort;
    be.period = None;
    let w = Workload {
        flowset: FlowSet::new(byte_link(), vec![ts, be]).unwrap(),
        be_sources: vec![BeSource {
            flow: FlowId(2),
            min_size_bytes: 3,
            mean_interarrival_ns: 1e15,
            backlog: 2,
        }],
    };
    let sc = build(w, Policy::ResidualFifo, 2, 1);
    let (log, report) = run_simulation(&sc).unwrap();
    let be_starts: Vec<Ticks> = log
        .transmissions()
        .iter()
        .filter(|t| t.2 == FlowId(2))
        .map(|t| t.0)
        .collect();
    assert_eq!(be_starts, vec![2, 5]);
    // 8 busy ticks in the first cycle, 2 in the second.
    assert_eq!(report.busy, 10);
    assert_eq!(report.utilization, 0.5);
    check_log(&log, &sc);
}

#[test]
fn ideal_schedule_delays_match_offsets() {
    let sc = standard(20, 0.0, Policy::Dqs, 4, 3);
    assert_eq!(sc.schedule.mode, ScheduleMode::IdealOffsets);
    let (_, report) = run_simulation(&sc).unwrap();
    let offsets = sc.schedule.offsets();
    for f in sc.flowset.time_sensitive() {
        let expected = offsets[&f.id] - f.arrival + f.service_time;
        let m = report.flow(f.id).unwrap();
        assert_eq!((m.delay_min, m.delay_max), (Some(expected), Some(expected)), "flow {}", f.id);
    }
    assert_eq!(report.misses, 0);
}

#[test]
fn every_policy_conserves_and_keeps_invariants() {
    for policy in Policy::ALL {
        let sc = standard(50, 0.9, policy, 2, 2);
        let (log, report) = run_simulation(&sc).unwrap();
        assert!(conserved(&report), "{policy}");
        assert!(report.dropped > 0 || policy == Policy::StrictPriority || report.queued > 0);
        assert!((0.0..=1.0).contains(&report.utilization));
        assert_eq!(compute_metrics(&log, &sc), report, "{policy}");
        check_log(&log, &sc);
    }
}

#[test]
fn best_effort_load_leaves_time_sensitive_traffic_alone() {
    for policy in Policy::ALL {
        let quiet = standard(20, 0.0, policy, 6, 2);
        let busy = standard(20, 0.9, policy, 6, 2);
        assert_eq!(quiet.schedule, busy.schedule);
        let (a, _) = run_simulation(&quiet).unwrap();
        let (b, _) = run_simulation(&busy).unwrap();
        assert_eq!(ts_starts(&a, &quiet), ts_starts(&b, &busy), "{policy}");
    }
}

#[test]
fn runs_are_reproducible() {
    let sc = standard(20, 0.5, Policy::Dqs, 8, 2);
    let (a, ra) = run_simulation(&sc).unwrap();
    let (b, rb) = run_simulation(&sc).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    let other = standard(20, 0.5, Policy::Dqs, 9, 2);
    assert_ne!(run_simulation(&other).unwrap().0, a);
}

#[test]
fn strict_priority_saturates_an_open_link() {
    let mut be = Flow::best_effort(1, 1518, 1_000_000_000, 0).unwrap();
    be.priority = 0;
    let w = Workload {
        flowset: FlowSet::new(EdgeSpec::gigabit(), vec![be]).unwrap(),
        be_sources: vec![BeSource {
            flow: FlowId(1),
            min_size_bytes: 64,
            mean_interarrival_ns: 100.0,
            backlog: 64,
        }],
    };
    let sc = build(w, Policy::StrictPriority, 1_000_000, 3);
    let (_, report) = run_simulation(&sc).unwrap();
    assert_eq!(report.utilization, 1.0);
    assert!(conserved(&report));
}

#[test]
fn empty_log_gives_an_empty_report() {
    let w = Workload {
        flowset: FlowSet::new(EdgeSpec::gigabit(), vec![]).unwrap(),
        be_sources: vec![],
    };
    let sc = build(w, Policy::Dqs, 100, 1);
    let report = compute_metrics(&EventLog::default(), &sc);
    assert_eq!((report.utilization, report.arrived), (0.0, 0));
}

#[test]
fn event_log_csv_header() {
    let log = EventLog {
        events: vec![Event {
            time: 5,
            kind: EventKind::TxStart,
            flow: Some(FlowId(3)),
            packet: Some(0),
            queue: Some(7),
        }],
    };
    let mut out = Vec::new();
    log.write_csv(&mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), "time_ns,event,flow_id,packet_index,queue\n5,tx-start,3,0,7\n");
}

#[test]
fn scenario_file_round_trip() {
    let w = generate_workload(&WorkloadSpec::standard(5, 0.2), EdgeSpec::gigabit(), 1).unwrap();
    let file = ScenarioFile {
        flowset: w.flowset.clone(),
        be_sources: w.be_sources.clone(),
        policy: Policy::StrictPriority,
        seed: 1,
        cycles: 1,
        utility: None,
        gcl: None,
    };
    let back: ScenarioFile = serde_json::from_str(&file.to_json().unwrap()).unwrap();
    assert_eq!(back, file);
    let sc = back.resolve(std::path::Path::new("."), &Limits::default()).unwrap().unwrap();
    assert_eq!(sc.horizon, 10_000_000);
}
