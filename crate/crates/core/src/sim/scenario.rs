use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dqs::UtilityParams;
use crate::error::{invalid, Result};
use crate::flow::{FlowSet, Ticks};
use crate::nds::{compute_static_schedule, emit_gcl, GateControlList, Limits, QueueAssignment, Schedule};

use super::workload::{BeSource, Workload};
use super::Policy;

/// Everything one simulation run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub flowset: FlowSet,
    pub be_sources: Vec<BeSource>,
    pub schedule: Schedule,
    pub assignment: QueueAssignment,
    pub gcl: GateControlList,
    pub policy: Policy,
    pub horizon: Ticks,
    pub seed: u64,
    pub utility: UtilityParams,
}

impl Scenario {
    /// Assigns queues, renders the gate control list and picks default
    /// utility weights for the resulting best-effort queues.
    pub fn build(workload: Workload, schedule: Schedule, policy: Policy, cycles: u64, seed: u64) -> Result<Self> {
        let assignment = QueueAssignment::by_period(&workload.flowset.flows, workload.flowset.link.queue_count)?;
        let gcl = emit_gcl(&schedule, &assignment)?;
        let mut utility = UtilityParams::for_queues(assignment.be.len());
        utility.q_max = workload.flowset.link.max_queue_len;
        let scenario = Self {
            horizon: gcl.cycle.checked_mul(cycles).ok_or(crate::Error::Overflow("horizon"))?,
            flowset: workload.flowset,
            be_sources: workload.be_sources,
            schedule,
            assignment,
            gcl,
            policy,
            seed,
            utility,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || !self.horizon.is_multiple_of(self.gcl.cycle) {
            return Err(invalid(format!(
                "horizon {} is not a positive multiple of the gate cycle {}",
                self.horizon, self.gcl.cycle
            )));
        }
        self.gcl.validate()?;
        if self.gcl.cycle != self.schedule.hyperperiod.max(1) || self.gcl.queue_count != self.assignment.queue_count {
            return Err(invalid("gate control list does not match the schedule"));
        }
        self.utility.validate()?;
        if self.utility.c.len() != self.assignment.be.len() {
            return Err(invalid("utility weights do not match the best-effort queues"));
        }
        if self.utility.q_max != self.flowset.link.max_queue_len {
            return Err(invalid("utility queue capacity differs from the link's"));
        }

        for f in self.flowset.flows.iter().filter(|f| f.is_time_sensitive()) {
            if !self.assignment.ts.contains_key(&f.id) {
                return Err(invalid(format!("flow {} has no queue", f.id)));
            }
            self.schedule.flow(f.id)?;
        }
        let be_mask = self.assignment.be_mask();
        for w in self.schedule.windows()? {
            let q = self.assignment.ts[&w.flow];
            let mut t = w.start;
            while t < w.end {
                let row = &self.gcl.rows[self.gcl.row_at(t)];
                if !row.is_open(q) || row.gate_mask & be_mask != 0 {
                    return Err(invalid(format!(
                        "gates at {t} do not reserve packet {} of flow {}",
                        w.index, w.flow
                    )));
                }
                t += row.end - t % self.gcl.cycle;
            }
        }
        for s in &self.be_sources {
            let f = self
                .flowset
                .flows
                .iter()
                .find(|f| f.id == s.flow)
                .ok_or_else(|| invalid(format!("source for unknown flow {}", s.flow)))?;
            if f.is_time_sensitive() {
                return Err(invalid(format!("flow {} is time-sensitive", s.flow)));
            }
            if s.min_size_bytes == 0 || s.min_size_bytes > f.size_bytes || s.mean_interarrival_ns.is_nan() || s.mean_interarrival_ns <= 0.0 {
                return Err(invalid(format!("source of flow {} is malformed", s.flow)));
            }
        }
        Ok(())
    }
}

/// On-disk form of a scenario. The schedule is synthesised on load; a gate
/// control list given by path must agree with it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub flowset: FlowSet,
    #[serde(default)]
    pub be_sources: Vec<BeSource>,
    pub policy: Policy,
    pub seed: u64,
    /// Number of gate cycles to simulate.
    pub cycles: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utility: Option<UtilityParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gcl: Option<String>,
}

impl ScenarioFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Resolves the file into a runnable scenario. `base` anchors a relative
    /// gate control list path. `None` means the flows are unschedulable.
    pub fn resolve(&self, base: &Path, limits: &Limits) -> Result<Option<Scenario>> {
        let (schedule, _) = compute_static_schedule(&self.flowset.flows, &self.flowset.link, limits)?;
        let Some(schedule) = schedule else {
            return Ok(None);
        };
        let workload = Workload {
            flowset: self.flowset.clone(),
            be_sources: self.be_sources.clone(),
        };
        let mut scenario = Scenario::build(workload, schedule, self.policy, self.cycles, self.seed)?;
        if let Some(u) = &self.utility {
            scenario.utility = u.clone();
        }
        if let Some(p) = &self.gcl {
            let gcl = GateControlList::from_json(&std::fs::read_to_string(base.join(p))?)?;
            if gcl != scenario.gcl {
                return Err(invalid("gate control list file differs from the synthesised schedule"));
            }
        }
        scenario.validate()?;
        Ok(Some(scenario))
    }
}
