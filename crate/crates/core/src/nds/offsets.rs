use std::cmp::Reverse;

use serde::{Deserialize, Serialize};

use crate::combinability::{gcd_periods, gcd_u64, modulo};
use crate::error::{invalid, Result};
use crate::flow::{Flow, FlowId, Ticks};

/// Result of the offset search. `offsets` follows the input order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffsetAssignment {
    pub offsets: Vec<Ticks>,
    /// The first flow whose delay budget ran out, if any.
    pub failed: Option<FlowId>,
}

impl OffsetAssignment {
    pub fn unsolved(&self) -> bool {
        self.failed.is_some()
    }
}

/// A window already fixed by another subset.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Obstacle {
    pub offset: Ticks,
    pub period: Ticks,
    pub service_time: Ticks,
}

/// Order in which offsets are fixed: shortest period first, then longest
/// service time, then lowest id.
pub fn processing_order(flows: &[Flow]) -> Result<Vec<usize>> {
    let periods: Vec<Ticks> = flows.iter().map(Flow::period).collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..flows.len()).collect();
    order.sort_by_key(|&i| (periods[i], Reverse(flows[i].service_time), flows[i].id));
    Ok(order)
}

/// Fixes one offset per flow so that no two windows ever meet.
///
/// Requires a common period divisor `g > 1` with the service times summing
/// to less than `g`. Each flow starts at its emergence time and moves later
/// only as far as needed to clear the other flows.
pub fn nonconflict_offsets(flows: &[Flow]) -> Result<OffsetAssignment> {
    if flows.is_empty() {
        return Ok(OffsetAssignment {
            offsets: Vec::new(),
            failed: None,
        });
    }
    let periods: Vec<Ticks> = flows.iter().map(Flow::period).collect::<Result<_>>()?;
    let g = gcd_periods(&periods)?;
    let total: u128 = flows.iter().map(|f| u128::from(f.service_time)).sum();
    if g <= 1 || total >= u128::from(g) {
        return Err(invalid(format!(
            "offset search needs g > 1 and total service time below g (g = {g}, total = {total})"
        )));
    }
    offsets_among(flows, &[])
}

/// Offset search for `flows`, treating `obstacles` as already reserved.
///
/// Every flow starts at its emergence time and is checked against the flows
/// fixed before it. Within the set spacing is checked modulo the common
/// divisor of the set; against obstacles it is checked modulo the pairwise
/// divisor, which is exact for two periodic windows.
pub(crate) fn offsets_among(flows: &[Flow], obstacles: &[Obstacle]) -> Result<OffsetAssignment> {
    if flows.is_empty() {
        return Ok(OffsetAssignment {
            offsets: Vec::new(),
            failed: None,
        });
    }
    let periods: Vec<Ticks> = flows.iter().map(Flow::period).collect::<Result<_>>()?;
    let g = gcd_periods(&periods)?;
    let mut offsets: Vec<Ticks> = flows.iter().map(Flow::emergence).collect();
    let mut fixed: Vec<Obstacle> = Vec::with_capacity(flows.len());

    for i in processing_order(flows)? {
        let f = &flows[i];
        let (t, tau, e) = (periods[i], f.service_time, f.emergence());
        let blockers: Vec<(Obstacle, Ticks)> = fixed
            .iter()
            .map(|&o| (o, g))
            .chain(obstacles.iter().map(|&o| (o, gcd_u64(t, o.period))))
            .collect();

        let budget = f.delay_bound.unwrap_or(Ticks::MAX).min(t - 1);
        let mut o = e;
        let found = loop {
            if o - e > budget {
                break false;
            }
            let mut jump = Some(0);
            for &(b, m) in &blockers {
                if b.service_time + tau > m {
                    jump = None;
                    break;
                }
                let d = modulo(i128::from(o) - i128::from(b.offset), m);
                if d < b.service_time {
                    jump = Some(b.service_time - d);
                    break;
                }
                if d > m - tau {
                    jump = Some(m - d + b.service_time);
                    break;
                }
            }
            match jump {
                Some(0) => break true,
                Some(step) => o += step,
                None => break false,
            }
        };
        if !found {
            return Ok(OffsetAssignment {
                offsets,
                failed: Some(f.id),
            });
        }
        offsets[i] = o;
        fixed.push(Obstacle {
            offset: o,
            period: t,
            service_time: tau,
        });
    }
    Ok(OffsetAssignment { offsets, failed: None })
}
