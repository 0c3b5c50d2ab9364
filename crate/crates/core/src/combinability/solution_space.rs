//! Closed-form description of every packet-index tuple that collides.
//!
//! For K flows with periods `T_i` and offsets `o_i`, tuples satisfying
//!
//! ```text
//! T_i·x_i − T_{i+1}·x_{i+1} = o_{i+1} − o_i + v_i     (i = 1 … K−1)
//! ```
//!
//! form the lattice `base + k·step`. `v = 0` gives equal starts (first-kind
//! conflicts); a non-zero `v_i` is the signed gap `start_i − start_{i+1}`
//! between the windows of adjacent flows (second-kind conflicts).
//!
//! The system is solved one equation at a time. After the first `n`
//! equations `x_j = base_j + k·step_j`; the next equation yields
//! `x_{n+1} = p + k'·h`, and matching the two expressions for `x_{n+1}` is
//! itself a two-variable equation in `(k, k')`.

use crate::error::{Error, Result};
use crate::flow::{Flow, Ticks};

use super::diophantine::{ceil_div, extended_bezout};

/// Upper bound on overlap vectors enumerated for second-kind spaces.
pub const MAX_OVERLAP_VECTORS: u128 = 1_000_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConflictSolutionSpace {
    pub periods: Vec<i128>,
    pub offsets: Vec<i128>,
    /// Least non-negative colliding tuple.
    pub base: Vec<i128>,
    pub step: Vec<i128>,
    /// Signed start gaps between adjacent flows; all zero for first-kind spaces.
    pub overlaps: Vec<i128>,
}

impl ConflictSolutionSpace {
    pub fn is_first_kind(&self) -> bool {
        self.overlaps.iter().all(|&v| v == 0)
    }

    /// Packet indices `base + k·step`.
    pub fn indices(&self, k: u64) -> Result<Vec<i128>> {
        let k = i128::from(k);
        self.base
            .iter()
            .zip(&self.step)
            .map(|(&b, &s)| {
                k.checked_mul(s)
                    .and_then(|ks| ks.checked_add(b))
                    .ok_or(Error::Overflow("solution space index"))
            })
            .collect()
    }

    /// Window start of every flow's packet in the `k`-th tuple.
    pub fn start_times(&self, k: u64) -> Result<Vec<i128>> {
        let idx = self.indices(k)?;
        idx.iter()
            .zip(self.periods.iter().zip(&self.offsets))
            .map(|(&x, (&t, &o))| {
                x.checked_mul(t)
                    .and_then(|v| v.checked_add(o))
                    .ok_or(Error::Overflow("collision time"))
            })
            .collect()
    }

    /// Common start time of a first-kind tuple.
    pub fn collision_time(&self, k: u64) -> Result<i128> {
        Ok(self.start_times(k)?[0])
    }

    /// Coefficient matrix of the chained system, `(K−1) × K`.
    pub fn coefficient_matrix(&self) -> Vec<Vec<i128>> {
        let k = self.periods.len();
        (0..k.saturating_sub(1))
            .map(|i| {
                let mut row = vec![0; k];
                row[i] = self.periods[i];
                row[i + 1] = -self.periods[i + 1];
                row
            })
            .collect()
    }

    /// Right-hand side of the chained system.
    pub fn rhs(&self) -> Vec<i128> {
        (0..self.periods.len().saturating_sub(1))
            .map(|i| self.offsets[i + 1] - self.offsets[i] + self.overlaps[i])
            .collect()
    }

    /// Whether `x` solves the system exactly.
    pub fn satisfies(&self, x: &[i128]) -> bool {
        if x.len() != self.periods.len() {
            return false;
        }
        self.coefficient_matrix().iter().zip(self.rhs()).all(|(row, b)| {
            row.iter()
                .zip(x)
                .try_fold(0i128, |acc, (&a, &xi)| acc.checked_add(a.checked_mul(xi)?))
                == Some(b)
        })
    }
}

fn flow_periods(flows: &[Flow]) -> Result<Vec<i128>> {
    flows.iter().map(|f| f.period().map(i128::from)).collect()
}

fn check_shape(flows: &[Flow], offsets: &[Ticks]) -> Result<()> {
    if flows.len() < 2 {
        return Err(Error::InvalidSpec("at least two flows are required".into()));
    }
    if flows.len() != offsets.len() {
        return Err(Error::InvalidSpec(format!(
            "{} flows but {} offsets",
            flows.len(),
            offsets.len()
        )));
    }
    Ok(())
}

/// Solves the chained system for explicit periods, offsets and overlap gaps.
pub fn solve_chain(periods: &[i128], offsets: &[i128], overlaps: &[i128]) -> Result<ConflictSolutionSpace> {
    let k = periods.len();
    if k < 2 || offsets.len() != k || overlaps.len() != k - 1 {
        return Err(Error::InvalidSpec("inconsistent system dimensions".into()));
    }
    let ovf = |what| Error::Overflow(what);
    let rhs = |i: usize| -> Result<i128> {
        offsets[i + 1]
            .checked_sub(offsets[i])
            .and_then(|d| d.checked_add(overlaps[i]))
            .ok_or(ovf("right-hand side"))
    };

    let first = extended_bezout(periods[0], periods[1], rhs(0)?)?;
    if !first.exists {
        return Err(Error::NoSolution);
    }
    let mut base = vec![first.particular.0, first.particular.1];
    let mut step = vec![first.step.0, first.step.1];

    for n in 1..k - 1 {
        let eq = extended_bezout(periods[n], periods[n + 1], rhs(n)?)?;
        if !eq.exists {
            return Err(Error::NoSolution);
        }
        // base[n] + kk·step[n] = p + k'·h   ⇔   step[n]·kk − h·k' = p − base[n]
        let (p, q) = eq.particular;
        let (h, h_next) = eq.step;
        let link = extended_bezout(step[n], h, p.checked_sub(base[n]).ok_or(ovf("link"))?)?;
        if !link.exists {
            return Err(Error::NoSolution);
        }
        let (t0, t0_next) = link.particular;
        let (dk, _) = link.step;
        for j in 0..=n {
            base[j] = t0
                .checked_mul(step[j])
                .and_then(|v| v.checked_add(base[j]))
                .ok_or(ovf("chained base"))?;
            step[j] = step[j].checked_mul(dk).ok_or(ovf("chained step"))?;
        }
        base.push(
            t0_next
                .checked_mul(h_next)
                .and_then(|v| v.checked_add(q))
                .ok_or(ovf("chained base"))?,
        );
        // k' advances by step[n]/g' = link.step.1 per unit of the new parameter.
        step.push(h_next.checked_mul(link.step.1).ok_or(ovf("chained step"))?);
    }

    // Shift to the least tuple with every index non-negative.
    let shift = base
        .iter()
        .zip(&step)
        .map(|(&b, &s)| ceil_div(-b, s))
        .max()
        .unwrap_or(0);
    for (b, &s) in base.iter_mut().zip(&step) {
        *b = shift
            .checked_mul(s)
            .and_then(|v| v.checked_add(*b))
            .ok_or(ovf("normalised base"))?;
    }

    Ok(ConflictSolutionSpace {
        periods: periods.to_vec(),
        offsets: offsets.to_vec(),
        base,
        step,
        overlaps: overlaps.to_vec(),
    })
}

/// All tuples of packets whose windows start at the same instant.
pub fn cfk_solution_space(flows: &[Flow], offsets: &[Ticks]) -> Result<ConflictSolutionSpace> {
    check_shape(flows, offsets)?;
    let periods = flow_periods(flows)?;
    let offsets: Vec<i128> = offsets.iter().map(|&o| i128::from(o)).collect();
    solve_chain(&periods, &offsets, &vec![0; flows.len() - 1])
}

/// The space of tuples whose adjacent windows start `overlaps[i]` apart.
pub fn csk_solution_space(flows: &[Flow], offsets: &[Ticks], overlaps: &[i128]) -> Result<ConflictSolutionSpace> {
    check_shape(flows, offsets)?;
    if let Some(index) = overlaps.iter().position(|&v| v == 0) {
        return Err(Error::ZeroOverlap { index });
    }
    let periods = flow_periods(flows)?;
    let offsets: Vec<i128> = offsets.iter().map(|&o| i128::from(o)).collect();
    solve_chain(&periods, &offsets, overlaps)
}

/// Every partial-overlap geometry between adjacent flows.
///
/// `v_i = start_i − start_{i+1}` overlaps iff `−τ_i < v_i < τ_{i+1}`; zero is
/// excluded. Geometries with no integer solution are omitted.
pub fn csk_solution_spaces(flows: &[Flow], offsets: &[Ticks]) -> Result<Vec<ConflictSolutionSpace>> {
    check_shape(flows, offsets)?;
    let ranges: Vec<Vec<i128>> = flows
        .windows(2)
        .map(|w| {
            let lo = -(i128::from(w[0].service_time) - 1);
            let hi = i128::from(w[1].service_time) - 1;
            (lo..=hi).filter(|&v| v != 0).collect()
        })
        .collect();
    let total = ranges
        .iter()
        .try_fold(1u128, |acc, r| acc.checked_mul(r.len() as u128))
        .unwrap_or(u128::MAX);
    if total > MAX_OVERLAP_VECTORS {
        return Err(Error::InvalidSpec(format!(
            "{total} overlap geometries exceed the enumeration limit"
        )));
    }
    let mut spaces = Vec::new();
    if total == 0 {
        return Ok(spaces);
    }
    let mut cursor = vec![0usize; ranges.len()];
    loop {
        let v: Vec<i128> = cursor.iter().zip(&ranges).map(|(&c, r)| r[c]).collect();
        match csk_solution_space(flows, offsets, &v) {
            Ok(space) => spaces.push(space),
            Err(Error::NoSolution) => {}
            Err(e) => return Err(e),
        }
        // odometer increment
        let mut i = ranges.len();
        loop {
            if i == 0 {
                return Ok(spaces);
            }
            i -= 1;
            cursor[i] += 1;
            if cursor[i] < ranges[i].len() {
                break;
            }
            cursor[i] = 0;
        }
    }
}
