//! Combinability of periodic flows sharing one egress port.
//!
//! Decides whether a set of flows can be transmitted with fixed offsets and
//! no collisions, and, where collisions are unavoidable, describes exactly
//! which packets collide. [`brute_force_conflicts`] enumerates windows
//! directly and is the reference the analytic results are tested against.

mod brute_force;
mod diophantine;
mod solution_space;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{Flow, Ticks};

pub use brute_force::{
    brute_force_conflicts, sweep_windows, ConflictEntry, ConflictKind, ConflictList, TimedWindow, MAX_WINDOWS,
};
pub(crate) use brute_force::csv_err;
pub use diophantine::{extended_bezout, gcd, DiophantineSolution};
pub use solution_space::{
    cfk_solution_space, csk_solution_space, csk_solution_spaces, solve_chain, ConflictSolutionSpace,
    MAX_OVERLAP_VECTORS,
};

fn check_periods(periods: &[Ticks]) -> Result<()> {
    if periods.is_empty() {
        return Err(Error::InvalidSpec("period list is empty".into()));
    }
    if periods.contains(&0) {
        return Err(Error::InvalidSpec("periods must be positive".into()));
    }
    Ok(())
}

/// Greatest common divisor of all periods.
pub fn gcd_periods(periods: &[Ticks]) -> Result<Ticks> {
    check_periods(periods)?;
    Ok(periods.iter().fold(0, |g, &t| gcd_u64(g, t)))
}

pub(crate) fn gcd_u64(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Least common multiple of all periods.
///
/// Fails once the value no longer fits in a signed 128-bit integer.
pub fn hyperperiod(periods: &[Ticks]) -> Result<u128> {
    check_periods(periods)?;
    let limit = i128::MAX as u128;
    periods.iter().try_fold(1u128, |l, &t| {
        let t = u128::from(t);
        let g = gcd_u128(l, t);
        let lcm = (l / g).checked_mul(t).filter(|&v| v <= limit);
        lcm.ok_or(Error::HyperperiodOverflow {
            hyperperiod: u128::MAX,
            cap: limit,
        })
    })
}

fn gcd_u128(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// A collision between two packets: which ones and when the overlap begins.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictWitness {
    /// Packet indices `(n, m)` of the first and second flow.
    pub packets: (u64, u64),
    /// Instant at which both windows are occupied for the first time.
    pub time: Ticks,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictClass {
    pub kind: Option<ConflictKind>,
    pub witness: Option<ConflictWitness>,
}

impl ConflictClass {
    pub const NONE: Self = Self {
        kind: None,
        witness: None,
    };

    pub fn is_conflict_free(&self) -> bool {
        self.kind.is_none()
    }
}

/// Whether windows `[o_a, o_a+τ_a)` and `[o_b, o_b+τ_b)` repeated with periods
/// sharing divisor `g` never meet.
///
/// All start differences `o_b − o_a + j·g` are reachable, so the windows are
/// disjoint iff `d = (o_b − o_a) mod g` lies in `[τ_a, g − τ_b]`.
pub fn spacing_holds(o_a: Ticks, tau_a: Ticks, o_b: Ticks, tau_b: Ticks, g: Ticks) -> bool {
    let d = modulo(i128::from(o_b) - i128::from(o_a), g);
    tau_a <= d && d <= g.saturating_sub(tau_b) && tau_a + tau_b <= g
}

/// Non-negative remainder.
pub fn modulo(x: i128, m: Ticks) -> Ticks {
    x.rem_euclid(i128::from(m)) as Ticks
}

/// Classifies the pair of flows with the given offsets.
///
/// First-kind conflicts take precedence when both kinds occur. The witness
/// is the earliest collision among non-negative packet indices.
pub fn pairwise_conflict_class(f1: &Flow, f2: &Flow, o1: Ticks, o2: Ticks) -> Result<ConflictClass> {
    let (t1, t2) = (f1.period()?, f2.period()?);
    let (tau1, tau2) = (f1.service_time, f2.service_time);
    let g = gcd_u64(t1, t2);
    if spacing_holds(o1, tau1, o2, tau2, g) {
        return Ok(ConflictClass::NONE);
    }
    let diff = i128::from(o2) - i128::from(o1);
    let (kind, gaps): (ConflictKind, Vec<i128>) = if modulo(diff, g) == 0 {
        (ConflictKind::FirstKind, vec![0])
    } else {
        // gap = start2 − start1; overlap iff −τ2 < gap < τ1, gap ≠ 0.
        let lo = -(i128::from(tau2) - 1);
        let hi = i128::from(tau1) - 1;
        let first = lo + modulo(diff - lo, g) as i128;
        let gaps = (0..)
            .map(|j| first + j * i128::from(g))
            .take_while(|&v| v <= hi)
            .filter(|&v| v != 0)
            .collect();
        (ConflictKind::SecondKind, gaps)
    };
    let mut best: Option<ConflictWitness> = None;
    for gap in gaps {
        // n·T1 − m·T2 = o2 − o1 − gap
        let sol = extended_bezout(i128::from(t1), i128::from(t2), diff - gap)?;
        let Some((n, m)) = sol.least_non_negative() else {
            continue;
        };
        let s1 = n
            .checked_mul(i128::from(t1))
            .and_then(|v| v.checked_add(i128::from(o1)))
            .ok_or(Error::Overflow("witness time"))?;
        let time = s1.max(s1 + gap);
        let w = ConflictWitness {
            packets: (
                u64::try_from(n).map_err(|_| Error::Overflow("witness index"))?,
                u64::try_from(m).map_err(|_| Error::Overflow("witness index"))?,
            ),
            time: Ticks::try_from(time).map_err(|_| Error::Overflow("witness time"))?,
        };
        if best.is_none_or(|b| w.time < b.time) {
            best = Some(w);
        }
    }
    Ok(ConflictClass {
        kind: Some(kind),
        witness: best,
    })
}

/// Conflicts that occur whatever offsets are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictPrediction {
    pub cfk_certain: bool,
    pub csk_certain: bool,
}

/// Predicts unavoidable conflicts.
///
/// A pair with coprime periods always produces equal starts, and also
/// partial overlaps when either service time exceeds one tick. Coprimality
/// of the whole set is not enough: periods 6, 10 and 15 share no common
/// divisor yet admit collision-free offsets.
pub fn predict_existence(flows: &[Flow]) -> Result<ConflictPrediction> {
    if flows.len() < 2 {
        return Err(Error::InvalidSpec("at least two flows are required".into()));
    }
    let periods: Vec<Ticks> = flows.iter().map(Flow::period).collect::<Result<_>>()?;
    let mut prediction = ConflictPrediction {
        cfk_certain: false,
        csk_certain: false,
    };
    for i in 0..flows.len() {
        for j in i + 1..flows.len() {
            if gcd_u64(periods[i], periods[j]) == 1 {
                prediction.cfk_certain = true;
                if flows[i].service_time > 1 || flows[j].service_time > 1 {
                    prediction.csk_certain = true;
                }
            }
        }
    }
    Ok(prediction)
}

/// Sufficient condition for collision-free offsets of K flows.
///
/// Holds iff the common divisor `g` of all periods exceeds one, every pair is
/// spaced modulo `g` and the service times sum to less than `g`. It is not a
/// necessary condition: flows whose pairwise divisors exceed `g` can be
/// conflict-free without passing it.
pub fn verify_noncollision_k(flows: &[Flow], offsets: &[Ticks]) -> Result<bool> {
    if flows.len() != offsets.len() {
        return Err(Error::InvalidSpec("one offset per flow is required".into()));
    }
    if flows.is_empty() {
        return Ok(true);
    }
    let periods: Vec<Ticks> = flows.iter().map(Flow::period).collect::<Result<_>>()?;
    let g = gcd_periods(&periods)?;
    if g <= 1 {
        return Ok(false);
    }
    let total: u128 = flows.iter().map(|f| u128::from(f.service_time)).sum();
    if total >= u128::from(g) {
        return Ok(false);
    }
    for i in 0..flows.len() {
        for j in i + 1..flows.len() {
            if !spacing_holds(offsets[i], flows[i].service_time, offsets[j], flows[j].service_time, g) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
