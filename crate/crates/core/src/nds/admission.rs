use num_rational::Ratio;

use crate::flow::{flow_bandwidth, EdgeSpec, Flow, TICKS_PER_SECOND};

/// Whether the time-sensitive flows fit the link: `Σ B_i ≤ B_e`.
///
/// Bandwidths are summed as exact fractions; if that overflows the sum falls
/// back to floating point. Best-effort flows and flows without a usable
/// period are ignored.
pub fn admission_check(flows: &[Flow], edge: &EdgeSpec) -> bool {
    let ts: Vec<&Flow> = flows.iter().filter(|f| f.period().is_ok()).collect();
    match exact_demand(&ts) {
        Some(sum) => sum <= Ratio::from_integer(u128::from(edge.rate_bps)),
        None => approximate_demand(&ts) <= edge.rate_bps as f64,
    }
}

fn exact_demand(flows: &[&Flow]) -> Option<Ratio<u128>> {
    flows.iter().try_fold(Ratio::from_integer(0u128), |acc, f| {
        let bits = u128::from(f.size_bytes).checked_mul(8 * u128::from(TICKS_PER_SECOND))?;
        let b = Ratio::new(bits, u128::from(f.period?));
        checked_add(acc, b)
    })
}

fn checked_add(a: Ratio<u128>, b: Ratio<u128>) -> Option<Ratio<u128>> {
    let den = num_integer::Integer::lcm(a.denom(), b.denom());
    let lhs = a.numer().checked_mul(den / a.denom())?;
    let rhs = b.numer().checked_mul(den / b.denom())?;
    Some(Ratio::new(lhs.checked_add(rhs)?, den))
}

pub(crate) fn approximate_demand(flows: &[&Flow]) -> f64 {
    flows.iter().filter_map(|f| flow_bandwidth(f).ok()).sum()
}
