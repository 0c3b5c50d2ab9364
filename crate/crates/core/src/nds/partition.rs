use std::collections::BTreeSet;

use crate::combinability::gcd_u64;
use crate::error::Result;
use crate::flow::{Flow, Ticks};

/// Splits flows into subsets that each admit fixed offsets on their own.
///
/// Returns indices into `flows`. Each round considers every divisor shared
/// by at least two remaining flows, fills a subset with the flows it divides
/// (shortest service time first, while the total stays below the divisor)
/// and keeps the largest subset, preferring larger divisors on ties. Flows
/// left over become singletons, in ascending period order.
pub fn partition_flowset(flows: &[Flow]) -> Result<Vec<Vec<usize>>> {
    let periods: Vec<Ticks> = flows.iter().map(Flow::period).collect::<Result<_>>()?;
    let mut remaining: Vec<usize> = (0..flows.len()).collect();
    remaining.sort_by_key(|&i| (flows[i].service_time, flows[i].id));
    let mut subsets = Vec::new();

    loop {
        let mut candidates = BTreeSet::new();
        let all = remaining.iter().fold(0, |g, &i| gcd_u64(g, periods[i]));
        if all > 1 {
            candidates.insert(all);
        }
        for (a, &i) in remaining.iter().enumerate() {
            for &j in &remaining[a + 1..] {
                let g = gcd_u64(periods[i], periods[j]);
                if g > 1 {
                    candidates.insert(g);
                }
            }
        }

        let mut best: Option<(usize, Ticks, Vec<usize>)> = None;
        for &d in &candidates {
            let mut used = 0u128;
            let members: Vec<usize> = remaining
                .iter()
                .copied()
                .filter(|&i| periods[i].is_multiple_of(d))
                .filter(|&i| {
                    let fits = used + u128::from(flows[i].service_time) < u128::from(d);
                    if fits {
                        used += u128::from(flows[i].service_time);
                    }
                    fits
                })
                .collect();
            let better = best
                .as_ref()
                .is_none_or(|(n, g, _)| (members.len(), d) > (*n, *g));
            if members.len() >= 2 && better {
                best = Some((members.len(), d, members));
            }
        }
        let Some((_, _, mut members)) = best else {
            break;
        };
        remaining.retain(|i| !members.contains(i));
        members.sort_unstable();
        subsets.push(members);
    }

    remaining.sort_by_key(|&i| (periods[i], flows[i].id));
    subsets.extend(remaining.into_iter().map(|i| vec![i]));
    Ok(subsets)
}
