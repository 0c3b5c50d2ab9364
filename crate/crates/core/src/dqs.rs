//! Utility-driven choice of the best-effort queue to serve in a residual slot.
//!
//! The port is the only player. At each decision epoch it scores serving each
//! feasible queue, or idling, by mixing a present utility with the utility
//! of its best follow-up move at the predicted next state, and takes the
//! argmax.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::flow::Ticks;

/// Weight of the newest observation in the arrival-rate average.
pub const EMA_WEIGHT: f64 = 0.2;

/// One best-effort queue as seen at a decision epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueueState {
    pub index: usize,
    /// Packets ready for transfer.
    pub len: u32,
    /// Service time of the head packet, 0 when empty.
    pub head_service_time: Ticks,
    /// Service time of the packet behind the head, 0 when there is none.
    pub next_service_time: Ticks,
    pub gate_open: bool,
}

impl QueueState {
    pub fn empty(index: usize, gate_open: bool) -> Self {
        Self {
            index,
            len: 0,
            head_service_time: 0,
            next_service_time: 0,
            gate_open,
        }
    }

    pub fn validate(&self, q_max: u32) -> Result<()> {
        if self.len > q_max {
            return Err(invalid(format!("queue {} holds {} > {q_max} packets", self.index, self.len)));
        }
        if (self.len > 0) != (self.head_service_time > 0) {
            return Err(invalid(format!("queue {}: head service time disagrees with length", self.index)));
        }
        if (self.len > 1) != (self.next_service_time > 0) {
            return Err(invalid(format!("queue {}: second packet disagrees with length", self.index)));
        }
        Ok(())
    }
}

/// The best-effort queues of one port, highest priority first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PortSnapshot {
    pub queues: Vec<QueueState>,
}

/// Which queue, if any, is served: at most one bit is set.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StrategyVector {
    bits: Vec<bool>,
}

impl StrategyVector {
    pub fn idle(n: usize) -> Self {
        Self { bits: vec![false; n] }
    }

    pub fn serve(n: usize, queue: usize) -> Self {
        let mut s = Self::idle(n);
        s.bits[queue] = true;
        s
    }

    pub fn from_bits(bits: Vec<bool>) -> Result<Self> {
        if bits.iter().filter(|&&b| b).count() > 1 {
            return Err(invalid("a strategy serves at most one queue"));
        }
        Ok(Self { bits })
    }

    pub fn served(&self) -> Option<usize> {
        self.bits.iter().position(|&b| b)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    fn bit(&self, i: usize) -> f64 {
        if self.bits[i] {
            1.0
        } else {
            0.0
        }
    }
}

/// Weights of the port's utility.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityParams {
    /// Share of the present utility in the mix.
    pub alpha: f64,
    pub beta: f64,
    pub p0: f64,
    pub q_max: u32,
    /// Benefit of serving each queue, strictly decreasing.
    pub c: Vec<f64>,
    /// Score the next step as `c·s − β(p̄ − s)·(1 − s̄)`, with the present
    /// strategy inside the penalty term, instead of reusing the present form.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub printed_next_step: bool,
}

impl UtilityParams {
    /// α = 0.5, β = 1, p₀ = 1, 64-packet queues and `c_i = (n − i)/n`.
    pub fn for_queues(n: usize) -> Self {
        Self {
            alpha: 0.5,
            beta: 1.0,
            p0: 1.0,
            q_max: 64,
            c: (0..n).map(|i| (n - i) as f64 / n as f64).collect(),
            printed_next_step: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid("alpha must lie in [0, 1]"));
        }
        if !(self.beta > 0.0 && self.p0 > 0.0) {
            return Err(invalid("beta and p0 must be positive"));
        }
        if self.q_max < 2 {
            return Err(invalid("q_max must be at least 2"));
        }
        if self.c.iter().any(|&c| c.is_nan() || c <= 0.0) || self.c.windows(2).any(|w| w[1] >= w[0]) {
            return Err(invalid("c must be positive and strictly decreasing"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Expected arrivals per tick for each queue.
#[derive(Clone, Debug, PartialEq)]
pub struct ArrivalEstimator {
    rates: Vec<f64>,
}

impl ArrivalEstimator {
    pub fn new(n: usize) -> Self {
        Self { rates: vec![0.0; n] }
    }

    pub fn with_rates(rates: Vec<f64>) -> Result<Self> {
        if rates.iter().any(|r| r.is_nan() || *r < 0.0) {
            return Err(invalid("arrival rates must be non-negative"));
        }
        Ok(Self { rates })
    }

    pub fn rate(&self, queue: usize) -> f64 {
        self.rates.get(queue).copied().unwrap_or(0.0)
    }

    /// Expected arrivals over a window of `period` ticks.
    pub fn per_period(&self, queue: usize, period: Ticks) -> f64 {
        self.rate(queue) * period as f64
    }
}

/// Folds `arrivals` observed over `window` ticks into the queue's rate.
pub fn update_arrival_estimator(
    mut estimator: ArrivalEstimator,
    queue: usize,
    arrivals: u64,
    window: Ticks,
) -> Result<ArrivalEstimator> {
    if window == 0 {
        return Err(invalid("observation window must be positive"));
    }
    if queue >= estimator.rates.len() {
        return Err(invalid(format!("no queue {queue}")));
    }
    let observed = arrivals as f64 / window as f64;
    let r = &mut estimator.rates[queue];
    *r = (1.0 - EMA_WEIGHT) * *r + EMA_WEIGHT * observed;
    Ok(estimator)
}

/// Loss penalty of a queue holding `q` packets. Half-full queues already
/// take the proportional branch.
pub fn penalty_factor(q: f64, q_max: u32, p0: f64) -> f64 {
    let q_max = f64::from(q_max);
    if q >= q_max {
        p0
    } else if q >= q_max / 2.0 {
        q / q_max
    } else {
        0.0
    }
}

/// Penalty after the arrivals expected while a packet of `service_time` is
/// on the wire.
pub fn predicted_penalty_factor(
    q: f64,
    estimator: &ArrivalEstimator,
    queue: usize,
    service_time: Ticks,
    q_max: u32,
    p0: f64,
) -> f64 {
    penalty_factor(q + estimator.per_period(queue, service_time), q_max, p0)
}

/// Mixed utility of serving `s` now and `s_bar` next, under present
/// penalties `p` and predicted penalties `p_bar`.
pub fn utility(s: &StrategyVector, s_bar: &StrategyVector, params: &UtilityParams, p: &[f64], p_bar: &[f64]) -> f64 {
    let n = params.c.len();
    let beta = params.beta;
    let mut present = 0.0;
    let mut next = 0.0;
    for i in 0..n {
        let (si, ni) = (s.bit(i), s_bar.bit(i));
        present += params.c[i] * si - beta * p[i] * (1.0 - si);
        next += if params.printed_next_step {
            params.c[i] * si - beta * (p_bar[i] - si) * (1.0 - ni)
        } else {
            params.c[i] * ni - beta * p_bar[i] * (1.0 - ni)
        };
    }
    params.alpha * present + (1.0 - params.alpha) * next
}

/// A feasible present strategy with its best follow-up and score.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub strategy: StrategyVector,
    pub next: StrategyVector,
    pub utility: f64,
}

/// Scores every feasible strategy: each queue whose gate is open and whose
/// head fits in `residual`, in queue order, then idling.
pub fn evaluate_strategies(
    port: &PortSnapshot,
    params: &UtilityParams,
    estimator: &ArrivalEstimator,
    residual: Ticks,
) -> Result<Vec<Candidate>> {
    let n = params.c.len();
    if port.queues.len() != n {
        return Err(invalid(format!("{} queues but {n} benefit coefficients", port.queues.len())));
    }
    for q in &port.queues {
        q.validate(params.q_max)?;
    }
    let p: Vec<f64> = port
        .queues
        .iter()
        .map(|q| penalty_factor(f64::from(q.len), params.q_max, params.p0))
        .collect();

    let mut out = Vec::with_capacity(n + 1);
    let fits = |q: &QueueState| q.gate_open && q.len > 0 && q.head_service_time <= residual;
    for (i, q) in port.queues.iter().enumerate() {
        if fits(q) {
            let s = StrategyVector::serve(n, i);
            out.push(score(port, params, estimator, &p, s, Some(i), q.head_service_time, residual));
        }
    }
    out.push(score(port, params, estimator, &p, StrategyVector::idle(n), None, 0, residual));
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn score(
    port: &PortSnapshot,
    params: &UtilityParams,
    estimator: &ArrivalEstimator,
    p: &[f64],
    s: StrategyVector,
    served: Option<usize>,
    elapsed: Ticks,
    residual: Ticks,
) -> Candidate {
    let n = params.c.len();
    let after: Vec<(u32, Ticks)> = port
        .queues
        .iter()
        .enumerate()
        .map(|(j, q)| {
            if Some(j) == served {
                (q.len - 1, q.next_service_time)
            } else {
                (q.len, q.head_service_time)
            }
        })
        .collect();
    let p_bar: Vec<f64> = after
        .iter()
        .enumerate()
        .map(|(j, &(len, _))| predicted_penalty_factor(f64::from(len), estimator, j, elapsed, params.q_max, params.p0))
        .collect();

    let left = residual - elapsed;
    let mut next = StrategyVector::idle(n);
    let mut best = f64::NEG_INFINITY;
    let options = after
        .iter()
        .enumerate()
        .filter(|(j, &(len, head))| port.queues[*j].gate_open && len > 0 && head <= left)
        .map(|(j, _)| StrategyVector::serve(n, j))
        .chain(std::iter::once(StrategyVector::idle(n)));
    for s_bar in options {
        let u = utility(&s, &s_bar, params, p, &p_bar);
        if u > best {
            best = u;
            next = s_bar;
        }
    }
    Candidate {
        strategy: s,
        next,
        utility: best,
    }
}

/// The utility-maximising strategy. Ties go to the lowest queue index, and
/// idling only wins outright.
pub fn select_strategy(
    port: &PortSnapshot,
    params: &UtilityParams,
    estimator: &ArrivalEstimator,
    residual: Ticks,
) -> Result<StrategyVector> {
    let candidates = evaluate_strategies(port, params, estimator, residual)?;
    let mut best: Option<&Candidate> = None;
    for c in &candidates {
        if best.is_none_or(|b| c.utility > b.utility) {
            best = Some(c);
        }
    }
    Ok(best.map(|c| c.strategy.clone()).unwrap_or_else(|| StrategyVector::idle(port.queues.len())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_queue(alpha: f64) -> UtilityParams {
        UtilityParams {
            alpha,
            beta: 1.0,
            p0: 1.0,
            q_max: 4,
            c: vec![2.0, 1.0],
            printed_next_step: false,
        }
    }

    fn queue(index: usize, len: u32, tau: Ticks) -> QueueState {
        QueueState {
            index,
            len,
            head_service_time: if len > 0 { tau } else { 0 },
            next_service_time: if len > 1 { tau } else { 0 },
            gate_open: true,
        }
    }

    #[test]
    fn penalty_branches() {
        assert_eq!(penalty_factor(0.0, 4, 1.0), 0.0);
        assert_eq!(penalty_factor(1.0, 4, 1.0), 0.0);
        assert_eq!(penalty_factor(2.0, 4, 1.0), 0.5);
        assert_eq!(penalty_factor(3.0, 4, 1.0), 0.75);
        assert_eq!(penalty_factor(4.0, 4, 1.0), 1.0);
        assert_eq!(penalty_factor(9.0, 4, 3.0), 3.0);
    }

    #[test]
    fn predicted_penalty_adds_expected_arrivals() {
        let none = ArrivalEstimator::new(1);
        assert_eq!(predicted_penalty_factor(1.0, &none, 0, 1000, 4, 1.0), 0.0);
        // 1.5 arrivals expected over 3 ticks.
        let est = ArrivalEstimator::with_rates(vec![0.5]).unwrap();
        assert_eq!(predicted_penalty_factor(1.0, &est, 0, 3, 4, 1.0), 0.625);
        let est = ArrivalEstimator::with_rates(vec![1.0]).unwrap();
        assert_eq!(predicted_penalty_factor(3.0, &est, 0, 2, 4, 1.0), 1.0);
    }

    #[test]
    fn present_utility_example() {
        let s = StrategyVector::serve(2, 0);
        let u = utility(&s, &s, &two_queue(1.0), &[0.0, 0.75], &[0.0, 0.0]);
        assert_eq!(u, 1.25);
    }

    #[test]
    fn idle_with_empty_queues_is_worth_nothing() {
        let idle = StrategyVector::idle(2);
        assert_eq!(utility(&idle, &idle, &two_queue(0.5), &[0.0; 2], &[0.0; 2]), 0.0);
    }

    #[test]
    fn mixing_weights_present_and_next() {
        // Present: 2 − 0.75 = 1.25. Next: 1 − 0.25 = 0.75.
        let s = StrategyVector::serve(2, 0);
        let s_bar = StrategyVector::serve(2, 1);
        let u = utility(&s, &s_bar, &two_queue(0.5), &[0.0, 0.75], &[0.25, 0.0]);
        assert_eq!(u, 1.0);
    }

    #[test]
    fn printed_next_step_keeps_present_strategy_in_the_penalty() {
        let mut params = two_queue(0.0);
        params.printed_next_step = true;
        let s = StrategyVector::serve(2, 0);
        let idle = StrategyVector::idle(2);
        // c·s = 2, penalty (p̄ − s)·1 = (0.5 − 1) + 0.25.
        let u = utility(&s, &idle, &params, &[0.0; 2], &[0.5, 0.25]);
        assert_eq!(u, 2.0 - (-0.5 + 0.25));
    }

    #[test]
    fn single_backlogged_queue_is_served() {
        let port = PortSnapshot {
            queues: vec![queue(0, 0, 0), queue(1, 3, 5)],
        };
        let s = select_strategy(&port, &two_queue(0.5), &ArrivalEstimator::new(2), 10).unwrap();
        assert_eq!(s.served(), Some(1));
    }

    #[test]
    fn nothing_fits_means_idle() {
        let port = PortSnapshot {
            queues: vec![queue(0, 1, 11), queue(1, 3, 12)],
        };
        let s = select_strategy(&port, &two_queue(0.5), &ArrivalEstimator::new(2), 10).unwrap();
        assert_eq!(s, StrategyVector::idle(2));
    }

    #[test]
    fn closed_gate_is_infeasible() {
        let mut q = queue(0, 2, 1);
        q.gate_open = false;
        let port = PortSnapshot {
            queues: vec![q, queue(1, 0, 0)],
        };
        let s = select_strategy(&port, &two_queue(0.5), &ArrivalEstimator::new(2), 10).unwrap();
        assert_eq!(s.served(), None);
    }

    #[test]
    fn higher_benefit_wins_on_equal_penalties() {
        let port = PortSnapshot {
            queues: vec![queue(0, 1, 2), queue(1, 1, 2)],
        };
        let est = ArrivalEstimator::new(2);
        let cands = evaluate_strategies(&port, &two_queue(0.5), &est, 10).unwrap();
        // Serve 0 then 1: 0.5·2 + 0.5·1; serve 1 then 0: 0.5·1 + 0.5·2; idle then 0: 0 + 0.5·2.
        let u: Vec<f64> = cands.iter().map(|c| c.utility).collect();
        assert_eq!(u, vec![1.5, 1.5, 1.0]);
        assert_eq!(select_strategy(&port, &two_queue(0.5), &est, 10).unwrap().served(), Some(0));
    }

    #[test]
    fn full_queue_outranks_benefit() {
        // Serve 0: (2 − 1) then serve 1 at p̄ = (0, 1): 1 → 1.
        // Serve 1: (1 − 0) then serve 0 at p̄ = (0, 0.75): 1.25 → 1.125.
        let port = PortSnapshot {
            queues: vec![queue(0, 1, 2), queue(1, 4, 2)],
        };
        let est = ArrivalEstimator::new(2);
        let u: Vec<f64> = evaluate_strategies(&port, &two_queue(0.5), &est, 10)
            .unwrap()
            .iter()
            .map(|c| c.utility)
            .collect();
        assert_eq!(u[..2], [1.0, 1.125]);
        assert_eq!(select_strategy(&port, &two_queue(0.5), &est, 10).unwrap().served(), Some(1));
    }

    #[test]
    fn estimator_moving_average() {
        let est = update_arrival_estimator(ArrivalEstimator::new(1), 0, 0, 1000).unwrap();
        assert_eq!(est.rate(0), 0.0);
        let per_ms = 1e-6;
        let est = ArrivalEstimator::with_rates(vec![per_ms]).unwrap();
        let est = update_arrival_estimator(est, 0, 2, 1_000_000).unwrap();
        assert!((est.rate(0) - 1.2 * per_ms).abs() < 1e-18);
        assert!(update_arrival_estimator(est, 0, 1, 0).is_err());
    }

    #[test]
    fn params_json_round_trip_and_validation() {
        let p = UtilityParams::for_queues(4);
        assert_eq!(p.c, vec![1.0, 0.75, 0.5, 0.25]);
        assert_eq!(UtilityParams::from_json(&p.to_json().unwrap()).unwrap(), p);
        let text = r#"{"alpha":0.5,"beta":1.0,"p0":1.0,"q_max":64,"c":[1.0,1.0]}"#;
        assert!(UtilityParams::from_json(text).is_err());
        assert!(StrategyVector::from_bits(vec![true, true]).is_err());
    }

    fn arb_port() -> impl Strategy<Value = (PortSnapshot, Ticks)> {
        (
            proptest::collection::vec((0u32..9, 1u64..20, 1u64..20, any::<bool>()), 1..6),
            0u64..40,
        )
            .prop_map(|(qs, residual)| {
                let queues = qs
                    .into_iter()
                    .enumerate()
                    .map(|(i, (len, head, next, open))| QueueState {
                        index: i,
                        len,
                        head_service_time: if len > 0 { head } else { 0 },
                        next_service_time: if len > 1 { next } else { 0 },
                        gate_open: open,
                    })
                    .collect();
                (PortSnapshot { queues }, residual)
            })
    }

    fn params_for(n: usize, alpha: f64, beta: f64) -> UtilityParams {
        UtilityParams {
            alpha,
            beta,
            p0: 1.5,
            q_max: 8,
            ..UtilityParams::for_queues(n)
        }
    }

    proptest! {
        #[test]
        fn selection_is_a_feasible_argmax((port, residual) in arb_port(), alpha in 0.0f64..=1.0, rate in 0.0f64..0.5) {
            let n = port.queues.len();
            let params = params_for(n, alpha, 1.0);
            let est = ArrivalEstimator::with_rates(vec![rate; n]).unwrap();
            let s = select_strategy(&port, &params, &est, residual).unwrap();
            prop_assert!(s.bits().iter().filter(|&&b| b).count() <= 1);
            if let Some(i) = s.served() {
                let q = &port.queues[i];
                prop_assert!(q.gate_open && q.len > 0 && q.head_service_time <= residual);
            }
            let cands = evaluate_strategies(&port, &params, &est, residual).unwrap();
            let chosen = cands.iter().find(|c| c.strategy == s).unwrap().utility;
            prop_assert!(cands.iter().all(|c| c.utility <= chosen));
        }

        #[test]
        fn common_scaling_keeps_the_argmax((port, residual) in arb_port(), k in 0.01f64..100.0, alpha in 0.0f64..=1.0) {
            let n = port.queues.len();
            let base = params_for(n, alpha, 1.0);
            let mut scaled = base.clone();
            scaled.c.iter_mut().for_each(|c| *c *= k);
            scaled.beta *= k;
            let est = ArrivalEstimator::new(n);
            prop_assert_eq!(
                select_strategy(&port, &base, &est, residual).unwrap(),
                select_strategy(&port, &scaled, &est, residual).unwrap()
            );
        }

        #[test]
        fn penalty_is_monotone(a in 0.0f64..100.0, b in 0.0f64..100.0, q_max in 2u32..64) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(penalty_factor(lo, q_max, 1.0) <= penalty_factor(hi, q_max, 1.0));
        }

        #[test]
        fn utility_falls_as_unserved_penalty_rises(j in 0usize..3, extra in 0.0f64..2.0, alpha in 0.0f64..=1.0) {
            let params = params_for(3, alpha, 1.0);
            let s = StrategyVector::serve(3, (j + 1) % 3);
            let p = [0.2, 0.4, 0.6];
            let mut raised = p;
            raised[j] += extra;
            prop_assert!(utility(&s, &s, &params, &raised, &p) <= utility(&s, &s, &params, &p, &p));
        }

        #[test]
        fn zero_arrivals_predict_present_penalty(q in 0u32..70, tau in 0u64..1000) {
            let est = ArrivalEstimator::new(1);
            prop_assert_eq!(
                predicted_penalty_factor(f64::from(q), &est, 0, tau, 64, 1.0),
                penalty_factor(f64::from(q), 64, 1.0)
            );
        }
    }
}
