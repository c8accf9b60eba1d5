//! Pool sizing for the on-demand deadline QoS, and on-demand idleness.

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::{DispatchPolicy, Dispatcher};
use crate::market::{group_of_slot, SlotRecord};
use crate::workload::{
    gen_on_demand_jobs, stream_rng, OnDemandWorkloadParams, StreamKind, WorkloadError,
};

#[derive(Debug, Error, PartialEq)]
pub enum CapacityError {
    #[error("no pool of at most {0} servers meets the QoS target")]
    NoConvergence(usize),
    #[error("on-time fraction must lie in (0, 1], got {0}")]
    BadTarget(f64),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QosTarget {
    /// Required fraction of jobs starting at their arrival slot.
    pub on_time: f64,
    pub horizon: u64,
    pub replications: u32,
}

impl QosTarget {
    pub fn new(on_time: f64, horizon: u64) -> Self {
        QosTarget {
            on_time,
            horizon,
            replications: 1,
        }
    }

    fn allowed_misses(&self, jobs: u64) -> u64 {
        ((1.0 - self.on_time) * jobs as f64 + 1e-9).floor() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Division {
    /// `b` groups, each serving the arrivals of its own assignment slots.
    Grouped { groups: usize },
    /// One pool serving every slot.
    SinglePool,
}

/// On-demand arrivals replayed at every candidate size: `(slot, size)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OnDemandTrace {
    pub jobs: Vec<(u64, u64)>,
}

impl OnDemandTrace {
    /// Arrivals of `group` over a horizon of `horizon` global slots, drawn from
    /// the same stream the simulator uses for that group.
    pub fn for_group(
        seed: u64,
        group: usize,
        groups: usize,
        horizon: u64,
        params: &OnDemandWorkloadParams,
        billing_slots: usize,
    ) -> Self {
        let mut rng = stream_rng(seed, group, StreamKind::OnDemandArrivals);
        let mut id = 0;
        let mut jobs = Vec::new();
        let mut t = group as u64;
        while t <= horizon {
            for j in gen_on_demand_jobs(t, group, &mut rng, params, billing_slots, &mut id) {
                jobs.push((j.arrival, j.size));
            }
            t += groups as u64;
        }
        OnDemandTrace { jobs }
    }

    /// Interleaves the per-group streams slot by slot, so the single pool sees
    /// exactly the arrivals the grouped pools see.
    pub fn interleaved(
        seed: u64,
        groups: usize,
        horizon: u64,
        params: &OnDemandWorkloadParams,
        billing_slots: usize,
    ) -> Self {
        let mut rngs: Vec<_> = (1..=groups)
            .map(|g| stream_rng(seed, g, StreamKind::OnDemandArrivals))
            .collect();
        let mut id = 0;
        let mut jobs = Vec::new();
        for t in 1..=horizon {
            let g = group_of_slot(t, groups).expect("t >= 1").group;
            for j in gen_on_demand_jobs(t, g, &mut rngs[g - 1], params, billing_slots, &mut id) {
                jobs.push((j.arrival, j.size));
            }
        }
        OnDemandTrace { jobs }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissCount {
    pub misses: u64,
    pub jobs: u64,
    /// Evaluation stopped once the miss budget was exceeded.
    pub truncated: bool,
}

impl MissCount {
    pub fn rate(&self) -> f64 {
        if self.jobs == 0 {
            0.0
        } else {
            self.misses as f64 / self.jobs as f64
        }
    }
}

/// Replays `trace` on `servers` servers. A job misses when its chosen server
/// still holds on-demand work at its arrival slot. Stops early once misses
/// exceed `budget`.
pub fn count_misses<R: Rng + ?Sized>(
    trace: &OnDemandTrace,
    servers: usize,
    policy: DispatchPolicy,
    rng: &mut R,
    budget: Option<u64>,
) -> MissCount {
    let mut busy_through = vec![0u64; servers];
    let mut dispatcher = Dispatcher::new(policy);
    let mut misses = 0;
    for (n, &(t, size)) in trace.jobs.iter().enumerate() {
        let s = dispatcher.choose(servers, rng, |s| busy_through[s].saturating_sub(t - 1));
        let start = if busy_through[s] >= t {
            misses += 1;
            busy_through[s] + 1
        } else {
            t
        };
        busy_through[s] = start + size - 1;
        if budget.is_some_and(|b| misses > b) {
            return MissCount {
                misses,
                jobs: n as u64 + 1,
                truncated: true,
            };
        }
    }
    MissCount {
        misses,
        jobs: trace.jobs.len() as u64,
        truncated: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizingResult {
    pub servers: usize,
    /// Every evaluated `(size, miss rate, truncated)` in evaluation order.
    pub curve: Vec<(usize, f64, bool)>,
    pub monotonicity_violations: usize,
}

/// Window of the downward linear scan run after a monotonicity violation.
const FALLBACK_WINDOW: usize = 32;

/// Smallest pool meeting `qos` on `trace`: exponential bracketing, binary
/// search, then a bounded linear scan downward if the evaluated miss rates
/// were not monotone in pool size.
pub fn size_for_trace<R: Rng, F: Fn() -> R>(
    trace: &OnDemandTrace,
    policy: DispatchPolicy,
    qos: &QosTarget,
    make_rng: F,
    ceiling: usize,
) -> Result<SizingResult, CapacityError> {
    if !(qos.on_time > 0.0 && qos.on_time <= 1.0) {
        return Err(CapacityError::BadTarget(qos.on_time));
    }
    let jobs = trace.jobs.len() as u64;
    let budget = qos.allowed_misses(jobs);
    let mut curve = Vec::new();
    let eval = |m: usize, curve: &mut Vec<(usize, f64, bool)>| {
        let c = count_misses(trace, m, policy, &mut make_rng(), Some(budget));
        let ok = !c.truncated && c.misses <= budget;
        curve.push((m, c.rate(), c.truncated));
        ok
    };

    if jobs == 0 || eval(1, &mut curve) {
        return Ok(SizingResult {
            servers: 1,
            curve,
            monotonicity_violations: 0,
        });
    }
    let (mut lo, mut hi) = (1usize, 2usize);
    while !eval(hi, &mut curve) {
        lo = hi;
        hi *= 2;
        if hi > ceiling {
            return Err(CapacityError::NoConvergence(ceiling));
        }
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if eval(mid, &mut curve) {
            hi = mid;
        } else {
            lo = mid;
        }
    }

    let violations = monotonicity_violations(&curve);
    if violations > 0 {
        warn!("miss rate not monotone in pool size ({violations} inversions); scanning below {hi}");
        let floor = hi.saturating_sub(FALLBACK_WINDOW).max(1);
        for m in (floor..hi).rev() {
            if eval(m, &mut curve) {
                hi = m;
            }
        }
    }
    Ok(SizingResult {
        servers: hi,
        curve,
        monotonicity_violations: violations,
    })
}

/// Pairs of evaluated sizes where the larger pool missed more often. Truncated
/// evaluations only bound the rate from below and are compared as failures.
fn monotonicity_violations(curve: &[(usize, f64, bool)]) -> usize {
    let mut pts: Vec<_> = curve.to_vec();
    pts.sort_by_key(|p| p.0);
    pts.dedup_by_key(|p| p.0);
    let mut count = 0;
    for (i, a) in pts.iter().enumerate() {
        for b in &pts[i + 1..] {
            if !a.2 && (b.2 || b.1 > a.1) {
                count += 1;
            }
        }
    }
    count
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSizing {
    pub division: Division,
    /// One size per group, or a single entry for a single pool.
    pub sizes: Vec<usize>,
    pub total: usize,
    pub per_pool: Vec<SizingResult>,
}

/// Workload whose arrival streams are replayed during sizing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizingWorkload {
    pub params: OnDemandWorkloadParams,
    pub billing_slots: usize,
    pub seed: u64,
    /// Number of per-group arrival streams the market draws from.
    pub stream_groups: usize,
}

/// Minimum servers meeting the deadline QoS. Grouped sizing sizes each group
/// on its own arrival stream; the single pool replays the interleaved streams.
/// With several replications every pool must meet the target on each
/// replication's trace; replication 0 uses the workload seed itself.
pub fn min_servers_for_qos(
    workload: &SizingWorkload,
    policy: DispatchPolicy,
    qos: &QosTarget,
    division: Division,
    ceiling: usize,
) -> Result<PoolSizing, CapacityError> {
    workload.params.validate()?;
    let mut per_pool: Vec<SizingResult> = Vec::new();
    for rep in 0..qos.replications.max(1) as u64 {
        let seed = workload.seed.wrapping_add(rep.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let pools = size_replication(workload, seed, policy, qos, division, ceiling)?;
        if per_pool.is_empty() {
            per_pool = pools;
        } else {
            for (best, r) in per_pool.iter_mut().zip(pools) {
                if r.servers > best.servers {
                    *best = r;
                }
            }
        }
    }
    let sizes: Vec<usize> = per_pool.iter().map(|r| r.servers).collect();
    Ok(PoolSizing {
        division,
        total: sizes.iter().sum(),
        sizes,
        per_pool,
    })
}

fn size_replication(
    workload: &SizingWorkload,
    seed: u64,
    policy: DispatchPolicy,
    qos: &QosTarget,
    division: Division,
    ceiling: usize,
) -> Result<Vec<SizingResult>, CapacityError> {
    let (params, billing_slots) = (&workload.params, workload.billing_slots);
    match division {
        Division::Grouped { groups } => (1..=groups)
            .map(|g| {
                let trace = OnDemandTrace::for_group(seed, g, groups, qos.horizon, params, billing_slots);
                size_for_trace(&trace, policy, qos, || stream_rng(seed, g, StreamKind::Dispatch), ceiling)
            })
            .collect(),
        Division::SinglePool => {
            let trace = OnDemandTrace::interleaved(seed, workload.stream_groups, qos.horizon, params, billing_slots);
            let r = size_for_trace(&trace, policy, qos, || stream_rng(seed, 0, StreamKind::Dispatch), ceiling)?;
            Ok(vec![r])
        }
    }
}

/// `ϑ`: unoccupied fraction of server super-slots. Each record counts the
/// servers of its group over one super-slot.
pub fn idleness(records: &[SlotRecord]) -> f64 {
    let (idle, total) = records.iter().fold((0u64, 0u64), |(i, n), r| {
        let free = r.group_size - r.group_on_demand - r.accepted;
        (i + free as u64, n + r.group_size as u64)
    });
    if total == 0 {
        1.0
    } else {
        idle as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(rate: f64) -> OnDemandWorkloadParams {
        OnDemandWorkloadParams {
            arrival_rate: rate,
            ..OnDemandWorkloadParams::reference()
        }
    }

    #[test]
    fn empty_workload_needs_one_server_per_group() {
        let qos = QosTarget::new(0.99, 600);
        let w = SizingWorkload {
            params: params(0.0),
            billing_slots: 12,
            seed: 1,
            stream_groups: 6,
        };
        let s = min_servers_for_qos(&w, DispatchPolicy::PowerOfTwo, &qos, Division::Grouped { groups: 6 }, 1 << 20)
        .unwrap();
        assert_eq!(s.sizes, vec![1; 6]);
        assert_eq!(s.total, 6);
    }

    #[test]
    fn sizing_is_minimal_on_the_trace() {
        let p = params(3.0);
        let trace = OnDemandTrace::for_group(7, 1, 6, 6_000, &p, 12);
        let make = || ChaCha8Rng::seed_from_u64(2);
        let qos = QosTarget::new(0.99, 6_000);
        let r = size_for_trace(&trace, DispatchPolicy::PowerOfTwo, &qos, make, 1 << 20).unwrap();
        let budget = qos.allowed_misses(trace.jobs.len() as u64);
        let at = |m| count_misses(&trace, m, DispatchPolicy::PowerOfTwo, &mut make(), None);
        assert!(at(r.servers).misses <= budget);
        assert!(at(r.servers - 1).misses > budget);
    }

    #[test]
    fn grouped_and_single_traces_share_arrivals() {
        let p = params(2.0);
        let single = OnDemandTrace::interleaved(3, 6, 600, &p, 12);
        let mut merged: Vec<_> = (1..=6)
            .flat_map(|g| OnDemandTrace::for_group(3, g, 6, 600, &p, 12).jobs)
            .collect();
        merged.sort_by_key(|j| j.0);
        let mut s = single.jobs.clone();
        s.sort_by_key(|j| j.0);
        assert_eq!(merged.len(), s.len());
        for t in 1..=600u64 {
            let mut a: Vec<_> = merged.iter().filter(|j| j.0 == t).map(|j| j.1).collect();
            let mut b: Vec<_> = s.iter().filter(|j| j.0 == t).map(|j| j.1).collect();
            a.sort_unstable();
            b.sort_unstable();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn replications_take_the_largest_requirement() {
        let w = SizingWorkload {
            params: params(2.0),
            billing_slots: 12,
            seed: 5,
            stream_groups: 6,
        };
        let div = Division::Grouped { groups: 6 };
        let one = QosTarget::new(0.99, 3_000);
        let three = QosTarget { replications: 3, ..one };
        let base = min_servers_for_qos(&w, DispatchPolicy::PowerOfTwo, &one, div, 1 << 20).unwrap();
        let rep = min_servers_for_qos(&w, DispatchPolicy::PowerOfTwo, &three, div, 1 << 20).unwrap();
        for (a, b) in base.sizes.iter().zip(&rep.sizes) {
            assert!(b >= a);
        }
    }

    #[test]
    fn monotonicity_detection() {
        assert_eq!(monotonicity_violations(&[(1, 0.5, false), (2, 0.1, false)]), 0);
        assert_eq!(monotonicity_violations(&[(1, 0.1, false), (2, 0.5, false)]), 1);
        assert_eq!(monotonicity_violations(&[(1, 0.0, false), (2, 0.0, true)]), 1);
    }

    fn record(m: usize, od: usize, n: usize) -> SlotRecord {
        SlotRecord {
            t: 1,
            group: 1,
            idle_offered: m - od,
            on_demand_total: od,
            bids: n,
            price: 0.5,
            accepted: n,
            loads: 0,
            spot_revenue: 0.0,
            on_demand_revenue: 0.0,
            alpha: None,
            utilization: 0.0,
            group_size: m,
            group_on_demand: od,
            fresh_accepted: 0,
        }
    }

    #[test]
    fn idleness_extremes() {
        assert_eq!(idleness(&[]), 1.0);
        assert_eq!(idleness(&[record(10, 10, 0), record(10, 10, 0)]), 0.0);
        assert_eq!(idleness(&[record(10, 0, 0)]), 1.0);
        assert_eq!(idleness(&[record(10, 2, 3)]), 0.5);
    }
}
