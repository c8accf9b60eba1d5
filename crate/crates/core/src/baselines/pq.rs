//! Two-pool baseline: a dedicated on-demand pool plus a spot pool run as a
//! preemptive priority queue over waiting-cost classes.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workload::{poisson_count, round_to_billing, OnDemandWorkloadParams};

#[derive(Debug, Error, PartialEq)]
pub enum PqError {
    #[error("priority-queue config needs at least one class and positive bounds")]
    BadClasses,
    #[error("spot pool sizing exceeded {0} servers")]
    SizingCeiling(usize),
}

/// One waiting-cost class with its waiting-time bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PqClass {
    pub waiting_cost: f64,
    pub max_wait: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PqMarketConfig {
    /// Spot arrivals per slot.
    pub spot_rate: f64,
    pub sizes: OnDemandWorkloadParams,
    pub billing_slots: usize,
    /// Classes drawn uniformly per job; higher waiting cost has priority.
    pub classes: Vec<PqClass>,
    /// Required on-time fraction per class.
    pub qos: f64,
    pub spot_price: f64,
    pub horizon: u64,
    /// Slots excluded from occupancy averages.
    pub warmup: u64,
}

impl PqMarketConfig {
    pub fn reference(spot_rate: f64, horizon: u64) -> Self {
        PqMarketConfig {
            spot_rate,
            sizes: OnDemandWorkloadParams::reference(),
            billing_slots: 12,
            classes: vec![
                PqClass {
                    waiting_cost: 0.3,
                    max_wait: 132,
                },
                PqClass {
                    waiting_cost: 0.7,
                    max_wait: 48,
                },
            ],
            qos: 0.99,
            spot_price: 0.5,
            horizon,
            warmup: 144,
        }
    }

    fn validate(&self) -> Result<(), PqError> {
        if self.classes.is_empty() || self.classes.iter().any(|c| c.max_wait == 0) {
            return Err(PqError::BadClasses);
        }
        Ok(())
    }

    /// Class indices from highest to lowest priority.
    fn priority_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.classes.len()).collect();
        idx.sort_by(|&a, &b| self.classes[b].waiting_cost.total_cmp(&self.classes[a].waiting_cost));
        idx
    }
}

#[derive(Debug, Clone, Copy)]
struct PqJob {
    arrival: u64,
    size: u64,
    remaining: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PqOutcome {
    pub servers: usize,
    /// `m̄_s`: mean busy spot servers per slot after warm-up.
    pub mean_busy: f64,
    pub arrived: Vec<u64>,
    pub completed: Vec<u64>,
    pub late: Vec<u64>,
    pub arrived_work: u64,
    pub executed_work: u64,
    pub residual_work: u64,
    /// The run stopped early because a class could no longer meet its QoS.
    pub aborted: bool,
}

impl PqOutcome {
    pub fn meets_qos(&self, qos: f64) -> bool {
        !self.aborted
            && self
                .arrived
                .iter()
                .zip(&self.late)
                .all(|(&n, &late)| late as f64 <= (1.0 - qos) * n as f64)
    }

    pub fn work_conserved(&self) -> bool {
        self.aborted || self.executed_work + self.residual_work == self.arrived_work
    }
}

/// Arrivals of one slot: `(class, size)`.
fn arrivals<R: Rng + ?Sized>(cfg: &PqMarketConfig, rng: &mut R, out: &mut Vec<(usize, u64)>) {
    let dist = cfg.sizes.size_distribution();
    let n = poisson_count(rng, cfg.spot_rate);
    for _ in 0..n {
        let size = round_to_billing(dist.sample(rng), cfg.billing_slots);
        let class = rng.random_range(0..cfg.classes.len());
        out.push((class, size));
    }
}

/// Per-class arrival totals of the trace produced by `make_rng`.
fn class_totals<R: Rng, F: Fn() -> R>(cfg: &PqMarketConfig, make_rng: &F) -> Vec<u64> {
    let mut rng = make_rng();
    let mut totals = vec![0u64; cfg.classes.len()];
    let mut buf = Vec::new();
    for _ in 0..cfg.horizon {
        buf.clear();
        arrivals(cfg, &mut rng, &mut buf);
        for &(c, _) in &buf {
            totals[c] += 1;
        }
    }
    totals
}

/// Simulates the spot pool with `servers` servers on the generated trace.
/// With `abort_at` given, the run stops once any class has more late jobs than
/// its limit.
pub fn simulate_spot_pool<R: Rng + ?Sized>(
    cfg: &PqMarketConfig,
    servers: usize,
    rng: &mut R,
    abort_at: Option<&[u64]>,
) -> PqOutcome {
    simulate_trace(cfg, servers, |_, buf| arrivals(cfg, rng, buf), abort_at)
}

/// Core loop over an arbitrary arrival source. Each slot the running set is
/// the first `servers` jobs in (priority class, arrival) order and every
/// running job gains one slot of service. Waiting time is completion minus
/// arrival plus one minus size.
fn simulate_trace<A>(cfg: &PqMarketConfig, servers: usize, mut source: A, abort_at: Option<&[u64]>) -> PqOutcome
where
    A: FnMut(u64, &mut Vec<(usize, u64)>),
{
    let order = cfg.priority_order();
    let k = cfg.classes.len();
    let mut queues: Vec<VecDeque<PqJob>> = vec![VecDeque::new(); k];
    let mut out = PqOutcome {
        servers,
        mean_busy: 0.0,
        arrived: vec![0; k],
        completed: vec![0; k],
        late: vec![0; k],
        arrived_work: 0,
        executed_work: 0,
        residual_work: 0,
        aborted: false,
    };
    let mut busy_sum = 0u64;
    let mut buf = Vec::new();
    let mut survivors = Vec::new();
    for t in 1..=cfg.horizon {
        buf.clear();
        source(t, &mut buf);
        for &(c, size) in &buf {
            queues[c].push_back(PqJob {
                arrival: t,
                size,
                remaining: size,
            });
            out.arrived[c] += 1;
            out.arrived_work += size;
        }
        let mut free = servers;
        let mut busy = 0u64;
        for &c in &order {
            let run = free.min(queues[c].len());
            free -= run;
            busy += run as u64;
            survivors.clear();
            for _ in 0..run {
                let mut job = queues[c].pop_front().expect("counted");
                job.remaining -= 1;
                if job.remaining == 0 {
                    out.completed[c] += 1;
                    let wait = t + 1 - job.arrival - job.size;
                    if wait > cfg.classes[c].max_wait {
                        out.late[c] += 1;
                    }
                } else {
                    survivors.push(job);
                }
            }
            for job in survivors.drain(..).rev() {
                queues[c].push_front(job);
            }
        }
        out.executed_work += busy;
        if t > cfg.warmup {
            busy_sum += busy;
        }
        if let Some(limits) = abort_at {
            if out.late.iter().zip(limits).any(|(&l, &lim)| l > lim) {
                out.aborted = true;
                break;
            }
        }
    }
    out.residual_work = queues.iter().flatten().map(|j| j.remaining).sum();
    if !out.aborted {
        // Unfinished jobs that can no longer finish in time count as late.
        let end = cfg.horizon;
        for (c, q) in queues.iter().enumerate() {
            let bound = cfg.classes[c].max_wait;
            out.late[c] += q
                .iter()
                .filter(|j| end + j.remaining + 1 - j.arrival - j.size > bound)
                .count() as u64;
        }
    }
    let measured = cfg.horizon.saturating_sub(cfg.warmup).max(1);
    out.mean_busy = busy_sum as f64 / measured as f64;
    out
}

/// Smallest spot pool meeting the per-class QoS on the replayed trace, found
/// by geometric bracketing upward from the offered load then binary search.
pub fn size_spot_pool<R: Rng, F: Fn() -> R>(
    cfg: &PqMarketConfig,
    make_rng: F,
    ceiling: usize,
) -> Result<(usize, PqOutcome), PqError> {
    cfg.validate()?;
    let totals = class_totals(cfg, &make_rng);
    let limits: Vec<u64> = totals
        .iter()
        .map(|&n| ((1.0 - cfg.qos) * n as f64).floor() as u64)
        .collect();
    let meets = |m: usize| simulate_spot_pool(cfg, m, &mut make_rng(), Some(&limits)).meets_qos(cfg.qos);

    let load = offered_load(cfg, &make_rng).floor() as usize;
    // `lo` always fails (0 servers fails whenever anything arrives), `hi` meets.
    let (mut lo, mut hi) = if load > 0 && meets(load) {
        (0, load)
    } else {
        let mut lo = load;
        let mut hi = load.max(1);
        loop {
            hi = (hi + hi / 4).max(hi + 1);
            if hi > ceiling {
                return Err(PqError::SizingCeiling(ceiling));
            }
            if meets(hi) {
                break (lo, hi);
            }
            lo = hi;
        }
    };
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if meets(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let full = simulate_spot_pool(cfg, hi, &mut make_rng(), None);
    Ok((hi, full))
}

/// Mean arrived work per slot of the trace.
fn offered_load<R: Rng, F: Fn() -> R>(cfg: &PqMarketConfig, make_rng: &F) -> f64 {
    let mut rng = make_rng();
    let mut buf = Vec::new();
    let mut work = 0u64;
    for _ in 0..cfg.horizon {
        buf.clear();
        arrivals(cfg, &mut rng, &mut buf);
        work += buf.iter().map(|&(_, s)| s).sum::<u64>();
    }
    work as f64 / cfg.horizon.max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PqSummary {
    /// `m_o`.
    pub on_demand_servers: usize,
    /// `m_S`.
    pub spot_servers: usize,
    /// `m̄_o`.
    pub mean_on_demand_busy: f64,
    /// `m̄_s`.
    pub mean_spot_busy: f64,
    pub pq_unit_revenue: f64,
    pub ours_unit_revenue: f64,
    /// `α_e = ours / pq - 1`.
    pub alpha: f64,
    pub work_conserved: bool,
}

/// Compares the two-pool market with the shared market on `m_o + m_S`
/// servers, where every server not used by on-demand work is sold to saturated
/// spot demand at the spot price.
pub fn run_pq_market(
    cfg: &PqMarketConfig,
    on_demand_servers: usize,
    mean_on_demand_busy: f64,
    spot: &PqOutcome,
) -> PqSummary {
    let l = cfg.billing_slots as f64;
    let p = cfg.spot_price;
    let total = (on_demand_servers + spot.servers) as f64;
    let pq = (mean_on_demand_busy + p * spot.mean_busy) / l;
    let ours = (mean_on_demand_busy + p * (total - mean_on_demand_busy)) / l;
    PqSummary {
        on_demand_servers,
        spot_servers: spot.servers,
        mean_on_demand_busy,
        mean_spot_busy: spot.mean_busy,
        pq_unit_revenue: pq,
        ours_unit_revenue: ours,
        alpha: ours / pq - 1.0,
        work_conserved: spot.work_conserved(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(rate: f64) -> PqMarketConfig {
        PqMarketConfig {
            horizon: 3_000,
            warmup: 0,
            ..PqMarketConfig::reference(rate, 3_000)
        }
    }

    #[test]
    fn no_spot_arrivals_gives_on_demand_revenue_only() {
        let cfg = small(0.0);
        let out = simulate_spot_pool(&cfg, 5, &mut ChaCha8Rng::seed_from_u64(1), None);
        assert_eq!(out.mean_busy, 0.0);
        let s = run_pq_market(&cfg, 10, 4.0, &out);
        assert!((s.pq_unit_revenue - 4.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn single_job_runs_contiguously() {
        let cfg = PqMarketConfig {
            horizon: 12,
            ..small(0.0)
        };
        let source = |t: u64, buf: &mut Vec<(usize, u64)>| {
            if t == 1 {
                buf.push((0, 12));
            }
        };
        let out = simulate_trace(&cfg, 3, source, None);
        assert_eq!(out.completed, vec![1, 0]);
        assert_eq!(out.late, vec![0, 0]);
        assert_eq!(out.executed_work, 12);
        assert_eq!(out.residual_work, 0);
    }

    #[test]
    fn high_cost_job_preempts() {
        let source = |t: u64, buf: &mut Vec<(usize, u64)>| match t {
            1 => buf.push((0, 12)),
            2 => buf.push((1, 12)),
            _ => {}
        };
        let strict = PqMarketConfig {
            classes: vec![
                PqClass {
                    waiting_cost: 0.3,
                    max_wait: 1,
                },
                PqClass {
                    waiting_cost: 0.7,
                    max_wait: 1,
                },
            ],
            ..small(0.0)
        };
        // By slot 13 only the high-cost job, which arrived second, is done; the
        // preempted job can no longer meet its bound and already counts as late.
        let at13 = simulate_trace(&PqMarketConfig { horizon: 13, ..strict.clone() }, 1, source, None);
        assert_eq!(at13.completed, vec![0, 1]);
        assert_eq!(at13.late, vec![1, 0]);
        assert_eq!(at13.residual_work, 11);
        // The low-cost job resumes and finishes at 24, having waited 12 slots.
        let at24 = simulate_trace(&PqMarketConfig { horizon: 24, ..strict }, 1, source, None);
        assert_eq!(at24.completed, vec![1, 1]);
        assert_eq!(at24.late, vec![1, 0]);
        assert_eq!(at24.residual_work, 0);
    }

    #[test]
    fn work_is_conserved() {
        let cfg = small(3.0);
        for m in [10, 60, 200] {
            let out = simulate_spot_pool(&cfg, m, &mut ChaCha8Rng::seed_from_u64(9), None);
            assert_eq!(out.executed_work + out.residual_work, out.arrived_work);
        }
    }

    #[test]
    fn sizing_is_minimal() {
        let cfg = small(2.0);
        let make = || ChaCha8Rng::seed_from_u64(4);
        let (m, out) = size_spot_pool(&cfg, make, 10_000).unwrap();
        assert!(out.meets_qos(cfg.qos));
        let below = simulate_spot_pool(&cfg, m - 1, &mut make(), None);
        assert!(!below.meets_qos(cfg.qos));
    }
}
