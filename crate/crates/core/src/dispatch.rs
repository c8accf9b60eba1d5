//! On-demand dispatch (Random / RoundRobin / power-of-two-choices) and spot
//! placement with migration.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{GroupPool, JobId, MarketError, OnDemandJob, ServerId, ServerStatus, SpotBid};
use crate::pricing::BidClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
pub enum DispatchPolicy {
    #[serde(rename = "random")]
    #[value(name = "random")]
    Random,
    #[serde(rename = "rr")]
    #[value(name = "rr")]
    RoundRobin,
    /// Power of two choices on queued on-demand slots.
    #[serde(rename = "ptc")]
    #[value(name = "ptc")]
    PowerOfTwo,
}

#[derive(Debug, Error, PartialEq)]
pub enum DispatchError {
    #[error("{accepted} accepted bids exceed {idle} idle servers")]
    CapacityViolation { accepted: usize, idle: usize },
    #[error(transparent)]
    Market(#[from] MarketError),
}

/// Server selection state for one pool.
#[derive(Debug, Clone)]
pub struct Dispatcher {
    policy: DispatchPolicy,
    next_rr: u64,
}

impl Dispatcher {
    pub fn new(policy: DispatchPolicy) -> Self {
        Dispatcher { policy, next_rr: 1 }
    }

    pub fn policy(&self) -> DispatchPolicy {
        self.policy
    }

    /// Picks a server among `m`, where `load(s)` is the on-demand work queued
    /// on server `s`.
    pub fn choose<R, F>(&mut self, m: usize, rng: &mut R, load: F) -> ServerId
    where
        R: Rng + ?Sized,
        F: Fn(ServerId) -> u64,
    {
        debug_assert!(m > 0);
        match self.policy {
            DispatchPolicy::Random => (rng.random::<f64>() * m as f64) as usize % m,
            DispatchPolicy::RoundRobin => {
                let s = (self.next_rr % m as u64) as usize;
                self.next_rr += 1;
                s
            }
            DispatchPolicy::PowerOfTwo => {
                let a = (rng.random::<f64>() * m as f64) as usize % m;
                let u = rng.random::<f64>();
                if m == 1 {
                    return a;
                }
                let offset = 1 + (u * (m - 1) as f64) as usize % (m - 1);
                let b = (a + offset) % m;
                if load(b) < load(a) {
                    b
                } else {
                    a
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub job: JobId,
    pub server: ServerId,
    pub start: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DispatchOutcome {
    pub assignments: Vec<Assignment>,
    pub misses: usize,
    /// `M_t`: servers without on-demand work after dispatch.
    pub idle: usize,
}

/// Books every job of slot `t` onto the group. All jobs are accepted; a job
/// whose server still has on-demand work queues behind it and counts as a miss.
pub fn dispatch_on_demand<R: Rng + ?Sized>(
    jobs: &mut [OnDemandJob],
    pool: &mut GroupPool,
    t: u64,
    dispatcher: &mut Dispatcher,
    rng: &mut R,
) -> DispatchOutcome {
    let mut out = DispatchOutcome {
        assignments: Vec::with_capacity(jobs.len()),
        ..Default::default()
    };
    let m = pool.size();
    for job in jobs.iter_mut() {
        let server = dispatcher.choose(m, rng, |s| pool.queued_slots(s, t));
        let start = pool.assign_on_demand(job, server, t);
        job.start = Some(start);
        job.server = Some(server);
        if job.missed() {
            out.misses += 1;
        }
        out.assignments.push(Assignment {
            job: job.id,
            server,
            start,
        });
    }
    out.idle = pool.on_demand_free_count();
    out
}

/// Splits bids into continuing (`J'`) and newly arrived (`J''`) users.
pub fn classify_bids(bids: &[SpotBid]) -> (Vec<SpotBid>, Vec<SpotBid>) {
    bids.iter().cloned().partition(SpotBid::is_continuing)
}

/// Class of each bid against the post-dispatch pool: a continuing bid stays
/// unless an on-demand job took its server this slot.
pub fn bid_classes(bids: &[SpotBid], pool: &GroupPool) -> Vec<BidClass> {
    bids.iter()
        .map(|b| match b.prior_server {
            None => BidClass::Fresh,
            Some(s) if pool.is_on_demand(s) => BidClass::Displaced,
            Some(_) => BidClass::Stay,
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpotPlacement {
    /// `(bid index, server, class)` for every accepted bid.
    pub placed: Vec<(usize, ServerId, BidClass)>,
    pub migrated: usize,
    pub stayed: usize,
    pub fresh: usize,
}

impl SpotPlacement {
    /// `f_t`: VMI loads plus migrations.
    pub fn loads(&self) -> usize {
        self.migrated + self.fresh
    }
}

/// Places accepted bids. Stay bids keep their server, then displaced and fresh
/// bids are spread uniformly at random over the remaining idle servers.
pub fn assign_spot<R: Rng + ?Sized>(
    accepted: &[usize],
    bids: &[SpotBid],
    classes: &[BidClass],
    pool: &mut GroupPool,
    rng: &mut R,
) -> Result<SpotPlacement, DispatchError> {
    let idle = pool.on_demand_free_count();
    if accepted.len() > idle {
        return Err(DispatchError::CapacityViolation {
            accepted: accepted.len(),
            idle,
        });
    }
    let mut out = SpotPlacement {
        placed: Vec::with_capacity(accepted.len()),
        ..Default::default()
    };
    let mut movers = Vec::new();
    for &j in accepted {
        match classes[j] {
            BidClass::Stay => {
                let server = bids[j].prior_server.expect("stay bid has a prior server");
                pool.place_spot(server, bids[j].user)?;
                out.placed.push((j, server, BidClass::Stay));
                out.stayed += 1;
            }
            _ => movers.push(j),
        }
    }
    if movers.is_empty() {
        return Ok(out);
    }
    let mut free: Vec<ServerId> = pool
        .on_demand_free()
        .iter()
        .copied()
        .filter(|&s| pool.status(s) == ServerStatus::Idle)
        .collect();
    for (k, &j) in movers.iter().enumerate() {
        let pick = rng.random_range(k..free.len());
        free.swap(k, pick);
        let server = free[k];
        pool.place_spot(server, bids[j].user)?;
        let class = classes[j];
        match class {
            BidClass::Displaced => out.migrated += 1,
            _ => out.fresh += 1,
        }
        out.placed.push((j, server, class));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::UserId;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn round_robin_uses_j_mod_m() {
        let mut d = Dispatcher::new(DispatchPolicy::RoundRobin);
        let mut r = rng();
        let picks: Vec<_> = (0..4).map(|_| d.choose(3, &mut r, |_| 0)).collect();
        assert_eq!(picks, vec![1, 2, 0, 1]);
    }

    #[test]
    fn ptc_prefers_shorter_queue() {
        let mut d = Dispatcher::new(DispatchPolicy::PowerOfTwo);
        let mut r = rng();
        // Two servers: every probe pair is {0, 1}.
        for _ in 0..50 {
            assert_eq!(d.choose(2, &mut r, |s| if s == 0 { 0 } else { 24 }), 0);
            assert_eq!(d.choose(2, &mut r, |s| if s == 0 { 24 } else { 0 }), 1);
        }
    }

    #[test]
    fn ptc_probes_two_distinct_servers() {
        let mut d = Dispatcher::new(DispatchPolicy::PowerOfTwo);
        let mut r = rng();
        // Only server 3 is unloaded; with distinct probes it wins whenever probed.
        let m = 5;
        let mut hits = 0;
        let n = 20_000;
        for _ in 0..n {
            if d.choose(m, &mut r, |s| if s == 3 { 0 } else { 10 }) == 3 {
                hits += 1;
            }
        }
        let p = hits as f64 / n as f64;
        assert!((p - 0.4).abs() < 0.02, "p = {p}");
    }

    #[test]
    fn uncontended_job_starts_on_time() {
        for policy in [
            DispatchPolicy::Random,
            DispatchPolicy::RoundRobin,
            DispatchPolicy::PowerOfTwo,
        ] {
            let mut pool = GroupPool::new(1, 4);
            pool.advance(1);
            let mut jobs = vec![OnDemandJob::new(0, 1, 1, 12)];
            let out = dispatch_on_demand(&mut jobs, &mut pool, 1, &mut Dispatcher::new(policy), &mut rng());
            assert_eq!(out.misses, 0);
            assert_eq!(jobs[0].start, Some(1));
            assert_eq!(out.idle, 3);
        }
    }

    #[test]
    fn contended_job_queues_and_misses() {
        let mut pool = GroupPool::new(1, 1);
        pool.advance(1);
        let mut jobs = vec![OnDemandJob::new(0, 1, 1, 12), OnDemandJob::new(1, 1, 1, 12)];
        let mut d = Dispatcher::new(DispatchPolicy::PowerOfTwo);
        let out = dispatch_on_demand(&mut jobs, &mut pool, 1, &mut d, &mut rng());
        assert_eq!(out.misses, 1);
        assert_eq!(jobs[1].start, Some(13));
        assert_eq!(out.idle, 0);
    }

    #[test]
    fn classification_partitions() {
        let fresh = SpotBid::fresh(UserId(1), 1, 7, 0.5, 0.1);
        let cont = fresh.continuation(7, 3);
        let bids = vec![cont.clone(), fresh.clone(), cont.clone(), fresh.clone(), cont];
        let (c, f) = classify_bids(&bids);
        assert_eq!((c.len(), f.len()), (3, 2));
        let (c, f) = classify_bids(&bids[1..2]);
        assert_eq!((c.len(), f.len()), (0, 1));
    }

    #[test]
    fn stay_displaced_and_fresh_placement() {
        let mut pool = GroupPool::new(1, 6);
        pool.advance(1);
        // Server 0 goes to an on-demand job; servers 1..5 stay idle.
        pool.assign_on_demand(&OnDemandJob::new(0, 1, 1, 12), 0, 1);
        let base = SpotBid::fresh(UserId(1), 1, 1, 0.5, 0.1);
        let stay = base.continuation(1, 2);
        let displaced = SpotBid { user: UserId(2), ..base.continuation(1, 0) };
        let fresh_a = SpotBid { user: UserId(3), ..base.clone() };
        let fresh_b = SpotBid { user: UserId(4), ..base };
        let bids = vec![stay, displaced, fresh_a, fresh_b];
        let classes = bid_classes(&bids, &pool);
        assert_eq!(
            classes,
            vec![BidClass::Stay, BidClass::Displaced, BidClass::Fresh, BidClass::Fresh]
        );
        let placed = assign_spot(&[0, 1, 2, 3], &bids, &classes, &mut pool, &mut rng()).unwrap();
        assert_eq!((placed.stayed, placed.migrated, placed.fresh), (1, 1, 2));
        assert_eq!(placed.loads(), 3);
        assert_eq!(pool.status(2), ServerStatus::Spot { user: UserId(1) });
        let mut servers: Vec<_> = placed.placed.iter().map(|p| p.1).collect();
        servers.sort_unstable();
        servers.dedup();
        assert_eq!(servers.len(), 4);
        assert!(!servers.contains(&0));
    }

    #[test]
    fn over_capacity_is_an_error() {
        let mut pool = GroupPool::new(1, 1);
        pool.advance(1);
        let bids = vec![
            SpotBid::fresh(UserId(1), 1, 1, 0.5, 0.1),
            SpotBid::fresh(UserId(2), 1, 1, 0.5, 0.1),
        ];
        let classes = bid_classes(&bids, &pool);
        let err = assign_spot(&[0, 1], &bids, &classes, &mut pool, &mut rng()).unwrap_err();
        assert_eq!(err, DispatchError::CapacityViolation { accepted: 2, idle: 1 });
    }
}
