//! Shared domain types: configuration, the slot/group clock and the server pool.
//!
//! Slots are 1-based. Slot `t` belongs to group `i = t - h*b` with
//! `h = ceil(t/b) - 1`; group `i` only changes server state at its own
//! assignment slots `i, i+b, i+2b, ...`, so every status set at `t` is held for
//! the whole super-slot `[t, t+b-1]`.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::DispatchPolicy;
use crate::workload::{OnDemandWorkloadParams, SpotWorkloadParams, WorkloadError};

/// 1-based group index.
pub type GroupId = usize;
/// Server index local to its group, `0..m_i`.
pub type ServerId = usize;
pub type JobId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UserId(pub u64);

#[derive(Debug, Error, PartialEq)]
pub enum MarketError {
    #[error("slot index must be >= 1, got {0}")]
    SlotOutOfRange(u64),
    #[error("group count must be >= 1")]
    NoGroups,
    #[error("server {server} of group {group} is not idle")]
    ServerNotIdle { group: GroupId, server: ServerId },
    #[error("server {server} out of range for group {group}")]
    UnknownServer { group: GroupId, server: ServerId },
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("slot length must be positive")]
    ZeroSlot,
    #[error("need at least one group")]
    NoGroups,
    #[error("load time {load} min must be shorter than a super-slot of {super_slot} min")]
    LoadTooLong { load: u32, super_slot: u64 },
    #[error("billing interval of {billing} slots is not a multiple of {groups} groups")]
    BillingNotDivisible { billing: usize, groups: usize },
    #[error("expected {expected} group sizes, got {got}")]
    GroupCount { expected: usize, got: usize },
    #[error("every group needs at least one server")]
    EmptyGroup,
    #[error("on-demand price must be positive and finite")]
    BadPrice,
    #[error("spot price support upper bound {high} exceeds the on-demand price {price}")]
    SpotAboveOnDemand { high: f64, price: f64 },
    #[error("DRP bounds must satisfy 0 < floor < ceiling, got [{floor}, {ceiling}]")]
    BadDrpBounds { floor: f64, ceiling: f64 },
    #[error("horizon must be positive")]
    ZeroHorizon,
    #[error(transparent)]
    Workload(#[from] WorkloadError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PricerKind {
    /// Revenue-maximizing uniform price over the bid ladder.
    SpotiPrice,
    /// Dynamic reserve price drawn from `[floor, ceiling]`.
    Drp { floor: f64, ceiling: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// `k`: minutes per slot.
    pub slot_minutes: u32,
    /// `k'`: minutes to load or migrate a VM image.
    pub load_minutes: u32,
    /// `b`: number of server groups.
    pub groups: usize,
    /// `L`: slots per billing interval.
    pub billing_slots: usize,
    pub group_sizes: Vec<usize>,
    /// `p`: on-demand price per billing interval.
    pub on_demand_price: f64,
    pub dispatch_policy: DispatchPolicy,
    pub pricer: PricerKind,
    pub on_demand: OnDemandWorkloadParams,
    /// `None` runs a pure on-demand market.
    pub spot: Option<SpotWorkloadParams>,
    pub seed: u64,
    /// Number of slots to simulate.
    pub horizon: u64,
}

impl SimConfig {
    /// The reference market: 5-minute slots, 3-minute image loads, six groups,
    /// hourly billing, PTC dispatch and SpotiPrice.
    pub fn reference(group_sizes: Vec<usize>, spot: Option<SpotWorkloadParams>) -> Self {
        SimConfig {
            slot_minutes: 5,
            load_minutes: 3,
            groups: 6,
            billing_slots: 12,
            group_sizes,
            on_demand_price: 1.0,
            dispatch_policy: DispatchPolicy::PowerOfTwo,
            pricer: PricerKind::SpotiPrice,
            on_demand: OnDemandWorkloadParams::reference(),
            spot,
            seed: 1,
            horizon: 120_000,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.slot_minutes == 0 {
            return Err(ConfigError::ZeroSlot);
        }
        if self.groups == 0 {
            return Err(ConfigError::NoGroups);
        }
        let super_slot = self.groups as u64 * self.slot_minutes as u64;
        if self.load_minutes as u64 >= super_slot {
            return Err(ConfigError::LoadTooLong {
                load: self.load_minutes,
                super_slot,
            });
        }
        if self.billing_slots == 0 || !self.billing_slots.is_multiple_of(self.groups) {
            return Err(ConfigError::BillingNotDivisible {
                billing: self.billing_slots,
                groups: self.groups,
            });
        }
        if self.group_sizes.len() != self.groups {
            return Err(ConfigError::GroupCount {
                expected: self.groups,
                got: self.group_sizes.len(),
            });
        }
        if self.group_sizes.contains(&0) {
            return Err(ConfigError::EmptyGroup);
        }
        if !(self.on_demand_price.is_finite() && self.on_demand_price > 0.0) {
            return Err(ConfigError::BadPrice);
        }
        if self.horizon == 0 {
            return Err(ConfigError::ZeroHorizon);
        }
        self.on_demand.validate()?;
        if let Some(spot) = &self.spot {
            spot.validate()?;
            let (_, high) = spot.price.support();
            if high > self.on_demand_price {
                return Err(ConfigError::SpotAboveOnDemand {
                    high,
                    price: self.on_demand_price,
                });
            }
        }
        if let PricerKind::Drp { floor, ceiling } = self.pricer {
            if !(floor.is_finite() && ceiling.is_finite() && 0.0 < floor && floor < ceiling) {
                return Err(ConfigError::BadDrpBounds { floor, ceiling });
            }
        }
        Ok(())
    }

    /// `β = k'/k`.
    pub fn beta(&self) -> f64 {
        self.load_minutes as f64 / self.slot_minutes as f64
    }

    /// `K = L/b`: billing intervals expressed in super-slots.
    pub fn billing_super_slots(&self) -> usize {
        self.billing_slots / self.groups
    }

    pub fn total_servers(&self) -> usize {
        self.group_sizes.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotGroupIndex {
    pub t: u64,
    /// Epoch `h = ceil(t/b) - 1`.
    pub epoch: u64,
    pub group: GroupId,
}

pub fn group_of_slot(t: u64, groups: usize) -> Result<SlotGroupIndex, MarketError> {
    if t < 1 {
        return Err(MarketError::SlotOutOfRange(t));
    }
    if groups < 1 {
        return Err(MarketError::NoGroups);
    }
    let b = groups as u64;
    let epoch = t.div_ceil(b) - 1;
    Ok(SlotGroupIndex {
        t,
        epoch,
        group: (t - epoch * b) as GroupId,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnDemandJob {
    pub id: JobId,
    pub group: GroupId,
    /// `a_j`: arrival (and requested start) slot.
    pub arrival: u64,
    /// `s_j` in slots.
    pub size: u64,
    /// `d_j = a_j + s_j - 1`.
    pub deadline: u64,
    pub start: Option<u64>,
    pub server: Option<ServerId>,
}

impl OnDemandJob {
    pub fn new(id: JobId, group: GroupId, arrival: u64, size: u64) -> Self {
        OnDemandJob {
            id,
            group,
            arrival,
            size,
            deadline: arrival + size - 1,
            start: None,
            server: None,
        }
    }

    pub fn missed(&self) -> bool {
        self.start.is_some_and(|s| s > self.arrival)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotBid {
    pub user: UserId,
    pub group: GroupId,
    /// Slot this bid is submitted for.
    pub slot: u64,
    /// Reported price `v_j`.
    pub price: f64,
    /// Willingness to pay `c_j`.
    pub wtp: f64,
    /// Server held at `slot - b` when the user's previous bid was accepted.
    pub prior_server: Option<ServerId>,
    /// Probability the user stops bidding after an accepted slot.
    pub stop_probability: f64,
}

impl SpotBid {
    /// A truthful bid from a newly arrived user.
    pub fn fresh(user: UserId, group: GroupId, slot: u64, price: f64, stop_probability: f64) -> Self {
        SpotBid {
            user,
            group,
            slot,
            price,
            wtp: price,
            prior_server: None,
            stop_probability,
        }
    }

    pub fn continuation(&self, slot: u64, server: ServerId) -> Self {
        SpotBid {
            slot,
            prior_server: Some(server),
            ..self.clone()
        }
    }

    pub fn is_continuing(&self) -> bool {
        self.prior_server.is_some()
    }
}

/// Status of one server over the current super-slot of its group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServerStatus {
    Idle,
    /// Held by an on-demand job through slot `release` inclusive.
    OnDemand { job: JobId, release: u64 },
    Spot { user: UserId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Lease {
    job: JobId,
    release: u64,
}

#[derive(Debug, Clone)]
struct Server {
    status: ServerStatus,
    /// Last slot covered by on-demand work, including queued leases; 0 when none.
    busy_through: u64,
    backlog: VecDeque<Lease>,
}

/// Set of servers with no on-demand work, O(1) insert/remove.
#[derive(Debug, Clone)]
struct IdleSet {
    members: Vec<ServerId>,
    pos: Vec<usize>,
}

impl IdleSet {
    const ABSENT: usize = usize::MAX;

    fn full(size: usize) -> Self {
        IdleSet {
            members: (0..size).collect(),
            pos: (0..size).collect(),
        }
    }

    fn contains(&self, s: ServerId) -> bool {
        self.pos[s] != Self::ABSENT
    }

    fn insert(&mut self, s: ServerId) {
        if !self.contains(s) {
            self.pos[s] = self.members.len();
            self.members.push(s);
        }
    }

    fn remove(&mut self, s: ServerId) {
        let p = self.pos[s];
        if p == Self::ABSENT {
            return;
        }
        let last = *self.members.last().expect("non-empty");
        self.members.swap_remove(p);
        if last != s {
            self.pos[last] = p;
        }
        self.pos[s] = Self::ABSENT;
    }
}

/// Per-slot status counts of one group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Occupancy {
    pub idle: usize,
    pub on_demand: usize,
    pub spot: usize,
}

impl Occupancy {
    pub fn total(&self) -> usize {
        self.idle + self.on_demand + self.spot
    }
}

/// Servers of one group.
#[derive(Debug, Clone)]
pub struct GroupPool {
    group: GroupId,
    servers: Vec<Server>,
    free: IdleSet,
    releases: BTreeMap<u64, Vec<ServerId>>,
    spot_held: Vec<ServerId>,
}

impl GroupPool {
    pub fn new(group: GroupId, size: usize) -> Self {
        GroupPool {
            group,
            servers: vec![
                Server {
                    status: ServerStatus::Idle,
                    busy_through: 0,
                    backlog: VecDeque::new(),
                };
                size
            ],
            free: IdleSet::full(size),
            releases: BTreeMap::new(),
            spot_held: Vec::new(),
        }
    }

    pub fn group(&self) -> GroupId {
        self.group
    }

    pub fn size(&self) -> usize {
        self.servers.len()
    }

    pub fn status(&self, server: ServerId) -> ServerStatus {
        self.servers[server].status
    }

    /// Servers without on-demand work this super-slot (idle or spot-held).
    pub fn on_demand_free(&self) -> &[ServerId] {
        &self.free.members
    }

    pub fn on_demand_free_count(&self) -> usize {
        self.free.members.len()
    }

    pub fn on_demand_count(&self) -> usize {
        self.servers.len() - self.free.members.len()
    }

    pub fn spot_count(&self) -> usize {
        self.spot_held.len()
    }

    pub fn is_on_demand(&self, server: ServerId) -> bool {
        !self.free.contains(server)
    }

    /// Remaining on-demand slots queued on `server` as seen at slot `t`.
    pub fn queued_slots(&self, server: ServerId, t: u64) -> u64 {
        let through = self.servers[server].busy_through;
        if through >= t {
            through - t + 1
        } else {
            0
        }
    }

    /// Starts a new super-slot at assignment slot `t`: finished on-demand
    /// leases are released (or replaced by the next queued lease) and every
    /// spot lease from `t - b` ends.
    pub fn advance(&mut self, t: u64) {
        for s in self.spot_held.drain(..) {
            if let ServerStatus::Spot { .. } = self.servers[s].status {
                self.servers[s].status = ServerStatus::Idle;
            }
        }
        while let Some(entry) = self.releases.first_entry() {
            if *entry.key() >= t {
                break;
            }
            for s in entry.remove() {
                let server = &mut self.servers[s];
                match server.backlog.pop_front() {
                    Some(next) => {
                        server.status = ServerStatus::OnDemand {
                            job: next.job,
                            release: next.release,
                        };
                        self.releases.entry(next.release).or_default().push(s);
                    }
                    None => {
                        server.status = ServerStatus::Idle;
                        self.free.insert(s);
                    }
                }
            }
        }
    }

    /// Books `job` on `server` at slot `t`. Returns the slot the job actually
    /// starts, which is later than `t` when on-demand work is already queued.
    pub fn assign_on_demand(&mut self, job: &OnDemandJob, server: ServerId, t: u64) -> u64 {
        let srv = &mut self.servers[server];
        let start = if srv.busy_through >= t {
            srv.busy_through + 1
        } else {
            t
        };
        let release = start + job.size - 1;
        srv.busy_through = release;
        if start == t {
            srv.status = ServerStatus::OnDemand {
                job: job.id,
                release,
            };
            self.free.remove(server);
            self.releases.entry(release).or_default().push(server);
        } else {
            srv.backlog.push_back(Lease {
                job: job.id,
                release,
            });
        }
        start
    }

    pub fn place_spot(&mut self, server: ServerId, user: UserId) -> Result<(), MarketError> {
        let srv = self
            .servers
            .get_mut(server)
            .ok_or(MarketError::UnknownServer {
                group: self.group,
                server,
            })?;
        if srv.status != ServerStatus::Idle {
            return Err(MarketError::ServerNotIdle {
                group: self.group,
                server,
            });
        }
        srv.status = ServerStatus::Spot { user };
        self.spot_held.push(server);
        Ok(())
    }

    /// Counts statuses by scanning every server. O(m); used for invariant checks.
    pub fn occupancy(&self) -> Occupancy {
        let mut occ = Occupancy::default();
        for s in &self.servers {
            match s.status {
                ServerStatus::Idle => occ.idle += 1,
                ServerStatus::OnDemand { .. } => occ.on_demand += 1,
                ServerStatus::Spot { .. } => occ.spot += 1,
            }
        }
        occ
    }

    /// Status of every server, in server order.
    pub fn snapshot(&self) -> Vec<ServerStatus> {
        self.servers.iter().map(|s| s.status).collect()
    }
}

/// All groups of the market.
#[derive(Debug, Clone)]
pub struct ServerPool {
    groups: Vec<GroupPool>,
}

impl ServerPool {
    pub fn new(group_sizes: &[usize]) -> Self {
        ServerPool {
            groups: group_sizes
                .iter()
                .enumerate()
                .map(|(i, &m)| GroupPool::new(i + 1, m))
                .collect(),
        }
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn group(&self, group: GroupId) -> &GroupPool {
        &self.groups[group - 1]
    }

    pub fn group_mut(&mut self, group: GroupId) -> &mut GroupPool {
        &mut self.groups[group - 1]
    }

    /// Advances the group whose assignment slot is `t`.
    pub fn advance_pool(&mut self, t: u64) -> Result<GroupId, MarketError> {
        let idx = group_of_slot(t, self.groups.len())?;
        self.group_mut(idx.group).advance(t);
        Ok(idx.group)
    }

    /// `M̄_t`: servers held by on-demand work across all groups.
    pub fn on_demand_total(&self) -> usize {
        self.groups.iter().map(GroupPool::on_demand_count).sum()
    }
}

/// Per-slot ledger row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub t: u64,
    pub group: GroupId,
    /// `M_t`: servers offered to the spot market.
    pub idle_offered: usize,
    /// `M̄_t`: on-demand-held servers across all groups.
    pub on_demand_total: usize,
    /// `A_t`.
    pub bids: usize,
    /// `π*_t`.
    pub price: f64,
    /// `N_t`.
    pub accepted: usize,
    /// `f_t`.
    pub loads: usize,
    /// `G(t)`.
    pub spot_revenue: f64,
    /// `G^o_t`.
    pub on_demand_revenue: f64,
    /// `α_t`, absent when the on-demand market earns nothing at `t`.
    pub alpha: Option<f64>,
    /// Combined (on-demand + spot) utilization of the group.
    pub utilization: f64,
    pub group_size: usize,
    pub group_on_demand: usize,
    /// Newly arrived bids accepted at `t`.
    pub fresh_accepted: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slot_to_group() {
        let g = group_of_slot(1, 6).unwrap();
        assert_eq!((g.epoch, g.group), (0, 1));
        let g = group_of_slot(6, 6).unwrap();
        assert_eq!((g.epoch, g.group), (0, 6));
        let g = group_of_slot(13, 6).unwrap();
        assert_eq!((g.epoch, g.group), (2, 1));
        assert_eq!(group_of_slot(0, 6), Err(MarketError::SlotOutOfRange(0)));
        assert_eq!(group_of_slot(3, 0), Err(MarketError::NoGroups));
    }

    #[test]
    fn group_of_slot_is_bijective() {
        let b = 5;
        let horizon = 40u64;
        let mut seen = std::collections::HashSet::new();
        for t in 1..=b as u64 * horizon {
            let g = group_of_slot(t, b).unwrap();
            assert!((1..=b).contains(&g.group));
            assert!(g.epoch < horizon);
            assert_eq!(g.epoch * b as u64 + g.group as u64, t);
            assert!(seen.insert((g.epoch, g.group)));
        }
        assert_eq!(seen.len(), b * horizon as usize);
    }

    fn job(id: JobId, arrival: u64, size: u64) -> OnDemandJob {
        OnDemandJob::new(id, 1, arrival, size)
    }

    #[test]
    fn advance_releases_finished_leases() {
        let mut g = GroupPool::new(1, 3);
        let t = 1;
        g.advance(t);
        g.assign_on_demand(&job(0, t, 12), 0, t);
        g.assign_on_demand(&job(1, t, 24), 1, t);
        assert_eq!(g.on_demand_count(), 2);
        // At t=13 job 0 (release 12 = t-1) is done, job 1 (release 24 = t+11) is not.
        g.advance(13);
        assert_eq!(g.status(0), ServerStatus::Idle);
        assert_eq!(g.status(1), ServerStatus::OnDemand { job: 1, release: 24 });
        assert_eq!(g.on_demand_count(), 1);
    }

    #[test]
    fn spot_lease_lasts_one_super_slot() {
        let mut g = GroupPool::new(2, 2);
        g.advance(2);
        g.place_spot(0, UserId(7)).unwrap();
        assert_eq!(g.status(0), ServerStatus::Spot { user: UserId(7) });
        assert!(g.place_spot(0, UserId(8)).is_err());
        g.advance(8);
        assert_eq!(g.status(0), ServerStatus::Idle);
        assert_eq!(g.spot_count(), 0);
    }

    #[test]
    fn queued_lease_takes_over_on_release() {
        let mut g = GroupPool::new(1, 1);
        g.advance(1);
        assert_eq!(g.assign_on_demand(&job(0, 1, 12), 0, 1), 1);
        assert_eq!(g.queued_slots(0, 1), 12);
        let start = g.assign_on_demand(&job(1, 1, 12), 0, 1);
        assert_eq!(start, 13);
        assert_eq!(g.queued_slots(0, 1), 24);
        g.advance(7);
        assert_eq!(g.status(0), ServerStatus::OnDemand { job: 0, release: 12 });
        g.advance(13);
        assert_eq!(g.status(0), ServerStatus::OnDemand { job: 1, release: 24 });
        g.advance(25);
        assert_eq!(g.status(0), ServerStatus::Idle);
    }

    #[test]
    fn occupancy_adds_up() {
        let mut g = GroupPool::new(1, 10);
        g.advance(1);
        for s in 0..3 {
            g.assign_on_demand(&job(s as u64, 1, 12), s, 1);
        }
        g.place_spot(5, UserId(1)).unwrap();
        g.place_spot(6, UserId(2)).unwrap();
        let occ = g.occupancy();
        assert_eq!(occ, Occupancy { idle: 5, on_demand: 3, spot: 2 });
        assert_eq!(occ.total(), 10);
        assert_eq!(g.on_demand_free_count(), 7);
    }

    #[test]
    fn config_validation() {
        let ok = SimConfig::reference(vec![10; 6], None);
        assert!(ok.validate().is_ok());
        assert_eq!(ok.billing_super_slots(), 2);
        assert!((ok.beta() - 0.6).abs() < 1e-15);

        let mut c = ok.clone();
        c.load_minutes = 30;
        assert!(matches!(c.validate(), Err(ConfigError::LoadTooLong { .. })));
        let mut c = ok.clone();
        c.billing_slots = 10;
        assert!(matches!(c.validate(), Err(ConfigError::BillingNotDivisible { .. })));
        let mut c = ok.clone();
        c.group_sizes.pop();
        assert!(matches!(c.validate(), Err(ConfigError::GroupCount { .. })));
        let mut c = ok.clone();
        c.pricer = PricerKind::Drp { floor: 0.9, ceiling: 0.5 };
        assert!(matches!(c.validate(), Err(ConfigError::BadDrpBounds { .. })));
    }
}
