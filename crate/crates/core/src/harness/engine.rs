//! The per-slot market pipeline: advance, dispatch, price, assign, bill, record.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::drp::{drp_next_price, DrpError, DrpState};
use crate::dispatch::{assign_spot, bid_classes, dispatch_on_demand, DispatchError, Dispatcher};
use crate::market::{group_of_slot, ConfigError, MarketError, PricerKind, ServerPool, SimConfig, SlotRecord, SpotBid};
use crate::metrics::{MetricsAccumulator, RunSummary};
use crate::pricing::{bill_user, clear_at, spoti_price, PricedBid, RevenueScale};
use crate::workload::{continue_bids, gen_new_bids, gen_on_demand_jobs, stream_rng, StreamKind};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Drp(#[from] DrpError),
    #[error("record sink failed: {0}")]
    Sink(#[source] anyhow::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineOptions {
    /// Slots excluded from the summary; defaults to `2 L b`.
    pub warmup: Option<u64>,
    /// Scan every group after each slot to verify server accounting.
    pub check_invariants: bool,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            warmup: None,
            check_invariants: true,
        }
    }
}

/// Violation counts of the conservation checks. All zero on a correct run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub slots_checked: u64,
    /// Idle + on-demand + spot differs from the group size, or the spot count
    /// differs from the accepted count.
    pub accounting: u64,
    /// Sum of user charges differs from the slot revenue.
    pub billing: u64,
    /// A spot lease ended after a number of slots other than `b`.
    pub lease_length: u64,
    /// Placement load count differs from the clearing load count.
    pub loads: u64,
    /// DRP price outside `[F, C]` or equal to the previous one.
    pub drp: u64,
}

impl InvariantReport {
    pub fn total(&self) -> u64 {
        self.accounting + self.billing + self.lease_length + self.loads + self.drp
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub invariants: InvariantReport,
    pub group_sizes: Vec<usize>,
}

struct GroupStreams {
    on_demand: ChaCha8Rng,
    bids: ChaCha8Rng,
    dispatch: ChaCha8Rng,
    placement: ChaCha8Rng,
    drp: ChaCha8Rng,
    continuation: ChaCha8Rng,
}

impl GroupStreams {
    fn new(seed: u64, group: usize) -> Self {
        GroupStreams {
            on_demand: stream_rng(seed, group, StreamKind::OnDemandArrivals),
            bids: stream_rng(seed, group, StreamKind::BidArrivals),
            dispatch: stream_rng(seed, group, StreamKind::Dispatch),
            placement: stream_rng(seed, group, StreamKind::SpotPlacement),
            drp: stream_rng(seed, group, StreamKind::Drp),
            continuation: stream_rng(seed, group, StreamKind::Auxiliary),
        }
    }
}

struct GroupState {
    streams: GroupStreams,
    dispatcher: Dispatcher,
    pending: Vec<SpotBid>,
    last_price: Option<f64>,
    drp: Option<DrpState>,
    /// Slot of the spot leases currently held, if any.
    spot_since: Option<u64>,
}

/// Runs `cfg` for its horizon, feeding every slot record to `sink`.
pub fn simulate<S>(cfg: &SimConfig, opts: EngineOptions, mut sink: S) -> Result<RunOutput, EngineError>
where
    S: FnMut(&SlotRecord) -> anyhow::Result<()>,
{
    simulate_observed(cfg, opts, |r, _| sink(r))
}

/// Like [`simulate`], but the observer also sees the server pool after each slot.
pub fn simulate_observed<S>(cfg: &SimConfig, opts: EngineOptions, mut sink: S) -> Result<RunOutput, EngineError>
where
    S: FnMut(&SlotRecord, &ServerPool) -> anyhow::Result<()>,
{
    cfg.validate()?;
    let b = cfg.groups;
    let warmup = opts.warmup.unwrap_or(2 * cfg.billing_slots as u64 * b as u64);
    let scale = RevenueScale::from_config(cfg);
    let od_rate = cfg.on_demand_price / cfg.billing_slots as f64;
    let mut pool = ServerPool::new(&cfg.group_sizes);
    let mut groups: Vec<GroupState> = (1..=b)
        .map(|g| -> Result<GroupState, EngineError> {
            let drp = match cfg.pricer {
                PricerKind::Drp { floor, ceiling } => Some(DrpState::new(floor, ceiling)?),
                PricerKind::SpotiPrice => None,
            };
            Ok(GroupState {
                streams: GroupStreams::new(cfg.seed, g),
                dispatcher: Dispatcher::new(cfg.dispatch_policy),
                pending: Vec::new(),
                last_price: None,
                drp,
                spot_since: None,
            })
        })
        .collect::<Result<_, _>>()?;
    let mut acc = MetricsAccumulator::new(b, warmup);
    let mut report = InvariantReport::default();
    let mut next_job = 0u64;
    let mut next_user = 0u64;
    let support_high = cfg.spot.as_ref().map(|s| s.price.support().1);

    for t in 1..=cfg.horizon {
        let g = group_of_slot(t, b)?.group;
        let state = &mut groups[g - 1];
        let m_g = cfg.group_sizes[g - 1];

        pool.group_mut(g).advance(t);
        if let Some(since) = state.spot_since.take() {
            if t - since != b as u64 {
                report.lease_length += 1;
            }
        }

        let mut jobs = gen_on_demand_jobs(
            t,
            g,
            &mut state.streams.on_demand,
            &cfg.on_demand,
            cfg.billing_slots,
            &mut next_job,
        );
        let outcome = dispatch_on_demand(&mut jobs, pool.group_mut(g), t, &mut state.dispatcher, &mut state.streams.dispatch);
        acc.push_dispatch(t, jobs.len(), outcome.misses);

        let mut record = SlotRecord {
            t,
            group: g,
            idle_offered: outcome.idle,
            on_demand_total: 0,
            bids: 0,
            price: 0.0,
            accepted: 0,
            loads: 0,
            spot_revenue: 0.0,
            on_demand_revenue: 0.0,
            alpha: None,
            utilization: 0.0,
            group_size: m_g,
            group_on_demand: pool.group(g).on_demand_count(),
            fresh_accepted: 0,
        };

        if let Some(spot) = &cfg.spot {
            let mut bids = std::mem::take(&mut state.pending);
            bids.extend(gen_new_bids(t, g, &mut state.streams.bids, spot, m_g, &mut next_user));
            let classes = bid_classes(&bids, pool.group(g));
            let priced: Vec<PricedBid> = bids
                .iter()
                .zip(&classes)
                .map(|(bid, &class)| PricedBid {
                    user: bid.user,
                    price: bid.price,
                    class,
                })
                .collect();
            let clearing = match state.drp.as_mut() {
                None => {
                    let fallback = state.last_price.or(support_high).unwrap_or(0.0);
                    spoti_price(outcome.idle, &priced, scale, fallback)
                }
                Some(drp) => {
                    // P_0 at the group's first slot, one step per later slot.
                    if state.last_price.is_some() {
                        let prev = drp.price;
                        let p = drp_next_price(drp, &mut state.streams.drp)?;
                        if p < drp.floor || p > drp.ceiling || p == prev {
                            report.drp += 1;
                        }
                    }
                    clear_at(drp.price, &priced, outcome.idle, scale)
                }
            };
            state.last_price = Some(clearing.price);

            let placement = assign_spot(
                &clearing.accepted,
                &bids,
                &classes,
                pool.group_mut(g),
                &mut state.streams.placement,
            )?;
            if placement.loads() != clearing.loads {
                report.loads += 1;
            }
            let charged: f64 = placement
                .placed
                .iter()
                .map(|&(_, _, class)| bill_user(class, clearing.price, scale))
                .sum();
            if (charged - clearing.revenue).abs() > 1e-9 * clearing.revenue.abs().max(1.0) {
                report.billing += 1;
            }
            if !placement.placed.is_empty() {
                state.spot_since = Some(t);
            }
            let held: Vec<(SpotBid, usize)> = placement
                .placed
                .iter()
                .map(|&(j, server, _)| (bids[j].clone(), server))
                .collect();
            state.pending = continue_bids(&held, b, spot, &mut state.streams.continuation);

            record.bids = bids.len();
            record.price = clearing.price;
            record.accepted = clearing.accepted_count();
            record.loads = clearing.loads;
            record.spot_revenue = clearing.revenue;
            record.fresh_accepted = placement.fresh;
        }

        let mbar = pool.on_demand_total();
        record.on_demand_total = mbar;
        record.on_demand_revenue = od_rate * mbar as f64;
        record.alpha = crate::metrics::slot_alpha(&record);
        record.utilization = (record.group_on_demand + record.accepted) as f64 / m_g as f64;

        if opts.check_invariants {
            report.slots_checked += 1;
            let occ = pool.group(g).occupancy();
            if occ.total() != m_g || occ.spot != record.accepted || occ.on_demand != record.group_on_demand {
                report.accounting += 1;
            }
        }

        acc.push(&record);
        sink(&record, &pool).map_err(EngineError::Sink)?;
    }

    Ok(RunOutput {
        summary: acc.finish(),
        invariants: report,
        group_sizes: cfg.group_sizes.clone(),
    })
}
