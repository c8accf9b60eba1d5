//! Bid filtering and acceptance, billing, spot revenue and the
//! revenue-maximizing uniform clearing price (SpotiPrice).

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{SimConfig, UserId};

#[derive(Debug, Error, PartialEq)]
pub enum PricingError {
    #[error("load count {loads} exceeds accepted count {accepted}")]
    LoadsExceedAccepted { loads: usize, accepted: usize },
}

/// Placement class of a bid at the candidate price. The declaration order is
/// the tie-break order at the marginal price.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BidClass {
    /// Continuing user whose server is still free of on-demand work.
    Stay,
    /// Continuing user whose server was taken by on-demand work; must migrate.
    Displaced,
    /// Newly arrived user; must load its VM image.
    Fresh,
}

impl BidClass {
    pub fn loads_image(self) -> bool {
        self != BidClass::Stay
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricedBid {
    pub user: UserId,
    pub price: f64,
    pub class: BidClass,
}

impl PricedBid {
    pub fn new(user: u64, price: f64, class: BidClass) -> Self {
        PricedBid {
            user: UserId(user),
            price,
            class,
        }
    }
}

/// Acceptance priority: price descending, then class, then user id ascending.
pub fn priority(a: &PricedBid, b: &PricedBid) -> Ordering {
    b.price
        .total_cmp(&a.price)
        .then(a.class.cmp(&b.class))
        .then(a.user.cmp(&b.user))
}

/// Normalization of billing and revenue: charges are per `k_eff` and a VMI
/// load forfeits a fraction `beta_eff` of the interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RevenueScale {
    pub k_eff: f64,
    pub beta_eff: f64,
}

impl RevenueScale {
    /// Single-group framework: per-slot billing over `L`, load fraction `β`.
    pub fn basic(billing_slots: usize, beta: f64) -> Self {
        RevenueScale {
            k_eff: billing_slots as f64,
            beta_eff: beta,
        }
    }

    /// Grouped framework: billing over `K = L/b` super-slots, load fraction `β/b`.
    pub fn extended(billing_slots: usize, beta: f64, groups: usize) -> Self {
        RevenueScale {
            k_eff: (billing_slots / groups) as f64,
            beta_eff: beta / groups as f64,
        }
    }

    pub fn from_config(cfg: &SimConfig) -> Self {
        Self::extended(cfg.billing_slots, cfg.beta(), cfg.groups)
    }
}

/// Price ladder `v_0 > v_1 >= ... >= v_A` with sentinel `v_0 = v_1 + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceLadder {
    prices: Vec<f64>,
}

impl PriceLadder {
    pub fn new(bids: &[PricedBid]) -> Self {
        let mut sorted: Vec<f64> = bids.iter().map(|b| b.price).collect();
        sorted.sort_unstable_by(|a, b| b.total_cmp(a));
        let mut prices = Vec::with_capacity(sorted.len() + 1);
        if let Some(&top) = sorted.first() {
            prices.push(top + 1.0);
        }
        prices.extend(sorted);
        PriceLadder { prices }
    }

    pub fn sentinel(&self) -> Option<f64> {
        self.prices.first().copied()
    }

    /// The candidate set `V_t`, sentinel first.
    pub fn candidates(&self) -> &[f64] {
        &self.prices
    }

    pub fn contains(&self, price: f64) -> bool {
        self.prices.contains(&price)
    }
}

/// Bids whose price is at least `alpha`.
pub fn filter_bids(alpha: f64, bids: &[PricedBid]) -> Vec<PricedBid> {
    bids.iter().filter(|b| b.price >= alpha).copied().collect()
}

/// Indices of the accepted bids at `price` under `capacity`: the highest-priced
/// qualifying bids, in priority order.
pub fn accept_bids(price: f64, bids: &[PricedBid], capacity: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..bids.len()).filter(|&j| bids[j].price >= price).collect();
    idx.sort_unstable_by(|&a, &b| priority(&bids[a], &bids[b]));
    idx.truncate(capacity);
    idx
}

/// `f_t` of an accepted set: fresh and displaced bids each need a VMI load.
pub fn migration_profile(bids: &[PricedBid], accepted: &[usize]) -> usize {
    accepted.iter().filter(|&&j| bids[j].class.loads_image()).count()
}

/// `(N - β_eff f) π / K_eff`.
pub fn revenue(accepted: usize, loads: usize, price: f64, scale: RevenueScale) -> Result<f64, PricingError> {
    if loads > accepted {
        return Err(PricingError::LoadsExceedAccepted { loads, accepted });
    }
    Ok(revenue_unchecked(accepted, loads, price, scale))
}

#[inline]
fn revenue_unchecked(accepted: usize, loads: usize, price: f64, scale: RevenueScale) -> f64 {
    (accepted as f64 - scale.beta_eff * loads as f64) * price / scale.k_eff
}

/// Charge to one accepted user.
pub fn bill_user(class: BidClass, price: f64, scale: RevenueScale) -> f64 {
    if class.loads_image() {
        (1.0 - scale.beta_eff) * price / scale.k_eff
    } else {
        price / scale.k_eff
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearingResult {
    pub price: f64,
    /// Accepted bid indices in priority order.
    pub accepted: Vec<usize>,
    /// `f_t`.
    pub loads: usize,
    pub revenue: f64,
}

impl ClearingResult {
    pub fn accepted_count(&self) -> usize {
        self.accepted.len()
    }

    fn empty(price: f64) -> Self {
        ClearingResult {
            price,
            accepted: Vec::new(),
            loads: 0,
            revenue: 0.0,
        }
    }
}

/// Accepts and bills at a fixed price.
pub fn clear_at(price: f64, bids: &[PricedBid], capacity: usize, scale: RevenueScale) -> ClearingResult {
    let accepted = accept_bids(price, bids, capacity);
    let loads = migration_profile(bids, &accepted);
    let revenue = revenue_unchecked(accepted.len(), loads, price, scale);
    ClearingResult {
        price,
        accepted,
        loads,
        revenue,
    }
}

/// Revenue-maximizing uniform price over `V_t`. `N` and `f` are recomputed for
/// every candidate. On equal revenue the higher price wins. With no bids the
/// price is `fallback` (the previous price or the support upper bound).
pub fn spoti_price(capacity: usize, bids: &[PricedBid], scale: RevenueScale, fallback: f64) -> ClearingResult {
    if bids.is_empty() {
        return ClearingResult::empty(fallback);
    }
    let mut order: Vec<usize> = (0..bids.len()).collect();
    order.sort_unstable_by(|&a, &b| priority(&bids[a], &bids[b]));

    // loads_prefix[n]: VMI loads among the first n bids in priority order.
    let mut loads_prefix = Vec::with_capacity(order.len() + 1);
    loads_prefix.push(0usize);
    for &j in &order {
        let last = *loads_prefix.last().expect("non-empty");
        loads_prefix.push(last + bids[j].class.loads_image() as usize);
    }

    let sentinel = bids[order[0]].price + 1.0;
    let (mut best_price, mut best_n, mut best_g) = (sentinel, 0usize, 0.0f64);
    let mut pos = 0;
    while pos < order.len() {
        let v = bids[order[pos]].price;
        let mut end = pos;
        while end < order.len() && bids[order[end]].price == v {
            end += 1;
        }
        let n = end.min(capacity);
        let g = revenue_unchecked(n, loads_prefix[n], v, scale);
        if g > best_g {
            best_price = v;
            best_n = n;
            best_g = g;
        }
        if end >= capacity {
            // Lower prices keep the same accepted set and earn less.
            break;
        }
        pos = end;
    }
    order.truncate(best_n);
    ClearingResult {
        price: best_price,
        loads: loads_prefix[best_n],
        accepted: order,
        revenue: best_g,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayoffRecord {
    pub user: UserId,
    pub wtp: f64,
    pub price: f64,
    /// `ς_j` in slots.
    pub effective_slots: f64,
    pub payoff: f64,
}

/// Effective slots of an accepted bid in the grouped framework.
pub fn effective_slots(class: BidClass, groups: usize, beta: f64) -> f64 {
    if class.loads_image() {
        groups as f64 - beta
    } else {
        groups as f64
    }
}

/// `o_j = (c_j - π) ς_j / L` when accepted, else 0.
pub fn payoff(
    user: UserId,
    wtp: f64,
    price: f64,
    accepted: bool,
    effective_slots: f64,
    billing_slots: usize,
) -> PayoffRecord {
    let (slots, value) = if accepted {
        (effective_slots, (wtp - price) * effective_slots / billing_slots as f64)
    } else {
        (0.0, 0.0)
    };
    PayoffRecord {
        user,
        wtp,
        price,
        effective_slots: slots,
        payoff: value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: RevenueScale = RevenueScale {
        k_eff: 12.0,
        beta_eff: 0.6,
    };

    fn fresh(prices: &[f64]) -> Vec<PricedBid> {
        prices
            .iter()
            .enumerate()
            .map(|(i, &p)| PricedBid::new(i as u64, p, BidClass::Fresh))
            .collect()
    }

    #[test]
    fn filter_examples() {
        let bids = fresh(&[0.9, 0.7, 0.3]);
        let prices = |v: Vec<PricedBid>| v.iter().map(|b| b.price).collect::<Vec<_>>();
        assert_eq!(prices(filter_bids(0.5, &bids)), vec![0.9, 0.7]);
        assert_eq!(filter_bids(0.0, &bids).len(), 3);
        assert!(filter_bids(0.95, &bids).is_empty());
    }

    #[test]
    fn accept_examples() {
        let bids = fresh(&[0.9, 0.7, 0.3]);
        assert_eq!(accept_bids(0.5, &bids, 5), vec![0, 1]);
        assert_eq!(accept_bids(0.5, &bids, 1), vec![0]);
        let ladder = PriceLadder::new(&bids);
        assert!(accept_bids(ladder.sentinel().unwrap(), &bids, 5).is_empty());
    }

    #[test]
    fn marginal_ties_prefer_stay_then_displaced_then_user_id() {
        let bids = vec![
            PricedBid::new(5, 0.5, BidClass::Fresh),
            PricedBid::new(9, 0.5, BidClass::Displaced),
            PricedBid::new(2, 0.5, BidClass::Fresh),
            PricedBid::new(7, 0.5, BidClass::Stay),
        ];
        assert_eq!(accept_bids(0.5, &bids, 3), vec![3, 1, 2]);
    }

    #[test]
    fn migration_profile_counts_loads() {
        let mut bids = fresh(&[0.9, 0.8]);
        bids.push(PricedBid::new(2, 0.7, BidClass::Displaced));
        for u in 3..6 {
            bids.push(PricedBid::new(u, 0.6, BidClass::Stay));
        }
        assert_eq!(migration_profile(&bids, &[0, 1, 2, 3, 4, 5]), 3);
        assert_eq!(migration_profile(&bids, &[0, 1]), 2);
        assert_eq!(migration_profile(&bids, &[3, 4, 5]), 0);
    }

    #[test]
    fn revenue_examples() {
        assert!((revenue(2, 2, 0.6, BASIC).unwrap() - 0.04).abs() < 1e-15);
        assert_eq!(revenue(0, 0, 0.6, BASIC).unwrap(), 0.0);
        let ext = RevenueScale::extended(12, 0.6, 6);
        assert!((revenue(1, 1, 0.6, ext).unwrap() - 0.27).abs() < 1e-15);
        assert_eq!(
            revenue(1, 2, 0.6, BASIC),
            Err(PricingError::LoadsExceedAccepted { loads: 2, accepted: 1 })
        );
    }

    #[test]
    fn billing_examples() {
        assert!((bill_user(BidClass::Displaced, 0.6, BASIC) - 0.02).abs() < 1e-15);
        assert!((bill_user(BidClass::Stay, 0.6, BASIC) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn spoti_price_three_fresh_bids() {
        let bids = fresh(&[0.9, 0.6, 0.4]);
        // Candidates: v0 -> 0, 0.9 -> 0.03, 0.6 -> 0.04, 0.4 -> 0.0267 (N capped at 2).
        let g = |n, f, p| revenue(n, f, p, BASIC).unwrap();
        assert!((g(1, 1, 0.9) - 0.03).abs() < 1e-12);
        assert!((g(2, 2, 0.4) - 0.8 * 0.4 / 12.0).abs() < 1e-12);
        let r = spoti_price(2, &bids, BASIC, 1.0);
        assert_eq!(r.price, 0.6);
        assert_eq!(r.accepted_count(), 2);
        assert!((r.revenue - 0.04).abs() < 1e-15);
    }

    #[test]
    fn spoti_price_stay_bid_lowers_price() {
        let bids = vec![
            PricedBid::new(0, 0.5, BidClass::Stay),
            PricedBid::new(1, 0.8, BidClass::Fresh),
        ];
        let r = spoti_price(2, &bids, BASIC, 1.0);
        assert_eq!(r.price, 0.5);
        assert_eq!(r.accepted_count(), 2);
        assert_eq!(r.loads, 1);
        assert!((r.revenue - 1.4 * 0.5 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn spoti_price_without_capacity_returns_sentinel() {
        let bids = fresh(&[0.9, 0.6]);
        let r = spoti_price(0, &bids, BASIC, 1.0);
        assert_eq!(r.price, 1.9);
        assert_eq!(r.accepted_count(), 0);
        assert_eq!(r.revenue, 0.0);
    }

    #[test]
    fn spoti_price_without_bids_uses_fallback() {
        let r = spoti_price(3, &[], BASIC, 0.77);
        assert_eq!(r.price, 0.77);
        assert_eq!(r.accepted_count(), 0);
    }

    #[test]
    fn equal_revenue_prefers_higher_price() {
        let scale = RevenueScale {
            k_eff: 12.0,
            beta_eff: 0.0,
        };
        // One bid at 1.0 and two at 0.5 both earn exactly 1/12.
        let bids = vec![PricedBid::new(0, 1.0, BidClass::Stay), PricedBid::new(1, 0.5, BidClass::Stay)];
        let r = spoti_price(2, &bids, scale, 1.0);
        assert_eq!(r.revenue, 1.0 / 12.0);
        assert_eq!(r.price, 1.0);
        assert_eq!(r.accepted, vec![0]);
    }

    #[test]
    fn payoff_examples() {
        let p = payoff(UserId(1), 0.7, 0.5, true, 0.4, 12);
        assert!((p.payoff - 0.2 * 0.4 / 12.0).abs() < 1e-15);
        assert!((p.payoff - 0.006667).abs() < 1e-6);
        assert_eq!(payoff(UserId(1), 0.7, 0.5, false, 0.4, 12).payoff, 0.0);
        assert_eq!(payoff(UserId(1), 0.5, 0.5, true, 6.0, 12).payoff, 0.0);
    }

    /// With the price re-cleared after a misreport the mechanism can be gamed:
    /// a user shading its bid drags the uniform price down.
    #[test]
    fn re_clearing_admits_profitable_shading() {
        let scale = RevenueScale {
            k_eff: 12.0,
            beta_eff: 0.0,
        };
        let truthful = vec![PricedBid::new(0, 1.0, BidClass::Stay), PricedBid::new(1, 0.9, BidClass::Stay)];
        let r = spoti_price(2, &truthful, scale, 1.0);
        assert_eq!(r.price, 0.9);
        let honest = payoff(UserId(0), 1.0, r.price, r.accepted.contains(&0), 6.0, 12).payoff;

        let mut shaded = truthful.clone();
        shaded[0].price = 0.6;
        let r2 = spoti_price(2, &shaded, scale, 1.0);
        assert_eq!(r2.price, 0.6);
        let lie = payoff(UserId(0), 1.0, r2.price, r2.accepted.contains(&0), 6.0, 12).payoff;
        assert!(lie > honest);

        // Holding the price at its truthful value removes the gain.
        let held = clear_at(r.price, &shaded, 2, scale);
        let lie_held = payoff(UserId(0), 1.0, held.price, held.accepted.contains(&0), 6.0, 12).payoff;
        assert!(lie_held <= honest);
    }
}
