#![allow(dead_code)]

use spotmarket::analytics::MarketShape;
use spotmarket::pricing::{BidClass, PricedBid, RevenueScale};

/// Revenue-maximizing price by exhaustive enumeration: every distinct bid
/// price plus the sentinel, acceptance rebuilt from scratch at each one.
/// Returns `(price, revenue, accepted users)`; ties go to the higher price.
pub fn brute_force_clearing(capacity: usize, bids: &[PricedBid], scale: RevenueScale) -> (f64, f64, Vec<u64>) {
    let top = bids.iter().map(|b| b.price).fold(f64::NEG_INFINITY, f64::max);
    let mut candidates: Vec<f64> = bids.iter().map(|b| b.price).collect();
    candidates.push(top + 1.0);
    let mut best = (top + 1.0, 0.0, Vec::new());
    for &v in &candidates {
        let (g, users) = revenue_at(v, capacity, bids, scale);
        if g > best.1 || (g == best.1 && v > best.0) {
            best = (v, g, users);
        }
    }
    best
}

/// Revenue at a fixed price with the acceptance set rebuilt from scratch.
pub fn revenue_at(price: f64, capacity: usize, bids: &[PricedBid], scale: RevenueScale) -> (f64, Vec<u64>) {
    let mut eligible: Vec<&PricedBid> = bids.iter().filter(|b| b.price >= price).collect();
    eligible.sort_by(|a, b| {
        b.price
            .partial_cmp(&a.price)
            .unwrap()
            .then(class_rank(a.class).cmp(&class_rank(b.class)))
            .then(a.user.0.cmp(&b.user.0))
    });
    eligible.truncate(capacity);
    let n = eligible.len() as f64;
    let f = eligible.iter().filter(|b| b.class != BidClass::Stay).count() as f64;
    let g = (n - scale.beta_eff * f) * price / scale.k_eff;
    (g, eligible.iter().map(|b| b.user.0).collect())
}

fn class_rank(c: BidClass) -> u8 {
    match c {
        BidClass::Stay => 0,
        BidClass::Displaced => 1,
        BidClass::Fresh => 2,
    }
}

/// Numeric maximum of the fluid revenue `A (π̄π − π²) / (K (π̄ − π̲))` over the
/// feasible prices: a dense grid followed by golden-section refinement.
pub fn numeric_fluid_optimum(shape: &MarketShape) -> (f64, f64) {
    let (hi, lo, a, m, k) = (shape.price_high, shape.price_low, shape.bids, shape.capacity, shape.k);
    // Demand at price π is A for π ≤ π̲ and A (π̄ − π)/(π̄ − π̲) above it; capacity caps it.
    let demand = |p: f64| {
        if p <= lo {
            a
        } else {
            a * (hi - p) / (hi - lo)
        }
    };
    let g = |p: f64| {
        if demand(p) > m * (1.0 + 1e-12) {
            f64::NEG_INFINITY
        } else {
            demand(p) * p / k
        }
    };
    let floor = (hi - m / a * (hi - lo)).max(lo);
    let steps = 20_000;
    let mut best = floor;
    for s in 0..=steps {
        let p = floor + (hi - floor) * s as f64 / steps as f64;
        if g(p) > g(best) {
            best = p;
        }
    }
    let width = (hi - floor) / steps as f64;
    let (mut x0, mut x1) = ((best - width).max(floor), (best + width).min(hi));
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = x1 - phi * (x1 - x0);
        let d = x0 + phi * (x1 - x0);
        if g(c) >= g(d) {
            x1 = d;
        } else {
            x0 = c;
        }
    }
    let p = 0.5 * (x0 + x1);
    let p = if g(floor) >= g(p) { floor } else { p };
    (p, g(p))
}
