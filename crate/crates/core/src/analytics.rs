//! Closed-form clearing under uniformly distributed bids, and the
//! discrete-time single-server waiting-time relations used to sanity-check
//! capacity results.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("bid count must be positive")]
    NoBids,
    #[error("price support must satisfy 0 < low < high, got [{low}, {high}]")]
    BadSupport { low: f64, high: f64 },
    #[error("on-demand occupancy must be positive")]
    NoOnDemand,
    #[error("server load {0} must lie in [0, 1)")]
    Overloaded(f64),
    #[error("invalid queue parameters: {0}")]
    BadQueue(&'static str),
}

/// Snapshot of one group's spot market under uniform bids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketShape {
    /// `A_t`.
    pub bids: f64,
    /// `M_t^(i)`.
    pub capacity: f64,
    /// `M̄_t` across all groups.
    pub on_demand: f64,
    pub price_high: f64,
    pub price_low: f64,
    /// Billing super-slots `K`.
    pub k: f64,
    pub groups: f64,
}

impl MarketShape {
    fn check_support(&self) -> Result<(), AnalyticsError> {
        if 0.0 < self.price_low && self.price_low < self.price_high {
            Ok(())
        } else {
            Err(AnalyticsError::BadSupport {
                low: self.price_low,
                high: self.price_high,
            })
        }
    }

    pub fn ratios(&self) -> ShapeRatios {
        ShapeRatios {
            saturation: self.bids / self.capacity,
            value_density: self.price_low / self.price_high,
            vacancy_ratio: self.capacity / (self.on_demand / self.groups),
        }
    }
}

/// Dimensionless market ratios `D`, `ρ`, `I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeRatios {
    /// `D = A_t / M`.
    pub saturation: f64,
    /// `ρ = π̲ / π̄`.
    pub value_density: f64,
    /// `I = M / (M̄_t / b)`.
    pub vacancy_ratio: f64,
}

/// `(π', π'')`: the capacity-binding price and the feasibility floor.
pub fn pi_prime(shape: &MarketShape) -> Result<(f64, f64), AnalyticsError> {
    if shape.bids <= 0.0 {
        return Err(AnalyticsError::NoBids);
    }
    shape.check_support()?;
    let pi = shape.price_high - shape.capacity / shape.bids * (shape.price_high - shape.price_low);
    Ok((pi, pi.max(shape.price_low)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClearingCase {
    /// Unconstrained optimum `π̄/2`.
    Interior,
    /// Capacity never binds and the floor is optimal: accept every bid.
    AcceptAll,
    /// Capacity binds: price at `π'`.
    CapacityBound,
}

/// Which closed-form case applies to `(ρ, D)`. The three cases partition
/// `(0,1) x [0,∞)`; boundary points resolve to [`ClearingCase::Interior`].
pub fn clearing_case(value_density: f64, saturation: f64) -> ClearingCase {
    let rho = value_density;
    let d = saturation;
    if rho <= 0.5_f64.min(1.0 - d / 2.0) {
        ClearingCase::Interior
    } else if d <= 1.0 {
        ClearingCase::AcceptAll
    } else {
        ClearingCase::CapacityBound
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedForm {
    pub price: f64,
    pub revenue: f64,
    pub case: ClearingCase,
}

/// Optimal price and revenue of the fluid model
/// `G(π) = A (π̄ π - π²) / (K (π̄ - π̲))` subject to `π >= π''`.
pub fn closed_form_clearing(shape: &MarketShape) -> Result<ClosedForm, AnalyticsError> {
    let (pi, _) = pi_prime(shape)?;
    let r = shape.ratios();
    let (a, m, k, hi, lo) = (shape.bids, shape.capacity, shape.k, shape.price_high, shape.price_low);
    let rho = r.value_density;
    let case = clearing_case(rho, r.saturation);
    let (price, revenue) = match case {
        ClearingCase::Interior => (hi / 2.0, hi * a / (4.0 * k * (1.0 - rho))),
        ClearingCase::AcceptAll => (lo, a * lo / k),
        ClearingCase::CapacityBound => (pi, hi / k * (1.0 - (1.0 - rho) / r.saturation) * m),
    };
    Ok(ClosedForm { price, revenue, case })
}

/// The fluid revenue objective at `price`.
pub fn fluid_revenue(shape: &MarketShape, price: f64) -> f64 {
    let (hi, lo) = (shape.price_high, shape.price_low);
    shape.bids / (shape.k * (hi - lo)) * (hi * price - price * price)
}

/// `α_t` from the market ratios.
pub fn alpha_from_ratios(r: &ShapeRatios) -> f64 {
    let (rho, d, i) = (r.value_density, r.saturation, r.vacancy_ratio);
    match clearing_case(rho, d) {
        ClearingCase::Interior => 0.25 / (1.0 - rho) * d * i,
        ClearingCase::AcceptAll => rho * d * i,
        ClearingCase::CapacityBound => (1.0 - (1.0 - rho) / d) * i,
    }
}

/// `α_t` of a market shape, with the on-demand price equal to `π̄`.
pub fn revenue_improvement(shape: &MarketShape) -> Result<f64, AnalyticsError> {
    if shape.on_demand <= 0.0 {
        return Err(AnalyticsError::NoOnDemand);
    }
    if shape.bids <= 0.0 {
        return Ok(0.0);
    }
    shape.check_support()?;
    Ok(alpha_from_ratios(&shape.ratios()))
}

/// Revenue at `price` for an arbitrary bid-price CDF `H`: `min(A(1 - H(π)), M) π / K`.
pub fn revenue_with_cdf<F: Fn(f64) -> f64>(shape: &MarketShape, price: f64, cdf: F) -> f64 {
    let demand = shape.bids * (1.0 - cdf(price));
    demand.min(shape.capacity) * price / shape.k
}

/// Single server with one Bernoulli(`arrival_prob`) arrival per slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueParams {
    pub arrival_prob: f64,
    pub mean_size: f64,
    pub size_variance: f64,
}

impl QueueParams {
    pub fn server_load(&self) -> f64 {
        self.arrival_prob * self.mean_size
    }
}

/// Mean waiting time `w = (λ(σ² + s²) - ρ) / (2(1 - ρ))`.
pub fn mean_wait(q: &QueueParams) -> Result<f64, AnalyticsError> {
    if !(0.0..=1.0).contains(&q.arrival_prob) {
        return Err(AnalyticsError::BadQueue("arrival probability outside [0, 1]"));
    }
    if q.mean_size < 1.0 || q.size_variance < 0.0 {
        return Err(AnalyticsError::BadQueue("mean size below one slot or negative variance"));
    }
    let rho = q.server_load();
    if rho >= 1.0 {
        return Err(AnalyticsError::Overloaded(rho));
    }
    let s = q.mean_size;
    Ok((q.arrival_prob * (q.size_variance + s * s) - rho) / (2.0 * (1.0 - rho)))
}

/// Server load implied by a mean wait: `1/ρ = 1 + (σ²/s + s - 1) / (2w)`.
pub fn load_from_wait(wait: f64, mean_size: f64, size_variance: f64) -> Result<f64, AnalyticsError> {
    if wait <= 0.0 || mean_size < 1.0 || size_variance < 0.0 {
        return Err(AnalyticsError::BadQueue("wait must be positive and mean size at least one slot"));
    }
    let inv = 1.0 + (size_variance / mean_size + mean_size - 1.0) / (2.0 * wait);
    Ok(1.0 / inv)
}

/// Simulates the single-server queue and returns the mean wait of arrivals.
///
/// Each slot an arrival occurs with probability `arrival_prob`, its size drawn
/// uniformly from `sizes`. It waits for the work already queued ahead of it;
/// the server then completes one unit of work.
pub fn simulate_mean_wait<R: Rng + ?Sized>(arrival_prob: f64, sizes: &[u64], slots: u64, rng: &mut R) -> f64 {
    let mut backlog: u64 = 0;
    let (mut total_wait, mut arrivals) = (0u128, 0u64);
    for _ in 0..slots {
        if rng.random_bool(arrival_prob) {
            total_wait += backlog as u128;
            arrivals += 1;
            backlog += sizes[rng.random_range(0..sizes.len())];
        }
        backlog = backlog.saturating_sub(1);
    }
    if arrivals == 0 {
        0.0
    } else {
        total_wait as f64 / arrivals as f64
    }
}
