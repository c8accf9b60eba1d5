//! Dynamic reserve price: a mean-reverting noisy price walk on `[F, C]`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pricing::{clear_at, ClearingResult, PricedBid, RevenueScale};

/// Upper bound on noise draws for one step.
pub const MAX_DRAWS: usize = 100_000;

#[derive(Debug, Error, PartialEq)]
pub enum DrpError {
    #[error("DRP bounds must satisfy floor < ceiling, got [{floor}, {ceiling}]")]
    BadBounds { floor: f64, ceiling: f64 },
    #[error("no admissible DRP step after {0} draws")]
    NoAdmissibleStep(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrpState {
    pub floor: f64,
    pub ceiling: f64,
    pub price: f64,
    pub step: f64,
    /// Noise standard deviation `σ' = 0.39 (C - F)`.
    pub sigma: f64,
}

impl DrpState {
    /// `P_0 = F`, `Δ_0 = 0.1 (F - C)`.
    pub fn new(floor: f64, ceiling: f64) -> Result<Self, DrpError> {
        if !(floor.is_finite() && ceiling.is_finite() && floor < ceiling) {
            return Err(DrpError::BadBounds { floor, ceiling });
        }
        Ok(DrpState {
            floor,
            ceiling,
            price: floor,
            step: 0.1 * (floor - ceiling),
            sigma: 0.39 * (ceiling - floor),
        })
    }

    /// Advances one step with externally supplied noise draws. Candidates
    /// `Δ = -0.7 Δ_prev + ε` are redrawn until `P + Δ` lies in `[F, C]` and
    /// differs from `P`.
    pub fn advance_with<F: FnMut() -> f64>(&mut self, mut noise: F) -> Result<f64, DrpError> {
        for _ in 0..MAX_DRAWS {
            let step = -0.7 * self.step + noise();
            let next = self.price + step;
            if next >= self.floor && next <= self.ceiling && next != self.price {
                self.step = step;
                self.price = next;
                return Ok(next);
            }
        }
        Err(DrpError::NoAdmissibleStep(MAX_DRAWS))
    }
}

/// One DRP step with Gaussian noise.
pub fn drp_next_price<R: Rng + ?Sized>(state: &mut DrpState, rng: &mut R) -> Result<f64, DrpError> {
    let normal = Normal::new(0.0, state.sigma).expect("positive sigma");
    state.advance_with(|| normal.sample(rng))
}

/// Accepts and bills at the DRP price with the same rules as SpotiPrice.
pub fn drp_clear(price: f64, bids: &[PricedBid], capacity: usize, scale: RevenueScale) -> ClearingResult {
    clear_at(price, bids, capacity, scale)
}
