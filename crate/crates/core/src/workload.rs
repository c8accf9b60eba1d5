//! Seeded generators for on-demand jobs and spot bids.
//!
//! Every generator is a pure function of an RNG and its parameters. The
//! simulator derives one independent ChaCha stream per (group, purpose) pair
//! from the master seed, see [`stream_rng`], so that group trajectories can be
//! replayed in isolation and the on-demand trace is identical whether or not a
//! spot market runs next to it.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{GroupId, OnDemandJob, ServerId, SpotBid, UserId};

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("invalid bounded pareto parameters: scale={scale}, shape={shape}, cap={cap}")]
    InvalidPareto { scale: f64, shape: f64, cap: f64 },
    #[error("invalid uniform price support [{low}, {high}]")]
    InvalidUniform { low: f64, high: f64 },
    #[error("arrival rate must be finite and non-negative, got {0}")]
    InvalidRate(f64),
    #[error("saturation must be finite and non-negative, got {0}")]
    InvalidSaturation(f64),
    #[error("stop probabilities must be non-empty and lie in [0, 1]")]
    InvalidStopProbabilities,
}

/// Purpose of a derived random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    OnDemandArrivals = 0,
    BidArrivals = 1,
    Dispatch = 2,
    SpotPlacement = 3,
    Drp = 4,
    PriorityQueue = 5,
    Auxiliary = 6,
}

/// Derives the stream for `(group, kind)` from the master seed.
///
/// Splitting rule: the ChaCha8 key is `seed_from_u64(seed)` and the stream
/// number is `group * 8 + kind`. Group 0 is reserved for streams that are not
/// attached to a server group (single-pool dispatch, priority-queue arrivals).
pub fn stream_rng(seed: u64, group: GroupId, kind: StreamKind) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(group as u64 * 8 + kind as u64);
    rng
}

/// Pareto distribution truncated to `[scale, cap]`, sampled by inverse CDF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundedPareto {
    pub scale: f64,
    pub shape: f64,
    pub cap: f64,
}

impl BoundedPareto {
    pub fn new(scale: f64, shape: f64, cap: f64) -> Result<Self, WorkloadError> {
        let dist = BoundedPareto { scale, shape, cap };
        dist.validate()?;
        Ok(dist)
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let ok = self.scale.is_finite()
            && self.scale > 0.0
            && self.shape.is_finite()
            && self.shape > 0.0
            && self.cap.is_finite()
            && self.cap >= self.scale;
        if ok {
            Ok(())
        } else {
            Err(WorkloadError::InvalidPareto {
                scale: self.scale,
                shape: self.shape,
                cap: self.cap,
            })
        }
    }

    /// Mass of the untruncated tail above `cap`, i.e. `(scale/cap)^shape`.
    fn tail(&self) -> f64 {
        (self.scale / self.cap).powf(self.shape)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.scale {
            0.0
        } else if x >= self.cap {
            1.0
        } else {
            (1.0 - (self.scale / x).powf(self.shape)) / (1.0 - self.tail())
        }
    }

    /// Maps `u ∈ [0, 1]` onto `[scale, cap]`.
    pub fn inverse_cdf(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let x = self.scale / (1.0 - u * (1.0 - self.tail())).powf(1.0 / self.shape);
        x.clamp(self.scale, self.cap)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.inverse_cdf(rng.random::<f64>())
    }
}

/// Convenience wrapper matching the operation table: one truncated Pareto draw.
pub fn sample_bounded_pareto<R: Rng + ?Sized>(rng: &mut R, scale: f64, shape: f64, cap: f64) -> f64 {
    BoundedPareto { scale, shape, cap }.sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnDemandWorkloadParams {
    /// Mean Poisson arrivals per slot.
    pub arrival_rate: f64,
    /// Pareto scale, in slots.
    pub size_scale: f64,
    pub size_shape: f64,
    /// Upper bound of the raw size, in slots.
    pub size_cap: f64,
}

impl OnDemandWorkloadParams {
    /// The reference workload: 60 arrivals per slot, sizes Pareto(6, 7/6) capped at 13 hours.
    pub fn reference() -> Self {
        OnDemandWorkloadParams {
            arrival_rate: 60.0,
            size_scale: 6.0,
            size_shape: 7.0 / 6.0,
            size_cap: 156.0,
        }
    }

    pub fn size_distribution(&self) -> BoundedPareto {
        BoundedPareto {
            scale: self.size_scale,
            shape: self.size_shape,
            cap: self.size_cap,
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        if !self.arrival_rate.is_finite() || self.arrival_rate < 0.0 {
            return Err(WorkloadError::InvalidRate(self.arrival_rate));
        }
        self.size_distribution().validate()
    }
}

/// Rounds a raw size up to a whole number of billing intervals.
pub fn round_to_billing(raw: f64, billing_slots: usize) -> u64 {
    let l = billing_slots as f64;
    let intervals = (raw / l).ceil().max(1.0);
    intervals as u64 * billing_slots as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriceDistribution {
    Uniform { low: f64, high: f64 },
    BoundedPareto { scale: f64, shape: f64, cap: f64 },
}

impl PriceDistribution {
    pub fn uniform_reference() -> Self {
        PriceDistribution::Uniform { low: 0.2, high: 1.0 }
    }

    pub fn pareto_reference() -> Self {
        PriceDistribution::BoundedPareto {
            scale: 0.3,
            shape: 2.0,
            cap: 1.0,
        }
    }

    pub fn support(&self) -> (f64, f64) {
        match *self {
            PriceDistribution::Uniform { low, high } => (low, high),
            PriceDistribution::BoundedPareto { scale, cap, .. } => (scale, cap),
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        match *self {
            PriceDistribution::Uniform { low, high } => {
                if low.is_finite() && high.is_finite() && low > 0.0 && low <= high {
                    Ok(())
                } else {
                    Err(WorkloadError::InvalidUniform { low, high })
                }
            }
            PriceDistribution::BoundedPareto { scale, shape, cap } => {
                BoundedPareto { scale, shape, cap }.validate()
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            PriceDistribution::Uniform { low, high } => {
                if low == high {
                    low
                } else {
                    rng.random_range(low..=high)
                }
            }
            PriceDistribution::BoundedPareto { scale, shape, cap } => {
                BoundedPareto { scale, shape, cap }.sample(rng)
            }
        }
    }
}

/// When a spot user's stop probability is drawn from its support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopSampling {
    /// Once at first arrival; the user keeps it for life.
    PerUser,
    /// Afresh at every continuation decision.
    #[default]
    PerSlot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotWorkloadParams {
    /// New-bid count per assignment slot is geometric with success
    /// probability `1 / ceil(saturation * m_i)`.
    pub saturation: f64,
    pub price: PriceDistribution,
    /// Support of the stop probability, drawn uniformly.
    pub stop_probabilities: Vec<f64>,
    #[serde(default)]
    pub stop_sampling: StopSampling,
}

impl SpotWorkloadParams {
    pub fn new(saturation: f64, price: PriceDistribution) -> Self {
        SpotWorkloadParams {
            saturation,
            price,
            stop_probabilities: vec![0.1, 0.3, 0.5],
            stop_sampling: StopSampling::default(),
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        if !self.saturation.is_finite() || self.saturation < 0.0 {
            return Err(WorkloadError::InvalidSaturation(self.saturation));
        }
        if self.stop_probabilities.is_empty()
            || self
                .stop_probabilities
                .iter()
                .any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(WorkloadError::InvalidStopProbabilities);
        }
        self.price.validate()
    }

    /// Success probability of the geometric new-bid count for a group of `group_size` servers.
    /// `None` when the market receives no bids at all.
    pub fn success_probability(&self, group_size: usize) -> Option<f64> {
        let trials = (self.saturation * group_size as f64).ceil();
        if trials < 1.0 {
            None
        } else {
            Some(1.0 / trials)
        }
    }
}

/// Draws the on-demand jobs arriving at slot `t`.
pub fn gen_on_demand_jobs<R: Rng + ?Sized>(
    t: u64,
    group: GroupId,
    rng: &mut R,
    params: &OnDemandWorkloadParams,
    billing_slots: usize,
    next_id: &mut u64,
) -> Vec<OnDemandJob> {
    let count = poisson_count(rng, params.arrival_rate);
    let sizes = params.size_distribution();
    (0..count)
        .map(|_| {
            let size = round_to_billing(sizes.sample(rng), billing_slots);
            let id = *next_id;
            *next_id += 1;
            OnDemandJob::new(id, group, t, size)
        })
        .collect()
}

pub(crate) fn poisson_count<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let dist = Poisson::new(mean).expect("validated poisson mean");
    dist.sample(rng) as u64
}

/// Draws the bids of users arriving fresh at slot `t` of group `group`.
pub fn gen_new_bids<R: Rng + ?Sized>(
    t: u64,
    group: GroupId,
    rng: &mut R,
    params: &SpotWorkloadParams,
    group_size: usize,
    next_user: &mut u64,
) -> Vec<SpotBid> {
    let Some(q) = params.success_probability(group_size) else {
        return Vec::new();
    };
    let count = if q >= 1.0 {
        0
    } else {
        Geometric::new(q).expect("q in (0, 1)").sample(rng)
    };
    let stops = &params.stop_probabilities;
    (0..count)
        .map(|_| {
            let price = params.price.sample(rng);
            let stop = stops[rng.random_range(0..stops.len())];
            let user = UserId(*next_user);
            *next_user += 1;
            SpotBid::fresh(user, group, t, price, stop)
        })
        .collect()
}

/// Carries the users accepted at `t` over to `t + b`: each continues with
/// probability `1 - ϱ`, keeping its price and pointing at the server it held.
pub fn continue_bids<R: Rng + ?Sized>(
    accepted: &[(SpotBid, ServerId)],
    groups: usize,
    params: &SpotWorkloadParams,
    rng: &mut R,
) -> Vec<SpotBid> {
    let stops = &params.stop_probabilities;
    accepted
        .iter()
        .filter_map(|(bid, server)| {
            let stop = match params.stop_sampling {
                StopSampling::PerUser => bid.stop_probability,
                StopSampling::PerSlot => stops[rng.random_range(0..stops.len())],
            };
            let cont = 1.0 - stop;
            if rng.random_bool(cont.clamp(0.0, 1.0)) {
                Some(bid.continuation(bid.slot + groups as u64, *server))
            } else {
                None
            }
        })
        .collect()
}
