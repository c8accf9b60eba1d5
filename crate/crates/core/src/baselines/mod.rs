//! Comparison systems: the dynamic reserve price (DRP) pricer and the
//! two-pool priority-queue market.

pub mod drp;
pub mod pq;

pub use drp::{drp_clear, drp_next_price, DrpError, DrpState};
pub use pq::{run_pq_market, size_spot_pool, PqClass, PqMarketConfig, PqOutcome, PqSummary};
