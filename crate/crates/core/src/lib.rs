//! Discrete-time simulator of a hybrid cloud market: on-demand jobs are
//! dispatched to server groups in rotation, and the idle servers of each group
//! are sold to spot bidders at a revenue-maximizing uniform price.

pub mod analytics;
pub mod baselines;
pub mod capacity;
pub mod dispatch;
pub mod harness;
pub mod market;
pub mod metrics;
pub mod pricing;
pub mod workload;

pub use dispatch::DispatchPolicy;
pub use harness::{run_all, run_scenario, Scenario, ScenarioReport};
pub use market::{SimConfig, SlotRecord};
pub use metrics::RunSummary;
pub use pricing::{spoti_price, ClearingResult, PricedBid};
