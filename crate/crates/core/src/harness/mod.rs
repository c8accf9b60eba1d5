//! Scenario orchestration: sizing, market runs, baselines and artifacts.

pub mod config;
pub mod engine;
pub mod output;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::pq::{run_pq_market, size_spot_pool, PqMarketConfig, PqSummary};
use crate::capacity::{min_servers_for_qos, Division, SizingWorkload};
use crate::market::PricerKind;
use crate::metrics::RunSummary;
use crate::workload::{stream_rng, OnDemandWorkloadParams, StreamKind};

pub use config::{load_config, preset, PqScenario, PricerChoice, Scenario, PRESETS};
pub use engine::{simulate, simulate_observed, EngineError, EngineOptions, InvariantReport, RunOutput};

/// Largest pool the sizing searches may consider.
pub const SIZING_CEILING: usize = 1 << 22;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub seed: u64,
    pub group_sizes: Vec<usize>,
    pub total_servers: usize,
    pub summary: Option<RunSummary>,
    pub invariants: Option<InvariantReport>,
    pub drp_bounds: Option<[f64; 2]>,
    pub pq: Option<PqSummary>,
    pub out_dir: Option<PathBuf>,
}

/// Group sizes of the scenario: given explicitly, or the smallest per-group
/// pools meeting the QoS target on this seed's on-demand streams.
pub fn resolve_group_sizes(s: &Scenario, seed: u64) -> anyhow::Result<Vec<usize>> {
    if let Some(sizes) = &s.group_sizes {
        return Ok(sizes.clone());
    }
    size_groups(&s.on_demand, s, seed)
}

fn size_groups(params: &OnDemandWorkloadParams, s: &Scenario, seed: u64) -> anyhow::Result<Vec<usize>> {
    let qos = s.qos_target();
    let workload = SizingWorkload {
        params: *params,
        billing_slots: s.billing_slots,
        seed,
        stream_groups: s.groups,
    };
    let sizing = min_servers_for_qos(&workload, s.policy, &qos, Division::Grouped { groups: s.groups }, SIZING_CEILING)
        .with_context(|| format!("sizing {}", s.name))?;
    info!("{}: sized groups {:?} (total {})", s.name, sizing.sizes, sizing.total);
    Ok(sizing.sizes)
}

/// Runs one market scenario for `seed`. With `out` set, writes
/// `<out>/<scenario>/<seed>/slots.csv` and `summary.json`.
pub fn run_market(s: &Scenario, seed: u64, out: Option<&Path>) -> anyhow::Result<ScenarioReport> {
    let sizes = resolve_group_sizes(s, seed)?;
    run_market_sized(s, seed, sizes, out)
}

/// Like [`run_market`] with the group sizes already resolved.
pub fn run_market_sized(s: &Scenario, seed: u64, sizes: Vec<usize>, out: Option<&Path>) -> anyhow::Result<ScenarioReport> {
    let opts = EngineOptions {
        warmup: s.warmup,
        check_invariants: true,
    };
    let (pricer, bounds) = match s.pricer {
        PricerChoice::Spoti => (PricerKind::SpotiPrice, None),
        PricerChoice::Drp => {
            let [floor, ceiling] = match s.drp_bounds {
                Some(b) => b,
                None => spoti_price_range(s, seed, &sizes, opts)?,
            };
            (PricerKind::Drp { floor, ceiling }, Some([floor, ceiling]))
        }
    };
    let cfg = s.sim_config(seed, sizes.clone(), pricer);
    let dir = out.map(|o| output::run_dir(o, &s.name, seed));
    let result = match &dir {
        Some(dir) => {
            let mut csv = output::create_csv(&dir.join("slots.csv"))?;
            let result = simulate(&cfg, opts, |r| csv.write(r))?;
            csv.finish()?;
            result
        }
        None => simulate(&cfg, opts, |_| Ok(()))?,
    };
    let report = ScenarioReport {
        scenario: s.name.clone(),
        seed,
        total_servers: sizes.iter().sum(),
        group_sizes: sizes,
        summary: Some(result.summary),
        invariants: Some(result.invariants),
        drp_bounds: bounds,
        pq: None,
        out_dir: dir.clone(),
    };
    if let Some(dir) = &dir {
        output::write_json(&dir.join("summary.json"), &report)?;
    }
    Ok(report)
}

/// `(F, C)`: lowest and highest cleared price of the SpotiPrice run on the
/// same seed, over measured slots that accepted bids.
fn spoti_price_range(s: &Scenario, seed: u64, sizes: &[usize], opts: EngineOptions) -> anyhow::Result<[f64; 2]> {
    let cfg = s.sim_config(seed, sizes.to_vec(), PricerKind::SpotiPrice);
    let out = simulate(&cfg, opts, |_| Ok(()))?;
    match (out.summary.min_price, out.summary.max_price) {
        (Some(lo), Some(hi)) if lo < hi => Ok([lo, hi]),
        _ => bail!("{}: SpotiPrice run cleared no price range for DRP bounds", s.name),
    }
}

/// Two-pool comparison: an on-demand pool sized for the QoS at `λ_o'`, a
/// priority-queue spot pool sized for its per-class QoS at `λ_s'`, and the
/// shared market on the combined servers.
pub fn run_pq(s: &Scenario, pq: PqScenario, seed: u64, out: Option<&Path>) -> anyhow::Result<ScenarioReport> {
    let od = OnDemandWorkloadParams {
        arrival_rate: pq.on_demand_rate,
        ..s.on_demand
    };
    let sizes = match &s.group_sizes {
        Some(sz) => sz.clone(),
        None => size_groups(&od, s, seed)?,
    };
    let mut od_scenario = s.clone();
    od_scenario.on_demand = od;
    od_scenario.spot = None;
    od_scenario.pricer = PricerChoice::Spoti;
    let cfg = od_scenario.sim_config(seed, sizes.clone(), PricerKind::SpotiPrice);
    let od_run = simulate(
        &cfg,
        EngineOptions {
            warmup: s.warmup,
            check_invariants: true,
        },
        |_| Ok(()),
    )?;

    let mut pq_cfg = PqMarketConfig::reference(pq.spot_rate, s.horizon);
    pq_cfg.sizes = s.on_demand;
    pq_cfg.billing_slots = s.billing_slots;
    pq_cfg.qos = s.qos;
    if let Some(w) = s.warmup {
        pq_cfg.warmup = w;
    }
    let (_, spot) = size_spot_pool(&pq_cfg, || stream_rng(seed, 0, StreamKind::PriorityQueue), SIZING_CEILING)
        .with_context(|| format!("sizing the spot pool of {}", s.name))?;
    let total_od: usize = sizes.iter().sum();
    let summary = run_pq_market(&pq_cfg, total_od, od_run.summary.mean_on_demand_servers, &spot);
    let dir = out.map(|o| output::run_dir(o, &s.name, seed));
    let report = ScenarioReport {
        scenario: s.name.clone(),
        seed,
        total_servers: total_od + spot.servers,
        group_sizes: sizes,
        summary: Some(od_run.summary),
        invariants: Some(od_run.invariants),
        drp_bounds: None,
        pq: Some(summary),
        out_dir: dir.clone(),
    };
    if let Some(dir) = &dir {
        output::write_json(&dir.join("summary.json"), &report)?;
    }
    Ok(report)
}

pub fn run_scenario(s: &Scenario, seed: u64, out: Option<&Path>) -> anyhow::Result<ScenarioReport> {
    match s.pq {
        Some(pq) => run_pq(s, pq, seed, out),
        None => run_market(s, seed, out),
    }
}

/// Runs every (scenario, seed) pair in parallel.
pub fn run_all(scenarios: &[Scenario], out: Option<&Path>) -> Vec<anyhow::Result<ScenarioReport>> {
    let jobs: Vec<(&Scenario, u64)> = scenarios
        .iter()
        .flat_map(|s| s.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    jobs.into_par_iter()
        .map(|(s, seed)| run_scenario(s, seed, out).with_context(|| format!("scenario {} seed {seed}", s.name)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{PriceDistribution, SpotWorkloadParams};

    fn tiny(name: &str) -> Scenario {
        Scenario {
            name: name.into(),
            on_demand: OnDemandWorkloadParams {
                arrival_rate: 2.0,
                ..OnDemandWorkloadParams::reference()
            },
            spot: Some(SpotWorkloadParams::new(0.5, PriceDistribution::uniform_reference())),
            horizon: 1_200,
            ..Scenario::default()
        }
    }

    #[test]
    fn writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_market(&tiny("t"), 3, Some(dir.path())).unwrap();
        let run = dir.path().join("t").join("3");
        assert!(run.join("slots.csv").exists());
        assert!(run.join("summary.json").exists());
        assert_eq!(report.invariants.unwrap().total(), 0);
        let rows = std::fs::read_to_string(run.join("slots.csv")).unwrap().lines().count();
        assert_eq!(rows, 1_201);
    }

    #[test]
    fn drp_bounds_come_from_spoti_run() {
        let mut s = tiny("d");
        s.pricer = PricerChoice::Drp;
        let r = run_market(&s, 5, None).unwrap();
        let [f, c] = r.drp_bounds.unwrap();
        assert!(f < c);
        let sum = r.summary.unwrap();
        assert!(sum.min_price.unwrap() >= f && sum.max_price.unwrap() <= c);
    }
}
