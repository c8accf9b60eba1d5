//! Scenario files and the named presets.

use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use crate::capacity::QosTarget;
use crate::dispatch::DispatchPolicy;
use crate::market::{PricerKind, SimConfig};
use crate::workload::{OnDemandWorkloadParams, PriceDistribution, SpotWorkloadParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PricerChoice {
    Spoti,
    Drp,
}

/// Two-pool comparison settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PqScenario {
    /// `λ_o'`: on-demand arrivals per slot of both markets.
    pub on_demand_rate: f64,
    /// `λ_s'`: spot arrivals per slot of the two-pool market.
    pub spot_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub slot_minutes: u32,
    pub load_minutes: u32,
    pub groups: usize,
    pub billing_slots: usize,
    pub on_demand_price: f64,
    /// Fixed group sizes; sized for the QoS target when absent.
    pub group_sizes: Option<Vec<usize>>,
    pub policy: DispatchPolicy,
    pub pricer: PricerChoice,
    /// DRP `[F, C]`; taken from the matching SpotiPrice run when absent.
    pub drp_bounds: Option<[f64; 2]>,
    pub on_demand: OnDemandWorkloadParams,
    /// Absent for an on-demand-only market.
    pub spot: Option<SpotWorkloadParams>,
    pub horizon: u64,
    pub seeds: Vec<u64>,
    /// On-time fraction used for sizing.
    pub qos: f64,
    /// Sizing horizon; defaults to `horizon`.
    pub sizing_horizon: Option<u64>,
    /// Independent traces every sized pool must satisfy.
    pub sizing_replications: u32,
    pub warmup: Option<u64>,
    /// Run the two-pool priority-queue comparison instead of the market.
    pub pq: Option<PqScenario>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "scenario".into(),
            slot_minutes: 5,
            load_minutes: 3,
            groups: 6,
            billing_slots: 12,
            on_demand_price: 1.0,
            group_sizes: None,
            policy: DispatchPolicy::PowerOfTwo,
            pricer: PricerChoice::Spoti,
            drp_bounds: None,
            on_demand: OnDemandWorkloadParams::reference(),
            spot: None,
            horizon: 120_000,
            seeds: vec![1],
            qos: 0.99,
            sizing_horizon: None,
            sizing_replications: 1,
            warmup: None,
            pq: None,
        }
    }
}

impl Scenario {
    pub fn qos_target(&self) -> QosTarget {
        QosTarget {
            replications: self.sizing_replications,
            ..QosTarget::new(self.qos, self.sizing_horizon.unwrap_or(self.horizon))
        }
    }

    /// The simulator configuration for `seed` with resolved group sizes.
    pub fn sim_config(&self, seed: u64, group_sizes: Vec<usize>, pricer: PricerKind) -> SimConfig {
        SimConfig {
            slot_minutes: self.slot_minutes,
            load_minutes: self.load_minutes,
            groups: self.groups,
            billing_slots: self.billing_slots,
            group_sizes,
            on_demand_price: self.on_demand_price,
            dispatch_policy: self.policy,
            pricer,
            on_demand: self.on_demand,
            spot: self.spot.clone(),
            seed,
            horizon: self.horizon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub scenarios: Vec<Scenario>,
}

pub fn load_config(path: &Path) -> anyhow::Result<Vec<Scenario>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: ConfigFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if file.scenarios.is_empty() {
        bail!("{} defines no scenarios", path.display());
    }
    Ok(file.scenarios)
}

pub const PRESETS: [&str; 6] = ["t2-vacancy", "t3-uniform", "t4-pareto", "t5-util", "t6-t8-drp", "t9-pq"];

/// Saturation levels `φ` of the spot scenarios.
pub const SATURATIONS: [(f64, &str); 3] = [(1.0, "full"), (1.0 / 2.5, "medium"), (1.0 / 5.0, "low")];

fn spot_scenarios(prefix: &str, price: PriceDistribution, pricer: PricerChoice) -> Vec<Scenario> {
    SATURATIONS
        .iter()
        .map(|&(phi, label)| Scenario {
            name: format!("{prefix}-{label}"),
            spot: Some(SpotWorkloadParams::new(phi, price)),
            pricer,
            ..Scenario::default()
        })
        .collect()
}

/// Scenarios of a named preset.
pub fn preset(name: &str) -> Option<Vec<Scenario>> {
    let od_only = |rate: f64| Scenario {
        name: format!("od-only-{rate}"),
        on_demand: OnDemandWorkloadParams {
            arrival_rate: rate,
            ..OnDemandWorkloadParams::reference()
        },
        ..Scenario::default()
    };
    let scenarios = match name {
        "t2-vacancy" => vec![od_only(30.0), od_only(60.0), od_only(90.0)],
        "t3-uniform" => spot_scenarios("uniform", PriceDistribution::uniform_reference(), PricerChoice::Spoti),
        "t4-pareto" => spot_scenarios("pareto", PriceDistribution::pareto_reference(), PricerChoice::Spoti),
        "t5-util" => {
            let mut v = vec![od_only(60.0)];
            v.extend(spot_scenarios("uniform", PriceDistribution::uniform_reference(), PricerChoice::Spoti));
            v.extend(spot_scenarios("pareto", PriceDistribution::pareto_reference(), PricerChoice::Spoti));
            v
        }
        "t6-t8-drp" => {
            let mut v = spot_scenarios("drp-uniform", PriceDistribution::uniform_reference(), PricerChoice::Drp);
            v.extend(spot_scenarios("drp-pareto", PriceDistribution::pareto_reference(), PricerChoice::Drp));
            v
        }
        "t9-pq" => [30.0, 60.0, 120.0]
            .iter()
            .map(|&spot_rate| Scenario {
                name: format!("pq-{spot_rate}"),
                pq: Some(PqScenario {
                    on_demand_rate: 30.0,
                    spot_rate,
                }),
                ..Scenario::default()
            })
            .collect(),
        _ => return None,
    };
    Some(scenarios)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_resolves() {
        for name in PRESETS {
            let s = preset(name).unwrap();
            assert!(!s.is_empty(), "{name}");
        }
        assert!(preset("nope").is_none());
    }

    #[test]
    fn config_round_trip_with_defaults() {
        let text = r#"{"scenarios": [{"name": "x", "horizon": 600,
            "spot": {"saturation": 0.2, "price": {"kind": "uniform", "low": 0.2, "high": 1.0},
                     "stop_probabilities": [0.1, 0.3, 0.5]}}]}"#;
        let file: ConfigFile = serde_json::from_str(text).unwrap();
        let s = &file.scenarios[0];
        assert_eq!(s.horizon, 600);
        assert_eq!(s.groups, 6);
        assert_eq!(s.policy, DispatchPolicy::PowerOfTwo);
        let back: ConfigFile = serde_json::from_str(&serde_json::to_string(&file).unwrap()).unwrap();
        assert_eq!(back, file);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = r#"{"scenarios": [{"name": "x", "bogus": 1}]}"#;
        assert!(serde_json::from_str::<ConfigFile>(text).is_err());
    }
}
