use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::error;

use spotmarket::capacity::{min_servers_for_qos, Division, SizingWorkload};
use spotmarket::harness::{self, load_config, preset, PqScenario, PricerChoice, Scenario, SIZING_CEILING};
use spotmarket::DispatchPolicy;

#[derive(Parser)]
#[command(name = "spotsim", version, about = "Hybrid on-demand / spot market simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenarios and write per-slot CSV and JSON summaries.
    Run(Select),
    /// Size the on-demand pools for the QoS target and print the search curve.
    Size {
        #[command(flatten)]
        select: Select,
        /// Size one pool serving every slot instead of per-group pools.
        #[arg(long)]
        single_pool: bool,
    },
    /// Run every preset.
    Sweep(Select),
}

#[derive(Args, Clone)]
struct Select {
    /// JSON scenario file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset name, or a scenario name within --config.
    #[arg(long)]
    scenario: Option<String>,
    /// Overrides the scenario seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the horizon in slots.
    #[arg(long)]
    slots: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum)]
    pricer: Option<PricerChoice>,
    #[arg(long, value_enum)]
    policy: Option<DispatchPolicy>,
    /// Run the two-pool priority-queue comparison instead of the shared market.
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    /// Spot arrivals per slot of the priority-queue pool.
    #[arg(long)]
    spot_rate: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Baseline {
    None,
    Pq,
}

impl Select {
    fn scenarios(&self, sweep: bool) -> anyhow::Result<Vec<Scenario>> {
        let mut list = match (&self.config, &self.scenario) {
            (Some(path), name) => {
                let all = load_config(path)?;
                match name {
                    Some(n) => {
                        let picked: Vec<_> = all.into_iter().filter(|s| &s.name == n).collect();
                        if picked.is_empty() {
                            bail!("no scenario named {n} in {}", path.display());
                        }
                        picked
                    }
                    None => all,
                }
            }
            (None, Some(name)) => preset(name).with_context(|| {
                format!("unknown preset {name}; known: {}", harness::PRESETS.join(", "))
            })?,
            (None, None) if sweep => harness::PRESETS.iter().flat_map(|p| preset(p).unwrap()).collect(),
            (None, None) => bail!("pass --config or --scenario"),
        };
        for s in &mut list {
            if let Some(seed) = self.seed {
                s.seeds = vec![seed];
            }
            if let Some(slots) = self.slots {
                s.horizon = slots;
            }
            if let Some(p) = self.pricer {
                s.pricer = p;
            }
            if let Some(p) = self.policy {
                s.policy = p;
            }
            match self.baseline {
                Some(Baseline::Pq) => {
                    let spot_rate = self
                        .spot_rate
                        .or(s.pq.map(|p| p.spot_rate))
                        .context("--baseline pq needs --spot-rate")?;
                    s.pq = Some(PqScenario {
                        on_demand_rate: s.on_demand.arrival_rate,
                        spot_rate,
                    });
                }
                Some(Baseline::None) => s.pq = None,
                None => {}
            }
        }
        Ok(list)
    }
}

fn run(select: &Select, sweep: bool) -> anyhow::Result<()> {
    let scenarios = select.scenarios(sweep)?;
    let mut failed = 0;
    for result in harness::run_all(&scenarios, Some(&select.out)) {
        match result {
            Ok(r) => {
                let s = r.summary.as_ref();
                println!(
                    "{} seed={} servers={} alpha_e={:.4} theta={:.4} idleness={:.4}",
                    r.scenario,
                    r.seed,
                    r.total_servers,
                    s.map_or(0.0, |s| s.alpha_e),
                    s.map_or(0.0, |s| s.theta),
                    s.map_or(0.0, |s| s.idleness),
                );
                if let Some(pq) = &r.pq {
                    println!(
                        "{} seed={} pq: m_o={} m_S={} alpha_e={:.4} work_conserved={}",
                        r.scenario, r.seed, pq.on_demand_servers, pq.spot_servers, pq.alpha, pq.work_conserved
                    );
                }
            }
            Err(e) => {
                error!("{e:#}");
                failed += 1;
            }
        }
    }
    if failed > 0 {
        bail!("{failed} run(s) failed");
    }
    Ok(())
}

fn size(select: &Select, single_pool: bool) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "scenario,seed,pool,size,miss_rate,truncated,chosen")?;
    for s in select.scenarios(false)? {
        let division = if single_pool {
            Division::SinglePool
        } else {
            Division::Grouped { groups: s.groups }
        };
        for &seed in &s.seeds {
            let workload = SizingWorkload {
                params: s.on_demand,
                billing_slots: s.billing_slots,
                seed,
                stream_groups: s.groups,
            };
            let qos = s.qos_target();
            let sizing = min_servers_for_qos(&workload, s.policy, &qos, division, SIZING_CEILING)?;
            for (pool, result) in sizing.per_pool.iter().enumerate() {
                for &(m, rate, truncated) in &result.curve {
                    writeln!(
                        out,
                        "{},{seed},{},{m},{rate:.6},{truncated},{}",
                        s.name,
                        pool + 1,
                        m == result.servers
                    )?;
                }
            }
            eprintln!("{} seed={seed}: sizes {:?} total {}", s.name, sizing.sizes, sizing.total);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(sel) => run(sel, false),
        Command::Sweep(sel) => run(sel, true),
        Command::Size { select, single_pool } => size(select, *single_pool),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
