//! Per-slot revenue ratio and the long-run run summary.

use serde::{Deserialize, Serialize};

use crate::market::SlotRecord;

/// `α_t = G / G_o`, or `None` when the on-demand market earns nothing.
pub fn slot_alpha(record: &SlotRecord) -> Option<f64> {
    if record.on_demand_revenue > 0.0 {
        Some(record.spot_revenue / record.on_demand_revenue)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UtilizationMode {
    /// On-demand occupancy only (`θ`).
    OnDemand,
    /// On-demand plus spot occupancy (`μ`).
    Combined,
}

/// Mean per-slot utilization of the group active at each slot.
pub fn super_slot_utilization(records: &[SlotRecord], mode: UtilizationMode) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let sum: f64 = records
        .iter()
        .map(|r| {
            let busy = match mode {
                UtilizationMode::OnDemand => r.group_on_demand,
                UtilizationMode::Combined => r.group_on_demand + r.accepted,
            };
            busy as f64 / r.group_size as f64
        })
        .sum();
    sum / records.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub slots_measured: u64,
    pub warmup: u64,
    /// `α_e`: mean `α_t` over slots with on-demand revenue.
    pub alpha_e: f64,
    /// Slots excluded from `α_e` because `G_o = 0`.
    pub alpha_excluded: u64,
    /// `θ`.
    pub theta: f64,
    /// `μ`.
    pub mu: f64,
    /// `ϑ`: unoccupied fraction of server super-slots.
    pub idleness: f64,
    /// Mean fraction of each group not held by on-demand work.
    pub vacancy: Vec<f64>,
    /// Price statistics over slots that accepted at least one bid.
    pub mean_price: Option<f64>,
    pub min_price: Option<f64>,
    pub max_price: Option<f64>,
    pub priced_slots: u64,
    pub mean_accepted: f64,
    pub mean_fresh_accepted: f64,
    pub mean_bids: f64,
    pub mean_offered: f64,
    /// Mean `M̄_t`: servers held by on-demand work across all groups.
    pub mean_on_demand_servers: f64,
    pub mean_spot_revenue: f64,
    pub mean_on_demand_revenue: f64,
    pub on_demand_jobs: u64,
    pub on_demand_misses: u64,
}

/// Streaming fold over slot records; records at or before `warmup` are ignored.
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    warmup: u64,
    slots: u64,
    alpha_sum: f64,
    alpha_slots: u64,
    alpha_excluded: u64,
    theta_sum: f64,
    mu_sum: f64,
    idle_servers: u64,
    server_slots: u64,
    vacancy_sum: Vec<f64>,
    vacancy_slots: Vec<u64>,
    price_sum: f64,
    price_min: f64,
    price_max: f64,
    priced: u64,
    accepted_sum: u64,
    fresh_sum: u64,
    bids_sum: u64,
    offered_sum: u64,
    mbar_sum: u64,
    spot_revenue_sum: f64,
    od_revenue_sum: f64,
    od_jobs: u64,
    od_misses: u64,
}

impl MetricsAccumulator {
    pub fn new(groups: usize, warmup: u64) -> Self {
        MetricsAccumulator {
            warmup,
            slots: 0,
            alpha_sum: 0.0,
            alpha_slots: 0,
            alpha_excluded: 0,
            theta_sum: 0.0,
            mu_sum: 0.0,
            idle_servers: 0,
            server_slots: 0,
            vacancy_sum: vec![0.0; groups],
            vacancy_slots: vec![0; groups],
            price_sum: 0.0,
            price_min: f64::INFINITY,
            price_max: f64::NEG_INFINITY,
            priced: 0,
            accepted_sum: 0,
            fresh_sum: 0,
            bids_sum: 0,
            offered_sum: 0,
            mbar_sum: 0,
            spot_revenue_sum: 0.0,
            od_revenue_sum: 0.0,
            od_jobs: 0,
            od_misses: 0,
        }
    }

    pub fn push(&mut self, r: &SlotRecord) {
        if r.t <= self.warmup {
            return;
        }
        self.slots += 1;
        match slot_alpha(r) {
            Some(a) => {
                self.alpha_sum += a;
                self.alpha_slots += 1;
            }
            None => self.alpha_excluded += 1,
        }
        let m = r.group_size as f64;
        self.theta_sum += r.group_on_demand as f64 / m;
        self.mu_sum += (r.group_on_demand + r.accepted) as f64 / m;
        self.idle_servers += (r.group_size - r.group_on_demand - r.accepted) as u64;
        self.server_slots += r.group_size as u64;
        self.vacancy_sum[r.group - 1] += 1.0 - r.group_on_demand as f64 / m;
        self.vacancy_slots[r.group - 1] += 1;
        if r.accepted > 0 {
            self.price_sum += r.price;
            self.price_min = self.price_min.min(r.price);
            self.price_max = self.price_max.max(r.price);
            self.priced += 1;
        }
        self.accepted_sum += r.accepted as u64;
        self.fresh_sum += r.fresh_accepted as u64;
        self.bids_sum += r.bids as u64;
        self.offered_sum += r.idle_offered as u64;
        self.mbar_sum += r.on_demand_total as u64;
        self.spot_revenue_sum += r.spot_revenue;
        self.od_revenue_sum += r.on_demand_revenue;
    }

    /// Counts on-demand dispatch outcomes of a measured slot.
    pub fn push_dispatch(&mut self, t: u64, jobs: usize, misses: usize) {
        if t > self.warmup {
            self.od_jobs += jobs as u64;
            self.od_misses += misses as u64;
        }
    }

    pub fn finish(&self) -> RunSummary {
        let n = self.slots.max(1) as f64;
        let priced = self.priced > 0;
        RunSummary {
            slots_measured: self.slots,
            warmup: self.warmup,
            alpha_e: if self.alpha_slots > 0 {
                self.alpha_sum / self.alpha_slots as f64
            } else {
                0.0
            },
            alpha_excluded: self.alpha_excluded,
            theta: self.theta_sum / n,
            mu: self.mu_sum / n,
            idleness: if self.server_slots > 0 {
                self.idle_servers as f64 / self.server_slots as f64
            } else {
                1.0
            },
            vacancy: self
                .vacancy_sum
                .iter()
                .zip(&self.vacancy_slots)
                .map(|(&s, &k)| if k > 0 { s / k as f64 } else { 1.0 })
                .collect(),
            mean_price: priced.then(|| self.price_sum / self.priced as f64),
            min_price: priced.then_some(self.price_min),
            max_price: priced.then_some(self.price_max),
            priced_slots: self.priced,
            mean_accepted: self.accepted_sum as f64 / n,
            mean_fresh_accepted: self.fresh_sum as f64 / n,
            mean_bids: self.bids_sum as f64 / n,
            mean_offered: self.offered_sum as f64 / n,
            mean_on_demand_servers: self.mbar_sum as f64 / n,
            mean_spot_revenue: self.spot_revenue_sum / n,
            mean_on_demand_revenue: self.od_revenue_sum / n,
            on_demand_jobs: self.od_jobs,
            on_demand_misses: self.od_misses,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: u64, od: usize, n: usize, g: f64, go: f64) -> SlotRecord {
        SlotRecord {
            t,
            group: 1,
            idle_offered: 10 - od,
            on_demand_total: od,
            bids: n,
            price: 0.5,
            accepted: n,
            loads: 0,
            spot_revenue: g,
            on_demand_revenue: go,
            alpha: None,
            utilization: (od + n) as f64 / 10.0,
            group_size: 10,
            group_on_demand: od,
            fresh_accepted: 0,
        }
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(slot_alpha(&rec(1, 2, 1, 0.5, 0.25)), Some(2.0));
        assert_eq!(slot_alpha(&rec(1, 2, 0, 0.0, 0.25)), Some(0.0));
        assert_eq!(slot_alpha(&rec(1, 0, 1, 0.5, 0.0)), None);
    }

    #[test]
    fn utilization_modes() {
        let rs = vec![rec(1, 2, 3, 0.0, 1.0), rec(2, 4, 1, 0.0, 1.0)];
        assert!((super_slot_utilization(&rs, UtilizationMode::OnDemand) - 0.3).abs() < 1e-15);
        assert!((super_slot_utilization(&rs, UtilizationMode::Combined) - 0.5).abs() < 1e-15);
        assert_eq!(super_slot_utilization(&[rec(1, 0, 0, 0.0, 0.0)], UtilizationMode::Combined), 0.0);
    }

    #[test]
    fn accumulator_skips_warmup_and_zero_revenue_slots() {
        let mut acc = MetricsAccumulator::new(1, 1);
        acc.push(&rec(1, 5, 5, 9.0, 1.0));
        acc.push(&rec(2, 2, 2, 1.0, 0.5));
        acc.push(&rec(3, 0, 0, 0.0, 0.0));
        let s = acc.finish();
        assert_eq!(s.slots_measured, 2);
        assert_eq!(s.alpha_excluded, 1);
        assert_eq!(s.alpha_e, 2.0);
        assert_eq!(s.priced_slots, 1);
        assert_eq!(s.mean_price, Some(0.5));
        assert!((s.mu - s.theta - 0.1).abs() < 1e-15);
    }
}
