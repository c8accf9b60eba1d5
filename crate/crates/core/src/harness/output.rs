//! Per-slot CSV series and JSON summaries.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use crate::market::SlotRecord;

pub const SLOT_COLUMNS: [&str; 15] = [
    "t", "i", "M_t", "Mbar_t", "A_t", "pi_star", "N_t", "f_t", "G_spot", "G_od", "alpha", "util", "m_i", "od_i",
    "N_fresh",
];

/// Writes slot records with fixed six-decimal formatting so that equal runs
/// produce byte-identical files.
pub struct SlotCsvWriter<W: Write> {
    inner: csv::Writer<W>,
    fields: Vec<String>,
}

impl<W: Write> SlotCsvWriter<W> {
    pub fn new(writer: W) -> anyhow::Result<Self> {
        let mut inner = csv::Writer::from_writer(writer);
        inner.write_record(SLOT_COLUMNS)?;
        Ok(SlotCsvWriter {
            inner,
            fields: Vec::with_capacity(SLOT_COLUMNS.len()),
        })
    }

    pub fn write(&mut self, r: &SlotRecord) -> anyhow::Result<()> {
        let f = &mut self.fields;
        f.clear();
        f.push(r.t.to_string());
        f.push(r.group.to_string());
        f.push(r.idle_offered.to_string());
        f.push(r.on_demand_total.to_string());
        f.push(r.bids.to_string());
        f.push(format!("{:.6}", r.price));
        f.push(r.accepted.to_string());
        f.push(r.loads.to_string());
        f.push(format!("{:.6}", r.spot_revenue));
        f.push(format!("{:.6}", r.on_demand_revenue));
        f.push(r.alpha.map(|a| format!("{a:.6}")).unwrap_or_default());
        f.push(format!("{:.6}", r.utilization));
        f.push(r.group_size.to_string());
        f.push(r.group_on_demand.to_string());
        f.push(r.fresh_accepted.to_string());
        self.inner.write_record(&*f)?;
        Ok(())
    }

    pub fn finish(mut self) -> anyhow::Result<W> {
        self.inner.flush()?;
        self.inner.into_inner().map_err(|e| anyhow::anyhow!("flushing csv: {}", e.error()))
    }
}

/// `<out>/<scenario>/<seed>`.
pub fn run_dir(out: &Path, scenario: &str, seed: u64) -> PathBuf {
    out.join(scenario).join(seed.to_string())
}

pub fn create_csv(path: &Path) -> anyhow::Result<SlotCsvWriter<BufWriter<File>>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    SlotCsvWriter::new(BufWriter::new(file))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formats_fixed_precision_and_empty_alpha() {
        let r = SlotRecord {
            t: 7,
            group: 1,
            idle_offered: 3,
            on_demand_total: 12,
            bids: 4,
            price: 0.5,
            accepted: 2,
            loads: 1,
            spot_revenue: 0.45,
            on_demand_revenue: 0.0,
            alpha: None,
            utilization: 2.0 / 3.0,
            group_size: 6,
            group_on_demand: 3,
            fresh_accepted: 1,
        };
        let mut w = SlotCsvWriter::new(Vec::new()).unwrap();
        w.write(&r).unwrap();
        let text = String::from_utf8(w.finish().unwrap()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), SLOT_COLUMNS.join(","));
        assert_eq!(
            lines.next().unwrap(),
            "7,1,3,12,4,0.500000,2,1,0.450000,0.000000,,0.666667,6,3,1"
        );
    }
}
