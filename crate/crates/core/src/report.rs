//! CSV and JSON rendering for simulation and sweep results.
//!
//! Columns are fixed so external plotting tools can rely on them; golden
//! files in the test suites pin the exact bytes.

use crate::simulator::{Aggregate, SimConfig, SimMetrics, SweepRow};
use std::borrow::Cow;
use std::fmt::Write;

/// Header of the per-request CSV: request rows carry the per-request
/// columns, the final aggregate row carries the run-level ones.
pub const SIMULATION_CSV_HEADER: &str = "record,id,group,length,overlap,reusable,recompute,\
new_suffix,hit,savings,reduction,hit_rate,avg_slots,peak_bytes";

/// Header of the sweep CSV, one row per (strategy, budget) cell.
pub const SWEEP_CSV_HEADER: &str =
    "strategy,budget,slots,expected_recompute,savings,reduction,bytes,pareto";

fn csv_field(s: &str) -> Cow<'_, str> {
    if s.contains([',', '"', '\n', '\r']) {
        Cow::Owned(format!("\"{}\"", s.replace('"', "\"\"")))
    } else {
        Cow::Borrowed(s)
    }
}

/// One row per request, then one aggregate row.
pub fn simulation_csv(metrics: &SimMetrics) -> String {
    let mut out = String::new();
    out.push_str(SIMULATION_CSV_HEADER);
    out.push('\n');
    for r in &metrics.records {
        writeln!(
            out,
            "request,{},{},{},{},{},{},{},{},,,,,",
            r.id,
            csv_field(&r.group),
            r.length,
            r.overlap,
            r.reusable,
            r.recompute,
            r.new_suffix,
            r.hit
        )
        .expect("writing to string cannot fail");
    }
    let a = &metrics.aggregate;
    writeln!(
        out,
        "aggregate,,,,,,,,,{},{},{},{},{}",
        a.savings, a.reduction, a.hit_rate, a.avg_slots_per_entry, a.peak_bytes
    )
    .expect("writing to string cannot fail");
    out
}

/// Sweep table with Pareto flags, rows in (strategy, budget) order.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    out.push_str(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.strategy, r.budget, r.slots, r.expected_recompute, r.savings, r.reduction, r.bytes,
            r.pareto
        )
        .expect("writing to string cannot fail");
    }
    out
}

#[derive(serde::Serialize)]
struct Summary<'a> {
    config: &'a SimConfig,
    aggregate: &'a Aggregate,
}

/// Machine-readable run summary: the effective config plus aggregates.
pub fn summary_json(config: &SimConfig, aggregate: &Aggregate) -> String {
    serde_json::to_string_pretty(&Summary { config, aggregate })
        .expect("summary serialization cannot fail")
}
