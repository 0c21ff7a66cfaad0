//! File formats written by the command-line tool: iteration traces as CSV,
//! run summaries as JSON and step-size sweep tables as CSV.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::market::{EquilibriumReport, IterationTrace};

pub const TRACE_HEADER: [&str; 10] = [
    "iter",
    "slot",
    "customer",
    "x",
    "y",
    "z",
    "p_l",
    "p_u",
    "welfare",
    "max_change",
];

/// Leading comment line of a trace file.
pub const TRACE_COMMENT: &str = "# one row per (iter, slot, customer); p_l and p_u are the slot's block prices at that iterate; \
welfare and max_change are per-iteration values repeated on every row of the iteration; \
max_change is NaN at iter 0";

/// One row of a trace file. `customer` is the customer id from the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub slot: usize,
    pub customer: u32,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub p_l: f64,
    pub p_u: f64,
    pub welfare: f64,
    pub max_change: f64,
}

/// Flattens a trace into rows, iteration-major, then slot, then customer.
pub fn trace_rows<'a>(
    trace: &'a IterationTrace,
    customer_ids: &'a [u32],
) -> impl Iterator<Item = TraceRow> + 'a {
    trace.records.iter().enumerate().flat_map(move |(k, rec)| {
        let slots = rec.allocation.num_slots();
        (0..slots).flat_map(move |t| {
            rec.allocation
                .profiles
                .iter()
                .zip(customer_ids)
                .map(move |(p, &id)| TraceRow {
                    iter: k,
                    slot: t,
                    customer: id,
                    x: p.x[t],
                    y: p.y[t],
                    z: p.z[t],
                    p_l: rec.prices.p_l[t],
                    p_u: rec.prices.p_u[t],
                    welfare: rec.welfare,
                    max_change: rec.max_change.unwrap_or(f64::NAN),
                })
        })
    })
}

/// Writes a trace as CSV: the comment line, the header, then every row.
pub fn write_trace_csv<W: Write>(
    trace: &IterationTrace,
    customer_ids: &[u32],
    mut out: W,
) -> Result<(), csv::Error> {
    writeln!(out, "{TRACE_COMMENT}")?;
    let mut w = csv::Writer::from_writer(out);
    for row in trace_rows(trace, customer_ids) {
        w.serialize(row)?;
    }
    if trace.records.is_empty() {
        w.write_record(TRACE_HEADER)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trace file written by [`write_trace_csv`].
pub fn read_trace_csv<R: std::io::Read>(input: R) -> Result<Vec<TraceRow>, csv::Error> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input)
        .deserialize()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotPrices {
    pub p_l: Vec<f64>,
    pub p_u: Vec<f64>,
}

/// Summary of a single market run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub iterations: usize,
    pub converged: bool,
    pub welfare: f64,
    pub prices: SlotPrices,
    pub kkt_residual: f64,
}

impl From<&EquilibriumReport> for RunSummary {
    fn from(r: &EquilibriumReport) -> Self {
        RunSummary {
            iterations: r.iterations,
            converged: r.converged,
            welfare: r.welfare,
            prices: SlotPrices {
                p_l: r.prices.p_l.clone(),
                p_u: r.prices.p_u.clone(),
            },
            kkt_residual: r.kkt_residual,
        }
    }
}

/// One row of a sweep table. A diverged run has `converged = false` and NaN welfare.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub iterations: usize,
    pub converged: bool,
    pub welfare: f64,
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record(["gamma", "iterations", "converged", "welfare"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: std::io::Read>(input: R) -> Result<Vec<SweepRow>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{run_market, RunConfig};
    use crate::model::demo_scenario;

    #[test]
    fn trace_csv_round_trips() {
        let s = demo_scenario();
        let ids: Vec<u32> = s.customers.iter().map(|c| c.id).collect();
        let (_, trace) = run_market(&s, &RunConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&trace, &ids, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# "));
        assert_eq!(lines.next().unwrap(), TRACE_HEADER.join(","));

        let rows = read_trace_csv(&buf[..]).unwrap();
        assert_eq!(rows.len(), trace.len() * 2);
        assert!(rows[0].max_change.is_nan());
        let last = rows.last().unwrap();
        let rec = trace.records.last().unwrap();
        assert_eq!(last.iter, trace.len() - 1);
        assert_eq!(last.x, rec.allocation.profiles[1].x[0]);
        assert_eq!(last.welfare, rec.welfare);
    }

    #[test]
    fn sweep_csv_round_trips() {
        let rows = vec![
            SweepRow {
                gamma: 0.1,
                iterations: 117,
                converged: true,
                welfare: 3093.25,
            },
            SweepRow {
                gamma: 50.0,
                iterations: 0,
                converged: false,
                welfare: f64::NAN,
            },
        ];
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("gamma,iterations,converged,welfare\n"));
        let back = read_sweep_csv(&buf[..]).unwrap();
        assert_eq!(back[0], rows[0]);
        assert!(back[1].welfare.is_nan());
    }
}
