//! Per-tick trace records, their CSV/JSONL encodings, and run summaries.

use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};

use crate::error::{Result, SimError};
use crate::mape::TechnicalGoals;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierRecord {
    pub queue: f64,
    pub response_time: f64,
    pub cu_allocated: f64,
    pub cu_max: u32,
    pub need: f64,
    pub efficiency: f64,
    pub eta_hat: f64,
}

/// Observable state at one CT tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub r_in: f64,
    pub tiers: Vec<TierRecord>,
    pub r_end: f64,
    pub setpoints: Vec<f64>,
    pub accrued_cost: f64,
    pub reconfig_count: u64,
}

/// A forecast of mean load over `[t_issue, t_issue + horizon)` and what happened.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastPair {
    pub t_issue: f64,
    pub horizon: f64,
    pub predicted: f64,
    pub naive: f64,
    pub actual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub records: usize,
    pub sla_compliance_fraction: f64,
    pub total_cost: f64,
    pub reconfig_count: u64,
    pub mean_need: Vec<f64>,
    pub max_need: Vec<f64>,
    pub forecaster_mae: Option<f64>,
    pub naive_mae: Option<f64>,
}

/// Column names, in file order.
pub fn csv_header(n_tiers: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string(), "r_in".to_string()];
    for i in 0..n_tiers {
        for name in ["q", "r_time", "cu", "cu_max", "need", "eta", "eta_hat"] {
            cols.push(format!("{name}_{i}"));
        }
    }
    cols.extend(["r_end", "cost", "reconfigs"].map(String::from));
    cols
}

enum Cell {
    Real(f64),
    Count(u64),
}

impl TraceRecord {
    fn cells(&self) -> Vec<Cell> {
        let mut cells = vec![Cell::Real(self.t), Cell::Real(self.r_in)];
        for tier in &self.tiers {
            cells.extend([
                Cell::Real(tier.queue),
                Cell::Real(tier.response_time),
                Cell::Real(tier.cu_allocated),
                Cell::Count(tier.cu_max as u64),
                Cell::Real(tier.need),
                Cell::Real(tier.efficiency),
                Cell::Real(tier.eta_hat),
            ]);
        }
        cells.extend([
            Cell::Real(self.r_end),
            Cell::Real(self.accrued_cost),
            Cell::Count(self.reconfig_count),
        ]);
        cells
    }

    /// Flat JSON object keyed by the CSV column names.
    pub fn to_json_object(&self) -> Result<Map<String, Value>> {
        let header = csv_header(self.tiers.len());
        let mut obj = Map::with_capacity(header.len());
        for (name, cell) in header.into_iter().zip(self.cells()) {
            let value = match cell {
                Cell::Real(v) => {
                    Value::Number(Number::from_f64(v).ok_or_else(|| SimError::NonFinite {
                        field: name.clone(),
                        value: v,
                    })?)
                }
                Cell::Count(c) => Value::Number(c.into()),
            };
            obj.insert(name, value);
        }
        Ok(obj)
    }
}

fn csv_error(e: csv::Error) -> SimError {
    SimError::Io(e.to_string())
}

pub fn write_csv<W: Write>(out: W, n_tiers: usize, records: &[TraceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(n_tiers)).map_err(csv_error)?;
    for rec in records {
        let row: Vec<String> = rec
            .cells()
            .into_iter()
            .map(|c| match c {
                Cell::Real(v) => v.to_string(),
                Cell::Count(c) => c.to_string(),
            })
            .collect();
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_jsonl<W: Write>(mut out: W, records: &[TraceRecord]) -> Result<()> {
    for rec in records {
        let line = serde_json::to_string(&rec.to_json_object()?)
            .map_err(|e| SimError::Io(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn trace_to_csv_string(n_tiers: usize, records: &[TraceRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, n_tiers, records)?;
    String::from_utf8(buf).map_err(|e| SimError::Io(e.to_string()))
}

/// Aggregates a trace. Forecast pairs issued before `warmup` are ignored.
pub fn summarize(
    trace: &[TraceRecord],
    goals: &TechnicalGoals,
    forecasts: &[ForecastPair],
    warmup: f64,
) -> RunSummary {
    let n = goals.per_tier_setpoints.len();
    let records = trace.len();
    let compliant = trace.iter().filter(|r| goals.meets_target(r.r_end)).count();
    let sla_compliance_fraction = if records == 0 {
        0.0
    } else {
        compliant as f64 / records as f64
    };

    let mut mean_need = vec![0.0; n];
    let mut max_need = vec![0.0; n];
    if records > 0 {
        max_need = vec![f64::NEG_INFINITY; n];
        for rec in trace {
            for (i, tier) in rec.tiers.iter().enumerate().take(n) {
                mean_need[i] += tier.need / records as f64;
                max_need[i] = max_need[i].max(tier.need);
            }
        }
    }

    let scored: Vec<&ForecastPair> = forecasts.iter().filter(|p| p.t_issue >= warmup).collect();
    let mae = |f: fn(&ForecastPair) -> f64| {
        (!scored.is_empty()).then(|| {
            scored.iter().map(|p| (f(p) - p.actual).abs()).sum::<f64>() / scored.len() as f64
        })
    };

    let last = trace.last();
    RunSummary {
        records,
        sla_compliance_fraction,
        total_cost: last.map_or(0.0, |r| r.accrued_cost),
        reconfig_count: last.map_or(0, |r| r.reconfig_count),
        mean_need,
        max_need,
        forecaster_mae: mae(|p| p.predicted),
        naive_mae: mae(|p| p.naive),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn goals() -> TechnicalGoals {
        TechnicalGoals {
            end_to_end_target: 0.9,
            per_tier_setpoints: vec![0.9],
            budget_cap: 10,
            penalty_rate: 1.0,
            cu_price: 0.0,
        }
    }

    fn record(t: f64, r_end: f64) -> TraceRecord {
        TraceRecord {
            t,
            r_in: 50.0,
            tiers: vec![TierRecord {
                queue: 1.0,
                response_time: r_end,
                cu_allocated: 5.0,
                cu_max: 10,
                need: -0.5,
                efficiency: 1.0,
                eta_hat: 1.0,
            }],
            r_end,
            setpoints: vec![0.9],
            accrued_cost: t,
            reconfig_count: 0,
        }
    }

    #[test]
    fn header_layout() {
        let h = csv_header(2);
        assert_eq!(h.len(), 2 + 14 + 3);
        assert_eq!(&h[..4], ["t", "r_in", "q_0", "r_time_0"]);
        assert_eq!(&h[h.len() - 3..], ["r_end", "cost", "reconfigs"]);
    }

    #[test]
    fn all_compliant() {
        let trace = vec![record(0.5, 0.5), record(1.0, 0.9)];
        let s = summarize(&trace, &goals(), &[], 0.0);
        assert_eq!(s.sla_compliance_fraction, 1.0);
        assert_eq!(s.total_cost, 1.0);
    }

    #[test]
    fn half_compliant() {
        let trace = vec![record(0.5, 0.5), record(1.0, 2.0)];
        assert_eq!(
            summarize(&trace, &goals(), &[], 0.0).sla_compliance_fraction,
            0.5
        );
    }

    #[test]
    fn empty_trace() {
        let s = summarize(&[], &goals(), &[], 0.0);
        assert_eq!(s.sla_compliance_fraction, 0.0);
        assert_eq!(s.total_cost, 0.0);
        assert_eq!(s.reconfig_count, 0);
        assert_eq!(s.forecaster_mae, None);
    }

    #[test]
    fn mae_skips_warmup() {
        let pairs = [
            ForecastPair {
                t_issue: 0.0,
                horizon: 60.0,
                predicted: 100.0,
                naive: 100.0,
                actual: 0.0,
            },
            ForecastPair {
                t_issue: 60.0,
                horizon: 60.0,
                predicted: 11.0,
                naive: 14.0,
                actual: 10.0,
            },
        ];
        let s = summarize(&[], &goals(), &pairs, 60.0);
        assert_eq!(s.forecaster_mae, Some(1.0));
        assert_eq!(s.naive_mae, Some(4.0));
    }

    #[test]
    fn csv_and_jsonl_share_field_names() {
        let trace = vec![record(0.5, 0.5)];
        let csv = trace_to_csv_string(1, &trace).unwrap();
        let mut lines = csv.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(lines.count(), 1);
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &trace).unwrap();
        let obj: Map<String, Value> = serde_json::from_slice(&buf).unwrap();
        let keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        assert_eq!(keys, header);
        assert_eq!(obj["cu_max_0"], Value::from(10));
    }
}
