//! Result tables and their CSV/JSON forms.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ies_core::env::DispatchResult;
use ies_core::sac::{CurvePoint, EvalMetrics};
use serde::{Deserialize, Serialize};

use crate::config::Algorithm;
use crate::error::{io_err, HarnessError, Result};
use crate::experiment::{AgentKey, Cell};

/// One evaluated (mode, scenario, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub mode: u8,
    pub scenario: u8,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub attack: bool,
    pub episodes: usize,
    pub mean_reward: f64,
    pub std_reward: f64,
    /// Net profit over all evaluation days, `Σ (rev − cost)`, in ¥.
    pub profit: f64,
    pub rev: f64,
    pub cost: f64,
    pub c1: f64,
    pub c2: f64,
    pub violations: usize,
}

pub const CSV_HEADER: [&str; 14] = [
    "mode",
    "scenario",
    "seed",
    "algorithm",
    "attack",
    "episodes",
    "mean_reward",
    "std_reward",
    "profit",
    "rev",
    "cost",
    "c1",
    "c2",
    "violations",
];

impl RunRecord {
    pub fn new(cell: Cell, m: &EvalMetrics) -> Self {
        Self {
            mode: cell.mode.number(),
            scenario: cell.scenario,
            seed: cell.seed,
            algorithm: cell.mode.algorithm(),
            attack: cell.attack,
            episodes: m.episodes.len(),
            mean_reward: m.mean_reward,
            std_reward: m.std_reward,
            profit: m.total_profit,
            rev: m.total_rev,
            cost: m.total_cost,
            c1: m.total_c1,
            c2: m.total_c2,
            violations: m.violations,
        }
    }
}

/// Per-day rewards and the first day's dispatch for one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub mode: u8,
    pub scenario: u8,
    pub seed: u64,
    pub rewards: Vec<f64>,
    pub profits: Vec<f64>,
    pub trace: Vec<DispatchResult>,
}

impl RunTrace {
    pub fn new(cell: Cell, m: EvalMetrics) -> Self {
        Self {
            mode: cell.mode.number(),
            scenario: cell.scenario,
            seed: cell.seed,
            rewards: m.episodes.iter().map(|e| e.reward).collect(),
            profits: m.episodes.iter().map(|e| e.profit).collect(),
            trace: m.trace,
        }
    }

    fn file_stem(&self) -> String {
        format!("mode{}_scenario{}_seed{}", self.mode, self.scenario, self.seed)
    }
}

/// Seed statistics of one (mode, scenario) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub mode: u8,
    pub scenario: u8,
    pub seeds: usize,
    pub mean_profit: f64,
    /// Standard error of the seed mean; zero with a single seed.
    pub se_profit: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<RunRecord>,
    /// Sum of `rows[..].profit` in row order.
    pub total_profit: f64,
    pub table: Vec<TableEntry>,
    pub traces: Vec<RunTrace>,
}

pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

impl Report {
    pub fn new(rows: Vec<RunRecord>, traces: Vec<RunTrace>) -> Self {
        let mut groups: BTreeMap<(u8, u8), Vec<f64>> = BTreeMap::new();
        for r in &rows {
            groups.entry((r.mode, r.scenario)).or_default().push(r.profit);
        }
        let table = groups
            .into_iter()
            .map(|((mode, scenario), profits)| {
                let (mean_profit, se_profit) = mean_and_se(&profits);
                TableEntry {
                    mode,
                    scenario,
                    seeds: profits.len(),
                    mean_profit,
                    se_profit,
                }
            })
            .collect();
        Self {
            total_profit: rows.iter().map(|r| r.profit).sum(),
            rows,
            table,
            traces,
        }
    }

    pub fn entry(&self, mode: u8, scenario: u8) -> Option<&TableEntry> {
        self.table.iter().find(|e| e.mode == mode && e.scenario == scenario)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.into_inner().map_err(|e| HarnessError::Csv(e.into_error().into()))
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Vec<RunRecord>> {
        let mut r = csv::Reader::from_reader(bytes);
        Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

fn write(path: PathBuf, bytes: &[u8]) -> Result<PathBuf> {
    std::fs::write(&path, bytes).map_err(io_err(&path))?;
    Ok(path)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Writes `report.csv` / `report.json` under `dir`, plus plot data in
/// `dir/plots`: the per-day reward and profit series of every cell and the
/// first day's dispatch stack.
pub fn emit(report: &Report, dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut written = Vec::new();
    for format in formats {
        written.push(match format {
            Format::Csv => write(dir.join("report.csv"), &report.to_csv()?)?,
            Format::Json => write(dir.join("report.json"), report.to_json()?.as_bytes())?,
        });
    }
    let plots = dir.join("plots");
    ensure_dir(&plots)?;
    written.push(write(plots.join("eval_rewards.csv"), &eval_series_csv(&report.traces)?)?);
    for t in &report.traces {
        written.push(write(plots.join(format!("dispatch_{}.csv", t.file_stem())), &dispatch_csv(&t.trace)?)?);
    }
    Ok(written)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| HarnessError::Csv(e.into_error().into()))
}

fn eval_series_csv(traces: &[RunTrace]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["mode", "scenario", "seed", "episode", "reward", "profit"])?;
    for t in traces {
        for (i, (reward, profit)) in t.rewards.iter().zip(&t.profits).enumerate() {
            w.write_record([t.mode.to_string(), t.scenario.to_string(), t.seed.to_string(), i.to_string(), reward.to_string(), profit.to_string()])?;
        }
    }
    finish(w)
}

const DISPATCH_HEADER: [&str; 24] = [
    "hour", "p_grid", "wt_used", "esd_out", "p_mt", "p_eb", "p_p2g", "p_load", "q_grid", "q_p2g", "q_mt", "q_load", "h_mt", "h_eb",
    "hsd_out", "h_load", "heat_slack", "c_esd", "c_hsd", "t_in", "price_e", "price_g", "price_h", "violations",
];

/// Hourly supply and demand per carrier, one row per hour.
pub fn dispatch_csv(trace: &[DispatchResult]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(DISPATCH_HEADER)?;
    for d in trace {
        let a = &d.action;
        let values = [
            d.p_grid, d.wt_used, d.esd_out, d.p_mt, a.p_eb, a.p_p2g, d.p_load, d.q_grid, d.q_p2g, a.q_mt, d.q_load, d.h_mt, d.h_eb,
            d.hsd_out, d.h_load, d.heat_slack, d.c_esd, d.c_hsd, d.t_in, a.price_p, a.price_q, a.price_h,
        ];
        let mut record = vec![d.hour.to_string()];
        record.extend(values.iter().map(f64::to_string));
        record.push(d.flags.violations().to_string());
        w.write_record(&record)?;
    }
    finish(w)
}

/// Training curve of one agent with the columns
/// `episode, reward, c1, c2, alpha, eps, beta`.
pub fn curves_csv(curves: &[CurvePoint]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["episode", "reward", "c1", "c2", "alpha", "eps", "beta"])?;
    for c in curves {
        w.write_record([c.episode.to_string(), c.reward.to_string(), c.c1.to_string(), c.c2.to_string(), c.alpha.to_string(), c.eps.to_string(), c.beta.to_string()])?;
    }
    finish(w)
}

pub fn write_curves(dir: &Path, key: AgentKey, curves: &[CurvePoint]) -> Result<PathBuf> {
    let plots = dir.join("plots");
    ensure_dir(&plots)?;
    write(plots.join(format!("curves_{}.csv", key.file_stem())), &curves_csv(curves)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(mode: u8, seed: u64, profit: f64) -> RunRecord {
        RunRecord {
            mode,
            scenario: 1,
            seed,
            algorithm: if mode <= 2 { Algorithm::Sac } else { Algorithm::SaSac },
            attack: mode.is_multiple_of(2),
            episodes: 3,
            mean_reward: profit / 3.0 - 0.1,
            std_reward: 0.25,
            profit,
            rev: profit + 10.0,
            cost: 10.0,
            c1: 0.1,
            c2: 0.0,
            violations: 1,
        }
    }

    #[test]
    fn empty_report_writes_only_the_header() {
        let csv = String::from_utf8(Report::default().to_csv().unwrap()).unwrap();
        assert_eq!(csv, CSV_HEADER.join(",") + "\n");
    }

    #[test]
    fn json_round_trip_and_csv_consistency() {
        let rows = vec![record(1, 0, 5801.123456789), record(1, 1, 0.1 + 0.2), record(3, 0, -12.5e-7)];
        let report = Report::new(rows, vec![]);
        assert_eq!(Report::from_json(&report.to_json().unwrap()).unwrap(), report);
        let parsed = Report::from_csv(&report.to_csv().unwrap()).unwrap();
        assert_eq!(parsed, report.rows);
        assert_eq!(parsed.iter().map(|r| r.profit).sum::<f64>(), report.total_profit);
    }

    #[test]
    fn table_groups_seeds() {
        let report = Report::new(vec![record(1, 0, 10.0), record(1, 1, 14.0), record(2, 0, 3.0)], vec![]);
        let e = report.entry(1, 1).unwrap();
        assert_eq!((e.seeds, e.mean_profit), (2, 12.0));
        assert!((e.se_profit - 2.0).abs() < 1e-12);
        assert_eq!(report.entry(2, 1).unwrap().se_profit, 0.0);
        assert!(report.entry(4, 1).is_none());
    }

    #[test]
    fn emit_writes_requested_formats() {
        let dir = tempfile::tempdir().unwrap();
        let report = Report::new(vec![record(1, 0, 1.0)], vec![]);
        let files = emit(&report, dir.path(), &[Format::Csv, Format::Json]).unwrap();
        assert!(files.iter().all(|f| f.is_file()));
        assert!(dir.path().join("report.json").is_file());
        let blocked = dir.path().join("report.csv").join("sub");
        assert!(emit(&report, &blocked, &[Format::Csv]).is_err());
    }
}
