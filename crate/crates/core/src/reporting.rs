//! On-disk outputs: per-round CSV, JSON summaries, and the sweep table.
//!
//! All files are written atomically (temporary file in the target directory,
//! then rename) and contain nothing that varies between identical runs.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orchestrator::{ComparisonSummary, ExperimentConfig, Mode, RoundRecord};

pub const CSV_HEADER: [&str; 10] = [
    "round",
    "mode",
    "n_selected",
    "n_involved",
    "upstream_bits",
    "saving_fraction",
    "accuracy",
    "t_total_min_s",
    "t_total_mean_s",
    "t_total_max_s",
];

pub const SWEEP_HEADER: [&str; 5] = ["N", "mode", "mean_upstream_bits", "mean_involved", "final_accuracy"];

/// Renders `v` like C's `%.9g`: 9 significant digits, trailing zeros
/// stripped, exponent form outside `[1e-4, 1e9)`.
pub fn format_number(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp) as usize;
        strip_zeros(&format!("{v:.decimals$}")).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", strip_zeros(mantissa), exp.abs())
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Writes `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Vec<u8> {
    w.into_inner().expect("in-memory writer")
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// One row of the per-round CSV, i.e. a [`RoundRecord`] at rendered
/// precision.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub round: u32,
    pub mode: Mode,
    pub n_selected: usize,
    pub n_involved: usize,
    pub upstream_bits: f64,
    pub saving_fraction: f64,
    pub accuracy: f64,
    pub t_total_min_s: f64,
    pub t_total_mean_s: f64,
    pub t_total_max_s: f64,
}

impl CsvRow {
    fn fields(&self) -> [String; 10] {
        [
            self.round.to_string(),
            self.mode.to_string(),
            self.n_selected.to_string(),
            self.n_involved.to_string(),
            format_number(self.upstream_bits),
            format_number(self.saving_fraction),
            format_number(self.accuracy),
            format_number(self.t_total_min_s),
            format_number(self.t_total_mean_s),
            format_number(self.t_total_max_s),
        ]
    }

    /// The row as it will read back after a write/parse cycle.
    pub fn rendered(&self) -> Self {
        let r = |v: f64| format_number(v).parse::<f64>().unwrap_or(v);
        Self {
            upstream_bits: r(self.upstream_bits),
            saving_fraction: r(self.saving_fraction),
            accuracy: r(self.accuracy),
            t_total_min_s: r(self.t_total_min_s),
            t_total_mean_s: r(self.t_total_mean_s),
            t_total_max_s: r(self.t_total_max_s),
            ..self.clone()
        }
    }
}

impl From<&RoundRecord> for CsvRow {
    fn from(r: &RoundRecord) -> Self {
        Self {
            round: r.round,
            mode: r.mode,
            n_selected: r.n_selected,
            n_involved: r.n_involved,
            upstream_bits: r.upstream_bits,
            saving_fraction: r.saving_fraction,
            accuracy: r.accuracy,
            t_total_min_s: r.t_total_min_s,
            t_total_mean_s: r.t_total_mean_s,
            t_total_max_s: r.t_total_max_s,
        }
    }
}

pub fn records_csv(records: &[RoundRecord]) -> Vec<u8> {
    let mut w = csv_writer();
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in records {
        w.write_record(CsvRow::from(r).fields()).expect("in-memory write");
    }
    finish(w)
}

pub fn write_csv(records: &[RoundRecord], path: &Path) -> Result<()> {
    write_atomic(path, &records_csv(records))
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let bad = |m: String| Error::Parse {
        path: path.to_path_buf(),
        message: m,
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| bad(format!("column {}: `{}` is not a number", CSV_HEADER[i], &rec[i])))
        };
        let int = |i: usize| -> Result<usize> {
            rec[i]
                .parse()
                .map_err(|_| bad(format!("column {}: `{}` is not an integer", CSV_HEADER[i], &rec[i])))
        };
        rows.push(CsvRow {
            round: int(0)? as u32,
            mode: rec[1].parse()?,
            n_selected: int(2)?,
            n_involved: int(3)?,
            upstream_bits: num(4)?,
            saving_fraction: num(5)?,
            accuracy: num(6)?,
            t_total_min_s: num(7)?,
            t_total_mean_s: num(8)?,
            t_total_max_s: num(9)?,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub rounds: usize,
    pub mean_involved: f64,
    pub min_involved: usize,
    pub max_involved: usize,
    pub mean_upstream_bits: f64,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    pub total_simulated_time_s: f64,
}

impl ReportSummary {
    pub fn from_records(records: &[RoundRecord]) -> Self {
        let n = records.len();
        let mean = |f: &dyn Fn(&RoundRecord) -> f64| {
            if n == 0 {
                0.0
            } else {
                records.iter().map(f).sum::<f64>() / n as f64
            }
        };
        Self {
            rounds: n,
            mean_involved: mean(&|r| r.n_involved as f64),
            min_involved: records.iter().map(|r| r.n_involved).min().unwrap_or(0),
            max_involved: records.iter().map(|r| r.n_involved).max().unwrap_or(0),
            mean_upstream_bits: mean(&|r| r.upstream_bits),
            final_accuracy: records.last().map_or(0.0, |r| r.accuracy),
            best_accuracy: records.iter().map(|r| r.accuracy).fold(0.0, f64::max),
            total_simulated_time_s: records.iter().map(|r| r.round_time_s).sum(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub records_path: String,
    #[serde(skip)]
    pub records: Vec<RoundRecord>,
    pub summary: ReportSummary,
}

impl ExperimentReport {
    pub fn new(config: ExperimentConfig, records: Vec<RoundRecord>, records_path: impl Into<String>) -> Self {
        Self {
            summary: ReportSummary::from_records(&records),
            config,
            records_path: records_path.into(),
            records,
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
    bytes.push(b'\n');
    bytes
}

pub fn write_json_summary(report: &ExperimentReport, path: &Path) -> Result<()> {
    write_atomic(path, &to_json(report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub config: ExperimentConfig,
    pub classical_records_path: String,
    pub sfl_records_path: String,
    pub summary: ComparisonSummary,
    /// Per-round saving of the two-step mode over the classical mode.
    pub savings: Vec<f64>,
    pub classical: ReportSummary,
    pub sfl: ReportSummary,
}

pub fn write_comparison_json(report: &ComparisonReport, path: &Path) -> Result<()> {
    write_atomic(path, &to_json(report))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub n_selected: usize,
    pub mode: Mode,
    pub mean_upstream_bits: f64,
    pub mean_involved: f64,
    pub final_accuracy: f64,
}

impl SweepRow {
    pub fn from_records(n_selected: usize, mode: Mode, records: &[RoundRecord]) -> Self {
        let s = ReportSummary::from_records(records);
        Self {
            n_selected,
            mode,
            mean_upstream_bits: s.mean_upstream_bits,
            mean_involved: s.mean_involved,
            final_accuracy: s.final_accuracy,
        }
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> Vec<u8> {
    let mut w = csv_writer();
    w.write_record(SWEEP_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.n_selected.to_string(),
            r.mode.to_string(),
            format_number(r.mean_upstream_bits),
            format_number(r.mean_involved),
            format_number(r.final_accuracy),
        ])
        .expect("in-memory write");
    }
    finish(w)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    write_atomic(path, &sweep_csv(rows))
}
