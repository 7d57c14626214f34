//! Command-line front end. Data files go to the output directory; logs go to
//! standard error.
//!
//! Precedence: command-line flags override the config file, which overrides
//! built-in defaults. `SFLPON_OUT_DIR` supplies the output directory when
//! `--out` is absent.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::config::{config_schema, load_config};
use crate::error::{Error, Result};
use crate::orchestrator::{compare_modes, run_experiment, ExperimentConfig, Mode};
use crate::reporting::{
    write_comparison_json, write_csv, write_json_summary, write_sweep_csv, ComparisonReport,
    ExperimentReport, ReportSummary, SweepRow,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "sflpon", version, about = "Federated learning over a PON: classical vs two-step aggregation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write records.csv and summary.json.
    Run(CommonArgs),
    /// Run both modes on identical seeds and write paired CSVs plus comparison.json.
    Compare(CommonArgs),
    /// Compare both modes for several N and write sweep.csv.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated list of N values.
        #[arg(long, value_delimiter = ',', required = true)]
        n_values: Vec<usize>,
    },
    /// Print the JSON schema of the configuration file.
    Schema,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Configuration file (JSON). Defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "SFLPON_OUT_DIR", default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = ["classical", "sfl"])]
    pub mode: Option<String>,
    /// Clients selected per round (N).
    #[arg(long)]
    pub clients: Option<usize>,
    #[arg(long)]
    pub rounds: Option<u32>,
}

impl CommonArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(mode) = &self.mode {
            cfg.mode = mode.parse()?;
        }
        if let Some(n) = self.clients {
            cfg.n_selected_per_round = n;
        }
        if let Some(r) = self.rounds {
            cfg.n_rounds = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn cmd_run(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    prepare_out(out)?;
    let records = run_experiment(cfg)?;
    let csv_name = "records.csv";
    write_csv(&records, &out.join(csv_name))?;
    let report = ExperimentReport::new(cfg.clone(), records, csv_name);
    write_json_summary(&report, &out.join("summary.json"))?;
    log::info!(
        "{} rounds ({}): final accuracy {:.4}, mean involved {:.2}",
        report.summary.rounds,
        cfg.mode,
        report.summary.final_accuracy,
        report.summary.mean_involved
    );
    Ok(())
}

pub fn cmd_compare(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    prepare_out(out)?;
    let cmp = compare_modes(cfg)?;
    let classical_name = "records_classical.csv";
    let sfl_name = "records_sfl.csv";
    write_csv(&cmp.classical, &out.join(classical_name))?;
    write_csv(&cmp.sfl, &out.join(sfl_name))?;
    let report = ComparisonReport {
        config: cfg.clone(),
        classical_records_path: classical_name.into(),
        sfl_records_path: sfl_name.into(),
        summary: cmp.summary.clone(),
        savings: cmp.savings.clone(),
        classical: ReportSummary::from_records(&cmp.classical),
        sfl: ReportSummary::from_records(&cmp.sfl),
    };
    write_comparison_json(&report, &out.join("comparison.json"))?;
    log::info!(
        "N={}: mean saving {:.4}, mean involved gap {:.2}, final accuracy gap {:.4}",
        cfg.n_selected_per_round,
        cmp.summary.mean_saving,
        cmp.summary.mean_involved_gap,
        cmp.summary.final_accuracy_gap
    );
    Ok(())
}

/// Compares both modes for every N in `n_values`; rows are ordered by the
/// given N order, classical before sfl.
pub fn sweep_rows(cfg: &ExperimentConfig, n_values: &[usize]) -> Result<Vec<SweepRow>> {
    let per_n: Vec<Vec<SweepRow>> = n_values
        .par_iter()
        .map(|&n| {
            let cfg = ExperimentConfig {
                n_selected_per_round: n,
                ..cfg.clone()
            };
            let cmp = compare_modes(&cfg)?;
            Ok(vec![
                SweepRow::from_records(n, Mode::Classical, &cmp.classical),
                SweepRow::from_records(n, Mode::Sfl, &cmp.sfl),
            ])
        })
        .collect::<Result<_>>()?;
    Ok(per_n.into_iter().flatten().collect())
}

pub fn cmd_sweep(cfg: &ExperimentConfig, n_values: &[usize], out: &Path) -> Result<()> {
    if n_values.is_empty() {
        return Err(Error::config("n-values", "at least one N is required"));
    }
    for &n in n_values {
        ExperimentConfig {
            n_selected_per_round: n,
            ..cfg.clone()
        }
        .validate()?;
    }
    prepare_out(out)?;
    let rows = sweep_rows(cfg, n_values)?;
    write_sweep_csv(&rows, &out.join("sweep.csv"))
}

fn report(e: &Error) -> i32 {
    eprintln!("error: {e}");
    if e.is_config_error() {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

fn execute(common: &CommonArgs, f: impl FnOnce(&ExperimentConfig, &Path) -> Result<()>) -> i32 {
    let cfg = match common.resolve() {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    match f(&cfg, &common.out) {
        Ok(()) => EXIT_OK,
        Err(e) => report(&e),
    }
}

/// Parses `args` (including the program name) and runs the command; returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match &cli.command {
        Command::Run(common) => execute(common, cmd_run),
        Command::Compare(common) => execute(common, cmd_compare),
        Command::Sweep { common, n_values } => {
            execute(common, |cfg, out| cmd_sweep(cfg, n_values, out))
        }
        Command::Schema => {
            print!("{}", config_schema());
            EXIT_OK
        }
    }
}
