//! Experiment grids of the sensor-field and CEO studies.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use sensorcode::config::{ExperimentConfig, Scenario};
use sensorcode::scenarios::{ceo_rate_distortion_snr, run_seeds, SeedSweep, CSV_HEADER};

use crate::{format_or, write_output, Failure, Format, Outcome};

#[derive(Clone, Copy, ValueEnum)]
pub enum Which {
    /// Sensor field, β ∈ {0.5, 2}, R = 1..4.
    Table1,
    /// Gaussian CEO, λ² ∈ {0.1, 0.5}, R = 1..4.
    Table2,
}

pub struct Options {
    pub config: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub samples: Option<usize>,
    pub max_levels: Option<usize>,
}

const RATES: [u32; 4] = [1, 2, 3, 4];
const FIELD_BETAS: [f64; 2] = [0.5, 2.0];
const CEO_LAMBDAS: [f64; 2] = [0.1, 0.5];
const DEFAULT_N: usize = 100;

struct Row {
    param: f64,
    rate: u32,
    sweep: SeedSweep,
}

/// Places the grid cell on top of the base configuration, keeping the
/// network size and coding budgets of a base of the same scenario kind.
fn cell_config(base: Option<&ExperimentConfig>, which: Which, param: f64, rate: u32, opts: &Options) -> ExperimentConfig {
    let mut cfg = match (which, base.map(|b| &b.scenario)) {
        (Which::Table1, Some(&Scenario::Field { n, .. })) => ExperimentConfig::field(n, param, rate),
        (Which::Table1, _) => ExperimentConfig::field(DEFAULT_N, param, rate),
        (Which::Table2, Some(&Scenario::Ceo { n, sigma0_sq, .. })) => ExperimentConfig::ceo(n, sigma0_sq, param, rate),
        (Which::Table2, _) => ExperimentConfig::ceo(DEFAULT_N, 1.0, param, rate),
    };
    if let Some(b) = base {
        cfg.coding = b.coding.clone();
        cfg.coding.rate = rate;
        cfg.simulation = b.simulation.clone();
    }
    if let Some(m) = opts.max_levels {
        cfg.coding.max_resolution = m;
        cfg.coding.resolutions.retain(|&l| l <= m);
    }
    if let Some(s) = opts.samples {
        cfg.simulation.eval_samples = s;
    }
    cfg
}

pub fn run(which: Which, opts: &Options, out: Option<&Path>, format: Option<Format>) -> Outcome {
    let format = format_or(format, Format::Table, &[Format::Table, Format::Csv], "a results table")?;
    let base = opts.config.as_deref().map(ExperimentConfig::load).transpose()?;
    if let Some(m) = opts.max_levels {
        if !(2..=4096).contains(&m) {
            return Err(Failure::Input(format!("config: --max-levels must lie in [2, 4096], got {m}")));
        }
    }
    let seeds = if opts.seeds.is_empty() {
        vec![base.as_ref().map_or(1, |b| b.simulation.seed)]
    } else {
        opts.seeds.clone()
    };
    let params: &[f64] = match which {
        Which::Table1 => &FIELD_BETAS,
        Which::Table2 => &CEO_LAMBDAS,
    };
    let mut rows = Vec::new();
    for &param in params {
        for rate in RATES {
            let cfg = cell_config(base.as_ref(), which, param, rate, opts);
            cfg.validate()?;
            eprintln!("running {} {param} R={rate}", cfg.scenario.name());
            rows.push(Row { param, rate, sweep: run_seeds(&cfg, &seeds)? });
        }
    }
    let probe = cell_config(base.as_ref(), which, params[0], 1, opts);
    let csv = csv(&rows, &probe);
    if let Some(dir) = out {
        let name = match which {
            Which::Table1 => "table1.csv",
            Which::Table2 => "table2.csv",
        };
        let path = write_output(dir, name, &csv)?;
        eprintln!("wrote {}", path.display());
    }
    match format {
        Format::Csv => print!("{csv}"),
        _ => print!("{}", render(which, &rows, &probe, &seeds)),
    }
    Ok(())
}

fn ir_cell(sweep: &SeedSweep) -> String {
    match sweep.mean_ir() {
        None => "N.A.".into(),
        Some(ir) if ir <= sweep.mean_dec() => "N.B.".into(),
        Some(ir) => format!("{ir:.2}"),
    }
}

fn csv(rows: &[Row], probe: &ExperimentConfig) -> String {
    let param = match probe.scenario {
        Scenario::Field { .. } => "beta",
        Scenario::Ceo { .. } => "lambda_sq",
    };
    let mut s = format!("{param},{CSV_HEADER}\n");
    for row in rows {
        for report in &row.sweep.reports {
            for line in report.csv_rows() {
                let _ = writeln!(s, "{},{line}", row.param);
            }
        }
        let name = probe.scenario.name();
        let _ = writeln!(s, "{},{name},dec_mean,{},{},{:.6},,mean", row.param, row.rate, 1usize << row.rate, row.sweep.mean_dec());
        let ir = match row.sweep.mean_ir() {
            None => "N.A.".into(),
            Some(v) => format!("{v:.6}"),
        };
        let _ = writeln!(s, "{},{name},ir_mean,{},,{ir},,mean", row.param, row.rate);
    }
    s
}

fn render(which: Which, rows: &[Row], probe: &ExperimentConfig, seeds: &[u64]) -> String {
    let seeds: Vec<String> = seeds.iter().map(u64::to_string).collect();
    let mut s = String::new();
    let (title, symbol) = match probe.scenario {
        Scenario::Field { n, .. } => (format!("sensor field, N={n}"), "β"),
        Scenario::Ceo { n, sigma0_sq, .. } => (format!("Gaussian CEO, N={n}, σ₀²={sigma0_sq}"), "λ²"),
    };
    let _ = writeln!(s, "{title}; SNR in dB, mean over seeds {}", seeds.join(","));
    let _ = write!(s, "{:<16}", "");
    for r in RATES {
        let _ = write!(s, "{:>9}", format!("R={r}"));
    }
    s.push('\n');
    let mut params: Vec<f64> = rows.iter().map(|r| r.param).collect();
    params.dedup();
    for p in params {
        let cells: Vec<&Row> = rows.iter().filter(|r| r.param == p).collect();
        let mut line = |label: &str, value: &dyn Fn(&Row) -> String| {
            let _ = write!(s, "{:<16}", format!("{symbol}={p} {label}"));
            for row in &cells {
                let _ = write!(s, "{:>9}", value(row));
            }
            s.push('\n');
        };
        line("Dec", &|r| format!("{:.2}", r.sweep.mean_dec()));
        line("IR", &|r| ir_cell(&r.sweep));
        if let (Which::Table2, Scenario::Ceo { n, sigma0_sq, .. }) = (which, &probe.scenario) {
            line("R/D", &|r| format!("{:.2}", ceo_rate_distortion_snr(*n, *sigma0_sq, r.param, r.rate as f64)));
        }
    }
    s
}
