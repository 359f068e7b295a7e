use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use sensorcode::artifact::{DesignArtifact, Mode};
use sensorcode::config::ExperimentConfig;
use sensorcode::index_assign::total_distortion;
use sensorcode::scenarios::{design, simulate, SIMULATION_CSV_HEADER};
use sensorcode::Error;

mod tables;

#[derive(Parser)]
#[command(name = "sensorcode", version, about = "Design and evaluate index-reuse codes for large correlated sensor networks")]
struct Cli {
    /// Cap on worker threads used for Monte Carlo evaluation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Table,
    Dot,
}

#[derive(Clone, Copy, ValueEnum)]
enum What {
    Dendrogram,
    Factorgraph,
    Mappings,
}

#[derive(Subcommand)]
enum Command {
    /// Design quantizers, clusters, index assignments and the decoder factorization.
    Design {
        #[arg(long)]
        config: PathBuf,
        /// Quantizer resolution reused down to 2^R codewords; quantize-only when omitted.
        #[arg(long)]
        levels: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory receiving design.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode and decode fresh source samples with a stored design.
    Simulate {
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory receiving simulation.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the dendrogram or factor graph as DOT, or the mapping tables as text.
    Inspect {
        #[arg(value_enum)]
        what: What,
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the sensor-field (table1) or CEO (table2) experiment grid.
    ReproduceTables {
        #[arg(value_enum)]
        which: tables::Which,
        /// Supplies simulation budgets; scenario, rate and seed are set per cell.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seeds, comma separated; cells report the mean.
        #[arg(long, value_delimiter = ',')]
        seed: Vec<u64>,
        /// Evaluation vectors per cell and seed.
        #[arg(long)]
        samples: Option<usize>,
        /// Largest quantizer resolution tried for index reuse.
        #[arg(long)]
        max_levels: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Input(String),
    Numerical(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Parse(_) | Error::SchemaVersion { .. } | Error::Invariant { .. } => {
                Failure::Input(e.to_string())
            }
            Error::Io(_) => Failure::Io(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(format!("io: {e}"))
    }
}

type Outcome = Result<(), Failure>;

fn load_artifact(path: &Path) -> Result<DesignArtifact, Failure> {
    DesignArtifact::load(path).map_err(|e| match e {
        Error::Io(e) => Failure::Io(format!("cannot read {}: {e}", path.display())),
        e => Failure::from(e),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(1);
        }
    }
    let start = Instant::now();
    let result = match cli.command {
        Command::Design { config, levels, seed, out } => run_design(&config, levels, seed, &out, cli.format),
        Command::Simulate { artifact, samples, seed, out } => {
            run_simulate(&artifact, samples, seed, out.as_deref(), cli.format)
        }
        Command::Inspect { what, artifact, out } => run_inspect(what, &artifact, out.as_deref(), cli.format),
        Command::ReproduceTables { which, config, seed, samples, max_levels, out } => {
            let opts = tables::Options { config, seeds: seed, samples, max_levels };
            tables::run(which, &opts, out.as_deref(), cli.format)
        }
    };
    eprintln!("wall clock: {:.1} s", start.elapsed().as_secs_f64());
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn format_or(format: Option<Format>, default: Format, allowed: &[Format], what: &str) -> Result<Format, Failure> {
    let f = format.unwrap_or(default);
    if allowed.contains(&f) {
        Ok(f)
    } else {
        Err(Failure::Input(format!("{what} cannot be written as {}", f.to_possible_value().unwrap().get_name())))
    }
}

/// Writes `text` to `dir/name`, creating the directory.
pub(crate) fn write_output(dir: &Path, name: &str, text: &str) -> Result<PathBuf, Failure> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, text)?;
    Ok(path)
}

fn run_design(config: &Path, levels: Option<usize>, seed: Option<u64>, out: &Path, format: Option<Format>) -> Outcome {
    let format = format_or(format, Format::Table, &[Format::Table, Format::Csv], "a design summary")?;
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.simulation.seed = s;
    }
    let mode = match levels {
        None => Mode::Dec,
        Some(l) if l == cfg.codewords() => Mode::Dec,
        Some(l) if l < cfg.codewords() => {
            return Err(Failure::Input(format!("config: --levels {l} is below the 2^R = {} codewords", cfg.codewords())))
        }
        Some(l) => Mode::Ir { levels: l },
    };
    let artifact = design(&cfg, mode)?;
    let path = write_output(out, "design.json", &artifact.to_json())?;
    print!("{}", design_summary(&artifact, format));
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn design_summary(a: &DesignArtifact, format: Format) -> String {
    let mut s = String::new();
    let designs: Vec<(usize, Option<(f64, f64, f64)>)> = a
        .plan
        .clusters
        .iter()
        .map(|members| {
            let d = a.cluster_designs.iter().find(|d| &d.encoders == members);
            (members.len(), d.map(|d| total_distortion(d, &a.quantizers)).map(|t| (t.d_q, t.d_d, t.d)))
        })
        .collect();
    if format == Format::Csv {
        s.push_str("cluster,size,members,d_q,d_d,d\n");
        for (c, (members, (_, d))) in a.plan.clusters.iter().zip(&designs).enumerate() {
            let m: Vec<String> = members.iter().map(usize::to_string).collect();
            let (q, dd, t) = d.map_or((String::new(), String::new(), String::new()), |(q, dd, t)| {
                (format!("{q:.6}"), format!("{dd:.6}"), format!("{t:.6}"))
            });
            let _ = writeln!(s, "{c},{},{},{q},{dd},{t}", members.len(), m.join(" "));
        }
        return s;
    }
    let cfg = &a.config;
    let mode = match a.mode {
        Mode::Dec => "quantize-only".to_string(),
        Mode::Ir { levels } => format!("index reuse from L={levels}"),
    };
    let _ = writeln!(s, "scenario:        {} ({} variables)", cfg.scenario.name(), a.n_variables());
    let _ = writeln!(s, "rate:            {} bit, {} codewords, {mode}", cfg.coding.rate, cfg.codewords());
    let _ = writeln!(s, "seed:            {}", a.provenance.seed);
    let mut sizes: Vec<usize> = a.plan.clusters.iter().map(Vec::len).collect();
    sizes.sort_unstable_by(|x, y| y.cmp(x));
    let sizes: Vec<String> = sizes.iter().map(usize::to_string).collect();
    let _ = writeln!(s, "clusters:        {} (max size {}; sizes {})", a.plan.clusters.len(), a.plan.max_size, sizes.join(" "));
    let designs_seen = &a.cluster_designs;
    let distinct = (0..designs_seen.len())
        .filter(|&i| designs_seen[..i].iter().all(|d| d.assignments != designs_seen[i].assignments))
        .count();
    let _ = writeln!(s, "code designs:    {} ({distinct} distinct)", a.cluster_designs.len());
    let _ = writeln!(s, "clustering KLD:  {:.6} bit", a.plan.kld_bits);
    let _ = writeln!(s, "factorization:   {} factors, KLD {:.6} bit", a.ccre.factors.len(), a.kld_bits);
    if designs.iter().any(|(_, d)| d.is_some()) {
        let _ = writeln!(s, "\ncluster  size  d_q       d_d       d(Ψ)");
        for (c, (size, d)) in designs.iter().enumerate() {
            if let Some((q, dd, t)) = d {
                let _ = writeln!(s, "{c:<8} {size:<5} {q:<9.5} {dd:<9.5} {t:.5}");
            }
        }
    }
    s
}

fn run_simulate(artifact: &Path, samples: Option<usize>, seed: Option<u64>, out: Option<&Path>, format: Option<Format>) -> Outcome {
    let format = format_or(format, Format::Table, &[Format::Table, Format::Csv], "a simulation report")?;
    let a = load_artifact(artifact)?;
    let samples = samples.unwrap_or(a.config.simulation.eval_samples);
    let seed = seed.unwrap_or(a.config.simulation.seed);
    let report = simulate(&a, samples, seed)?;
    let csv = format!("{SIMULATION_CSV_HEADER}\n{}\n", report.csv_row(&a));
    if let Some(dir) = out {
        let path = write_output(dir, "simulation.csv", &csv)?;
        eprintln!("wrote {}", path.display());
    }
    match format {
        Format::Csv => print!("{csv}"),
        _ => {
            let snr = report.snr_db.map_or("-".to_string(), |s| format!("{s:.2}"));
            let levels = match a.mode {
                Mode::Dec => a.config.codewords(),
                Mode::Ir { levels } => levels,
            };
            println!("scenario  mode  rate  levels  samples  seed  snr_db  fallbacks");
            println!(
                "{:<9} {:<5} {:<5} {:<7} {:<8} {:<5} {:<7} {}",
                a.config.scenario.name(),
                a.mode.label(),
                a.config.coding.rate,
                levels,
                report.samples,
                report.seed,
                snr,
                report.fallbacks
            );
        }
    }
    Ok(())
}

fn run_inspect(what: What, artifact: &Path, out: Option<&Path>, format: Option<Format>) -> Outcome {
    let a = load_artifact(artifact)?;
    let (name, text) = match what {
        What::Dendrogram => {
            format_or(format, Format::Dot, &[Format::Dot], "a dendrogram")?;
            let d = a.dendrogram.as_ref().ok_or_else(|| Failure::Input("artifact: design has no dendrogram".into()))?;
            ("dendrogram.dot", d.to_dot())
        }
        What::Factorgraph => {
            format_or(format, Format::Dot, &[Format::Dot], "a factor graph")?;
            ("factorgraph.dot", a.ccre.to_dot(a.n_variables()))
        }
        What::Mappings => {
            format_or(format, Format::Table, &[Format::Table], "mapping tables")?;
            ("mappings.txt", a.mappings_text())
        }
    };
    match out {
        Some(dir) => {
            let path = write_output(dir, name, &text)?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}
