use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ktclock::clock_mc::{Sampler, SimulationParams, Start};
use ktclock::estimators::{measure, EdgeConvention};
use ktclock::lattice::build_lattice;
use ktclock::quantum_oracle::verify_mapping;
use ktclock::runner::{analyze, run_sweep, AnalysisOptions, ReportKind, ResultStore, SweepConfig, SweepOptions};
use ktclock::{Error, Result};

#[derive(Parser)]
#[command(name = "ktclock", version, about = "Clock-model Monte Carlo and entanglement analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a single (d, L, T) point and print its observables.
    Simulate(SimulateArgs),
    /// Run a parameter sweep from a JSON config.
    Sweep(SweepArgs),
    /// Build a report (derivatives, q-peak, fits, crossings) from sweep output.
    Analyze(AnalyzeArgs),
    /// Compare the deformed-state marginals with exact clock-model enumeration.
    VerifyMapping(VerifyArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON file with the simulation parameters; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(short = 'd', long)]
    d: Option<usize>,
    #[arg(short = 'L', long = "L")]
    l: Option<usize>,
    #[arg(short = 'T', long = "T")]
    temperature: Option<f64>,
    #[arg(long)]
    thermalization_sweeps: Option<usize>,
    #[arg(long)]
    measurement_sweeps: Option<usize>,
    #[arg(long)]
    measurement_interval: Option<usize>,
    #[arg(long)]
    pair_measurement_interval: Option<usize>,
    /// metropolis or metropolis+cluster
    #[arg(long)]
    sampler: Option<Sampler>,
    #[arg(long)]
    random_start: bool,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the record as JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to the config's "out").
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "KTCLOCK_WORKERS")]
    workers: Option<usize>,
    /// Keep completed cells from an earlier run of the same config.
    #[arg(long)]
    resume: bool,
    /// Stop after computing this many new cells.
    #[arg(long, hide = true)]
    max_new_cells: Option<usize>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// derivatives, q-peak, fits or crossings
    kind: ReportKind,
    /// Directory holding the sweep CSVs.
    #[arg(long)]
    input: PathBuf,
    /// Report directory (defaults to the input directory).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_window)]
    fit_linear_window: Option<(f64, f64)>,
    #[arg(long, value_parser = parse_window)]
    fit_power_window: Option<(f64, f64)>,
    /// GE, GEt, Q, Um, E_mean or Cv
    #[arg(long)]
    observable: Option<String>,
    /// Gaussian smoothing width in grid steps for derivatives.
    #[arg(long, default_value_t = 1.0)]
    smoothing: f64,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(short = 'd', long, value_delimiter = ',', default_values_t = vec![2usize, 3])]
    d: Vec<usize>,
    #[arg(short = 'L', long = "L", value_delimiter = ',', default_values_t = vec![2usize])]
    l: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.2f64, 0.5, 1.0])]
    beta: Vec<f64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_window(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected a,b")?;
    let a: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    if !(a < b) {
        return Err(format!("window start {a} must be below end {b}"));
    }
    Ok((a, b))
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, format!("{text}\n")).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        }),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut p = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            serde_json::from_str::<SimulationParams>(&text)?
        }
        None => {
            let (Some(d), Some(l), Some(t)) = (args.d, args.l, args.temperature) else {
                return Err(Error::InvalidParameter("simulate needs --config or all of -d, -L, -T".into()));
            };
            SimulationParams::new(d, l, t)
        }
    };
    if let Some(v) = args.d {
        p.d = v;
    }
    if let Some(v) = args.l {
        p.l = v;
    }
    if let Some(v) = args.temperature {
        p.temperature = v;
    }
    if let Some(v) = args.thermalization_sweeps {
        p.thermalization_sweeps = v;
    }
    if let Some(v) = args.measurement_sweeps {
        p.measurement_sweeps = v;
    }
    if let Some(v) = args.measurement_interval {
        p.measurement_interval = v;
    }
    if let Some(v) = args.pair_measurement_interval {
        p.pair_measurement_interval = v;
    }
    if let Some(v) = args.sampler {
        p.sampler = v;
    }
    if args.random_start {
        p.start = Start::Random;
    }
    if let Some(v) = args.bins {
        p.bins = v;
    }
    if let Some(v) = args.seed {
        p.seed = v;
    }
    let geom = build_lattice(p.l)?;
    let (acc, stats) = measure(&geom, &p, EdgeConvention::default())?;
    let record = acc.finish(p.temperature, p.seed)?;
    let report = serde_json::json!({ "params": p, "record": record, "stats": stats });
    emit(args.out.as_ref(), &serde_json::to_string_pretty(&report)?)
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut config = SweepConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let out = args
        .out
        .or_else(|| config.out.clone())
        .ok_or_else(|| Error::InvalidParameter("no output directory: pass --out or set \"out\"".into()))?;
    let summary = run_sweep(
        &config,
        &SweepOptions {
            out,
            workers: args.workers,
            resume: args.resume,
            max_new_cells: args.max_new_cells,
        },
    )?;
    eprintln!(
        "{} records ({} new) in {}",
        summary.records.len(),
        summary.newly_computed,
        summary.out.display()
    );
    Ok(())
}

fn analyze_cmd(args: AnalyzeArgs) -> Result<()> {
    let store = ResultStore::load(&args.input)?;
    let out = args.out.unwrap_or_else(|| args.input.clone());
    let options = AnalysisOptions {
        observable: args.observable,
        linear_window: args.fit_linear_window,
        power_window: args.fit_power_window,
        smoothing: args.smoothing,
        ..AnalysisOptions::default()
    };
    let report = analyze(&store, args.kind, &options, &out)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn verify(args: VerifyArgs) -> Result<bool> {
    let mut reports = Vec::new();
    for &d in &args.d {
        for &l in &args.l {
            for &beta in &args.beta {
                reports.push(verify_mapping(d, l, beta)?);
            }
        }
    }
    let pass = reports.iter().all(|r| r.pass);
    for r in &reports {
        eprintln!(
            "{} d={} L={} beta={} single {:.3e} pair {:.3e}",
            if r.pass { "PASS" } else { "FAIL" },
            r.d,
            r.l,
            r.beta,
            r.max_single_deviation,
            r.max_pair_deviation
        );
    }
    let doc = serde_json::json!({ "pass": pass, "reports": reports });
    emit(args.out.as_ref(), &serde_json::to_string_pretty(&doc)?)?;
    Ok(pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a).map(|_| true),
        Command::Sweep(a) => sweep(a).map(|_| true),
        Command::Analyze(a) => analyze_cmd(a).map(|_| true),
        Command::VerifyMapping(a) => verify(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
