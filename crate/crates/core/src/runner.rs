//! Sweep orchestration: config parsing, the ordered task list, parallel
//! execution with a single writer, checkpoint/resume, CSV output and the
//! analysis reports built from stored series.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{self, Crossing, FitResult, Intersection, Peak, Series};
use crate::clock_mc::{cell_seed, replica_seed, RunStats, Sampler, SimulationParams, Start};
use crate::error::{Error, Result};
use crate::estimators::{measure, EdgeConvention, ObservableRecord};
use crate::lattice::build_lattice;

pub const CHECKPOINT_FILE: &str = "checkpoint.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Temperature grid: either `{"min", "max", "step"}` or `{"values": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TemperatureGrid {
    Range { min: f64, max: f64, step: f64 },
    List { values: Vec<f64> },
}

impl TemperatureGrid {
    /// Grid points, rounded to 1e-9 so that `min + k step` is reproducible.
    pub fn values(&self) -> Result<Vec<f64>> {
        let values = match self {
            TemperatureGrid::Range { min, max, step } => {
                if !(*step > 0.0) || !(max >= min) {
                    return Err(Error::InvalidParameter(format!(
                        "temperature range needs step > 0 and max >= min, got {min}..{max} step {step}"
                    )));
                }
                let n = ((max - min) / step + 1e-9).floor() as usize;
                (0..=n).map(|k| ((min + k as f64 * step) * 1e9).round() / 1e9).collect::<Vec<_>>()
            }
            TemperatureGrid::List { values } => values.clone(),
        };
        if values.is_empty() {
            return Err(Error::InvalidParameter("empty temperature grid".into()));
        }
        if let Some(t) = values.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::InvalidParameter(format!("temperatures must be positive, got {t}")));
        }
        Ok(values)
    }
}

/// Schedule fields; every one may be overridden per (d, L) block.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, rename = "L", skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thermalization_sweeps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement_sweeps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement_interval: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_measurement_interval: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<Sampler>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Start>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_budget_bytes: Option<u64>,
}

impl ScheduleOverride {
    fn matches(&self, d: usize, l: usize) -> bool {
        self.d.is_none_or(|x| x == d) && self.l.is_none_or(|x| x == l)
    }

    fn apply(&self, p: &mut SimulationParams) {
        if let Some(v) = self.thermalization_sweeps {
            p.thermalization_sweeps = v;
        }
        if let Some(v) = self.measurement_sweeps {
            p.measurement_sweeps = v;
        }
        if let Some(v) = self.measurement_interval {
            p.measurement_interval = v;
        }
        if let Some(v) = self.pair_measurement_interval {
            p.pair_measurement_interval = v;
        }
        if let Some(v) = self.sampler {
            p.sampler = v;
        }
        if let Some(v) = self.start {
            p.start = v;
        }
        if let Some(v) = self.bins {
            p.bins = v;
        }
        if let Some(v) = self.memory_budget_bytes {
            p.memory_budget_bytes = v;
        }
    }
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub d: Vec<usize>,
    #[serde(rename = "L")]
    pub l: Vec<usize>,
    #[serde(rename = "T")]
    pub temperatures: TemperatureGrid,
    #[serde(default = "one")]
    pub replicas: usize,
    /// Applied to every cell before the per-block overrides.
    #[serde(default)]
    pub defaults: ScheduleOverride,
    /// Later entries win.
    #[serde(default)]
    pub overrides: Vec<ScheduleOverride>,
    #[serde(default)]
    pub convention: EdgeConvention,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

/// One (d, L, T) point of the ordered task list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    pub d: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "T")]
    pub temperature: f64,
}

impl Cell {
    pub fn key(&self) -> String {
        format!("d={} L={} T={}", self.d, self.l, self.temperature)
    }
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SweepConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SweepConfig::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d.is_empty() || self.l.is_empty() {
            return Err(Error::InvalidParameter("d and L lists must be non-empty".into()));
        }
        if self.replicas == 0 {
            return Err(Error::InvalidParameter("replicas must be >= 1".into()));
        }
        self.temperatures.values()?;
        for cell in self.cells()? {
            self.params_for(&cell, 0).validate()?;
        }
        Ok(())
    }

    /// Task list in (d, L, T) config order.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let ts = self.temperatures.values()?;
        let mut out = Vec::with_capacity(self.d.len() * self.l.len() * ts.len());
        for &d in &self.d {
            for &l in &self.l {
                for &t in &ts {
                    out.push(Cell {
                        index: out.len(),
                        d,
                        l,
                        temperature: t,
                    });
                }
            }
        }
        Ok(out)
    }

    pub fn cell_seed(&self, cell: &Cell) -> u64 {
        cell_seed(self.seed, cell.d, cell.l, cell.temperature)
    }

    /// Full parameters of one replica run.
    pub fn params_for(&self, cell: &Cell, replica: usize) -> SimulationParams {
        let mut p = SimulationParams::new(cell.d, cell.l, cell.temperature);
        self.defaults.apply(&mut p);
        for o in self.overrides.iter().filter(|o| o.matches(cell.d, cell.l)) {
            o.apply(&mut p);
        }
        p.seed = replica_seed(self.cell_seed(cell), replica);
        p
    }

    /// SHA-256 over the canonical JSON of everything that affects results.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.workers = None;
        c.out = None;
        let text = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    pub out: PathBuf,
    pub workers: Option<usize>,
    pub resume: bool,
    /// Stop after this many newly computed cells, as if interrupted.
    pub max_new_cells: Option<usize>,
}

/// One line of the checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    pub record: ObservableRecord,
    pub replica_seeds: Vec<u64>,
    pub stats: Vec<RunStats>,
    pub seconds: f64,
    pub finished_unix: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: SweepConfig,
    pub config_hash: String,
    pub code_version: String,
    pub workers: usize,
    pub cells_total: usize,
    pub cells_completed: usize,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub runs: Vec<ManifestRun>,
    pub failed: Vec<String>,
    pub csv_files: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRun {
    pub d: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "T")]
    pub temperature: f64,
    pub cell_seed: u64,
    pub replica_seeds: Vec<u64>,
    pub params: SimulationParams,
    pub seconds: f64,
    pub finished_unix: u64,
}

#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub out: PathBuf,
    pub records: Vec<ObservableRecord>,
    pub newly_computed: usize,
    pub csv_files: Vec<PathBuf>,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Explicit value, then the config, then all available cores.
pub fn resolve_workers(explicit: Option<usize>, config: Option<usize>) -> usize {
    explicit
        .or(config)
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Runs every replica of one cell in order and merges them bin-wise.
pub fn simulate_cell(config: &SweepConfig, cell: &Cell) -> Result<CellResult> {
    let start = Instant::now();
    let geom = build_lattice(cell.l)?;
    let mut merged = None;
    let mut stats = Vec::with_capacity(config.replicas);
    let mut seeds = Vec::with_capacity(config.replicas);
    for r in 0..config.replicas {
        let params = config.params_for(cell, r);
        let (acc, st) = measure(&geom, &params, config.convention)?;
        seeds.push(params.seed);
        stats.push(st);
        match merged.as_mut() {
            None => merged = Some(acc),
            Some(m) => m.merge(&acc)?,
        }
    }
    let record = merged
        .expect("replicas >= 1")
        .finish(cell.temperature, config.cell_seed(cell))?;
    Ok(CellResult {
        cell: cell.clone(),
        record,
        replica_seeds: seeds,
        stats,
        seconds: start.elapsed().as_secs_f64(),
        finished_unix: unix_now(),
    })
}

/// Completed cells from a checkpoint; a torn last line is ignored.
pub fn read_checkpoint(path: &Path) -> Result<Vec<CellResult>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if let Ok(r) = serde_json::from_str::<CellResult>(&line) {
            out.push(r);
        }
    }
    Ok(out)
}

fn csv_name(d: usize, l: usize) -> String {
    format!("observables_d{d}_L{l}.csv")
}

/// Writes one CSV per (d, L), rows in task order.
pub fn write_csvs(out: &Path, results: &[&CellResult]) -> Result<Vec<PathBuf>> {
    let mut groups: BTreeMap<(usize, usize), Vec<&CellResult>> = BTreeMap::new();
    for r in results {
        groups.entry((r.cell.d, r.cell.l)).or_default().push(r);
    }
    let mut files = Vec::new();
    for ((d, l), mut rows) in groups {
        rows.sort_by_key(|r| r.cell.index);
        let path = out.join(csv_name(d, l));
        let mut w = csv::Writer::from_path(&path)?;
        for r in rows {
            w.serialize(r.record)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        files.push(path);
    }
    Ok(files)
}

pub fn read_csv(path: &Path) -> Result<Vec<ObservableRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Runs every missing cell of the sweep and (re)writes CSVs and manifest.
pub fn run_sweep(config: &SweepConfig, options: &SweepOptions) -> Result<SweepSummary> {
    config.validate()?;
    let out = &options.out;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let hash = config.hash();
    let manifest_path = out.join(MANIFEST_FILE);
    let checkpoint_path = out.join(CHECKPOINT_FILE);
    let started_unix = unix_now();

    let previous = if options.resume {
        if manifest_path.exists() {
            let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
            let m: Manifest = serde_json::from_str(&text)?;
            if m.config_hash != hash {
                return Err(Error::ConfigMismatch(format!(
                    "{} was written for config {}, current config is {}",
                    out.display(),
                    m.config_hash,
                    hash
                )));
            }
        }
        read_checkpoint(&checkpoint_path)?
    } else {
        if checkpoint_path.exists() {
            fs::remove_file(&checkpoint_path).map_err(|e| Error::io(&checkpoint_path, e))?;
        }
        Vec::new()
    };

    let cells = config.cells()?;
    let mut done: HashMap<usize, CellResult> = HashMap::new();
    for r in previous {
        if cells.get(r.cell.index).is_some_and(|c| *c == r.cell) {
            done.insert(r.cell.index, r);
        }
    }
    let mut pending: Vec<Cell> = cells.iter().filter(|c| !done.contains_key(&c.index)).cloned().collect();
    if let Some(max) = options.max_new_cells {
        pending.truncate(max);
    }

    // manifest first, so that a resumed run can check the hash even after a kill
    let workers = resolve_workers(options.workers, config.workers);
    let mut manifest = Manifest {
        config: config.clone(),
        config_hash: hash,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        workers,
        cells_total: cells.len(),
        cells_completed: done.len(),
        started_unix,
        finished_unix: 0,
        runs: Vec::new(),
        failed: Vec::new(),
        csv_files: Vec::new(),
    };
    write_json(&manifest_path, &manifest)?;

    let mut checkpoint = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&checkpoint_path)
        .map_err(|e| Error::io(&checkpoint_path, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?;
    let (tx, rx) = mpsc::channel::<(Cell, Result<CellResult>)>();
    let newly_computed = pending.len();
    let mut failed = Vec::new();
    std::thread::scope(|scope| -> Result<()> {
        let tasks = &pending;
        scope.spawn(move || {
            pool.install(|| {
                tasks.par_iter().for_each_with(tx, |tx, cell| {
                    let _ = tx.send((cell.clone(), simulate_cell(config, cell)));
                });
            });
        });
        // single writer: the coordinator appends each finished cell
        for (cell, result) in rx {
            match result {
                Ok(r) => {
                    let line = serde_json::to_string(&r)?;
                    writeln!(checkpoint, "{line}").map_err(|e| Error::io(&checkpoint_path, e))?;
                    checkpoint.flush().map_err(|e| Error::io(&checkpoint_path, e))?;
                    done.insert(cell.index, r);
                }
                Err(e) => failed.push(format!("{}: {e}", cell.key())),
            }
        }
        Ok(())
    })?;
    failed.sort();

    let mut finished: Vec<&CellResult> = done.values().collect();
    finished.sort_by_key(|r| r.cell.index);
    let csv_files = write_csvs(out, &finished)?;
    manifest.cells_completed = finished.len();
    manifest.finished_unix = unix_now();
    manifest.failed = failed.clone();
    manifest.csv_files = csv_files
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    manifest.runs = finished
        .iter()
        .map(|r| ManifestRun {
            d: r.cell.d,
            l: r.cell.l,
            temperature: r.cell.temperature,
            cell_seed: config.cell_seed(&r.cell),
            replica_seeds: r.replica_seeds.clone(),
            params: config.params_for(&r.cell, 0),
            seconds: r.seconds,
            finished_unix: r.finished_unix,
        })
        .collect();
    write_json(&manifest_path, &manifest)?;

    if !failed.is_empty() {
        return Err(Error::PartialFailure { failed });
    }
    Ok(SweepSummary {
        out: out.clone(),
        records: finished.iter().map(|r| r.record).collect(),
        newly_computed,
        csv_files,
    })
}

/// All records of a result directory, keyed by (d, L) and sorted by T.
#[derive(Debug, Clone, Default)]
pub struct ResultStore {
    pub groups: BTreeMap<(usize, usize), Vec<ObservableRecord>>,
}

impl ResultStore {
    pub fn from_records(records: impl IntoIterator<Item = ObservableRecord>) -> Self {
        let mut groups: BTreeMap<(usize, usize), Vec<ObservableRecord>> = BTreeMap::new();
        for r in records {
            groups.entry((r.d, r.l)).or_default().push(r);
        }
        for rows in groups.values_mut() {
            rows.sort_by(|a, b| a.temperature.total_cmp(&b.temperature));
            rows.dedup_by(|a, b| a.temperature == b.temperature);
        }
        ResultStore { groups }
    }

    /// Reads every `observables_d*_L*.csv` in `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let mut records = Vec::new();
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("observables_d") && n.ends_with(".csv"))
            })
            .collect();
        paths.sort();
        for p in paths {
            records.extend(read_csv(&p)?);
        }
        Ok(ResultStore::from_records(records))
    }

    pub fn series(&self, d: usize, l: usize, observable: &str) -> Result<Series> {
        let missing = || Error::MissingSeries(format!("d={d} L={l} observable={observable}"));
        let rows = self.groups.get(&(d, l)).ok_or_else(missing)?;
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut err = Vec::new();
        for r in rows {
            let (v, e) = r.observable(observable).ok_or_else(missing)?;
            x.push(r.temperature);
            y.push(v);
            err.push(e);
        }
        Ok(Series::new(x, y, Some(err))?.with_meta(d, l, observable))
    }

    pub fn ds(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.groups.keys().map(|k| k.0).collect();
        v.dedup();
        v
    }

    pub fn sizes(&self, d: usize) -> Vec<usize> {
        self.groups.keys().filter(|k| k.0 == d).map(|k| k.1).collect()
    }

    fn pairs(&self) -> Vec<(usize, usize)> {
        self.groups.keys().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportKind {
    Derivatives,
    QPeak,
    Fits,
    Crossings,
}

impl std::str::FromStr for ReportKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "derivatives" => Ok(ReportKind::Derivatives),
            "q-peak" => Ok(ReportKind::QPeak),
            "fits" => Ok(ReportKind::Fits),
            "crossings" => Ok(ReportKind::Crossings),
            other => Err(Error::InvalidParameter(format!(
                "unknown report {other:?} (derivatives, q-peak, fits, crossings)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    /// Observable for q-peak and fits (default Q); for derivatives, the only
    /// observable differentiated (default GE and GEt).
    pub observable: Option<String>,
    /// Default `[T_Q + 0.05, 0.85]`.
    pub linear_window: Option<(f64, f64)>,
    /// Default `[1.05, 2.0]`.
    pub power_window: Option<(f64, f64)>,
    /// Gaussian width in grid steps.
    pub smoothing: f64,
    /// Where to look for the linear/power-law intersection.
    pub intersection_range: (f64, f64),
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            observable: None,
            linear_window: None,
            power_window: None,
            smoothing: 1.0,
            intersection_range: (0.5, 1.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeEntry {
    pub d: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub observable: String,
    pub argmax: f64,
    pub max_slope: f64,
    pub plot_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakEntry {
    pub d: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub observable: String,
    pub peak: Peak,
    pub plot_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitEntry {
    pub d: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub observable: String,
    pub peak: Option<Peak>,
    pub linear: FitResult,
    pub power_law: FitResult,
    pub intersection: Option<Intersection>,
    pub intersection_error: Option<String>,
    pub plot_files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingEntry {
    pub d: usize,
    pub sizes: Vec<usize>,
    pub crossing: Crossing,
    pub plot_files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AnalysisReport {
    Derivatives { entries: Vec<DerivativeEntry> },
    QPeak { entries: Vec<PeakEntry> },
    Fits { entries: Vec<FitEntry> },
    Crossings { entries: Vec<CrossingEntry> },
}

/// Two whitespace-separated columns, one point per line.
pub fn write_plot_data(path: &Path, x: &[f64], y: &[f64]) -> Result<()> {
    let mut text = String::new();
    for (a, b) in x.iter().zip(y) {
        text.push_str(&format!("{a} {b}\n"));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn plot_name(observable: &str, d: usize, l: usize, suffix: &str) -> String {
    let clean: String = observable
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    format!("{clean}{suffix}_d{d}_L{l}.dat")
}

fn curve_on(fit: &FitResult, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    let n = 200;
    let x: Vec<f64> = (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect();
    let y = x.iter().map(|&v| fit.eval(v)).collect();
    (x, y)
}

/// Builds one report from `store`, writing `<kind>.json` and plot files into `out`.
pub fn analyze(store: &ResultStore, kind: ReportKind, options: &AnalysisOptions, out: &Path) -> Result<AnalysisReport> {
    if store.groups.is_empty() {
        return Err(Error::MissingSeries("result store is empty".into()));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let report = match kind {
        ReportKind::Derivatives => {
            let observables: Vec<String> = match &options.observable {
                Some(o) => vec![o.clone()],
                None => vec!["GE".into(), "GEt".into()],
            };
            let mut entries = Vec::new();
            for (d, l) in store.pairs() {
                for obs in &observables {
                    let s = store.series(d, l, obs)?;
                    let ds = analysis::derivative(&s, options.smoothing)?;
                    let k = ds.argmax().expect("non-empty");
                    let file = plot_name(obs, d, l, "_dT");
                    write_plot_data(&out.join(&file), &ds.x, &ds.y)?;
                    entries.push(DerivativeEntry {
                        d,
                        l,
                        observable: obs.clone(),
                        argmax: ds.x[k],
                        max_slope: ds.y[k],
                        plot_file: file,
                    });
                }
            }
            AnalysisReport::Derivatives { entries }
        }
        ReportKind::QPeak => {
            let obs = options.observable.clone().unwrap_or_else(|| "Q".into());
            let mut entries = Vec::new();
            for (d, l) in store.pairs() {
                let s = store.series(d, l, &obs)?;
                let peak = analysis::find_peak(&s)?;
                let file = plot_name(&obs, d, l, "");
                write_plot_data(&out.join(&file), &s.x, &s.y)?;
                entries.push(PeakEntry {
                    d,
                    l,
                    observable: obs.clone(),
                    peak,
                    plot_file: file,
                });
            }
            AnalysisReport::QPeak { entries }
        }
        ReportKind::Fits => {
            let obs = options.observable.clone().unwrap_or_else(|| "Q".into());
            let mut entries = Vec::new();
            for (d, l) in store.pairs() {
                let s = store.series(d, l, &obs)?;
                let (peak, linear_window) = match options.linear_window {
                    Some(w) => (analysis::find_peak(&s).ok(), w),
                    None => {
                        let p = analysis::find_peak(&s)?;
                        (Some(p), (p.x + 0.05, 0.85))
                    }
                };
                let power_window = options.power_window.unwrap_or((1.05, 2.0));
                let linear = analysis::fit_linear(&s, Some(linear_window))?;
                let power_law = analysis::fit_powerlaw(&s, Some(power_window))?;
                let (lo, hi) = options.intersection_range;
                let (intersection, intersection_error) =
                    match analysis::first_intersection(&linear, &power_law, lo, hi) {
                        Ok(ix) => (Some(ix), None),
                        Err(e) => (None, Some(e.to_string())),
                    };
                let data_file = plot_name(&obs, d, l, "");
                write_plot_data(&out.join(&data_file), &s.x, &s.y)?;
                let lin_file = plot_name(&obs, d, l, "_linear_fit");
                let (cx, cy) = curve_on(&linear, s.x[0].max(lo.min(linear_window.0)), s.x[s.len() - 1]);
                write_plot_data(&out.join(&lin_file), &cx, &cy)?;
                let pow_file = plot_name(&obs, d, l, "_power_fit");
                let (px, py) = curve_on(&power_law, s.x[0].max(lo.min(linear_window.0)), s.x[s.len() - 1]);
                write_plot_data(&out.join(&pow_file), &px, &py)?;
                entries.push(FitEntry {
                    d,
                    l,
                    observable: obs.clone(),
                    peak,
                    linear,
                    power_law,
                    intersection,
                    intersection_error,
                    plot_files: vec![data_file, lin_file, pow_file],
                });
            }
            AnalysisReport::Fits { entries }
        }
        ReportKind::Crossings => {
            let obs = options.observable.clone().unwrap_or_else(|| "Um".into());
            let mut entries = Vec::new();
            for d in store.ds() {
                let sizes = store.sizes(d);
                if sizes.len() < 2 {
                    return Err(Error::MissingSeries(format!(
                        "d={d}: crossings need at least two sizes, found L={sizes:?}"
                    )));
                }
                let series = sizes
                    .iter()
                    .map(|&l| store.series(d, l, &obs))
                    .collect::<Result<Vec<_>>>()?;
                let crossing = analysis::cumulant_crossing(&series)?;
                let mut plot_files = Vec::new();
                for s in &series {
                    let file = plot_name(&obs, d, s.meta.l, "");
                    write_plot_data(&out.join(&file), &s.x, &s.y)?;
                    plot_files.push(file);
                }
                entries.push(CrossingEntry {
                    d,
                    sizes,
                    crossing,
                    plot_files,
                });
            }
            AnalysisReport::Crossings { entries }
        }
    };
    let name = match kind {
        ReportKind::Derivatives => "derivatives.json",
        ReportKind::QPeak => "q-peak.json",
        ReportKind::Fits => "fits.json",
        ReportKind::Crossings => "crossings.json",
    };
    write_json(&out.join(name), &report)?;
    Ok(report)
}
