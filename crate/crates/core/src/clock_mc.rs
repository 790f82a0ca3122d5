//! Markov-chain sampling of the d-state clock model
//! `H = -Σ_<ij> cos(θ_i - θ_j)`, `θ_i = 2π n_i / d`, at temperature T = 1/(2β).

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::LatticeGeometry;

pub type McRng = ChaCha8Rng;

pub const MAX_STATES: usize = 255;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpinConfig {
    d: usize,
    spins: Vec<u8>,
}

impl SpinConfig {
    pub fn ordered(d: usize, vertices: usize) -> Self {
        SpinConfig {
            d,
            spins: vec![0; vertices],
        }
    }

    pub fn random<R: Rng + ?Sized>(d: usize, vertices: usize, rng: &mut R) -> Self {
        SpinConfig {
            d,
            spins: (0..vertices).map(|_| rng.random_range(0..d) as u8).collect(),
        }
    }

    pub fn from_values(d: usize, values: Vec<u8>) -> Result<Self> {
        check_states(d)?;
        if let Some(bad) = values.iter().find(|&&n| n as usize >= d) {
            return Err(Error::ConfigMismatch(format!(
                "spin value {bad} out of range for d = {d}"
            )));
        }
        Ok(SpinConfig { d, spins: values })
    }

    pub fn states(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[u8] {
        &self.spins
    }

    pub fn get(&self, v: usize) -> usize {
        self.spins[v] as usize
    }

    pub fn set(&mut self, v: usize, n: usize) {
        debug_assert!(n < self.d);
        self.spins[v] = n as u8;
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    pub fn angle(&self, v: usize) -> f64 {
        2.0 * PI * self.spins[v] as f64 / self.d as f64
    }

    pub(crate) fn check_against(&self, geom: &LatticeGeometry) -> Result<()> {
        if self.spins.len() != geom.vertex_count() {
            return Err(Error::ConfigMismatch(format!(
                "config has {} spins, lattice has {} vertices",
                self.spins.len(),
                geom.vertex_count()
            )));
        }
        Ok(())
    }
}

fn check_states(d: usize) -> Result<()> {
    if !(2..=MAX_STATES).contains(&d) {
        return Err(Error::InvalidParameter(format!(
            "d = {d} outside supported range 2..={MAX_STATES}"
        )));
    }
    Ok(())
}

/// `cos(2πk/d)` and `sin(2πk/d)` for k in 0..d.
#[derive(Debug, Clone)]
pub struct ClockTable {
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

impl ClockTable {
    pub fn new(d: usize) -> Self {
        let angle = |k: usize| 2.0 * PI * k as f64 / d as f64;
        ClockTable {
            cos: (0..d).map(|k| angle(k).cos()).collect(),
            sin: (0..d).map(|k| angle(k).sin()).collect(),
        }
    }

    /// Bond energy `-cos(θ_a - θ_b)`.
    #[inline]
    pub fn bond(&self, a: usize, b: usize) -> f64 {
        let d = self.cos.len();
        -self.cos[(a + d - b) % d]
    }
}

/// Total energy `-Σ_edges cos(θ_tail - θ_head)`.
pub fn energy(geom: &LatticeGeometry, config: &SpinConfig) -> Result<f64> {
    config.check_against(geom)?;
    let table = ClockTable::new(config.d);
    Ok(energy_with(geom, config, &table))
}

pub(crate) fn energy_with(geom: &LatticeGeometry, config: &SpinConfig, table: &ClockTable) -> f64 {
    geom.edges()
        .iter()
        .map(|e| table.bond(config.get(e.tail), config.get(e.head)))
        .sum()
}

/// Energy change from setting `v` to `new`.
#[inline]
pub(crate) fn local_delta(
    geom: &LatticeGeometry,
    config: &SpinConfig,
    table: &ClockTable,
    v: usize,
    new: usize,
) -> f64 {
    let old = config.get(v);
    geom.neighbors(v)
        .iter()
        .map(|&j| {
            let nj = config.get(j);
            table.bond(new, nj) - table.bond(old, nj)
        })
        .sum()
}

/// Metropolis acceptance `min(1, exp(-ΔE/T))`.
#[inline]
pub fn metropolis_acceptance(delta_e: f64, temperature: f64) -> f64 {
    if delta_e <= 0.0 {
        1.0
    } else {
        (-delta_e / temperature).exp()
    }
}

/// Probability that one single-site update at `v` moves the spin to `new`.
pub fn site_transition_probability(
    geom: &LatticeGeometry,
    config: &SpinConfig,
    v: usize,
    new: usize,
    temperature: f64,
) -> f64 {
    let table = ClockTable::new(config.d);
    if new == config.get(v) {
        let others: f64 = (0..config.d)
            .filter(|&n| n != new)
            .map(|n| metropolis_acceptance(local_delta(geom, config, &table, v, n), temperature))
            .sum();
        1.0 - others / (config.d - 1) as f64
    } else {
        metropolis_acceptance(local_delta(geom, config, &table, v, new), temperature)
            / (config.d - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SweepOutcome {
    pub accepted: usize,
    pub delta_energy: f64,
}

/// One sequential Metropolis pass over all vertices. Proposals are uniform
/// over the d - 1 other states.
pub fn metropolis_sweep<R: Rng + ?Sized>(
    geom: &LatticeGeometry,
    config: &mut SpinConfig,
    temperature: f64,
    rng: &mut R,
) -> SweepOutcome {
    let table = ClockTable::new(config.d);
    metropolis_sweep_with(geom, config, &table, temperature, rng)
}

pub(crate) fn metropolis_sweep_with<R: Rng + ?Sized>(
    geom: &LatticeGeometry,
    config: &mut SpinConfig,
    table: &ClockTable,
    temperature: f64,
    rng: &mut R,
) -> SweepOutcome {
    let d = config.d;
    let mut out = SweepOutcome::default();
    for v in 0..config.len() {
        let old = config.get(v);
        let new = (old + 1 + rng.random_range(0..d - 1)) % d;
        let delta = local_delta(geom, config, table, v, new);
        if delta <= 0.0 || rng.random::<f64>() < (-delta / temperature).exp() {
            config.set(v, new);
            out.accepted += 1;
            out.delta_energy += delta;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterOutcome {
    pub size: usize,
    pub reflection: usize,
    pub delta_energy: f64,
}

/// Scratch space reused across cluster updates.
#[derive(Debug, Clone, Default)]
pub struct ClusterScratch {
    mark: Vec<u32>,
    generation: u32,
    stack: Vec<usize>,
    members: Vec<usize>,
}

impl ClusterScratch {
    fn reset(&mut self, n: usize) {
        if self.mark.len() != n || self.generation == u32::MAX {
            self.mark = vec![0; n];
            self.generation = 0;
        }
        self.generation += 1;
        self.stack.clear();
        self.members.clear();
    }
}

/// One reflection-embedding cluster flip with a random reflection
/// `n -> (r - n) mod d` and a random seed site.
pub fn cluster_update<R: Rng + ?Sized>(
    geom: &LatticeGeometry,
    config: &mut SpinConfig,
    temperature: f64,
    rng: &mut R,
) -> ClusterOutcome {
    let table = ClockTable::new(config.d);
    let mut scratch = ClusterScratch::default();
    let r = rng.random_range(0..config.d);
    let seed = rng.random_range(0..config.len());
    cluster_update_with(geom, config, &table, temperature, r, seed, &mut scratch, rng)
}

#[allow(clippy::too_many_arguments)]
pub fn cluster_update_with<R: Rng + ?Sized>(
    geom: &LatticeGeometry,
    config: &mut SpinConfig,
    table: &ClockTable,
    temperature: f64,
    reflection: usize,
    seed_site: usize,
    scratch: &mut ClusterScratch,
    rng: &mut R,
) -> ClusterOutcome {
    let d = config.d;
    let reflect = |n: usize| (reflection + d - n) % d;
    scratch.reset(config.len());
    let gen = scratch.generation;

    scratch.mark[seed_site] = gen;
    config.set(seed_site, reflect(config.get(seed_site)));
    scratch.stack.push(seed_site);
    scratch.members.push(seed_site);

    while let Some(i) = scratch.stack.pop() {
        // i is already flipped; reflection is an involution
        let orig_i = reflect(config.get(i));
        for &j in geom.neighbors(i) {
            if scratch.mark[j] == gen {
                continue;
            }
            let nj = config.get(j);
            let delta = table.bond(reflect(orig_i), nj) - table.bond(orig_i, nj);
            if delta > 0.0 && rng.random::<f64>() < 1.0 - (-delta / temperature).exp() {
                scratch.mark[j] = gen;
                config.set(j, reflect(nj));
                scratch.stack.push(j);
                scratch.members.push(j);
            }
        }
    }

    // interior bonds keep their energy under a common reflection
    let mut delta_energy = 0.0;
    for &i in &scratch.members {
        let now = config.get(i);
        let before = reflect(now);
        for &j in geom.neighbors(i) {
            if scratch.mark[j] != gen {
                let nj = config.get(j);
                delta_energy += table.bond(now, nj) - table.bond(before, nj);
            }
        }
    }

    ClusterOutcome {
        size: scratch.members.len(),
        reflection,
        delta_energy,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sampler {
    #[serde(rename = "metropolis")]
    Metropolis,
    #[serde(rename = "metropolis+cluster")]
    MetropolisCluster,
}

impl std::str::FromStr for Sampler {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "metropolis" => Ok(Sampler::Metropolis),
            "metropolis+cluster" | "cluster" => Ok(Sampler::MetropolisCluster),
            other => Err(Error::InvalidParameter(format!("unknown sampler {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Start {
    Ordered,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationParams {
    pub d: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "T")]
    pub temperature: f64,
    pub thermalization_sweeps: usize,
    pub measurement_sweeps: usize,
    /// Sweeps between snapshots.
    pub measurement_interval: usize,
    /// Snapshots between pair-statistics accumulations.
    pub pair_measurement_interval: usize,
    pub sampler: Sampler,
    pub start: Start,
    /// Blocks for the binning error analysis.
    pub bins: usize,
    pub seed: u64,
    pub memory_budget_bytes: u64,
}

impl SimulationParams {
    pub fn new(d: usize, l: usize, temperature: f64) -> Self {
        SimulationParams {
            d,
            l,
            temperature,
            thermalization_sweeps: 20_000,
            measurement_sweeps: 200_000,
            measurement_interval: 10,
            pair_measurement_interval: 10,
            sampler: Sampler::MetropolisCluster,
            start: Start::Ordered,
            bins: 32,
            seed: 0,
            memory_budget_bytes: 1 << 30,
        }
    }

    pub fn beta(&self) -> f64 {
        1.0 / (2.0 * self.temperature)
    }

    pub fn snapshot_count(&self) -> usize {
        self.measurement_sweeps / self.measurement_interval
    }

    pub fn pair_snapshot_count(&self) -> usize {
        self.snapshot_count().div_ceil(self.pair_measurement_interval)
    }

    /// Bytes held by the binned single-edge and pair-class histograms.
    pub fn memory_estimate(&self) -> u64 {
        let l2 = (self.l * self.l) as u64;
        let d = self.d as u64;
        let per_bin = 2 * l2 * d + (4 * l2 - 2) * d * d;
        per_bin * self.bins.max(1) as u64 * std::mem::size_of::<u32>() as u64
    }

    pub fn validate(&self) -> Result<()> {
        check_states(self.d)?;
        if self.l < 2 {
            return Err(Error::InvalidSize(self.l));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "temperature must be positive and finite, got {}",
                self.temperature
            )));
        }
        if self.measurement_interval == 0 || self.pair_measurement_interval == 0 {
            return Err(Error::InvalidParameter("intervals must be >= 1".into()));
        }
        if self.bins < 2 {
            return Err(Error::InvalidParameter("need at least 2 bins".into()));
        }
        if self.snapshot_count() < self.bins {
            return Err(Error::InsufficientData(format!(
                "{} snapshots cannot fill {} bins",
                self.snapshot_count(),
                self.bins
            )));
        }
        if self.pair_snapshot_count() < self.bins {
            return Err(Error::InsufficientData(format!(
                "{} pair snapshots cannot fill {} bins",
                self.pair_snapshot_count(),
                self.bins
            )));
        }
        let needed = self.memory_estimate();
        if needed > self.memory_budget_bytes {
            return Err(Error::MemoryBudget {
                needed,
                budget: self.memory_budget_bytes,
            });
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with cell coordinates into an independent stream seed.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Seed of one (d, L, T) cell; T enters through its bit pattern so that a
/// cell keeps its stream when the grid around it changes.
pub fn cell_seed(master: u64, d: usize, l: usize, temperature: f64) -> u64 {
    derive_seed(master, &[d as u64, l as u64, temperature.to_bits()])
}

pub fn replica_seed(cell_seed: u64, replica: usize) -> u64 {
    derive_seed(cell_seed, &[replica as u64])
}

/// A running chain with incrementally tracked energy.
pub struct Chain<'g> {
    geom: &'g LatticeGeometry,
    config: SpinConfig,
    table: ClockTable,
    temperature: f64,
    energy: f64,
    rng: McRng,
    scratch: ClusterScratch,
    pub stats: RunStats,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub sweeps: usize,
    pub proposals: u64,
    pub accepted: u64,
    pub cluster_updates: u64,
    pub cluster_sites: u64,
    pub snapshots: usize,
}

impl RunStats {
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.proposals.max(1) as f64
    }

    pub fn mean_cluster_size(&self) -> f64 {
        self.cluster_sites as f64 / self.cluster_updates.max(1) as f64
    }
}

impl<'g> Chain<'g> {
    pub fn new(geom: &'g LatticeGeometry, config: SpinConfig, temperature: f64, seed: u64) -> Result<Self> {
        config.check_against(geom)?;
        let table = ClockTable::new(config.d);
        let energy = energy_with(geom, &config, &table);
        Ok(Chain {
            geom,
            config,
            table,
            temperature,
            energy,
            rng: McRng::seed_from_u64(seed),
            scratch: ClusterScratch::default(),
            stats: RunStats::default(),
        })
    }

    pub fn config(&self) -> &SpinConfig {
        &self.config
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn table(&self) -> &ClockTable {
        &self.table
    }

    pub fn metropolis(&mut self) -> SweepOutcome {
        let out = metropolis_sweep_with(
            self.geom,
            &mut self.config,
            &self.table,
            self.temperature,
            &mut self.rng,
        );
        self.energy += out.delta_energy;
        self.stats.proposals += self.config.len() as u64;
        self.stats.accepted += out.accepted as u64;
        out
    }

    pub fn cluster(&mut self) -> ClusterOutcome {
        let r = self.rng.random_range(0..self.config.d);
        let seed = self.rng.random_range(0..self.config.len());
        let out = cluster_update_with(
            self.geom,
            &mut self.config,
            &self.table,
            self.temperature,
            r,
            seed,
            &mut self.scratch,
            &mut self.rng,
        );
        self.energy += out.delta_energy;
        self.stats.cluster_updates += 1;
        self.stats.cluster_sites += out.size as u64;
        out
    }

    pub fn sweep(&mut self, sampler: Sampler) {
        self.metropolis();
        if sampler == Sampler::MetropolisCluster {
            self.cluster();
        }
        self.stats.sweeps += 1;
    }
}

/// Runs thermalization, then hands every `measurement_interval`-th
/// configuration to `on_snapshot(index, config, energy)`.
pub fn run_simulation<F>(geom: &LatticeGeometry, params: &SimulationParams, mut on_snapshot: F) -> Result<RunStats>
where
    F: FnMut(usize, &SpinConfig, f64) -> Result<()>,
{
    params.validate()?;
    if geom.size() != params.l {
        return Err(Error::ConfigMismatch(format!(
            "lattice L = {} but params L = {}",
            geom.size(),
            params.l
        )));
    }
    let mut init_rng = McRng::seed_from_u64(derive_seed(params.seed, &[0x5EED]));
    let config = match params.start {
        Start::Ordered => SpinConfig::ordered(params.d, geom.vertex_count()),
        Start::Random => SpinConfig::random(params.d, geom.vertex_count(), &mut init_rng),
    };
    let mut chain = Chain::new(geom, config, params.temperature, params.seed)?;
    for _ in 0..params.thermalization_sweeps {
        chain.sweep(params.sampler);
    }
    let snapshots = params.snapshot_count();
    for s in 0..snapshots {
        for _ in 0..params.measurement_interval {
            chain.sweep(params.sampler);
        }
        // drop accumulated rounding from the incremental updates
        chain.energy = energy_with(geom, &chain.config, &chain.table);
        on_snapshot(s, &chain.config, chain.energy)?;
        chain.stats.snapshots += 1;
    }
    Ok(chain.stats)
}
