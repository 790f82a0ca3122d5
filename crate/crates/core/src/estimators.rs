//! Edge-variable statistics and the observables built from them.
//!
//! Under the quantum-classical mapping the diagonal of the one- and two-qudit
//! reduced density matrices of the deformed Kitaev state equals the
//! distribution of edge variables `m_e = (n_head - n_tail) mod d` of the clock
//! model at T = 1/(2β). Single-edge statistics are kept per edge; pair
//! statistics are pooled over lattice translations (see [`PairClass`]).
//!
//! [`PairClass`]: crate::lattice::PairClass

use serde::{Deserialize, Serialize};

use crate::clock_mc::{run_simulation, ClockTable, RunStats, SimulationParams, SpinConfig};
use crate::error::{Error, Result};
use crate::lattice::{LatticeGeometry, Orientation};

/// How a pair of vertex spins is turned into the qudit label of an edge.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeConvention {
    /// `(n_head - n_tail) mod d`.
    #[default]
    HeadMinusTail,
    /// `(n_tail - n_head) mod d`.
    TailMinusHead,
    /// `min(m, d - m)`, the distance of m from 0 around the cycle.
    Absolute,
    /// `|n_head - n_tail|` without the modulus. Not a function of the qudit
    /// label, so it does not follow from the quantum state; kept for comparison
    /// with Q curves computed from this label.
    UnwrappedAbsolute,
    /// Head-minus-tail on horizontal edges, tail-minus-head on vertical ones.
    /// Inconsistent on purpose; used as a negative control.
    FlipVertical,
}

impl EdgeConvention {
    /// Whether labels are unchanged when every spin is shifted by the same amount.
    pub fn shift_invariant(self) -> bool {
        self != EdgeConvention::UnwrappedAbsolute
    }

    #[inline]
    pub fn label(self, d: usize, tail: usize, head: usize, orientation: Orientation) -> usize {
        let forward = (head + d - tail) % d;
        match self {
            EdgeConvention::HeadMinusTail => forward,
            EdgeConvention::TailMinusHead => (d - forward) % d,
            EdgeConvention::Absolute => forward.min(d - forward),
            EdgeConvention::UnwrappedAbsolute => head.abs_diff(tail),
            EdgeConvention::FlipVertical => match orientation {
                Orientation::Horizontal => forward,
                Orientation::Vertical => (d - forward) % d,
            },
        }
    }
}

/// Edge variable `(n_head - n_tail) mod d`.
pub fn edge_variable(geom: &LatticeGeometry, config: &SpinConfig, edge: usize) -> usize {
    edge_variable_with(geom, config, edge, EdgeConvention::HeadMinusTail)
}

pub fn edge_variable_with(
    geom: &LatticeGeometry,
    config: &SpinConfig,
    edge: usize,
    convention: EdgeConvention,
) -> usize {
    let e = geom.edge(edge);
    convention.label(config.states(), config.get(e.tail), config.get(e.head), e.orientation)
}

pub(crate) fn fill_edge_variables(
    geom: &LatticeGeometry,
    config: &SpinConfig,
    convention: EdgeConvention,
    out: &mut Vec<u8>,
) {
    out.clear();
    out.extend(
        (0..geom.edge_count()).map(|e| edge_variable_with(geom, config, e, convention) as u8),
    );
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagnetizationSample {
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub phi: f64,
    pub m_phi: f64,
}

impl MagnetizationSample {
    pub fn from_config(config: &SpinConfig, table: &ClockTable) -> Self {
        let (mut sx, mut sy) = (0.0, 0.0);
        for &n in config.values() {
            sx += table.cos[n as usize];
            sy += table.sin[n as usize];
        }
        Self::from_components(sx, sy, config.states(), config.len())
    }

    /// A magnetization below rounding noise is treated as exactly zero, with φ = 0.
    pub fn from_components(sigma_x: f64, sigma_y: f64, d: usize, vertices: usize) -> Self {
        let tiny = 1e-9 * vertices as f64;
        let mut phi = if sigma_x.abs() < tiny && sigma_y.abs() < tiny {
            0.0
        } else {
            sigma_y.atan2(sigma_x)
        };
        if phi <= -std::f64::consts::PI {
            phi = std::f64::consts::PI;
        }
        MagnetizationSample {
            sigma_x,
            sigma_y,
            phi,
            m_phi: (d as f64 * phi).cos(),
        }
    }
}

/// Single-edge and pair-class counts.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramSet {
    d: usize,
    l: usize,
    single: Vec<u32>,
    pair: Vec<u32>,
    n_single_samples: u64,
    n_pair_samples: u64,
}

impl HistogramSet {
    pub fn new(geom: &LatticeGeometry, d: usize) -> Self {
        HistogramSet {
            d,
            l: geom.size(),
            single: vec![0; geom.edge_count() * d],
            pair: vec![0; geom.pair_class_count() * d * d],
            n_single_samples: 0,
            n_pair_samples: 0,
        }
    }

    pub fn states(&self) -> usize {
        self.d
    }

    pub fn edge_count(&self) -> usize {
        2 * self.l * self.l
    }

    pub fn class_count(&self) -> usize {
        4 * self.l * self.l - 2
    }

    pub fn class_multiplicity(&self) -> usize {
        self.l * self.l
    }

    pub fn n_single_samples(&self) -> u64 {
        self.n_single_samples
    }

    pub fn n_pair_samples(&self) -> u64 {
        self.n_pair_samples
    }

    pub fn single_counts(&self, edge: usize) -> &[u32] {
        &self.single[edge * self.d..(edge + 1) * self.d]
    }

    /// Counts `[m * d + m']` for a dense pair-class index.
    pub fn pair_counts(&self, class: usize) -> &[u32] {
        let dd = self.d * self.d;
        &self.pair[class * dd..(class + 1) * dd]
    }

    pub fn single_probabilities(&self, edge: usize) -> Vec<f64> {
        let n = self.n_single_samples as f64;
        self.single_counts(edge).iter().map(|&c| c as f64 / n).collect()
    }

    pub fn pair_probabilities(&self, class: usize) -> Vec<f64> {
        let n = (self.n_pair_samples * self.class_multiplicity() as u64) as f64;
        self.pair_counts(class).iter().map(|&c| c as f64 / n).collect()
    }

    /// Adds one snapshot's edge variables; pairs too when `with_pairs`.
    pub fn accumulate(&mut self, geom: &LatticeGeometry, edge_vars: &[u8], with_pairs: bool) -> Result<()> {
        debug_assert_eq!(edge_vars.len(), geom.edge_count());
        if self.n_single_samples >= u32::MAX as u64 {
            return Err(Error::CounterOverflow("single-edge counts".into()));
        }
        if with_pairs {
            let per_class = (self.n_pair_samples + 1) * self.class_multiplicity() as u64;
            if per_class > u32::MAX as u64 {
                return Err(Error::CounterOverflow("pair-class counts".into()));
            }
        }
        let d = self.d;
        for (e, &m) in edge_vars.iter().enumerate() {
            self.single[e * d + m as usize] += 1;
        }
        self.n_single_samples += 1;
        if with_pairs {
            self.accumulate_pairs(geom, edge_vars);
            self.n_pair_samples += 1;
        }
        Ok(())
    }

    fn accumulate_pairs(&mut self, geom: &LatticeGeometry, edge_vars: &[u8]) {
        let l = self.l;
        let d = self.d;
        let dd = d * d;
        // a-side grids are pre-multiplied by d; b-side rows are stored twice
        // so that a shifted row is one contiguous slice
        let mut scaled: [Vec<u16>; 2] = [Vec::with_capacity(l * l), Vec::with_capacity(l * l)];
        let mut doubled: [Vec<u16>; 2] = [Vec::with_capacity(2 * l * l), Vec::with_capacity(2 * l * l)];
        for o in 0..2 {
            for y in 0..l {
                let row = (0..l).map(|x| edge_vars[2 * (y * l + x) + o] as u16);
                scaled[o].extend(row.clone().map(|m| m * d as u16));
                doubled[o].extend(row.clone().chain(row));
            }
        }
        // four interleaved lanes break the store-to-load chain when one
        // label dominates (ordered phase)
        let lanes = if 4 * dd <= l * l { 4 } else { 1 };
        let mut scratch = vec![0u32; lanes * dd];
        let mut class = 0usize;
        for oa in 0..2 {
            for ob in 0..2 {
                for dy in 0..l {
                    for dx in 0..l {
                        if oa == ob && dx == 0 && dy == 0 {
                            continue;
                        }
                        let hist = &mut self.pair[class * dd..(class + 1) * dd];
                        if lanes == 1 {
                            for y in 0..l {
                                let yb = (y + dy) % l;
                                let row_a = &scaled[oa][y * l..(y + 1) * l];
                                let row_b = &doubled[ob][2 * yb * l + dx..2 * yb * l + dx + l];
                                for (a, b) in row_a.iter().zip(row_b) {
                                    hist[(a + b) as usize] += 1;
                                }
                            }
                        } else {
                            scratch.fill(0);
                            let (s0, rest) = scratch.split_at_mut(dd);
                            let (s1, rest) = rest.split_at_mut(dd);
                            let (s2, s3) = rest.split_at_mut(dd);
                            for y in 0..l {
                                let yb = (y + dy) % l;
                                let row_a = &scaled[oa][y * l..(y + 1) * l];
                                let row_b = &doubled[ob][2 * yb * l + dx..2 * yb * l + dx + l];
                                let mut ca = row_a.chunks_exact(4);
                                let mut cb = row_b.chunks_exact(4);
                                for (a, b) in (&mut ca).zip(&mut cb) {
                                    s0[(a[0] + b[0]) as usize] += 1;
                                    s1[(a[1] + b[1]) as usize] += 1;
                                    s2[(a[2] + b[2]) as usize] += 1;
                                    s3[(a[3] + b[3]) as usize] += 1;
                                }
                                for (a, b) in ca.remainder().iter().zip(cb.remainder()) {
                                    s0[(a + b) as usize] += 1;
                                }
                            }
                            for k in 0..dd {
                                hist[k] += s0[k] + s1[k] + s2[k] + s3[k];
                            }
                        }
                        class += 1;
                    }
                }
            }
        }
        debug_assert_eq!(class, geom.pair_class_count());
    }

    /// Counter addition; associative and order independent.
    pub fn merge(&mut self, other: &HistogramSet) -> Result<()> {
        if self.d != other.d || self.l != other.l {
            return Err(Error::ConfigMismatch("merging histograms of different shape".into()));
        }
        add_counts(&mut self.single, &other.single)?;
        add_counts(&mut self.pair, &other.pair)?;
        self.n_single_samples += other.n_single_samples;
        self.n_pair_samples += other.n_pair_samples;
        Ok(())
    }

    fn subtract(&self, other: &HistogramSet) -> HistogramSet {
        HistogramSet {
            d: self.d,
            l: self.l,
            single: self.single.iter().zip(&other.single).map(|(a, b)| a - b).collect(),
            pair: self.pair.iter().zip(&other.pair).map(|(a, b)| a - b).collect(),
            n_single_samples: self.n_single_samples - other.n_single_samples,
            n_pair_samples: self.n_pair_samples - other.n_pair_samples,
        }
    }

    /// Mean over edges of `Σ_m (P^a_m)²`.
    pub fn mean_single_purity(&self) -> Result<f64> {
        if self.n_single_samples == 0 {
            return Err(Error::InsufficientData("no single-edge samples".into()));
        }
        let n = self.n_single_samples as f64;
        let total: f64 = self
            .single
            .chunks_exact(self.d)
            .map(|row| row.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>())
            .sum();
        Ok(total / self.edge_count() as f64)
    }

    /// Mean over ordered distinct edge pairs of `Σ_{m,m'} (P^{ab}_{mm'})²`.
    pub fn mean_pair_purity(&self) -> Result<f64> {
        if self.n_pair_samples == 0 {
            return Err(Error::InsufficientData("no pair samples".into()));
        }
        let n = (self.n_pair_samples * self.class_multiplicity() as u64) as f64;
        let total: f64 = self
            .pair
            .chunks_exact(self.d * self.d)
            .map(|row| row.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>())
            .sum();
        // every class carries L² of the N(N-1) ordered pairs
        Ok(total / self.class_count() as f64)
    }
}

fn add_counts(into: &mut [u32], from: &[u32]) -> Result<()> {
    for (a, &b) in into.iter_mut().zip(from) {
        *a = a
            .checked_add(b)
            .ok_or_else(|| Error::CounterOverflow("merge".into()))?;
    }
    Ok(())
}

/// `d/(d-1) · (1 - mean single purity)`, clamped against rounding to [0, 1].
pub fn ge_from_purity(d: usize, mean_single_purity: f64) -> f64 {
    let d = d as f64;
    (d / (d - 1.0) * (1.0 - mean_single_purity)).clamp(0.0, 1.0)
}

/// `d²/(d²-1) · (1 - mean pair purity)`, clamped against rounding to [0, 1].
pub fn get_from_purity(d: usize, mean_pair_purity: f64) -> f64 {
    let d2 = (d * d) as f64;
    (d2 / (d2 - 1.0) * (1.0 - mean_pair_purity)).clamp(0.0, 1.0)
}

pub fn ge_from_hist(hists: &HistogramSet) -> Result<f64> {
    Ok(ge_from_purity(hists.d, hists.mean_single_purity()?))
}

pub fn get_from_hist(hists: &HistogramSet) -> Result<f64> {
    Ok(get_from_purity(hists.d, hists.mean_pair_purity()?))
}

/// `1 - <m⁴> / (2 <m²>²)`.
pub fn cumulant_from_moments(m2: f64, m4: f64) -> Result<f64> {
    if m2 <= 0.0 {
        return Err(Error::UndefinedCumulant);
    }
    Ok(1.0 - m4 / (2.0 * m2 * m2))
}

pub fn cumulant_um(samples: &[MagnetizationSample]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData("cumulant needs at least 2 samples".into()));
    }
    let n = samples.len() as f64;
    let m2 = samples.iter().map(|s| s.m_phi.powi(2)).sum::<f64>() / n;
    let m4 = samples.iter().map(|s| s.m_phi.powi(4)).sum::<f64>() / n;
    cumulant_from_moments(m2, m4)
}

/// `(<E²> - <E>²) / (V T²)`.
pub fn specific_heat_from_moments(e1: f64, e2: f64, temperature: f64, vertices: usize) -> f64 {
    ((e2 - e1 * e1) / (vertices as f64 * temperature * temperature)).max(0.0)
}

pub fn specific_heat(energies: &[f64], temperature: f64, vertices: usize) -> Result<f64> {
    if energies.len() < 2 {
        return Err(Error::InsufficientData("specific heat needs at least 2 samples".into()));
    }
    let n = energies.len() as f64;
    let mean = energies.iter().sum::<f64>() / n;
    // two-pass variance
    let var = energies.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    Ok(var / (vertices as f64 * temperature * temperature))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservableRecord {
    pub d: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "T")]
    pub temperature: f64,
    pub beta: f64,
    pub n_single_samples: u64,
    pub n_pair_samples: u64,
    #[serde(rename = "GE")]
    pub ge: f64,
    #[serde(rename = "GE_err")]
    pub ge_err: f64,
    #[serde(rename = "GEt")]
    pub get: f64,
    #[serde(rename = "GEt_err")]
    pub get_err: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    #[serde(rename = "Q_err")]
    pub q_err: f64,
    #[serde(rename = "Um")]
    pub um: f64,
    #[serde(rename = "Um_err")]
    pub um_err: f64,
    #[serde(rename = "E_mean")]
    pub e_mean: f64,
    #[serde(rename = "E_err")]
    pub e_err: f64,
    #[serde(rename = "Cv")]
    pub cv: f64,
    #[serde(rename = "Cv_err")]
    pub cv_err: f64,
    pub seed: u64,
}

pub const OBSERVABLE_NAMES: [&str; 6] = ["GE", "GEt", "Q", "Um", "E_mean", "Cv"];

impl ObservableRecord {
    /// Value and error of a named observable column.
    pub fn observable(&self, name: &str) -> Option<(f64, f64)> {
        match name {
            "GE" => Some((self.ge, self.ge_err)),
            "GEt" => Some((self.get, self.get_err)),
            "Q" => Some((self.q, self.q_err)),
            "Um" => Some((self.um, self.um_err)),
            "E_mean" | "E" => Some((self.e_mean, self.e_err)),
            "Cv" => Some((self.cv, self.cv_err)),
            _ => None,
        }
    }
}

/// `Q = G̃E - GE`.
pub fn q_value(record: &ObservableRecord) -> f64 {
    record.get - record.ge
}

/// Per-bin statistics of one block of the measurement stream.
#[derive(Debug, Clone, PartialEq)]
pub struct BinData {
    pub hists: HistogramSet,
    pub samples: u64,
    pub e_sum: f64,
    pub e2_sum: f64,
    pub m2_sum: f64,
    pub m4_sum: f64,
}

impl BinData {
    fn new(geom: &LatticeGeometry, d: usize) -> Self {
        BinData {
            hists: HistogramSet::new(geom, d),
            samples: 0,
            e_sum: 0.0,
            e2_sum: 0.0,
            m2_sum: 0.0,
            m4_sum: 0.0,
        }
    }

    fn merge(&mut self, other: &BinData) -> Result<()> {
        self.hists.merge(&other.hists)?;
        self.samples += other.samples;
        self.e_sum += other.e_sum;
        self.e2_sum += other.e2_sum;
        self.m2_sum += other.m2_sum;
        self.m4_sum += other.m4_sum;
        Ok(())
    }

    fn subtract(&self, other: &BinData) -> BinData {
        BinData {
            hists: self.hists.subtract(&other.hists),
            samples: self.samples - other.samples,
            e_sum: self.e_sum - other.e_sum,
            e2_sum: self.e2_sum - other.e2_sum,
            m2_sum: self.m2_sum - other.m2_sum,
            m4_sum: self.m4_sum - other.m4_sum,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Estimates {
    ge: f64,
    get: f64,
    q: f64,
    um: f64,
    e_mean: f64,
    cv: f64,
}

impl Estimates {
    fn of(bin: &BinData, temperature: f64, vertices: usize) -> Result<Self> {
        let n = bin.samples as f64;
        let ge = ge_from_hist(&bin.hists)?;
        let get = get_from_hist(&bin.hists)?;
        let e1 = bin.e_sum / n;
        Ok(Estimates {
            ge,
            get,
            q: get - ge,
            um: cumulant_from_moments(bin.m2_sum / n, bin.m4_sum / n)?,
            e_mean: e1,
            cv: specific_heat_from_moments(e1, bin.e2_sum / n, temperature, vertices),
        })
    }

    fn fields(&self) -> [f64; 6] {
        [self.ge, self.get, self.q, self.um, self.e_mean, self.cv]
    }
}

/// Streams snapshots into equal-length blocks. Single-edge data and moments
/// are blocked by snapshot index, pair data by pair-snapshot index, so block
/// `b` of either covers the same stretch of the run.
#[derive(Debug, Clone)]
pub struct Accumulator {
    d: usize,
    l: usize,
    convention: EdgeConvention,
    snapshots: usize,
    pair_interval: usize,
    pair_snapshots: usize,
    bins: Vec<BinData>,
    table: ClockTable,
    edge_vars: Vec<u8>,
}

impl Accumulator {
    pub fn new(geom: &LatticeGeometry, params: &SimulationParams, convention: EdgeConvention) -> Result<Self> {
        params.validate()?;
        Ok(Accumulator {
            d: params.d,
            l: geom.size(),
            convention,
            snapshots: params.snapshot_count(),
            pair_interval: params.pair_measurement_interval,
            pair_snapshots: params.pair_snapshot_count(),
            bins: (0..params.bins).map(|_| BinData::new(geom, params.d)).collect(),
            table: ClockTable::new(params.d),
            edge_vars: Vec::with_capacity(geom.edge_count()),
        })
    }

    pub fn bins(&self) -> &[BinData] {
        &self.bins
    }

    pub fn record(&mut self, geom: &LatticeGeometry, index: usize, config: &SpinConfig, energy: f64) -> Result<()> {
        if index >= self.snapshots {
            return Err(Error::InvalidParameter(format!(
                "snapshot index {index} beyond the {} announced",
                self.snapshots
            )));
        }
        let nb = self.bins.len();
        let bin = index * nb / self.snapshots;
        fill_edge_variables(geom, config, self.convention, &mut self.edge_vars);
        self.bins[bin].hists.accumulate(geom, &self.edge_vars, false)?;
        if index % self.pair_interval == 0 {
            let p = index / self.pair_interval;
            let pair_bin = p * nb / self.pair_snapshots;
            self.bins[pair_bin].hists.accumulate_pairs(geom, &self.edge_vars);
            self.bins[pair_bin].hists.n_pair_samples += 1;
            let per_class = self.bins[pair_bin].hists.n_pair_samples * (self.l * self.l) as u64;
            if per_class > u32::MAX as u64 {
                return Err(Error::CounterOverflow("pair-class counts".into()));
            }
        }
        let mag = MagnetizationSample::from_config(config, &self.table);
        let m2 = mag.m_phi * mag.m_phi;
        let b = &mut self.bins[bin];
        b.samples += 1;
        b.e_sum += energy;
        b.e2_sum += energy * energy;
        b.m2_sum += m2;
        b.m4_sum += m2 * m2;
        Ok(())
    }

    /// Bin-wise addition of another replica's accumulator.
    pub fn merge(&mut self, other: &Accumulator) -> Result<()> {
        if self.bins.len() != other.bins.len() || self.d != other.d || self.l != other.l {
            return Err(Error::ConfigMismatch("merging accumulators of different shape".into()));
        }
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            a.merge(b)?;
        }
        Ok(())
    }

    pub fn totals(&self) -> Result<BinData> {
        let mut total = self.bins[0].clone();
        for b in &self.bins[1..] {
            total.merge(b)?;
        }
        Ok(total)
    }

    /// Central values from all data; errors by leave-one-bin-out jackknife.
    pub fn finish(&self, temperature: f64, seed: u64) -> Result<ObservableRecord> {
        let total = self.totals()?;
        let vertices = self.l * self.l;
        let central = Estimates::of(&total, temperature, vertices)?;
        let leave_out = self
            .bins
            .iter()
            .map(|b| Estimates::of(&total.subtract(b), temperature, vertices).map(|e| e.fields()))
            .collect::<Result<Vec<_>>>()?;
        let errs = jackknife_errors(&leave_out);
        Ok(ObservableRecord {
            d: self.d,
            l: self.l,
            temperature,
            beta: 1.0 / (2.0 * temperature),
            n_single_samples: total.hists.n_single_samples,
            n_pair_samples: total.hists.n_pair_samples,
            ge: central.ge,
            ge_err: errs[0],
            get: central.get,
            get_err: errs[1],
            q: central.q,
            q_err: errs[2],
            um: central.um,
            um_err: errs[3],
            e_mean: central.e_mean,
            e_err: errs[4],
            cv: central.cv,
            cv_err: errs[5],
            seed,
        })
    }
}

fn jackknife_errors<const K: usize>(leave_out: &[[f64; K]]) -> [f64; K] {
    let b = leave_out.len() as f64;
    let mut out = [0.0; K];
    for (k, slot) in out.iter_mut().enumerate() {
        let mean = leave_out.iter().map(|r| r[k]).sum::<f64>() / b;
        let ss = leave_out.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>();
        *slot = ((b - 1.0) / b * ss).sqrt();
    }
    out
}

/// Runs one chain and streams it into a fresh accumulator.
pub fn measure(
    geom: &LatticeGeometry,
    params: &SimulationParams,
    convention: EdgeConvention,
) -> Result<(Accumulator, RunStats)> {
    let mut acc = Accumulator::new(geom, params, convention)?;
    let stats = run_simulation(geom, params, |i, config, energy| acc.record(geom, i, config, energy))?;
    Ok((acc, stats))
}
