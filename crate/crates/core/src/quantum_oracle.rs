//! Exact small-instance ground truth.
//!
//! Two independent routes to the same numbers: the deformed Z_d Kitaev state
//! built as a dense amplitude vector over all d^N qudit basis strings, and
//! brute-force enumeration of the classical clock model over all d^V spin
//! configurations.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::clock_mc::ClockTable;
use crate::error::{Error, Result};
use crate::estimators::{
    cumulant_from_moments, ge_from_purity, get_from_purity, EdgeConvention, MagnetizationSample,
};
use crate::lattice::{build_lattice, LatticeGeometry};

pub const MAX_QUDIT_AMPLITUDES: f64 = 1e7;
pub const MAX_CLOCK_CONFIGS: f64 = 1e8;
pub const MAPPING_TOLERANCE: f64 = 1e-10;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

fn guard(what: &'static str, base: usize, exp: usize, limit: f64) -> Result<usize> {
    let needed = (base as f64).powi(exp as i32);
    if needed > limit {
        return Err(Error::SizeGuard { what, needed, limit });
    }
    Ok(needed as usize)
}

/// State of N qudits over the `Ẑ` eigenbasis. Basis index `Σ_e m_e d^e`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuditState {
    pub d: usize,
    pub n: usize,
    pub amplitudes: Vec<Complex64>,
}

impl QuditState {
    pub fn basis(d: usize, n: usize, index: usize) -> Result<Self> {
        let dim = guard("qudit state", d, n, MAX_QUDIT_AMPLITUDES)?;
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); dim];
        amplitudes[index] = Complex64::new(1.0, 0.0);
        Ok(QuditState { d, n, amplitudes })
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        let mut s = CompensatedSum::default();
        for a in &self.amplitudes {
            s.add(a.norm_sqr());
        }
        s.value()
    }

    pub fn normalize(&mut self) {
        let norm = self.norm_sqr().sqrt();
        for a in &mut self.amplitudes {
            *a /= norm;
        }
    }

    pub fn digit(&self, index: usize, edge: usize) -> usize {
        (index / self.d.pow(edge as u32)) % self.d
    }

    /// `|<other|self>|²`.
    pub fn fidelity(&self, other: &QuditState) -> f64 {
        let overlap: Complex64 = self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| b.conj() * a)
            .sum();
        overlap.norm_sqr()
    }

    pub fn nonzero_count(&self, tol: f64) -> usize {
        self.amplitudes.iter().filter(|a| a.norm() > tol).count()
    }

    /// Labels of every qudit for one basis index.
    pub fn labels(&self, index: usize) -> Vec<usize> {
        let mut rest = index;
        (0..self.n)
            .map(|_| {
                let m = rest % self.d;
                rest /= self.d;
                m
            })
            .collect()
    }
}

/// Generalized Pauli stabilizers `Â_v` (shift on the star) and `B̂_p` (phase on the plaquette).
#[derive(Debug, Clone)]
pub struct StabilizerAction {
    d: usize,
    geom: LatticeGeometry,
    strides: Vec<usize>,
}

impl StabilizerAction {
    pub fn new(d: usize, geom: &LatticeGeometry) -> Self {
        StabilizerAction {
            d,
            geom: geom.clone(),
            strides: (0..geom.edge_count()).map(|e| d.pow(e as u32)).collect(),
        }
    }

    /// Basis index reached from `index` under `Â_v^k`: +k on outward edges, -k on inward.
    pub fn vertex_image(&self, index: usize, v: usize, k: usize) -> usize {
        let d = self.d;
        let mut out = index;
        for s in self.geom.vertex_incidence(v) {
            let stride = self.strides[s.edge];
            let m = (out / stride) % d;
            let shift = if s.sign > 0 { k % d } else { (d - k % d) % d };
            let new = (m + shift) % d;
            out = out - m * stride + new * stride;
        }
        out
    }

    pub fn apply_vertex(&self, state: &QuditState, v: usize, k: usize) -> QuditState {
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); state.dim()];
        for (i, a) in state.amplitudes.iter().enumerate() {
            if *a != Complex64::new(0.0, 0.0) {
                amplitudes[self.vertex_image(i, v, k)] = *a;
            }
        }
        QuditState {
            d: state.d,
            n: state.n,
            amplitudes,
        }
    }

    /// Phase `w^{Σ_e s_p(e) m_e}` picked up by basis index `index` under `B̂_p`.
    pub fn plaquette_phase(&self, index: usize, p: usize) -> Complex64 {
        let d = self.d as i64;
        let total: i64 = self
            .geom
            .plaquette(p)
            .iter()
            .map(|s| s.sign as i64 * ((index / self.strides[s.edge]) % self.d) as i64)
            .sum();
        let k = total.rem_euclid(d) as f64;
        Complex64::from_polar(1.0, 2.0 * PI * k / d as f64)
    }

    pub fn apply_plaquette(&self, state: &QuditState, p: usize) -> QuditState {
        QuditState {
            d: state.d,
            n: state.n,
            amplitudes: state
                .amplitudes
                .iter()
                .enumerate()
                .map(|(i, a)| a * self.plaquette_phase(i, p))
                .collect(),
        }
    }
}

/// `Π_v (1 + Â_v + … + Â_v^{d-1}) |0…0>`, normalized.
pub fn build_kitaev_state(d: usize, l: usize) -> Result<QuditState> {
    let geom = build_lattice(l)?;
    let mut state = QuditState::basis(d, geom.edge_count(), 0)?;
    let stab = StabilizerAction::new(d, &geom);
    for v in 0..geom.vertex_count() {
        let mut next = vec![Complex64::new(0.0, 0.0); state.dim()];
        for (i, a) in state.amplitudes.iter().enumerate() {
            if *a == Complex64::new(0.0, 0.0) {
                continue;
            }
            for k in 0..d {
                next[stab.vertex_image(i, v, k)] += *a;
            }
        }
        state.amplitudes = next;
    }
    state.normalize();
    Ok(state)
}

#[derive(Debug, Clone)]
pub struct DeformedState {
    pub state: QuditState,
    /// `ln <ψ|exp(β Σ_i (Ẑ_i + Ẑ_i⁻¹))|ψ>` of the input state, i.e. the
    /// squared norm before renormalization.
    pub log_norm_sqr: f64,
}

/// Multiplies each basis amplitude by `Π_i exp(β cos(2π m_i/d))` and renormalizes.
pub fn apply_deformation(state: &QuditState, beta: f64) -> Result<DeformedState> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!("beta must be >= 0, got {beta}")));
    }
    let table = ClockTable::new(state.d);
    // the largest exponent is β N; subtract it before exponentiating
    let shift = beta * state.n as f64;
    let mut amplitudes = state.amplitudes.clone();
    let mut norm = CompensatedSum::default();
    for (i, a) in amplitudes.iter_mut().enumerate() {
        if *a == Complex64::new(0.0, 0.0) {
            continue;
        }
        let mut rest = i;
        let mut exponent = 0.0;
        for _ in 0..state.n {
            exponent += table.cos[rest % state.d];
            rest /= state.d;
        }
        *a *= (beta * exponent - shift).exp();
        norm.add(a.norm_sqr());
    }
    let norm = norm.value();
    for a in &mut amplitudes {
        *a /= norm.sqrt();
    }
    Ok(DeformedState {
        state: QuditState {
            d: state.d,
            n: state.n,
            amplitudes,
        },
        log_norm_sqr: norm.ln() + 2.0 * shift,
    })
}

fn check_edges(state: &QuditState, edges: &[usize]) -> Result<()> {
    if edges.is_empty() || edges.len() > 2 {
        return Err(Error::InvalidParameter("reduced state needs one or two edges".into()));
    }
    for &e in edges {
        if e >= state.n {
            return Err(Error::EdgeOutOfRange {
                index: e,
                count: state.n,
            });
        }
    }
    if edges.len() == 2 && edges[0] == edges[1] {
        return Err(Error::SameEdge(edges[0]));
    }
    Ok(())
}

fn local_label(state: &QuditState, index: usize, edges: &[usize]) -> usize {
    edges
        .iter()
        .fold(0, |acc, &e| acc * state.d + state.digit(index, e))
}

/// Diagonal of the reduced density matrix of one or two qudits, indexed
/// `m` or `m * d + m'`.
pub fn reduced_diagonals(state: &QuditState, edges: &[usize]) -> Result<Vec<f64>> {
    check_edges(state, edges)?;
    let k = state.d.pow(edges.len() as u32);
    let mut sums = vec![CompensatedSum::default(); k];
    for (i, a) in state.amplitudes.iter().enumerate() {
        let p = a.norm_sqr();
        if p > 0.0 {
            sums[local_label(state, i, edges)].add(p);
        }
    }
    Ok(sums.iter().map(CompensatedSum::value).collect())
}

/// Full reduced density matrix, row-major `k x k`.
pub fn reduced_density_matrix(state: &QuditState, edges: &[usize]) -> Result<Vec<Complex64>> {
    check_edges(state, edges)?;
    let d = state.d;
    let k = d.pow(edges.len() as u32);
    let strides: Vec<usize> = edges.iter().map(|&e| d.pow(e as u32)).collect();
    let mut rho = vec![Complex64::new(0.0, 0.0); k * k];
    for (i, a) in state.amplitudes.iter().enumerate() {
        if *a == Complex64::new(0.0, 0.0) {
            continue;
        }
        let digits: Vec<usize> = edges.iter().map(|&e| state.digit(i, e)).collect();
        let base = i - digits.iter().zip(&strides).map(|(m, s)| m * s).sum::<usize>();
        let x = local_label(state, i, edges);
        for xp in 0..k {
            let j = if edges.len() == 1 {
                base + xp * strides[0]
            } else {
                base + (xp / d) * strides[0] + (xp % d) * strides[1]
            };
            rho[x * k + xp] += a * state.amplitudes[j].conj();
        }
    }
    Ok(rho)
}

pub fn max_off_diagonal(rho: &[Complex64]) -> f64 {
    let k = (rho.len() as f64).sqrt().round() as usize;
    let mut worst: f64 = 0.0;
    for r in 0..k {
        for c in 0..k {
            if r != c {
                worst = worst.max(rho[r * k + c].norm());
            }
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntanglementSummary {
    pub ge: f64,
    pub get: f64,
    pub q: f64,
}

/// GE, G̃E and Q straight from the amplitudes, using the diagonal reduced states.
pub fn quantum_global_entanglement(state: &QuditState) -> Result<EntanglementSummary> {
    let n = state.n;
    let mut single = 0.0;
    for a in 0..n {
        single += reduced_diagonals(state, &[a])?.iter().map(|p| p * p).sum::<f64>();
    }
    let mut pair = 0.0;
    for a in 0..n {
        for b in a + 1..n {
            pair += reduced_diagonals(state, &[a, b])?.iter().map(|p| p * p).sum::<f64>();
        }
    }
    let ge = ge_from_purity(state.d, single / n as f64);
    let get = get_from_purity(state.d, pair / (n * (n - 1) / 2) as f64);
    Ok(EntanglementSummary { ge, get, q: get - ge })
}

/// Exact Boltzmann averages of the clock model by full enumeration.
#[derive(Debug, Clone)]
pub struct ExactClockTable {
    pub d: usize,
    pub l: usize,
    pub temperature: f64,
    pub log_z: f64,
    n_edges: usize,
    /// `[edge * d + m]`
    pub single: Vec<f64>,
    /// `[(a * N + b) * d² + m * d + m']`, zero on the diagonal a = b.
    pub pair: Vec<f64>,
    pub e_mean: f64,
    pub e2_mean: f64,
    pub cv: f64,
    pub m2: f64,
    pub m4: f64,
    pub um: f64,
    pub ge: f64,
    pub get: f64,
    pub q: f64,
}

impl ExactClockTable {
    pub fn single_probabilities(&self, edge: usize) -> &[f64] {
        &self.single[edge * self.d..(edge + 1) * self.d]
    }

    pub fn pair_probabilities(&self, a: usize, b: usize) -> &[f64] {
        let dd = self.d * self.d;
        let i = a * self.n_edges + b;
        &self.pair[i * dd..(i + 1) * dd]
    }

    pub fn edge_count(&self) -> usize {
        self.n_edges
    }
}

pub fn enumerate_clock(d: usize, l: usize, temperature: f64) -> Result<ExactClockTable> {
    enumerate_clock_with(d, l, temperature, EdgeConvention::HeadMinusTail)
}

/// `temperature` may be `f64::INFINITY`.
pub fn enumerate_clock_with(
    d: usize,
    l: usize,
    temperature: f64,
    convention: EdgeConvention,
) -> Result<ExactClockTable> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if !(2..=crate::clock_mc::MAX_STATES).contains(&d) {
        return Err(Error::InvalidParameter(format!("d = {d} not supported")));
    }
    let geom = build_lattice(l)?;
    let v_count = geom.vertex_count();
    let n = geom.edge_count();
    guard("clock configurations", d, v_count, MAX_CLOCK_CONFIGS)?;
    let inv_t = 1.0 / temperature;
    let table = ClockTable::new(d);
    let dd = d * d;

    // energy and m_phi are invariant under a global shift of all spins; when the
    // labels are too, spin 0 is pinned to 0 and every weight counts d times
    let pinned = usize::from(convention.shift_invariant());
    let reduced = d.pow((v_count - pinned) as u32);
    let mut spins = vec![0usize; v_count];
    let mut labels = vec![0usize; n];
    let mut z = CompensatedSum::default();
    let mut e1 = CompensatedSum::default();
    let mut e2 = CompensatedSum::default();
    let mut m2 = CompensatedSum::default();
    let mut m4 = CompensatedSum::default();
    let mut single = vec![CompensatedSum::default(); n * d];
    let mut pair = vec![CompensatedSum::default(); n * n * dd];
    let e_min = -(n as f64);

    for code in 0..reduced {
        let mut rest = code;
        for s in spins.iter_mut().skip(pinned) {
            *s = rest % d;
            rest /= d;
        }
        let mut energy = 0.0;
        for (e, edge) in geom.edges().iter().enumerate() {
            let (t, h) = (spins[edge.tail], spins[edge.head]);
            energy += table.bond(t, h);
            labels[e] = convention.label(d, t, h, edge.orientation);
        }
        let w = if inv_t == 0.0 {
            1.0
        } else {
            (-(energy - e_min) * inv_t).exp()
        };
        z.add(w);
        e1.add(w * energy);
        e2.add(w * energy * energy);
        let (mut sx, mut sy) = (0.0, 0.0);
        for &s in &spins {
            sx += table.cos[s];
            sy += table.sin[s];
        }
        let mag = MagnetizationSample::from_components(sx, sy, d, v_count);
        let mm = mag.m_phi * mag.m_phi;
        m2.add(w * mm);
        m4.add(w * mm * mm);
        for a in 0..n {
            single[a * d + labels[a]].add(w);
            for b in a + 1..n {
                pair[(a * n + b) * dd + labels[a] * d + labels[b]].add(w);
            }
        }
    }

    let zv = z.value();
    let single: Vec<f64> = single.iter().map(|s| s.value() / zv).collect();
    let mut pair_p = vec![0.0; n * n * dd];
    for a in 0..n {
        for b in a + 1..n {
            for m in 0..d {
                for mp in 0..d {
                    let p = pair[(a * n + b) * dd + m * d + mp].value() / zv;
                    pair_p[(a * n + b) * dd + m * d + mp] = p;
                    pair_p[(b * n + a) * dd + mp * d + m] = p;
                }
            }
        }
    }
    let e_mean = e1.value() / zv;
    let e2_mean = e2.value() / zv;
    let cv = if inv_t == 0.0 {
        0.0
    } else {
        (e2_mean - e_mean * e_mean) * inv_t * inv_t / v_count as f64
    };
    let m2v = m2.value() / zv;
    let m4v = m4.value() / zv;

    let single_purity = single.iter().map(|p| p * p).sum::<f64>() / n as f64;
    let pair_purity = pair_p.iter().map(|p| p * p).sum::<f64>() / (n * (n - 1)) as f64;
    let ge = ge_from_purity(d, single_purity);
    let get = get_from_purity(d, pair_purity);

    Ok(ExactClockTable {
        d,
        l,
        temperature,
        log_z: zv.ln() - e_min * inv_t + pinned as f64 * (d as f64).ln(),
        n_edges: n,
        single,
        pair: pair_p,
        e_mean,
        e2_mean,
        cv,
        m2: m2v,
        m4: m4v,
        um: cumulant_from_moments(m2v, m4v)?,
        ge,
        get,
        q: get - ge,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingReport {
    pub d: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub beta: f64,
    pub reference_beta: f64,
    pub temperature: f64,
    pub convention: EdgeConvention,
    /// `|norm²(β)/norm²(β_ref) ÷ Z(T)/Z(T_ref) - 1|`
    pub partition_ratio_deviation: f64,
    /// `|norm²(β) d^V / Z(T) - 1|`
    pub normalization_deviation: f64,
    pub max_single_deviation: f64,
    pub max_pair_deviation: f64,
    pub max_off_diagonal: f64,
    /// Largest single or pair deviation involving each edge.
    pub per_edge_deviation: Vec<f64>,
    pub ge_quantum: f64,
    pub ge_classical: f64,
    pub get_quantum: f64,
    pub get_classical: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn verify_mapping(d: usize, l: usize, beta: f64) -> Result<MappingReport> {
    verify_mapping_with(d, l, beta, EdgeConvention::HeadMinusTail)
}

/// Compares the deformed Kitaev state at β with the clock model at T = 1/(2β).
pub fn verify_mapping_with(d: usize, l: usize, beta: f64, convention: EdgeConvention) -> Result<MappingReport> {
    let geom = build_lattice(l)?;
    guard("qudit state", d, geom.edge_count(), MAX_QUDIT_AMPLITUDES)?;
    guard("clock configurations", d, geom.vertex_count(), MAX_CLOCK_CONFIGS)?;
    let temp_of = |b: f64| if b == 0.0 { f64::INFINITY } else { 1.0 / (2.0 * b) };
    let reference_beta = beta / 2.0;

    let kitaev = build_kitaev_state(d, l)?;
    let deformed = apply_deformation(&kitaev, beta)?;
    let reference = apply_deformation(&kitaev, reference_beta)?;
    let table = enumerate_clock_with(d, l, temp_of(beta), convention)?;
    let ref_table = enumerate_clock_with(d, l, temp_of(reference_beta), convention)?;

    let q_ratio = deformed.log_norm_sqr - reference.log_norm_sqr;
    let c_ratio = table.log_z - ref_table.log_z;
    let partition_ratio_deviation = ((q_ratio - c_ratio).exp() - 1.0).abs();
    let normalization_deviation =
        ((deformed.log_norm_sqr + geom.vertex_count() as f64 * (d as f64).ln() - table.log_z).exp() - 1.0).abs();

    let n = geom.edge_count();
    let state = &deformed.state;
    let mut per_edge = vec![0.0f64; n];
    let mut max_single: f64 = 0.0;
    let mut max_pair: f64 = 0.0;
    let mut max_off: f64 = 0.0;
    for a in 0..n {
        let q = reduced_diagonals(state, &[a])?;
        let dev = q
            .iter()
            .zip(table.single_probabilities(a))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        per_edge[a] = per_edge[a].max(dev);
        max_single = max_single.max(dev);
        max_off = max_off.max(max_off_diagonal(&reduced_density_matrix(state, &[a])?));
    }
    for a in 0..n {
        for b in a + 1..n {
            let q = reduced_diagonals(state, &[a, b])?;
            let dev = q
                .iter()
                .zip(table.pair_probabilities(a, b))
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            per_edge[a] = per_edge[a].max(dev);
            per_edge[b] = per_edge[b].max(dev);
            max_pair = max_pair.max(dev);
            max_off = max_off.max(max_off_diagonal(&reduced_density_matrix(state, &[a, b])?));
        }
    }
    let quantum = quantum_global_entanglement(state)?;
    let tolerance = MAPPING_TOLERANCE;
    let pass = [
        partition_ratio_deviation,
        normalization_deviation,
        max_single,
        max_pair,
        max_off,
    ]
    .iter()
    .all(|&x| x < tolerance);

    Ok(MappingReport {
        d,
        l,
        beta,
        reference_beta,
        temperature: temp_of(beta),
        convention,
        partition_ratio_deviation,
        normalization_deviation,
        max_single_deviation: max_single,
        max_pair_deviation: max_pair,
        max_off_diagonal: max_off,
        per_edge_deviation: per_edge,
        ge_quantum: quantum.ge,
        ge_classical: table.ge,
        get_quantum: quantum.get,
        get_classical: table.get,
        tolerance,
        pass,
    })
}
