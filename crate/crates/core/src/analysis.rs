//! Post-processing of observable-vs-temperature series: smoothed derivatives,
//! peak location, linear and shifted power-law fits, fit intersections and
//! cumulant crossings.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub d: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub observable: String,
}

/// y(x) on a strictly increasing grid of the control parameter (2β)⁻¹ = T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub y_err: Option<Vec<f64>>,
    pub meta: SeriesMeta,
}

impl Series {
    pub fn new(x: Vec<f64>, y: Vec<f64>, y_err: Option<Vec<f64>>) -> Result<Self> {
        if x.len() != y.len() || y_err.as_ref().is_some_and(|e| e.len() != x.len()) {
            return Err(Error::InvalidParameter("series columns differ in length".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("series x must be strictly increasing".into()));
        }
        Ok(Series {
            x,
            y,
            y_err,
            meta: SeriesMeta::default(),
        })
    }

    /// Sorts points by x first; duplicates are rejected.
    pub fn from_unsorted(points: &[(f64, f64, Option<f64>)]) -> Result<Self> {
        let mut pts = points.to_vec();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let has_err = pts.iter().all(|p| p.2.is_some());
        Series::new(
            pts.iter().map(|p| p.0).collect(),
            pts.iter().map(|p| p.1).collect(),
            has_err.then(|| pts.iter().map(|p| p.2.unwrap()).collect()),
        )
    }

    pub fn with_meta(mut self, d: usize, l: usize, observable: &str) -> Self {
        self.meta = SeriesMeta {
            d,
            l,
            observable: observable.to_string(),
        };
        self
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Points with `lo <= x <= hi`.
    pub fn window(&self, lo: f64, hi: f64) -> Series {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| self.x[i] >= lo - 1e-12 && self.x[i] <= hi + 1e-12)
            .collect();
        Series {
            x: keep.iter().map(|&i| self.x[i]).collect(),
            y: keep.iter().map(|&i| self.y[i]).collect(),
            y_err: self.y_err.as_ref().map(|e| keep.iter().map(|&i| e[i]).collect()),
            meta: self.meta.clone(),
        }
    }

    /// Fit weights: 1/err² when every error is positive, otherwise 1.
    fn weights(&self) -> (Vec<f64>, bool) {
        match &self.y_err {
            Some(err) if err.iter().all(|&e| e > 0.0 && e.is_finite()) => {
                (err.iter().map(|e| 1.0 / (e * e)).collect(), true)
            }
            _ => (vec![1.0; self.len()], false),
        }
    }

    pub fn argmax(&self) -> Option<usize> {
        (0..self.len()).max_by(|&a, &b| self.y[a].total_cmp(&self.y[b]))
    }
}

/// Gaussian-weighted local-linear smoothing; the kernel width is
/// `width_in_steps` local grid spacings. Linear data pass through unchanged.
pub fn smooth(series: &Series, width_in_steps: f64) -> Series {
    let n = series.len();
    if width_in_steps <= 0.0 || n < 3 {
        return series.clone();
    }
    let x = &series.x;
    let y = (0..n)
        .map(|i| {
            let x0 = x[i];
            let h = if i == 0 {
                x[1] - x[0]
            } else if i == n - 1 {
                x[n - 1] - x[n - 2]
            } else {
                0.5 * (x[i + 1] - x[i - 1])
            };
            let sigma = width_in_steps * h;
            let reach = 3.0 * sigma * (1.0 + 1e-9);
            let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (&xj, &yj) in x.iter().zip(&series.y) {
                let u = xj - x0;
                if u.abs() > reach {
                    continue;
                }
                let w = (-0.5 * (u / sigma).powi(2)).exp();
                s0 += w;
                s1 += w * u;
                s2 += w * u * u;
                t0 += w * yj;
                t1 += w * u * yj;
            }
            let det = s0 * s2 - s1 * s1;
            if det.abs() <= 1e-12 * s0 * s2 {
                t0 / s0
            } else {
                (s2 * t0 - s1 * t1) / det
            }
        })
        .collect();
    Series {
        x: x.clone(),
        y,
        y_err: None,
        meta: series.meta.clone(),
    }
}

/// Central differences of the smoothed series; one-sided at the ends.
pub fn derivative(series: &Series, width_in_steps: f64) -> Result<Series> {
    if series.len() < 5 {
        return Err(Error::TooFewPoints(format!(
            "derivative needs at least 5 points, got {}",
            series.len()
        )));
    }
    let s = smooth(series, width_in_steps);
    let n = s.len();
    let (x, y) = (&s.x, &s.y);
    let mut dy = Vec::with_capacity(n);
    dy.push((y[1] - y[0]) / (x[1] - x[0]));
    for i in 1..n - 1 {
        dy.push((y[i + 1] - y[i - 1]) / (x[i + 1] - x[i - 1]));
    }
    dy.push((y[n - 1] - y[n - 2]) / (x[n - 1] - x[n - 2]));
    let mut meta = series.meta.clone();
    meta.observable = format!("d{}/dT", meta.observable);
    Ok(Series {
        x: x.clone(),
        y: dy,
        y_err: None,
        meta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub x: f64,
    pub uncertainty: f64,
    pub fit_uncertainty: f64,
    pub grid_spacing: f64,
    pub height: f64,
}

/// Weighted polynomial least squares in the centered variable `x - center`.
/// Returns coefficients, covariance and weighted residual sum of squares.
fn poly_lsq(x: &[f64], y: &[f64], w: &[f64], degree: usize, center: f64) -> Option<(DVector<f64>, DMatrix<f64>, f64)> {
    let k = degree + 1;
    let design = DMatrix::from_fn(x.len(), k, |i, j| (x[i] - center).powi(j as i32));
    let wd = DMatrix::from_fn(x.len(), k, |i, j| design[(i, j)] * w[i]);
    let normal = design.transpose() * &wd;
    let rhs = wd.transpose() * DVector::from_column_slice(y);
    let chol = normal.clone().cholesky()?;
    let coef = chol.solve(&rhs);
    let cov = chol.inverse();
    let rss = (0..x.len())
        .map(|i| {
            let f: f64 = (0..k).map(|j| coef[j] * design[(i, j)]).sum();
            w[i] * (y[i] - f).powi(2)
        })
        .sum();
    Some((coef, cov, rss))
}

/// Vertex of a quadratic through the 5 points around the discrete maximum.
pub fn find_peak(series: &Series) -> Result<Peak> {
    let n = series.len();
    if n < 3 {
        return Err(Error::TooFewPoints(format!("peak search needs 3 points, got {n}")));
    }
    let k = series.argmax().expect("non-empty");
    if k == 0 {
        return Err(Error::BoundaryMaximum("lower end"));
    }
    if k == n - 1 {
        return Err(Error::BoundaryMaximum("upper end"));
    }
    let span = n.min(5);
    let lo = k.saturating_sub(span / 2).min(n - span);
    let idx = lo..lo + span;
    let x = &series.x[idx.clone()];
    let y = &series.y[idx.clone()];
    let (w_all, weighted) = series.weights();
    let w = &w_all[idx];
    let center = series.x[k];
    let (coef, cov, rss) = poly_lsq(x, y, w, 2, center)
        .ok_or_else(|| Error::FitFailure("singular quadratic fit around the peak".into()))?;
    let (c1, c2) = (coef[1], coef[2]);
    if !(c2 < 0.0) {
        return Err(Error::FitFailure("quadratic around the maximum is not concave".into()));
    }
    let u = (-c1 / (2.0 * c2)).clamp(x[0] - center, x[span - 1] - center);
    let g1 = -1.0 / (2.0 * c2);
    let g2 = c1 / (2.0 * c2 * c2);
    let scale = if weighted || span <= 3 {
        1.0
    } else {
        rss / (span - 3) as f64
    };
    let var = scale * (g1 * g1 * cov[(1, 1)] + 2.0 * g1 * g2 * cov[(1, 2)] + g2 * g2 * cov[(2, 2)]);
    let fit_uncertainty = var.max(0.0).sqrt();
    let grid_spacing = (x[span - 1] - x[0]) / (span - 1) as f64;
    Ok(Peak {
        x: center + u,
        uncertainty: (0.25 * grid_spacing * grid_spacing + fit_uncertainty * fit_uncertainty).sqrt(),
        fit_uncertainty,
        grid_spacing,
        height: coef[0] + c1 * u + c2 * u * u,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitModel {
    /// `y = a x + b`
    Linear,
    /// `y = a x^(-b) + c`
    ShiftedPowerLaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: FitModel,
    pub coefficients: Vec<f64>,
    pub uncertainties: Vec<f64>,
    /// Row-major covariance of the coefficients.
    pub covariance: Vec<f64>,
    /// Weighted residual sum of squares (unit weights without errors).
    pub rss: f64,
    pub window: (f64, f64),
    pub points: usize,
    pub iterations: usize,
}

impl FitResult {
    pub fn eval(&self, x: f64) -> f64 {
        let c = &self.coefficients;
        match self.model {
            FitModel::Linear => c[0] * x + c[1],
            FitModel::ShiftedPowerLaw => c[0] * x.powf(-c[1]) + c[2],
        }
    }

    fn slope(&self, x: f64) -> f64 {
        let c = &self.coefficients;
        match self.model {
            FitModel::Linear => c[0],
            FitModel::ShiftedPowerLaw => -c[0] * c[1] * x.powf(-c[1] - 1.0),
        }
    }

    fn param_gradient(&self, x: f64) -> Vec<f64> {
        let c = &self.coefficients;
        match self.model {
            FitModel::Linear => vec![x, 1.0],
            FitModel::ShiftedPowerLaw => {
                let p = x.powf(-c[1]);
                vec![p, -c[0] * x.ln() * p, 1.0]
            }
        }
    }

    fn propagated_variance(&self, grad: &[f64]) -> f64 {
        let k = grad.len();
        let mut v = 0.0;
        for i in 0..k {
            for j in 0..k {
                v += grad[i] * self.covariance[i * k + j] * grad[j];
            }
        }
        v
    }

    /// Weighted RSS of this model on an arbitrary series.
    pub fn rss_on(&self, series: &Series) -> f64 {
        let (w, _) = series.weights();
        series
            .x
            .iter()
            .zip(&series.y)
            .zip(&w)
            .map(|((&x, &y), &w)| w * (y - self.eval(x)).powi(2))
            .sum()
    }
}

fn select_window(series: &Series, window: Option<(f64, f64)>) -> (Series, (f64, f64)) {
    match window {
        Some((lo, hi)) => (series.window(lo, hi), (lo, hi)),
        None => (
            series.clone(),
            (
                series.x.first().copied().unwrap_or(f64::NAN),
                series.x.last().copied().unwrap_or(f64::NAN),
            ),
        ),
    }
}

/// Weighted least-squares line over the window.
pub fn fit_linear(series: &Series, window: Option<(f64, f64)>) -> Result<FitResult> {
    let (s, win) = select_window(series, window);
    if s.len() < 3 {
        return Err(Error::DegenerateWindow(format!(
            "linear fit needs at least 3 points in [{}, {}], got {}",
            win.0,
            win.1,
            s.len()
        )));
    }
    let (w, weighted) = s.weights();
    let center = s.x.iter().sum::<f64>() / s.len() as f64;
    let (coef, cov, rss) = poly_lsq(&s.x, &s.y, &w, 1, center)
        .ok_or_else(|| Error::DegenerateWindow("x values do not span the window".into()))?;
    // y = c0 + c1 (x - center)  =>  a = c1, b = c0 - c1 center
    let scale = if weighted { 1.0 } else { rss / (s.len() - 2) as f64 };
    let (va, vc0, cov_ac0) = (cov[(1, 1)] * scale, cov[(0, 0)] * scale, cov[(0, 1)] * scale);
    let vb = vc0 - 2.0 * center * cov_ac0 + center * center * va;
    let cov_ab = cov_ac0 - center * va;
    Ok(FitResult {
        model: FitModel::Linear,
        coefficients: vec![coef[1], coef[0] - coef[1] * center],
        uncertainties: vec![va.max(0.0).sqrt(), vb.max(0.0).sqrt()],
        covariance: vec![va, cov_ab, cov_ab, vb],
        rss,
        window: win,
        points: s.len(),
        iterations: 1,
    })
}

const POWER_B_MIN: f64 = 0.5;
const POWER_B_MAX: f64 = 6.0;
const POWER_B_STEP: f64 = 0.01;
const MAX_LM_ITERATIONS: usize = 500;

/// Best `(a, c)` and weighted RSS for fixed exponent b.
fn power_profile(x: &[f64], y: &[f64], w: &[f64], b: f64) -> Option<(f64, f64, f64)> {
    let (mut s00, mut s01, mut s11, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..x.len() {
        let p = x[i].powf(-b);
        s00 += w[i] * p * p;
        s01 += w[i] * p;
        s11 += w[i];
        t0 += w[i] * p * y[i];
        t1 += w[i] * y[i];
    }
    let det = s00 * s11 - s01 * s01;
    if det.abs() <= 1e-14 * s00 * s11 {
        return None;
    }
    let a = (s11 * t0 - s01 * t1) / det;
    let c = (s00 * t1 - s01 * t0) / det;
    let rss = (0..x.len())
        .map(|i| w[i] * (y[i] - a * x[i].powf(-b) - c).powi(2))
        .sum();
    Some((a, c, rss))
}

/// `y = a x^(-b) + c`: grid search over b with (a, c) by linear least squares,
/// then damped Gauss-Newton on all three.
pub fn fit_powerlaw(series: &Series, window: Option<(f64, f64)>) -> Result<FitResult> {
    let (s, win) = select_window(series, window);
    if s.len() < 4 {
        return Err(Error::DegenerateWindow(format!(
            "power-law fit needs at least 4 points in [{}, {}], got {}",
            win.0,
            win.1,
            s.len()
        )));
    }
    if s.x.iter().any(|&x| x <= 0.0) {
        return Err(Error::InvalidParameter("power-law fit needs x > 0".into()));
    }
    let (w, weighted) = s.weights();
    let (x, y) = (&s.x, &s.y);

    let steps = ((POWER_B_MAX - POWER_B_MIN) / POWER_B_STEP).round() as usize;
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for k in 0..=steps {
        let b = POWER_B_MIN + k as f64 * POWER_B_STEP;
        if let Some((a, c, rss)) = power_profile(x, y, &w, b) {
            if best.is_none_or(|bst| rss < bst.3) {
                best = Some((a, b, c, rss));
            }
        }
    }
    let (a0, b0, c0, _) = best.ok_or_else(|| Error::FitFailure("grid search found no usable exponent".into()))?;

    let model = |p: &[f64; 3], xi: f64| p[0] * xi.powf(-p[1]) + p[2];
    let rss_of = |p: &[f64; 3]| -> f64 {
        (0..x.len()).map(|i| w[i] * (y[i] - model(p, x[i])).powi(2)).sum()
    };
    let normal_of = |p: &[f64; 3]| -> (DMatrix<f64>, DVector<f64>) {
        let mut jtj = DMatrix::zeros(3, 3);
        let mut jtr = DVector::zeros(3);
        for i in 0..x.len() {
            let pw = x[i].powf(-p[1]);
            let g = [pw, -p[0] * x[i].ln() * pw, 1.0];
            let r = y[i] - model(p, x[i]);
            for r_ in 0..3 {
                jtr[r_] += w[i] * g[r_] * r;
                for c_ in 0..3 {
                    jtj[(r_, c_)] += w[i] * g[r_] * g[c_];
                }
            }
        }
        (jtj, jtr)
    };

    let mut p = [a0, b0, c0];
    let mut rss = rss_of(&p);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_LM_ITERATIONS {
        iterations += 1;
        let (jtj, jtr) = normal_of(&p);
        let mut damped = jtj.clone();
        for i in 0..3 {
            damped[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
        }
        let Some(chol) = damped.cholesky() else {
            return Err(Error::FitFailure(format!(
                "singular normal equations at a={:.3e}, b={:.3}, c={:.3e}: exponent not identifiable",
                p[0], p[1], p[2]
            )));
        };
        let step = chol.solve(&jtr);
        let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
        let trial_rss = rss_of(&trial);
        let small_step = (0..3).all(|i| step[i].abs() <= 1e-12 * (p[i].abs() + 1e-12));
        if trial_rss.is_finite() && trial_rss <= rss {
            let gain = rss - trial_rss;
            p = trial;
            rss = trial_rss;
            lambda = (lambda / 10.0).max(1e-12);
            if small_step || gain <= 1e-15 * rss {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e16 || small_step {
                // no descent direction left: at the minimum up to rounding
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(Error::FitFailure(format!(
            "no convergence after {MAX_LM_ITERATIONS} iterations (a={:.4e}, b={:.4}, c={:.4e}, rss={:.3e})",
            p[0], p[1], p[2], rss
        )));
    }
    if !(p.iter().all(|v| v.is_finite()) && p[0] > 0.0 && p[1] > 0.0) {
        return Err(Error::FitFailure(format!(
            "converged outside the model domain a > 0, b > 0: a={:.4e}, b={:.4}",
            p[0], p[1]
        )));
    }
    let (jtj, _) = normal_of(&p);
    let cov = jtj
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::FitFailure("exponent not identifiable (singular Jacobian)".into()))?;
    let scale = if weighted { 1.0 } else { rss / (s.len() - 3).max(1) as f64 };
    let covariance: Vec<f64> = (0..9).map(|k| cov[(k / 3, k % 3)] * scale).collect();
    Ok(FitResult {
        model: FitModel::ShiftedPowerLaw,
        coefficients: p.to_vec(),
        uncertainties: (0..3).map(|i| covariance[i * 4].max(0.0).sqrt()).collect(),
        covariance,
        rss,
        window: win,
        points: s.len(),
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    pub x: f64,
    /// Propagated from both fits' coefficient covariances.
    pub uncertainty: f64,
}

/// Root of `linear(x) - power(x)` in `bracket` by bisection.
pub fn intersect_fits(linear: &FitResult, power: &FitResult, bracket: (f64, f64)) -> Result<Intersection> {
    let f = |x: f64| linear.eval(x) - power.eval(x);
    let (mut lo, mut hi) = bracket;
    let (mut flo, fhi) = (f(lo), f(hi));
    if !(flo * fhi < 0.0) {
        if flo == 0.0 {
            return Ok(intersection_at(linear, power, lo));
        }
        if fhi == 0.0 {
            return Ok(intersection_at(linear, power, hi));
        }
        return Err(Error::NoSignChange(format!(
            "linear - power keeps its sign on [{lo}, {hi}] ({flo:.3e}, {fhi:.3e})"
        )));
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(intersection_at(linear, power, 0.5 * (lo + hi)))
}

fn intersection_at(linear: &FitResult, power: &FitResult, x: f64) -> Intersection {
    // implicit function: dx*/dp = -(∂f/∂p) / (∂f/∂x), f = linear - power
    let fx = linear.slope(x) - power.slope(x);
    let var = if fx.abs() > 0.0 {
        (linear.propagated_variance(&linear.param_gradient(x))
            + power.propagated_variance(&power.param_gradient(x)))
            / (fx * fx)
    } else {
        f64::INFINITY
    };
    Intersection {
        x,
        uncertainty: var.sqrt(),
    }
}

/// Scans `[lo, hi]` for the first sign change of `linear - power` and bisects it.
pub fn first_intersection(linear: &FitResult, power: &FitResult, lo: f64, hi: f64) -> Result<Intersection> {
    let steps = 2000;
    let h = (hi - lo) / steps as f64;
    let f = |x: f64| linear.eval(x) - power.eval(x);
    let mut prev = lo;
    for k in 1..=steps {
        let x = lo + k as f64 * h;
        if f(prev) * f(x) <= 0.0 {
            return intersect_fits(linear, power, (prev, x));
        }
        prev = x;
    }
    Err(Error::NoSignChange(format!("curves do not cross on [{lo}, {hi}]")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCrossing {
    pub l_small: usize,
    pub l_large: usize,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub t_c: f64,
    /// Largest difference between pairwise crossings.
    pub spread: f64,
    pub pairs: Vec<PairCrossing>,
}

fn interpolate(s: &Series, x: f64) -> Option<f64> {
    if x < s.x[0] - 1e-12 || x > s.x[s.len() - 1] + 1e-12 {
        return None;
    }
    let k = s.x.partition_point(|&v| v < x);
    if k < s.len() && (s.x[k] - x).abs() < 1e-12 {
        return Some(s.y[k]);
    }
    if k == 0 {
        return Some(s.y[0]);
    }
    if k >= s.len() {
        return Some(s.y[s.len() - 1]);
    }
    let t = (x - s.x[k - 1]) / (s.x[k] - s.x[k - 1]);
    Some(s.y[k - 1] + t * (s.y[k] - s.y[k - 1]))
}

/// Crossing of two curves by piecewise-linear interpolation. Of all sign
/// changes of the difference, the one that best splits it into a positive
/// and a negative side wins, so noise in the flat tails is ignored.
pub fn crossing_of(small: &Series, large: &Series) -> Result<f64> {
    let xs: Vec<f64> = large
        .x
        .iter()
        .copied()
        .filter(|&x| interpolate(small, x).is_some())
        .collect();
    if xs.len() < 2 {
        return Err(Error::NoCrossing("series share fewer than 2 grid points".into()));
    }
    let diff: Vec<f64> = xs
        .iter()
        .map(|&x| interpolate(large, x).unwrap() - interpolate(small, x).unwrap())
        .collect();
    let total: f64 = diff.iter().sum();
    let mut prefix = 0.0;
    let mut best: Option<(usize, f64)> = None;
    for k in 0..diff.len() - 1 {
        prefix += diff[k];
        if diff[k] * diff[k + 1] <= 0.0 && !(diff[k] == 0.0 && diff[k + 1] == 0.0) {
            let score = (prefix - (total - prefix)).abs();
            if best.is_none_or(|b| score > b.1) {
                best = Some((k, score));
            }
        }
    }
    let (k, _) = best.ok_or_else(|| {
        Error::NoCrossing(format!(
            "L={} and L={} do not cross on [{}, {}]",
            small.meta.l,
            large.meta.l,
            xs[0],
            xs[xs.len() - 1]
        ))
    })?;
    let (d0, d1) = (diff[k], diff[k + 1]);
    if d0 == d1 {
        return Ok(xs[k]);
    }
    Ok(xs[k] + (xs[k + 1] - xs[k]) * d0 / (d0 - d1))
}

/// Mean pairwise crossing of cumulant curves for increasing sizes.
pub fn cumulant_crossing(series: &[Series]) -> Result<Crossing> {
    if series.len() < 2 {
        return Err(Error::TooFewPoints("crossing needs at least two sizes".into()));
    }
    let mut pairs = Vec::new();
    for i in 0..series.len() {
        for j in i + 1..series.len() {
            let t = crossing_of(&series[i], &series[j])?;
            pairs.push(PairCrossing {
                l_small: series[i].meta.l,
                l_large: series[j].meta.l,
                t,
            });
        }
    }
    let ts: Vec<f64> = pairs.iter().map(|p| p.t).collect();
    let t_c = ts.iter().sum::<f64>() / ts.len() as f64;
    let spread = ts.iter().cloned().fold(f64::MIN, f64::max) - ts.iter().cloned().fold(f64::MAX, f64::min);
    Ok(Crossing { t_c, spread, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    fn series_of(x: &[f64], f: impl Fn(f64) -> f64) -> Series {
        Series::new(x.to_vec(), x.iter().map(|&v| f(v)).collect(), None).unwrap()
    }

    #[test]
    fn series_validation() {
        assert!(Series::new(vec![0.0, 1.0], vec![1.0], None).is_err());
        assert!(Series::new(vec![1.0, 1.0], vec![1.0, 2.0], None).is_err());
    }

    #[test]
    fn derivative_of_line_is_constant() {
        let x = grid(0.1, 2.0, 25);
        for width in [0.0, 1.0, 2.5] {
            let d = derivative(&series_of(&x, |v| 3.0 * v + 1.0), width).unwrap();
            for v in d.y {
                assert_relative_eq!(v, 3.0, epsilon = 1e-9);
            }
        }
        // irregular grid
        let x = vec![0.0, 0.1, 0.15, 0.3, 0.32, 0.5, 0.9];
        let d = derivative(&series_of(&x, |v| 3.0 * v + 1.0), 1.0).unwrap();
        for v in d.y {
            assert_relative_eq!(v, 3.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn derivative_of_square_on_interior() {
        let h = 0.05;
        let x = grid(0.0, 2.0, 41);
        let d = derivative(&series_of(&x, |v| v * v), 1.0).unwrap();
        // kernel reaches 3 steps; from index 4 on, neighbours are smoothed symmetrically
        for i in 4..x.len() - 4 {
            assert!((d.y[i] - 2.0 * x[i]).abs() < 1e-9 + h * h, "i={i}");
        }
        let raw = derivative(&series_of(&x, |v| v * v), 0.0).unwrap();
        for i in 1..x.len() - 1 {
            assert_relative_eq!(raw.y[i], 2.0 * x[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn derivative_needs_five_points() {
        let x = grid(0.0, 1.0, 4);
        assert!(matches!(derivative(&series_of(&x, |v| v), 1.0), Err(Error::TooFewPoints(_))));
    }

    #[test]
    fn derivative_undoes_cumulative_sum() {
        let h = 0.02;
        let x: Vec<f64> = (0..60).map(|i| i as f64 * h).collect();
        let f: Vec<f64> = x.iter().map(|v| (3.0 * v).sin() + 0.5).collect();
        // trapezoid cumulative integral
        let mut c = vec![0.0];
        for i in 1..x.len() {
            c.push(c[i - 1] + 0.5 * h * (f[i] + f[i - 1]));
        }
        let d = derivative(&Series::new(x.clone(), c, None).unwrap(), 0.0).unwrap();
        for i in 1..x.len() - 1 {
            assert!((d.y[i] - f[i]).abs() < 10.0 * h * h);
        }
    }

    #[test]
    fn peak_of_exact_parabola() {
        let x = grid(0.1, 0.9, 33);
        let p = find_peak(&series_of(&x, |v| 1.0 - 4.0 * (v - 0.4).powi(2))).unwrap();
        assert!((p.x - 0.4).abs() < 1e-12);
        assert!(p.fit_uncertainty < 1e-9);
        assert_relative_eq!(p.uncertainty, p.grid_spacing / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn peak_at_boundary_is_rejected() {
        let x = grid(0.0, 1.0, 10);
        assert!(matches!(find_peak(&series_of(&x, |v| v)), Err(Error::BoundaryMaximum(_))));
        assert!(matches!(find_peak(&series_of(&x, |v| -v)), Err(Error::BoundaryMaximum(_))));
    }

    #[test]
    fn linear_fit_recovers_reference_line() {
        let x = grid(0.4, 0.85, 10);
        let fit = fit_linear(&series_of(&x, |v| -0.097 * v + 0.2312), None).unwrap();
        assert!((fit.coefficients[0] + 0.097).abs() < 1e-12);
        assert!((fit.coefficients[1] - 0.2312).abs() < 1e-12);
        assert!(fit.rss < 1e-20);
    }

    #[test]
    fn linear_fit_rejects_two_points() {
        let x = grid(0.0, 1.0, 10);
        let s = series_of(&x, |v| v);
        assert!(matches!(fit_linear(&s, Some((0.0, 0.12))), Err(Error::DegenerateWindow(_))));
    }

    #[test]
    fn linear_fit_on_noisy_data_within_quoted_errors() {
        use rand::{Rng, SeedableRng};
        let mut rng = crate::clock_mc::McRng::seed_from_u64(77);
        let x = grid(0.4, 0.85, 20);
        let truth = |v: f64| -0.097 * v + 0.2312;
        let pts: Vec<(f64, f64, Option<f64>)> = x
            .iter()
            .map(|&v| {
                let sigma = 0.01 * truth(v);
                // Box-Muller
                let (u1, u2): (f64, f64) = (rng.random(), rng.random());
                let z = (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                (v, truth(v) + sigma * z, Some(sigma))
            })
            .collect();
        let fit = fit_linear(&Series::from_unsorted(&pts).unwrap(), None).unwrap();
        assert!((fit.coefficients[0] + 0.097).abs() < 3.0 * fit.uncertainties[0]);
        assert!((fit.coefficients[1] - 0.2312).abs() < 3.0 * fit.uncertainties[1]);
    }

    #[test]
    fn power_fit_recovers_reference_curves() {
        let x = grid(1.05, 2.0, 20);
        for (a, b, c) in [(0.1018, 2.358, 0.02804), (0.1047, 2.321, 0.02879), (0.1067, 2.289, 0.02943)] {
            let fit = fit_powerlaw(&series_of(&x, |v| a * v.powf(-b) + c), None).unwrap();
            assert!((fit.coefficients[0] - a).abs() < 1e-6, "{fit:?}");
            assert!((fit.coefficients[1] - b).abs() < 1e-6, "{fit:?}");
            assert!((fit.coefficients[2] - c).abs() < 1e-6, "{fit:?}");
            assert!(fit.rss < 1e-8);
        }
    }

    #[test]
    fn power_fit_of_constant_fails() {
        let x = grid(1.0, 2.0, 12);
        assert!(matches!(fit_powerlaw(&series_of(&x, |_| 0.3), None), Err(Error::FitFailure(_))));
    }

    #[test]
    fn power_fit_needs_four_points() {
        let x = grid(1.0, 2.0, 3);
        assert!(matches!(
            fit_powerlaw(&series_of(&x, |v| v.powf(-2.0)), None),
            Err(Error::DegenerateWindow(_))
        ));
    }

    #[test]
    fn analytic_intersection() {
        let x = grid(0.5, 2.0, 10);
        let lin = fit_linear(&series_of(&x, |v| v), None).unwrap();
        let pow = fit_powerlaw(&series_of(&x, |v| 1.0 / v + 1e-3 * 0.0), None);
        // 1/x with c = 0 is inside the model
        let pow = pow.unwrap();
        let ix = intersect_fits(&lin, &pow, (0.5, 2.0)).unwrap();
        assert!((ix.x - 1.0).abs() < 1e-9);
        assert!(matches!(intersect_fits(&lin, &pow, (1.2, 2.0)), Err(Error::NoSignChange(_))));
    }

    #[test]
    fn crossing_of_two_lines() {
        let x = grid(0.2, 0.6, 9);
        let a = series_of(&x, |v| 0.5 - (v - 0.4)).with_meta(7, 8, "Um");
        let b = series_of(&x, |v| 0.5 - 2.0 * (v - 0.4)).with_meta(7, 16, "Um");
        let c = cumulant_crossing(&[a, b]).unwrap();
        assert!((c.t_c - 0.4).abs() < 1e-12);
        assert_eq!(c.spread, 0.0);
    }

    #[test]
    fn crossing_ignores_tail_noise() {
        let x = grid(0.2, 0.8, 31);
        let step = |v: f64, w: f64| 0.375 + 0.125 * (-(v - 0.5) / w).tanh();
        let a = series_of(&x, |v| step(v, 0.08));
        let noise = [1e-4, -1e-4];
        let b = Series::new(
            x.clone(),
            x.iter()
                .enumerate()
                .map(|(i, &v)| step(v, 0.04) + if !(0.3..=0.7).contains(&v) { noise[i % 2] } else { 0.0 })
                .collect(),
            None,
        )
        .unwrap();
        let t = crossing_of(&a, &b).unwrap();
        assert!((t - 0.5).abs() < 1e-9);
    }

    #[test]
    fn no_crossing_is_an_error() {
        let x = grid(0.2, 0.6, 9);
        let a = series_of(&x, |v| v);
        let b = series_of(&x, |v| v + 1.0);
        assert!(matches!(cumulant_crossing(&[a, b]), Err(Error::NoCrossing(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn fits_ignore_point_order(seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = crate::clock_mc::McRng::seed_from_u64(seed);
            let x = grid(1.0, 2.0, 12);
            let mut pts: Vec<(f64, f64, Option<f64>)> = x
                .iter()
                .map(|&v| (v, 0.1 * v.powf(-2.3) + 0.03 + 1e-4 * (v * 37.0).sin(), Some(1e-3)))
                .collect();
            let sorted = Series::from_unsorted(&pts).unwrap();
            pts.shuffle(&mut rng);
            let shuffled = Series::from_unsorted(&pts).unwrap();
            prop_assert_eq!(fit_linear(&sorted, None).unwrap(), fit_linear(&shuffled, None).unwrap());
            prop_assert_eq!(fit_powerlaw(&sorted, None).unwrap(), fit_powerlaw(&shuffled, None).unwrap());
        }

        #[test]
        fn peak_is_shift_and_scale_invariant(shift in -5.0f64..5.0, scale in 0.1f64..10.0, center in 0.3f64..0.7) {
            let x = grid(0.0, 1.0, 41);
            let base = series_of(&x, |v| (-(v - center).powi(2) / 0.02).exp());
            let moved = series_of(&x, |v| scale * (-(v - center).powi(2) / 0.02).exp() + shift);
            let p = find_peak(&base).unwrap();
            let q = find_peak(&moved).unwrap();
            prop_assert!((p.x - q.x).abs() < 1e-9);
        }

        #[test]
        fn noiseless_fits_have_tiny_residuals(a in 0.05f64..0.2, b in 1.0f64..4.0, c in 0.0f64..0.05, slope in -0.2f64..-0.05) {
            let x = grid(1.05, 2.0, 16);
            let pow = fit_powerlaw(&series_of(&x, |v| a * v.powf(-b) + c), None).unwrap();
            prop_assert!(pow.rss < 1e-8);
            let lin = fit_linear(&series_of(&x, |v| slope * v + 0.2), None).unwrap();
            prop_assert!(lin.rss < 1e-8);
        }
    }
}
