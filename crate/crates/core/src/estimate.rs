//! Monotone main-effect estimation and data-driven weights.
//!
//! The scatter `(x_i, y)` is averaged onto equal-width bins and fitted by a
//! shape-constrained regression spline: the log-derivative is piecewise
//! linear, so the fit is strictly monotone by construction. A first-difference
//! penalty on the log-slope, weighted by generalized cross-validation, pulls
//! the fit toward a straight line. A tiny linear slope floor is added and the
//! result is centered under the input measure.
//!
//! [`fit_additive`] fits all main effects jointly by backfitting, so that the
//! variation carried by the other inputs does not act as noise.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{Interval, ProbabilityMeasure};
use crate::weights::{weight_from_g, SaturatingFunction, WeightCurve};

pub const DEFAULT_BINS: usize = 25;
/// Knots of the piecewise-linear log-slope.
pub const LOG_SLOPE_KNOTS: usize = 5;
/// Degrees-of-freedom inflation in GCV, which counters its tendency to undersmooth.
const GCV_GAMMA: f64 = 1.4;
pub const MIN_PAIRS: usize = 20;
/// Relative slope floor, in units of `(y range)/(x range)`.
pub const SLOPE_FLOOR: f64 = 1e-6;
const SPEARMAN_WARNING: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Auto,
    Increasing,
    Decreasing,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Direction::Auto),
            "inc" | "increasing" => Ok(Direction::Increasing),
            "dec" | "decreasing" => Ok(Direction::Decreasing),
            _ => Err(Error::Config(format!("unknown direction '{s}' (auto, inc, dec)"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Shape {
    /// `shift + scale · spline((x − a)/L)`.
    LogSlope { spline: LogSlopeSpline, a: f64, length: f64, shift: f64, scale: f64 },
    /// Continuous piecewise-linear, constant extension.
    Affine { knots: Vec<f64>, values: Vec<f64> },
}

impl Shape {
    fn eval(&self, x: f64) -> (f64, f64) {
        match self {
            Shape::LogSlope { spline, a, length, shift, scale } => {
                let (v, d) = spline.eval((x - a) / length, None);
                (shift + scale * v, scale * d / length)
            }
            Shape::Affine { knots, values } => {
                let n = knots.len();
                if x <= knots[0] || n == 1 {
                    return (values[0], 0.0);
                }
                if x >= knots[n - 1] {
                    return (values[n - 1], 0.0);
                }
                let k = crate::weights::segment(knots, x);
                let slope = (values[k + 1] - values[k]) / (knots[k + 1] - knots[k]);
                (values[k] + slope * (x - knots[k]), slope)
            }
        }
    }
}

/// Estimated main effect `f̂_i`, monotone with a non-vanishing derivative and centered under `μ_i`.
#[derive(Debug, Clone, Serialize)]
pub struct MainEffectFit {
    pub input: usize,
    support: Interval,
    shape: Shape,
    /// `+1` increasing, `−1` decreasing.
    pub direction: f64,
    pub slope_floor: f64,
    offset: f64,
    pub spearman: f64,
    pub smoothing: f64,
    pub non_monotone_warning: bool,
}

impl MainEffectFit {
    pub fn support(&self) -> Interval {
        self.support
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn value(&self, x: f64) -> f64 {
        self.direction * (self.shape.eval(x).0 + self.slope_floor * (x - self.support.a)) - self.offset
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.direction * (self.shape.eval(x).1 + self.slope_floor)
    }

    pub fn saturating_function(&self) -> SaturatingFunction {
        let (f, d) = (self.clone(), self.clone());
        SaturatingFunction::from_fns(move |x| f.value(x), move |x| d.derivative(x))
    }

    pub fn write_csv<W: Write>(&self, mut out: W, n: usize) -> Result<()> {
        writeln!(out, "x,f_hat,d_f_hat")?;
        for x in self.support.grid(n) {
            writeln!(out, "{x:.15e},{:.15e},{:.15e}", self.value(x), self.derivative(x))?;
        }
        Ok(())
    }
}

fn check_pairs(x: &[f64], y: &[f64], m: &ProbabilityMeasure, min: usize) -> Result<Interval> {
    if x.len() != y.len() {
        return Err(Error::Data(format!("{} x values but {} y values", x.len(), y.len())));
    }
    if x.len() < min {
        return Err(Error::Data(format!("need at least {min} pairs, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value in the scatter".into()));
    }
    let s = m.support();
    if !s.is_finite() {
        return Err(Error::Domain("main-effect fits need a finite support".into()));
    }
    if let Some(v) = x.iter().find(|v| !s.contains(**v)) {
        return Err(Error::Data(format!("x = {v} lies outside [{}, {}]", s.a, s.b)));
    }
    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
    if !(hi > lo) {
        return Err(Error::Degenerate("all y values are equal".into()));
    }
    Ok(s)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Weighted pool-adjacent-violators for a non-decreasing fit.
/// Returns `(weight, position, value)` per pooled block.
fn pava(points: &[(f64, f64, f64)]) -> Vec<(f64, f64, f64)> {
    let mut blocks: Vec<(f64, f64, f64)> = Vec::with_capacity(points.len());
    for &(w, x, y) in points {
        blocks.push((w, x * w, y * w));
        while blocks.len() > 1 {
            let (w1, x1, y1) = blocks[blocks.len() - 1];
            let (w0, x0, y0) = blocks[blocks.len() - 2];
            if y0 / w0 < y1 / w1 {
                break;
            }
            blocks.pop();
            *blocks.last_mut().expect("two blocks") = (w0 + w1, x0 + x1, y0 + y1);
        }
    }
    blocks.into_iter().map(|(w, x, y)| (w, x / w, y / w)).collect()
}

fn bin_index(x: f64, s: Interval, bins: usize) -> usize {
    (((x - s.a) / s.length() * bins as f64) as usize).min(bins - 1)
}

/// Bin means `(count, mean x, mean y, bin index)` over `bins` equal-width bins; empty bins are dropped.
fn bin_means(x: &[f64], y: &[f64], s: Interval, bins: usize) -> Vec<(f64, f64, f64, usize)> {
    let mut acc = vec![(0.0, 0.0, 0.0); bins];
    for (&xv, &yv) in x.iter().zip(y) {
        let k = bin_index(xv, s, bins);
        acc[k].0 += 1.0;
        acc[k].1 += xv;
        acc[k].2 += yv;
    }
    acc.into_iter().enumerate().filter(|(_, b)| b.0 > 0.0).map(|(k, (c, sx, sy))| (c, sx / c, sy / c, k)).collect()
}

/// `∫_0^u e^{dv} dv` and `∫_0^u v e^{dv} dv`.
fn exp_moments(d: f64, u: f64) -> (f64, f64) {
    let du = d * u;
    if du.abs() < 1e-3 {
        let i0 = u * (1.0 + du / 2.0 + du * du / 6.0 + du * du * du / 24.0);
        let i1 = u * u * (0.5 + du / 3.0 + du * du / 8.0 + du * du * du / 30.0);
        (i0, i1)
    } else {
        let i0 = du.exp_m1() / d;
        (i0, (u * du.exp() - i0) / d)
    }
}

/// Monotone curve `β₀ + ∫_0^t exp(s)` on `[0, 1]`, where the log-slope `s`
/// is piecewise linear on equally spaced knots.
#[derive(Debug, Clone, Serialize)]
struct LogSlopeSpline {
    theta: Vec<f64>,
    beta0: f64,
}

impl LogSlopeSpline {
    fn segments(&self) -> usize {
        self.theta.len() - 1
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let k = self.segments();
        let pos = t.clamp(0.0, 1.0) * k as f64;
        let j = (pos as usize).min(k - 1);
        (j, pos - j as f64)
    }

    /// Value, derivative in `t`, and optionally the gradient in `(β₀, θ)`.
    fn eval(&self, t: f64, grad: Option<&mut [f64]>) -> (f64, f64) {
        let k = self.segments();
        let h = 1.0 / k as f64;
        let (j, u) = self.locate(t);
        let mut value = self.beta0;
        let mut g = grad;
        if let Some(g) = g.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
            g[0] = 1.0;
        }
        for seg in 0..=j {
            let span = if seg < j { 1.0 } else { u };
            let d = self.theta[seg + 1] - self.theta[seg];
            let (i0, i1) = exp_moments(d, span);
            let e = h * self.theta[seg].exp();
            value += e * i0;
            if let Some(g) = g.as_deref_mut() {
                g[1 + seg] += e * (i0 - i1);
                g[2 + seg] += e * i1;
            }
        }
        let slope = (self.theta[j] + u * (self.theta[j + 1] - self.theta[j])).exp();
        (value, slope)
    }
}

/// Penalized least squares for a [`LogSlopeSpline`] on weighted points
/// `(weight, t, y)`, with first-difference penalty `λ‖Δθ‖²` and `λ`
/// chosen by GCV against the `n` raw observations.
fn fit_log_slope(points: &[(f64, f64, f64)], n: usize, within_ss: f64, knots: usize) -> (LogSlopeSpline, f64) {
    let p = knots + 1;
    let wsum: f64 = points.iter().map(|q| q.0).sum();
    let (mt, my) = points.iter().fold((0.0, 0.0), |(a, b), q| (a + q.0 * q.1 / wsum, b + q.0 * q.2 / wsum));
    let (stt, sty) =
        points.iter().fold((0.0, 0.0), |(a, b), q| (a + q.0 * (q.1 - mt).powi(2), b + q.0 * (q.1 - mt) * (q.2 - my)));
    let yrange = points.iter().map(|q| q.2).fold(f64::NEG_INFINITY, f64::max)
        - points.iter().map(|q| q.2).fold(f64::INFINITY, f64::min);
    let slope0 = if stt > 0.0 { sty / stt } else { 0.0 }.max(1e-3 * yrange.max(1e-12));
    let mut current = LogSlopeSpline { theta: vec![slope0.ln(); knots], beta0: my - slope0 * mt };

    let mut pen = DMatrix::<f64>::zeros(p, p);
    for r in 1..knots {
        pen[(r, r)] += 1.0;
        pen[(r + 1, r + 1)] += 1.0;
        pen[(r, r + 1)] -= 1.0;
        pen[(r + 1, r)] -= 1.0;
    }
    let params = |sp: &LogSlopeSpline| -> DVector<f64> {
        DVector::from_iterator(p, std::iter::once(sp.beta0).chain(sp.theta.iter().copied()))
    };
    let unpack = |v: &DVector<f64>| LogSlopeSpline { beta0: v[0], theta: v.iter().skip(1).copied().collect() };
    let normal = |sp: &LogSlopeSpline| -> (DMatrix<f64>, DVector<f64>, f64) {
        let mut jtj = DMatrix::<f64>::zeros(p, p);
        let mut jtr = DVector::<f64>::zeros(p);
        let mut rss = 0.0;
        let mut g = vec![0.0; p];
        for &(w, t, y) in points {
            let (v, _) = sp.eval(t, Some(&mut g));
            let r = y - v;
            rss += w * r * r;
            for a in 0..p {
                jtr[a] += w * g[a] * r;
                for b in 0..p {
                    jtj[(a, b)] += w * g[a] * g[b];
                }
            }
        }
        (jtj, jtr, rss)
    };

    let nf = n as f64;
    let mut best: Option<(f64, f64, LogSlopeSpline)> = None;
    for step in 0..=18 {
        let lambda = wsum * 10f64.powf(6.0 - 0.5 * step as f64);
        let objective = |sp: &LogSlopeSpline| {
            let v = params(sp);
            normal(sp).2 + lambda * (v.transpose() * &pen * &v)[(0, 0)]
        };
        let mut mu = 1e-3;
        let mut obj = objective(&current);
        for _ in 0..200 {
            let (jtj, jtr, _) = normal(&current);
            let v = params(&current);
            let rhs = jtr - &pen * &v * lambda;
            let mut improved = false;
            while mu < 1e12 {
                let mut a = &jtj + &pen * lambda;
                for i in 0..p {
                    a[(i, i)] += mu * (jtj[(i, i)] + 1e-12);
                }
                let Some(delta) = a.cholesky().map(|c| c.solve(&rhs)) else {
                    mu *= 10.0;
                    continue;
                };
                let cand = unpack(&(&v + &delta));
                let cobj = objective(&cand);
                if cobj.is_finite() && cobj <= obj {
                    let done = obj - cobj <= 1e-12 * obj.max(1e-300);
                    current = cand;
                    obj = cobj;
                    mu = (mu * 0.3).max(1e-12);
                    improved = !done;
                    break;
                }
                mu *= 10.0;
            }
            if !improved {
                break;
            }
        }
        let (jtj, _, rss) = normal(&current);
        let a = &jtj + &pen * lambda;
        let Some(chol) = a.cholesky() else { continue };
        let hat = chol.solve(&jtj);
        let tr: f64 = (0..p).map(|i| hat[(i, i)]).sum();
        let df = GCV_GAMMA * tr;
        if nf - df <= 0.0 {
            continue;
        }
        let gcv = nf * (within_ss + rss) / ((nf - df) * (nf - df));
        if best.as_ref().is_none_or(|b| gcv < b.0) {
            best = Some((gcv, lambda / wsum, current.clone()));
        }
    }
    let (_, lambda, sp) = best.expect("the heaviest penalty always yields a fit");
    (sp, lambda)
}

fn resolve_direction(direction: Direction, rho: f64) -> f64 {
    match direction {
        Direction::Increasing => 1.0,
        Direction::Decreasing => -1.0,
        Direction::Auto => {
            if rho < 0.0 {
                -1.0
            } else {
                1.0
            }
        }
    }
}

/// How one component of an additive fit is estimated.
#[derive(Debug, Clone, PartialEq)]
pub enum ComponentMethod {
    /// Log-slope spline (strictly monotone, smooth).
    Monotone,
    /// Continuous piecewise-affine on the given knots.
    Affine(Vec<f64>),
}

/// Oriented data `yd = dir · y` to an increasing shape.
fn monotone_shape(x: &[f64], yd: &[f64], s: Interval) -> (Shape, f64) {
    let bins = bin_means(x, yd, s, DEFAULT_BINS);
    let within: f64 = x
        .iter()
        .zip(yd)
        .map(|(&xv, &yv)| {
            let k = bins.partition_point(|b| b.3 < bin_index(xv, s, DEFAULT_BINS));
            (yv - bins[k].2).powi(2)
        })
        .sum();
    let nf = yd.len() as f64;
    let ymean = yd.iter().sum::<f64>() / nf;
    let ysd = (yd.iter().map(|v| (v - ymean).powi(2)).sum::<f64>() / nf).sqrt().max(1e-300);
    let pts: Vec<(f64, f64, f64)> = bins.iter().map(|b| (b.0, (b.1 - s.a) / s.length(), (b.2 - ymean) / ysd)).collect();
    let (spline, lambda) = fit_log_slope(&pts, yd.len(), within / (ysd * ysd), LOG_SLOPE_KNOTS);
    (Shape::LogSlope { spline, a: s.a, length: s.length(), shift: ymean, scale: ysd }, lambda)
}

/// Hat-basis least squares on `knots`, then PAVA on the knot values.
/// The flag reports whether any knots were pooled.
fn affine_shape(x: &[f64], yd: &[f64], s: Interval, knots: &[f64]) -> Result<(Shape, bool)> {
    if knots.len() < 2 || knots.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Parameter("affine knots must be strictly increasing (at least two)".into()));
    }
    if knots[0] > s.a || knots[knots.len() - 1] < s.b {
        return Err(Error::Parameter("affine knots must cover the support".into()));
    }
    let k = knots.len();
    let hat = |j: usize, v: f64| -> f64 {
        let left = if j > 0 { knots[j - 1] } else { f64::NEG_INFINITY };
        let right = if j + 1 < k { knots[j + 1] } else { f64::INFINITY };
        if v <= left || v >= right {
            0.0
        } else if v <= knots[j] {
            if j == 0 {
                1.0
            } else {
                (v - left) / (knots[j] - left)
            }
        } else if j + 1 == k {
            1.0
        } else {
            (right - v) / (right - knots[j])
        }
    };
    let mut ata = DMatrix::<f64>::zeros(k, k);
    let mut aty = DVector::<f64>::zeros(k);
    for (&xv, &yv) in x.iter().zip(yd) {
        let phi: Vec<f64> = (0..k).map(|j| hat(j, xv)).collect();
        for a in 0..k {
            aty[a] += phi[a] * yv;
            for b in 0..k {
                ata[(a, b)] += phi[a] * phi[b];
            }
        }
    }
    let coef = ata
        .clone()
        .lu()
        .solve(&aty)
        .ok_or_else(|| Error::Degenerate("affine design matrix is singular (empty knot interval)".into()))?;
    let mass: Vec<f64> = (0..k).map(|j| ata.row(j).sum()).collect();
    let pts: Vec<(f64, f64, f64)> = (0..k).map(|j| (mass[j].max(1e-12), knots[j], coef[j])).collect();
    let blocks = pava(&pts);
    // Expand pooled blocks back onto the fixed knots.
    let mut values = Vec::with_capacity(k);
    let mut j = 0;
    for b in &blocks {
        let mut w = 0.0;
        while j < k && w < b.0 - 1e-9 * b.0.max(1.0) {
            w += pts[j].0;
            values.push(b.2);
            j += 1;
        }
    }
    while values.len() < k {
        values.push(*values.last().unwrap_or(&0.0));
    }
    Ok((Shape::Affine { knots: knots.to_vec(), values }, blocks.len() < k))
}

fn slope_floor(y: &[f64], s: Interval) -> f64 {
    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
    SLOPE_FLOOR * (hi - lo) / s.length()
}

struct Component {
    input: usize,
    support: Interval,
    method: ComponentMethod,
    dir: f64,
    rho: f64,
    warning: bool,
    floor: f64,
}

impl Component {
    fn new(
        x: &[f64],
        y: &[f64],
        m: &ProbabilityMeasure,
        method: ComponentMethod,
        direction: Direction,
        input: usize,
    ) -> Result<Self> {
        let support = check_pairs(x, y, m, MIN_PAIRS)?;
        let rho = spearman(x, y);
        let warning = direction == Direction::Auto && rho.abs() < SPEARMAN_WARNING;
        let dir = resolve_direction(direction, rho);
        Ok(Component { input, support, method, dir, rho, warning, floor: slope_floor(y, support) })
    }

    /// Fit this component to the (partial) response `r`, centered under `m`.
    fn fit(&self, x: &[f64], r: &[f64], m: &ProbabilityMeasure) -> Result<MainEffectFit> {
        let rd: Vec<f64> = r.iter().map(|v| self.dir * v).collect();
        let (shape, smoothing, pooled) = match &self.method {
            ComponentMethod::Monotone => {
                let (shape, lambda) = monotone_shape(x, &rd, self.support);
                (shape, lambda, false)
            }
            ComponentMethod::Affine(knots) => {
                let (shape, pooled) = affine_shape(x, &rd, self.support, knots)?;
                (shape, 0.0, pooled)
            }
        };
        let mut fit = MainEffectFit {
            input: self.input,
            support: self.support,
            shape,
            direction: self.dir,
            slope_floor: self.floor,
            offset: 0.0,
            spearman: self.rho,
            smoothing,
            non_monotone_warning: self.warning || pooled,
        };
        let mean = m.quadrature(|x| fit.value(x))?;
        fit.offset = mean;
        let residual = m.quadrature(|x| fit.value(x))?;
        if residual.abs() > 1e-8 * (1.0 + mean.abs()) {
            return Err(Error::Numerical(format!("centering residual {residual:e}")));
        }
        Ok(fit)
    }
}

/// Monotone estimate of the main effect of one input from `(x_i, y)` pairs.
pub fn fit_main_effect_monotone(
    x: &[f64],
    y: &[f64],
    m: &ProbabilityMeasure,
    direction: Direction,
    input: usize,
) -> Result<MainEffectFit> {
    Component::new(x, y, m, ComponentMethod::Monotone, direction, input)?.fit(x, y, m)
}

/// Continuous piecewise-affine monotone fit on fixed knots: least squares in
/// the hat basis, then PAVA on the knot values.
pub fn fit_main_effect_affine(
    x: &[f64],
    y: &[f64],
    m: &ProbabilityMeasure,
    knots: &[f64],
    direction: Direction,
    input: usize,
) -> Result<MainEffectFit> {
    Component::new(x, y, m, ComponentMethod::Affine(knots.to_vec()), direction, input)?.fit(x, y, m)
}

/// Sweeps of the additive backfitting loop.
pub const MAX_BACKFIT_SWEEPS: usize = 50;

/// Joint additive fit `y ≈ c + Σ_i f̂_i(x_i)` by backfitting: each component
/// is refitted in turn to the partial residual of the others.
///
/// `rows[k]` is the k-th input vector; `specs[i]` gives the method and
/// direction of component `i`. Directions under [`Direction::Auto`] are
/// resolved once from the marginal Spearman correlation with `y`.
pub fn fit_additive(
    rows: &[Vec<f64>],
    y: &[f64],
    inputs: &[ProbabilityMeasure],
    specs: &[(ComponentMethod, Direction)],
) -> Result<Vec<MainEffectFit>> {
    let d = inputs.len();
    if specs.len() != d {
        return Err(Error::Parameter(format!("{} component specs for {d} inputs", specs.len())));
    }
    if rows.len() != y.len() {
        return Err(Error::Parameter(format!("{} input rows but {} responses", rows.len(), y.len())));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::Parameter(format!("input row of length {} (expected {d})", r.len())));
    }
    let cols: Vec<Vec<f64>> = (0..d).map(|i| rows.iter().map(|r| r[i]).collect()).collect();
    let comps = (0..d)
        .map(|i| Component::new(&cols[i], y, &inputs[i], specs[i].0.clone(), specs[i].1, i))
        .collect::<Result<Vec<_>>>()?;
    let n = y.len();
    let nf = n as f64;
    let ybar = y.iter().sum::<f64>() / nf;
    let ysd = (y.iter().map(|v| (v - ybar).powi(2)).sum::<f64>() / nf).sqrt();
    let mut fitted = vec![vec![0.0; n]; d];
    let mut fits: Vec<Option<MainEffectFit>> = vec![None; d];
    for _ in 0..MAX_BACKFIT_SWEEPS {
        let mut change: f64 = 0.0;
        for i in 0..d {
            let r: Vec<f64> =
                (0..n).map(|k| y[k] - ybar - (0..d).filter(|&j| j != i).map(|j| fitted[j][k]).sum::<f64>()).collect();
            let fit = comps[i].fit(&cols[i], &r, &inputs[i])?;
            let vals: Vec<f64> = cols[i].iter().map(|&x| fit.value(x)).collect();
            let mean = vals.iter().sum::<f64>() / nf;
            for (k, v) in vals.into_iter().enumerate() {
                change = change.max((v - mean - fitted[i][k]).abs());
                fitted[i][k] = v - mean;
            }
            fits[i] = Some(fit);
        }
        if change <= 1e-6 * ysd.max(1e-300) {
            break;
        }
    }
    Ok(fits.into_iter().map(|f| f.expect("every component is fitted in the first sweep")).collect())
}

/// `w_{f̂}`: the weight for which the fitted main effect saturates the inequality.
pub fn data_driven_weight(fit: &MainEffectFit, m: &ProbabilityMeasure, nodes: usize) -> Result<WeightCurve> {
    weight_from_g(m, &fit.saturating_function(), nodes)
}

/// Local quadratic regression with tricube weights over the nearest
/// `span · n` points, evaluated at `at`.
pub fn loess(x: &[f64], y: &[f64], span: f64, at: &[f64]) -> Result<Vec<f64>> {
    if x.len() != y.len() || x.len() < 50 {
        return Err(Error::Data(format!("loess needs at least 50 pairs, got {}", x.len())));
    }
    if !(span > 0.0 && span <= 1.0) {
        return Err(Error::Parameter(format!("span {span} outside (0, 1]")));
    }
    let mut pts: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pts.len();
    let q = ((span * n as f64).ceil() as usize).clamp(3, n);
    at.iter()
        .map(|&x0| {
            // Window of the q nearest neighbours via two pointers.
            let pos = pts.partition_point(|p| p.0 < x0);
            let (mut lo, mut hi) = (pos, pos);
            while hi - lo < q {
                let take_left = if lo == 0 {
                    false
                } else if hi == n {
                    true
                } else {
                    x0 - pts[lo - 1].0 <= pts[hi].0 - x0
                };
                if take_left {
                    lo -= 1;
                } else {
                    hi += 1;
                }
            }
            let dmax = pts[lo..hi].iter().map(|p| (p.0 - x0).abs()).fold(0.0, f64::max) * 1.000_001;
            if !(dmax > 0.0) {
                return Err(Error::Parameter("span too small: empty neighbourhood".into()));
            }
            let mut ata = nalgebra::Matrix3::<f64>::zeros();
            let mut aty = nalgebra::Vector3::<f64>::zeros();
            for &(xv, yv) in &pts[lo..hi] {
                let u = (xv - x0).abs() / dmax;
                let w = (1.0 - u * u * u).powi(3);
                let d = (xv - x0) / dmax;
                let phi = nalgebra::Vector3::new(1.0, d, d * d);
                ata += w * phi * phi.transpose();
                aty += w * yv * phi;
            }
            let sol =
                ata.lu().solve(&aty).ok_or_else(|| Error::Parameter("span too small: singular local fit".into()))?;
            Ok(sol[0])
        })
        .collect()
}
