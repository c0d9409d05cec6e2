//! Weight functions for weighted Poincaré inequalities.
//!
//! For a centered, strictly monotone `g`, the weight
//! `w_g(x) = −(1 / (g'(x) ρ(x))) ∫_a^x g ρ` makes `g` saturate the weighted
//! inequality with constant one. [`weight_from_g`] solves the defining ODE
//! with RK4; [`weight_lin_closed_form`] returns the exact weight for
//! `g(x) = x − E[X]` on the families where it is known in closed form.

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{Family, Interval, ProbabilityMeasure};

pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Default number of grid nodes for tabulated weights.
pub const DEFAULT_NODES: usize = 500;

/// Centering tolerances for user-supplied `g`, relative to `max |g|`.
const CENTER_TOL: f64 = 1e-3;
const CENTER_TOL_AFTER: f64 = 1e-8;
/// `|g'| ≤ ZERO_SLOPE_TOL · max|g| / (b − a)` counts as a vanishing endpoint slope.
const ZERO_SLOPE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    /// `g' ≠ 0` at the endpoint, so `w = 0` there.
    Zero,
    /// `g' = 0`, `g'' ≠ 0`: `w = −g/g''`.
    LimitFormula,
    /// Density vanishes together with `g'`; value extrapolated from the interior.
    Extrapolated,
    /// Value of an explicit formula.
    ClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryValues {
    pub left: f64,
    pub right: f64,
    pub left_kind: BoundaryKind,
    pub right_kind: BoundaryKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Left,
    Right,
}

impl Endpoint {
    /// Maps a point onto an endpoint of the support; interior points are rejected.
    pub fn locate(m: &ProbabilityMeasure, x: f64) -> Result<Endpoint> {
        let s = m.support();
        if x == s.a {
            Ok(Endpoint::Left)
        } else if x == s.b {
            Ok(Endpoint::Right)
        } else {
            Err(Error::Contract(format!("x = {x} is not an endpoint of [{}, {}]", s.a, s.b)))
        }
    }
}

/// Closed-form `w_lin` for the families where it is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum LinForm {
    Uniform {
        a: f64,
        b: f64,
    },
    /// Exponential restricted to `[shift, ∞)`.
    Exponential {
        rate: f64,
        shift: f64,
    },
    /// Exponential restricted to `[shift, shift + h]`.
    ExponentialTruncated {
        rate: f64,
        shift: f64,
        h: f64,
    },
    Normal {
        sd: f64,
    },
    NormalTruncated {
        mean: f64,
        sd: f64,
        h: f64,
    },
    Cauchy {
        beta: f64,
    },
    CauchyTruncated {
        beta: f64,
        h: f64,
    },
    Pareto {
        z: f64,
        alpha: f64,
    },
    ParetoTruncated {
        z: f64,
        alpha: f64,
        h: f64,
    },
}

impl LinForm {
    fn eval(&self, x: f64) -> f64 {
        match *self {
            LinForm::Uniform { a, b } => 0.5 * (x - a) * (b - x),
            LinForm::Exponential { rate, shift } => (x - shift) / rate,
            LinForm::ExponentialTruncated { rate, shift, h } => {
                let t = x - shift;
                // (e^{γt} − 1)/(e^{γh} − 1) written to avoid overflow.
                let ratio = (rate * (t - h)).exp() * (-(-rate * t).exp_m1()) / (-(-rate * h).exp_m1());
                (t - h * ratio) / rate
            }
            LinForm::Normal { sd } => sd * sd,
            LinForm::NormalTruncated { mean, sd, h } => {
                let v = sd * sd;
                -v * (((x - mean).powi(2) - h * h) / (2.0 * v)).exp_m1()
            }
            LinForm::Cauchy { beta } => (1.0 + x * x) / (2.0 * (beta - 1.0)),
            LinForm::CauchyTruncated { beta, h } => {
                let (q, qh) = (1.0 + x * x, 1.0 + h * h);
                if beta == 1.0 {
                    0.5 * q * (qh / q).ln()
                } else {
                    (q - q.powf(beta) * qh.powf(1.0 - beta)) / (2.0 * (beta - 1.0))
                }
            }
            LinForm::Pareto { z, alpha } => x * (x - z) / (alpha - 1.0),
            LinForm::ParetoTruncated { z, alpha, h } => {
                let zh = z + h;
                if alpha == 1.0 {
                    let frac = (1.0 / z - 1.0 / x) / (1.0 / z - 1.0 / zh);
                    x * x * ((zh / z).ln() * frac - (x / z).ln())
                } else {
                    let r = (z.powf(1.0 - alpha) - zh.powf(1.0 - alpha)) / (z.powf(-alpha) - zh.powf(-alpha));
                    x.powf(alpha + 1.0) / (alpha - 1.0)
                        * (r * (z.powf(-alpha) - x.powf(-alpha)) - (z.powf(1.0 - alpha) - x.powf(1.0 - alpha)))
                }
            }
        }
    }
}

/// Weights given by explicit formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum ClosedWeight {
    Constant {
        value: f64,
    },
    /// `coef · x^power`
    Monomial {
        coef: f64,
        power: f64,
    },
    /// `(1 − x²)^power`
    OneMinusSquare {
        power: f64,
    },
    /// `x² (1 − x^(α/2))`
    AsymmetricPower {
        alpha: f64,
    },
    /// `w_lin` of the listed family; derivatives follow from the defining ODE.
    Lin {
        lin: LinForm,
        family: Family,
        mean: f64,
    },
}

impl ClosedWeight {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            ClosedWeight::Constant { value } => value,
            ClosedWeight::Monomial { coef, power } => coef * x.powf(power),
            ClosedWeight::OneMinusSquare { power } => (1.0 - x * x).powf(power),
            ClosedWeight::AsymmetricPower { alpha } => x * x * (1.0 - x.powf(0.5 * alpha)),
            ClosedWeight::Lin { lin, .. } => lin.eval(x),
        }
    }

    /// Returns `(w, w', w'')`.
    pub fn derivatives(&self, x: f64, m: &ProbabilityMeasure) -> Result<(f64, f64, f64)> {
        Ok(match *self {
            ClosedWeight::Constant { value } => (value, 0.0, 0.0),
            ClosedWeight::Monomial { coef, power } => (
                coef * x.powf(power),
                coef * power * x.powf(power - 1.0),
                coef * power * (power - 1.0) * x.powf(power - 2.0),
            ),
            ClosedWeight::OneMinusSquare { power } => {
                let q = 1.0 - x * x;
                (
                    q.powf(power),
                    -2.0 * power * x * q.powf(power - 1.0),
                    -2.0 * power * q.powf(power - 1.0) + 4.0 * power * (power - 1.0) * x * x * q.powf(power - 2.0),
                )
            }
            ClosedWeight::AsymmetricPower { alpha } => {
                let p = 0.5 * alpha;
                (
                    x * x - x.powf(p + 2.0),
                    2.0 * x - (p + 2.0) * x.powf(p + 1.0),
                    2.0 - (p + 2.0) * (p + 1.0) * x.powf(p),
                )
            }
            ClosedWeight::Lin { lin, mean, .. } => {
                // (w ρ)' = −(x − m) ρ  ⇒  w' = −(x − m) − w s,  w'' = −1 − w' s − w s'.
                let w = lin.eval(x);
                let s = m.log_density_derivative(x)?;
                let ds = m.log_density_second_derivative(x)?;
                let dw = -(x - mean) - w * s;
                (w, dw, -1.0 - dw * s - w * ds)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightRepr {
    Closed(ClosedWeight),
    /// Piecewise-linear interpolation between nodes.
    Tabulated {
        x: Vec<f64>,
        w: Vec<f64>,
    },
}

/// A weight on an interval, closed-form or tabulated.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightCurve {
    support: Interval,
    repr: WeightRepr,
    boundary: BoundaryValues,
}

impl WeightCurve {
    pub fn closed(support: Interval, form: ClosedWeight) -> Self {
        let end = |x: f64| if x.is_finite() { form.eval(x) } else { f64::NAN };
        let boundary = BoundaryValues {
            left: end(support.a),
            right: end(support.b),
            left_kind: BoundaryKind::ClosedForm,
            right_kind: BoundaryKind::ClosedForm,
        };
        WeightCurve { support, repr: WeightRepr::Closed(form), boundary }
    }

    pub fn constant(support: Interval, value: f64) -> Self {
        Self::closed(support, ClosedWeight::Constant { value })
    }

    pub fn unit(m: &ProbabilityMeasure) -> Self {
        Self::constant(m.support(), 1.0)
    }

    /// Tabulated weight; nodes must be strictly increasing and values finite.
    pub fn tabulated(x: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        if x.len() < 2 || x.len() != w.len() {
            return Err(Error::Data("a tabulated weight needs at least two (x, w) pairs".into()));
        }
        if x.windows(2).any(|p| !(p[1] > p[0])) || x.iter().chain(&w).any(|v| !v.is_finite()) {
            return Err(Error::Data("tabulated weight nodes must be finite and strictly increasing".into()));
        }
        let support = Interval::new(x[0], x[x.len() - 1])?;
        let boundary = BoundaryValues {
            left: w[0],
            right: w[w.len() - 1],
            left_kind: if w[0] == 0.0 { BoundaryKind::Zero } else { BoundaryKind::Extrapolated },
            right_kind: if w[w.len() - 1] == 0.0 { BoundaryKind::Zero } else { BoundaryKind::Extrapolated },
        };
        Ok(WeightCurve { support, repr: WeightRepr::Tabulated { x, w }, boundary })
    }

    pub fn support(&self) -> Interval {
        self.support
    }

    pub fn repr(&self) -> &WeightRepr {
        &self.repr
    }

    pub fn boundary(&self) -> BoundaryValues {
        self.boundary
    }

    pub fn is_tabulated(&self) -> bool {
        matches!(self.repr, WeightRepr::Tabulated { .. })
    }

    /// Evaluates `w(x)`; tabulated curves clamp `x` to their node range.
    pub fn eval(&self, x: f64) -> f64 {
        match &self.repr {
            WeightRepr::Closed(c) => c.eval(x),
            WeightRepr::Tabulated { x: xs, w } => {
                let k = segment(xs, x);
                let t = ((x - xs[k]) / (xs[k + 1] - xs[k])).clamp(0.0, 1.0);
                w[k] + t * (w[k + 1] - w[k])
            }
        }
    }

    /// Returns `(w, w', w'')`; tabulated curves use finite differences.
    pub fn derivatives(&self, x: f64, m: &ProbabilityMeasure) -> Result<(f64, f64, f64)> {
        match &self.repr {
            WeightRepr::Closed(c) => c.derivatives(x, m),
            WeightRepr::Tabulated { x: xs, .. } => {
                let h = 2.0 * (xs[xs.len() - 1] - xs[0]) / (xs.len() - 1) as f64;
                let lo = (x - h).max(self.support.a);
                let hi = (x + h).min(self.support.b);
                let mid = 0.5 * (lo + hi);
                let half = 0.5 * (hi - lo);
                let (f0, f1, f2) = (self.eval(lo), self.eval(mid), self.eval(hi));
                Ok((self.eval(x), (f2 - f0) / (2.0 * half), (f2 - 2.0 * f1 + f0) / (half * half)))
            }
        }
    }

    /// Node values for tabulated curves, or `n` samples of the closed form.
    pub fn table(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        match &self.repr {
            WeightRepr::Tabulated { x, w } => (x.clone(), w.clone()),
            WeightRepr::Closed(c) => {
                let xs = self.support.grid(n);
                let ws = xs.iter().map(|&x| c.eval(x)).collect();
                (xs, ws)
            }
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W, n: usize) -> Result<()> {
        let (xs, ws) = self.table(n);
        writeln!(out, "x,w")?;
        for (x, w) in xs.iter().zip(&ws) {
            writeln!(out, "{x:.15e},{w:.15e}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, n: usize) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f), n)
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != "x,w" {
            return Err(Error::Data(format!("weight CSV header must be 'x,w', found '{header}'")));
        }
        let (mut xs, mut ws) = (Vec::new(), Vec::new());
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split(',');
            let parse = |s: Option<&str>| -> Result<f64> {
                s.and_then(|v| v.trim().parse().ok())
                    .ok_or_else(|| Error::Data(format!("weight CSV row {}: '{line}'", k + 2)))
            };
            xs.push(parse(it.next())?);
            ws.push(parse(it.next())?);
        }
        Self::tabulated(xs, ws)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

/// Index `k` of the segment `[xs[k], xs[k+1]]` holding `x`, clamped to the table.
pub(crate) fn segment(xs: &[f64], x: f64) -> usize {
    let n = xs.len();
    if x <= xs[0] {
        return 0;
    }
    if x >= xs[n - 1] {
        return n - 2;
    }
    // Uniform grids are the common case.
    let h = (xs[n - 1] - xs[0]) / (n - 1) as f64;
    let guess = (((x - xs[0]) / h) as usize).min(n - 2);
    if xs[guess] <= x && x <= xs[guess + 1] {
        return guess;
    }
    match xs.binary_search_by(|v| v.total_cmp(&x)) {
        Ok(k) => k.min(n - 2),
        Err(k) => k - 1,
    }
}

/// A centered, strictly monotone function together with its derivatives.
#[derive(Clone)]
pub struct SaturatingFunction {
    g: RealFn,
    dg: RealFn,
    d2g: Option<RealFn>,
    offset: f64,
}

impl std::fmt::Debug for SaturatingFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SaturatingFunction").field("offset", &self.offset).finish_non_exhaustive()
    }
}

impl SaturatingFunction {
    pub fn new(g: RealFn, dg: RealFn, d2g: Option<RealFn>) -> Self {
        SaturatingFunction { g, dg, d2g, offset: 0.0 }
    }

    pub fn from_fns<G, D>(g: G, dg: D) -> Self
    where
        G: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::new(Arc::new(g), Arc::new(dg), None)
    }

    pub fn with_second_derivative<F: Fn(f64) -> f64 + Send + Sync + 'static>(mut self, d2g: F) -> Self {
        self.d2g = Some(Arc::new(d2g));
        self
    }

    /// `g(x) = x − E[X]`.
    pub fn linear(m: &ProbabilityMeasure) -> Result<Self> {
        let mean = m.mean()?;
        Ok(Self::from_fns(move |x| x - mean, |_| 1.0).with_second_derivative(|_| 0.0))
    }

    pub fn value(&self, x: f64) -> f64 {
        (self.g)(x) - self.offset
    }

    pub fn derivative(&self, x: f64) -> f64 {
        (self.dg)(x)
    }

    pub fn second_derivative(&self, x: f64) -> Option<f64> {
        self.d2g.as_ref().map(|f| f(x))
    }

    /// Subtracts the `μ`-mean.
    pub fn centered(mut self, m: &ProbabilityMeasure) -> Result<Self> {
        let mean = m.quadrature(|x| self.value(x))?;
        self.offset += mean;
        Ok(self)
    }

    pub fn mean(&self, m: &ProbabilityMeasure) -> Result<f64> {
        m.quadrature(|x| self.value(x))
    }
}

/// Exact `w_lin` for the families listed in the module docs.
pub fn weight_lin_closed_form(m: &ProbabilityMeasure) -> Result<WeightCurve> {
    let s = m.support();
    let trunc = m.truncation();
    let scale = if s.is_finite() { s.length() } else { 1.0 };
    let close = |u: f64, v: f64| (u - v).abs() <= 1e-12 * scale.max(u.abs()).max(1.0);
    let unsupported =
        || Err(Error::Unsupported(format!("no closed-form w_lin for {} on [{}, {}]", m.family().name(), s.a, s.b)));
    let lin = match *m.family() {
        Family::Uniform { .. } => LinForm::Uniform { a: s.a, b: s.b },
        Family::Exponential { rate } => {
            if s.b.is_finite() {
                LinForm::ExponentialTruncated { rate, shift: s.a, h: s.length() }
            } else {
                LinForm::Exponential { rate, shift: s.a }
            }
        }
        Family::Normal { mean, sd } => match trunc {
            None => LinForm::Normal { sd },
            Some(t) if t.is_finite() && close(t.a + t.b, 2.0 * mean) => {
                LinForm::NormalTruncated { mean, sd, h: 0.5 * t.length() }
            }
            _ => return unsupported(),
        },
        Family::GeneralizedCauchy { beta } => match trunc {
            None if beta > 1.5 => LinForm::Cauchy { beta },
            None => {
                return Err(Error::Model(format!(
                    "w_lin for the full generalized Cauchy needs beta > 3/2 (got {beta})"
                )))
            }
            Some(t) if t.is_finite() && close(t.a, -t.b) => LinForm::CauchyTruncated { beta, h: t.b },
            _ => return unsupported(),
        },
        Family::Pareto { z, alpha } => match trunc {
            None if alpha > 2.0 => LinForm::Pareto { z, alpha },
            None => return Err(Error::Model(format!("w_lin for the full Pareto needs alpha > 2 (got {alpha})"))),
            Some(t) if t.b.is_finite() && close(t.a, z) => LinForm::ParetoTruncated { z, alpha, h: t.b - z },
            _ => return unsupported(),
        },
        _ => return unsupported(),
    };
    let mean = m.mean()?;
    Ok(WeightCurve::closed(s, ClosedWeight::Lin { lin, family: *m.family(), mean }))
}

/// One classical RK4 step for `u' = f(x, u)`.
fn rk4_step<F: Fn(f64, f64) -> f64>(f: &F, x: f64, u: f64, h: f64) -> f64 {
    let k1 = f(x, u);
    let k2 = f(x + 0.5 * h, u + 0.5 * h * k1);
    let k3 = f(x + 0.5 * h, u + 0.5 * h * k2);
    let k4 = f(x + h, u + h * k3);
    u + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Quadratic through three points, evaluated at `x`.
fn quadratic_through(p: [(f64, f64); 3], x: f64) -> f64 {
    let [(x0, y0), (x1, y1), (x2, y2)] = p;
    y0 * (x - x1) * (x - x2) / ((x0 - x1) * (x0 - x2))
        + y1 * (x - x0) * (x - x2) / ((x1 - x0) * (x1 - x2))
        + y2 * (x - x0) * (x - x1) / ((x2 - x0) * (x2 - x1))
}

fn finite_support(m: &ProbabilityMeasure) -> Result<Interval> {
    let s = m.support();
    if s.is_finite() {
        Ok(s)
    } else {
        Err(Error::Domain(format!("{} needs a finite (truncated) support", m.family().name())))
    }
}

fn g_scale(g: &SaturatingFunction, xs: &[f64]) -> f64 {
    xs.iter().map(|&x| g.value(x).abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE)
}

/// Limit of `w_g` at an endpoint, with its provenance.
fn endpoint_limit(
    g: &SaturatingFunction,
    m: &ProbabilityMeasure,
    end: Endpoint,
    step: f64,
    scale: f64,
) -> Result<(f64, BoundaryKind)> {
    let s = finite_support(m)?;
    let (x, dir) = match end {
        Endpoint::Left => (s.a, 1.0),
        Endpoint::Right => (s.b, -1.0),
    };
    let slope_tol = ZERO_SLOPE_TOL * scale / s.length();
    if g.derivative(x).abs() > slope_tol {
        return Ok((0.0, BoundaryKind::Zero));
    }
    // One-sided differences carry an O(step) error, so the vanishing test is widened accordingly.
    let (d2, tol) = match g.second_derivative(x) {
        Some(v) => (v, slope_tol / s.length()),
        None => (
            (g.value(x) - 2.0 * g.value(x + dir * step) + g.value(x + 2.0 * dir * step)) / (step * step),
            10.0 * step * scale / s.length().powi(3),
        ),
    };
    if d2.abs() <= tol {
        return Err(Error::Hypothesis(format!("g' and g'' both vanish at the endpoint x = {x}")));
    }
    if m.density_unchecked(x) > 0.0 {
        Ok((-g.value(x) / d2, BoundaryKind::LimitFormula))
    } else {
        Ok((f64::NAN, BoundaryKind::Extrapolated))
    }
}

/// `w_g` at a finite endpoint: zero if `g' ≠ 0`, else `−g/g''`.
pub fn boundary_value(g: &SaturatingFunction, m: &ProbabilityMeasure, end: Endpoint) -> Result<f64> {
    let s = finite_support(m)?;
    let xs = s.grid(DEFAULT_NODES);
    let step = xs[1] - xs[0];
    let (v, kind) = endpoint_limit(g, m, end, step, g_scale(g, &xs))?;
    if kind == BoundaryKind::Extrapolated {
        return Err(Error::Unsupported("density vanishes at the endpoint; no limit formula".into()));
    }
    Ok(v)
}

/// Tabulates `w_g` on `nodes` equally spaced points by solving
/// `u' = −g ρ, u(a) = 0` with RK4 and setting `w = u / (g' ρ)`.
pub fn weight_from_g(m: &ProbabilityMeasure, g: &SaturatingFunction, nodes: usize) -> Result<WeightCurve> {
    let s = finite_support(m)?;
    if nodes < 8 {
        return Err(Error::Parameter("weight_from_g needs at least 8 nodes".into()));
    }
    let xs = s.grid(nodes);
    let h = xs[1] - xs[0];
    let scale = g_scale(g, &xs);
    let mean = g.mean(m)?;
    if mean.abs() > CENTER_TOL * scale {
        return Err(Error::Contract(format!("g is not centered: mean {mean:e} (scale {scale:e})")));
    }
    let g = g.clone().centered(m)?;
    let residual = g.mean(m)?;
    if residual.abs() > CENTER_TOL_AFTER * scale {
        return Err(Error::Numerical(format!("centering left a residual mean of {residual:e}")));
    }

    let rhs = |x: f64, _u: f64| -g.value(x) * m.density_unchecked(x);
    let breaks = m.breakpoints();
    let mut u = vec![0.0; nodes];
    for k in 0..nodes - 1 {
        let (x0, x1) = (xs[k], xs[k + 1]);
        let mut x = x0;
        let mut acc = u[k];
        for &p in breaks.iter().filter(|&&p| p > x0 && p < x1) {
            acc = rk4_step(&rhs, x, acc, p - x);
            x = p;
        }
        u[k + 1] = rk4_step(&rhs, x, acc, x1 - x);
    }

    let mut w = vec![0.0; nodes];
    for k in 1..nodes - 1 {
        let x = xs[k];
        let v = u[k] / (g.derivative(x) * m.density_unchecked(x));
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Numerical(format!("u/(g' rho) = {v:e} at interior node x = {x}")));
        }
        w[k] = v;
    }

    let (left, left_kind) = endpoint_limit(&g, m, Endpoint::Left, h, scale)?;
    let (right, right_kind) = endpoint_limit(&g, m, Endpoint::Right, h, scale)?;
    let n = nodes - 1;
    match left_kind {
        BoundaryKind::LimitFormula => {
            let p = [(xs[0], left), (xs[3], w[3]), (xs[4], w[4])];
            w[0] = left;
            w[1] = quadratic_through(p, xs[1]);
            w[2] = quadratic_through(p, xs[2]);
        }
        BoundaryKind::Extrapolated => {
            let p = [(xs[3], w[3]), (xs[4], w[4]), (xs[5], w[5])];
            for k in 0..3 {
                w[k] = quadratic_through(p, xs[k]);
            }
        }
        _ => w[0] = 0.0,
    }
    match right_kind {
        BoundaryKind::LimitFormula => {
            let p = [(xs[n], right), (xs[n - 3], w[n - 3]), (xs[n - 4], w[n - 4])];
            w[n] = right;
            w[n - 1] = quadratic_through(p, xs[n - 1]);
            w[n - 2] = quadratic_through(p, xs[n - 2]);
        }
        BoundaryKind::Extrapolated => {
            let p = [(xs[n - 3], w[n - 3]), (xs[n - 4], w[n - 4]), (xs[n - 5], w[n - 5])];
            for k in 0..3 {
                w[n - k] = quadratic_through(p, xs[n - k]);
            }
        }
        _ => w[n] = 0.0,
    }
    if left_kind != BoundaryKind::Zero && !(w[0] > 0.0) || right_kind != BoundaryKind::Zero && !(w[n] > 0.0) {
        return Err(Error::Numerical(format!("non-positive boundary weight ({}, {})", w[0], w[n])));
    }
    let boundary = BoundaryValues { left: w[0], right: w[n], left_kind, right_kind };
    Ok(WeightCurve { support: s, repr: WeightRepr::Tabulated { x: xs, w }, boundary })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    UniformRef,
    GaussianRef,
}

/// Weight generated by the first Neumann eigenfunction of a reference measure
/// on the same interval: uniform (a cosine) or a centered normal holding 95%
/// of its mass on `[a, b]`. Both weights are positive at the endpoints.
pub fn reference_weight(
    m: &ProbabilityMeasure,
    kind: ReferenceKind,
    nodes: usize,
) -> Result<(WeightCurve, SaturatingFunction)> {
    let s = finite_support(m)?;
    let raw = match kind {
        ReferenceKind::UniformRef => {
            let (a, k) = (s.a, std::f64::consts::PI / s.length());
            SaturatingFunction::from_fns(move |x| (k * (x - a)).cos(), move |x| -k * (k * (x - a)).sin())
                .with_second_derivative(move |x| -k * k * (k * (x - a)).cos())
        }
        ReferenceKind::GaussianRef => crate::spectral::gaussian_reference_function(s, nodes)?,
    };
    let g = raw.centered(m)?;
    for &x in &[s.a, s.b] {
        let d = g.derivative(x);
        let tol = 1e-6 * g_scale(&g, &s.grid(nodes)) / s.length();
        if d.abs() > tol {
            return Err(Error::Numerical(format!("reference g' = {d:e} does not vanish at x = {x}")));
        }
    }
    let w = weight_from_g(m, &g, nodes)?;
    let b = w.boundary();
    if !(b.left > 0.0 && b.right > 0.0) {
        return Err(Error::Numerical(format!("reference weight vanishes at an endpoint ({}, {})", b.left, b.right)));
    }
    Ok((w, g))
}

/// `w_lin` from the closed form when known, else by RK4 on `g(x) = x − E[X]`.
pub fn weight_lin(m: &ProbabilityMeasure, nodes: usize) -> Result<WeightCurve> {
    match weight_lin_closed_form(m) {
        Ok(w) => Ok(w),
        Err(Error::Unsupported(_)) => weight_from_g(m, &SaturatingFunction::linear(m)?, nodes),
        Err(e) => Err(e),
    }
}
