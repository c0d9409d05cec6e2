//! Sobol indices, weighted DGSM bounds and Poincaré chaos expansions.
//!
//! Every Monte-Carlo draw comes from a ChaCha stream derived from the master
//! seed and a fixed stream id, and every reduction runs in a fixed order, so a
//! report is a pure function of `(model, config)`.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimate::{data_driven_weight, fit_additive, ComponentMethod, Direction, MainEffectFit};
use crate::measures::ProbabilityMeasure;
use crate::rng::stream;
use crate::spectral::{poincare_constant, solve_eigenbasis, SpectralBasis};
use crate::weights::{reference_weight, weight_lin, ReferenceKind, SaturatingFunction, WeightCurve};

/// Finite-difference step in units of the input's support length.
pub const FD_STEP: f64 = 1e-4;
/// Display range for Jansen estimates.
pub const CLIP_RANGE: (f64, f64) = (-0.05, 1.05);
/// Largest tolerated fraction of non-finite gradient draws.
pub const MAX_NONFINITE_FRACTION: f64 = 1e-3;
/// Eigenpairs per input used by the chaos expansion.
pub const POINCE_ORDER: usize = 2;

const SCALING_NOTE: &str = "C_P(mu, w_g) = 1 for weights built from a saturating g; unit weight uses the FEM constant";

pub const STREAM_SOBOL_A: u64 = 1;
pub const STREAM_SOBOL_B: u64 = 2;
pub const STREAM_SAMPLE: u64 = 3;
pub const STREAM_FIT: u64 = 4;
pub const STREAM_BOOT: u64 = 1 << 32;

/// A map `f: R^d → R` with independent inputs.
pub trait Model: Send + Sync {
    fn name(&self) -> &str;

    fn inputs(&self) -> &[ProbabilityMeasure];

    fn dim(&self) -> usize {
        self.inputs().len()
    }

    fn input_names(&self) -> Vec<String> {
        (1..=self.dim()).map(|i| format!("X{i}")).collect()
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64>;

    /// Analytic gradient; `None` selects finite differences.
    fn gradient(&self, _x: &[f64]) -> Option<Result<Vec<f64>>> {
        None
    }

    /// True when a finite-difference stencil of width `steps` may straddle a kink.
    fn near_kink(&self, _x: &[f64], _steps: &[f64]) -> bool {
        false
    }

    /// How the main effect of input `i` is estimated for data-driven weights.
    fn main_effect_spec(&self, _i: usize) -> (ComponentMethod, Direction) {
        (ComponentMethod::Monotone, Direction::Auto)
    }
}

type ScalarFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// A model given by closures.
pub struct FnModel {
    name: String,
    inputs: Vec<ProbabilityMeasure>,
    f: ScalarFn,
    grad: Option<VectorFn>,
}

impl FnModel {
    pub fn new<F>(name: &str, inputs: Vec<ProbabilityMeasure>, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        FnModel { name: name.to_string(), inputs, f: Box::new(f), grad: None }
    }

    pub fn with_gradient<G>(mut self, g: G) -> Self
    where
        G: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.grad = Some(Box::new(g));
        self
    }
}

impl Model for FnModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn inputs(&self) -> &[ProbabilityMeasure] {
        &self.inputs
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        Ok((self.f)(x))
    }

    fn gradient(&self, x: &[f64]) -> Option<Result<Vec<f64>>> {
        self.grad.as_ref().map(|g| Ok(g(x)))
    }
}

/// Finite-difference steps per input.
pub fn fd_steps(inputs: &[ProbabilityMeasure]) -> Vec<f64> {
    inputs
        .iter()
        .map(|m| {
            let s = m.support();
            if s.is_finite() {
                FD_STEP * s.length()
            } else {
                FD_STEP * m.variance().map(f64::sqrt).unwrap_or(1.0)
            }
        })
        .collect()
}

/// Central differences, one-sided within one step of a boundary.
pub fn gradient_fd(model: &dyn Model, x: &[f64], fx: f64, steps: &[f64]) -> Result<Vec<f64>> {
    let inputs = model.inputs();
    let mut p = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let (s, h) = (inputs[i].support(), steps[i]);
        let xi = x[i];
        let d = if xi - h < s.a {
            p[i] = xi + h;
            (model.evaluate(&p)? - fx) / h
        } else if xi + h > s.b {
            p[i] = xi - h;
            (fx - model.evaluate(&p)?) / h
        } else {
            p[i] = xi + h;
            let up = model.evaluate(&p)?;
            p[i] = xi - h;
            (up - model.evaluate(&p)?) / (2.0 * h)
        };
        p[i] = xi;
        g.push(d);
    }
    Ok(g)
}

fn draw_rows(inputs: &[ProbabilityMeasure], n: usize, seed: u64, id: u64) -> Vec<Vec<f64>> {
    let mut rng = stream(seed, id);
    (0..n).map(|_| inputs.iter().map(|m| m.sample_one(&mut rng)).collect()).collect()
}

fn evaluate_rows(model: &dyn Model, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    rows.par_iter().map(|x| model.evaluate(x)).collect()
}

/// Joint draws `X^(k)`, outputs `f(X^(k))` and optionally gradients.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub grad: Option<Vec<Vec<f64>>>,
    /// Rows whose finite-difference stencil may straddle a kink.
    pub near_kink: Vec<bool>,
}

impl SampleSet {
    /// Draws `n` rows from stream `id` of `seed`.
    pub fn draw(model: &dyn Model, n: usize, seed: u64, id: u64, gradients: bool) -> Result<Self> {
        let x = draw_rows(model.inputs(), n, seed, id);
        Self::evaluate(model, x, gradients)
    }

    pub fn evaluate(model: &dyn Model, x: Vec<Vec<f64>>, gradients: bool) -> Result<Self> {
        let d = model.dim();
        if let Some(r) = x.iter().find(|r| r.len() != d) {
            return Err(Error::Parameter(format!("sample row of length {} (expected {d})", r.len())));
        }
        let steps = fd_steps(model.inputs());
        let rows: Vec<(f64, Option<Vec<f64>>, bool)> = x
            .par_iter()
            .map(|p| -> Result<_> {
                let fx = model.evaluate(p)?;
                if !gradients {
                    return Ok((fx, None, false));
                }
                match model.gradient(p) {
                    Some(g) => Ok((fx, Some(g?), false)),
                    None => {
                        let g = gradient_fd(model, p, fx, &steps)?;
                        Ok((fx, Some(g), model.near_kink(p, &steps)))
                    }
                }
            })
            .collect::<Result<_>>()?;
        let y = rows.iter().map(|r| r.0).collect();
        let near_kink = rows.iter().map(|r| r.2).collect();
        let grad = gradients.then(|| rows.into_iter().map(|r| r.1.unwrap_or_default()).collect());
        Ok(SampleSet { x, y, grad, near_kink })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.x.iter().map(|r| r[i]).collect()
    }

    /// Unbiased sample variance of the outputs.
    pub fn variance(&self) -> Result<f64> {
        let all: Vec<usize> = (0..self.len()).collect();
        variance_at(&self.y, &all)
    }

    /// Reads `X1..Xd,Y[,G1..Gd]`.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| Error::Data("empty sample file".into()))??;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let Some(ypos) = cols.iter().position(|c| *c == "Y") else {
            return Err(Error::Data("sample header needs a Y column".into()));
        };
        let d = ypos;
        let expect_x: Vec<String> = (1..=d).map(|i| format!("X{i}")).collect();
        let expect_g: Vec<String> = (1..=d).map(|i| format!("G{i}")).collect();
        let has_grad = cols.len() == 2 * d + 1;
        if d == 0
            || cols[..d] != expect_x.iter().map(String::as_str).collect::<Vec<_>>()[..]
            || !(cols.len() == d + 1
                || has_grad && cols[d + 1..] == expect_g.iter().map(String::as_str).collect::<Vec<_>>()[..])
        {
            return Err(Error::Data(format!("sample header must be X1..Xd,Y[,G1..Gd], got '{header}'")));
        }
        let (mut x, mut y, mut grad) = (Vec::new(), Vec::new(), Vec::new());
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let v: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Data(format!("row {}: {e}", k + 2)))?;
            if v.len() != cols.len() {
                return Err(Error::Data(format!("row {}: {} fields (expected {})", k + 2, v.len(), cols.len())));
            }
            x.push(v[..d].to_vec());
            y.push(v[d]);
            if has_grad {
                grad.push(v[d + 1..].to_vec());
            }
        }
        let n = y.len();
        Ok(SampleSet { x, y, grad: has_grad.then_some(grad), near_kink: vec![false; n] })
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let d = self.dim();
        let mut header: Vec<String> = (1..=d).map(|i| format!("X{i}")).collect();
        header.push("Y".into());
        if self.grad.is_some() {
            header.extend((1..=d).map(|i| format!("G{i}")));
        }
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row: Vec<String> = self.x[k].iter().map(|v| format!("{v:e}")).collect();
            row.push(format!("{:e}", self.y[k]));
            if let Some(g) = &self.grad {
                row.extend(g[k].iter().map(|v| format!("{v:e}")));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn variance_at(y: &[f64], idx: &[usize]) -> Result<f64> {
    let n = idx.len();
    if n < 2 {
        return Err(Error::Degenerate("variance needs at least two outputs".into()));
    }
    let mean = idx.iter().map(|&k| y[k]).sum::<f64>() / n as f64;
    let var = idx.iter().map(|&k| (y[k] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) {
        return Err(Error::Degenerate(format!("output variance is {var:e}")));
    }
    Ok(var)
}

/// Type-7 quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quantiles {
    pub q025: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q975: f64,
}

impl Quantiles {
    /// `None` for an empty replicate set.
    pub fn from_values(mut v: Vec<f64>) -> Option<Self> {
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(Quantiles {
            q025: quantile(&v, 0.025),
            q25: quantile(&v, 0.25),
            q50: quantile(&v, 0.5),
            q75: quantile(&v, 0.75),
            q975: quantile(&v, 0.975),
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q75 - self.q25
    }
}

/// Row indices of bootstrap replicate `r`.
pub fn bootstrap_indices(seed: u64, r: usize, n: usize) -> Vec<usize> {
    let mut rng = stream(seed, STREAM_BOOT + r as u64);
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

fn bootstrap<T, F>(seed: u64, boot: usize, n: usize, stat: F) -> Vec<T>
where
    T: Send,
    F: Fn(&[usize]) -> T + Sync,
{
    (0..boot).into_par_iter().map(|r| stat(&bootstrap_indices(seed, r, n))).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SobolIndex {
    pub input: usize,
    pub name: String,
    /// Clipped to [`CLIP_RANGE`].
    pub value: f64,
    pub raw: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SobolEstimate {
    pub estimator: &'static str,
    pub n: usize,
    pub seed: u64,
    pub variance: f64,
    pub indices: Vec<SobolIndex>,
}

impl SobolEstimate {
    pub fn values(&self) -> Vec<f64> {
        self.indices.iter().map(|s| s.value).collect()
    }
}

/// Jansen pick-freeze estimate of the total indices from `n(d + 1)` evaluations.
pub fn sobol_total_reference(model: &dyn Model, n: usize, seed: u64) -> Result<SobolEstimate> {
    if n < 100 {
        return Err(Error::Parameter(format!("reference sample size {n} < 100")));
    }
    let a = draw_rows(model.inputs(), n, seed, STREAM_SOBOL_A);
    let b = draw_rows(model.inputs(), n, seed, STREAM_SOBOL_B);
    let fa = evaluate_rows(model, &a)?;
    let all: Vec<usize> = (0..n).collect();
    let var = variance_at(&fa, &all)?;
    let names = model.input_names();
    let mut indices = Vec::with_capacity(model.dim());
    for i in 0..model.dim() {
        let mixed: Vec<Vec<f64>> = a
            .iter()
            .zip(&b)
            .map(|(ra, rb)| {
                let mut r = ra.clone();
                r[i] = rb[i];
                r
            })
            .collect();
        let fm = evaluate_rows(model, &mixed)?;
        let terms: Vec<f64> = fa.iter().zip(&fm).map(|(p, q)| 0.5 * (p - q).powi(2)).collect();
        let mean = terms.iter().sum::<f64>() / n as f64;
        let sd = (terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let raw = mean / var;
        indices.push(SobolIndex {
            input: i,
            name: names[i].clone(),
            value: raw.clamp(CLIP_RANGE.0, CLIP_RANGE.1),
            raw,
            std_error: sd / (n as f64).sqrt() / var,
        });
    }
    Ok(SobolEstimate { estimator: "jansen", n, seed, variance: var, indices })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Unit,
    Lin,
    GaussRef,
    UniformRef,
    DataDriven,
}

impl WeightKind {
    pub const ALL: [WeightKind; 5] =
        [WeightKind::Unit, WeightKind::Lin, WeightKind::GaussRef, WeightKind::UniformRef, WeightKind::DataDriven];

    pub fn name(&self) -> &'static str {
        match self {
            WeightKind::Unit => "unit",
            WeightKind::Lin => "lin",
            WeightKind::GaussRef => "gauss_ref",
            WeightKind::UniformRef => "uniform_ref",
            WeightKind::DataDriven => "data_driven",
        }
    }

    /// Weights that vanish at the endpoints have no usable eigenbasis for PoinCE.
    pub fn vanishes_at_endpoints(&self) -> bool {
        matches!(self, WeightKind::Lin | WeightKind::DataDriven)
    }

    /// Comma-separated list; the empty string gives an empty list.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(str::parse).collect()
    }
}

impl std::fmt::Display for WeightKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for WeightKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WeightKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            Error::Config(format!("unknown weight kind '{s}' (unit, lin, gauss_ref, uniform_ref, data_driven)"))
        })
    }
}

/// A weight with its Poincaré constant.
#[derive(Debug, Clone)]
pub struct InputWeight {
    pub kind: WeightKind,
    pub curve: WeightCurve,
    pub c_p: f64,
}

/// Builds a weight of the given kind for one input. Weights constructed from
/// a saturating function carry `C_P = 1`; the unit weight uses the FEM constant.
pub fn input_weight(
    m: &ProbabilityMeasure,
    kind: WeightKind,
    nodes: usize,
    fit: Option<&MainEffectFit>,
) -> Result<InputWeight> {
    let (curve, c_p) = match kind {
        WeightKind::Unit => {
            let w = WeightCurve::unit(m);
            let c = poincare_constant(m, &w, nodes)?;
            (w, c)
        }
        WeightKind::Lin => (weight_lin(m, nodes)?, 1.0),
        WeightKind::GaussRef => (reference_weight(m, ReferenceKind::GaussianRef, nodes)?.0, 1.0),
        WeightKind::UniformRef => (reference_weight(m, ReferenceKind::UniformRef, nodes)?.0, 1.0),
        WeightKind::DataDriven => {
            let fit = fit.ok_or_else(|| Error::Config("data-driven weight requires a main-effect fit".into()))?;
            (data_driven_weight(fit, m, nodes)?, 1.0)
        }
    };
    Ok(InputWeight { kind, curve, c_p })
}

/// Per-row `w(X_i)·(∂_i f)²`; non-finite draws become NaN.
fn dgsm_terms(samples: &SampleSet, i: usize, w: &WeightCurve) -> Result<Vec<f64>> {
    let grad =
        samples.grad.as_ref().ok_or_else(|| Error::Config("weighted DGSM needs gradients in the sample".into()))?;
    let terms: Vec<f64> = samples
        .x
        .iter()
        .zip(grad)
        .map(|(x, g)| {
            let t = w.eval(x[i]) * g[i] * g[i];
            if t.is_finite() {
                t
            } else {
                f64::NAN
            }
        })
        .collect();
    let bad = terms.iter().filter(|t| t.is_nan()).count();
    if bad as f64 > MAX_NONFINITE_FRACTION * terms.len() as f64 {
        return Err(Error::Data(format!("{bad} of {} gradient draws are non-finite", terms.len())));
    }
    Ok(terms)
}

fn finite_mean_at(v: &[f64], idx: &[usize]) -> f64 {
    let (s, c) = idx.iter().map(|&k| v[k]).filter(|t| !t.is_nan()).fold((0.0, 0usize), |(s, c), t| (s + t, c + 1));
    s / c as f64
}

/// Monte-Carlo `ν_{i,w} = E[w(X_i)(∂_i f(X))²]`.
pub fn weighted_dgsm(model: &dyn Model, i: usize, w: &WeightCurve, n: usize, seed: u64) -> Result<f64> {
    let samples = SampleSet::draw(model, n, seed, STREAM_SAMPLE, true)?;
    let terms = dgsm_terms(&samples, i, w)?;
    let all: Vec<usize> = (0..n).collect();
    Ok(finite_mean_at(&terms, &all))
}

/// `C_P(μ_i, w_i)·ν̂_{i,w_i}/Var̂(f)` with bootstrap quantiles.
#[derive(Debug, Clone, Serialize)]
pub struct DgsmBound {
    pub input: usize,
    pub kind: WeightKind,
    pub value: f64,
    #[serde(flatten)]
    pub quantiles: Option<Quantiles>,
    pub c_p: f64,
    pub nu: f64,
    pub variance: f64,
    pub boot: usize,
    pub kink_fraction: f64,
}

/// Bound from an existing sample. Resamples rows; the weight and `C_P` stay fixed.
pub fn bound_from_samples(
    samples: &SampleSet,
    i: usize,
    weight: &InputWeight,
    boot: usize,
    seed: u64,
) -> Result<DgsmBound> {
    let n = samples.len();
    let terms = dgsm_terms(samples, i, &weight.curve)?;
    let all: Vec<usize> = (0..n).collect();
    let variance = variance_at(&samples.y, &all)?;
    let nu = finite_mean_at(&terms, &all);
    let value = weight.c_p * nu / variance;
    if !(value.is_finite() && value >= 0.0) {
        return Err(Error::Numerical(format!("bound {value} is not a finite non-negative number")));
    }
    let reps: Vec<f64> = bootstrap(seed, boot, n, |idx| {
        let v = variance_at(&samples.y, idx).unwrap_or(f64::NAN);
        weight.c_p * finite_mean_at(&terms, idx) / v
    });
    let reps: Vec<f64> = reps.into_iter().filter(|v| v.is_finite()).collect();
    let kink_fraction = samples.near_kink.iter().filter(|&&k| k).count() as f64 / n as f64;
    Ok(DgsmBound {
        input: i,
        kind: weight.kind,
        value,
        quantiles: Quantiles::from_values(reps),
        c_p: weight.c_p,
        nu,
        variance,
        boot,
        kink_fraction,
    })
}

/// One-input convenience wrapper around [`build_report`]'s bound pipeline.
pub fn dgsm_upper_bound(model: &dyn Model, i: usize, kind: WeightKind, config: &GsaConfig) -> Result<DgsmBound> {
    let samples = SampleSet::draw(model, config.n, config.seed, STREAM_SAMPLE, true)?;
    let fits = if kind == WeightKind::DataDriven { Some(main_effect_fits(model, config)?) } else { None };
    let w = input_weight(&model.inputs()[i], kind, config.nodes, fits.as_ref().map(|f| &f[i]))?;
    bound_from_samples(&samples, i, &w, config.boot, config.seed)
}

/// Joint additive fit of all main effects on the fit sample.
pub fn main_effect_fits(model: &dyn Model, config: &GsaConfig) -> Result<Vec<MainEffectFit>> {
    let fit = SampleSet::draw(model, config.fit_n, config.seed, STREAM_FIT, false)?;
    let specs: Vec<_> = (0..model.dim()).map(|i| model.main_effect_spec(i)).collect();
    fit_additive(&fit.x, &fit.y, model.inputs(), &specs)
}

/// `A_i = {α : α_i ∈ {1, 2}, Σ_{j≠i} α_j ≤ 1}`.
pub fn truncation_set(i: usize, d: usize) -> Vec<Vec<usize>> {
    let mut set = Vec::with_capacity(2 * d);
    for k in 1..=POINCE_ORDER {
        let mut alpha = vec![0; d];
        alpha[i] = k;
        set.push(alpha.clone());
        for j in (0..d).filter(|&j| j != i) {
            let mut a = alpha.clone();
            a[j] = 1;
            set.push(a);
        }
    }
    set
}

pub fn in_truncation_set(alpha: &[usize], i: usize) -> bool {
    i < alpha.len()
        && (1..=POINCE_ORDER).contains(&alpha[i])
        && alpha.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, a)| a).sum::<usize>() <= 1
}

/// Eigenfunction values at the sample points, `[input][order − 1][row]`.
struct ChaosTables {
    e: Vec<Vec<Vec<f64>>>,
    de: Vec<Vec<Vec<f64>>>,
    w: Vec<Vec<f64>>,
}

impl ChaosTables {
    fn new(samples: &SampleSet, bases: &[SpectralBasis]) -> Self {
        let (mut e, mut de, mut w) = (Vec::new(), Vec::new(), Vec::new());
        for (j, b) in bases.iter().enumerate() {
            let col = samples.column(j);
            e.push((1..=b.num_eig()).map(|n| col.iter().map(|&x| b.eval(n, x)).collect()).collect());
            de.push((1..=b.num_eig()).map(|n| col.iter().map(|&x| b.eval_derivative(n, x)).collect()).collect());
            w.push(col.iter().map(|&x| b.weight().eval(x)).collect());
        }
        ChaosTables { e, de, w }
    }

    fn product(&self, alpha: &[usize], skip: Option<usize>, k: usize) -> f64 {
        alpha
            .iter()
            .enumerate()
            .filter(|&(j, &a)| a > 0 && Some(j) != skip)
            .map(|(j, &a)| self.e[j][a - 1][k])
            .product()
    }
}

fn check_alphas(samples: &SampleSet, bases: &[SpectralBasis], alphas: &[Vec<usize>]) -> Result<()> {
    let d = samples.dim();
    if bases.len() != d {
        return Err(Error::Config(format!("{} eigenbases for {d} inputs", bases.len())));
    }
    for alpha in alphas {
        if alpha.len() != d {
            return Err(Error::Config(format!("multi-index {alpha:?} has length {} (expected {d})", alpha.len())));
        }
        for (j, &a) in alpha.iter().enumerate() {
            if a > bases[j].num_eig() {
                return Err(Error::Config(format!("eigenpair {a} of input {j} not available")));
            }
        }
    }
    Ok(())
}

fn der_free_at(samples: &SampleSet, t: &ChaosTables, alphas: &[Vec<usize>], idx: &[usize]) -> Vec<f64> {
    let mean = idx.iter().map(|&k| samples.y[k]).sum::<f64>() / idx.len() as f64;
    alphas
        .iter()
        .map(|alpha| {
            idx.iter().map(|&k| (samples.y[k] - mean) * t.product(alpha, None, k)).sum::<f64>() / idx.len() as f64
        })
        .collect()
}

fn der_based_at(
    samples: &SampleSet,
    t: &ChaosTables,
    lambdas: &[f64],
    i: usize,
    alphas: &[Vec<usize>],
    idx: &[usize],
) -> Vec<f64> {
    let grad = samples.grad.as_ref().expect("checked by the caller");
    alphas
        .iter()
        .map(|alpha| {
            let a = alpha[i];
            let (s, c) = idx
                .iter()
                .map(|&k| t.w[i][k] * grad[k][i] * t.de[i][a - 1][k] * t.product(alpha, Some(i), k))
                .filter(|v| v.is_finite())
                .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
            s / c as f64 / lambdas[a - 1]
        })
        .collect()
}

/// Derivative-free chaos coefficients `⟨f − f̄, e_α⟩` for arbitrary multi-indices.
pub fn der_free_coefficients(samples: &SampleSet, bases: &[SpectralBasis], alphas: &[Vec<usize>]) -> Result<Vec<f64>> {
    check_alphas(samples, bases, alphas)?;
    let t = ChaosTables::new(samples, bases);
    let all: Vec<usize> = (0..samples.len()).collect();
    Ok(der_free_at(samples, &t, alphas, &all))
}

#[derive(Debug, Clone, Serialize)]
pub struct PoinceCoefficient {
    pub alpha: Vec<usize>,
    pub der_free: f64,
    pub der_based: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PoinceQuantiles {
    pub der_free: Option<Quantiles>,
    pub der_based: Option<Quantiles>,
}

/// Parseval truncations `Σ_α ĉ_α²/Var̂(f)` over `A_i`.
#[derive(Debug, Clone, Serialize)]
pub struct PoinceApprox {
    pub input: usize,
    pub kind: WeightKind,
    pub der_free: f64,
    pub der_based: Option<f64>,
    pub quantiles: PoinceQuantiles,
    pub variance: f64,
    pub coefficients: Vec<PoinceCoefficient>,
}

/// Chaos-expansion approximation of `S_i^tot` on the truncation set `alphas`.
/// The derivative-based variant needs gradients in the sample.
pub fn poince_approx(
    samples: &SampleSet,
    bases: &[SpectralBasis],
    i: usize,
    kind: WeightKind,
    alphas: &[Vec<usize>],
    boot: usize,
    seed: u64,
) -> Result<PoinceApprox> {
    if kind.vanishes_at_endpoints() {
        return Err(Error::Config(format!("PoinCE needs a weight positive at the endpoints, not '{kind}'")));
    }
    check_alphas(samples, bases, alphas)?;
    if let Some(bad) = alphas.iter().find(|a| !in_truncation_set(a, i)) {
        return Err(Error::Config(format!("multi-index {bad:?} is outside A_{i}")));
    }
    let t = ChaosTables::new(samples, bases);
    let lambdas = bases[i].eigenvalues().to_vec();
    let has_grad = samples.grad.is_some();
    let n = samples.len();
    let all: Vec<usize> = (0..n).collect();
    let variance = variance_at(&samples.y, &all)?;
    let parseval = |c: &[f64], v: f64| c.iter().map(|c| c * c).sum::<f64>() / v;
    let free = der_free_at(samples, &t, alphas, &all);
    let based = has_grad.then(|| der_based_at(samples, &t, &lambdas, i, alphas, &all));
    let reps: Vec<(f64, Option<f64>)> = bootstrap(seed, boot, n, |idx| {
        let v = variance_at(&samples.y, idx).unwrap_or(f64::NAN);
        let f = parseval(&der_free_at(samples, &t, alphas, idx), v);
        let b = has_grad.then(|| parseval(&der_based_at(samples, &t, &lambdas, i, alphas, idx), v));
        (f, b)
    });
    let finite = |v: Vec<f64>| v.into_iter().filter(|x| x.is_finite()).collect::<Vec<_>>();
    let quantiles = PoinceQuantiles {
        der_free: Quantiles::from_values(finite(reps.iter().map(|r| r.0).collect())),
        der_based: if has_grad {
            Quantiles::from_values(finite(reps.iter().filter_map(|r| r.1).collect()))
        } else {
            None
        },
    };
    let coefficients = alphas
        .iter()
        .enumerate()
        .map(|(k, a)| PoinceCoefficient {
            alpha: a.clone(),
            der_free: free[k],
            der_based: based.as_ref().map(|b| b[k]),
        })
        .collect();
    Ok(PoinceApprox {
        input: i,
        kind,
        der_free: parseval(&free, variance),
        der_based: based.as_ref().map(|b| parseval(b, variance)),
        quantiles,
        variance,
        coefficients,
    })
}

/// First `POINCE_ORDER` eigenpairs of every input for one weight kind.
pub fn chaos_bases(inputs: &[ProbabilityMeasure], kind: WeightKind, nodes: usize) -> Result<Vec<SpectralBasis>> {
    if kind.vanishes_at_endpoints() {
        return Err(Error::Config(format!("PoinCE needs a weight positive at the endpoints, not '{kind}'")));
    }
    inputs
        .par_iter()
        .map(|m| {
            let w = input_weight(m, kind, nodes, None)?;
            solve_eigenbasis(m, &w.curve, POINCE_ORDER, nodes)
        })
        .collect()
}

/// Moments of `u(X_{−i})` and `v(X_{−i})` for a separated model
/// `f = u(x_{−i}) + h(x_i)·v(x_{−i})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UvMoments {
    pub mean_u: f64,
    pub mean_v: f64,
    pub mean_uu: f64,
    pub mean_vv: f64,
    pub mean_uv: f64,
}

impl UvMoments {
    /// Constant `u` and `v`.
    pub fn constant(u: f64, v: f64) -> Self {
        UvMoments { mean_u: u, mean_v: v, mean_uu: u * u, mean_vv: v * v, mean_uv: u * v }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityGap {
    /// `C_P·ν/Var − S_i^tot`.
    pub gap: f64,
    /// `C_P·E[v²]·ε/Var`.
    pub bound: f64,
    /// `∫ w (h' − g')² dμ_i`.
    pub epsilon: f64,
    pub s_tot: f64,
    /// `C_P·ν/Var`.
    pub dgsm_bound: f64,
}

/// Gap between the weighted DGSM bound and the total index of a separated
/// model, with its stability bound; every integral is a quadrature over `μ_i`.
pub fn stability_gap(
    m: &ProbabilityMeasure,
    h: &SaturatingFunction,
    g: &SaturatingFunction,
    w: &WeightCurve,
    c_p: f64,
    uv: UvMoments,
) -> Result<StabilityGap> {
    let eh = m.quadrature(|x| h.value(x))?;
    let ehh = m.quadrature(|x| h.value(x).powi(2))?;
    let var_h = ehh - eh * eh;
    let whh = m.quadrature(|x| w.eval(x) * h.derivative(x).powi(2))?;
    let epsilon = m.quadrature(|x| w.eval(x) * (h.derivative(x) - g.derivative(x)).powi(2))?;
    let var_f = uv.mean_uu + 2.0 * eh * uv.mean_uv + ehh * uv.mean_vv - (uv.mean_u + eh * uv.mean_v).powi(2);
    if !(var_f > 0.0) {
        return Err(Error::Degenerate(format!("model variance is {var_f:e}")));
    }
    let s_tot = uv.mean_vv * var_h / var_f;
    let dgsm_bound = c_p * uv.mean_vv * whh / var_f;
    let gap = dgsm_bound - s_tot;
    let bound = c_p * uv.mean_vv * epsilon / var_f;
    let tol = 1e-9 * (1.0 + dgsm_bound);
    if gap < -tol || gap > bound + tol {
        return Err(Error::Hypothesis(format!(
            "stability violated: gap {gap:e} outside [0, {bound:e}]; g does not saturate the inequality for w"
        )));
    }
    Ok(StabilityGap { gap, bound, epsilon, s_tot, dgsm_bound })
}

#[derive(Debug, Clone, Serialize)]
pub struct GsaConfig {
    /// Sample size for bounds and PoinCE.
    pub n: usize,
    /// Sample size for the main-effect fits behind data-driven weights.
    pub fit_n: usize,
    /// Reference Jansen sample size.
    pub ref_n: usize,
    pub boot: usize,
    pub nodes: usize,
    pub seed: u64,
    pub weights: Vec<WeightKind>,
    pub poince: Vec<WeightKind>,
    pub reference: bool,
}

impl Default for GsaConfig {
    fn default() -> Self {
        GsaConfig {
            n: 150,
            fit_n: 150,
            ref_n: 10_000,
            boot: 100,
            nodes: 500,
            seed: 1,
            weights: Vec::new(),
            poince: Vec::new(),
            reference: true,
        }
    }
}

/// A report cell: a value or the error that prevented it.
#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum Cell<T> {
    Value(T),
    Error { error: String, kind: String },
}

impl<T> Cell<T> {
    fn from_result(r: Result<T>) -> Self {
        match r {
            Ok(v) => Cell::Value(v),
            Err(e) => Cell::Error { error: e.to_string(), kind: e.kind().to_string() },
        }
    }

    pub fn value(&self) -> Option<&T> {
        match self {
            Cell::Value(v) => Some(v),
            Cell::Error { .. } => None,
        }
    }

    pub fn is_error(&self) -> bool {
        matches!(self, Cell::Error { .. })
    }
}

fn shared_error<T>(e: &Error) -> Cell<T> {
    Cell::Error { error: e.to_string(), kind: e.kind().to_string() }
}

#[derive(Debug, Clone, Serialize)]
pub struct MainEffectSummary {
    pub direction: f64,
    pub smoothing: f64,
    pub spearman: f64,
    pub non_monotone_warning: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct InputReport {
    pub i: usize,
    pub name: String,
    pub s_tot_ref: Option<f64>,
    pub s_tot_ref_raw: Option<f64>,
    pub s_tot_ref_se: Option<f64>,
    pub s_tot_oracle: Option<f64>,
    pub main_effect: Option<Cell<MainEffectSummary>>,
    pub bounds: BTreeMap<WeightKind, Cell<DgsmBound>>,
    pub poince: BTreeMap<WeightKind, Cell<PoinceApprox>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GsaReport {
    pub model: String,
    pub seed: u64,
    pub n: usize,
    pub fit_n: usize,
    pub ref_n: usize,
    pub boot: usize,
    pub nodes: usize,
    pub scaling: &'static str,
    pub reference_error: Option<String>,
    pub per_input: Vec<InputReport>,
}

impl GsaReport {
    /// Number of cells holding an error.
    pub fn failures(&self) -> usize {
        let cells: usize = self
            .per_input
            .iter()
            .map(|p| {
                p.bounds.values().filter(|c| c.is_error()).count()
                    + p.poince.values().filter(|c| c.is_error()).count()
                    + p.main_effect.as_ref().map_or(0, |c| c.is_error() as usize)
            })
            .sum();
        cells + self.reference_error.is_some() as usize
    }

    /// Number of cells holding a value.
    pub fn successes(&self) -> usize {
        let cells: usize = self
            .per_input
            .iter()
            .map(|p| {
                p.bounds.values().filter(|c| !c.is_error()).count()
                    + p.poince.values().filter(|c| !c.is_error()).count()
                    + p.s_tot_ref.is_some() as usize
            })
            .sum();
        cells
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Flat table `i,name,quantity,kind,value,q025,q50,q975,error`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "i,name,quantity,kind,value,q025,q50,q975,error")?;
        let num = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.10e}"));
        let quant = |q: Option<&Quantiles>| {
            format!("{},{},{}", num(q.map(|q| q.q025)), num(q.map(|q| q.q50)), num(q.map(|q| q.q975)))
        };
        for p in &self.per_input {
            let head = format!("{},{}", p.i, p.name);
            if let Some(v) = p.s_tot_ref {
                writeln!(out, "{head},s_tot_ref,jansen,{},,,,", num(Some(v)))?;
            }
            if let Some(v) = p.s_tot_oracle {
                writeln!(out, "{head},s_tot_oracle,closed_form,{},,,,", num(Some(v)))?;
            }
            for (kind, cell) in &p.bounds {
                match cell {
                    Cell::Value(b) => {
                        writeln!(out, "{head},bound,{kind},{},{},", num(Some(b.value)), quant(b.quantiles.as_ref()))?
                    }
                    Cell::Error { error, .. } => {
                        writeln!(out, "{head},bound,{kind},,,,,\"{}\"", error.replace('"', "'"))?
                    }
                }
            }
            for (kind, cell) in &p.poince {
                match cell {
                    Cell::Value(a) => {
                        writeln!(
                            out,
                            "{head},poince_der_free,{kind},{},{},",
                            num(Some(a.der_free)),
                            quant(a.quantiles.der_free.as_ref())
                        )?;
                        if let Some(v) = a.der_based {
                            writeln!(
                                out,
                                "{head},poince_der_based,{kind},{},{},",
                                num(Some(v)),
                                quant(a.quantiles.der_based.as_ref())
                            )?;
                        }
                    }
                    Cell::Error { error, .. } => {
                        writeln!(out, "{head},poince,{kind},,,,,\"{}\"", error.replace('"', "'"))?
                    }
                }
            }
        }
        Ok(())
    }
}

/// Bounds and PoinCE approximations from existing samples (no reference run).
pub fn analyze_samples(
    inputs: &[ProbabilityMeasure],
    names: &[String],
    samples: &Result<SampleSet>,
    fits: Option<&Result<Vec<MainEffectFit>>>,
    config: &GsaConfig,
) -> Vec<InputReport> {
    let d = inputs.len();
    let bases: Vec<(WeightKind, Result<Vec<SpectralBasis>>)> =
        config.poince.iter().map(|&k| (k, chaos_bases(inputs, k, config.nodes))).collect();
    (0..d)
        .into_par_iter()
        .map(|i| {
            let mut bounds = BTreeMap::new();
            for &kind in &config.weights {
                let cell = match (samples, kind, fits) {
                    (Err(e), _, _) => shared_error(e),
                    (_, WeightKind::DataDriven, Some(Err(e))) => shared_error(e),
                    (Ok(s), _, _) => {
                        let fit = fits.and_then(|f| f.as_ref().ok()).map(|f| &f[i]);
                        Cell::from_result(
                            input_weight(&inputs[i], kind, config.nodes, fit)
                                .and_then(|w| bound_from_samples(s, i, &w, config.boot, config.seed)),
                        )
                    }
                };
                bounds.insert(kind, cell);
            }
            let mut poince = BTreeMap::new();
            for (kind, b) in &bases {
                let cell = match (samples, b) {
                    (Err(e), _) | (_, Err(e)) => shared_error(e),
                    (Ok(s), Ok(b)) => Cell::from_result(poince_approx(
                        s,
                        b,
                        i,
                        *kind,
                        &truncation_set(i, d),
                        config.boot,
                        config.seed,
                    )),
                };
                poince.insert(*kind, cell);
            }
            let main_effect = fits.map(|f| match f {
                Ok(f) => Cell::Value(MainEffectSummary {
                    direction: f[i].direction,
                    smoothing: f[i].smoothing,
                    spearman: f[i].spearman,
                    non_monotone_warning: f[i].non_monotone_warning,
                }),
                Err(e) => shared_error(e),
            });
            InputReport {
                i,
                name: names[i].clone(),
                s_tot_ref: None,
                s_tot_ref_raw: None,
                s_tot_ref_se: None,
                s_tot_oracle: None,
                main_effect,
                bounds,
                poince,
            }
        })
        .collect()
}

/// Report for a tabulated sample `X1..Xd,Y[,G1..Gd]`: no reference run; the
/// main effects are fitted on the same rows.
pub fn report_from_samples(
    name: &str,
    inputs: &[ProbabilityMeasure],
    samples: SampleSet,
    config: &GsaConfig,
) -> GsaReport {
    let names: Vec<String> = (1..=inputs.len()).map(|i| format!("X{i}")).collect();
    let samples = if samples.dim() == inputs.len() {
        Ok(samples)
    } else {
        Err(Error::Config(format!("sample has {} inputs but {} measures were given", samples.dim(), inputs.len())))
    };
    let fits = config.weights.contains(&WeightKind::DataDriven).then(|| {
        let s = samples.as_ref().map_err(|e| Error::Config(e.to_string()))?;
        let specs = vec![(ComponentMethod::Monotone, Direction::Auto); inputs.len()];
        fit_additive(&s.x, &s.y, inputs, &specs)
    });
    let per_input = analyze_samples(inputs, &names, &samples, fits.as_ref(), config);
    let n = samples.as_ref().map_or(0, SampleSet::len);
    GsaReport {
        model: name.to_string(),
        seed: config.seed,
        n,
        fit_n: n,
        ref_n: 0,
        boot: config.boot,
        nodes: config.nodes,
        scaling: SCALING_NOTE,
        reference_error: None,
        per_input,
    }
}

/// Runs the reference Sobol estimate and every requested bound and PoinCE
/// approximation. Sub-operation failures are recorded in their cells.
pub fn build_report(model: &dyn Model, config: &GsaConfig, oracle: Option<Vec<f64>>) -> GsaReport {
    let reference = config.reference.then(|| sobol_total_reference(model, config.ref_n, config.seed));
    let needs_sample = !config.weights.is_empty() || !config.poince.is_empty();
    let samples = if needs_sample {
        SampleSet::draw(model, config.n, config.seed, STREAM_SAMPLE, true)
    } else {
        Ok(SampleSet { x: Vec::new(), y: Vec::new(), grad: None, near_kink: Vec::new() })
    };
    let fits = config.weights.contains(&WeightKind::DataDriven).then(|| main_effect_fits(model, config));
    let mut per_input = analyze_samples(model.inputs(), &model.input_names(), &samples, fits.as_ref(), config);
    let mut reference_error = None;
    match &reference {
        Some(Ok(r)) => {
            for (p, s) in per_input.iter_mut().zip(&r.indices) {
                p.s_tot_ref = Some(s.value);
                p.s_tot_ref_raw = Some(s.raw);
                p.s_tot_ref_se = Some(s.std_error);
            }
        }
        Some(Err(e)) => reference_error = Some(e.to_string()),
        None => {}
    }
    if let Some(o) = oracle {
        for (p, v) in per_input.iter_mut().zip(o) {
            p.s_tot_oracle = Some(v);
        }
    }
    GsaReport {
        model: model.name().to_string(),
        seed: config.seed,
        n: config.n,
        fit_n: config.fit_n,
        ref_n: config.ref_n,
        boot: config.boot,
        nodes: config.nodes,
        scaling: SCALING_NOTE,
        reference_error,
        per_input,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{flood_s, flood_s_grad, toy1_grad, BuiltinKind, BuiltinModel};
    use crate::weights::weight_lin_closed_form;

    fn unit_inputs(d: usize) -> Vec<ProbabilityMeasure> {
        (0..d).map(|_| ProbabilityMeasure::uniform(0.0, 1.0).unwrap()).collect()
    }

    fn x1_model(d: usize) -> FnModel {
        FnModel::new("x1", unit_inputs(d), |x| x[0]).with_gradient(move |_| {
            let mut g = vec![0.0; d];
            g[0] = 1.0;
            g
        })
    }

    #[test]
    fn jansen_single_variable() {
        let s = sobol_total_reference(&x1_model(2), 10_000, 3).unwrap();
        assert!((s.indices[0].value - 1.0).abs() < 0.02);
        assert!(s.indices[1].value.abs() < 0.02);
        assert_eq!(s.indices[1].raw, 0.0);
    }

    #[test]
    fn jansen_toy_models_match_oracles() {
        for kind in [BuiltinKind::Toy1, BuiltinKind::Toy2] {
            let model = BuiltinModel::new(kind);
            let s = sobol_total_reference(&model, 10_000, 5).unwrap();
            for (est, want) in s.indices.iter().zip(model.sobol_oracle().unwrap()) {
                assert!((est.value - want).abs() < 0.02, "{kind:?} {}: {} vs {want}", est.name, est.value);
            }
        }
    }

    #[test]
    fn jansen_oracles_within_three_standard_errors() {
        for kind in [BuiltinKind::Toy1, BuiltinKind::Toy2] {
            let model = BuiltinModel::new(kind);
            let s = sobol_total_reference(&model, 1_000_000, 11).unwrap();
            for (est, want) in s.indices.iter().zip(model.sobol_oracle().unwrap()) {
                assert!(
                    (est.raw - want).abs() <= 3.0 * est.std_error,
                    "{kind:?} {}: {} ± {}",
                    est.name,
                    est.raw,
                    est.std_error
                );
            }
        }
    }

    #[test]
    fn jansen_rejects_small_and_constant() {
        assert!(matches!(sobol_total_reference(&x1_model(2), 50, 1), Err(Error::Parameter(_))));
        let flat = FnModel::new("flat", unit_inputs(2), |_| 3.0);
        assert!(matches!(sobol_total_reference(&flat, 200, 1), Err(Error::Degenerate(_))));
    }

    #[test]
    fn weighted_dgsm_examples() {
        let m = ProbabilityMeasure::uniform(0.0, 1.0).unwrap();
        let wl = weight_lin_closed_form(&m).unwrap();
        let nu = weighted_dgsm(&x1_model(2), 0, &wl, 10_000, 7).unwrap();
        assert!((nu - 1.0 / 12.0).abs() < 2e-3, "{nu}");
        assert_eq!(weighted_dgsm(&x1_model(2), 0, &WeightCurve::unit(&m), 1000, 7).unwrap(), 1.0);
        let flat = FnModel::new("flat", unit_inputs(2), |_| 3.0).with_gradient(|_| vec![0.0, 0.0]);
        assert_eq!(weighted_dgsm(&flat, 0, &wl, 1000, 7).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_gradients_beyond_tolerance_are_errors() {
        let model = FnModel::new("nan", unit_inputs(1), |x| x[0])
            .with_gradient(|x| vec![if x[0] < 0.01 { f64::NAN } else { 1.0 }]);
        let m = ProbabilityMeasure::uniform(0.0, 1.0).unwrap();
        assert!(matches!(weighted_dgsm(&model, 0, &WeightCurve::unit(&m), 10_000, 1), Err(Error::Data(_))));
        let rare = FnModel::new("rare", unit_inputs(1), |x| x[0])
            .with_gradient(|x| vec![if x[0] < 1e-5 { f64::NAN } else { 1.0 }]);
        assert_eq!(weighted_dgsm(&rare, 0, &WeightCurve::unit(&m), 10_000, 1).unwrap(), 1.0);
    }

    #[test]
    fn bound_examples_for_single_variable() {
        let config = GsaConfig { n: 10_000, boot: 50, ..GsaConfig::default() };
        let lin = dgsm_upper_bound(&x1_model(2), 0, WeightKind::Lin, &config).unwrap();
        // Population value is exactly 1; ±0.05 is about three Monte-Carlo standard deviations at n = 10 000.
        assert!((lin.value - 1.0).abs() < 0.05, "{}", lin.value);
        assert_eq!(lin.c_p, 1.0);
        let unit = dgsm_upper_bound(&x1_model(2), 0, WeightKind::Unit, &config).unwrap();
        let want = 12.0 / (std::f64::consts::PI * std::f64::consts::PI);
        assert!((unit.value - want).abs() < 0.03, "{}", unit.value);
        assert!((unit.c_p - 1.0 / (std::f64::consts::PI * std::f64::consts::PI)).abs() < 1e-5);
        let q = unit.quantiles.unwrap();
        assert!(q.q025 <= q.q50 && q.q50 <= q.q975);
    }

    #[test]
    fn toy1_exact_main_effect_weight_gives_the_total_index() {
        let model = BuiltinModel::new(BuiltinKind::Toy1);
        let samples = SampleSet::draw(&model, 10_000, 9, STREAM_SAMPLE, true).unwrap();
        let m = &model.inputs()[0];
        let w = InputWeight { kind: WeightKind::Lin, curve: weight_lin_closed_form(m).unwrap(), c_p: 1.0 };
        let b = bound_from_samples(&samples, 0, &w, 0, 9).unwrap();
        assert!((b.value - 0.21543).abs() < 0.01, "{}", b.value);
        assert!(b.quantiles.is_none());
    }

    #[test]
    fn finite_differences_match_analytic_gradients() {
        let toy = BuiltinModel::new(BuiltinKind::Toy1);
        let flood = BuiltinModel::new(BuiltinKind::FloodS);
        for (model, grad) in [
            (&toy as &dyn Model, Box::new(|x: &[f64]| Ok(toy1_grad(x))) as Box<dyn Fn(&[f64]) -> Result<Vec<f64>>>),
            (&flood, Box::new(flood_s_grad)),
        ] {
            let steps = fd_steps(model.inputs());
            let mut rng = stream(4, 0);
            for _ in 0..100 {
                let x: Vec<f64> = model.inputs().iter().map(|m| m.sample_one(&mut rng)).collect();
                let interior = x.iter().zip(model.inputs()).zip(&steps).all(|((&v, m), h)| {
                    let s = m.support();
                    v - 2.0 * h >= s.a && v + 2.0 * h <= s.b
                });
                if !interior {
                    continue;
                }
                let fd = gradient_fd(model, &x, model.evaluate(&x).unwrap(), &steps).unwrap();
                for (a, b) in fd.iter().zip(grad(&x).unwrap()) {
                    assert!((a - b).abs() <= 1e-4 * b.abs().max(1e-3), "{}: {a} vs {b}", model.name());
                }
            }
        }
        let x = [1013.0, 30.0, 50.0, 55.0, 8.0, 55.5, 5000.0, 300.0];
        assert!((flood_s(&x).unwrap() + 11.357997).abs() < 1e-6);
    }

    #[test]
    fn one_sided_differences_at_the_boundary() {
        let model = FnModel::new("sq", unit_inputs(1), |x| x[0] * x[0]);
        let steps = fd_steps(model.inputs());
        let g0 = gradient_fd(&model, &[0.0], 0.0, &steps).unwrap()[0];
        let g1 = gradient_fd(&model, &[1.0], 1.0, &steps).unwrap()[0];
        assert!((g0 - 1e-4).abs() < 1e-12 && (g1 - (2.0 - 1e-4)).abs() < 1e-12);
    }

    #[test]
    fn flood_cost_kinks_are_flagged() {
        let model = BuiltinModel::new(BuiltinKind::FloodC);
        let mut x = vec![1013.0, 30.0, 50.0, 55.0, 8.0, 55.5, 5000.0, 300.0];
        let s = SampleSet::evaluate(&model, vec![x.clone()], true).unwrap();
        assert!(s.near_kink[0]);
        x[4] = 7.5;
        let s = SampleSet::evaluate(&model, vec![x], true).unwrap();
        assert!(!s.near_kink[0]);
    }

    #[test]
    fn quantiles_follow_type_seven() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert!((quantile(&v, 0.25) - 3.25).abs() < 1e-12);
        assert!((quantile(&v, 0.975) - 9.775).abs() < 1e-12);
        let q = Quantiles::from_values(v).unwrap();
        assert!((q.iqr() - 4.5).abs() < 1e-12);
        assert!(Quantiles::from_values(Vec::new()).is_none());
    }

    #[test]
    fn truncation_set_membership() {
        let set = truncation_set(1, 4);
        assert_eq!(set.len(), 8);
        assert!(set.iter().all(|a| in_truncation_set(a, 1)));
        assert!(!in_truncation_set(&[0, 3, 0, 0], 1));
        assert!(!in_truncation_set(&[1, 1, 1, 0], 1));
        assert!(!in_truncation_set(&[1, 0, 0, 0], 1));
    }

    #[test]
    fn stability_gap_examples() {
        let m = ProbabilityMeasure::uniform(0.0, 1.0).unwrap();
        let g = SaturatingFunction::linear(&m).unwrap();
        let w = weight_lin_closed_form(&m).unwrap();
        let same = stability_gap(&m, &g, &g, &w, 1.0, UvMoments::constant(0.0, 1.0)).unwrap();
        assert!(same.gap.abs() < 1e-12 && same.epsilon == 0.0);
        let h = SaturatingFunction::from_fns(|x| x + 0.1 * x * x, |x| 1.0 + 0.2 * x);
        let r = stability_gap(&m, &h, &g, &w, 1.0, UvMoments::constant(0.0, 1.0)).unwrap();
        assert!(r.gap > 0.0 && r.gap <= r.bound, "{r:?}");
        let r2 = stability_gap(&m, &h, &g, &w, 1.0, UvMoments::constant(0.0, 2.0)).unwrap();
        assert!((r2.gap - r.gap).abs() < 1e-10);
        let off = SaturatingFunction::from_fns(|x| x * x, |x| 2.0 * x);
        let unit = WeightCurve::unit(&m);
        assert!(matches!(
            stability_gap(&m, &off, &off, &unit, 0.5, UvMoments::constant(0.0, 1.0)),
            Err(Error::Hypothesis(_))
        ));
    }

    fn chaos_model(bases: Vec<SpectralBasis>, terms: Vec<usize>) -> FnModel {
        let d = bases.len();
        let (b1, b2) = (std::sync::Arc::new(bases), terms.clone());
        let b2_bases = b1.clone();
        FnModel::new("chaos", unit_inputs(d), move |x| terms.iter().map(|&i| b1[i].eval(1, x[i])).sum()).with_gradient(
            move |x| (0..d).map(|i| if b2.contains(&i) { b2_bases[i].eval_derivative(1, x[i]) } else { 0.0 }).collect(),
        )
    }

    #[test]
    fn poince_recovers_a_single_eigenfunction() {
        let inputs = unit_inputs(2);
        let bases = chaos_bases(&inputs, WeightKind::GaussRef, 500).unwrap();
        let model = chaos_model(bases.clone(), vec![0]);
        let s = SampleSet::draw(&model, 10_000, 2, STREAM_SAMPLE, true).unwrap();
        let a = poince_approx(&s, &bases, 0, WeightKind::GaussRef, &truncation_set(0, 2), 20, 2).unwrap();
        assert!((a.der_free - 1.0).abs() < 0.03, "{}", a.der_free);
        let big: Vec<_> = a.coefficients.iter().filter(|c| c.der_free.abs() > 0.05).collect();
        assert_eq!(big.len(), 1);
        assert_eq!(big[0].alpha, vec![1, 0]);
        assert!(matches!(
            poince_approx(&s, &bases, 0, WeightKind::Lin, &truncation_set(0, 2), 0, 2),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn derivative_based_coefficient_identity() {
        let inputs = unit_inputs(3);
        let bases = chaos_bases(&inputs, WeightKind::UniformRef, 500).unwrap();
        let model = chaos_model(bases.clone(), vec![0, 1, 2]);
        let s = SampleSet::draw(&model, 10_000, 8, STREAM_SAMPLE, true).unwrap();
        let a = poince_approx(&s, &bases, 0, WeightKind::UniformRef, &truncation_set(0, 3), 0, 8).unwrap();
        let c = &a.coefficients[0];
        assert_eq!(c.alpha, vec![1, 0, 0]);
        let based = c.der_based.unwrap();
        assert!((based - c.der_free).abs() <= 0.02 * c.der_free.abs(), "{based} vs {}", c.der_free);
    }

    #[test]
    fn missing_eigenpairs_are_configuration_errors() {
        let inputs = unit_inputs(2);
        let bases = chaos_bases(&inputs, WeightKind::Unit, 200).unwrap();
        let s = SampleSet::draw(&x1_model(2), 200, 1, STREAM_SAMPLE, true).unwrap();
        assert!(matches!(der_free_coefficients(&s, &bases, &[vec![3, 0]]), Err(Error::Config(_))));
        assert!(matches!(der_free_coefficients(&s, &bases[..1], &[vec![1, 0]]), Err(Error::Config(_))));
    }

    #[test]
    fn report_with_no_weight_kinds_has_reference_only() {
        let model = BuiltinModel::new(BuiltinKind::Toy1);
        let config = GsaConfig { ref_n: 1000, ..GsaConfig::default() };
        let r = build_report(&model, &config, model.sobol_oracle());
        assert_eq!(r.failures(), 0);
        assert!(r.per_input.iter().all(|p| p.bounds.is_empty() && p.poince.is_empty() && p.s_tot_ref.is_some()));
    }

    #[test]
    fn default_toy1_report_orders_bounds() {
        let model = BuiltinModel::new(BuiltinKind::Toy1);
        let config = GsaConfig {
            weights: vec![WeightKind::Unit, WeightKind::Lin, WeightKind::DataDriven],
            ref_n: 2000,
            ..GsaConfig::default()
        };
        let r = build_report(&model, &config, None);
        assert_eq!(r.failures(), 0);
        for p in &r.per_input {
            let q50 = |k| p.bounds[&k].value().unwrap().quantiles.unwrap().q50;
            let (dd, lin, unit) = (q50(WeightKind::DataDriven), q50(WeightKind::Lin), q50(WeightKind::Unit));
            // The first main effect is linear, so its data-driven and lin weights coincide up to fit noise.
            assert!(dd <= lin * (1.0 + 1e-2) && lin <= unit, "{}: {dd} {lin} {unit}", p.name);
        }
    }

    #[test]
    fn reports_are_deterministic_and_record_cell_errors() {
        let model = BuiltinModel::new(BuiltinKind::Toy2);
        let config = GsaConfig {
            n: 300,
            ref_n: 500,
            boot: 20,
            weights: vec![WeightKind::Lin, WeightKind::DataDriven],
            poince: vec![WeightKind::UniformRef, WeightKind::Lin],
            ..GsaConfig::default()
        };
        let a = build_report(&model, &config, None);
        let b = build_report(&model, &config, None);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.failures(), 5);
        assert!(a.per_input.iter().all(|p| p.poince[&WeightKind::Lin].is_error()));
        let mut csv = Vec::new();
        a.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("i,name,quantity,kind,value,q025,q50,q975,error\n"));
        assert!(text.contains(",poince_der_based,uniform_ref,"));
        let json: serde_json::Value = serde_json::from_str(&a.to_json().unwrap()).unwrap();
        assert!(json["per_input"][0]["bounds"]["lin"]["q975"].is_number());
    }

    #[test]
    fn sample_csv_round_trip() {
        let model = BuiltinModel::new(BuiltinKind::Toy1);
        let s = SampleSet::draw(&model, 30, 1, STREAM_SAMPLE, true).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = SampleSet::read_csv(&buf[..]).unwrap();
        assert_eq!(back.x, s.x);
        assert_eq!(back.y, s.y);
        assert_eq!(back.grad, s.grad);
        assert!(matches!(SampleSet::read_csv(&b"X1,Z\n1,2\n"[..]), Err(Error::Data(_))));
        let no_grad = SampleSet::read_csv(&b"X1,X2,Y\n0.1,0.2,0.3\n"[..]).unwrap();
        assert!(no_grad.grad.is_none() && no_grad.len() == 1);
    }
}
