//! One-dimensional input distributions.
//!
//! A [`ProbabilityMeasure`] wraps a parametric [`Family`] with an optional
//! truncation interval. On finite supports it carries a precomputed composite
//! Gauss–Legendre rule (5 points per cell, cells split at density kinks) that
//! every `∫ · dμ` in the crate goes through.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

/// Default number of grid cells on a finite support.
pub const DEFAULT_CELLS: usize = 500;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

pub(crate) const GL5_NODES: [f64; 5] =
    [-0.906_179_845_938_664, -0.538_469_310_105_683_1, 0.0, 0.538_469_310_105_683_1, 0.906_179_845_938_664];
pub(crate) const GL5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// Integrates `f` over `[lo, hi]` with one 5-point Gauss–Legendre panel.
pub(crate) fn gl5<F: FnMut(f64) -> f64>(lo: f64, hi: f64, mut f: F) -> f64 {
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    let mut s = 0.0;
    for k in 0..5 {
        s += GL5_WEIGHTS[k] * f(mid + half * GL5_NODES[k]);
    }
    s * half
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub a: f64,
    pub b: f64,
}

impl Interval {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if a.is_nan() || b.is_nan() || a >= b {
            return Err(Error::Parameter(format!("invalid interval [{a}, {b}]")));
        }
        Ok(Interval { a, b })
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.a && x <= self.b
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.a + self.b)
    }

    /// `n` equally spaced points from `a` to `b` inclusive.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        let h = self.length() / (n - 1) as f64;
        (0..n).map(|k| if k == n - 1 { self.b } else { self.a + k as f64 * h }).collect()
    }
}

/// Parametric families. Parameters follow the usual textbook conventions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum Family {
    Uniform {
        a: f64,
        b: f64,
    },
    Normal {
        mean: f64,
        sd: f64,
    },
    Exponential {
        rate: f64,
    },
    Gumbel {
        loc: f64,
        scale: f64,
    },
    Triangular {
        lower: f64,
        mode: f64,
        upper: f64,
    },
    /// Density proportional to `(1 + x²)^(−β)` on the real line.
    GeneralizedCauchy {
        beta: f64,
    },
    Pareto {
        z: f64,
        alpha: f64,
    },
    /// Density proportional to `(1 − x²)^(β−1)` on `(−1, 1)`.
    SymmetricBeta {
        beta: f64,
    },
    /// Density `α x^(α−1)` on `(0, 1)`.
    Power {
        alpha: f64,
    },
    /// Density `α e^(−x) / (1 + e^(−x))^(α+1)` on the real line.
    GeneralizedLogistic {
        alpha: f64,
    },
}

fn softplus(t: f64) -> f64 {
    if t > 30.0 {
        t + (-t).exp()
    } else {
        t.exp().ln_1p()
    }
}

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `∫_{−1}^{1} (1 − x²)^(a−1) dx = √π Γ(a) / Γ(a + 1/2)`.
pub(crate) fn beta_norm(a: f64) -> f64 {
    (0.5 * std::f64::consts::PI.ln() + ln_gamma(a) - ln_gamma(a + 0.5)).exp()
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Uniform { .. } => "uniform",
            Family::Normal { .. } => "normal",
            Family::Exponential { .. } => "exponential",
            Family::Gumbel { .. } => "gumbel",
            Family::Triangular { .. } => "triangular",
            Family::GeneralizedCauchy { .. } => "generalized_cauchy",
            Family::Pareto { .. } => "pareto",
            Family::SymmetricBeta { .. } => "symmetric_beta",
            Family::Power { .. } => "power",
            Family::GeneralizedLogistic { .. } => "generalized_logistic",
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Family::Uniform { a, b } => a.is_finite() && b.is_finite() && a < b,
            Family::Normal { mean, sd } => mean.is_finite() && sd > 0.0,
            Family::Exponential { rate } => rate > 0.0 && rate.is_finite(),
            Family::Gumbel { loc, scale } => loc.is_finite() && scale > 0.0,
            Family::Triangular { lower, mode, upper } => {
                lower.is_finite() && upper.is_finite() && lower < upper && lower <= mode && mode <= upper
            }
            Family::GeneralizedCauchy { beta } => beta > 0.0 && beta.is_finite(),
            Family::Pareto { z, alpha } => z > 0.0 && alpha > 0.0 && z.is_finite() && alpha.is_finite(),
            Family::SymmetricBeta { beta } => beta > 0.0 && beta.is_finite(),
            Family::Power { alpha } => alpha > 0.0 && alpha.is_finite(),
            Family::GeneralizedLogistic { alpha } => alpha > 0.0 && alpha.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid parameters for {}: {:?}", self.name(), self)))
        }
    }

    pub fn natural_support(&self) -> Interval {
        let inf = f64::INFINITY;
        let (a, b) = match *self {
            Family::Uniform { a, b } => (a, b),
            Family::Normal { .. } | Family::Gumbel { .. } => (-inf, inf),
            Family::GeneralizedCauchy { .. } | Family::GeneralizedLogistic { .. } => (-inf, inf),
            Family::Exponential { .. } => (0.0, inf),
            Family::Triangular { lower, upper, .. } => (lower, upper),
            Family::Pareto { z, .. } => (z, inf),
            Family::SymmetricBeta { .. } => (-1.0, 1.0),
            Family::Power { .. } => (0.0, 1.0),
        };
        Interval { a, b }
    }

    /// Points where the density is not smooth.
    fn breakpoints(&self) -> Vec<f64> {
        match *self {
            Family::Triangular { lower, mode, upper } if mode > lower && mode < upper => vec![mode],
            _ => Vec::new(),
        }
    }

    /// Untruncated density. For the Cauchy family with β ≤ 1/2 there is no
    /// normalizing constant on the real line and the bare kernel is returned.
    fn raw_density(&self, x: f64) -> f64 {
        match *self {
            Family::Uniform { a, b } => 1.0 / (b - a),
            Family::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
            }
            Family::Exponential { rate } => rate * (-rate * x).exp(),
            Family::Gumbel { loc, scale } => {
                let t = (x - loc) / scale;
                (-t - (-t).exp()).exp() / scale
            }
            Family::Triangular { lower, mode, upper } => {
                if x < mode {
                    2.0 * (x - lower) / ((upper - lower) * (mode - lower))
                } else if x > mode {
                    2.0 * (upper - x) / ((upper - lower) * (upper - mode))
                } else {
                    2.0 / (upper - lower)
                }
            }
            Family::GeneralizedCauchy { beta } => {
                let k = (1.0 + x * x).powf(-beta);
                if beta > 0.5 {
                    k / cauchy_norm(beta)
                } else {
                    k
                }
            }
            Family::Pareto { z, alpha } => alpha * z.powf(alpha) * x.powf(-alpha - 1.0),
            Family::SymmetricBeta { beta } => {
                let s = (1.0 - x * x).max(0.0);
                if beta == 1.0 {
                    0.5
                } else {
                    s.powf(beta - 1.0) / beta_norm(beta)
                }
            }
            Family::Power { alpha } => {
                if alpha == 1.0 {
                    1.0
                } else {
                    alpha * x.powf(alpha - 1.0)
                }
            }
            Family::GeneralizedLogistic { alpha } => (alpha.ln() - x - (alpha + 1.0) * softplus(-x)).exp(),
        }
    }

    /// Closed-form untruncated CDF, when one exists.
    fn cdf(&self, x: f64) -> Option<f64> {
        Some(match *self {
            Family::Uniform { a, b } => ((x - a) / (b - a)).clamp(0.0, 1.0),
            Family::Normal { mean, sd } => std_normal_cdf((x - mean) / sd),
            Family::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
            Family::Gumbel { loc, scale } => (-(-(x - loc) / scale).exp()).exp(),
            Family::Triangular { lower, mode, upper } => {
                if x <= lower {
                    0.0
                } else if x >= upper {
                    1.0
                } else if x <= mode {
                    (x - lower).powi(2) / ((upper - lower) * (mode - lower))
                } else {
                    1.0 - (upper - x).powi(2) / ((upper - lower) * (upper - mode))
                }
            }
            Family::Pareto { z, alpha } => {
                if x <= z {
                    0.0
                } else {
                    1.0 - (z / x).powf(alpha)
                }
            }
            Family::Power { alpha } => x.clamp(0.0, 1.0).powf(alpha),
            Family::GeneralizedLogistic { alpha } => (-alpha * softplus(-x)).exp(),
            Family::GeneralizedCauchy { .. } | Family::SymmetricBeta { .. } => return None,
        })
    }

    /// Closed-form untruncated quantile function, when one exists.
    fn inverse_cdf(&self, u: f64) -> Option<f64> {
        Some(match *self {
            Family::Uniform { a, b } => a + u * (b - a),
            Family::Normal { mean, sd } => {
                let n = Normal::new(mean, sd).ok()?;
                n.inverse_cdf(u)
            }
            Family::Exponential { rate } => -(-u).ln_1p() / rate,
            Family::Gumbel { loc, scale } => loc - scale * (-u.ln()).ln(),
            Family::Triangular { lower, mode, upper } => {
                let split = (mode - lower) / (upper - lower);
                if u <= split {
                    lower + (u * (upper - lower) * (mode - lower)).sqrt()
                } else {
                    upper - ((1.0 - u) * (upper - lower) * (upper - mode)).sqrt()
                }
            }
            Family::Pareto { z, alpha } => z * (1.0 - u).powf(-1.0 / alpha),
            Family::Power { alpha } => u.powf(1.0 / alpha),
            Family::GeneralizedLogistic { alpha } => -(u.powf(-1.0 / alpha) - 1.0).ln(),
            Family::GeneralizedCauchy { beta: 1.0 } => (std::f64::consts::PI * (u - 0.5)).tan(),
            Family::GeneralizedCauchy { .. } | Family::SymmetricBeta { .. } => return None,
        })
    }

    fn score(&self, x: f64) -> f64 {
        match *self {
            Family::Uniform { .. } => 0.0,
            Family::Normal { mean, sd } => -(x - mean) / (sd * sd),
            Family::Exponential { rate } => -rate,
            Family::Gumbel { loc, scale } => (-1.0 + (-(x - loc) / scale).exp()) / scale,
            Family::Triangular { lower, mode, upper } => {
                if x <= mode && mode > lower {
                    1.0 / (x - lower)
                } else {
                    -1.0 / (upper - x)
                }
            }
            Family::GeneralizedCauchy { beta } => -2.0 * beta * x / (1.0 + x * x),
            Family::Pareto { alpha, .. } => -(alpha + 1.0) / x,
            Family::SymmetricBeta { beta } => -2.0 * (beta - 1.0) * x / (1.0 - x * x),
            Family::Power { alpha } => (alpha - 1.0) / x,
            Family::GeneralizedLogistic { alpha } => -1.0 + (alpha + 1.0) * logistic(-x),
        }
    }

    fn score_derivative(&self, x: f64) -> f64 {
        match *self {
            Family::Uniform { .. } | Family::Exponential { .. } => 0.0,
            Family::Normal { sd, .. } => -1.0 / (sd * sd),
            Family::Gumbel { loc, scale } => -(-(x - loc) / scale).exp() / (scale * scale),
            Family::Triangular { lower, mode, upper } => {
                if x <= mode && mode > lower {
                    -1.0 / (x - lower).powi(2)
                } else {
                    -1.0 / (upper - x).powi(2)
                }
            }
            Family::GeneralizedCauchy { beta } => {
                let q = 1.0 + x * x;
                -2.0 * beta * (1.0 - x * x) / (q * q)
            }
            Family::Pareto { alpha, .. } => (alpha + 1.0) / (x * x),
            Family::SymmetricBeta { beta } => {
                let q = 1.0 - x * x;
                -2.0 * (beta - 1.0) * (1.0 + x * x) / (q * q)
            }
            Family::Power { alpha } => -(alpha - 1.0) / (x * x),
            Family::GeneralizedLogistic { alpha } => -(alpha + 1.0) * logistic(x) * logistic(-x),
        }
    }

    fn natural_mean(&self) -> Result<f64> {
        Ok(match *self {
            Family::Uniform { a, b } => 0.5 * (a + b),
            Family::Normal { mean, .. } => mean,
            Family::Exponential { rate } => 1.0 / rate,
            Family::Gumbel { loc, scale } => loc + scale * EULER_GAMMA,
            Family::Triangular { lower, mode, upper } => (lower + mode + upper) / 3.0,
            Family::GeneralizedCauchy { beta } => {
                if beta > 1.0 {
                    0.0
                } else {
                    return Err(Error::Model(format!("generalized Cauchy with beta = {beta} has no mean")));
                }
            }
            Family::Pareto { z, alpha } => {
                if alpha > 1.0 {
                    alpha * z / (alpha - 1.0)
                } else {
                    return Err(Error::Model(format!("Pareto with alpha = {alpha} has no mean")));
                }
            }
            Family::SymmetricBeta { .. } => 0.0,
            Family::Power { alpha } => alpha / (alpha + 1.0),
            Family::GeneralizedLogistic { alpha } => digamma(alpha) + EULER_GAMMA,
        })
    }
}

/// `∫ (1 + x²)^(−β) dx = √π Γ(β − 1/2) / Γ(β)`, finite for β > 1/2.
pub(crate) fn cauchy_norm(beta: f64) -> f64 {
    (0.5 * std::f64::consts::PI.ln() + ln_gamma(beta - 0.5) - ln_gamma(beta)).exp()
}

/// Composite quadrature rule with the density folded into the weights.
#[derive(Debug)]
struct QuadRule {
    edges: Vec<f64>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// Cumulative probability at each edge.
    cum: Vec<f64>,
}

/// Measure spec as read from and written to JSON.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    pub family: String,
    #[serde(default)]
    pub params: serde_json::Map<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<[f64; 2]>,
}

/// A probability measure on an interval, possibly truncated.
#[derive(Debug, Clone)]
pub struct ProbabilityMeasure {
    family: Family,
    support: Interval,
    truncation: Option<Interval>,
    normalization: f64,
    cells: usize,
    quad: Option<Arc<QuadRule>>,
}

impl ProbabilityMeasure {
    pub fn new(family: Family, truncation: Option<(f64, f64)>) -> Result<Self> {
        Self::with_cells(family, truncation, DEFAULT_CELLS)
    }

    pub fn with_cells(family: Family, truncation: Option<(f64, f64)>, cells: usize) -> Result<Self> {
        family.validate()?;
        if cells < 2 {
            return Err(Error::Parameter("at least two quadrature cells are required".into()));
        }
        let natural = family.natural_support();
        let truncation = match truncation {
            Some((a, b)) => {
                let t = Interval::new(a, b)?;
                if t.a < natural.a || t.b > natural.b {
                    return Err(Error::Domain(format!(
                        "truncation [{a}, {b}] leaves the support [{}, {}] of {}",
                        natural.a,
                        natural.b,
                        family.name()
                    )));
                }
                Some(t)
            }
            None => None,
        };
        let support = truncation.unwrap_or(natural);
        if !support.is_finite() {
            if let Family::GeneralizedCauchy { beta } = family {
                if beta <= 0.5 {
                    return Err(Error::Model(format!(
                        "generalized Cauchy with beta = {beta} is not normalizable on the real line"
                    )));
                }
            }
        }
        let mut m = ProbabilityMeasure { family, support, truncation, normalization: 1.0, cells, quad: None };
        m.normalization = match (truncation, family.cdf(support.a), family.cdf(support.b)) {
            (None, _, _) if !matches!(family, Family::GeneralizedCauchy { beta } if beta <= 0.5) => 1.0,
            (_, Some(fa), Some(fb)) => fb - fa,
            _ => m.raw_mass()?,
        };
        if !(m.normalization > 0.0) || !m.normalization.is_finite() {
            return Err(Error::Domain(format!("truncation interval carries no mass ({})", m.normalization)));
        }
        if support.is_finite() {
            m.quad = Some(Arc::new(m.build_rule()));
        }
        Ok(m)
    }

    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        Self::new(Family::Uniform { a, b }, None)
    }

    pub fn from_spec(spec: &MeasureSpec) -> Result<Self> {
        let tagged = serde_json::json!({ "family": spec.family, "params": Value::Object(spec.params.clone()) });
        let family: Family = serde_json::from_value(tagged)
            .map_err(|e| Error::Config(format!("measure spec for family '{}': {e}", spec.family)))?;
        Self::new(family, spec.truncation.map(|[a, b]| (a, b)))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: MeasureSpec = serde_json::from_str(text).map_err(|e| Error::Config(format!("measure spec: {e}")))?;
        Self::from_spec(&spec)
    }

    pub fn spec(&self) -> MeasureSpec {
        let v = serde_json::to_value(self.family).expect("family serializes");
        let params = v.get("params").and_then(Value::as_object).cloned().unwrap_or_default();
        MeasureSpec { family: self.family.name().to_string(), params, truncation: self.truncation.map(|t| [t.a, t.b]) }
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn support(&self) -> Interval {
        self.support
    }

    pub fn truncation(&self) -> Option<Interval> {
        self.truncation
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        self.family.breakpoints().into_iter().filter(|&p| p > self.support.a && p < self.support.b).collect()
    }

    fn raw_mass(&self) -> Result<f64> {
        if !self.support.is_finite() {
            return Err(Error::Domain("normalization by quadrature needs a finite support".into()));
        }
        let edges = self.cell_edges();
        Ok(edges.windows(2).map(|c| gl5(c[0], c[1], |x| self.family.raw_density(x))).sum())
    }

    fn cell_edges(&self) -> Vec<f64> {
        let mut edges = self.support.grid(self.cells + 1);
        for p in self.breakpoints() {
            if !edges.iter().any(|&e| (e - p).abs() <= 1e-14 * self.support.length()) {
                edges.push(p);
            }
        }
        edges.sort_by(f64::total_cmp);
        edges
    }

    fn build_rule(&self) -> QuadRule {
        let edges = self.cell_edges();
        let mut nodes = Vec::with_capacity(5 * edges.len());
        let mut weights = Vec::with_capacity(5 * edges.len());
        let mut cum = Vec::with_capacity(edges.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for c in edges.windows(2) {
            let half = 0.5 * (c[1] - c[0]);
            let mid = 0.5 * (c[1] + c[0]);
            for k in 0..5 {
                let x = mid + half * GL5_NODES[k];
                let w = GL5_WEIGHTS[k] * half * self.family.raw_density(x) / self.normalization;
                nodes.push(x);
                weights.push(w);
                acc += w;
            }
            cum.push(acc);
        }
        QuadRule { edges, nodes, weights, cum }
    }

    fn rule(&self) -> Result<&QuadRule> {
        self.quad
            .as_deref()
            .ok_or_else(|| Error::Domain(format!("{} has an infinite support; truncate it first", self.family.name())))
    }

    /// Quadrature nodes and probability weights (the weights sum to one).
    pub fn quadrature_rule(&self) -> Result<(&[f64], &[f64])> {
        let r = self.rule()?;
        Ok((&r.nodes, &r.weights))
    }

    fn check_support(&self, x: f64) -> Result<()> {
        if self.support.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain(format!("x = {x} outside the support [{}, {}]", self.support.a, self.support.b)))
        }
    }

    pub fn density(&self, x: f64) -> Result<f64> {
        self.check_support(x)?;
        Ok(self.family.raw_density(x) / self.normalization)
    }

    /// Density without the support check; for hot loops over known grids.
    pub(crate) fn density_unchecked(&self, x: f64) -> f64 {
        self.family.raw_density(x) / self.normalization
    }

    /// `(log ρ)'(x)`; the left derivative at a triangular mode.
    pub fn log_density_derivative(&self, x: f64) -> Result<f64> {
        self.check_interior_positive(x)?;
        Ok(self.family.score(x))
    }

    /// `(log ρ)''(x)`.
    pub fn log_density_second_derivative(&self, x: f64) -> Result<f64> {
        self.check_interior_positive(x)?;
        Ok(self.family.score_derivative(x))
    }

    fn check_interior_positive(&self, x: f64) -> Result<()> {
        self.check_support(x)?;
        let natural = self.family.natural_support();
        let at_edge = x == natural.a || x == natural.b;
        if at_edge && !(self.family.raw_density(x) > 0.0 && self.family.raw_density(x).is_finite()) {
            return Err(Error::Domain(format!("log-density is not differentiable at x = {x}")));
        }
        if !(self.family.raw_density(x) > 0.0) {
            return Err(Error::Domain(format!("density vanishes at x = {x}")));
        }
        Ok(())
    }

    /// `∫ f dμ` by the composite rule.
    pub fn quadrature<F: FnMut(f64) -> f64>(&self, mut f: F) -> Result<f64> {
        let r = self.rule()?;
        Ok(r.nodes.iter().zip(&r.weights).map(|(&x, &w)| w * f(x)).sum())
    }

    pub fn mean(&self) -> Result<f64> {
        match (self.truncation, self.family) {
            (None, fam) if !self.support.is_finite() || !matches!(fam, Family::SymmetricBeta { .. }) => {
                fam.natural_mean()
            }
            (Some(t), Family::Uniform { .. }) => Ok(t.midpoint()),
            (Some(t), Family::Exponential { rate }) if t.b.is_finite() => {
                let (ea, eb) = ((-rate * t.a).exp(), (-rate * t.b).exp());
                Ok(1.0 / rate + (t.a * ea - t.b * eb) / (ea - eb))
            }
            (Some(t), _) if !t.is_finite() => {
                Err(Error::Unsupported(format!("mean of {} truncated to a half-line", self.family.name())))
            }
            _ => self.quadrature(|x| x),
        }
    }

    pub fn variance(&self) -> Result<f64> {
        let m = self.mean()?;
        self.quadrature(|x| (x - m) * (x - m))
    }

    /// Cumulative distribution function of the (truncated) measure.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.support.a {
            return 0.0;
        }
        if x >= self.support.b {
            return 1.0;
        }
        if let (Some(fx), Some(fa)) = (self.family.cdf(x), self.family.cdf(self.support.a)) {
            if self.truncation.is_some() || !matches!(self.family, Family::GeneralizedCauchy { .. }) {
                return ((fx - fa) / self.normalization).clamp(0.0, 1.0);
            }
        }
        match self.quad.as_deref() {
            Some(r) => {
                let k = cell_index(&r.edges, x);
                (r.cum[k] + gl5(r.edges[k], x, |t| self.density_unchecked(t))).clamp(0.0, 1.0)
            }
            None => f64::NAN,
        }
    }

    /// Quantile function of the (truncated) measure.
    pub fn inverse_cdf(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::Domain(format!("probability {u} outside [0, 1]")));
        }
        let closed = match self.family {
            Family::GeneralizedCauchy { .. } | Family::SymmetricBeta { .. } => None,
            _ => self.family.cdf(self.support.a),
        };
        if let Some(fa) = closed {
            if let Some(x) = self.family.inverse_cdf(fa + u * self.normalization) {
                if x.is_finite() || !self.support.is_finite() {
                    return Ok(x.clamp(self.support.a, self.support.b));
                }
            }
        }
        if self.truncation.is_none() {
            if let Some(x) = self.family.inverse_cdf(u) {
                return Ok(x);
            }
        }
        self.numeric_inverse_cdf(u)
    }

    /// Safeguarded Newton iteration on the quadrature CDF inside one cell.
    fn numeric_inverse_cdf(&self, u: f64) -> Result<f64> {
        let r = self.rule()?;
        let n = r.cum.len() - 1;
        let target = u.clamp(0.0, r.cum[n]);
        let k = match r.cum.binary_search_by(|c| c.total_cmp(&target)) {
            Ok(k) => return Ok(r.edges[k]),
            Err(k) => (k.max(1) - 1).min(n - 1),
        };
        let (mut lo, mut hi) = (r.edges[k], r.edges[k + 1]);
        let local = target - r.cum[k];
        let tol = 1e-12 * self.support.length();
        let mut x = lo + (hi - lo) * (local / (r.cum[k + 1] - r.cum[k])).clamp(0.0, 1.0);
        for _ in 0..200 {
            let g = gl5(r.edges[k], x, |t| self.density_unchecked(t)) - local;
            if g.abs() <= 1e-15 {
                return Ok(x);
            }
            if g > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let d = self.density_unchecked(x);
            let newton = x - g / d;
            x = if d > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if hi - lo <= tol {
                return Ok(x);
            }
        }
        Err(Error::Numerical(format!("inverse CDF did not converge at u = {u}")))
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        self.inverse_cdf(u).unwrap_or(f64::NAN)
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }
}

fn cell_index(edges: &[f64], x: f64) -> usize {
    match edges.binary_search_by(|e| e.total_cmp(&x)) {
        Ok(k) => k.min(edges.len() - 2),
        Err(k) => (k.max(1) - 1).min(edges.len() - 2),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flood_inputs() -> Vec<ProbabilityMeasure> {
        crate::models::flood_inputs()
    }

    #[test]
    fn uniform_density_is_constant() {
        let m = ProbabilityMeasure::uniform(0.0, 1.0).unwrap();
        assert_eq!(m.density(0.3).unwrap(), 1.0);
        assert!(m.density(1.3).is_err());
    }

    #[test]
    fn cauchy_beta_one_density_at_zero() {
        // Z_1 by brute-force quadrature on a wide window plus the analytic tail.
        let h = 2000.0;
        let n = 400_000;
        let step = 2.0 * h / n as f64;
        let mut z = 0.0;
        for k in 0..n {
            let x = -h + (k as f64 + 0.5) * step;
            z += step / (1.0 + x * x);
        }
        z += 2.0 / h;
        let m = ProbabilityMeasure::new(Family::GeneralizedCauchy { beta: 1.0 }, None).unwrap();
        assert!((m.density(0.0).unwrap() - 1.0 / z).abs() < 1e-6);
        assert!((m.density(0.0).unwrap() - std::f64::consts::FRAC_1_PI).abs() < 1e-7);
    }

    #[test]
    fn truncated_gumbel_density() {
        let m = ProbabilityMeasure::new(Family::Gumbel { loc: 1013.0, scale: 558.0 }, Some((500.0, 3000.0))).unwrap();
        let raw = (-1.0f64).exp() / 558.0;
        assert!((raw - 6.593e-4).abs() < 1e-6);
        // Independent normalization by midpoint rule on the truncation window.
        let n = 200_000;
        let step = 2500.0 / n as f64;
        let mass: f64 = (0..n)
            .map(|k| {
                let t = (500.0 + (k as f64 + 0.5) * step - 1013.0) / 558.0;
                (-t - (-t).exp()).exp() / 558.0 * step
            })
            .sum();
        assert!((m.density(1013.0).unwrap() - raw / mass).abs() < 1e-10);
    }

    #[test]
    fn scores() {
        let n = ProbabilityMeasure::new(Family::Normal { mean: 0.0, sd: 1.0 }, None).unwrap();
        assert_eq!(n.log_density_derivative(2.0).unwrap(), -2.0);
        let e = ProbabilityMeasure::new(Family::Exponential { rate: 3.0 }, None).unwrap();
        assert_eq!(e.log_density_derivative(0.7).unwrap(), -3.0);
        let p = ProbabilityMeasure::new(Family::Pareto { z: 1.0, alpha: 2.0 }, None).unwrap();
        assert_eq!(p.log_density_derivative(2.0).unwrap(), -1.5);
        let t = ProbabilityMeasure::new(Family::Triangular { lower: 0.0, mode: 0.5, upper: 1.0 }, None).unwrap();
        assert!(t.log_density_derivative(0.0).is_err());
        assert_eq!(t.log_density_derivative(0.5).unwrap(), 2.0);
    }

    #[test]
    fn means() {
        let u = ProbabilityMeasure::uniform(2.0, 5.0).unwrap();
        assert_eq!(u.mean().unwrap(), 3.5);
        let e = ProbabilityMeasure::new(Family::Exponential { rate: 1.0 }, Some((0.0, 2.0))).unwrap();
        let expected = 1.0 - 2.0 * (-2.0f64).exp() / (1.0 - (-2.0f64).exp());
        assert!((e.mean().unwrap() - expected).abs() < 1e-14);
        assert!((e.mean().unwrap() - 0.686_965).abs() < 1e-6);
        assert!((e.mean().unwrap() - e.quadrature(|x| x).unwrap()).abs() < 1e-12);
        let t = ProbabilityMeasure::new(Family::Triangular { lower: 49.0, mode: 50.0, upper: 51.0 }, None).unwrap();
        assert!((t.mean().unwrap() - 50.0).abs() < 1e-12);
        let c = ProbabilityMeasure::new(Family::GeneralizedCauchy { beta: 1.0 }, None).unwrap();
        assert!(matches!(c.mean(), Err(Error::Model(_))));
        let l = ProbabilityMeasure::new(Family::GeneralizedLogistic { alpha: 1.0 }, None).unwrap();
        assert!(l.mean().unwrap().abs() < 1e-12);
    }

    #[test]
    fn quadrature_basics() {
        let u = ProbabilityMeasure::uniform(0.0, 1.0).unwrap();
        assert!((u.quadrature(|_| 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((u.quadrature(|x| x).unwrap() - 0.5).abs() < 1e-12);
        let n = ProbabilityMeasure::new(Family::Normal { mean: 0.0, sd: 1.0 }, None).unwrap();
        assert!(matches!(n.quadrature(|x| x), Err(Error::Domain(_))));
    }

    #[test]
    fn truncated_normal_second_moment_against_monte_carlo() {
        let m = ProbabilityMeasure::new(Family::Normal { mean: 0.0, sd: 1.0 }, Some((0.0, 3.0))).unwrap();
        let q = m.quadrature(|x| x * x).unwrap();
        // Rejection sampling from the untruncated normal as an independent oracle.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let (mut s, mut s2, mut n) = (0.0, 0.0, 0usize);
        while n < 2_000_000 {
            let x: f64 = rand_distr::Distribution::sample(&normal, &mut rng);
            if (0.0..=3.0).contains(&x) {
                s += x * x;
                s2 += x.powi(4);
                n += 1;
            }
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((q - mean).abs() < 3.0 * se, "{q} vs {mean} ± {se}");
    }

    #[test]
    fn normalization_for_reference_families() {
        let mut ms = flood_inputs();
        ms.push(ProbabilityMeasure::uniform(0.0, 1.0).unwrap());
        ms.push(ProbabilityMeasure::new(Family::Exponential { rate: 1.0 }, Some((0.0, 2.0))).unwrap());
        ms.push(ProbabilityMeasure::new(Family::Normal { mean: 0.0, sd: 1.0 }, Some((-3.0, 3.0))).unwrap());
        ms.push(ProbabilityMeasure::new(Family::GeneralizedCauchy { beta: 0.5 }, Some((-1.0, 1.0))).unwrap());
        ms.push(ProbabilityMeasure::new(Family::Pareto { z: 1.0, alpha: 1.0 }, Some((1.0, 3.0))).unwrap());
        ms.push(ProbabilityMeasure::new(Family::SymmetricBeta { beta: 2.0 }, None).unwrap());
        ms.push(ProbabilityMeasure::new(Family::Power { alpha: 2.0 }, None).unwrap());
        for m in &ms {
            let mass = m.quadrature(|_| 1.0).unwrap();
            assert!((mass - 1.0).abs() < 1e-10, "{:?}: {mass}", m.family());
        }
    }

    #[test]
    fn sampling_is_deterministic_and_accurate() {
        let u = ProbabilityMeasure::uniform(0.0, 1.0).unwrap();
        let a = u.sample(3, &mut ChaCha8Rng::seed_from_u64(5));
        let b = u.sample(3, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);

        let e = ProbabilityMeasure::new(Family::Exponential { rate: 1.0 }, Some((0.0, 2.0))).unwrap();
        let xs = e.sample(1_000_000, &mut ChaCha8Rng::seed_from_u64(6));
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - 0.68680).abs() < 0.002);

        let t = ProbabilityMeasure::new(Family::Triangular { lower: 0.0, mode: 0.5, upper: 1.0 }, None).unwrap();
        let xs = t.sample(1_000_000, &mut ChaCha8Rng::seed_from_u64(7));
        let below = xs.iter().filter(|&&x| x <= 0.5).count() as f64 / xs.len() as f64;
        assert!((below - 0.5).abs() < 0.005);
    }

    #[test]
    fn numeric_inverse_matches_cdf() {
        let m = ProbabilityMeasure::new(Family::SymmetricBeta { beta: 2.5 }, None).unwrap();
        for &u in &[0.01, 0.2, 0.5, 0.77, 0.999] {
            let x = m.inverse_cdf(u).unwrap();
            assert!((m.cdf(x) - u).abs() < 1e-11);
        }
    }

    #[test]
    fn spec_roundtrip_and_unknown_fields() {
        let m =
            ProbabilityMeasure::from_json(r#"{"family":"normal","params":{"mean":30,"sd":8},"truncation":[15,75]}"#)
                .unwrap();
        assert_eq!(m.support(), Interval { a: 15.0, b: 75.0 });
        let again = ProbabilityMeasure::from_spec(&m.spec()).unwrap();
        assert_eq!(again.family(), m.family());
        assert!(ProbabilityMeasure::from_json(r#"{"family":"normal","params":{"mean":0,"sd":1,"nu":3}}"#).is_err());
        assert!(ProbabilityMeasure::from_json(r#"{"family":"normal","params":{"mean":0,"sd":1},"extra":1}"#).is_err());
        assert!(ProbabilityMeasure::from_json(r#"{"family":"weibull","params":{}}"#).is_err());
    }
}
