//! Neumann Sturm–Liouville problems `−L_w f = −(w f' ρ)'/ρ = λ f`.
//!
//! [`solve_eigenbasis`] discretizes with P1 finite elements and a consistent
//! mass matrix. Both matrices are tridiagonal; eigenvalues are located by
//! Sturm-count bisection on the pencil `K − σM` and eigenvectors by shifted
//! inverse iteration with M-orthogonal deflation.
//!
//! The module also holds the intertwining functionals `M_{w,ε}` and
//! `M_{w,h}`, whose positive infima give upper bounds on `C_P`, and the
//! Rayleigh quotients used to approach `C_P` from below.

use std::sync::Arc;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::measures::{beta_norm, Family, Interval, ProbabilityMeasure, GL5_NODES, GL5_WEIGHTS};
use crate::weights::{ClosedWeight, RealFn, SaturatingFunction, WeightCurve, WeightRepr};

/// Default number of finite elements.
pub const DEFAULT_CELLS: usize = 500;
/// Points of the ε-grid used by [`intertwining_bound`].
pub const EPS_GRID: usize = 401;
/// Points of the x-grid used for intertwining profiles.
pub const PROFILE_POINTS: usize = 4001;

const RESIDUAL_TOL: f64 = 1e-8;

/// Symmetric tridiagonal matrix.
#[derive(Debug, Clone)]
struct Tridiagonal {
    diag: Vec<f64>,
    off: Vec<f64>,
}

impl Tridiagonal {
    fn zeros(n: usize) -> Self {
        Tridiagonal { diag: vec![0.0; n], off: vec![0.0; n - 1] }
    }

    fn mul(&self, v: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * v[i];
                if i > 0 {
                    s += self.off[i - 1] * v[i - 1];
                }
                if i + 1 < n {
                    s += self.off[i] * v[i + 1];
                }
                s
            })
            .collect()
    }

    fn shifted(&self, other: &Tridiagonal, sigma: f64) -> Tridiagonal {
        Tridiagonal {
            diag: self.diag.iter().zip(&other.diag).map(|(a, b)| a - sigma * b).collect(),
            off: self.off.iter().zip(&other.off).map(|(a, b)| a - sigma * b).collect(),
        }
    }

    fn norm_inf(&self) -> f64 {
        let n = self.diag.len();
        (0..n)
            .map(|i| {
                self.diag[i].abs()
                    + if i > 0 { self.off[i - 1].abs() } else { 0.0 }
                    + if i + 1 < n { self.off[i].abs() } else { 0.0 }
            })
            .fold(0.0, f64::max)
    }

    /// Number of negative pivots of `LDLᵀ`, i.e. of eigenvalues of the pencil below the shift.
    fn negative_count(&self) -> usize {
        let tiny = f64::MIN_POSITIVE.sqrt() * self.norm_inf().max(1.0);
        let mut count = 0;
        let mut d = self.diag[0];
        for i in 0..self.diag.len() {
            if i > 0 {
                let prev = if d == 0.0 { -tiny } else { d };
                d = self.diag[i] - self.off[i - 1] * self.off[i - 1] / prev;
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// Gaussian elimination with partial pivoting; zero pivots are perturbed,
    /// which is the desired behavior for inverse iteration.
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        let tiny = f64::EPSILON * self.norm_inf().max(f64::MIN_POSITIVE);
        let mut d = self.diag.clone();
        let mut du = self.off.clone();
        let mut dl = self.off.clone();
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut b = rhs.to_vec();
        for i in 0..n - 1 {
            if d[i].abs() >= dl[i].abs() {
                if d[i] == 0.0 {
                    d[i] = tiny;
                }
                let fact = dl[i] / d[i];
                d[i + 1] -= fact * du[i];
                b[i + 1] -= fact * b[i];
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                let temp = d[i + 1];
                d[i + 1] = du[i] - fact * temp;
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -fact * du2[i];
                }
                du[i] = temp;
                let tb = b[i];
                b[i] = b[i + 1];
                b[i + 1] = tb - fact * b[i + 1];
            }
            dl[i] = 0.0;
        }
        if d[n - 1] == 0.0 {
            d[n - 1] = tiny;
        }
        b[n - 1] /= d[n - 1];
        if n > 1 {
            b[n - 2] = (b[n - 2] - du[n - 2] * b[n - 1]) / d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - du[i] * b[i + 1] - du2[i] * b[i + 2]) / d[i];
        }
        b
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Assembles stiffness and mass matrices on a uniform mesh.
fn assemble(m: &ProbabilityMeasure, w: &WeightCurve, cells: usize) -> (Vec<f64>, Tridiagonal, Tridiagonal) {
    let s = m.support();
    let xs = s.grid(cells + 1);
    let breaks = m.breakpoints();
    let mut k = Tridiagonal::zeros(cells + 1);
    let mut mm = Tridiagonal::zeros(cells + 1);
    for c in 0..cells {
        let (x0, x1) = (xs[c], xs[c + 1]);
        let h = x1 - x0;
        let mut pieces = vec![x0];
        pieces.extend(breaks.iter().copied().filter(|&p| p > x0 && p < x1));
        pieces.push(x1);
        let (mut wr, mut m00, mut m01, mut m11) = (0.0, 0.0, 0.0, 0.0);
        for p in pieces.windows(2) {
            let half = 0.5 * (p[1] - p[0]);
            let mid = 0.5 * (p[1] + p[0]);
            for q in 0..5 {
                let x = mid + half * GL5_NODES[q];
                let wt = GL5_WEIGHTS[q] * half * m.density_unchecked(x);
                let (l, r) = ((x1 - x) / h, (x - x0) / h);
                wr += wt * w.eval(x);
                m00 += wt * l * l;
                m01 += wt * l * r;
                m11 += wt * r * r;
            }
        }
        let kk = wr / (h * h);
        k.diag[c] += kk;
        k.diag[c + 1] += kk;
        k.off[c] -= kk;
        mm.diag[c] += m00;
        mm.diag[c + 1] += m11;
        mm.off[c] += m01;
    }
    (xs, k, mm)
}

/// Eigenvalues and `μ`-orthonormal eigenfunctions of `−L_w`.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    grid: Vec<f64>,
    /// `λ_1 ≤ … ≤ λ_K`; the zero mode is not included.
    eigenvalues: Vec<f64>,
    eigenfunctions: Vec<Vec<f64>>,
    derivatives: Vec<Vec<f64>>,
    zero_mode: f64,
    residuals: Vec<f64>,
    weight: WeightCurve,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumMetadata {
    pub eigenvalues: Vec<f64>,
    pub poincare_constant: f64,
    pub cells: usize,
    pub zero_mode: f64,
    pub residuals: Vec<f64>,
    pub sign_convention: &'static str,
    pub normalization: &'static str,
    pub derivative_recovery: &'static str,
}

impl SpectralBasis {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn cells(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn num_eig(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `λ_n` for `n ≥ 1`.
    pub fn eigenvalue(&self, n: usize) -> Result<f64> {
        self.check_index(n)?;
        Ok(self.eigenvalues[n - 1])
    }

    pub fn poincare_constant(&self) -> f64 {
        1.0 / self.eigenvalues[0]
    }

    pub fn zero_mode(&self) -> f64 {
        self.zero_mode
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn weight(&self) -> &WeightCurve {
        &self.weight
    }

    /// Nodal values of `e_n`.
    pub fn nodal(&self, n: usize) -> Result<&[f64]> {
        self.check_index(n)?;
        Ok(&self.eigenfunctions[n - 1])
    }

    /// Nodal values of the recovered derivative `e_n'`.
    pub fn nodal_derivative(&self, n: usize) -> Result<&[f64]> {
        self.check_index(n)?;
        Ok(&self.derivatives[n - 1])
    }

    fn check_index(&self, n: usize) -> Result<()> {
        if n == 0 || n > self.eigenvalues.len() {
            Err(Error::Config(format!("eigenpair {n} not available (have 1..={})", self.eigenvalues.len())))
        } else {
            Ok(())
        }
    }

    fn interp(&self, values: &[f64], x: f64) -> f64 {
        let k = crate::weights::segment(&self.grid, x);
        let t = ((x - self.grid[k]) / (self.grid[k + 1] - self.grid[k])).clamp(0.0, 1.0);
        values[k] + t * (values[k + 1] - values[k])
    }

    /// `e_n(x)` by piecewise-linear interpolation; `n = 0` gives the constant one.
    pub fn eval(&self, n: usize, x: f64) -> f64 {
        if n == 0 {
            return 1.0;
        }
        self.interp(&self.eigenfunctions[n - 1], x)
    }

    /// `e_n'(x)` interpolated from the recovered nodal derivatives.
    pub fn eval_derivative(&self, n: usize, x: f64) -> f64 {
        if n == 0 {
            return 0.0;
        }
        self.interp(&self.derivatives[n - 1], x)
    }

    pub fn metadata(&self) -> SpectrumMetadata {
        SpectrumMetadata {
            eigenvalues: self.eigenvalues.clone(),
            poincare_constant: self.poincare_constant(),
            cells: self.cells(),
            zero_mode: self.zero_mode,
            residuals: self.residuals.clone(),
            sign_convention: "e_n(b) > 0",
            normalization: "int e_n^2 dmu = 1, int e_n dmu = 0",
            derivative_recovery: "average of adjacent element slopes, one-sided at endpoints",
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        let k = self.num_eig();
        let mut header = vec!["x".to_string()];
        header.extend((1..=k).map(|n| format!("e{n}")));
        header.extend((1..=k).map(|n| format!("d_e{n}")));
        writeln!(out, "{}", header.join(","))?;
        for (j, x) in self.grid.iter().enumerate() {
            let mut row = vec![format!("{x:.15e}")];
            row.extend(self.eigenfunctions.iter().map(|e| format!("{:.15e}", e[j])));
            row.extend(self.derivatives.iter().map(|d| format!("{:.15e}", d[j])));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Solves `K v = λ M v` for the first `num_eig` non-trivial modes.
pub fn solve_eigenbasis(
    m: &ProbabilityMeasure,
    w: &WeightCurve,
    num_eig: usize,
    cells: usize,
) -> Result<SpectralBasis> {
    let s = m.support();
    if !s.is_finite() {
        return Err(Error::Domain("the eigensolver needs a finite support".into()));
    }
    if num_eig == 0 || cells < 50 {
        return Err(Error::Parameter("need num_eig >= 1 and cells >= 50".into()));
    }
    if num_eig >= cells {
        return Err(Error::Parameter("num_eig must be smaller than the number of cells".into()));
    }
    let (grid, k, mm) = assemble(m, w, cells);
    let n = grid.len();
    if k.diag.iter().chain(&mm.diag).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entries in the finite-element matrices".into()));
    }

    // Eigenvalue j (0-based) is the smallest σ with at least j + 1 eigenvalues below it.
    let count = |sigma: f64| k.shifted(&mm, sigma).negative_count();
    let mut hi = 1.0;
    while count(hi) < num_eig + 1 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Numerical("could not bracket the requested eigenvalues".into()));
        }
    }
    let scale = hi;
    let mut lambdas = Vec::with_capacity(num_eig + 1);
    for j in 0..=num_eig {
        let (mut lo, mut up) = (-scale, hi);
        for _ in 0..200 {
            let mid = 0.5 * (lo + up);
            if count(mid) > j {
                up = mid;
            } else {
                lo = mid;
            }
            if up - lo <= 4.0 * f64::EPSILON * scale {
                break;
            }
        }
        lambdas.push(0.5 * (lo + up));
    }
    let zero_mode = lambdas[0];
    let lambda1 = lambdas[1];
    if !(lambda1 > 1e-10) {
        return Err(Error::Spectral(format!("spectral gap lambda_1 = {lambda1:e} is degenerate")));
    }
    if zero_mode.abs() >= 1e-8 * lambda1 {
        return Err(Error::Spectral(format!("zero mode {zero_mode:e} is not separated from lambda_1")));
    }

    let m_norm = |v: &[f64]| dot(v, &mm.mul(v)).sqrt();
    let ones = vec![1.0; n];
    let c0 = m_norm(&ones);
    let mut basis: Vec<Vec<f64>> = vec![ones.iter().map(|v| v / c0).collect()];
    let mut eigenvalues = Vec::with_capacity(num_eig);
    let mut residuals = Vec::with_capacity(num_eig);
    for (j, &lam) in lambdas.iter().enumerate().skip(1) {
        let shifted = k.shifted(&mm, lam);
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + ((i as f64 + 0.5) * (j as f64 + 0.37)).sin()).collect();
        let mut rq = lam;
        let mut res = f64::INFINITY;
        for _ in 0..8 {
            v = shifted.solve(&mm.mul(&v));
            for b in &basis {
                let c = dot(b, &mm.mul(&v));
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
            let nv = m_norm(&v);
            v.iter_mut().for_each(|x| *x /= nv);
            let kv = k.mul(&v);
            let mv = mm.mul(&v);
            rq = dot(&v, &kv);
            let r: Vec<f64> = kv.iter().zip(&mv).map(|(a, b)| a - rq * b).collect();
            res = norm2(&r) / norm2(&mv);
            if res <= 1e-3 * RESIDUAL_TOL * rq.max(1.0) {
                break;
            }
        }
        if !(res <= RESIDUAL_TOL * rq.max(1.0)) {
            return Err(Error::Numerical(format!("inverse iteration for mode {j} stalled at residual {res:e}")));
        }
        let last = v[n - 1];
        if last < 0.0 || (last == 0.0 && v.iter().rev().find(|x| **x != 0.0).is_some_and(|x| *x < 0.0)) {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        eigenvalues.push(rq);
        residuals.push(res);
        basis.push(v);
    }
    basis.remove(0);

    let derivatives = basis
        .iter()
        .map(|v| {
            let slopes: Vec<f64> = (0..n - 1).map(|i| (v[i + 1] - v[i]) / (grid[i + 1] - grid[i])).collect();
            (0..n)
                .map(|i| match i {
                    0 => slopes[0],
                    _ if i == n - 1 => slopes[n - 2],
                    _ => 0.5 * (slopes[i - 1] + slopes[i]),
                })
                .collect()
        })
        .collect();

    Ok(SpectralBasis { grid, eigenvalues, eigenfunctions: basis, derivatives, zero_mode, residuals, weight: w.clone() })
}

/// `C_P(μ, w) = 1/λ_1`.
pub fn poincare_constant(m: &ProbabilityMeasure, w: &WeightCurve, cells: usize) -> Result<f64> {
    Ok(solve_eigenbasis(m, w, 1, cells)?.poincare_constant())
}

/// Right-hand side of the first-order system for `g'' + s g' + λ g = 0`.
fn shoot<S: Fn(f64) -> f64>(score: &S, lambda: f64, xs: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let f = |x: f64, g: f64, p: f64| (p, -score(x) * p - lambda * g);
    let mut g = vec![-1.0; xs.len()];
    let mut p = vec![0.0; xs.len()];
    for k in 0..xs.len() - 1 {
        let h = xs[k + 1] - xs[k];
        let (x, g0, p0) = (xs[k], g[k], p[k]);
        let (a1, b1) = f(x, g0, p0);
        let (a2, b2) = f(x + 0.5 * h, g0 + 0.5 * h * a1, p0 + 0.5 * h * b1);
        let (a3, b3) = f(x + 0.5 * h, g0 + 0.5 * h * a2, p0 + 0.5 * h * b2);
        let (a4, b4) = f(x + h, g0 + h * a3, p0 + h * b3);
        g[k + 1] = g0 + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
        p[k + 1] = p0 + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
    }
    (g, p)
}

/// Cubic Hermite interpolation on a uniform table.
struct HermiteTable {
    x: Vec<f64>,
    y: Vec<f64>,
    dy: Vec<f64>,
}

impl HermiteTable {
    fn eval(&self, x: f64) -> (f64, f64) {
        let k = crate::weights::segment(&self.x, x);
        let h = self.x[k + 1] - self.x[k];
        let t = ((x - self.x[k]) / h).clamp(0.0, 1.0);
        let (y0, y1, m0, m1) = (self.y[k], self.y[k + 1], self.dy[k] * h, self.dy[k + 1] * h);
        let (t2, t3) = (t * t, t * t * t);
        let v =
            (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * m1;
        let d = (6.0 * t2 - 6.0 * t) * y0
            + (3.0 * t2 - 4.0 * t + 1.0) * m0
            + (-6.0 * t2 + 6.0 * t) * y1
            + (3.0 * t2 - 2.0 * t) * m1;
        (v, d / h)
    }
}

/// First non-trivial Neumann eigenfunction of the unweighted operator for
/// `N((a+b)/2, σ²)` restricted to `[a, b]`, where `σ` puts 95% of the
/// untruncated mass on the interval. The FEM eigenvalue seeds a shooting
/// refinement so that `g'` and `g''` are accurate up to the endpoints.
pub(crate) fn gaussian_reference_function(s: Interval, nodes: usize) -> Result<SaturatingFunction> {
    let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.975);
    let sigma = s.length() / (2.0 * z);
    let mid = s.midpoint();
    let reference = ProbabilityMeasure::new(Family::Normal { mean: mid, sd: sigma }, Some((s.a, s.b)))?;
    let unit = WeightCurve::unit(&reference);
    let lam0 = solve_eigenbasis(&reference, &unit, 1, nodes.max(51) - 1)?.eigenvalue(1)?;

    let score = move |x: f64| -(x - mid) / (sigma * sigma);
    let xs = s.grid(4 * (nodes.max(2) - 1) + 1);
    let end_slope = |lam: f64| *shoot(&score, lam, &xs).1.last().expect("non-empty grid");
    let (mut l0, mut l1) = (lam0, lam0 * (1.0 + 1e-4));
    let (mut f0, mut f1) = (end_slope(l0), end_slope(l1));
    for _ in 0..60 {
        if f1 == f0 || (l1 - l0).abs() <= 1e-15 * l1.abs() {
            break;
        }
        let l2 = l1 - f1 * (l1 - l0) / (f1 - f0);
        l0 = l1;
        f0 = f1;
        l1 = l2;
        f1 = end_slope(l1);
    }
    let lambda = l1;
    let (g, mut dg) = shoot(&score, lambda, &xs);
    let slope_scale = dg.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let last = dg.len() - 1;
    if dg[last].abs() > 1e-7 * slope_scale || (lambda - lam0).abs() > 1e-2 * lam0 {
        return Err(Error::Numerical("shooting refinement of the Gaussian reference failed".into()));
    }
    dg[last] = 0.0;
    if dg[1..last].iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Numerical("Gaussian reference eigenfunction is not monotone".into()));
    }
    let table = Arc::new(HermiteTable { x: xs, y: g, dy: dg });
    let (t1, t2, t3) = (table.clone(), table.clone(), table);
    Ok(SaturatingFunction::new(
        Arc::new(move |x| t1.eval(x).0),
        Arc::new(move |x| t2.eval(x).1),
        Some(Arc::new(move |x| {
            let (v, d) = t3.eval(x);
            -score(x) * d - lambda * v
        })),
    ))
}

/// Tabulated intertwining functional.
#[derive(Debug, Clone, Serialize)]
pub struct IntertwiningProfile {
    pub x: Vec<f64>,
    pub values: Vec<f64>,
    pub infimum: f64,
    pub argmin: f64,
    pub parameter: String,
}

impl IntertwiningProfile {
    fn from_points(points: Vec<(f64, f64)>, parameter: String) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Numerical("intertwining profile has no finite values".into()));
        }
        let (mut infimum, mut argmin) = (f64::INFINITY, f64::NAN);
        for &(x, v) in &points {
            if v < infimum {
                infimum = v;
                argmin = x;
            }
        }
        let (x, values) = points.into_iter().unzip();
        Ok(IntertwiningProfile { x, values, infimum, argmin, parameter })
    }
}

/// Grid for intertwining profiles: uniform on finite supports, `tan`-mapped on
/// infinite ones so that the far tails are represented.
pub fn profile_grid(m: &ProbabilityMeasure, points: usize) -> Vec<f64> {
    let s = m.support();
    let scale = match *m.family() {
        Family::Normal { sd, .. } => sd,
        Family::Gumbel { scale, .. } => scale,
        Family::Exponential { rate } => 1.0 / rate,
        Family::Pareto { z, .. } => z,
        _ => 1.0,
    };
    let half_pi = std::f64::consts::FRAC_PI_2;
    match (s.a.is_finite(), s.b.is_finite()) {
        (true, true) => s.grid(points),
        (true, false) => (0..points).map(|k| s.a + scale * (half_pi * k as f64 / points as f64).tan()).collect(),
        (false, true) => (0..points).rev().map(|k| s.b - scale * (half_pi * k as f64 / points as f64).tan()).collect(),
        (false, false) => {
            let c = match *m.family() {
                Family::Normal { mean, .. } => mean,
                Family::Gumbel { loc, .. } => loc,
                _ => 0.0,
            };
            (0..points)
                .map(|k| c + scale * (std::f64::consts::PI * ((k as f64 + 0.5) / points as f64 - 0.5)).tan())
                .collect()
        }
    }
}

fn check_weight_domain(m: &ProbabilityMeasure, w: &WeightCurve) -> Result<()> {
    if !m.support().is_finite() && w.is_tabulated() {
        return Err(Error::Domain("tabulated weights need a finite support".into()));
    }
    Ok(())
}

/// `(w s², w s')` at every grid point where both are finite.
fn eps_ingredients(m: &ProbabilityMeasure, w: &WeightCurve, grid: &[f64]) -> Vec<(f64, f64, f64)> {
    grid.iter()
        .filter_map(|&x| {
            let s = m.log_density_derivative(x).ok()?;
            let ds = m.log_density_second_derivative(x).ok()?;
            let wx = w.eval(x);
            let (a, b) = (wx * s * s, wx * ds);
            (a.is_finite() && b.is_finite()).then_some((x, a, b))
        })
        .collect()
}

/// `M_{w,ε} = (1 − ε) w (ε ((log ρ)')² − (log ρ)'')` on a grid.
pub fn intertwining_profile_eps(
    m: &ProbabilityMeasure,
    w: &WeightCurve,
    eps: f64,
    grid: &[f64],
) -> Result<IntertwiningProfile> {
    check_weight_domain(m, w)?;
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::Parameter(format!("epsilon = {eps} outside [0, 1]")));
    }
    let pts = eps_ingredients(m, w, grid).into_iter().map(|(x, a, b)| (x, (1.0 - eps) * (eps * a - b))).collect();
    IntertwiningProfile::from_points(pts, format!("epsilon={eps}"))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct IntertwiningBound {
    pub bound: f64,
    pub epsilon: f64,
    pub infimum: f64,
}

/// `C_P ≤ 1 / sup_ε inf_x M_{w,ε}` over an `eps_points` grid plus golden-section refinement.
pub fn intertwining_bound(m: &ProbabilityMeasure, w: &WeightCurve, eps_points: usize) -> Result<IntertwiningBound> {
    check_weight_domain(m, w)?;
    if eps_points < 3 {
        return Err(Error::Parameter("the epsilon grid needs at least 3 points".into()));
    }
    let ing = eps_ingredients(m, w, &profile_grid(m, PROFILE_POINTS));
    if ing.is_empty() {
        return Err(Error::Numerical("intertwining profile has no finite values".into()));
    }
    let inf_at = |e: f64| ing.iter().map(|&(_, a, b)| (1.0 - e) * (e * a - b)).fold(f64::INFINITY, f64::min);
    let eps: Vec<f64> = (0..eps_points).map(|k| k as f64 / (eps_points - 1) as f64).collect();
    let vals: Vec<f64> = eps.iter().map(|&e| inf_at(e)).collect();
    let (kbest, &vbest) = vals.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("non-empty grid");
    if !(vbest > 0.0) {
        return Err(Error::BoundUnavailable("no epsilon gives a positive infimum".into()));
    }
    let (mut lo, mut hi) = (eps[kbest.saturating_sub(1)], eps[(kbest + 1).min(eps_points - 1)]);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (hi - r * (hi - lo), lo + r * (hi - lo));
    let (mut fc, mut fd) = (inf_at(c), inf_at(d));
    while hi - lo > 1e-12 {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - r * (hi - lo);
            fc = inf_at(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + r * (hi - lo);
            fd = inf_at(d);
        }
    }
    let (mut best_e, mut best_v) = (eps[kbest], vbest);
    for (e, v) in [(c, fc), (d, fd)] {
        if v > best_v {
            best_e = e;
            best_v = v;
        }
    }
    Ok(IntertwiningBound { bound: 1.0 / best_v, epsilon: best_e, infimum: best_v })
}

/// Derivatives of the test function `h` in `M_{w,h}`.
#[derive(Clone)]
pub struct TestFunction {
    pub d1: RealFn,
    pub d2: RealFn,
    pub d3: Option<RealFn>,
    pub label: String,
}

impl TestFunction {
    /// `h'(x) = x^(−δ)` with exact higher derivatives.
    pub fn power(delta: f64) -> Self {
        TestFunction {
            d1: Arc::new(move |x: f64| x.powf(-delta)),
            d2: Arc::new(move |x: f64| -delta * x.powf(-delta - 1.0)),
            d3: Some(Arc::new(move |x: f64| delta * (delta + 1.0) * x.powf(-delta - 2.0))),
            label: format!("h'(x)=x^(-{delta})"),
        }
    }

    /// `h'(x) = (1 − x²)^δ`.
    pub fn one_minus_square(delta: f64) -> Self {
        TestFunction {
            d1: Arc::new(move |x: f64| (1.0 - x * x).powf(delta)),
            d2: Arc::new(move |x: f64| -2.0 * delta * x * (1.0 - x * x).powf(delta - 1.0)),
            d3: Some(Arc::new(move |x: f64| {
                let q = 1.0 - x * x;
                -2.0 * delta * q.powf(delta - 1.0) + 4.0 * delta * (delta - 1.0) * x * x * q.powf(delta - 2.0)
            })),
            label: format!("h'(x)=(1-x^2)^{delta}"),
        }
    }

    /// `h(x) = x`.
    pub fn linear() -> Self {
        TestFunction {
            d1: Arc::new(|_| 1.0),
            d2: Arc::new(|_| 0.0),
            d3: Some(Arc::new(|_| 0.0)),
            label: "h(x)=x".into(),
        }
    }
}

/// `M_{w,h} = (−L_w h)'/h'` with `−L_w h = −(w h'' + (w' + w (log ρ)') h')`.
pub fn intertwining_profile_h(
    m: &ProbabilityMeasure,
    w: &WeightCurve,
    h: &TestFunction,
    grid: &[f64],
) -> Result<IntertwiningProfile> {
    check_weight_domain(m, w)?;
    let mut sign = 0.0;
    let mut pts = Vec::with_capacity(grid.len());
    for &x in grid {
        let Ok(s) = m.log_density_derivative(x) else { continue };
        let Ok(ds) = m.log_density_second_derivative(x) else { continue };
        let Ok((wv, w1, w2)) = w.derivatives(x, m) else { continue };
        let (h1, h2) = ((h.d1)(x), (h.d2)(x));
        let h3 = match &h.d3 {
            Some(f) => f(x),
            None => {
                let step = 1e-5 * x.abs().max(1.0);
                ((h.d2)(x + step) - (h.d2)(x - step)) / (2.0 * step)
            }
        };
        if !h1.is_finite() || h1 == 0.0 {
            continue;
        }
        if sign == 0.0 {
            sign = h1.signum();
        } else if h1.signum() != sign {
            return Err(Error::Contract(format!("h' changes sign near x = {x}")));
        }
        let dphi = w1 * h2 + wv * h3 + (w2 + w1 * s + wv * ds) * h1 + (w1 + wv * s) * h2;
        let v = -dphi / h1;
        if v.is_finite() {
            pts.push((x, v));
        }
    }
    IntertwiningProfile::from_points(pts, h.label.clone())
}

/// `Var_μ(f) / ∫ w f'² dμ` by quadrature; `f` is centered internally.
pub fn rayleigh_quotient<F, D>(m: &ProbabilityMeasure, w: &WeightCurve, f: F, df: D) -> Result<f64>
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let mean = m.quadrature(&f)?;
    let num = m.quadrature(|x| (f(x) - mean).powi(2))?;
    let den = m.quadrature(|x| w.eval(x) * df(x).powi(2))?;
    if !(den > 0.0) {
        return Err(Error::Degenerate("zero energy in the Rayleigh quotient".into()));
    }
    Ok(num / den)
}

/// Test-function families with closed-form moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TestFamily {
    /// `f(x) = e^(ηx)`
    Exponential { eta: f64 },
    /// `f(x) = x^η`
    Power { eta: f64 },
    /// `f(x) = (1 + e^(−x))^η`
    LogisticPower { eta: f64 },
    /// `f(x) = (1 − x²)^η`
    BetaPower { eta: f64 },
}

impl TestFamily {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            TestFamily::Exponential { eta } => (eta * x).exp(),
            TestFamily::Power { eta } => x.powf(eta),
            TestFamily::LogisticPower { eta } => (1.0 + (-x).exp()).powf(eta),
            TestFamily::BetaPower { eta } => (1.0 - x * x).powf(eta),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            TestFamily::Exponential { eta } => eta * (eta * x).exp(),
            TestFamily::Power { eta } => eta * x.powf(eta - 1.0),
            TestFamily::LogisticPower { eta } => {
                let e = (-x).exp();
                -eta * e * (1.0 + e).powf(eta - 1.0)
            }
            TestFamily::BetaPower { eta } => -2.0 * eta * x * (1.0 - x * x).powf(eta - 1.0),
        }
    }
}

/// `(E f, E f², E w f'²)` for registered (measure, weight, family) triples.
fn closed_moments(m: &ProbabilityMeasure, w: &WeightCurve, fam: TestFamily) -> Option<Result<(f64, f64, f64)>> {
    if m.truncation().is_some() {
        return None;
    }
    let WeightRepr::Closed(cw) = *w.repr() else { return None };
    let diverge = || Err(Error::Model(format!("{fam:?} is not square integrable here")));
    let out = match (*m.family(), fam, cw) {
        (Family::Exponential { rate }, TestFamily::Exponential { eta }, ClosedWeight::Constant { value }) => {
            if 2.0 * eta >= rate {
                return Some(diverge());
            }
            let mgf = |t: f64| rate / (rate - t);
            (mgf(eta), mgf(2.0 * eta), value * eta * eta * mgf(2.0 * eta))
        }
        (Family::Pareto { z, alpha }, TestFamily::Power { eta }, ClosedWeight::Monomial { coef, power }) => {
            let t = power + 2.0 * eta - 2.0;
            if 2.0 * eta >= alpha || t >= alpha {
                return Some(diverge());
            }
            let mom = |t: f64| alpha * z.powf(t) / (alpha - t);
            (mom(eta), mom(2.0 * eta), coef * eta * eta * mom(t))
        }
        (Family::Power { alpha }, TestFamily::Power { eta }, cw) => {
            let mom = |t: f64| alpha / (alpha + t);
            let energy = match cw {
                ClosedWeight::Monomial { coef, power } => {
                    let t = power + 2.0 * eta - 2.0;
                    if t <= -alpha {
                        return Some(diverge());
                    }
                    coef * eta * eta * mom(t)
                }
                ClosedWeight::AsymmetricPower { alpha: aw } => eta * eta * (mom(2.0 * eta) - mom(2.0 * eta + 0.5 * aw)),
                ClosedWeight::Constant { value } => {
                    if 2.0 * eta - 2.0 <= -alpha {
                        return Some(diverge());
                    }
                    value * eta * eta * mom(2.0 * eta - 2.0)
                }
                _ => return None,
            };
            if 2.0 * eta <= -alpha {
                return Some(diverge());
            }
            (mom(eta), mom(2.0 * eta), energy)
        }
        (
            Family::GeneralizedLogistic { alpha },
            TestFamily::LogisticPower { eta },
            ClosedWeight::Constant { value },
        ) => {
            let a = alpha - 2.0 * eta;
            if a <= 0.0 {
                return Some(diverge());
            }
            let mom = |t: f64| alpha / (alpha - t);
            // E[e^{−2X}(1 + e^{−X})^{2η−2}] = α B(α − 2η, 3).
            let energy = value * eta * eta * alpha * 2.0 / (a * (a + 1.0) * (a + 2.0));
            (mom(eta), mom(2.0 * eta), energy)
        }
        (Family::SymmetricBeta { beta }, TestFamily::BetaPower { eta }, ClosedWeight::OneMinusSquare { power }) => {
            let q = 2.0 * eta - 2.0 + power;
            if beta + 2.0 * eta <= 0.0 || beta + q <= 0.0 {
                return Some(diverge());
            }
            let zb = beta_norm(beta);
            let mom = |t: f64| beta_norm(beta + t) / zb;
            (mom(eta), mom(2.0 * eta), 4.0 * eta * eta * (mom(q) - mom(q + 1.0)))
        }
        _ => return None,
    };
    Some(Ok(out))
}

/// Rayleigh quotient of a [`TestFamily`] member, from closed-form moments when
/// registered and by quadrature otherwise.
pub fn rayleigh_quotient_family(m: &ProbabilityMeasure, w: &WeightCurve, fam: TestFamily) -> Result<f64> {
    match closed_moments(m, w, fam) {
        Some(r) => {
            let (m1, m2, energy) = r?;
            if !(energy > 0.0) {
                return Err(Error::Degenerate("zero energy in the Rayleigh quotient".into()));
            }
            Ok((m2 - m1 * m1) / energy)
        }
        None => rayleigh_quotient(m, w, |x| fam.value(x), |x| fam.derivative(x)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{weight_lin_closed_form, Endpoint};
    use std::f64::consts::PI;

    fn uniform() -> ProbabilityMeasure {
        ProbabilityMeasure::uniform(0.0, 1.0).unwrap()
    }

    #[test]
    fn cosine_spectrum() {
        let m = uniform();
        let b = solve_eigenbasis(&m, &WeightCurve::unit(&m), 2, 500).unwrap();
        for n in 1..=2 {
            let exact = (n as f64 * PI).powi(2);
            assert!((b.eigenvalue(n).unwrap() - exact).abs() < 1e-3 * exact);
            for &x in b.grid() {
                // Oriented so that e_n(1) > 0.
                let e = (-1f64).powi(n as i32) * 2f64.sqrt() * (n as f64 * PI * x).cos();
                assert!((b.eval(n, x) - e).abs() < 1e-2);
            }
        }
        assert!(b.residuals().iter().all(|r| *r <= 1e-8));
    }

    #[test]
    fn gram_and_centering() {
        let m = ProbabilityMeasure::new(Family::Normal { mean: 0.0, sd: 1.0 }, Some((0.0, 3.0))).unwrap();
        let b = solve_eigenbasis(&m, &WeightCurve::unit(&m), 3, 500).unwrap();
        for i in 1..=3 {
            assert!(m.quadrature(|x| b.eval(i, x)).unwrap().abs() < 1e-6);
            for j in 1..=3 {
                let g = m.quadrature(|x| b.eval(i, x) * b.eval(j, x)).unwrap();
                assert!((g - if i == j { 1.0 } else { 0.0 }).abs() < 1e-6, "{i}{j}: {g}");
            }
        }
    }

    #[test]
    fn lin_weights_give_unit_constant() {
        for m in [
            uniform(),
            ProbabilityMeasure::new(Family::Exponential { rate: 1.0 }, Some((0.0, 2.0))).unwrap(),
            ProbabilityMeasure::new(Family::Normal { mean: 0.0, sd: 1.0 }, Some((-3.0, 3.0))).unwrap(),
        ] {
            let w = weight_lin_closed_form(&m).unwrap();
            let cp = poincare_constant(&m, &w, 500).unwrap();
            assert!((cp - 1.0).abs() < 1e-3, "{:?}: {cp}", m.family());
        }
    }

    #[test]
    fn beta_with_quadratic_weight() {
        let m = ProbabilityMeasure::new(Family::SymmetricBeta { beta: 2.0 }, None).unwrap();
        let w = WeightCurve::closed(m.support(), ClosedWeight::OneMinusSquare { power: 1.0 });
        let b = solve_eigenbasis(&m, &w, 1, 500).unwrap();
        assert!((b.eigenvalue(1).unwrap() - 4.0).abs() < 4e-3);
        // e_1 is linear: x / sqrt(E[x²]) with E[x²] = 1/5.
        for &x in &[-0.9, -0.3, 0.2, 0.8] {
            assert!((b.eval(1, x) - x * 5f64.sqrt()).abs() < 1e-3);
        }
    }

    #[test]
    fn mesh_convergence_rate() {
        let m = ProbabilityMeasure::new(Family::Normal { mean: 0.0, sd: 1.0 }, Some((0.0, 3.0))).unwrap();
        let w = WeightCurve::unit(&m);
        let l = |n| solve_eigenbasis(&m, &w, 1, n).unwrap().eigenvalue(1).unwrap();
        let (a, b, c) = (l(250), l(500), l(1000));
        assert!((a - b).abs() >= 3.0 * (b - c).abs());
    }

    #[test]
    fn gaussian_reference_satisfies_neumann_conditions() {
        let s = Interval { a: 0.0, b: 1.0 };
        let g = gaussian_reference_function(s, 500).unwrap();
        assert_eq!(g.derivative(0.0), 0.0);
        assert_eq!(g.derivative(1.0), 0.0);
        assert!(g.derivative(0.5) > 0.0);
        let sigma: f64 = 1.0 / (2.0 * 1.959_964);
        assert!((sigma - 0.255_106_7).abs() < 1e-7);
        let m = uniform();
        let g = g.centered(&m).unwrap();
        assert!(crate::weights::boundary_value(&g, &m, Endpoint::Left).unwrap() > 0.0);
    }

    #[test]
    fn eps_profiles() {
        let e = ProbabilityMeasure::new(Family::Exponential { rate: 2.0 }, None).unwrap();
        let w = WeightCurve::unit(&e);
        let grid = profile_grid(&e, 101);
        let p = intertwining_profile_eps(&e, &w, 0.5, &grid).unwrap();
        assert!(p.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let p1 = intertwining_profile_eps(&e, &w, 1.0, &grid).unwrap();
        assert!(p1.values.iter().all(|v| *v == 0.0));

        let par = ProbabilityMeasure::new(Family::Pareto { z: 1.0, alpha: 2.0 }, None).unwrap();
        let w2 = WeightCurve::closed(par.support(), ClosedWeight::Monomial { coef: 1.0, power: 2.0 });
        let p = intertwining_profile_eps(&par, &w2, 0.5, &profile_grid(&par, 101)).unwrap();
        assert!(p.values.iter().all(|v| (v - 0.75).abs() < 1e-9));
    }

    #[test]
    fn eps_bounds() {
        let e = ProbabilityMeasure::new(Family::Exponential { rate: 2.0 }, None).unwrap();
        let b = intertwining_bound(&e, &WeightCurve::unit(&e), EPS_GRID).unwrap();
        assert!((b.bound - 1.0).abs() < 1e-9 && (b.epsilon - 0.5).abs() < 1e-6);
        let l = ProbabilityMeasure::new(Family::GeneralizedLogistic { alpha: 1.0 }, None).unwrap();
        let b = intertwining_bound(&l, &WeightCurve::unit(&l), EPS_GRID).unwrap();
        assert!((b.bound - 4.0).abs() < 1e-6);
        let u = uniform();
        assert!(matches!(intertwining_bound(&u, &WeightCurve::unit(&u), EPS_GRID), Err(Error::BoundUnavailable(_))));
    }

    #[test]
    fn h_profiles() {
        let p = ProbabilityMeasure::new(Family::Power { alpha: 2.0 }, None).unwrap();
        let w = WeightCurve::closed(p.support(), ClosedWeight::AsymmetricPower { alpha: 2.0 });
        let prof = intertwining_profile_h(&p, &w, &TestFunction::power(2.0), &profile_grid(&p, 201)).unwrap();
        assert!(prof.values.iter().all(|v| (v - 1.0).abs() < 1e-9), "{:?}", &prof.values[..3]);

        let b = ProbabilityMeasure::new(Family::SymmetricBeta { beta: 2.0 }, None).unwrap();
        let w = WeightCurve::closed(b.support(), ClosedWeight::OneMinusSquare { power: 2.0 });
        let prof =
            intertwining_profile_h(&b, &w, &TestFunction::one_minus_square(-2.0), &profile_grid(&b, 201)).unwrap();
        for (x, v) in prof.x.iter().zip(&prof.values) {
            assert!((v - 2.0 * (1.0 + x * x)).abs() < 1e-8);
        }
        assert!((prof.infimum - 2.0).abs() < 1e-12);

        let n = ProbabilityMeasure::new(Family::Normal { mean: 0.0, sd: 1.0 }, None).unwrap();
        let prof = intertwining_profile_h(&n, &WeightCurve::unit(&n), &TestFunction::linear(), &profile_grid(&n, 101))
            .unwrap();
        assert!(prof.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn rayleigh_examples() {
        let e = ProbabilityMeasure::new(Family::Exponential { rate: 1.0 }, None).unwrap();
        let q = rayleigh_quotient_family(&e, &WeightCurve::unit(&e), TestFamily::Exponential { eta: 0.25 }).unwrap();
        let (eta, g) = (0.25, 1.0);
        let closed = ((eta - g) * (eta - g) - g * (g - 2.0 * eta)) / (eta * eta * (eta - g) * (eta - g));
        assert!((q - closed).abs() < 1e-12 && (q - 1.777_78).abs() < 1e-5);
        let q = rayleigh_quotient_family(&e, &WeightCurve::unit(&e), TestFamily::Exponential { eta: 0.499 }).unwrap();
        assert!(q < 4.0 && q > 0.98 * 4.0);

        let p = ProbabilityMeasure::new(Family::Pareto { z: 1.0, alpha: 3.0 }, None).unwrap();
        let w = WeightCurve::closed(p.support(), ClosedWeight::Monomial { coef: 1.0, power: 2.0 });
        let q = rayleigh_quotient_family(&p, &w, TestFamily::Power { eta: 1.0 }).unwrap();
        assert!((q - 0.25).abs() < 1e-12);
    }

    #[test]
    fn rayleigh_numeric_matches_closed_form_on_finite_support() {
        let b = ProbabilityMeasure::new(Family::SymmetricBeta { beta: 2.0 }, None).unwrap();
        let w = WeightCurve::closed(b.support(), ClosedWeight::OneMinusSquare { power: 2.0 });
        let fam = TestFamily::BetaPower { eta: 0.7 };
        let closed = rayleigh_quotient_family(&b, &w, fam).unwrap();
        let numeric = rayleigh_quotient(&b, &w, |x| fam.value(x), |x| fam.derivative(x)).unwrap();
        assert!((closed - numeric).abs() < 1e-9 * closed);
    }
}
