//! Built-in test models: two polynomial toy models and the flood model.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::estimate::{ComponentMethod, Direction};
use crate::gsa::Model;
use crate::measures::{Family, ProbabilityMeasure};

pub const FLOOD_INPUT_NAMES: [&str; 8] = ["Q", "Ks", "Zv", "Zm", "Hd", "Cb", "L", "B"];
/// Position of the dyke height `H_d` among the flood inputs.
pub const FLOOD_HD: usize = 4;
/// Piecewise-affine knots for the non-monotone `H_d` main effect of the cost.
pub const FLOOD_HD_KNOTS: [f64; 3] = [7.0, 8.0, 9.0];

/// `a` coefficients of the product-form toy model.
pub const TOY2_A: [f64; 5] = [1.0, 2.0, 4.5, 90.0, 90.0];

/// `Var(X⁴) = 1/9 − 1/25` for `X ~ U(0, 1)`.
pub const TOY2_R: f64 = 16.0 / 225.0;

/// Flood inputs in the order `Q, Ks, Zv, Zm, Hd, Cb, L, B`.
pub fn flood_inputs() -> Vec<ProbabilityMeasure> {
    let tri = |lower, mode, upper| ProbabilityMeasure::new(Family::Triangular { lower, mode, upper }, None);
    vec![
        ProbabilityMeasure::new(Family::Gumbel { loc: 1013.0, scale: 558.0 }, Some((500.0, 3000.0))),
        ProbabilityMeasure::new(Family::Normal { mean: 30.0, sd: 8.0 }, Some((15.0, 75.0))),
        tri(49.0, 50.0, 51.0),
        tri(54.0, 55.0, 56.0),
        ProbabilityMeasure::uniform(7.0, 9.0),
        tri(55.0, 55.5, 56.0),
        tri(4990.0, 5000.0, 5010.0),
        tri(295.0, 300.0, 305.0),
    ]
    .into_iter()
    .map(|m| m.expect("flood inputs are valid"))
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinKind {
    Toy1,
    Toy2,
    FloodS,
    FloodC,
}

impl FromStr for BuiltinKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy1" => Ok(BuiltinKind::Toy1),
            "toy2" => Ok(BuiltinKind::Toy2),
            "flood_s" => Ok(BuiltinKind::FloodS),
            "flood_c" => Ok(BuiltinKind::FloodC),
            other => Err(Error::Config(format!("unknown model '{other}' (toy1, toy2, flood_s, flood_c)"))),
        }
    }
}

impl BuiltinKind {
    pub fn name(&self) -> &'static str {
        match self {
            BuiltinKind::Toy1 => "toy1",
            BuiltinKind::Toy2 => "toy2",
            BuiltinKind::FloodS => "flood_s",
            BuiltinKind::FloodC => "flood_c",
        }
    }
}

/// A registered model with its input measures.
#[derive(Debug, Clone)]
pub struct BuiltinModel {
    kind: BuiltinKind,
    inputs: Vec<ProbabilityMeasure>,
}

impl BuiltinModel {
    pub fn new(kind: BuiltinKind) -> Self {
        let inputs = match kind {
            BuiltinKind::Toy1 | BuiltinKind::Toy2 => {
                (0..5).map(|_| ProbabilityMeasure::uniform(0.0, 1.0).expect("unit interval")).collect()
            }
            BuiltinKind::FloodS | BuiltinKind::FloodC => flood_inputs(),
        };
        BuiltinModel { kind, inputs }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Ok(Self::new(name.parse()?))
    }

    pub fn kind(&self) -> BuiltinKind {
        self.kind
    }

    /// Closed-form total Sobol indices when known.
    pub fn sobol_oracle(&self) -> Option<Vec<f64>> {
        match self.kind {
            BuiltinKind::Toy1 => Some(toy1_sobol_oracle()),
            BuiltinKind::Toy2 => Some(toy2_sobol_oracle(&TOY2_A, TOY2_R)),
            _ => None,
        }
    }
}

impl Model for BuiltinModel {
    fn name(&self) -> &str {
        self.kind.name()
    }

    fn inputs(&self) -> &[ProbabilityMeasure] {
        &self.inputs
    }

    fn input_names(&self) -> Vec<String> {
        match self.kind {
            BuiltinKind::FloodS | BuiltinKind::FloodC => FLOOD_INPUT_NAMES.iter().map(|s| s.to_string()).collect(),
            _ => (1..=self.inputs.len()).map(|i| format!("X{i}")).collect(),
        }
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        match self.kind {
            BuiltinKind::Toy1 => Ok(toy1_eval(x)),
            BuiltinKind::Toy2 => Ok(toy2_eval(x, &TOY2_A)),
            BuiltinKind::FloodS => flood_s(x),
            BuiltinKind::FloodC => flood_c(x),
        }
    }

    fn gradient(&self, x: &[f64]) -> Option<Result<Vec<f64>>> {
        match self.kind {
            BuiltinKind::Toy1 => Some(Ok(toy1_grad(x))),
            BuiltinKind::Toy2 => Some(Ok(toy2_grad(x, &TOY2_A))),
            BuiltinKind::FloodS => Some(flood_s_grad(x)),
            BuiltinKind::FloodC => None,
        }
    }

    fn main_effect_spec(&self, i: usize) -> (ComponentMethod, Direction) {
        if self.kind == BuiltinKind::FloodC && i == FLOOD_HD {
            (ComponentMethod::Affine(FLOOD_HD_KNOTS.to_vec()), Direction::Increasing)
        } else {
            (ComponentMethod::Monotone, Direction::Auto)
        }
    }

    fn near_kink(&self, x: &[f64], steps: &[f64]) -> bool {
        if self.kind != BuiltinKind::FloodC {
            return false;
        }
        if (x[FLOOD_HD] - 8.0).abs() <= steps[FLOOD_HD] {
            return true;
        }
        let Ok(s) = flood_s(x) else { return false };
        let reach: f64 = match flood_s_grad(x) {
            Ok(g) => g.iter().zip(steps).map(|(d, h)| (d * h).abs()).sum(),
            Err(_) => return false,
        };
        s.abs() <= reach
    }
}

/// `X1 + X2² + X3³ + X4⁴ + X5⁵`.
pub fn toy1_eval(x: &[f64]) -> f64 {
    x.iter().enumerate().map(|(i, v)| v.powi(i as i32 + 1)).sum()
}

pub fn toy1_grad(x: &[f64]) -> Vec<f64> {
    x.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v.powi(i as i32)).collect()
}

/// `Var(X^i) = 1/(2i+1) − 1/(i+1)²` for `X ~ U(0, 1)`.
fn power_variance(i: usize) -> f64 {
    let i = i as f64;
    1.0 / (2.0 * i + 1.0) - 1.0 / ((i + 1.0) * (i + 1.0))
}

pub fn toy1_variance() -> f64 {
    (1..=5).map(power_variance).sum()
}

pub fn toy1_sobol_oracle() -> Vec<f64> {
    let total = toy1_variance();
    (1..=5).map(|i| power_variance(i) / total).collect()
}

/// `Π (1 + (X_i⁴ − 1/5)/(1 + a_i))`.
pub fn toy2_eval(x: &[f64], a: &[f64]) -> f64 {
    x.iter().zip(a).map(|(v, ai)| 1.0 + (v.powi(4) - 0.2) / (1.0 + ai)).product()
}

pub fn toy2_grad(x: &[f64], a: &[f64]) -> Vec<f64> {
    let factors: Vec<f64> = x.iter().zip(a).map(|(v, ai)| 1.0 + (v.powi(4) - 0.2) / (1.0 + ai)).collect();
    (0..x.len())
        .map(|i| {
            let others: f64 = factors.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, f)| f).product();
            4.0 * x[i].powi(3) / (1.0 + a[i]) * others
        })
        .collect()
}

pub fn toy2_variance(a: &[f64], r: f64) -> f64 {
    a.iter().map(|ai| 1.0 + r / ((1.0 + ai) * (1.0 + ai))).product::<f64>() - 1.0
}

pub fn toy2_sobol_oracle(a: &[f64], r: f64) -> Vec<f64> {
    let var = toy2_variance(a, r);
    let terms: Vec<f64> = a.iter().map(|ai| r / ((1.0 + ai) * (1.0 + ai))).collect();
    (0..a.len())
        .map(|i| {
            let others: f64 = terms.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, t)| 1.0 + t).product();
            terms[i] * others / var
        })
        .collect()
}

fn flood_core(x: &[f64]) -> Result<f64> {
    let [q, ks, zv, zm, _, _, l, b] = x[..8] else { unreachable!() };
    if zm <= zv {
        return Err(Error::Domain(format!("Zm = {zm} must exceed Zv = {zv}")));
    }
    let base = q / (b * ks) * (l / (zm - zv)).sqrt();
    if !(base > 0.0) {
        return Err(Error::Domain(format!("flow term {base} must be positive")));
    }
    Ok(base.powf(0.6))
}

fn check_flood_dim(x: &[f64]) -> Result<()> {
    if x.len() != 8 {
        return Err(Error::Config(format!("the flood model has 8 inputs, got {}", x.len())));
    }
    Ok(())
}

/// Maximal annual overflow.
pub fn flood_s(x: &[f64]) -> Result<f64> {
    check_flood_dim(x)?;
    Ok(x[2] - x[4] - x[5] + flood_core(x)?)
}

pub fn flood_s_grad(x: &[f64]) -> Result<Vec<f64>> {
    check_flood_dim(x)?;
    let t = flood_core(x)?;
    let [q, ks, zv, zm, _, _, l, b] = x[..8] else { unreachable!() };
    let dz = 0.3 * t / (zm - zv);
    Ok(vec![0.6 * t / q, -0.6 * t / ks, 1.0 + dz, -dz, -1.0, -1.0, 0.3 * t / l, -0.6 * t / b])
}

/// Annual dyke maintenance cost.
pub fn flood_c(x: &[f64]) -> Result<f64> {
    let s = flood_s(x)?;
    let hd = x[4];
    let base = if s > 0.0 { 1.0 } else { 0.2 + 0.8 * (-(-1000.0 / s.powi(4)).exp_m1()) };
    Ok(base + hd.max(8.0) / 20.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CENTRAL: [f64; 8] = [1013.0, 30.0, 50.0, 55.0, 8.0, 55.5, 5000.0, 300.0];

    #[test]
    fn toy_values() {
        assert_eq!(toy1_eval(&[0.0; 5]), 0.0);
        assert_eq!(toy1_eval(&[1.0; 5]), 5.0);
        assert!((toy1_variance() - 0.386_822).abs() < 1e-6);
        let s = toy1_sobol_oracle();
        for (v, e) in s.iter().zip([0.21543, 0.22979, 0.20774, 0.18383, 0.16321]) {
            assert!((v - e).abs() < 5e-6, "{v} vs {e}");
        }
        let x0 = 0.2f64.powf(0.25);
        assert!((toy2_eval(&[x0; 5], &TOY2_A) - 1.0).abs() < 1e-14);
        let s2 = toy2_sobol_oracle(&TOY2_A, TOY2_R);
        assert_eq!(s2[3], s2[4]);
        assert!(s2[4] < s2[2] && s2[2] < s2[1] && s2[1] < s2[0]);
    }

    #[test]
    fn toy2_variance_matches_direct_sum() {
        // Expand the product over subsets: Var = Σ_{∅≠S} Π_{j∈S} c_j.
        let c: Vec<f64> = TOY2_A.iter().map(|a| TOY2_R / ((1.0 + a) * (1.0 + a))).collect();
        let mut sum = 0.0;
        for mask in 1u32..32 {
            sum += (0..5).filter(|j| mask & (1 << j) != 0).map(|j| c[j]).product::<f64>();
        }
        assert!((sum - toy2_variance(&TOY2_A, TOY2_R)).abs() < 1e-15);
    }

    #[test]
    fn flood_central_values() {
        let s = flood_s(&CENTRAL).unwrap();
        assert!((s + 11.357_997).abs() < 1e-6, "{s}");
        let c = flood_c(&CENTRAL).unwrap();
        assert!((c - 0.64666).abs() < 1e-4, "{c}");
        let mut wet = CENTRAL;
        wet[5] = 40.0;
        wet[4] = 8.6;
        assert!(flood_s(&wet).unwrap() > 0.0);
        assert!((flood_c(&wet).unwrap() - (1.0 + 8.6 / 20.0)).abs() < 1e-15);
        let mut bad = CENTRAL;
        bad[3] = 49.0;
        assert!(matches!(flood_s(&bad), Err(Error::Domain(_))));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let xs = [[0.3, 0.7, 0.1, 0.9, 0.5], [0.95, 0.05, 0.5, 0.25, 0.75]];
        for x in xs {
            for (grad, f) in [
                (toy1_grad(&x), Box::new(toy1_eval) as Box<dyn Fn(&[f64]) -> f64>),
                (toy2_grad(&x, &TOY2_A), Box::new(|x: &[f64]| toy2_eval(x, &TOY2_A))),
            ] {
                for i in 0..5 {
                    let h = 1e-6;
                    let (mut p, mut m) = (x, x);
                    p[i] += h;
                    m[i] -= h;
                    let fd = (f(&p) - f(&m)) / (2.0 * h);
                    assert!((fd - grad[i]).abs() <= 1e-6 * grad[i].abs().max(1e-3));
                }
            }
        }
        let g = flood_s_grad(&CENTRAL).unwrap();
        for i in 0..8 {
            let h = 1e-6 * CENTRAL[i].abs();
            let (mut p, mut m) = (CENTRAL, CENTRAL);
            p[i] += h;
            m[i] -= h;
            let fd = (flood_s(&p).unwrap() - flood_s(&m).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1e-6), "{i}: {fd} vs {}", g[i]);
        }
    }
}
