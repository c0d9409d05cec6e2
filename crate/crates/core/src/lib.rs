//! Weighted Poincaré inequalities for one-dimensional probability measures
//! and their use in global sensitivity analysis.
//!
//! The crate builds weights `w` for which `Var_μ(f) ≤ C_P ∫ w f'² dμ`,
//! computes the constants `C_P` and eigenbases of the operator
//! `L_w f = (w f' ρ)'/ρ`, and turns them into upper bounds and chaos-expansion
//! approximations of total Sobol indices.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod estimate;
pub mod gsa;
pub mod measures;
pub mod models;
pub mod rng;
pub mod spectral;
pub mod weights;

pub use error::{Error, ErrorKind, Result};
pub use measures::{Family, Interval, MeasureSpec, ProbabilityMeasure};
pub use spectral::{solve_eigenbasis, SpectralBasis};
pub use weights::{ClosedWeight, SaturatingFunction, WeightCurve};
