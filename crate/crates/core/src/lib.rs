//! Adaptive finite element solver for sparse optimal control of the Poisson
//! equation.
//!
//! The state and adjoint are discretized with continuous P1 elements; the
//! control is discretized piecewise constant ([`Scheme::PiecewiseConstant`]),
//! piecewise linear with a lumped inner product ([`Scheme::PiecewiseLinear`]),
//! or not at all ([`Scheme::Variational`]). Residual a posteriori estimators
//! drive a solve / estimate / mark / refine loop built on longest-edge
//! bisection.

pub mod afem;
pub mod assembly;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod linsolve;
pub mod mesh;
pub mod optimality;
pub mod problems;
pub mod quadrature;

pub use error::{Error, Result};
pub use mesh::{Domain, Mesh, Point};
pub use optimality::{ControlLaw, ProblemData, Scheme, Solution};
