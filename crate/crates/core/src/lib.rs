//! Inverse-free Newton-type iteration for nonlinear systems, with semilocal
//! convergence certificates.
//!
//! The iteration inverts the Jacobian once at the starting point and then
//! maintains an approximate inverse by the multiplicative update
//! `U_{k+1} = (2I - U_k P'(x_{k+1})) U_k`, stepping with
//! `x_{k+1} = x_k - U_k P(x_k)`. It converges with order two while
//! performing a single matrix inversion.
//!
//! Modules:
//! * [`linalg`]: dense vectors/matrices, LU inversion, cofactors, norms.
//! * [`expr`] and [`problem`]: equation parsing, AD Jacobians, the `L` bound.
//! * [`solver`]: the inverse-free iteration and a Newton baseline.
//! * [`certificates`]: existence/convergence certificates and bound sequences.
//! * [`bench`]: order estimation, method comparison, certify-then-restart.
//! * [`cli`]: the `invfree` command-line front end.

pub mod bench;
pub mod certificates;
pub mod cli;
pub mod expr;
pub mod linalg;
pub mod problem;
pub mod report;
pub mod solver;

pub use linalg::{DenseMatrix, DenseVector, MatrixNorm, VectorNorm};
pub use problem::{builtin_problem, builtin_problems, parse_problem, ProblemSpec};
