//! The inverse-free iteration and a classical Newton baseline.
//!
//! Inverse-free step, starting from `U_0 = P'(x_0)^{-1}`:
//!
//! ```text
//! x_{k+1} = x_k - U_k P(x_k)
//! U_{k+1} = (2I - U_k P'(x_{k+1})) U_k
//! ```
//!
//! The update satisfies `I - J U_{k+1} = (I - J U_k)^2` with
//! `J = P'(x_{k+1})`, which is where the quadratic rate comes from.

use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, DenseMatrix, DenseVector, LinalgError, LuFactorization, VectorNorm};
use crate::problem::{ProblemError, ProblemSpec};
use crate::report::sig17;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("Newton step {step}: Jacobian is singular ({source})")]
    SingularNewtonStep { step: usize, source: LinalgError },
    #[error("step {step}: iterate or inverse approximation became non-finite")]
    NonFiniteIterate { step: usize },
    #[error("invalid solve options: {0}")]
    InvalidOptions(String),
    #[error("iteration state carries no inverse approximation")]
    MissingInverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    InverseFree,
    Newton,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::InverseFree => "inverse_free",
            Method::Newton => "newton",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kogan" | "inverse_free" | "inverse-free" => Ok(Method::InverseFree),
            "newton" => Ok(Method::Newton),
            other => Err(format!(
                "unknown method '{other}' (expected kogan or newton)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Converged,
    MaxIterations,
    Diverged,
    SingularAtStart,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub norm: VectorNorm,
    pub divergence_factor: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tolerance: 1e-13,
            max_iterations: 50,
            norm: VectorNorm::Max,
            divergence_factor: 10.0,
        }
    }
}

impl SolveOptions {
    /// Defaults overridden by whatever the problem document sets.
    pub fn for_problem(p: &ProblemSpec) -> Self {
        let defaults = SolveOptions::default();
        let o = p.options();
        SolveOptions {
            tolerance: o.tolerance.unwrap_or(defaults.tolerance),
            max_iterations: o.max_iterations.unwrap_or(defaults.max_iterations),
            norm: o.norm.unwrap_or(defaults.norm),
            ..defaults
        }
    }

    fn validate(&self) -> Result<(), SolveError> {
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(SolveError::InvalidOptions(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(SolveError::InvalidOptions(
                "max_iterations must be >= 1".into(),
            ));
        }
        if !(self.divergence_factor > 0.0) {
            return Err(SolveError::InvalidOptions(
                "divergence_factor must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Consecutive steps above the divergence threshold before giving up.
const DIVERGENCE_STRIKES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct IterationState {
    pub k: usize,
    pub x: DenseVector,
    /// Current inverse approximation (inverse-free method only).
    pub u: Option<DenseMatrix>,
    pub residual: DenseVector,
    /// `||x_k - x_{k-1}||`; zero for the initial state.
    pub step_norm: f64,
    pub residual_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CostCounters {
    pub inversions: usize,
    pub linear_solves: usize,
    pub jacobian_evaluations: usize,
    pub residual_evaluations: usize,
    pub matrix_multiplications: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveTrace {
    pub method: Method,
    pub norm: VectorNorm,
    pub states: Vec<IterationState>,
    pub counters: CostCounters,
    pub verdict: Verdict,
}

impl SolveTrace {
    /// Number of steps taken (states beyond the initial one).
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn last(&self) -> &IterationState {
        self.states.last().expect("trace has an initial state")
    }

    /// `e_k = ||x_k - x_star||` in the trace's norm, trailing exact zeros
    /// dropped. Meaningful for converged traces.
    pub fn error_sequence(&self, x_star: &DenseVector) -> Vec<f64> {
        self.error_sequence_in(x_star, self.norm)
    }

    pub fn error_sequence_in(&self, x_star: &DenseVector, norm: VectorNorm) -> Vec<f64> {
        let mut errors: Vec<f64> = self
            .states
            .iter()
            .map(|s| s.x.sub(x_star).norm(norm))
            .collect();
        while errors.last() == Some(&0.0) {
            errors.pop();
        }
        errors
    }

    /// Writes `k,x_1..x_n,res_1..res_n,residual_norm,step_norm`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let n = self.states[0].x.dim();
        let mut header = vec!["k".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.extend((1..=n).map(|i| format!("res_{i}")));
        header.push("residual_norm".into());
        header.push("step_norm".into());
        writeln!(out, "{}", header.join(","))?;
        for s in &self.states {
            let mut row = vec![s.k.to_string()];
            row.extend(s.x.iter().map(|&v| sig17(v)));
            row.extend(s.residual.iter().map(|&v| sig17(v)));
            row.push(sig17(s.residual_norm));
            row.push(sig17(s.step_norm));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// `e_k = ||x_k - x_star||` for a trace; see [`SolveTrace::error_sequence`].
pub fn empirical_error_sequence(t: &SolveTrace, x_star: &DenseVector) -> Vec<f64> {
    t.error_sequence(x_star)
}

fn initial_state(p: &ProblemSpec, norm: VectorNorm) -> Result<IterationState, SolveError> {
    let x = p.initial_point().clone();
    let residual = p.evaluate_residual(&x)?;
    Ok(IterationState {
        k: 0,
        residual_norm: residual.norm(norm),
        x,
        u: None,
        residual,
        step_norm: 0.0,
    })
}

/// State at `x_0` carrying `U_0 = P'(x_0)^{-1}` (one inversion).
pub fn inverse_free_start(p: &ProblemSpec, norm: VectorNorm) -> Result<IterationState, SolveError> {
    let mut state = initial_state(p, norm)?;
    let jacobian = p.evaluate_jacobian(&state.x)?;
    let inverse = linalg::invert(&jacobian).map_err(ProblemError::from)?;
    state.u = Some(inverse.inverse);
    Ok(state)
}

/// One inverse-free step: new point first, then the inverse update with the
/// Jacobian at the new point. No matrix is inverted.
pub fn step_inverse_free(
    p: &ProblemSpec,
    s: &IterationState,
    norm: VectorNorm,
) -> Result<IterationState, SolveError> {
    let u = s.u.as_ref().ok_or(SolveError::MissingInverse)?;
    let step = s.k + 1;
    let x = s.x.sub(&u.matvec(&s.residual));
    if !x.is_finite() {
        return Err(SolveError::NonFiniteIterate { step });
    }
    let residual = p.evaluate_residual(&x)?;
    let jacobian = p.evaluate_jacobian(&x)?;
    let next_u = u.matmul(&jacobian).shifted_negation(2.0).matmul(u);
    if !next_u.is_finite() {
        return Err(SolveError::NonFiniteIterate { step });
    }
    Ok(IterationState {
        k: step,
        step_norm: x.sub(&s.x).norm(norm),
        residual_norm: residual.norm(norm),
        x,
        u: Some(next_u),
        residual,
    })
}

fn step_newton(
    p: &ProblemSpec,
    s: &IterationState,
    norm: VectorNorm,
) -> Result<IterationState, SolveError> {
    let step = s.k + 1;
    let jacobian = p.evaluate_jacobian(&s.x)?;
    let lu = LuFactorization::new(&jacobian)
        .map_err(|source| SolveError::SingularNewtonStep { step, source })?;
    let x = s.x.sub(&lu.solve(&s.residual));
    if !x.is_finite() {
        return Err(SolveError::NonFiniteIterate { step });
    }
    let residual = p.evaluate_residual(&x)?;
    Ok(IterationState {
        k: step,
        step_norm: x.sub(&s.x).norm(norm),
        residual_norm: residual.norm(norm),
        x,
        u: None,
        residual,
    })
}

/// Iterates until the residual norm or the relative step drops below the
/// tolerance, the iteration cap is hit, or the residual stays above
/// `divergence_factor` times its initial value for three straight steps.
pub fn solve(p: &ProblemSpec, method: Method, o: &SolveOptions) -> Result<SolveTrace, SolveError> {
    o.validate()?;
    let mut counters = CostCounters::default();
    let trace =
        |states: Vec<IterationState>, counters: CostCounters, verdict: Verdict| SolveTrace {
            method,
            norm: o.norm,
            states,
            counters,
            verdict,
        };

    let first = match method {
        Method::InverseFree => {
            counters.residual_evaluations += 1;
            counters.jacobian_evaluations += 1;
            match inverse_free_start(p, o.norm) {
                Ok(state) => {
                    counters.inversions += 1;
                    state
                }
                Err(SolveError::Problem(ProblemError::Linalg(LinalgError::SingularMatrix {
                    ..
                }))) => {
                    let state = initial_state(p, o.norm)?;
                    return Ok(trace(vec![state], counters, Verdict::SingularAtStart));
                }
                Err(e) => return Err(e),
            }
        }
        Method::Newton => {
            counters.residual_evaluations += 1;
            initial_state(p, o.norm)?
        }
    };

    let initial_residual = first.residual_norm;
    let mut states = vec![first];
    let mut strikes = 0;
    let verdict = loop {
        let current = states.last().expect("non-empty");
        if current.residual_norm <= o.tolerance {
            break Verdict::Converged;
        }
        if current.k >= o.max_iterations {
            break Verdict::MaxIterations;
        }
        let next = match method {
            Method::InverseFree => {
                let next = step_inverse_free(p, current, o.norm)?;
                counters.matrix_multiplications += 2;
                counters.jacobian_evaluations += 1;
                next
            }
            Method::Newton => match step_newton(p, current, o.norm) {
                Ok(next) => {
                    counters.linear_solves += 1;
                    counters.jacobian_evaluations += 1;
                    next
                }
                Err(SolveError::SingularNewtonStep { step: 1, .. }) => {
                    counters.jacobian_evaluations += 1;
                    break Verdict::SingularAtStart;
                }
                Err(e) => return Err(e),
            },
        };
        counters.residual_evaluations += 1;
        let small_step = next.step_norm <= o.tolerance * (1.0 + next.x.norm(o.norm));
        strikes = if next.residual_norm > o.divergence_factor * initial_residual {
            strikes + 1
        } else {
            0
        };
        states.push(next);
        if small_step {
            break Verdict::Converged;
        }
        if strikes >= DIVERGENCE_STRIKES {
            break Verdict::Diverged;
        }
    };
    Ok(trace(states, counters, verdict))
}
