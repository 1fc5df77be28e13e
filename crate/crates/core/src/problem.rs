//! Nonlinear systems `P(x) = 0` defined by expression text over a box domain.
//!
//! Jacobians come from forward-mode dual numbers (one pass per variable).
//! The second-derivative bound `L` is estimated by sampling a uniform grid
//! over the box and differencing the exact Jacobian.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Dual, Expr, ExprError, Scalar};
use crate::linalg::{DenseMatrix, DenseVector, LinalgError, VectorNorm};

/// Largest dimension accepted by the grid estimator.
pub const MAX_GRID_DIMENSION: usize = 6;
/// Largest number of grid points the estimator will visit.
pub const MAX_GRID_EVALUATIONS: u64 = 10_000_000;
/// Grid resolution used when none is given.
pub const DEFAULT_GRID_POINTS: usize = 33;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Document {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("parse error in equation {equation}, column {column}: {message}")]
    Expression {
        /// One-based equation number.
        equation: usize,
        column: usize,
        message: String,
    },
    #[error("dimension mismatch in {field}: expected {expected}, found {found}")]
    DimensionMismatch {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("initial point component {index} = {value} lies outside [{lower}, {upper}]")]
    PointOutsideDomain {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("domain is degenerate on axis {index}: lower {lower} must be < upper {upper}")]
    DegenerateDomain {
        index: usize,
        lower: f64,
        upper: f64,
    },
    #[error("non-finite value in component {component}")]
    NonFiniteValue { component: usize },
    #[error("grid of {points} points exceeds the limit of {limit}")]
    GridTooLarge { points: u64, limit: u64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown builtin problem '{0}'")]
    UnknownBuiltin(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

impl ProblemError {
    /// True for errors raised while reading a document (as opposed to
    /// numeric failures).
    pub fn is_parse_error(&self) -> bool {
        matches!(
            self,
            ProblemError::Document { .. }
                | ProblemError::Expression { .. }
                | ProblemError::DimensionMismatch { .. }
                | ProblemError::PointOutsideDomain { .. }
                | ProblemError::DegenerateDomain { .. }
                | ProblemError::InvalidArgument(_)
        )
    }
}

/// Axis-aligned box `lower <= x <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    pub lower: DenseVector,
    pub upper: DenseVector,
}

impl BoxDomain {
    pub fn new(lower: DenseVector, upper: DenseVector) -> Result<Self, ProblemError> {
        if lower.dim() != upper.dim() {
            return Err(ProblemError::DimensionMismatch {
                field: "domain.upper",
                expected: lower.dim(),
                found: upper.dim(),
            });
        }
        for i in 0..lower.dim() {
            if !(lower[i] < upper[i]) {
                return Err(ProblemError::DegenerateDomain {
                    index: i,
                    lower: lower[i],
                    upper: upper[i],
                });
            }
        }
        Ok(BoxDomain { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.dim()
    }

    pub fn contains(&self, x: &DenseVector) -> bool {
        self.first_violation(x).is_none()
    }

    fn first_violation(&self, x: &DenseVector) -> Option<usize> {
        (0..self.dim()).find(|&i| !(self.lower[i] <= x[i] && x[i] <= self.upper[i]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProblemOptions {
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    pub norm: Option<VectorNorm>,
}

/// A validated system of `n` equations in `n` unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    name: String,
    variables: Vec<String>,
    equation_text: Vec<String>,
    equations: Vec<Expr>,
    initial_point: DenseVector,
    domain: BoxDomain,
    options: ProblemOptions,
}

/// On-disk JSON form of a problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemDocument {
    pub name: String,
    pub variables: Vec<String>,
    pub equations: Vec<String>,
    pub initial_point: Vec<f64>,
    pub domain: DomainDocument,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<OptionsDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainDocument {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionsDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<VectorNorm>,
}

/// Parses and validates a JSON problem document.
pub fn parse_problem(text: &str) -> Result<ProblemSpec, ProblemError> {
    let doc: ProblemDocument = serde_json::from_str(text).map_err(|e| ProblemError::Document {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    ProblemSpec::from_document(doc)
}

fn vector_field(
    field: &'static str,
    values: Vec<f64>,
    n: usize,
) -> Result<DenseVector, ProblemError> {
    if values.len() != n {
        return Err(ProblemError::DimensionMismatch {
            field,
            expected: n,
            found: values.len(),
        });
    }
    DenseVector::new(values).map_err(|e| ProblemError::InvalidArgument(format!("{field}: {e}")))
}

impl ProblemSpec {
    pub fn from_document(doc: ProblemDocument) -> Result<Self, ProblemError> {
        let n = doc.variables.len();
        if n == 0 {
            return Err(ProblemError::InvalidArgument(
                "at least one variable is required".into(),
            ));
        }
        for (i, name) in doc.variables.iter().enumerate() {
            let valid = name
                .chars()
                .next()
                .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
                && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
            if !valid {
                return Err(ProblemError::InvalidArgument(format!(
                    "variable name '{name}' is not an identifier"
                )));
            }
            if doc.variables[..i].contains(name) {
                return Err(ProblemError::InvalidArgument(format!(
                    "duplicate variable '{name}'"
                )));
            }
        }
        if doc.equations.len() != n {
            return Err(ProblemError::DimensionMismatch {
                field: "equations",
                expected: n,
                found: doc.equations.len(),
            });
        }
        let equations = doc
            .equations
            .iter()
            .enumerate()
            .map(|(i, text)| {
                Expr::parse(text, &doc.variables).map_err(|ExprError { column, message }| {
                    ProblemError::Expression {
                        equation: i + 1,
                        column,
                        message,
                    }
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let initial_point = vector_field("initial_point", doc.initial_point, n)?;
        let lower = vector_field("domain.lower", doc.domain.lower, n)?;
        let upper = vector_field("domain.upper", doc.domain.upper, n)?;
        let domain = BoxDomain::new(lower, upper)?;
        let options = doc.options.unwrap_or_default();
        if let Some(tol) = options.tolerance {
            if !(tol > 0.0 && tol.is_finite()) {
                return Err(ProblemError::InvalidArgument(format!(
                    "options.tolerance must be positive, got {tol}"
                )));
            }
        }
        if options.max_iterations == Some(0) {
            return Err(ProblemError::InvalidArgument(
                "options.max_iterations must be at least 1".into(),
            ));
        }

        let spec = ProblemSpec {
            name: doc.name,
            variables: doc.variables,
            equation_text: doc.equations,
            equations,
            initial_point,
            domain,
            options: ProblemOptions {
                tolerance: options.tolerance,
                max_iterations: options.max_iterations,
                norm: options.norm,
            },
        };
        spec.check_initial_point(&spec.initial_point)?;
        spec.evaluate_residual(&spec.initial_point)?;
        Ok(spec)
    }

    pub fn to_document(&self) -> ProblemDocument {
        let options = (self.options != ProblemOptions::default()).then(|| OptionsDocument {
            tolerance: self.options.tolerance,
            max_iterations: self.options.max_iterations,
            norm: self.options.norm,
        });
        ProblemDocument {
            name: self.name.clone(),
            variables: self.variables.clone(),
            equations: self.equation_text.clone(),
            initial_point: self.initial_point.as_slice().to_vec(),
            domain: DomainDocument {
                lower: self.domain.lower.as_slice().to_vec(),
                upper: self.domain.upper.as_slice().to_vec(),
            },
            options,
        }
    }

    fn check_initial_point(&self, x: &DenseVector) -> Result<(), ProblemError> {
        if x.dim() != self.dim() {
            return Err(ProblemError::DimensionMismatch {
                field: "initial_point",
                expected: self.dim(),
                found: x.dim(),
            });
        }
        if let Some(index) = self.domain.first_violation(x) {
            return Err(ProblemError::PointOutsideDomain {
                index,
                value: x[index],
                lower: self.domain.lower[index],
                upper: self.domain.upper[index],
            });
        }
        Ok(())
    }

    /// The same system restarted from `x`, which must lie in the domain.
    pub fn with_initial_point(&self, x: DenseVector) -> Result<ProblemSpec, ProblemError> {
        self.check_initial_point(&x)?;
        let mut spec = self.clone();
        spec.initial_point = x;
        Ok(spec)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.variables.len()
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn equations(&self) -> &[Expr] {
        &self.equations
    }

    pub fn equation_text(&self) -> &[String] {
        &self.equation_text
    }

    pub fn initial_point(&self) -> &DenseVector {
        &self.initial_point
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn options(&self) -> &ProblemOptions {
        &self.options
    }

    fn check_dim(&self, x: &DenseVector) -> Result<(), ProblemError> {
        if x.dim() != self.dim() {
            return Err(ProblemError::DimensionMismatch {
                field: "point",
                expected: self.dim(),
                found: x.dim(),
            });
        }
        Ok(())
    }

    /// `P(x)`, component `i` being `f_i(x)`.
    pub fn evaluate_residual(&self, x: &DenseVector) -> Result<DenseVector, ProblemError> {
        self.check_dim(x)?;
        let values: Vec<f64> = self
            .equations
            .iter()
            .map(|f| f.eval::<f64>(x.as_slice()))
            .collect();
        if let Some(component) = values.iter().position(|v| !v.is_finite()) {
            return Err(ProblemError::NonFiniteValue { component });
        }
        Ok(DenseVector::from_vec_unchecked(values))
    }

    /// `P'(x)`, entry `(i, j)` being `df_i/dx_j`, by forward-mode AD.
    pub fn evaluate_jacobian(&self, x: &DenseVector) -> Result<DenseMatrix, ProblemError> {
        self.check_dim(x)?;
        let n = self.dim();
        let mut data = vec![0.0; n * n];
        let mut point: Vec<Dual> = x.iter().map(|&v| Dual::constant(v)).collect();
        for j in 0..n {
            point[j].derivative = 1.0;
            for (i, f) in self.equations.iter().enumerate() {
                let d = f.eval(&point);
                if !d.value.is_finite() || !d.derivative.is_finite() {
                    return Err(ProblemError::NonFiniteValue { component: i });
                }
                data[i * n + j] = d.derivative;
            }
            point[j].derivative = 0.0;
        }
        Ok(DenseMatrix::from_row_major_unchecked(n, data))
    }

    /// Largest `|d^2 f_i / dx_j dx_k|` over a uniform grid on the box
    /// (corners included). Second partials are central differences of the
    /// AD Jacobian with step `eps^(1/3) * max(1, |x_k|)`. This is an
    /// estimate, not an enclosure.
    pub fn estimate_second_derivative_bound(
        &self,
        grid_points_per_axis: usize,
    ) -> Result<SecondDerivativeBound, ProblemError> {
        if grid_points_per_axis < 2 {
            return Err(ProblemError::InvalidArgument(format!(
                "grid_points_per_axis must be at least 2, got {grid_points_per_axis}"
            )));
        }
        let n = self.dim();
        if n > MAX_GRID_DIMENSION {
            return Err(ProblemError::InvalidArgument(format!(
                "second-derivative grid supports n <= {MAX_GRID_DIMENSION}, got {n}"
            )));
        }
        let points = (grid_points_per_axis as u64)
            .checked_pow(n as u32)
            .filter(|&p| p <= MAX_GRID_EVALUATIONS)
            .ok_or(ProblemError::GridTooLarge {
                points: (grid_points_per_axis as f64).powi(n as i32) as u64,
                limit: MAX_GRID_EVALUATIONS,
            })?;

        let best = (0..points)
            .into_par_iter()
            .map(|flat| {
                let x = self.grid_point(flat, grid_points_per_axis);
                self.local_second_derivative_max(&x)
                    .map(|(value, index)| Candidate { value, flat, index })
            })
            .try_reduce_with(|a, b| Ok(Candidate::better(a, b)))
            .expect("grid is non-empty")?;

        Ok(SecondDerivativeBound {
            l: best.value,
            grid_points_per_axis,
            argmax: self.grid_point(best.flat, grid_points_per_axis),
            index: best.index,
        })
    }

    fn grid_point(&self, mut flat: u64, per_axis: usize) -> DenseVector {
        let last = (per_axis - 1) as f64;
        let coords = (0..self.dim())
            .map(|axis| {
                let step = (flat % per_axis as u64) as usize;
                flat /= per_axis as u64;
                let (lo, hi) = (self.domain.lower[axis], self.domain.upper[axis]);
                if step == per_axis - 1 {
                    hi
                } else {
                    lo + (hi - lo) * (step as f64 / last)
                }
            })
            .collect();
        DenseVector::from_vec_unchecked(coords)
    }

    fn local_second_derivative_max(
        &self,
        x: &DenseVector,
    ) -> Result<(f64, (usize, usize, usize)), ProblemError> {
        let n = self.dim();
        let cbrt_eps = f64::EPSILON.cbrt();
        let mut best = (0.0, (0, 0, 0));
        let mut shifted = x.clone();
        for k in 0..n {
            let h = cbrt_eps * x[k].abs().max(1.0);
            shifted[k] = x[k] + h;
            let forward = self.evaluate_jacobian(&shifted)?;
            shifted[k] = x[k] - h;
            let backward = self.evaluate_jacobian(&shifted)?;
            shifted[k] = x[k];
            let width = (x[k] + h) - (x[k] - h);
            for i in 0..n {
                for j in 0..n {
                    let value = ((forward[(i, j)] - backward[(i, j)]) / width).abs();
                    if value > best.0 {
                        best = (value, (i, j, k));
                    }
                }
            }
        }
        Ok(best)
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    value: f64,
    flat: u64,
    index: (usize, usize, usize),
}

impl Candidate {
    /// Commutative and associative: larger value wins, ties go to the
    /// lexicographically smallest location.
    fn better(a: Candidate, b: Candidate) -> Candidate {
        match a.value.total_cmp(&b.value) {
            std::cmp::Ordering::Greater => a,
            std::cmp::Ordering::Less => b,
            std::cmp::Ordering::Equal => {
                if (a.flat, a.index) <= (b.flat, b.index) {
                    a
                } else {
                    b
                }
            }
        }
    }
}

/// Grid estimate of `L = max |d^2 f_i / dx_j dx_k|` over the box.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondDerivativeBound {
    pub l: f64,
    pub grid_points_per_axis: usize,
    pub argmax: DenseVector,
    /// Zero-based `(i, j, k)` of the maximizing second partial.
    pub index: (usize, usize, usize),
}

struct Builtin {
    name: &'static str,
    variables: usize,
    equations: &'static [&'static str],
    initial_point: &'static [f64],
    lower: &'static [f64],
    upper: &'static [f64],
}

const BUILTINS: &[Builtin] = &[
    Builtin {
        name: "paper_example",
        variables: 2,
        equations: &["2*x1^3 - x2^2 - 1", "x1*x2^3 - x2 - 4"],
        initial_point: &[1.2, 1.7],
        lower: &[0.0, 0.0],
        upper: &[1.3, 1.8],
    },
    Builtin {
        name: "scalar_sqrt2",
        variables: 1,
        equations: &["x1^2 - 2"],
        initial_point: &[1.5],
        lower: &[1.0],
        upper: &[2.0],
    },
    // root (1, 2)
    Builtin {
        name: "linear_2x2",
        variables: 2,
        equations: &["3*x1 + x2 - 5", "x1 - 2*x2 + 3"],
        initial_point: &[0.5, 1.5],
        lower: &[-2.0, -2.0],
        upper: &[4.0, 4.0],
    },
    // root (1, 2, 3)
    Builtin {
        name: "mild_3x3",
        variables: 3,
        equations: &[
            "4*x1 + 0.1*x2^2 + x3 - 7.4",
            "x1 + 5*x2 - 0.1*x3^2 - 10.1",
            "0.2*x1*x2 + x2 + 6*x3 - 20.4",
        ],
        initial_point: &[1.1, 1.9, 3.1],
        lower: &[0.0, 1.0, 2.0],
        upper: &[2.0, 3.0, 4.0],
    },
    // root (1, 1)
    Builtin {
        name: "exp_log_2x2",
        variables: 2,
        equations: &["exp(x1 - 1) - x2", "x1^2 + log(x2 + 1) - 1 - log(2)"],
        initial_point: &[1.1, 0.9],
        lower: &[0.5, 0.5],
        upper: &[1.5, 1.5],
    },
];

/// Names of the built-in problems, in a fixed order.
pub fn builtin_names() -> Vec<&'static str> {
    BUILTINS.iter().map(|b| b.name).collect()
}

pub fn builtin_problems() -> Vec<ProblemSpec> {
    BUILTINS.iter().map(build_builtin).collect()
}

pub fn builtin_problem(name: &str) -> Result<ProblemSpec, ProblemError> {
    BUILTINS
        .iter()
        .find(|b| b.name == name)
        .map(build_builtin)
        .ok_or_else(|| ProblemError::UnknownBuiltin(name.to_string()))
}

fn build_builtin(b: &Builtin) -> ProblemSpec {
    ProblemSpec::from_document(ProblemDocument {
        name: b.name.to_string(),
        variables: (1..=b.variables).map(|i| format!("x{i}")).collect(),
        equations: b.equations.iter().map(|s| s.to_string()).collect(),
        initial_point: b.initial_point.to_vec(),
        domain: DomainDocument {
            lower: b.lower.to_vec(),
            upper: b.upper.to_vec(),
        },
        options: None,
    })
    .unwrap_or_else(|e| panic!("builtin '{}' is invalid: {e}", b.name))
}
