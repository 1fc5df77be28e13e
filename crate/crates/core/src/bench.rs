//! Order estimation, method comparison and the certify-then-restart loop.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::certificates::{certify_at, Certificate, CertificateError, Theorem};
use crate::linalg::{DenseVector, VectorNorm};
use crate::problem::{
    builtin_problems, parse_problem, ProblemError, ProblemSpec, DEFAULT_GRID_POINTS,
};
use crate::report::{nums, Num};
use crate::solver::{
    inverse_free_start, solve, step_inverse_free, CostCounters, Method, SolveError, SolveOptions,
    SolveTrace, Verdict,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("order estimate needs {needed}: {reason}")]
    InsufficientSamples {
        needed: &'static str,
        reason: String,
    },
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Certificate(#[from] CertificateError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Document { path: PathBuf, source: ProblemError },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderEstimate {
    pub rho: f64,
    pub samples_used: usize,
    pub ratios: Vec<f64>,
}

/// Median of `log(e_{k+1}/e_k) / log(e_k/e_{k-1})` over consecutive triples
/// whose last error stays above `100 eps e_0`.
pub fn estimate_order(errors: &[f64]) -> Result<OrderEstimate, BenchError> {
    let insufficient = |reason: String| BenchError::InsufficientSamples {
        needed: "at least 4 strictly positive, strictly decreasing errors",
        reason,
    };
    if errors.len() < 4 {
        return Err(insufficient(format!("got {} errors", errors.len())));
    }
    if let Some(i) = errors.iter().position(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(insufficient(format!("error {i} is {}", errors[i])));
    }
    if let Some(i) = errors.windows(2).position(|w| w[1] >= w[0]) {
        return Err(insufficient(format!("errors increase at index {}", i + 1)));
    }
    let floor = 1e2 * f64::EPSILON * errors[0];
    let usable = errors.iter().take_while(|&&e| e > floor).count();
    let ratios: Vec<f64> = errors[..usable]
        .windows(3)
        .map(|w| (w[2] / w[1]).ln() / (w[1] / w[0]).ln())
        .collect();
    if ratios.is_empty() {
        return Err(insufficient(format!(
            "only {usable} errors lie above the noise floor {floor:e}"
        )));
    }
    let mut sorted = ratios.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let rho = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    Ok(OrderEstimate {
        rho,
        samples_used: usable,
        ratios,
    })
}

/// Order estimate for a converged trace, with its own last iterate as `x*`.
pub fn trace_order(trace: &SolveTrace) -> Result<OrderEstimate, BenchError> {
    let errors = trace.error_sequence(&trace.last().x);
    estimate_order(&errors)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodReport {
    pub method: Method,
    pub outcome: Result<MethodRun, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodRun {
    pub verdict: Verdict,
    pub steps: usize,
    pub counters: CostCounters,
    pub final_residual_norm: f64,
    pub root: DenseVector,
    pub order: Result<OrderEstimate, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub problem: String,
    pub inverse_free: MethodReport,
    pub newton: MethodReport,
}

fn run_method(p: &ProblemSpec, method: Method, o: &SolveOptions) -> MethodReport {
    let outcome = solve(p, method, o)
        .map(|trace| {
            let order = if trace.verdict == Verdict::Converged {
                trace_order(&trace).map_err(|e| e.to_string())
            } else {
                Err(format!("not converged ({:?})", trace.verdict))
            };
            MethodRun {
                verdict: trace.verdict,
                steps: trace.steps(),
                counters: trace.counters,
                final_residual_norm: trace.last().residual_norm,
                root: trace.last().x.clone(),
                order,
            }
        })
        .map_err(|e| e.to_string());
    MethodReport { method, outcome }
}

/// Runs both methods from the problem's initial point with the same options.
/// A failure in one method is recorded and does not stop the other.
pub fn compare(p: &ProblemSpec, o: &SolveOptions) -> ComparisonReport {
    let inverse_free = run_method(p, Method::InverseFree, o);
    if let Ok(run) = &inverse_free.outcome {
        if run.verdict == Verdict::Converged {
            assert_eq!(
                run.counters.inversions, 1,
                "inverse-free run inverted more than once"
            );
        }
    }
    ComparisonReport {
        problem: p.name().to_string(),
        inverse_free,
        newton: run_method(p, Method::Newton, o),
    }
}

impl ComparisonReport {
    /// Distance between the two roots in the max norm when both converged.
    pub fn root_gap(&self) -> Option<f64> {
        match (&self.inverse_free.outcome, &self.newton.outcome) {
            (Ok(a), Ok(b))
                if a.verdict == Verdict::Converged && b.verdict == Verdict::Converged =>
            {
                Some(a.root.sub(&b.root).norm(VectorNorm::Max))
            }
            _ => None,
        }
    }

    fn to_json_value(&self) -> ComparisonJson<'_> {
        ComparisonJson {
            problem: &self.problem,
            root_gap: self.root_gap().map(Num),
            methods: [&self.inverse_free, &self.newton]
                .into_iter()
                .map(|m| match &m.outcome {
                    Ok(run) => MethodJson {
                        method: m.method,
                        error: None,
                        verdict: Some(run.verdict),
                        steps: Some(run.steps),
                        inversions: Some(run.counters.inversions),
                        linear_solves: Some(run.counters.linear_solves),
                        matrix_multiplications: Some(run.counters.matrix_multiplications),
                        jacobian_evaluations: Some(run.counters.jacobian_evaluations),
                        residual_evaluations: Some(run.counters.residual_evaluations),
                        final_residual_norm: Some(Num(run.final_residual_norm)),
                        root: Some(nums(run.root.as_slice())),
                        order: run.order.as_ref().ok().map(|o| OrderJson {
                            rho: Num(o.rho),
                            samples_used: o.samples_used,
                            ratios: nums(&o.ratios),
                        }),
                        order_error: run.order.as_ref().err().cloned(),
                    },
                    Err(e) => MethodJson {
                        method: m.method,
                        error: Some(e.clone()),
                        ..MethodJson::empty(m.method)
                    },
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("report serializes")
    }
}

/// JSON array of reports.
pub fn reports_to_json(reports: &[ComparisonReport]) -> String {
    let values: Vec<_> = reports.iter().map(|r| r.to_json_value()).collect();
    serde_json::to_string_pretty(&values).expect("reports serialize")
}

#[derive(Serialize)]
struct OrderJson {
    rho: Num,
    samples_used: usize,
    ratios: Vec<Num>,
}

#[derive(Serialize)]
struct MethodJson {
    method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    verdict: Option<Verdict>,
    steps: Option<usize>,
    inversions: Option<usize>,
    linear_solves: Option<usize>,
    matrix_multiplications: Option<usize>,
    jacobian_evaluations: Option<usize>,
    residual_evaluations: Option<usize>,
    final_residual_norm: Option<Num>,
    root: Option<Vec<Num>>,
    order: Option<OrderJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    order_error: Option<String>,
}

impl MethodJson {
    fn empty(method: Method) -> Self {
        MethodJson {
            method,
            error: None,
            verdict: None,
            steps: None,
            inversions: None,
            linear_solves: None,
            matrix_multiplications: None,
            jacobian_evaluations: None,
            residual_evaluations: None,
            final_residual_norm: None,
            root: None,
            order: None,
            order_error: None,
        }
    }
}

#[derive(Serialize)]
struct ComparisonJson<'a> {
    problem: &'a str,
    root_gap: Option<Num>,
    methods: Vec<MethodJson>,
}

/// Problems for a batch: every `*.json` document in `dir`, sorted by file
/// name, or the builtin set when `dir` is the literal `builtin`. All
/// documents are parsed before anything is solved.
pub fn load_problem_set(dir: &Path) -> Result<Vec<ProblemSpec>, BenchError> {
    if dir == Path::new("builtin") && !dir.exists() {
        return Ok(builtin_problems());
    }
    let io_err = |source| BenchError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err)?
        .map(|entry| entry.map(|e| e.path()).map_err(io_err))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            let text = fs::read_to_string(&path).map_err(|source| BenchError::Io {
                path: path.clone(),
                source,
            })?;
            parse_problem(&text).map_err(|source| BenchError::Document { path, source })
        })
        .collect()
}

/// Compares every problem concurrently; results are sorted by problem name.
pub fn compare_batch(problems: &[ProblemSpec], o: Option<&SolveOptions>) -> Vec<ComparisonReport> {
    let mut reports: Vec<ComparisonReport> = problems
        .par_iter()
        .map(|p| {
            let options = o.copied().unwrap_or_else(|| SolveOptions::for_problem(p));
            compare(p, &options)
        })
        .collect();
    reports.sort_by(|a, b| a.problem.cmp(&b.problem));
    reports
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertifiedSolve {
    /// One certificate per attempted starting point, in order.
    pub certificates: Vec<Certificate>,
    /// Iterates used as starting points (`x_0, x_1, ...`).
    pub start_points: Vec<DenseVector>,
    /// Solve from the first passing point, or from the last attempted one.
    pub trace: SolveTrace,
}

impl CertifiedSolve {
    pub fn passed(&self) -> bool {
        self.certificates.last().is_some_and(|c| c.passed)
    }
}

/// Certifies at `x_0`; while the certificate fails and restarts remain,
/// advances one inverse-free step and certifies again at the new point
/// (with a fresh inverse there). Then solves with the inverse-free method
/// from the passing point, or from the last attempted point.
///
/// `l` is the second-derivative bound; `None` estimates it on the default
/// grid over the problem's box.
pub fn certify_then_solve(
    p: &ProblemSpec,
    theorem: Theorem,
    max_restarts: usize,
    l: Option<f64>,
    o: &SolveOptions,
) -> Result<CertifiedSolve, BenchError> {
    let norm = match theorem {
        Theorem::T2 => VectorNorm::Max,
        Theorem::T3 => VectorNorm::Euclidean,
        other => {
            return Err(BenchError::InvalidArgument(format!(
                "certify_then_solve supports Theorem 2 or 3, got {other}"
            )))
        }
    };
    let l = match l {
        Some(l) => l,
        None => p.estimate_second_derivative_bound(DEFAULT_GRID_POINTS)?.l,
    };
    let mut state = inverse_free_start(p, o.norm)?;
    let mut certificates = Vec::new();
    let mut start_points = Vec::new();
    loop {
        let cert = certify_at(p, theorem, &state.x, l, norm)?;
        let passed = cert.passed;
        certificates.push(cert);
        start_points.push(state.x.clone());
        if passed || certificates.len() > max_restarts {
            break;
        }
        state = step_inverse_free(p, &state, o.norm)?;
    }
    let start = start_points.last().expect("at least one attempt").clone();
    let from = if start == *p.initial_point() {
        p.clone()
    } else {
        p.with_initial_point(start)?
    };
    let trace = solve(&from, Method::InverseFree, o)?;
    Ok(CertifiedSolve {
        certificates,
        start_points,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::builtin_problem;

    #[test]
    fn geometric_sequence_is_linear() {
        let e: Vec<f64> = (0..12).map(|k| 2f64.powi(-k)).collect();
        let est = estimate_order(&e).unwrap();
        assert!((est.rho - 1.0).abs() < 1e-12);
        assert_eq!(est.samples_used, 12);
    }

    #[test]
    fn doubly_exponential_is_quadratic() {
        let e: Vec<f64> = (0..6).map(|k| 2f64.powf(-(2f64.powi(k)))).collect();
        let est = estimate_order(&e).unwrap();
        assert!((est.rho - 2.0).abs() < 1e-9, "{}", est.rho);
    }

    #[test]
    fn even_count_takes_middle_mean() {
        // ratios 1 and 3 from a hand-built sequence
        let e = [
            1.0,
            0.5,
            0.25,
            0.25f64.powi(3) / 0.25f64.powi(2) * 0.25 / 2.0,
        ];
        let est = estimate_order(&e).unwrap();
        assert_eq!(est.ratios.len(), 2);
        let mut sorted = est.ratios.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(est.rho, 0.5 * (sorted[0] + sorted[1]));
    }

    #[test]
    fn order_rejects_bad_input() {
        for bad in [
            vec![1.0, 0.5, 0.25],
            vec![1.0, 0.5, 0.5, 0.1],
            vec![1.0, 0.5, 0.0, 0.0],
            vec![1.0, -0.5, 0.25, 0.1],
            vec![1.0, 1e-17, 1e-18, 1e-19],
        ] {
            assert!(matches!(
                estimate_order(&bad),
                Err(BenchError::InsufficientSamples { .. })
            ));
        }
    }

    #[test]
    fn sqrt2_order() {
        let p = builtin_problem("scalar_sqrt2").unwrap();
        let o = SolveOptions {
            tolerance: 1e-14,
            ..SolveOptions::default()
        };
        let trace = solve(&p, Method::InverseFree, &o).unwrap();
        let errors =
            trace.error_sequence(&DenseVector::new(vec![std::f64::consts::SQRT_2]).unwrap());
        let est = estimate_order(&errors).unwrap();
        // High-precision run of the same iteration: the first two ratios are
        // 1.556940084431 and 1.904094008432, later ones (1.968, 1.988) sit
        // below the f64 noise floor and are discarded.
        assert_eq!(est.samples_used, 4);
        assert_eq!(est.ratios.len(), 2);
        assert!((est.ratios[0] - 1.556940084431).abs() < 1e-6, "{est:?}");
        assert!((est.ratios[1] - 1.904094008432).abs() < 1e-6, "{est:?}");
        assert!((est.rho - 0.5 * (1.556940084431 + 1.904094008432)).abs() < 1e-6);
        // the asymptotic ratio is the quadratic one
        assert!((1.9..=2.1).contains(est.ratios.last().unwrap()));
    }

    #[test]
    fn compare_paper_example() {
        let p = builtin_problem("paper_example").unwrap();
        let o = SolveOptions {
            tolerance: 1e-14,
            ..SolveOptions::default()
        };
        let r = compare(&p, &o);
        let a = r.inverse_free.outcome.as_ref().unwrap();
        let b = r.newton.outcome.as_ref().unwrap();
        assert_eq!(a.verdict, Verdict::Converged);
        assert_eq!(b.verdict, Verdict::Converged);
        assert_eq!(a.counters.inversions, 1);
        assert_eq!(b.counters.linear_solves, b.steps);
        assert!(r.root_gap().unwrap() < 1e-10);
        let table_row4 = [1.234274484114, 1.661526466796];
        for (x, t) in a.root.iter().zip(table_row4) {
            assert!((x - t).abs() < 1e-9);
        }
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["methods"][0]["inversions"], 1);
        assert_eq!(v["methods"][1]["method"], "newton");
    }

    #[test]
    fn compare_linear_newton_one_step() {
        let p = builtin_problem("linear_2x2").unwrap();
        let r = compare(&p, &SolveOptions::default());
        assert_eq!(r.newton.outcome.as_ref().unwrap().steps, 1);
    }

    #[test]
    fn compare_singular_start() {
        let p = parse_problem(
            r#"{"name":"sing","variables":["x1","x2"],"equations":["x1^2 - 1","x2^2 - 1"],
                "initial_point":[0, 0.5],"domain":{"lower":[-2,-2],"upper":[2,2]}}"#,
        )
        .unwrap();
        let r = compare(&p, &SolveOptions::default());
        assert_eq!(
            r.inverse_free.outcome.as_ref().unwrap().verdict,
            Verdict::SingularAtStart
        );
        assert_eq!(
            r.newton.outcome.as_ref().unwrap().verdict,
            Verdict::SingularAtStart
        );
        assert!(r.root_gap().is_none());
    }

    #[test]
    fn restart_with_theorem2() {
        let p = builtin_problem("paper_example").unwrap();
        let out =
            certify_then_solve(&p, Theorem::T2, 2, Some(15.6), &SolveOptions::default()).unwrap();
        assert!(!out.certificates[0].passed);
        assert!(out.certificates.len() >= 2);
        // residual at x1 is about (7.32e-3, 2.28e-3)
        let eta1 = out.certificates[1].eta;
        assert!((eta1 - 7.32e-3).abs() < 1e-4, "{eta1}");
        assert_eq!(out.trace.verdict, Verdict::Converged);
    }

    #[test]
    fn restart_with_theorem3_passes_at_start() {
        let p = builtin_problem("paper_example").unwrap();
        let out =
            certify_then_solve(&p, Theorem::T3, 0, Some(15.6), &SolveOptions::default()).unwrap();
        assert_eq!(out.certificates.len(), 1);
        assert!(out.passed());
        assert_eq!(out.start_points[0], *p.initial_point());
    }

    #[test]
    fn restart_radius_shrinks() {
        let p = builtin_problem("paper_example").unwrap();
        let c0 = certify_at(
            &p,
            Theorem::T3,
            p.initial_point(),
            15.6,
            VectorNorm::Euclidean,
        )
        .unwrap();
        let s1 = step_inverse_free(
            &p,
            &inverse_free_start(&p, VectorNorm::Max).unwrap(),
            VectorNorm::Max,
        )
        .unwrap();
        let c1 = certify_at(&p, Theorem::T3, &s1.x, 15.6, VectorNorm::Euclidean).unwrap();
        assert!(c1.passed && c1.ball_radius < c0.ball_radius);
    }

    #[test]
    fn restart_zero_residual() {
        let p = parse_problem(
            r#"{"name":"at_root","variables":["x1","x2"],"equations":["x1 - 1","x2 + x1^2 - 3"],
                "initial_point":[1, 2],"domain":{"lower":[0,0],"upper":[3,3]}}"#,
        )
        .unwrap();
        let out = certify_then_solve(&p, Theorem::T3, 3, None, &SolveOptions::default()).unwrap();
        assert_eq!(out.certificates[0].eta, 0.0);
        assert!(out.passed());
        assert_eq!(out.trace.steps(), 0);
    }

    #[test]
    fn restart_rejects_other_theorems() {
        let p = builtin_problem("paper_example").unwrap();
        assert!(matches!(
            certify_then_solve(&p, Theorem::NK, 1, Some(1.0), &SolveOptions::default()),
            Err(BenchError::InvalidArgument(_))
        ));
    }

    #[test]
    fn batch_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["linear_2x2", "scalar_sqrt2"] {
            let p = builtin_problem(name).unwrap();
            let text = serde_json::to_string(&p.to_document()).unwrap();
            fs::write(dir.path().join(format!("{name}.json")), text).unwrap();
        }
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let problems = load_problem_set(dir.path()).unwrap();
        let reports = compare_batch(&problems, None);
        let names: Vec<&str> = reports.iter().map(|r| r.problem.as_str()).collect();
        assert_eq!(names, ["linear_2x2", "scalar_sqrt2"]);
        let v: serde_json::Value = serde_json::from_str(&reports_to_json(&reports)).unwrap();
        assert_eq!(v.as_array().unwrap().len(), 2);

        fs::write(dir.path().join("broken.json"), "{").unwrap();
        assert!(matches!(
            load_problem_set(dir.path()),
            Err(BenchError::Document { .. })
        ));
    }

    #[test]
    fn builtin_batch() {
        let problems = load_problem_set(Path::new("builtin")).unwrap();
        assert_eq!(problems.len(), crate::problem::builtin_names().len());
        for r in compare_batch(&problems, None) {
            assert!(r.root_gap().unwrap() < 1e-10, "{}", r.problem);
        }
    }
}
