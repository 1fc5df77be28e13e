//! The `invfree` command-line front end.
//!
//! Exit codes: 0 success, 1 `example` deviation, 2 usage error, 3 problem
//! document error, 4 solver or certificate error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::builder::TypedValueParser;
use clap::{Args, Parser, Subcommand};

use crate::bench::{compare_batch, load_problem_set, reports_to_json, BenchError};
use crate::certificates::{
    apriori_error_bound, bound_sequences, certify_at, existence_and_first_step_balls,
    region_geometry_from_balls, Certificate, Theorem, MAX_SEQUENCE_LENGTH,
};
use crate::linalg::{DenseVector, VectorNorm};
use crate::problem::{
    builtin_problem, parse_problem, ProblemError, ProblemSpec, DEFAULT_GRID_POINTS,
};
use crate::report::sig;
use crate::solver::{inverse_free_start, solve, step_inverse_free, Method, SolveOptions, Verdict};

pub const EXIT_DEVIATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PARSE: i32 = 3;
pub const EXIT_FAILURE: i32 = 4;

/// Significant digits in human-readable tables.
const TABLE_DIGITS: usize = 12;

#[derive(Debug, Parser)]
#[command(
    name = "invfree",
    version,
    about = "Inverse-free Newton-type solver with semilocal convergence certificates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve a system and print the iterate table.
    Solve(SolveArgs),
    /// Check a convergence certificate at the initial point and print JSON.
    Certify(CertifyArgs),
    /// Compare the inverse-free method with Newton on a set of problems.
    Bench(BenchArgs),
    /// Print the bound sequences for a given h.
    Sequences(SequencesArgs),
    /// Write the existence regions G0, G1 as CSV.
    Regions(RegionsArgs),
    /// Reproduce the worked two-equation example end to end.
    Example,
}

#[derive(Debug, Args)]
struct ProblemArg {
    /// Problem document (JSON) or builtin name.
    #[arg(long)]
    problem: String,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArg,
    #[arg(long, default_value = "kogan")]
    method: Method,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
    /// Write the full trace as CSV.
    #[arg(long = "trace-out")]
    trace_out: Option<PathBuf>,
    #[arg(long)]
    norm: Option<VectorNorm>,
}

#[derive(Debug, Args)]
struct CertifyArgs {
    #[command(flatten)]
    problem: ProblemArg,
    /// 1, 2, 3 or nk.
    #[arg(long)]
    theorem: Theorem,
    /// Grid points per axis for the second-derivative bound.
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS, value_parser = clap::value_parser!(u32).range(2..).map(|v| v as usize))]
    grid: usize,
    /// Norm for Theorem 1 and Newton-Kantorovich.
    #[arg(long)]
    norm: Option<VectorNorm>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Directory of problem documents, or `builtin`.
    #[arg(long)]
    problems: PathBuf,
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Debug, Args)]
struct SequencesArgs {
    #[arg(long)]
    h: f64,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=MAX_SEQUENCE_LENGTH as i64))]
    k: u32,
}

#[derive(Debug, Args)]
struct RegionsArgs {
    #[command(flatten)]
    problem: ProblemArg,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS, value_parser = clap::value_parser!(u32).range(2..).map(|v| v as usize))]
    grid: usize,
}

/// Failure carrying its exit code; the message goes to the error stream.
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl ToString) -> Self {
        Failure {
            code,
            message: message.to_string(),
        }
    }
}

fn fail(e: impl ToString) -> Failure {
    Failure::new(EXIT_FAILURE, e)
}

fn problem_failure(e: ProblemError) -> Failure {
    if e.is_parse_error() || matches!(e, ProblemError::UnknownBuiltin(_)) {
        Failure::new(EXIT_PARSE, e)
    } else {
        Failure::new(EXIT_FAILURE, e)
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(EXIT_FAILURE, format!("{}: {e}", path.display()))
}

/// Reads a problem file, or falls back to a builtin name when no such file
/// exists.
fn load_problem(arg: &str) -> Result<ProblemSpec, Failure> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::new(EXIT_PARSE, format!("{arg}: {e}")))?;
        parse_problem(&text).map_err(|e| Failure::new(EXIT_PARSE, format!("{arg}: {e}")))
    } else {
        builtin_problem(arg).map_err(|_| {
            Failure::new(
                EXIT_PARSE,
                format!("{arg}: no such file and not a builtin problem"),
            )
        })
    }
}

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::Solve(a) => cmd_solve(a, out),
        Command::Certify(a) => cmd_certify(a, out),
        Command::Bench(a) => cmd_bench(a, out),
        Command::Sequences(a) => cmd_sequences(a, out),
        Command::Regions(a) => cmd_regions(a, out),
        Command::Example => cmd_example(out),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<(), Failure> {
    out.write_all(text.as_bytes())
        .map_err(|e| Failure::new(EXIT_FAILURE, format!("writing output: {e}")))
}

fn check_tolerance(tol: Option<f64>) -> Result<(), Failure> {
    match tol {
        Some(t) if !(t > 0.0 && t.is_finite()) => Err(Failure::new(
            EXIT_USAGE,
            format!("--tol must be a positive number, got {t}"),
        )),
        _ => Ok(()),
    }
}

fn iterate_table(trace: &crate::solver::SolveTrace, rows: Option<usize>) -> String {
    let n = trace.states[0].x.dim();
    let mut header = vec![format!("{:>3}", "i")];
    header.extend((1..=n).map(|i| format!("{:>20}", format!("x{i}"))));
    header.extend((1..=n).map(|i| format!("{:>20}", format!("P{i}"))));
    let mut text = header.join(" ") + "\n";
    let take = rows.unwrap_or(usize::MAX);
    for s in trace.states.iter().take(take) {
        let mut row = vec![format!("{:>3}", s.k)];
        row.extend(s.x.iter().map(|&v| format!("{:>20}", sig(v, TABLE_DIGITS))));
        row.extend(
            s.residual
                .iter()
                .map(|&v| format!("{:>20}", sig(v, TABLE_DIGITS))),
        );
        text.push_str(&row.join(" "));
        text.push('\n');
    }
    text
}

fn cmd_solve(a: SolveArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    check_tolerance(a.tol)?;
    if a.max_iter == Some(0) {
        return Err(Failure::new(EXIT_USAGE, "--max-iter must be at least 1"));
    }
    let p = load_problem(&a.problem.problem)?;
    let mut o = SolveOptions::for_problem(&p);
    if let Some(t) = a.tol {
        o.tolerance = t;
    }
    if let Some(m) = a.max_iter {
        o.max_iterations = m;
    }
    if let Some(norm) = a.norm {
        o.norm = norm;
    }
    let trace = solve(&p, a.method, &o).map_err(fail)?;
    if let Some(path) = &a.trace_out {
        let file = fs::File::create(path).map_err(|e| io_failure(path, e))?;
        trace
            .write_csv(std::io::BufWriter::new(file))
            .map_err(|e| io_failure(path, e))?;
    }
    let c = trace.counters;
    let mut text = format!("problem: {}\nmethod: {}\n", p.name(), trace.method);
    text.push_str(&iterate_table(&trace, None));
    text.push_str(&format!(
        "verdict: {:?}, steps: {}, residual norm ({}): {}\n",
        trace.verdict,
        trace.steps(),
        o.norm,
        sig(trace.last().residual_norm, 4)
    ));
    text.push_str(&format!(
        "inversions: {}, linear solves: {}, matrix multiplications: {}, jacobian evaluations: {}, residual evaluations: {}\n",
        c.inversions, c.linear_solves, c.matrix_multiplications, c.jacobian_evaluations, c.residual_evaluations
    ));
    write_out(out, &text)?;
    if trace.verdict == Verdict::Converged {
        Ok(0)
    } else {
        Err(Failure::new(
            EXIT_FAILURE,
            format!("solver stopped without converging: {:?}", trace.verdict),
        ))
    }
}

fn second_derivative_bound(p: &ProblemSpec, grid: usize) -> Result<f64, Failure> {
    p.estimate_second_derivative_bound(grid)
        .map(|b| b.l)
        .map_err(problem_failure)
}

fn cmd_certify(a: CertifyArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let p = load_problem(&a.problem.problem)?;
    let l = second_derivative_bound(&p, a.grid)?;
    let norm = a.norm.or(p.options().norm).unwrap_or_default();
    let cert = certify_at(&p, a.theorem, p.initial_point(), l, norm).map_err(fail)?;
    write_out(out, &(cert.to_json() + "\n"))?;
    Ok(0)
}

fn cmd_bench(a: BenchArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    check_tolerance(a.tol)?;
    let problems = load_problem_set(&a.problems).map_err(|e| match e {
        BenchError::Document { .. } => Failure::new(EXIT_PARSE, e),
        other => Failure::new(EXIT_FAILURE, other),
    })?;
    let options = a.tol.map(|t| SolveOptions {
        tolerance: t,
        ..SolveOptions::default()
    });
    let reports = compare_batch(&problems, options.as_ref());
    let json = reports_to_json(&reports) + "\n";
    match &a.out {
        Some(path) => {
            fs::write(path, json).map_err(|e| io_failure(path, e))?;
            let mut text = String::new();
            for r in &reports {
                let steps = |m: &crate::bench::MethodReport| match &m.outcome {
                    Ok(run) => format!("{:?} in {} steps", run.verdict, run.steps),
                    Err(e) => format!("error: {e}"),
                };
                text.push_str(&format!(
                    "{}: inverse_free {}, newton {}\n",
                    r.problem,
                    steps(&r.inverse_free),
                    steps(&r.newton)
                ));
            }
            write_out(out, &text)?;
        }
        None => write_out(out, &json)?,
    }
    Ok(0)
}

fn cmd_sequences(a: SequencesArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let seq = bound_sequences(a.h, a.k).map_err(fail)?;
    let mut buf = Vec::new();
    seq.write_table(&mut buf).expect("writing to memory");
    let flagged: Vec<String> = seq
        .rows
        .iter()
        .filter(|r| r.overflow || r.underflow)
        .map(|r| {
            let what = match (r.overflow, r.underflow) {
                (true, true) => "overflow+underflow",
                (true, false) => "overflow",
                _ => "underflow",
            };
            format!("k={} {what}", r.k)
        })
        .collect();
    if !flagged.is_empty() {
        buf.extend_from_slice(format!("flags: {}\n", flagged.join(", ")).as_bytes());
    }
    out.write_all(&buf)
        .map_err(|e| Failure::new(EXIT_FAILURE, format!("writing output: {e}")))?;
    Ok(0)
}

/// Theorem 3 certificate at `x_0`, the first inverse-free iterate, and the
/// balls G0 and G1 around them.
struct RegionRun {
    cert: Certificate,
    x1: DenseVector,
    geometry: crate::certificates::RegionGeometry,
}

fn region_run(p: &ProblemSpec, l: f64) -> Result<RegionRun, Failure> {
    let cert =
        certify_at(p, Theorem::T3, p.initial_point(), l, VectorNorm::Euclidean).map_err(fail)?;
    if !cert.passed {
        return Err(Failure::new(
            EXIT_FAILURE,
            format!(
                "Theorem 3 does not hold at the initial point ({})",
                cert.details
            ),
        ));
    }
    let s0 = inverse_free_start(p, VectorNorm::Euclidean).map_err(fail)?;
    let s1 = step_inverse_free(p, &s0, VectorNorm::Euclidean).map_err(fail)?;
    let balls = existence_and_first_step_balls(&cert, &s1.x).map_err(fail)?;
    let geometry = region_geometry_from_balls(balls, p.domain()).map_err(fail)?;
    Ok(RegionRun {
        cert,
        x1: s1.x,
        geometry,
    })
}

fn cmd_regions(a: RegionsArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let p = load_problem(&a.problem.problem)?;
    let l = second_derivative_bound(&p, a.grid)?;
    let run = region_run(&p, l)?;
    let mut csv = Vec::new();
    run.geometry.write_csv(&mut csv).expect("writing to memory");
    match &a.out {
        Some(path) => {
            fs::write(path, &csv).map_err(|e| io_failure(path, e))?;
            let mut text = String::new();
            for r in &run.geometry.regions {
                text.push_str(&format!(
                    "{}: radius {}, {}\n",
                    r.ball.label,
                    sig(r.ball.radius, 6),
                    if r.contained {
                        "contained in D"
                    } else {
                        "NOT contained in D"
                    }
                ));
            }
            write_out(out, &text)?;
        }
        None => out
            .write_all(&csv)
            .map_err(|e| Failure::new(EXIT_FAILURE, format!("writing output: {e}")))?,
    }
    Ok(0)
}

/// Paper table, rows `i = 0..4`.
const EXAMPLE_TABLE: [[f64; 2]; 5] = [
    [1.2, 1.7],
    [1.234876263286, 1.660979680824],
    [1.234275470964, 1.661525517833],
    [1.234274484119, 1.661526466792],
    [1.234274484114, 1.661526466796],
];

/// Collects expected-versus-observed checks for the worked example.
#[derive(Default)]
struct Checks {
    deviations: Vec<String>,
}

impl Checks {
    fn near(&mut self, what: &str, value: f64, expected: f64, tol: f64) {
        if !((value - expected).abs() <= tol) {
            self.deviations.push(format!(
                "{what} = {} (expected {expected} +- {tol})",
                sig(value, TABLE_DIGITS)
            ));
        }
    }

    fn holds(&mut self, what: &str, ok: bool) {
        if !ok {
            self.deviations.push(what.to_string());
        }
    }
}

fn vector_text(v: &[f64], digits: usize) -> String {
    let parts: Vec<String> = v.iter().map(|&x| sig(x, digits)).collect();
    format!("({})", parts.join(", "))
}

fn cmd_example(out: &mut dyn Write) -> Result<i32, Failure> {
    let p = builtin_problem("paper_example").map_err(problem_failure)?;
    let bound = p
        .estimate_second_derivative_bound(DEFAULT_GRID_POINTS)
        .map_err(problem_failure)?;
    let l = bound.l;
    let mut checks = Checks::default();
    let mut text = String::new();

    text.push_str("System:\n");
    for (i, eq) in p.equation_text().iter().enumerate() {
        text.push_str(&format!("  P{} = {eq}\n", i + 1));
    }
    let d = p.domain();
    text.push_str(&format!(
        "D = [{}, {}] x [{}, {}], x0 = {}\n",
        d.lower[0],
        d.upper[0],
        d.lower[1],
        d.upper[1],
        vector_text(p.initial_point().as_slice(), TABLE_DIGITS)
    ));
    text.push_str(&format!(
        "L = {} (grid {}, at {})\n\n",
        sig(l, 6),
        bound.grid_points_per_axis,
        vector_text(bound.argmax.as_slice(), 6)
    ));
    checks.near("L", l, 15.6, 1e-4);

    let t2 = certify_at(&p, Theorem::T2, p.initial_point(), l, VectorNorm::Max).map_err(fail)?;
    text.push_str(&format!(
        "Theorem 2: {}\n",
        if t2.passed { "PASS" } else { "FAIL (h > a)" }
    ));
    text.push_str(&format!(
        "  eta = {}, B = {}, K = {}, h = {}, a = {}\n",
        sig(t2.eta, 6),
        sig(t2.b, 6),
        sig(t2.k, 6),
        sig(t2.h, 6),
        sig(t2.a, 6)
    ));
    text.push_str(&format!(
        "  determinant = {}, max-row-sum norm of U0 = {}\n\n",
        sig(t2.diagnostics.determinant.unwrap_or(f64::NAN), 7),
        sig(t2.diagnostics.b_max_row_sum.unwrap_or(f64::NAN), 6)
    ));
    checks.near("Theorem 2 eta", t2.eta, 0.434, 1e-6);
    checks.holds(
        "Theorem 2 B outside [0.268, 0.270]",
        (0.268..=0.270).contains(&t2.b),
    );
    checks.holds("Theorem 2 expected to fail", !t2.passed && t2.h > t2.a);

    let t3 =
        certify_at(&p, Theorem::T3, p.initial_point(), l, VectorNorm::Euclidean).map_err(fail)?;
    text.push_str(&format!(
        "Theorem 3: {}\n",
        if t3.passed { "PASS" } else { "FAIL (h > a)" }
    ));
    let gram = t3
        .diagnostics
        .gram
        .clone()
        .unwrap_or_else(|| crate::linalg::DenseMatrix::zeros(2));
    let eig = t3.diagnostics.eigenvalues.clone().unwrap_or_default();
    text.push_str(&format!(
        "  eta = {}, U0 U0^T = [[{}, {}], [{}, {}]]\n",
        sig(t3.eta, 6),
        sig(gram[(0, 0)], 5),
        sig(gram[(0, 1)], 5),
        sig(gram[(1, 0)], 5),
        sig(gram[(1, 1)], 5)
    ));
    text.push_str(&format!(
        "  eigenvalues = {}, B = {}, K = {}, h = {}, a = {}\n",
        vector_text(&eig, 4),
        sig(t3.b, 6),
        sig(t3.k, 6),
        sig(t3.h, 6),
        sig(t3.a, 6)
    ));
    text.push_str(&format!("  r0 = {}\n\n", sig(t3.ball_radius, 6)));
    checks.near("Theorem 3 eta", t3.eta, 0.476, 1e-3);
    checks.near("U0 U0^T[0][0]", gram[(0, 0)], 0.010421, 2e-6);
    checks.near("U0 U0^T[0][1]", gram[(0, 1)], -0.001753, 2e-6);
    checks.near("U0 U0^T[1][1]", gram[(1, 1)], 0.010295, 2e-6);
    checks.holds("two eigenvalues expected", eig.len() == 2);
    if eig.len() == 2 {
        checks.near("largest eigenvalue", eig[0], 0.0121, 2e-4);
        checks.near("smallest eigenvalue", eig[1], 0.0086, 2e-4);
    }
    checks.near("Theorem 3 B", t3.b, 0.11, 1e-3);
    checks.holds("Theorem 3 expected to pass", t3.passed && t3.h < t3.a);
    checks.near("r0", t3.ball_radius, 0.115, 1e-3);

    let o = SolveOptions {
        tolerance: 1e-14,
        ..SolveOptions::default()
    };
    let trace = solve(&p, Method::InverseFree, &o).map_err(fail)?;
    checks.holds(
        "inverse-free iteration should converge within 5 steps",
        trace.verdict == Verdict::Converged && trace.steps() <= 5,
    );
    checks.holds(
        "exactly one inversion expected",
        trace.counters.inversions == 1,
    );
    for (i, row) in EXAMPLE_TABLE.iter().enumerate().skip(1) {
        match trace.states.get(i) {
            Some(s) => {
                for (j, &expected) in row.iter().enumerate() {
                    checks.near(&format!("x{}({i})", j + 1), s.x[j], expected, 1e-9);
                }
            }
            None => checks.holds(&format!("iterate {i} missing"), false),
        }
    }

    let run = region_run(&p, l)?;
    text.push_str("Regions:\n");
    for r in &run.geometry.regions {
        text.push_str(&format!(
            "  {}: center {}, radius {}, {}\n",
            r.ball.label,
            vector_text(r.ball.center.as_slice(), 7),
            sig(r.ball.radius, 4),
            if r.contained {
                "contained in D"
            } else {
                "NOT contained in D"
            }
        ));
    }
    text.push('\n');
    let g1_radius = apriori_error_bound(&run.cert, 1).map_err(fail)?;
    checks.holds("G0 expected outside D", !run.geometry.regions[0].contained);
    checks.holds("G1 expected inside D", run.geometry.regions[1].contained);
    checks.near("G1 radius", g1_radius, 0.028, 2e-3);
    checks.near("G1 center x1", run.x1[0], EXAMPLE_TABLE[1][0], 1e-9);
    checks.near("G1 center x2", run.x1[1], EXAMPLE_TABLE[1][1], 1e-9);

    text.push_str("Iterates (inverse-free, one inversion):\n");
    text.push_str(&iterate_table(&trace, Some(EXAMPLE_TABLE.len())));
    text.push('\n');

    if checks.deviations.is_empty() {
        text.push_str("All expected outcomes reproduced.\n");
        write_out(out, &text)?;
        Ok(0)
    } else {
        text.push_str("Deviations:\n");
        for d in &checks.deviations {
            text.push_str(&format!("  {d}\n"));
        }
        write_out(out, &text)?;
        Ok(EXIT_DEVIATION)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = std::iter::once("invfree").chain(args.iter().copied());
        let code = run(argv, &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn usage_errors() {
        assert_eq!(run_args(&[]).0, EXIT_USAGE);
        assert_eq!(run_args(&["frobnicate"]).0, EXIT_USAGE);
        assert_eq!(
            run_args(&["certify", "--problem", "paper_example"]).0,
            EXIT_USAGE
        );
        assert_eq!(
            run_args(&["certify", "--problem", "paper_example", "--theorem", "7"]).0,
            EXIT_USAGE
        );
        assert_eq!(
            run_args(&["sequences", "--h", "0.1", "--k", "31"]).0,
            EXIT_USAGE
        );
        assert_eq!(
            run_args(&["solve", "--problem", "paper_example", "--tol", "-1"]).0,
            EXIT_USAGE
        );
        assert_eq!(
            run_args(&["solve", "--problem", "paper_example", "--method", "secant"]).0,
            EXIT_USAGE
        );
        let (code, out, _) = run_args(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("certify"));
    }

    #[test]
    fn unknown_problem_is_a_parse_error() {
        let (code, out, err) = run_args(&["solve", "--problem", "no_such_problem"]);
        assert_eq!(code, EXIT_PARSE);
        assert!(out.is_empty());
        assert!(err.contains("no_such_problem"));
    }

    #[test]
    fn malformed_document_produces_no_output() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        fs::write(&path, r#"{"name": "bad", "equations": ["x1 +"]}"#).unwrap();
        let path = path.to_str().unwrap();
        for cmd in ["solve", "regions"] {
            let (code, out, err) = run_args(&[cmd, "--problem", path]);
            assert_eq!(code, EXIT_PARSE, "{cmd}");
            assert!(out.is_empty());
            assert!(err.starts_with("error:"));
        }
        let (code, out, _) = run_args(&["certify", "--problem", path, "--theorem", "3"]);
        assert_eq!((code, out.is_empty()), (EXIT_PARSE, true));
    }

    #[test]
    fn certify_theorem3_json() {
        let (code, out, _) = run_args(&["certify", "--problem", "paper_example", "--theorem", "3"]);
        assert_eq!(code, 0);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert!((v["B"].as_f64().unwrap() - 0.11).abs() < 1e-3);
        assert!((v["eta"].as_f64().unwrap() - 0.476).abs() < 1e-3);
        assert_eq!(v["passed"], true);
    }

    #[test]
    fn sequences_h_zero() {
        let (code, out, _) = run_args(&["sequences", "--h", "0", "--k", "5"]);
        assert_eq!(code, 0);
        let rows: Vec<&str> = out.lines().skip(1).collect();
        assert_eq!(rows.len(), 5);
        for row in rows {
            let gamma: f64 = row.split_whitespace().nth(7).unwrap().parse().unwrap();
            assert_eq!(gamma, 1.0);
        }
        assert_eq!(
            run_args(&["sequences", "--h", "0.6", "--k", "5"]).0,
            EXIT_FAILURE
        );
    }

    #[test]
    fn solve_writes_trace() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("trace.csv");
        let (code, out, _) = run_args(&[
            "solve",
            "--problem",
            "paper_example",
            "--tol",
            "1e-14",
            "--trace-out",
            csv.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        assert!(out.contains("1.23487626329"));
        assert!(out.contains("inversions: 1"));
        let text = fs::read_to_string(csv).unwrap();
        assert!(text.starts_with("k,x_1,x_2,res_1,res_2,residual_norm,step_norm\n"));
    }

    #[test]
    fn solve_max_iterations_exit_code() {
        let (code, out, err) =
            run_args(&["solve", "--problem", "paper_example", "--max-iter", "1"]);
        assert_eq!(code, EXIT_FAILURE);
        assert!(out.contains("MaxIterations"));
        assert!(err.contains("without converging"));
    }

    #[test]
    fn example_is_reproduced_and_deterministic() {
        let (code, first, _) = run_args(&["example"]);
        assert_eq!(code, 0, "{first}");
        assert!(first.contains("Theorem 2: FAIL (h > a)"));
        assert!(first.contains("Theorem 3: PASS"));
        assert!(first.contains("r0 = 0.115"));
        assert!(first.contains("G0") && first.contains("NOT contained in D"));
        let (_, second, _) = run_args(&["example"]);
        assert_eq!(first, second);
    }

    #[test]
    fn regions_csv() {
        let (code, out, _) = run_args(&["regions", "--problem", "paper_example"]);
        assert_eq!(code, 0);
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "label,center_1,center_2,radius,contained");
        assert!(lines[1].starts_with("G0,") && lines[1].ends_with(",false"));
        assert!(lines[2].starts_with("G1,") && lines[2].ends_with(",true"));
    }
}
