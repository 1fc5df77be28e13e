//! C ABI for the `invfree` solver and certificates.
//!
//! Problems and traces are opaque handles owned by the caller and released
//! with their `_free` function. Every fallible call returns an
//! [`InvfreeStatus`]; on failure the message is available from
//! [`invfree_last_error_message`] on the same thread. Strings returned
//! through `char **` out-parameters must be released with
//! [`invfree_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use invfree::bench::compare;
use invfree::certificates::{certify_at, kogan_constant, Certificate, Theorem};
use invfree::problem::{builtin_problem, parse_problem, ProblemSpec, DEFAULT_GRID_POINTS};
use invfree::solver::{solve, Method, SolveOptions, SolveTrace, Verdict};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvfreeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    SolverError = 4,
    CertificateError = 5,
    InvalidArgument = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvfreeMethod {
    InverseFree = 0,
    Newton = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvfreeTheorem {
    T1 = 1,
    T2 = 2,
    T3 = 3,
    NewtonKantorovich = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvfreeVerdict {
    Converged = 0,
    MaxIterations = 1,
    Diverged = 2,
    SingularAtStart = 3,
}

/// Cost counters of a solve.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct InvfreeCounters {
    pub inversions: usize,
    pub linear_solves: usize,
    pub jacobian_evaluations: usize,
    pub residual_evaluations: usize,
    pub matrix_multiplications: usize,
}

/// Scalar summary of a certificate. The ball center is the problem's
/// initial point.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct InvfreeCertificate {
    pub theorem: InvfreeTheorem,
    pub passed: bool,
    pub b: f64,
    pub eta: f64,
    pub k: f64,
    pub h: f64,
    pub a: f64,
    pub s: f64,
    pub n1: f64,
    /// NaN when undefined.
    pub ball_radius: f64,
    /// Second-derivative bound used for `k`.
    pub l: f64,
}

/// Opaque problem handle.
pub struct InvfreeProblem {
    spec: ProblemSpec,
}

/// Opaque solve trace handle.
pub struct InvfreeTrace {
    trace: SolveTrace,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    let c = CString::new(text).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(InvfreeStatus, String);

impl Fail {
    fn new(status: InvfreeStatus, message: impl ToString) -> Self {
        Fail(status, message.to_string())
    }
}

/// Runs `f`, turning failures and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> InvfreeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            InvfreeStatus::Ok
        }
        Ok(Err(Fail(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal error: {message}"));
            InvfreeStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::new(
            InvfreeStatus::NullPointer,
            format!("{what} is null"),
        ));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Fail::new(InvfreeStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail::new(InvfreeStatus::NullPointer, format!("{what} is null")))
}

fn check_out<T>(p: *mut T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail::new(
            InvfreeStatus::NullPointer,
            format!("{what} is null"),
        ))
    } else {
        Ok(())
    }
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .expect("interior nuls removed")
        .into_raw()
}

/// Message describing the last failed call on this thread, or null. The
/// pointer stays valid until the next call into this library on the same
/// thread.
#[no_mangle]
pub extern "C" fn invfree_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn invfree_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// The constant `a` bounding the certificate quantity `h`.
#[no_mangle]
pub extern "C" fn invfree_kogan_constant() -> f64 {
    kogan_constant().a
}

/// Parses a JSON problem document.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn invfree_problem_from_json(
    json: *const c_char,
    out: *mut *mut InvfreeProblem,
) -> InvfreeStatus {
    guard(|| {
        check_out(out, "out")?;
        let text = read_str(json, "json")?;
        let spec = parse_problem(text).map_err(|e| Fail::new(InvfreeStatus::ParseError, e))?;
        *out = Box::into_raw(Box::new(InvfreeProblem { spec }));
        Ok(())
    })
}

/// Looks up a built-in problem by name.
///
/// # Safety
/// `name` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn invfree_problem_builtin(
    name: *const c_char,
    out: *mut *mut InvfreeProblem,
) -> InvfreeStatus {
    guard(|| {
        check_out(out, "out")?;
        let name = read_str(name, "name")?;
        let spec =
            builtin_problem(name).map_err(|e| Fail::new(InvfreeStatus::InvalidArgument, e))?;
        *out = Box::into_raw(Box::new(InvfreeProblem { spec }));
        Ok(())
    })
}

/// # Safety
/// `p` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn invfree_problem_free(p: *mut InvfreeProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Number of unknowns, or 0 for a null handle.
///
/// # Safety
/// `p` must be null or a live problem handle.
#[no_mangle]
pub unsafe extern "C" fn invfree_problem_dim(p: *const InvfreeProblem) -> usize {
    p.as_ref().map_or(0, |p| p.spec.dim())
}

/// Solves from the problem's initial point. `tolerance <= 0` and
/// `max_iterations == 0` select the problem's (or the default) settings.
///
/// # Safety
/// `p` must be a live problem handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn invfree_solve(
    p: *const InvfreeProblem,
    method: InvfreeMethod,
    tolerance: f64,
    max_iterations: usize,
    out: *mut *mut InvfreeTrace,
) -> InvfreeStatus {
    guard(|| {
        check_out(out, "out")?;
        let p = handle(p, "problem")?;
        let mut o = SolveOptions::for_problem(&p.spec);
        if tolerance.is_nan() {
            return Err(Fail::new(
                InvfreeStatus::InvalidArgument,
                "tolerance is NaN",
            ));
        }
        if tolerance > 0.0 {
            o.tolerance = tolerance;
        }
        if max_iterations > 0 {
            o.max_iterations = max_iterations;
        }
        let method = match method {
            InvfreeMethod::InverseFree => Method::InverseFree,
            InvfreeMethod::Newton => Method::Newton,
        };
        let trace =
            solve(&p.spec, method, &o).map_err(|e| Fail::new(InvfreeStatus::SolverError, e))?;
        *out = Box::into_raw(Box::new(InvfreeTrace { trace }));
        Ok(())
    })
}

/// # Safety
/// `t` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn invfree_trace_free(t: *mut InvfreeTrace) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Number of steps taken (iterates minus one), or 0 for a null handle.
///
/// # Safety
/// `t` must be null or a live trace handle.
#[no_mangle]
pub unsafe extern "C" fn invfree_trace_steps(t: *const InvfreeTrace) -> usize {
    t.as_ref().map_or(0, |t| t.trace.steps())
}

/// # Safety
/// `t` must be a live trace handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn invfree_trace_verdict(
    t: *const InvfreeTrace,
    out: *mut InvfreeVerdict,
) -> InvfreeStatus {
    guard(|| {
        check_out(out, "out")?;
        let t = handle(t, "trace")?;
        *out = match t.trace.verdict {
            Verdict::Converged => InvfreeVerdict::Converged,
            Verdict::MaxIterations => InvfreeVerdict::MaxIterations,
            Verdict::Diverged => InvfreeVerdict::Diverged,
            Verdict::SingularAtStart => InvfreeVerdict::SingularAtStart,
        };
        Ok(())
    })
}

/// # Safety
/// `t` must be a live trace handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn invfree_trace_counters(
    t: *const InvfreeTrace,
    out: *mut InvfreeCounters,
) -> InvfreeStatus {
    guard(|| {
        check_out(out, "out")?;
        let c = handle(t, "trace")?.trace.counters;
        *out = InvfreeCounters {
            inversions: c.inversions,
            linear_solves: c.linear_solves,
            jacobian_evaluations: c.jacobian_evaluations,
            residual_evaluations: c.residual_evaluations,
            matrix_multiplications: c.matrix_multiplications,
        };
        Ok(())
    })
}

/// Copies iterate `k` (0 is the initial point) into `x`, which must hold
/// `len` doubles, `len` equal to the problem dimension.
///
/// # Safety
/// `t` must be a live trace handle; `x` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn invfree_trace_iterate(
    t: *const InvfreeTrace,
    k: usize,
    x: *mut f64,
    len: usize,
) -> InvfreeStatus {
    guard(|| {
        check_out(x, "x")?;
        let t = handle(t, "trace")?;
        let state = t.trace.states.get(k).ok_or_else(|| {
            Fail::new(
                InvfreeStatus::InvalidArgument,
                format!(
                    "iterate {k} out of range (trace has {})",
                    t.trace.states.len()
                ),
            )
        })?;
        if len != state.x.dim() {
            return Err(Fail::new(
                InvfreeStatus::InvalidArgument,
                format!("buffer holds {len} values, dimension is {}", state.x.dim()),
            ));
        }
        std::slice::from_raw_parts_mut(x, len).copy_from_slice(state.x.as_slice());
        Ok(())
    })
}

/// Full trace as CSV text.
///
/// # Safety
/// `t` must be a live trace handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn invfree_trace_csv(
    t: *const InvfreeTrace,
    out: *mut *mut c_char,
) -> InvfreeStatus {
    guard(|| {
        check_out(out, "out")?;
        let t = handle(t, "trace")?;
        let mut buf = Vec::new();
        t.trace
            .write_csv(&mut buf)
            .map_err(|e| Fail::new(InvfreeStatus::SolverError, e))?;
        *out = into_c_string(String::from_utf8(buf).expect("csv is utf-8"));
        Ok(())
    })
}

fn summary(c: &Certificate, theorem: InvfreeTheorem, l: f64) -> InvfreeCertificate {
    InvfreeCertificate {
        theorem,
        passed: c.passed,
        b: c.b,
        eta: c.eta,
        k: c.k,
        h: c.h,
        a: c.a,
        s: c.s,
        n1: c.n1,
        ball_radius: c.ball_radius,
        l,
    }
}

/// Certifies at the problem's initial point. `grid` is the number of grid
/// points per axis for the second-derivative bound (0 for the default).
/// `json_out` may be null; otherwise it receives the JSON report.
///
/// # Safety
/// `p` must be a live problem handle; `out` must be writable; `json_out`
/// must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn invfree_certify(
    p: *const InvfreeProblem,
    theorem: InvfreeTheorem,
    grid: usize,
    out: *mut InvfreeCertificate,
    json_out: *mut *mut c_char,
) -> InvfreeStatus {
    guard(|| {
        check_out(out, "out")?;
        let p = handle(p, "problem")?;
        let grid = if grid == 0 { DEFAULT_GRID_POINTS } else { grid };
        let l = p
            .spec
            .estimate_second_derivative_bound(grid)
            .map_err(|e| Fail::new(InvfreeStatus::InvalidArgument, e))?
            .l;
        let which = match theorem {
            InvfreeTheorem::T1 => Theorem::T1,
            InvfreeTheorem::T2 => Theorem::T2,
            InvfreeTheorem::T3 => Theorem::T3,
            InvfreeTheorem::NewtonKantorovich => Theorem::NK,
        };
        // T2/T3 fix their own norms; T1 and NK follow the problem's
        let norm = p.spec.options().norm.unwrap_or_default();
        let cert = certify_at(&p.spec, which, p.spec.initial_point(), l, norm)
            .map_err(|e| Fail::new(InvfreeStatus::CertificateError, e))?;
        *out = summary(&cert, theorem, l);
        if !json_out.is_null() {
            *json_out = into_c_string(cert.to_json());
        }
        Ok(())
    })
}

/// Runs both methods with the same options and returns the comparison
/// report as JSON. `tolerance <= 0` selects the problem's setting.
///
/// # Safety
/// `p` must be a live problem handle; `json_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn invfree_compare_json(
    p: *const InvfreeProblem,
    tolerance: f64,
    json_out: *mut *mut c_char,
) -> InvfreeStatus {
    guard(|| {
        check_out(json_out, "json_out")?;
        let p = handle(p, "problem")?;
        let mut o = SolveOptions::for_problem(&p.spec);
        if tolerance > 0.0 {
            o.tolerance = tolerance;
        }
        *json_out = into_c_string(compare(&p.spec, &o).to_json());
        Ok(())
    })
}
