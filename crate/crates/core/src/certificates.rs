//! Semilocal existence/convergence certificates.
//!
//! A certificate checks computable constants at a starting point `x_0`:
//! `B` bounds the norm of `U_0 = P'(x_0)^{-1}`, `eta` bounds the residual
//! (or the Newton correction, for the Kantorovich variant) and `K` bounds
//! `||P''||` over the region. For the inverse-free iteration the condition is
//! `h = B^2 eta K <= a`, where `a` is the real root of
//! `a^3 + 2a^2 + 3a - 2 = 0`; the root then lies in the ball of radius
//! `(2 - a - a^2) / (2 (1 - a - a^2)) * B * eta` around `x_0`.
//!
//! The classical Newton-Kantorovich test uses `h0 = B0 eta0 K <= 1/2`.
//!
//! All constants are ordinary floating point; nothing here is outward
//! rounded.

use std::fmt;
use std::io::{self, Write};
use std::sync::OnceLock;

use serde::Serialize;
use thiserror::Error;

use crate::linalg::{self, DenseMatrix, DenseVector, LinalgError, MatrixNorm, VectorNorm};
use crate::problem::{BoxDomain, ProblemError, ProblemSpec};
use crate::report::{nums, sig17, Num};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertificateError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("certificate {0} did not pass; no error bound is available")]
    CertificateFailed(Theorem),
    #[error("h = {h} exceeds a = {a}; the bound sequences are only defined on [0, a]")]
    HOutOfRange { h: f64, a: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl From<LinalgError> for CertificateError {
    fn from(e: LinalgError) -> Self {
        CertificateError::Problem(ProblemError::Linalg(e))
    }
}

/// The root `a` of `a^3 + 2a^2 + 3a - 2` and the ball radius factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KoganConstants {
    pub a: f64,
    /// `(2 - a - a^2) / (2 (1 - a - a^2))`
    pub radius_factor: f64,
}

fn kogan_cubic(a: f64) -> f64 {
    ((a + 2.0) * a + 3.0) * a - 2.0
}

/// Computed once by bisection on `[0.4, 0.6]`, where the cubic is
/// increasing, until the bracket is two adjacent doubles.
pub fn kogan_constant() -> KoganConstants {
    static CONSTANTS: OnceLock<KoganConstants> = OnceLock::new();
    *CONSTANTS.get_or_init(|| {
        let (mut lo, mut hi) = (0.4_f64, 0.6_f64);
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if kogan_cubic(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let a = if kogan_cubic(lo).abs() <= kogan_cubic(hi).abs() {
            lo
        } else {
            hi
        };
        let a2 = a * a;
        KoganConstants {
            a,
            radius_factor: (2.0 - a - a2) / (2.0 * (1.0 - a - a2)),
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Theorem {
    /// General operator form, `h = B^2 eta K <= a`.
    T1,
    /// Max-norm system form with the all-cofactor bound on `U_0`.
    T2,
    /// Euclidean system form with the spectral bound on `U_0`.
    T3,
    /// Newton-Kantorovich, `h0 = B0 eta0 K <= 1/2`.
    NK,
}

impl fmt::Display for Theorem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Theorem::T1 => "Theorem 1",
            Theorem::T2 => "Theorem 2",
            Theorem::T3 => "Theorem 3",
            Theorem::NK => "Newton-Kantorovich",
        })
    }
}

impl std::str::FromStr for Theorem {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "1" | "t1" => Ok(Theorem::T1),
            "2" | "t2" => Ok(Theorem::T2),
            "3" | "t3" => Ok(Theorem::T3),
            "nk" => Ok(Theorem::NK),
            other => Err(format!(
                "unknown theorem '{other}' (expected 1, 2, 3 or nk)"
            )),
        }
    }
}

/// Side values computed while forming a certificate at a problem point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub determinant: Option<f64>,
    pub l: Option<f64>,
    /// `sum_{i,k} |A_ik| / |det|`
    pub b_all_cofactors: Option<f64>,
    /// Max-row-sum norm of `U_0`, the sharper max-norm bound.
    pub b_max_row_sum: Option<f64>,
    pub b_frobenius: Option<f64>,
    /// `U_0 U_0^T`
    pub gram: Option<DenseMatrix>,
    /// Eigenvalues of `U_0 U_0^T`, largest first. Only the largest is known
    /// when it came from power iteration.
    pub eigenvalues: Option<Vec<f64>>,
    pub spectral_fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub theorem: Theorem,
    pub b: f64,
    pub eta: f64,
    pub k: f64,
    pub h: f64,
    /// Threshold constant `a` (reported for every theorem).
    pub a: f64,
    pub s: f64,
    pub n1: f64,
    pub passed: bool,
    pub ball_center: DenseVector,
    /// NaN when the region is undefined (Newton-Kantorovich with `h0 > 1/2`).
    pub ball_radius: f64,
    pub ball_norm: VectorNorm,
    pub details: String,
    pub diagnostics: Diagnostics,
}

/// `S = 2(1+h)/(h^2+2h+3)` and `N1 = (h^2+2h+3)/2`.
pub fn s_and_n1(h: f64) -> (f64, f64) {
    let q = h * h + 2.0 * h + 3.0;
    (2.0 * (1.0 + h) / q, q / 2.0)
}

fn check_nonnegative(values: &[(&str, f64)]) {
    for (name, v) in values {
        assert!(
            *v >= 0.0 && v.is_finite(),
            "{name} must be finite and non-negative, got {v}"
        );
    }
}

/// Operator-form certificate for the inverse-free iteration.
pub fn theorem1_certificate(
    b: f64,
    eta: f64,
    k: f64,
    center: DenseVector,
    norm: VectorNorm,
) -> Certificate {
    build_kogan_certificate(Theorem::T1, b, eta, k, center, norm, Diagnostics::default())
}

fn build_kogan_certificate(
    theorem: Theorem,
    b: f64,
    eta: f64,
    k: f64,
    center: DenseVector,
    norm: VectorNorm,
    diagnostics: Diagnostics,
) -> Certificate {
    check_nonnegative(&[("B", b), ("eta", eta), ("K", k)]);
    let constants = kogan_constant();
    let h = b * b * eta * k;
    let (s, n1) = s_and_n1(h);
    let passed = h <= constants.a;
    let details = if passed {
        format!(
            "h = {} <= a = {}: all conditions hold",
            sig17(h),
            sig17(constants.a)
        )
    } else {
        format!(
            "h = {} > a = {}: condition h <= a fails",
            sig17(h),
            sig17(constants.a)
        )
    };
    Certificate {
        theorem,
        b,
        eta,
        k,
        h,
        a: constants.a,
        s,
        n1,
        passed,
        ball_center: center,
        ball_radius: constants.radius_factor * b * eta,
        ball_norm: norm,
        details,
        diagnostics,
    }
}

/// Classical Newton-Kantorovich certificate; the radius uses the removable
/// singularity `N(0) = 1`.
pub fn newton_kantorovich_certificate(
    b0: f64,
    eta0: f64,
    k: f64,
    center: DenseVector,
    norm: VectorNorm,
) -> Certificate {
    check_nonnegative(&[("B0", b0), ("eta0", eta0), ("K", k)]);
    let h = b0 * eta0 * k;
    let (s, n1) = s_and_n1(h);
    let passed = h <= 0.5;
    let radius = if !passed {
        f64::NAN
    } else if h == 0.0 {
        eta0
    } else {
        (1.0 - (1.0 - 2.0 * h).max(0.0).sqrt()) / h * eta0
    };
    let details = if passed {
        format!("h0 = {} <= 1/2: all conditions hold", sig17(h))
    } else {
        format!("h0 = {} > 1/2: condition h0 <= 1/2 fails", sig17(h))
    };
    Certificate {
        theorem: Theorem::NK,
        b: b0,
        eta: eta0,
        k,
        h,
        a: kogan_constant().a,
        s,
        n1,
        passed,
        ball_center: center,
        ball_radius: radius,
        ball_norm: norm,
        details,
        diagnostics: Diagnostics::default(),
    }
}

/// What a certificate needs from the problem at one point.
struct PointData {
    residual: DenseVector,
    jacobian: DenseMatrix,
    inverse: DenseMatrix,
    determinant: f64,
}

fn point_data(p: &ProblemSpec, at: &DenseVector) -> Result<PointData, CertificateError> {
    let residual = p.evaluate_residual(at)?;
    let jacobian = p.evaluate_jacobian(at)?;
    let inv = linalg::invert(&jacobian)?;
    Ok(PointData {
        residual,
        jacobian,
        inverse: inv.inverse,
        determinant: inv.determinant,
    })
}

fn check_l(l: f64) -> Result<(), CertificateError> {
    if l >= 0.0 && l.is_finite() {
        Ok(())
    } else {
        Err(CertificateError::InvalidArgument(format!(
            "L must be finite and non-negative, got {l}"
        )))
    }
}

/// Spectral norm of `u`, with the Frobenius bound when power iteration stalls.
fn spectral_or_frobenius(u: &DenseMatrix) -> Result<(f64, bool), CertificateError> {
    match linalg::matrix_norm(u, MatrixNorm::Spectral) {
        Ok(b) => Ok((b, false)),
        Err(LinalgError::PowerIterationStall { .. }) => {
            Ok((linalg::matrix_norm(u, MatrixNorm::Frobenius)?, true))
        }
        Err(e) => Err(e.into()),
    }
}

fn base_diagnostics(data: &PointData, l: f64) -> Result<Diagnostics, CertificateError> {
    let cofactors = linalg::cofactor_matrix(&data.jacobian);
    let n = cofactors.dim();
    let cofactor_sum: f64 = (0..n)
        .flat_map(|i| (0..n).map(move |k| (i, k)))
        .map(|(i, k)| cofactors[(i, k)].abs())
        .sum();
    let gram = linalg::gram(&data.inverse);
    let eigenvalues = if n <= 2 {
        linalg::gram_eigenvalues_closed_form(&data.inverse)
    } else {
        let (b, _) = spectral_or_frobenius(&data.inverse)?;
        vec![b * b]
    };
    Ok(Diagnostics {
        determinant: Some(data.determinant),
        l: Some(l),
        b_all_cofactors: Some(cofactor_sum / data.determinant.abs()),
        b_max_row_sum: Some(data.inverse.norm(MatrixNorm::MaxRowSum)?),
        b_frobenius: Some(data.inverse.norm(MatrixNorm::Frobenius)?),
        gram: Some(gram),
        eigenvalues: Some(eigenvalues),
        spectral_fallback: false,
    })
}

/// Operator norm of `U_0` and the matching `||P''||` factor for a norm.
fn operator_constants(
    data: &PointData,
    norm: VectorNorm,
    n: usize,
) -> Result<(f64, f64, bool), CertificateError> {
    let n = n as f64;
    Ok(match norm {
        VectorNorm::Max => (data.inverse.norm(MatrixNorm::MaxRowSum)?, n * n, false),
        VectorNorm::Euclidean => {
            let (b, fallback) = spectral_or_frobenius(&data.inverse)?;
            (b, n * n.sqrt(), fallback)
        }
    })
}

/// Certificate for `theorem` at the point `at`, given a bound `L` on the
/// second partials over the region.
///
/// * T2: max norm, `B = sum |A_ik| / |det|`, `K = n^2 L`.
/// * T3: Euclidean norm, `B = ||U_0||_2` (Frobenius if power iteration
///   stalls), `K = n sqrt(n) L`, `eta = ||P(x_0)||_2`.
/// * T1 and NK: `norm` picks the operator norm of `U_0` and the `K` factor
///   as for T2/T3, but with the exact max-row-sum norm in the max case.
pub fn certify_at(
    p: &ProblemSpec,
    theorem: Theorem,
    at: &DenseVector,
    l: f64,
    norm: VectorNorm,
) -> Result<Certificate, CertificateError> {
    check_l(l)?;
    let n = p.dim();
    let data = point_data(p, at)?;
    let mut diagnostics = base_diagnostics(&data, l)?;
    let nf = n as f64;
    let mut cert = match theorem {
        Theorem::T2 => {
            let b = diagnostics.b_all_cofactors.expect("computed");
            let eta = data.residual.norm(VectorNorm::Max);
            build_kogan_certificate(
                theorem,
                b,
                eta,
                nf * nf * l,
                at.clone(),
                VectorNorm::Max,
                diagnostics,
            )
        }
        Theorem::T3 => {
            let (b, fallback) = spectral_or_frobenius(&data.inverse)?;
            diagnostics.spectral_fallback = fallback;
            let eta = data.residual.norm(VectorNorm::Euclidean);
            build_kogan_certificate(
                theorem,
                b,
                eta,
                nf * nf.sqrt() * l,
                at.clone(),
                VectorNorm::Euclidean,
                diagnostics,
            )
        }
        Theorem::T1 => {
            let (b, factor, fallback) = operator_constants(&data, norm, n)?;
            diagnostics.spectral_fallback = fallback;
            let eta = data.residual.norm(norm);
            build_kogan_certificate(theorem, b, eta, factor * l, at.clone(), norm, diagnostics)
        }
        Theorem::NK => {
            let (b0, factor, fallback) = operator_constants(&data, norm, n)?;
            diagnostics.spectral_fallback = fallback;
            let eta0 = data.inverse.matvec(&data.residual).norm(norm);
            let mut cert = newton_kantorovich_certificate(b0, eta0, factor * l, at.clone(), norm);
            cert.diagnostics = diagnostics;
            cert
        }
    };
    if theorem == Theorem::T2 {
        cert.details.push_str(&format!(
            "; B from all cofactors = {}, max-row-sum norm of U0 = {}",
            sig17(cert.b),
            sig17(cert.diagnostics.b_max_row_sum.expect("computed"))
        ));
    }
    if cert.diagnostics.spectral_fallback {
        cert.details
            .push_str("; power iteration stalled, B is the Frobenius bound");
    }
    Ok(cert)
}

/// Theorem 2 at the problem's initial point.
pub fn theorem2_certificate(p: &ProblemSpec, l: f64) -> Result<Certificate, CertificateError> {
    certify_at(p, Theorem::T2, p.initial_point(), l, VectorNorm::Max)
}

/// Theorem 3 at the problem's initial point.
pub fn theorem3_certificate(p: &ProblemSpec, l: f64) -> Result<Certificate, CertificateError> {
    certify_at(p, Theorem::T3, p.initial_point(), l, VectorNorm::Euclidean)
}

/// Upper bound on `||x_n - x*||` implied by a passing certificate, `n >= 1`.
///
/// Inverse-free theorems:
/// `h(1+h)/2 * S^(n-1)/(1-S) * (N1 h)^(2^n - 2) * B eta`.
/// Newton-Kantorovich: `(2 h0)^(2^n - 1) eta0 / 2^(n-1)`.
pub fn apriori_error_bound(c: &Certificate, n: u32) -> Result<f64, CertificateError> {
    if !c.passed {
        return Err(CertificateError::CertificateFailed(c.theorem));
    }
    if n == 0 {
        return Err(CertificateError::InvalidArgument(
            "the a-priori bound is defined for n >= 1".into(),
        ));
    }
    if c.h == 0.0 {
        return Ok(0.0);
    }
    let doubling = 2f64.powi(n.min(1100) as i32);
    Ok(match c.theorem {
        Theorem::NK => (2.0 * c.h).powf(doubling - 1.0) * c.eta / 2f64.powi(n as i32 - 1),
        _ => {
            c.h * (1.0 + c.h) / 2.0 * c.s.powi(n as i32 - 1) / (1.0 - c.s)
                * (c.n1 * c.h).powf(doubling - 2.0)
                * c.b
                * c.eta
        }
    })
}

/// One row of the bound sequences used in the convergence proof.
///
/// `alpha`, `beta`, `a_k` grow doubly exponentially and overflow to
/// infinity for larger `k`; `epsilon`, `q`, `gamma` and `n_k` are carried
/// through recurrences in already-scaled form and stay finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundRow {
    pub k: u32,
    pub alpha: f64,
    pub beta: f64,
    pub a_k: f64,
    pub c: f64,
    /// `alpha_k h^(2^(k-1) - 1)`
    pub epsilon: f64,
    /// `A_k h^(2^(k-1))`
    pub q: f64,
    /// `sum_{i<=k} epsilon_i`
    pub gamma: f64,
    /// `1 + (1 + q_k)^2 / 2`
    pub n_k: f64,
    /// `beta_k h^(2^k - 1)`, the residual factor.
    pub residual_factor: f64,
    /// Some of `alpha`, `beta`, `a_k` overflowed.
    pub overflow: bool,
    /// `q` or `epsilon` underflowed to zero although `h > 0`.
    pub underflow: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundSequences {
    pub h: f64,
    pub rows: Vec<BoundRow>,
}

pub const MAX_SEQUENCE_LENGTH: u32 = 30;

/// Bound sequences for `0 <= h <= a`, rows `k = 1..=k_max`.
pub fn bound_sequences(h: f64, k_max: u32) -> Result<BoundSequences, CertificateError> {
    let a = kogan_constant().a;
    if !(h >= 0.0) {
        return Err(CertificateError::InvalidArgument(format!(
            "h must be non-negative, got {h}"
        )));
    }
    if h > a {
        return Err(CertificateError::HOutOfRange { h, a });
    }
    if !(1..=MAX_SEQUENCE_LENGTH).contains(&k_max) {
        return Err(CertificateError::InvalidArgument(format!(
            "k_max must be in 1..={MAX_SEQUENCE_LENGTH}, got {k_max}"
        )));
    }

    let n_of = |q: f64| 1.0 + 0.5 * (1.0 + q) * (1.0 + q);
    let first = BoundRow {
        k: 1,
        alpha: 1.0,
        beta: 0.5,
        a_k: 1.0,
        c: 1.0 + h,
        epsilon: 1.0,
        q: h,
        gamma: 1.0,
        n_k: n_of(h),
        residual_factor: 0.5 * h,
        overflow: false,
        underflow: false,
    };
    let mut rows = vec![first];
    for k in 2..=k_max {
        let prev = *rows.last().expect("non-empty");
        let alpha = prev.c * prev.beta;
        let beta = prev.a_k * prev.a_k * prev.beta + 0.5 * alpha * alpha;
        let a_k = prev.a_k * prev.a_k + alpha * prev.c;

        let epsilon = prev.c * prev.residual_factor;
        let q = prev.q * prev.q + prev.c * epsilon * h;
        let residual_factor = prev.q * prev.q * prev.residual_factor + 0.5 * epsilon * epsilon * h;
        let c = prev.c * (1.0 + q);
        rows.push(BoundRow {
            k,
            alpha,
            beta,
            a_k,
            c,
            epsilon,
            q,
            gamma: prev.gamma + epsilon,
            n_k: n_of(q),
            residual_factor,
            overflow: !(alpha.is_finite() && beta.is_finite() && a_k.is_finite()),
            underflow: h > 0.0 && (q == 0.0 || epsilon == 0.0),
        });
    }
    Ok(BoundSequences { h, rows })
}

impl BoundSequences {
    /// Whitespace-aligned table, one row per `k`.
    pub fn write_table<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "{:>3} {:>24} {:>24} {:>24} {:>24} {:>24} {:>24} {:>24} {:>24}",
            "k", "alpha", "beta", "A", "c", "epsilon", "q", "gamma", "N"
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{:>3} {:>24} {:>24} {:>24} {:>24} {:>24} {:>24} {:>24} {:>24}",
                r.k,
                sig17(r.alpha),
                sig17(r.beta),
                sig17(r.a_k),
                sig17(r.c),
                sig17(r.epsilon),
                sig17(r.q),
                sig17(r.gamma),
                sig17(r.n_k)
            )?;
        }
        Ok(())
    }
}

/// A closed ball `||x - center|| <= radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    pub label: String,
    pub center: DenseVector,
    pub radius: f64,
    pub norm: VectorNorm,
}

impl Ball {
    /// Conservative containment test: the enclosing cube `center +- radius`
    /// must lie in the box. Exact for max-norm balls.
    pub fn contained_in(&self, domain: &BoxDomain) -> bool {
        (0..self.center.dim()).all(|i| {
            domain.lower[i] <= self.center[i] - self.radius
                && self.center[i] + self.radius <= domain.upper[i]
        })
    }
}

impl Certificate {
    pub fn ball(&self, label: impl Into<String>) -> Ball {
        Ball {
            label: label.into(),
            center: self.ball_center.clone(),
            radius: self.ball_radius,
            norm: self.ball_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionEntry {
    pub ball: Ball,
    pub contained: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionGeometry {
    pub regions: Vec<RegionEntry>,
    pub domain: BoxDomain,
}

/// Balls `G0, G1, ...` from the given certificates, checked against the box.
pub fn region_geometry(
    certs: &[Certificate],
    domain: &BoxDomain,
) -> Result<RegionGeometry, CertificateError> {
    let balls = certs
        .iter()
        .enumerate()
        .map(|(i, c)| c.ball(format!("G{i}")))
        .collect();
    region_geometry_from_balls(balls, domain)
}

pub fn region_geometry_from_balls(
    balls: Vec<Ball>,
    domain: &BoxDomain,
) -> Result<RegionGeometry, CertificateError> {
    for b in &balls {
        if b.center.dim() != domain.dim() {
            return Err(CertificateError::InvalidArgument(format!(
                "ball {} has dimension {}, domain has {}",
                b.label,
                b.center.dim(),
                domain.dim()
            )));
        }
        if !(b.radius >= 0.0) {
            return Err(CertificateError::InvalidArgument(format!(
                "ball {} has invalid radius {}",
                b.label, b.radius
            )));
        }
    }
    let regions = balls
        .into_iter()
        .map(|ball| RegionEntry {
            contained: ball.contained_in(domain),
            ball,
        })
        .collect();
    Ok(RegionGeometry {
        regions,
        domain: domain.clone(),
    })
}

/// Existence ball `G0` around `x_0` from a passing certificate, and the
/// tighter ball `G1` around the first iterate `x_1` whose radius is the
/// a-priori bound on `||x_1 - x*||`.
pub fn existence_and_first_step_balls(
    cert: &Certificate,
    x1: &DenseVector,
) -> Result<Vec<Ball>, CertificateError> {
    let radius = apriori_error_bound(cert, 1)?;
    Ok(vec![
        cert.ball("G0"),
        Ball {
            label: "G1".into(),
            center: x1.clone(),
            radius,
            norm: cert.ball_norm,
        },
    ])
}

impl RegionGeometry {
    /// CSV `label,center_1..center_n,radius,contained`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let n = self.domain.dim();
        let mut header = vec!["label".to_string()];
        header.extend((1..=n).map(|i| format!("center_{i}")));
        header.push("radius".into());
        header.push("contained".into());
        writeln!(out, "{}", header.join(","))?;
        for r in &self.regions {
            let mut row = vec![r.ball.label.clone()];
            row.extend(r.ball.center.iter().map(|&v| sig17(v)));
            row.push(sig17(r.ball.radius));
            row.push(r.contained.to_string());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct BallJson {
    center: Vec<Num>,
    radius: Num,
    norm: VectorNorm,
}

#[derive(Serialize)]
struct DiagnosticsJson {
    #[serde(skip_serializing_if = "Option::is_none")]
    determinant: Option<Num>,
    #[serde(rename = "L", skip_serializing_if = "Option::is_none")]
    l: Option<Num>,
    #[serde(skip_serializing_if = "Option::is_none")]
    b_all_cofactors: Option<Num>,
    #[serde(skip_serializing_if = "Option::is_none")]
    b_max_row_sum: Option<Num>,
    #[serde(skip_serializing_if = "Option::is_none")]
    b_frobenius: Option<Num>,
    #[serde(skip_serializing_if = "Option::is_none")]
    u0_u0t: Option<Vec<Vec<Num>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eigenvalues: Option<Vec<Num>>,
    spectral_fallback: bool,
}

#[derive(Serialize)]
struct CertificateJson {
    theorem: Theorem,
    passed: bool,
    #[serde(rename = "B")]
    b: Num,
    eta: Num,
    #[serde(rename = "K")]
    k: Num,
    h: Num,
    a: Num,
    #[serde(rename = "S")]
    s: Num,
    #[serde(rename = "N1")]
    n1: Num,
    ball: BallJson,
    details: String,
    diagnostics: DiagnosticsJson,
}

impl Certificate {
    /// JSON report with 17-significant-digit numbers.
    pub fn to_json(&self) -> String {
        let d = &self.diagnostics;
        let report = CertificateJson {
            theorem: self.theorem,
            passed: self.passed,
            b: Num(self.b),
            eta: Num(self.eta),
            k: Num(self.k),
            h: Num(self.h),
            a: Num(self.a),
            s: Num(self.s),
            n1: Num(self.n1),
            ball: BallJson {
                center: nums(self.ball_center.as_slice()),
                radius: Num(self.ball_radius),
                norm: self.ball_norm,
            },
            details: self.details.clone(),
            diagnostics: DiagnosticsJson {
                determinant: d.determinant.map(Num),
                l: d.l.map(Num),
                b_all_cofactors: d.b_all_cofactors.map(Num),
                b_max_row_sum: d.b_max_row_sum.map(Num),
                b_frobenius: d.b_frobenius.map(Num),
                u0_u0t: d
                    .gram
                    .as_ref()
                    .map(|g| g.rows().iter().map(|r| nums(r)).collect()),
                eigenvalues: d.eigenvalues.as_deref().map(nums),
                spectral_fallback: d.spectral_fallback,
            },
        };
        serde_json::to_string_pretty(&report).expect("certificate serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::builtin_problem;
    use crate::solver::{inverse_free_start, step_inverse_free};

    fn center2(x: f64, y: f64) -> DenseVector {
        DenseVector::new(vec![x, y]).unwrap()
    }

    #[test]
    fn cubic_constant() {
        let c = kogan_constant();
        assert!(c.a > 0.477 && c.a < 0.478);
        assert!(kogan_cubic(c.a).abs() < 1e-14);
        // bracketing oracle
        assert!(kogan_cubic(0.477) < 0.0 && kogan_cubic(0.478) > 0.0);
        assert!((c.a - 0.47797).abs() < 1e-4);
        assert!(c.radius_factor > 1.0);
        assert!((c.radius_factor - 2.2036).abs() < 0.002);
        assert!((c.radius_factor * 0.11 * 0.476 - 0.115).abs() < 0.001);
    }

    #[test]
    fn theorem1_examples() {
        let c = theorem1_certificate(
            0.11,
            0.476,
            44.1235,
            center2(1.2, 1.7),
            VectorNorm::Euclidean,
        );
        assert!((c.h - 0.254).abs() < 1e-3, "{}", c.h);
        assert!(c.passed);
        assert!((c.ball_radius - 0.115).abs() < 1e-3);

        let c = theorem1_certificate(3.0, 0.0, 10.0, center2(0.0, 0.0), VectorNorm::Max);
        assert_eq!((c.h, c.passed, c.ball_radius), (0.0, true, 0.0));

        let c = theorem1_certificate(0.27, 0.434, 62.4, center2(1.2, 1.7), VectorNorm::Max);
        assert!((c.h - 1.974).abs() < 1e-3, "{}", c.h);
        assert!(!c.passed);
        assert!(c.details.contains("fails"));
    }

    #[test]
    fn s_n1_identity() {
        for h in [0.0, 0.1, 0.254, kogan_constant().a, 2.0, 10.0] {
            let (s, n1) = s_and_n1(h);
            assert!((s * n1 - (1.0 + h)).abs() < 1e-14 * (1.0 + h));
        }
    }

    #[test]
    fn theorem2_paper_example() {
        let p = builtin_problem("paper_example").unwrap();
        let c = theorem2_certificate(&p, 15.6).unwrap();
        assert!((c.eta - 0.434).abs() < 1e-12);
        assert!(c.b <= 0.27 && (c.b - 0.269).abs() < 1e-3, "{}", c.b);
        assert_eq!(c.k, 62.4);
        assert!(c.h > c.a && !c.passed);
        // Max-row-sum norm of U0: rows (9.404, 3.4) and (4.913, 8.64) over det.
        let row_sum = c.diagnostics.b_max_row_sum.unwrap();
        assert!(
            (row_sum - (4.913 + 8.64) / 97.95476).abs() < 1e-12,
            "{row_sum}"
        );
        assert!(c.details.contains("max-row-sum"));
    }

    #[test]
    fn theorem2_linear_passes() {
        let p = builtin_problem("linear_2x2").unwrap();
        let c = theorem2_certificate(&p, 0.0).unwrap();
        assert_eq!(c.h, 0.0);
        assert!(c.passed);
    }

    #[test]
    fn theorem3_paper_example() {
        let p = builtin_problem("paper_example").unwrap();
        let c = theorem3_certificate(&p, 15.6).unwrap();
        assert!((c.eta - 0.476).abs() < 1e-3);
        let g = c.diagnostics.gram.as_ref().unwrap();
        assert!((g[(0, 0)] - 0.010421).abs() < 2e-6);
        assert!((g[(0, 1)] + 0.001753).abs() < 2e-6);
        assert!((g[(1, 1)] - 0.010295).abs() < 2e-6);
        assert!((c.b - 0.11).abs() < 1e-3);
        assert!(c.k < 44.1235);
        assert!(c.passed && c.h < c.a);
        assert!((c.ball_radius - 0.115).abs() < 1e-3);
        assert_eq!(c.ball_norm, VectorNorm::Euclidean);
    }

    #[test]
    fn theorem3_trivial_identity() {
        let p = crate::problem::parse_problem(
            r#"{"name":"id","variables":["x1","x2"],"equations":["x1","x2"],
                "initial_point":[0,0],"domain":{"lower":[-1,-1],"upper":[1,1]}}"#,
        )
        .unwrap();
        let c = theorem3_certificate(&p, 0.0).unwrap();
        assert!(c.passed);
        assert_eq!(c.ball_radius, 0.0);
        assert_eq!(c.b, 1.0);
    }

    #[test]
    fn theorem3_at_first_iterate() {
        let p = builtin_problem("paper_example").unwrap();
        let s0 = inverse_free_start(&p, VectorNorm::Euclidean).unwrap();
        let s1 = step_inverse_free(&p, &s0, VectorNorm::Euclidean).unwrap();
        let c0 = theorem3_certificate(&p, 15.6).unwrap();
        let c1 = certify_at(&p, Theorem::T3, &s1.x, 15.6, VectorNorm::Euclidean).unwrap();
        assert!(c1.passed);
        assert!(c1.ball_radius < c0.ball_radius);
        // eta drops by two orders of magnitude, so does the fresh radius
        assert!(c1.ball_radius < 0.0025, "{}", c1.ball_radius);
        // G1 as drawn around x1 is the a-priori bound from the x0 certificate
        let g1 = apriori_error_bound(&c0, 1).unwrap();
        assert!((g1 - 0.028).abs() < 5e-4, "{g1}");
    }

    #[test]
    fn singular_jacobian_is_an_error() {
        let p = crate::problem::parse_problem(
            r#"{"name":"sing","variables":["x1","x2"],"equations":["x1^2 - 1","x2^2 - 1"],
                "initial_point":[0, 0.5],"domain":{"lower":[-2,-2],"upper":[2,2]}}"#,
        )
        .unwrap();
        assert!(matches!(
            theorem2_certificate(&p, 2.0),
            Err(CertificateError::Problem(ProblemError::Linalg(
                LinalgError::SingularMatrix { .. }
            )))
        ));
    }

    #[test]
    fn newton_kantorovich_examples() {
        let c = newton_kantorovich_certificate(1.0, 2.0, 0.25, center2(0.0, 0.0), VectorNorm::Max);
        assert_eq!(c.h, 0.5);
        assert!(c.passed);
        assert_eq!(c.ball_radius, 4.0);

        let c = newton_kantorovich_certificate(
            0.11,
            0.476,
            44.1235,
            center2(1.2, 1.7),
            VectorNorm::Euclidean,
        );
        assert!((c.h - 0.11 * 0.476 * 44.1235).abs() < 1e-15);
        // 0.11 * 0.476 * 44.1235 = 2.3103..., well above 1/2
        assert!((c.h - 2.3103).abs() < 1e-3, "{}", c.h);
        assert!(!c.passed);
        assert!(c.ball_radius.is_nan());

        let c = newton_kantorovich_certificate(1.0, 0.0, 1.0, center2(0.0, 0.0), VectorNorm::Max);
        assert!(c.passed);
        assert_eq!(c.ball_radius, 0.0);

        let c = newton_kantorovich_certificate(1.0, 1.0, 1.0, center2(0.0, 0.0), VectorNorm::Max);
        assert!(!c.passed);
        assert!(c.ball_radius.is_nan());
        assert!(matches!(
            apriori_error_bound(&c, 1),
            Err(CertificateError::CertificateFailed(Theorem::NK))
        ));
    }

    #[test]
    fn newton_kantorovich_radius_is_continuous_at_zero() {
        let near =
            newton_kantorovich_certificate(1.0, 1.0, 1e-9, center2(0.0, 0.0), VectorNorm::Max);
        assert!((near.ball_radius - 1.0).abs() < 1e-6);
    }

    #[test]
    fn apriori_bounds() {
        let p = builtin_problem("paper_example").unwrap();
        let c = theorem3_certificate(&p, 15.6).unwrap();
        let b1 = apriori_error_bound(&c, 1).unwrap();
        let b2 = apriori_error_bound(&c, 2).unwrap();
        // direct evaluation of the closed form
        let h = c.h;
        let (s, n1) = s_and_n1(h);
        let expected2 = h * (1.0 + h) / 2.0 * s / (1.0 - s) * (n1 * h).powi(2) * c.b * c.eta;
        assert!((b2 - expected2).abs() < 1e-15);
        assert!(b2 < b1);
        let mut previous = b1;
        for n in 2..12 {
            let b = apriori_error_bound(&c, n).unwrap();
            assert!(b < previous || b == 0.0);
            previous = b;
        }
        assert!(matches!(
            apriori_error_bound(&c, 0),
            Err(CertificateError::InvalidArgument(_))
        ));

        let zero = theorem1_certificate(1.0, 0.0, 1.0, center2(0.0, 0.0), VectorNorm::Max);
        for n in 1..5 {
            assert_eq!(apriori_error_bound(&zero, n).unwrap(), 0.0);
        }

        let nk = newton_kantorovich_certificate(1.0, 2.0, 0.25, center2(0.0, 0.0), VectorNorm::Max);
        for n in 1..8u32 {
            let expected = 2.0 / 2f64.powi(n as i32 - 1);
            assert_eq!(apriori_error_bound(&nk, n).unwrap(), expected);
        }

        let failed = theorem1_certificate(1.0, 1.0, 1.0, center2(0.0, 0.0), VectorNorm::Max);
        assert!(matches!(
            apriori_error_bound(&failed, 1),
            Err(CertificateError::CertificateFailed(Theorem::T1))
        ));
    }

    #[test]
    fn bound_sequence_first_row_and_recurrences() {
        let h = 0.254;
        let seq = bound_sequences(h, 12).unwrap();
        let r1 = seq.rows[0];
        assert_eq!((r1.alpha, r1.beta, r1.c, r1.a_k), (1.0, 0.5, 1.0 + h, 1.0));
        for w in seq.rows.windows(2) {
            let (p, r) = (w[0], w[1]);
            assert_eq!(r.alpha, p.c * p.beta);
            assert_eq!(r.beta, p.a_k * p.a_k * p.beta + 0.5 * r.alpha * r.alpha);
            assert_eq!(r.a_k, p.a_k * p.a_k + r.alpha * p.c);
            assert_eq!(r.c, p.c * (1.0 + r.q));
            assert_eq!(r.gamma, p.gamma + r.epsilon);
            assert_eq!(r.n_k, 1.0 + 0.5 * (1.0 + r.q).powi(2));
        }
        // the scaled route agrees with the raw definitions while those are finite
        for r in seq.rows.iter().filter(|r| !r.overflow) {
            let e = 2f64.powi(r.k as i32 - 1);
            let eps = r.alpha * h.powf(e - 1.0);
            let q = r.a_k * h.powf(e);
            let c = (r.c - seq.rows[0].c).abs();
            if eps > 1e-280 {
                assert!(
                    (eps - r.epsilon).abs() <= 1e-12 * eps,
                    "k={} {eps} vs {}",
                    r.k,
                    r.epsilon
                );
            }
            if q > 1e-280 {
                assert!((q - r.q).abs() <= 1e-12 * q, "k={} {q} vs {}", r.k, r.q);
            }
            let _ = c;
        }
    }

    #[test]
    fn bound_sequences_paper_h() {
        let seq = bound_sequences(0.254, 10).unwrap();
        let rf = kogan_constant().radius_factor;
        for w in seq.rows.windows(2) {
            assert!(w[1].q < w[0].q || w[1].q == 0.0);
        }
        for r in &seq.rows {
            assert!(r.n_k * r.q <= 1.0);
        }
        assert!(seq.rows[9].gamma <= rf);
    }

    #[test]
    fn bound_sequences_edge_values() {
        let a = kogan_constant().a;
        let seq = bound_sequences(a, 5).unwrap();
        let r1 = seq.rows[0];
        assert!((r1.n_k * r1.q - 1.0).abs() < 1e-12);
        assert!(((a.powi(3) + 2.0 * a * a + 3.0 * a) / 2.0 - 1.0).abs() < 1e-12);

        let zero = bound_sequences(0.0, 6).unwrap();
        assert_eq!(zero.rows[0].epsilon, 1.0);
        assert!(zero.rows.iter().all(|r| r.q == 0.0 && r.gamma == 1.0));
        assert!(zero.rows.iter().all(|r| !r.underflow));

        assert!(matches!(
            bound_sequences(0.5, 5),
            Err(CertificateError::HOutOfRange { .. })
        ));
        assert!(bound_sequences(0.1, 0).is_err());
        assert!(bound_sequences(0.1, 31).is_err());
        assert!(bound_sequences(-0.1, 3).is_err());

        let long = bound_sequences(a, 30).unwrap();
        assert!(long.rows.iter().any(|r| r.overflow));
        assert!(long
            .rows
            .iter()
            .all(|r| r.gamma.is_finite() && r.q.is_finite()));
    }

    #[test]
    fn region_containment() {
        let domain = builtin_problem("paper_example").unwrap().domain().clone();
        let g0 = Ball {
            label: "G0".into(),
            center: center2(1.2, 1.7),
            radius: 0.115,
            norm: VectorNorm::Euclidean,
        };
        let g1 = Ball {
            label: "G1".into(),
            center: center2(1.23488, 1.660982),
            radius: 0.028,
            norm: VectorNorm::Euclidean,
        };
        let point = Ball {
            label: "P".into(),
            center: center2(0.5, 0.5),
            radius: 0.0,
            norm: VectorNorm::Max,
        };
        let geo = region_geometry_from_balls(vec![g0, g1, point], &domain).unwrap();
        let flags: Vec<bool> = geo.regions.iter().map(|r| r.contained).collect();
        assert_eq!(flags, vec![false, true, true]);

        let mut buf = Vec::new();
        geo.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("label,center_1,center_2,radius,contained\n"));
        assert!(text
            .contains("G0,1.2000000000000000e0,1.7000000000000000e0,1.1500000000000000e-1,false"));
    }

    #[test]
    fn region_geometry_from_certificates_labels() {
        let p = builtin_problem("paper_example").unwrap();
        let c = theorem3_certificate(&p, 15.6).unwrap();
        let geo = region_geometry(&[c.clone(), c], p.domain()).unwrap();
        assert_eq!(geo.regions[0].ball.label, "G0");
        assert_eq!(geo.regions[1].ball.label, "G1");
    }

    #[test]
    fn certificate_json_shape() {
        let p = builtin_problem("paper_example").unwrap();
        let c = theorem3_certificate(&p, 15.6).unwrap();
        let v: serde_json::Value = serde_json::from_str(&c.to_json()).unwrap();
        for key in [
            "theorem", "passed", "B", "eta", "K", "h", "a", "S", "N1", "ball", "details",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["theorem"], "T3");
        assert_eq!(v["ball"]["norm"], "euclidean");
        assert_eq!(v["passed"], true);
        assert_eq!(v["B"].as_f64().unwrap(), c.b);
    }
}
