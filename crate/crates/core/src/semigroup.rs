//! Evaluation of `e^{-tA}`, its inverse `e^{tA}`, and the diagnostics built on them.

use std::fmt;

use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{c, condition_number, expm, CMatrix, CVector, EigenBasis, C64};
use crate::triple::{Backend, CoerciveOperator};

/// Eigenvector conditioning above which the matrix backend falls back to
/// scaling and squaring.
pub const EIGENVECTOR_CONDITION_LIMIT: f64 = 1e6;
pub const SCALING_SQUARING_TOL: f64 = 1e-13;
/// Guard on `t·λ` used when exponentiating a full matrix.
pub const OVERFLOW_EXPONENT: f64 = 700.0;

const LN_MAX: f64 = 709.782712893384;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpmMethod {
    Eigendecomposition,
    ScalingAndSquaring,
}

#[derive(Debug, Clone)]
pub struct SemigroupEvaluator {
    op: CoerciveOperator,
    method: ExpmMethod,
    expm_tol: f64,
    dense: CMatrix,
    eigen: Option<EigenBasis>,
}

/// Modes removed by a spectral cutoff in [`SemigroupEvaluator::evolve_inverse`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffReport {
    pub threshold: f64,
    pub zeroed_modes: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct InverseEvolution {
    pub value: CVector,
    /// Amplification of roundoff, `e^{t(λmax - λmin)}` over the retained modes
    /// (spectral) or the condition number of `e^{tA}` (matrix).
    pub kappa: f64,
    pub cutoff: Option<CutoffReport>,
}

impl SemigroupEvaluator {
    /// Picks the eigendecomposition when it is well conditioned.
    pub fn new(op: CoerciveOperator) -> Self {
        let dense = op.dense();
        match op.backend() {
            Backend::Spectral { .. } => SemigroupEvaluator {
                op,
                method: ExpmMethod::Eigendecomposition,
                expm_tol: 4.0 * f64::EPSILON,
                dense,
                eigen: None,
            },
            Backend::Matrix { matrix } => match EigenBasis::new(matrix) {
                Some(basis) if basis.condition < EIGENVECTOR_CONDITION_LIMIT => SemigroupEvaluator {
                    method: ExpmMethod::Eigendecomposition,
                    expm_tol: SCALING_SQUARING_TOL * basis.condition,
                    eigen: Some(basis),
                    dense,
                    op,
                },
                _ => SemigroupEvaluator {
                    method: ExpmMethod::ScalingAndSquaring,
                    expm_tol: SCALING_SQUARING_TOL,
                    eigen: None,
                    dense,
                    op,
                },
            },
        }
    }

    /// Forces a method; the eigendecomposition is refused for defective matrices.
    pub fn with_method(op: CoerciveOperator, method: ExpmMethod) -> Result<Self> {
        let mut ev = Self::new(op);
        match (method, ev.op.backend()) {
            (ExpmMethod::ScalingAndSquaring, Backend::Matrix { .. }) => {
                ev.method = method;
                ev.expm_tol = SCALING_SQUARING_TOL;
                ev.eigen = None;
            }
            (ExpmMethod::Eigendecomposition, Backend::Matrix { matrix }) if ev.eigen.is_none() => {
                let basis = EigenBasis::new(matrix)
                    .ok_or_else(|| Error::Unsupported("matrix is numerically defective".into()))?;
                ev.expm_tol = SCALING_SQUARING_TOL * basis.condition;
                ev.eigen = Some(basis);
                ev.method = method;
            }
            (ExpmMethod::ScalingAndSquaring, Backend::Spectral { .. }) => {
                return Err(Error::Unsupported(
                    "spectral backend is always evaluated mode by mode".into(),
                ))
            }
            _ => {}
        }
        Ok(ev)
    }

    pub fn op(&self) -> &CoerciveOperator {
        &self.op
    }

    pub fn method(&self) -> ExpmMethod {
        self.method
    }

    pub fn expm_tol(&self) -> f64 {
        self.expm_tol
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    /// Eigenvalues of `A` (exact for the spectral backend).
    pub fn spectrum(&self) -> Vec<C64> {
        match (self.op.backend(), &self.eigen) {
            (Backend::Spectral { eigenvalues }, _) => eigenvalues.iter().map(|&l| c(l)).collect(),
            (_, Some(basis)) => basis.values.clone(),
            (Backend::Matrix { matrix }, None) => {
                let (_, t) = matrix.clone().schur().unpack();
                (0..t.nrows()).map(|i| t[(i, i)]).collect()
            }
        }
    }

    fn check_time(t: f64) -> Result<()> {
        if t >= 0.0 && t.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "time must be finite and nonnegative, got {t}"
            )))
        }
    }

    /// The matrix of `e^{-tA}`.
    pub fn propagator(&self, t: f64) -> Result<CMatrix> {
        Self::check_time(t)?;
        Ok(self.exponential(-t))
    }

    /// The matrix of `e^{tA}`, computed by exponentiating `+tA`.
    pub fn inverse_propagator(&self, t: f64) -> Result<CMatrix> {
        Self::check_time(t)?;
        self.guard_matrix_overflow(t)?;
        Ok(self.exponential(t))
    }

    fn exponential(&self, s: f64) -> CMatrix {
        match (self.op.backend(), &self.eigen) {
            (Backend::Spectral { eigenvalues }, _) => CMatrix::from_diagonal(&CVector::from_iterator(
                eigenvalues.len(),
                eigenvalues.iter().map(|l| c((s * l).exp())),
            )),
            (_, Some(basis)) => basis.apply_function(|z| (z * s).exp()),
            _ => expm(&self.dense.scale(s)),
        }
    }

    fn guard_matrix_overflow(&self, t: f64) -> Result<()> {
        if let Backend::Matrix { .. } = self.op.backend() {
            for (mode, z) in self.spectrum().iter().enumerate() {
                if t * z.re > OVERFLOW_EXPONENT {
                    return Err(Error::Overflow {
                        mode,
                        log_magnitude: t * z.re,
                    });
                }
            }
        }
        Ok(())
    }

    /// `e^{-tA} x`.
    pub fn evolve(&self, t: f64, x: &CVector) -> Result<CVector> {
        Self::check_time(t)?;
        check_dim(self.dim(), x.len())?;
        Ok(match (self.op.backend(), &self.eigen) {
            (Backend::Spectral { eigenvalues }, _) => {
                CVector::from_iterator(x.len(), x.iter().zip(eigenvalues).map(|(z, l)| z * (-t * l).exp()))
            }
            (_, Some(basis)) => {
                let y = &basis.inverse * x;
                let scaled =
                    CVector::from_iterator(y.len(), y.iter().zip(&basis.values).map(|(z, l)| z * (l * -t).exp()));
                &basis.vectors * scaled
            }
            _ => expm(&self.dense.scale(-t)) * x,
        })
    }

    /// `e^{tA} x`, optionally zeroing modes with eigenvalue (real part) above `cutoff`.
    ///
    /// A mode overflows when its amplified coefficient leaves the double range;
    /// zero coefficients never overflow.
    pub fn evolve_inverse(&self, t: f64, x: &CVector, cutoff: Option<f64>) -> Result<InverseEvolution> {
        Self::check_time(t)?;
        check_dim(self.dim(), x.len())?;
        let (coeffs, values): (Vec<C64>, Vec<C64>) = match (self.op.backend(), &self.eigen) {
            (Backend::Spectral { eigenvalues }, _) => {
                (x.iter().copied().collect(), eigenvalues.iter().map(|&l| c(l)).collect())
            }
            (_, Some(basis)) => ((&basis.inverse * x).iter().copied().collect(), basis.values.clone()),
            _ => {
                if cutoff.is_some() {
                    return Err(Error::Unsupported("spectral cutoff needs an eigendecomposition".into()));
                }
                let e = self.inverse_propagator(t)?;
                let kappa = condition_number(&e);
                return Ok(InverseEvolution {
                    value: e * x,
                    kappa,
                    cutoff: None,
                });
            }
        };

        let mut zeroed = Vec::new();
        let mut scaled = Vec::with_capacity(coeffs.len());
        for (j, (z, l)) in coeffs.iter().zip(&values).enumerate() {
            if cutoff.is_some_and(|cut| l.re > cut) {
                zeroed.push(j);
                scaled.push(c(0.0));
                continue;
            }
            scaled.push(amplify(*z, *l, t, j)?);
        }
        let retained: Vec<f64> = values
            .iter()
            .enumerate()
            .filter(|(j, _)| !zeroed.contains(j))
            .map(|(_, l)| l.re)
            .collect();
        let kappa = match &self.eigen {
            Some(basis) if !matches!(self.op.backend(), Backend::Spectral { .. }) => {
                spread_exp(&retained, t) * basis.condition
            }
            _ => spread_exp(&retained, t),
        };
        let scaled = CVector::from_vec(scaled);
        let value = match &self.eigen {
            Some(basis) if !matches!(self.op.backend(), Backend::Spectral { .. }) => &basis.vectors * scaled,
            _ => scaled,
        };
        Ok(InverseEvolution {
            value,
            kappa,
            cutoff: cutoff.map(|threshold| CutoffReport {
                threshold,
                zeroed_modes: zeroed,
            }),
        })
    }

    /// `κ(t) = e^{t(λmax - λmin)}` for the spectral backend, the condition
    /// number of `e^{tA}` for the matrix backend.
    pub fn amplification(&self, t: f64) -> f64 {
        match self.op.backend() {
            Backend::Spectral { eigenvalues } => spread_exp(eigenvalues, t),
            Backend::Matrix { .. } => match self.inverse_propagator(t) {
                Ok(e) => condition_number(&e),
                Err(_) => f64::INFINITY,
            },
        }
    }
}

fn spread_exp(values: &[f64], t: f64) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if values.is_empty() {
        1.0
    } else {
        (t * (max - min)).exp()
    }
}

fn amplify(z: C64, lambda: C64, t: f64, mode: usize) -> Result<C64> {
    if z == c(0.0) {
        return Ok(z);
    }
    let exponent = lambda * t;
    let log_magnitude = z.norm().ln() + exponent.re;
    if log_magnitude > LN_MAX {
        return Err(Error::Overflow { mode, log_magnitude });
    }
    if exponent.re <= OVERFLOW_EXPONENT {
        Ok(z * exponent.exp())
    } else {
        // e^{tλ} alone overflows although the product fits
        let phase = z / z.norm() * C64::new(0.0, exponent.im).exp();
        Ok(phase * log_magnitude.exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainVerdict {
    InDomain,
    Diverging,
    Inconclusive,
}

impl fmt::Display for DomainVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainVerdict::InDomain => "in_domain",
            DomainVerdict::Diverging => "diverging",
            DomainVerdict::Inconclusive => "inconclusive",
        })
    }
}

/// Thresholds of the truncation-refinement test for membership in `D(e^{tA})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainTolerances {
    /// Relative change of the graph norm between the two finest levels that
    /// counts as converged.
    pub domain_tol: f64,
    /// Per-level growth factor that counts as divergence.
    pub growth_threshold: f64,
    /// Condition limit for the single-level matrix test.
    pub kappa_max: f64,
}

impl Default for DomainTolerances {
    fn default() -> Self {
        DomainTolerances {
            domain_tol: 1e-3,
            growth_threshold: 10.0,
            kappa_max: 1e12,
        }
    }
}

/// Graph norms `(|x_N|² + |e^{tA_N} x_N|²)^{1/2}` of the truncations of `x`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainDiagnostic {
    pub t: f64,
    pub levels: Vec<usize>,
    /// May be `inf` where the amplified vector leaves the double range.
    pub graph_norms: Vec<f64>,
    /// Natural logarithms of `graph_norms`, finite even past overflow.
    pub log_graph_norms: Vec<f64>,
    pub verdict: DomainVerdict,
    /// `ln κ(t)` at the finest level.
    pub log_condition: f64,
    /// First mode whose amplified coefficient overflows.
    pub overflow_mode: Option<usize>,
}

impl DomainDiagnostic {
    pub fn condition_number(&self) -> f64 {
        self.log_condition.exp()
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Log graph norms across truncation levels for a diagonal generator, with
/// `|x|² = Σ w_j |x_j|²`.
pub(crate) fn spectral_graph_norms(
    eigenvalues: &[f64],
    weights: &[f64],
    x: &CVector,
    t: f64,
    levels: &[usize],
) -> (Vec<f64>, Vec<f64>, Option<usize>) {
    let mut overflow = None;
    let mut terms = Vec::new();
    let mut base_terms = Vec::new();
    let mut out = Vec::with_capacity(levels.len());
    let mut bases = Vec::with_capacity(levels.len());
    let mut next = 0;
    for &level in levels {
        while next < level {
            let z = x[next].norm();
            if z > 0.0 {
                let lz = z.ln();
                let amplified = lz + t * eigenvalues[next];
                if amplified > LN_MAX && overflow.is_none() {
                    overflow = Some(next);
                }
                let lw = weights[next].ln();
                terms.push(2.0 * lz + lw);
                terms.push(2.0 * amplified + lw);
                base_terms.push(2.0 * lz + lw);
            }
            next += 1;
        }
        out.push(0.5 * log_sum_exp(&terms));
        bases.push(0.5 * log_sum_exp(&base_terms));
    }
    (out, bases, overflow)
}

/// Verdict from a refinement sequence of log graph norms `ln G_i` and log
/// norms `ln |x_i|` of the truncated vectors.
///
/// Diverging when a mode overflows or some refinement multiplies the graph
/// norm by more than `growth_threshold`. In the domain when the finest
/// relative increment is below `domain_tol` or every refinement grows the
/// graph norm by at most `sqrt(growth_threshold)`. With a single informative
/// level the amplification `G/|x|` is compared with `kappa_max` instead.
/// Anything else is inconclusive.
pub(crate) fn classify_sequence(
    log_norms: &[f64],
    log_bases: &[f64],
    overflow: Option<usize>,
    tol: &DomainTolerances,
) -> DomainVerdict {
    if overflow.is_some() {
        return DomainVerdict::Diverging;
    }
    // levels below the first nonzero coefficient carry no information
    let skip = log_norms.iter().take_while(|l| **l == f64::NEG_INFINITY).count();
    let (log_norms, log_bases) = (&log_norms[skip..], &log_bases[skip..]);
    let m = log_norms.len();
    if m == 0 {
        return DomainVerdict::InDomain;
    }
    if m == 1 {
        return if log_norms[0] - log_bases[0] <= tol.kappa_max.ln() {
            DomainVerdict::InDomain
        } else {
            DomainVerdict::Diverging
        };
    }
    let ln_growth = tol.growth_threshold.ln();
    let steps: Vec<f64> = log_norms.windows(2).map(|w| w[1] - w[0]).collect();
    if steps.iter().any(|s| *s > ln_growth) {
        return DomainVerdict::Diverging;
    }
    let finest_increment = -(-steps[m - 2]).exp_m1();
    if finest_increment.abs() < tol.domain_tol || steps.iter().all(|s| *s <= 0.5 * ln_growth) {
        return DomainVerdict::InDomain;
    }
    DomainVerdict::Inconclusive
}

/// Single-level matrix test: the graph norm of `x` and a verdict from the
/// conditioning of `e^{tA}`.
pub(crate) fn matrix_domain_diagnostic(
    ev: &SemigroupEvaluator,
    x: &CVector,
    t: f64,
    tol: &DomainTolerances,
) -> DomainDiagnostic {
    let n = ev.dim();
    let h = ev.op().triple();
    let (log_norm, kappa, overflow) = match ev.evolve_inverse(t, x, None) {
        Ok(inv) => {
            let g = (h.h_norm(x).powi(2) + h.h_norm(&inv.value).powi(2)).sqrt();
            (g.ln(), inv.kappa, None)
        }
        Err(Error::Overflow { mode, log_magnitude }) => (log_magnitude, f64::INFINITY, Some(mode)),
        Err(_) => (f64::INFINITY, f64::INFINITY, None),
    };
    let verdict = if overflow.is_none() && kappa.is_finite() && kappa <= tol.kappa_max && log_norm.is_finite() {
        DomainVerdict::InDomain
    } else {
        DomainVerdict::Diverging
    };
    DomainDiagnostic {
        t,
        levels: vec![n],
        graph_norms: vec![log_norm.exp()],
        log_graph_norms: vec![log_norm],
        verdict,
        log_condition: kappa.ln(),
        overflow_mode: overflow,
    }
}

/// Probes the strict inclusion `D(e^{t'A}) ⊂ D(e^{tA})` with the vector
/// `x_j = coeff(j, λ_j)` at increasing truncation levels.
///
/// For an unbounded spectrum and `x_j = e^{-tλ_j}/(1+j)` the graph norms at
/// `t` stay bounded while those at `t'` blow up.
pub fn domain_chain_probe(
    ev: &SemigroupEvaluator,
    t: f64,
    t_prime: f64,
    levels: &[usize],
    coeff: impl Fn(usize, f64) -> f64,
    tol: &DomainTolerances,
) -> Result<(DomainDiagnostic, DomainDiagnostic)> {
    if !(t_prime > t) {
        return Err(Error::InvalidArgument(format!(
            "need t' > t, got t = {t}, t' = {t_prime}"
        )));
    }
    SemigroupEvaluator::check_time(t)?;
    match ev.op().backend() {
        Backend::Spectral { eigenvalues } => {
            check_levels(levels, eigenvalues.len())?;
            let weights = h_weights(ev)?;
            let x = CVector::from_iterator(
                eigenvalues.len(),
                eigenvalues.iter().enumerate().map(|(j, &l)| c(coeff(j, l))),
            );
            let lmin = eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            let probe = |s: f64| {
                let (logs, bases, overflow) = spectral_graph_norms(eigenvalues, weights, &x, s, levels);
                let finest = *levels.last().expect("levels nonempty");
                let lmax = eigenvalues[..finest].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                DomainDiagnostic {
                    t: s,
                    levels: levels.to_vec(),
                    graph_norms: logs.iter().map(|l| l.exp()).collect(),
                    verdict: classify_sequence(&logs, &bases, overflow, tol),
                    log_graph_norms: logs,
                    log_condition: s * (lmax - lmin),
                    overflow_mode: overflow,
                }
            };
            Ok((probe(t), probe(t_prime)))
        }
        Backend::Matrix { .. } => {
            let values = ev.spectrum();
            let x = CVector::from_iterator(ev.dim(), values.iter().enumerate().map(|(j, l)| c(coeff(j, l.re))));
            Ok((
                matrix_domain_diagnostic(ev, &x, t, tol),
                matrix_domain_diagnostic(ev, &x, t_prime, tol),
            ))
        }
    }
}

pub(crate) fn h_weights(ev: &SemigroupEvaluator) -> Result<&[f64]> {
    ev.op()
        .triple()
        .h_weights()
        .ok_or_else(|| Error::Unsupported("truncation probes need diagonal Gram tables".into()))
}

pub(crate) fn check_levels(levels: &[usize], n: usize) -> Result<()> {
    if levels.is_empty() || levels.windows(2).any(|w| w[0] >= w[1]) || levels[0] == 0 {
        return Err(Error::InvalidArgument(
            "levels must be positive and strictly increasing".into(),
        ));
    }
    if *levels.last().unwrap() > n {
        return Err(Error::InsufficientSpectrum {
            needed: *levels.last().unwrap(),
            found: n,
        });
    }
    Ok(())
}

/// The height `h(t) = |e^{-tA}u0|` and its first two derivatives.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeightProfile {
    pub grid: Vec<f64>,
    pub h: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    /// `(log h)'' = (h'' h - h'^2) / h^2` at each grid time.
    pub log_curvature: Vec<f64>,
    pub logconv_margin: f64,
}

/// `h`, `h'`, `h''` from the closed formulas in terms of `A` and `u(t)`.
pub fn height_profile(ev: &SemigroupEvaluator, u0: &CVector, grid: &[f64]) -> Result<HeightProfile> {
    let triple = ev.op().triple();
    if triple.h_norm(u0) == 0.0 {
        return Err(Error::InvalidArgument("height profile needs u0 ≠ 0".into()));
    }
    let mut out = HeightProfile {
        grid: grid.to_vec(),
        h: Vec::with_capacity(grid.len()),
        h1: Vec::with_capacity(grid.len()),
        h2: Vec::with_capacity(grid.len()),
        log_curvature: Vec::with_capacity(grid.len()),
        logconv_margin: f64::INFINITY,
    };
    for &t in grid {
        let u = ev.evolve(t, u0)?;
        let au = ev.op().apply(&u);
        let aau = ev.op().apply(&au);
        let h = triple.h_norm(&u);
        let re_au_u = triple.h_inner(&au, &u).re;
        let re_aau_u = triple.h_inner(&aau, &u).re;
        let au2 = triple.h_norm(&au).powi(2);
        let h1 = -re_au_u / h;
        let h2 = (re_aau_u + au2) / h - re_au_u * re_au_u / h.powi(3);
        let curvature = (h2 * h - h1 * h1) / (h * h);
        out.h.push(h);
        out.h1.push(h1);
        out.h2.push(h2);
        out.log_curvature.push(curvature);
        out.logconv_margin = out.logconv_margin.min(curvature);
    }
    Ok(out)
}

/// `Re⟨A²x,x⟩|x|² + |Ax|²|x|² - 2(Re⟨Ax,x⟩)²`; nonnegative exactly when
/// `log h` is convex at `x`.
pub fn logconv_criterion(op: &CoerciveOperator, x: &CVector) -> Result<f64> {
    check_dim(op.dim(), x.len())?;
    let triple = op.triple();
    let ax = op.apply(x);
    let aax = op.apply(&ax);
    let x2 = triple.h_norm(x).powi(2);
    let re_ax_x = triple.h_inner(&ax, x).re;
    Ok(triple.h_inner(&aax, x).re * x2 + triple.h_norm(&ax).powi(2) * x2 - 2.0 * re_ax_x * re_ax_x)
}

/// Central second difference of `log |e^{-tA}u0|` at each interior time.
///
/// Uses evolution only, so it is independent of the closed formulas in
/// [`height_profile`].
pub fn log_height_second_difference(
    ev: &SemigroupEvaluator,
    u0: &CVector,
    times: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    let triple = ev.op().triple();
    let log_h = |t: f64| -> Result<f64> { Ok(triple.h_norm(&ev.evolve(t, u0)?).ln()) };
    times
        .iter()
        .map(|&t| {
            if t < step {
                return Err(Error::InvalidArgument(format!(
                    "time {t} closer to 0 than the step {step}"
                )));
            }
            Ok((log_h(t + step)? - 2.0 * log_h(t)? + log_h(t - step)?) / (step * step))
        })
        .collect()
}
