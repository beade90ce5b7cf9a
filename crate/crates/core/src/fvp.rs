//! Final value problems `u' + Au = f, u(T) = u_T`: the compatibility test,
//! recovery of `u(0)`, the solution operator and its round trips.

use rayon::prelude::*;
use serde::Serialize;

use crate::duhamel::{compute_yf, gronwall_prefactor, solve_forward_duhamel, QuadratureOptions};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{c, CVector};
use crate::quadrature::gl4;
use crate::sampling;
use crate::semigroup::{
    check_levels, classify_sequence, h_weights, matrix_domain_diagnostic, spectral_graph_norms, CutoffReport,
    DomainTolerances, DomainVerdict, SemigroupEvaluator,
};
use crate::source::SourceTerm;
use crate::trajectory::Trajectory;
use crate::triple::{Backend, CoerciveOperator, GelfandTriple};

/// Tag attached to solutions obtained with a spectral cutoff.
pub const REGULARIZED_TAG: &str = "regularized: outside the compatibility hypothesis";

#[derive(Debug, Clone)]
pub struct FvpData {
    pub f: SourceTerm,
    pub u_t: CVector,
    pub horizon: f64,
}

impl FvpData {
    pub fn new(f: SourceTerm, u_t: CVector, horizon: f64) -> Result<Self> {
        check_dim(f.dim(), u_t.len())?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if u_t.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidArgument("final state must be finite".into()));
        }
        if !f.spans(0.0, horizon) {
            return Err(Error::InvalidArgument(format!("source does not span [0, {horizon}]")));
        }
        Ok(FvpData { f, u_t, horizon })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FvpOptions {
    pub quadrature: QuadratureOptions,
    pub domain: DomainTolerances,
    /// Truncation levels of the spectral probe; `None` uses `N/4, N/2, N`.
    pub levels: Option<Vec<usize>>,
}

impl FvpOptions {
    fn levels_for(&self, n: usize) -> Vec<usize> {
        match &self.levels {
            Some(l) => l.clone(),
            None => {
                let mut l = vec![(n / 4).max(1), (n / 2).max(1), n];
                l.dedup();
                l
            }
        }
    }
}

/// Evidence for or against `u_T - y_f ∈ D(e^{TA})`.
#[derive(Debug, Clone, Serialize)]
pub struct CompatibilityReport {
    /// `u_T - y_f`
    #[serde(skip)]
    pub difference: CVector,
    /// `e^{TA}(u_T - y_f)` when the verdict is `in_domain`.
    #[serde(skip)]
    pub amplified: Option<CVector>,
    pub levels: Vec<usize>,
    pub graph_norms: Vec<f64>,
    pub log_graph_norms: Vec<f64>,
    /// Amplification of roundoff by `e^{TA}`; may be `inf` when only its log is representable.
    pub kappa: f64,
    pub log_kappa: f64,
    pub verdict: DomainVerdict,
    pub y_norm: Option<f64>,
    pub overflow_mode: Option<usize>,
    pub quadrature_warning: Option<String>,
}

/// `∫_0^T ‖f‖_*²`, exact for piecewise linear and piecewise constant sources.
pub fn source_dual_l2_sq(triple: &GelfandTriple, f: &SourceTerm, horizon: f64) -> f64 {
    let mut edges: Vec<f64> = f.times().iter().copied().filter(|&t| t > 0.0 && t < horizon).collect();
    edges.insert(0, 0.0);
    edges.push(horizon);
    edges
        .windows(2)
        .map(|w| {
            gl4(w[0], w[1])
                .iter()
                .map(|&(t, wt)| wt * triple.dual_norm(&f.at(t)).powi(2))
                .sum::<f64>()
        })
        .sum()
}

/// Diagnoses compatibility of final data with the truncation-refinement probe.
pub fn check_compatibility(ev: &SemigroupEvaluator, data: &FvpData, opts: &FvpOptions) -> Result<CompatibilityReport> {
    check_dim(ev.dim(), data.u_t.len())?;
    let t = data.horizon;
    let yf = compute_yf(ev, &data.f, t, &opts.quadrature)?;
    let difference = &data.u_t - &yf.value;

    let (levels, logs, verdict, overflow, log_kappa) = match ev.op().backend() {
        Backend::Spectral { eigenvalues } => {
            let levels = opts.levels_for(eigenvalues.len());
            check_levels(&levels, eigenvalues.len())?;
            let weights = h_weights(ev)?;
            let (logs, bases, overflow) = spectral_graph_norms(eigenvalues, weights, &difference, t, &levels);
            let verdict = classify_sequence(&logs, &bases, overflow, &opts.domain);
            let finest = &eigenvalues[..*levels.last().unwrap()];
            let lmax = finest.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lmin = finest.iter().copied().fold(f64::INFINITY, f64::min);
            (levels, logs, verdict, overflow, t * (lmax - lmin))
        }
        Backend::Matrix { .. } => {
            let d = matrix_domain_diagnostic(ev, &difference, t, &opts.domain);
            (d.levels, d.log_graph_norms, d.verdict, d.overflow_mode, d.log_condition)
        }
    };

    let mut report = CompatibilityReport {
        graph_norms: logs.iter().map(|l| l.exp()).collect(),
        log_graph_norms: logs,
        levels,
        kappa: log_kappa.exp(),
        log_kappa,
        verdict,
        y_norm: None,
        overflow_mode: overflow,
        quadrature_warning: yf.warning,
        amplified: None,
        difference,
    };
    if report.verdict == DomainVerdict::InDomain {
        match ev.evolve_inverse(t, &report.difference, None) {
            Ok(inv) => {
                let triple = ev.op().triple();
                let y2 = triple.h_norm(&data.u_t).powi(2)
                    + source_dual_l2_sq(triple, &data.f, t)
                    + triple.h_norm(&inv.value).powi(2);
                report.y_norm = Some(y2.sqrt());
                report.amplified = Some(inv.value);
            }
            Err(Error::Overflow { mode, .. }) => {
                report.verdict = DomainVerdict::Diverging;
                report.overflow_mode = Some(mode);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct Recovery {
    pub u0: CVector,
    pub report: CompatibilityReport,
}

/// `u(0) = e^{TA}(u_T - y_f)`, refused unless the data are compatible.
pub fn recover_initial_state(ev: &SemigroupEvaluator, data: &FvpData, opts: &FvpOptions) -> Result<Recovery> {
    let report = check_compatibility(ev, data, opts)?;
    match report.amplified.clone() {
        Some(u0) if report.verdict == DomainVerdict::InDomain => Ok(Recovery { u0, report }),
        _ => Err(Error::Incompatible(Box::new(report))),
    }
}

#[derive(Debug, Clone)]
pub struct RegularizedRecovery {
    pub u0: CVector,
    pub cutoff: CutoffReport,
    pub kappa: f64,
    pub report: CompatibilityReport,
}

/// Recovery with modes above `cutoff` discarded. The result solves a nearby
/// problem, not the one posed, whatever the compatibility verdict.
pub fn recover_with_cutoff(
    ev: &SemigroupEvaluator,
    data: &FvpData,
    cutoff: f64,
    opts: &FvpOptions,
) -> Result<RegularizedRecovery> {
    let report = check_compatibility(ev, data, opts)?;
    let inv = ev.evolve_inverse(data.horizon, &report.difference, Some(cutoff))?;
    Ok(RegularizedRecovery {
        u0: inv.value,
        cutoff: inv.cutoff.expect("cutoff requested"),
        kappa: inv.kappa,
        report,
    })
}

#[derive(Debug, Clone)]
pub struct FvpSolution {
    pub trajectory: Trajectory,
    pub u0: CVector,
    pub report: CompatibilityReport,
}

fn check_final_grid(grid: &[f64], horizon: f64) -> Result<()> {
    match grid.last() {
        Some(&end) if (end - horizon).abs() <= 1e-12 * horizon => Ok(()),
        _ => Err(Error::InvalidArgument(format!(
            "grid must end at the horizon {horizon}"
        ))),
    }
}

/// `u(t) = e^{-tA}u(0) + ∫_0^t e^{-(t-s)A}f(s) ds` with `u(0)` recovered from the final data.
pub fn solve_fvp(ev: &SemigroupEvaluator, data: &FvpData, grid: &[f64], opts: &FvpOptions) -> Result<FvpSolution> {
    check_final_grid(grid, data.horizon)?;
    let Recovery { u0, report } = recover_initial_state(ev, data, opts)?;
    let mut trajectory = solve_forward_duhamel(ev, &u0, &data.f, grid, &opts.quadrature)?;
    trajectory.warnings.extend(report.quadrature_warning.clone());
    Ok(FvpSolution { trajectory, u0, report })
}

/// Solution from a cutoff recovery, tagged as regularized.
pub fn solve_fvp_regularized(
    ev: &SemigroupEvaluator,
    data: &FvpData,
    grid: &[f64],
    cutoff: f64,
    opts: &FvpOptions,
) -> Result<(Trajectory, RegularizedRecovery)> {
    check_final_grid(grid, data.horizon)?;
    let rec = recover_with_cutoff(ev, data, cutoff, opts)?;
    let mut trajectory = solve_forward_duhamel(ev, &rec.u0, &data.f, grid, &opts.quadrature)?;
    trajectory.tags.push(REGULARIZED_TAG.to_string());
    Ok((trajectory, rec))
}

/// `(|u_T|² + ∫‖f‖_*² + |e^{TA}(u_T - y_f)|²)^{1/2}`, computed without a verdict.
pub fn y_norm(
    ev: &SemigroupEvaluator,
    f: &SourceTerm,
    u_t: &CVector,
    horizon: f64,
    opts: &QuadratureOptions,
) -> Result<f64> {
    let yf = compute_yf(ev, f, horizon, opts)?;
    let inv = ev.evolve_inverse(horizon, &(u_t - yf.value), None)?;
    let triple = ev.op().triple();
    Ok((triple.h_norm(u_t).powi(2) + source_dual_l2_sq(triple, f, horizon) + triple.h_norm(&inv.value).powi(2)).sqrt())
}

/// Constant `c` with `‖u‖_X ≤ c‖(f, u_T)‖_Y`, assembled from the energy estimate:
/// `c² = (1 + C2²)·(2 + (2C3² + C4 + 1)/C4²·e^{2kT})·max(C4, 1)`.
pub fn stability_constant(op: &CoerciveOperator, horizon: f64) -> f64 {
    let k = op.constants();
    ((1.0 + k.c2 * k.c2) * gronwall_prefactor(&k, horizon) * k.c4.max(1.0)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoundTripOptions {
    /// Nodes of each random source.
    pub source_nodes: usize,
    /// Random sources only excite modes with `e^{T(λ_j - λ_min)}` at most this.
    pub band_kappa: f64,
    /// Initial coefficients decay like `(1 + j)^{-decay}`.
    pub decay: f64,
    pub fvp: FvpOptions,
}

impl Default for RoundTripOptions {
    fn default() -> Self {
        RoundTripOptions {
            source_nodes: 17,
            band_kappa: 1e4,
            decay: 1.0,
            fvp: FvpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundTripReport {
    pub trials: usize,
    /// `‖R P u - u‖_X / ‖u‖_X` per trial.
    pub x_errors: Vec<f64>,
    /// `‖P R d - d‖_Y / ‖d‖_Y` per trial.
    pub y_errors: Vec<f64>,
    pub worst_x_error: f64,
    pub worst_y_error: f64,
    pub log_kappa: f64,
    pub source_modes: usize,
    /// Largest finite-difference Sobolev violation seen on any trajectory (≤ 0 when none).
    pub worst_sobolev_violation: f64,
}

/// Random `(u0, f)`: Gaussian `u0` with decaying coefficients, `f` smooth in
/// time on the low band of the spectrum.
pub fn random_cauchy_data(
    ev: &SemigroupEvaluator,
    horizon: f64,
    opts: &RoundTripOptions,
    rng: &mut sampling::SeededRng,
) -> Result<(CVector, SourceTerm)> {
    let n = ev.dim();
    let u0 = sampling::decaying_vector(rng, n, opts.decay);
    let band = source_band(ev, horizon, opts.band_kappa);
    let coeffs: Vec<[f64; 3]> = (0..n)
        .map(|j| {
            let draw = [sampling::normal(rng), sampling::normal(rng), sampling::normal(rng)];
            if band[j] {
                draw
            } else {
                [0.0; 3]
            }
        })
        .collect();
    let nodes = crate::duhamel::uniform_grid(horizon, opts.source_nodes.max(2) - 1);
    let f = SourceTerm::from_fn(nodes, |t| {
        let s = t / horizon;
        CVector::from_iterator(
            n,
            coeffs
                .iter()
                .map(|[a, b, cc]| c(a + b * s + cc * (2.0 * std::f64::consts::PI * s).sin())),
        )
    })?;
    Ok((u0, f))
}

fn source_band(ev: &SemigroupEvaluator, horizon: f64, band_kappa: f64) -> Vec<bool> {
    let re: Vec<f64> = match ev.op().backend() {
        Backend::Spectral { eigenvalues } => eigenvalues.clone(),
        Backend::Matrix { .. } => return vec![true; ev.dim()],
    };
    let lmin = re.iter().copied().fold(f64::INFINITY, f64::min);
    let limit = band_kappa.ln();
    re.iter().map(|l| horizon * (l - lmin) <= limit).collect()
}

/// Checks `R P = I` on random trajectories and `P R = I` on random compatible data.
///
/// `P u = (f, u(T))` where `f` is the source the trajectory was built from and
/// `R` is [`solve_fvp`].
pub fn homeomorphism_roundtrip(
    ev: &SemigroupEvaluator,
    grid: &[f64],
    trials: usize,
    seed: u64,
    opts: &RoundTripOptions,
) -> Result<RoundTripReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let horizon = *grid.last().ok_or_else(|| Error::InvalidArgument("empty grid".into()))?;
    let mut master = sampling::rng(seed);
    let seeds: Vec<u64> = (0..trials).map(|_| rand::Rng::random(&mut master)).collect();
    let triple = ev.op().triple();
    let (c1, c2) = (triple.c1(), triple.c2());

    let results: Vec<(f64, f64, f64)> = seeds
        .par_iter()
        .map(|&s| {
            let mut rng = sampling::rng(s);

            let (u0, f) = random_cauchy_data(ev, horizon, opts, &mut rng)?;
            let u = solve_forward_duhamel(ev, &u0, &f, grid, &opts.fvp.quadrature)?;
            let data = FvpData::new(f, u.last().clone(), horizon)?;
            let back = solve_fvp(ev, &data, grid, &opts.fvp)?.trajectory;
            let x_err = back.difference(&u, triple)?.x_norm() / u.x_norm();

            let (v0, g) = random_cauchy_data(ev, horizon, opts, &mut rng)?;
            let yg = compute_yf(ev, &g, horizon, &opts.fvp.quadrature)?;
            let v_t = ev.evolve(horizon, &v0)? + yg.value;
            let d = FvpData::new(g, v_t, horizon)?;
            let sol = solve_fvp(ev, &d, grid, &opts.fvp)?;
            let delta = sol.trajectory.last() - &d.u_t;
            let amplified = ev.evolve_inverse(horizon, &delta, None)?.value;
            let diff_y = (triple.h_norm(&delta).powi(2) + triple.h_norm(&amplified).powi(2)).sqrt();
            let y_err = diff_y / sol.report.y_norm.expect("in-domain report carries the Y norm");

            let sobolev = [&u, &back, &sol.trajectory]
                .iter()
                .map(|tr| -tr.sobolev_margin(c1, c2))
                .fold(f64::NEG_INFINITY, f64::max);
            Ok((x_err, y_err, sobolev))
        })
        .collect::<Result<_>>()?;

    let x_errors: Vec<f64> = results.iter().map(|r| r.0).collect();
    let y_errors: Vec<f64> = results.iter().map(|r| r.1).collect();
    let log_kappa = match ev.op().backend() {
        Backend::Spectral { eigenvalues } => {
            let lmax = eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lmin = eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            horizon * (lmax - lmin)
        }
        Backend::Matrix { .. } => ev.amplification(horizon).ln(),
    };
    Ok(RoundTripReport {
        trials,
        worst_x_error: x_errors.iter().copied().fold(0.0, f64::max),
        worst_y_error: y_errors.iter().copied().fold(0.0, f64::max),
        x_errors,
        y_errors,
        log_kappa,
        source_modes: source_band(ev, horizon, opts.band_kappa).iter().filter(|b| **b).count(),
        worst_sobolev_violation: results.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max),
    })
}
