//! Forward Cauchy problems `u' + Au = f, u(0) = u0` by Duhamel's formula and by
//! time stepping, and the energy estimate they satisfy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{CMatrix, CVector};
use crate::quadrature::{gl4, graded_panels};
use crate::semigroup::SemigroupEvaluator;
use crate::source::SourceTerm;
use crate::trajectory::{cumulative_trapezoid, grid_derivative, Trajectory};
use crate::triple::{CoerciveOperator, Constants};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureOptions {
    /// Uniform panels before grading and refinement.
    pub panels: usize,
    /// Pieces per geometric cell of the graded layer.
    pub subdivisions: usize,
    /// Relative change under panel halving above which a warning is attached.
    pub quad_tol: f64,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        QuadratureOptions {
            panels: 16,
            subdivisions: 4,
            quad_tol: 1e-9,
        }
    }
}

/// A Duhamel integral with its refinement diagnostic.
#[derive(Debug, Clone)]
pub struct Yield {
    pub value: CVector,
    /// `|I_fine - I_coarse| / |I_fine|` under halving of every panel.
    pub refinement_change: f64,
    pub warning: Option<String>,
}

fn stiffness(ev: &SemigroupEvaluator) -> f64 {
    ev.spectrum().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn integrate_vector(ev: &SemigroupEvaluator, f: &SourceTerm, t: f64, panels: &[(f64, f64)]) -> Result<CVector> {
    let mut acc = CVector::zeros(ev.dim());
    for &(a, b) in panels {
        for (s, w) in gl4(a, b) {
            acc += ev.evolve(t - s, &f.at(s))?.scale(w);
        }
    }
    Ok(acc)
}

/// `∫_0^t e^{-(t-s)A} f(s) ds` on panels graded toward `s = t` and aligned
/// with the nodes of `f`.
pub fn duhamel_integral(ev: &SemigroupEvaluator, f: &SourceTerm, t: f64, opts: &QuadratureOptions) -> Result<Yield> {
    check_dim(ev.dim(), f.dim())?;
    if !(t >= 0.0) || !f.spans(0.0, t) {
        return Err(Error::InvalidArgument(format!(
            "source on [{}, {}] does not span [0, {t}]",
            f.start(),
            f.end()
        )));
    }
    if t == 0.0 {
        return Ok(Yield {
            value: CVector::zeros(ev.dim()),
            refinement_change: 0.0,
            warning: None,
        });
    }
    let stiff = stiffness(ev);
    let coarse_panels = graded_panels(0.0, t, opts.panels, stiff, f.times(), opts.subdivisions, 0);
    let fine_panels = graded_panels(0.0, t, opts.panels, stiff, f.times(), opts.subdivisions, 1);
    let coarse = integrate_vector(ev, f, t, &coarse_panels)?;
    let value = integrate_vector(ev, f, t, &fine_panels)?;
    let scale = value.norm();
    let change = if scale > 0.0 {
        (&value - &coarse).norm() / scale
    } else if coarse.norm() == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let warning = (change > opts.quad_tol).then(|| {
        format!(
            "quadrature at t = {t} changed by {change:.3e} under refinement (tolerance {:.1e})",
            opts.quad_tol
        )
    });
    Ok(Yield {
        value,
        refinement_change: change,
        warning,
    })
}

/// The full yield `y_f = ∫_0^T e^{-(T-t)A} f(t) dt`.
pub fn compute_yf(ev: &SemigroupEvaluator, f: &SourceTerm, horizon: f64, opts: &QuadratureOptions) -> Result<Yield> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    duhamel_integral(ev, f, horizon, opts)
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid[0] != 0.0 || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(
            "grid must start at 0 and increase strictly".into(),
        ));
    }
    Ok(())
}

/// Solution by Duhamel's formula, each node evaluated independently.
pub fn solve_forward_duhamel(
    ev: &SemigroupEvaluator,
    u0: &CVector,
    f: &SourceTerm,
    grid: &[f64],
    opts: &QuadratureOptions,
) -> Result<Trajectory> {
    check_grid(grid)?;
    check_dim(ev.dim(), u0.len())?;
    let nodes: Vec<(CVector, Option<String>)> = grid
        .par_iter()
        .map(|&t| {
            let y = duhamel_integral(ev, f, t, opts)?;
            Ok((ev.evolve(t, u0)? + y.value, y.warning))
        })
        .collect::<Result<_>>()?;
    let mut warnings = Vec::new();
    let mut values = Vec::with_capacity(nodes.len());
    for (v, w) in nodes {
        values.push(v);
        warnings.extend(w);
    }
    let mut traj = Trajectory::new(grid.to_vec(), values, ev.op().triple())?;
    traj.warnings = warnings;
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ImplicitEuler,
    CrankNicolson,
}

/// Time-stepped solution on a uniform grid over `[0, T]` where `T` is the end
/// of the source's node range.
pub fn solve_forward_stepper(
    op: &CoerciveOperator,
    u0: &CVector,
    f: &SourceTerm,
    steps: usize,
    scheme: Scheme,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    check_dim(op.dim(), u0.len())?;
    check_dim(op.dim(), f.dim())?;
    let horizon = f.end();
    if f.start() > 0.0 || !(horizon > 0.0) {
        return Err(Error::InvalidArgument("source must span [0, T] with T > 0".into()));
    }
    let dt = horizon / steps as f64;
    let shift = op.accretive_shift();
    if dt * shift >= 1.0 {
        return Err(Error::Singular(format!(
            "step {dt} too large for accretive shift {shift}: I + dt·A may be singular"
        )));
    }
    let n = op.dim();
    let a = op.dense();
    let id = CMatrix::identity(n, n);
    let theta = match scheme {
        Scheme::ImplicitEuler => 1.0,
        Scheme::CrankNicolson => 0.5,
    };
    let lhs = (&id + a.scale(theta * dt)).lu();
    let explicit = &id - a.scale((1.0 - theta) * dt);

    let grid: Vec<f64> = (0..=steps).map(|i| horizon * i as f64 / steps as f64).collect();
    let mut values = Vec::with_capacity(steps + 1);
    values.push(u0.clone());
    let mut f_prev = f.at(0.0);
    for i in 1..=steps {
        let f_next = f.at(grid[i]);
        let rhs = &explicit * &values[i - 1] + (f_prev.scale(1.0 - theta) + f_next.scale(theta)).scale(dt);
        let next = lhs
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("implicit step matrix is singular".into()))?;
        values.push(next);
        f_prev = f_next;
    }
    Trajectory::new(grid, values, op.triple())
}

/// Gap between a stepper run and the Duhamel solution on the same grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepperGap {
    pub steps: usize,
    /// `‖u_duhamel - u_stepper‖_X`
    pub x_gap: f64,
}

/// X-norm gaps for each step count and the least-squares order of decay.
pub fn stepper_convergence(
    ev: &SemigroupEvaluator,
    u0: &CVector,
    f: &SourceTerm,
    steps: &[usize],
    scheme: Scheme,
    opts: &QuadratureOptions,
) -> Result<(Vec<StepperGap>, f64)> {
    let finest = *steps
        .iter()
        .max()
        .ok_or_else(|| Error::InvalidArgument("no step counts".into()))?;
    if steps.iter().any(|s| *s == 0 || finest % s != 0) {
        return Err(Error::InvalidArgument("step counts must divide the finest one".into()));
    }
    let horizon = f.end();
    let grid: Vec<f64> = (0..=finest).map(|i| horizon * i as f64 / finest as f64).collect();
    let reference = solve_forward_duhamel(ev, u0, f, &grid, opts)?;
    let triple = ev.op().triple();
    let gaps = steps
        .iter()
        .map(|&s| {
            let stepped = solve_forward_stepper(ev.op(), u0, f, s, scheme)?;
            let stride = finest / s;
            let values = reference.values().iter().step_by(stride).cloned().collect();
            let exact = Trajectory::new(stepped.grid().to_vec(), values, triple)?;
            Ok(StepperGap {
                steps: s,
                x_gap: exact.difference(&stepped, triple)?.x_norm(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let order = observed_order(&gaps);
    Ok((gaps, order))
}

/// Negative least-squares slope of `log gap` against `log steps`.
pub fn observed_order(gaps: &[StepperGap]) -> f64 {
    let pts: Vec<(f64, f64)> = gaps.iter().map(|g| ((g.steps as f64).ln(), g.x_gap.ln())).collect();
    let m = pts.len() as f64;
    let (mx, my) = (
        pts.iter().map(|p| p.0).sum::<f64>() / m,
        pts.iter().map(|p| p.1).sum::<f64>() / m,
    );
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    -sxy / sxx
}

/// `2 + (2C3² + C4 + 1)/C4² · e^{2kt}`
pub fn gronwall_prefactor(constants: &Constants, t: f64) -> f64 {
    let Constants { c3, c4, k, .. } = *constants;
    2.0 + (2.0 * c3 * c3 + c4 + 1.0) / (c4 * c4) * (2.0 * k * t).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GronwallReport {
    pub times: Vec<f64>,
    /// `∫_0^t‖u‖² + sup_{s≤t}|u|² + ∫_0^t‖u'‖_*²`
    pub lhs: Vec<f64>,
    /// Prefactor times `C4|u0|² + ∫_0^t‖f‖_*²`.
    pub rhs: Vec<f64>,
    pub min_margin: f64,
}

impl GronwallReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.min_margin >= -tol
    }
}

/// Evaluates both sides of the energy estimate at every grid time.
pub fn verify_gronwall_bound(
    op: &CoerciveOperator,
    u0: &CVector,
    f: &SourceTerm,
    trajectory: &Trajectory,
) -> Result<GronwallReport> {
    let constants = op.constants();
    if !(constants.c4 > 0.0) {
        return Err(Error::InvalidArgument("the energy estimate needs C4 > 0".into()));
    }
    let triple = op.triple();
    let grid = trajectory.grid();
    let f2: Vec<f64> = grid.iter().map(|&t| triple.dual_norm(&f.at(t)).powi(2)).collect();
    let int_f2 = cumulative_trapezoid(grid, &f2);
    let lhs = trajectory.cumulative_energy();
    let h0 = triple.h_norm(u0).powi(2);
    let rhs: Vec<f64> = grid
        .iter()
        .zip(&int_f2)
        .map(|(&t, i)| gronwall_prefactor(&constants, t - grid[0]) * (constants.c4 * h0 + i))
        .collect();
    let min_margin = rhs.iter().zip(&lhs).map(|(r, l)| r - l).fold(f64::INFINITY, f64::min);
    Ok(GronwallReport {
        times: grid.to_vec(),
        lhs,
        rhs,
        min_margin,
    })
}

/// `‖u' + Au - f‖_*` at interior nodes, with `u'` from grid differences.
pub fn ode_residual(op: &CoerciveOperator, f: &SourceTerm, trajectory: &Trajectory) -> Vec<f64> {
    let triple = op.triple();
    let n = trajectory.grid().len();
    (1..n.saturating_sub(1))
        .map(|i| {
            let t = trajectory.grid()[i];
            let r = &trajectory.derivative()[i] + op.apply(&trajectory.values()[i]) - f.at(t);
            triple.dual_norm(&r)
        })
        .collect()
}

/// Residual of the Leibniz rule `d/dt e^{-(T-t)A}u(t) = e^{-(T-t)A}f(t)` at
/// interior nodes, measured in the dual norm.
pub fn leibniz_residual(ev: &SemigroupEvaluator, f: &SourceTerm, trajectory: &Trajectory) -> Result<Vec<f64>> {
    let grid = trajectory.grid();
    let end = *grid.last().unwrap();
    let g: Vec<CVector> = grid
        .iter()
        .zip(trajectory.values())
        .map(|(&t, u)| ev.evolve(end - t, u))
        .collect::<Result<_>>()?;
    let dg = grid_derivative(grid, &g);
    let triple = ev.op().triple();
    (1..grid.len().saturating_sub(1))
        .map(|i| {
            let target = ev.evolve(end - grid[i], &f.at(grid[i]))?;
            Ok(triple.dual_norm(&(&dg[i] - target)))
        })
        .collect()
}

/// Outcome of the integral Grönwall lemma on sampled data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GronwallLemmaCheck {
    /// `φ ≤ E + ∫kφ` at every node.
    pub hypothesis: bool,
    /// `φ ≤ E·exp(∫k)` at every node.
    pub conclusion: bool,
}

/// Tests the lemma for nonnegative `φ, k` and nondecreasing `E` sampled on
/// `grid`, with integrals by the trapezoidal rule and relative slack `tol`.
pub fn gronwall_lemma_check(grid: &[f64], phi: &[f64], k: &[f64], e: &[f64], tol: f64) -> Result<GronwallLemmaCheck> {
    let n = grid.len();
    for len in [phi.len(), k.len(), e.len()] {
        check_dim(n, len)?;
    }
    if e.windows(2).any(|w| w[1] < w[0]) || phi.iter().chain(k).any(|x| *x < 0.0) {
        return Err(Error::InvalidArgument(
            "lemma needs φ, k ≥ 0 and E nondecreasing".into(),
        ));
    }
    let kphi: Vec<f64> = k.iter().zip(phi).map(|(a, b)| a * b).collect();
    let int_kphi = cumulative_trapezoid(grid, &kphi);
    let int_k = cumulative_trapezoid(grid, k);
    let hypothesis = (0..n).all(|i| phi[i] <= (e[i] + int_kphi[i]) * (1.0 + tol));
    let conclusion = (0..n).all(|i| phi[i] <= e[i] * int_k[i].exp() * (1.0 + tol));
    Ok(GronwallLemmaCheck { hypothesis, conclusion })
}

/// Uniform grid with `intervals + 1` nodes on `[0, horizon]`.
pub fn uniform_grid(horizon: f64, intervals: usize) -> Vec<f64> {
    (0..=intervals).map(|i| horizon * i as f64 / intervals as f64).collect()
}
