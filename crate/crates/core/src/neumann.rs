//! The heat equation with homogeneous Neumann conditions on an interval or a
//! rectangle, in the cosine eigenbasis of `-Δ_N`.
//!
//! The `V` norm is the `H¹` norm, `‖v‖² = Σ (1 + λ_j)|v_j|²`, and `H = L²`, so
//! the form `s(v, v) = ‖v‖² - |v|²` is coercive with `C4 = 1`, `k = 1` and
//! bounded with `C3 = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, CVector};
use crate::semigroup::SemigroupEvaluator;
use crate::source::SourceTerm;
use crate::trajectory::Trajectory;
use crate::triple::{CoerciveOperator, GelfandTriple};

/// Tag given to solutions whose interior states pass the boundary-flux test.
pub const INTERIOR_REGULARITY_TAG: &str = "interior states satisfy the Neumann condition";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Geometry {
    Interval {
        #[serde(default = "pi")]
        length: f64,
    },
    Rectangle {
        #[serde(default = "pi")]
        lx: f64,
        #[serde(default = "pi")]
        ly: f64,
    },
}

fn pi() -> f64 {
    std::f64::consts::PI
}

impl Geometry {
    fn dimension(&self) -> usize {
        match self {
            Geometry::Interval { .. } => 1,
            Geometry::Rectangle { .. } => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NeumannModel {
    geometry: Geometry,
    /// `(p, q)` wave numbers of each mode; `q = 0` on the interval.
    modes: Vec<(usize, usize)>,
    op: CoerciveOperator,
}

/// First `n` Neumann eigenpairs, ties broken by `(p, q)`.
fn enumerate_modes(geometry: &Geometry, n: usize) -> Vec<((usize, usize), f64)> {
    use std::f64::consts::PI;
    match *geometry {
        Geometry::Interval { length } => (0..n).map(|j| ((j, 0), (j as f64 * PI / length).powi(2))).collect(),
        Geometry::Rectangle { lx, ly } => {
            // any pair with p > n or q > n has n + 1 smaller pairs on an axis
            let mut all: Vec<((usize, usize), f64)> = (0..=n)
                .flat_map(|p| (0..=n).map(move |q| (p, q)))
                .map(|(p, q)| ((p, q), (p as f64 * PI / lx).powi(2) + (q as f64 * PI / ly).powi(2)))
                .collect();
            all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            all.truncate(n);
            all
        }
    }
}

/// Builds the truncated model with `n` modes.
pub fn build_model(geometry: Geometry, n: usize) -> Result<NeumannModel> {
    if n < 2 {
        return Err(Error::InvalidArgument("a Neumann model needs at least 2 modes".into()));
    }
    let lengths: &[f64] = match &geometry {
        Geometry::Interval { length } => std::slice::from_ref(length),
        Geometry::Rectangle { lx, ly } => &[*lx, *ly],
    };
    if lengths.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Error::InvalidArgument("side lengths must be positive".into()));
    }
    let pairs = enumerate_modes(&geometry, n);
    let eigenvalues: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let weights: Vec<f64> = eigenvalues.iter().map(|l| 1.0 + l).collect();
    let triple = GelfandTriple::weighted(&weights)?;
    let op = CoerciveOperator::spectral(eigenvalues, triple, 1.0, 1.0, 1.0)?;
    Ok(NeumannModel {
        geometry,
        modes: pairs.into_iter().map(|p| p.0).collect(),
        op,
    })
}

impl NeumannModel {
    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn dim(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[(usize, usize)] {
        &self.modes
    }

    pub fn eigenvalues(&self) -> &[f64] {
        self.op.eigenvalues().expect("spectral backend")
    }

    pub fn operator(&self) -> &CoerciveOperator {
        &self.op
    }

    pub fn evaluator(&self) -> SemigroupEvaluator {
        SemigroupEvaluator::new(self.op.clone())
    }

    /// `Σ c_j cos(jπx/L)` on the interval.
    pub fn synthesize(&self, u: &CVector, x: f64) -> Result<f64> {
        let Geometry::Interval { length } = self.geometry else {
            return Err(Error::Unsupported(
                "synthesis is implemented for the interval only".into(),
            ));
        };
        Ok(self
            .modes
            .iter()
            .zip(u.iter())
            .map(|(&(j, _), cj)| cj.re * (j as f64 * std::f64::consts::PI * x / length).cos())
            .sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryFlux {
    pub mesh: usize,
    /// One-sided difference estimate of `|u'(0)|`.
    pub left: f64,
    /// One-sided difference estimate of `|u'(L)|`.
    pub right: f64,
}

impl BoundaryFlux {
    pub fn max(&self) -> f64 {
        self.left.max(self.right)
    }
}

/// Boundary normal derivatives of the synthesized function by first-order
/// one-sided differences on a uniform mesh.
pub fn check_neumann_bc(model: &NeumannModel, u: &CVector, mesh: usize) -> Result<BoundaryFlux> {
    crate::error::check_dim(model.dim(), u.len())?;
    let Geometry::Interval { length } = model.geometry else {
        return Err(Error::Unsupported(
            "boundary flux check is implemented for the interval only".into(),
        ));
    };
    if mesh < 32 {
        return Err(Error::InvalidArgument(format!("mesh must be at least 32, got {mesh}")));
    }
    let h = length / mesh as f64;
    let at = |x: f64| model.synthesize(u, x);
    Ok(BoundaryFlux {
        mesh,
        left: ((at(h)? - at(0.0)?) / h).abs(),
        right: ((at(length)? - at(length - h)?) / h).abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeylFit {
    /// Least-squares exponent `α` in `λ_j ≈ C j^α` over the upper half of the spectrum.
    pub exponent: f64,
    pub prefactor: f64,
    /// `2/n` for spatial dimension `n`.
    pub expected: f64,
    /// Accepted distance between `exponent` and `expected`.
    pub band: f64,
    pub passed: bool,
}

/// Fits the growth exponent of the eigenvalues; needs at least 32 modes.
pub fn weyl_check(model: &NeumannModel) -> Result<WeylFit> {
    let n = model.dim();
    if n < 32 {
        return Err(Error::InsufficientSpectrum { needed: 32, found: n });
    }
    let pts: Vec<(f64, f64)> = (n / 2..n)
        .map(|j| ((j as f64).ln(), model.eigenvalues()[j].ln()))
        .collect();
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let exponent = sxy / sxx;
    let (expected, band) = match model.geometry.dimension() {
        1 => (2.0, 0.1),
        _ => (1.0, 0.15),
    };
    Ok(WeylFit {
        exponent,
        prefactor: (my - exponent * mx).exp(),
        expected,
        band,
        passed: (exponent - expected).abs() <= band,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InstabilityRow {
    pub j: usize,
    pub lambda: f64,
    /// `|u_j(0)|` for final data `e_j`, `None` when `e^{Tλ_j}` overflows.
    pub norm: Option<f64>,
    /// `e^{Tλ_j}`, infinite when it overflows.
    pub expected: f64,
    pub overflowed: bool,
}

/// Initial states reached backward from unit final data `e_j` with `f = 0`.
pub fn instability_experiment(model: &NeumannModel, horizon: f64, modes: &[usize]) -> Result<Vec<InstabilityRow>> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let ev = model.evaluator();
    modes
        .iter()
        .map(|&j| {
            if j >= model.dim() {
                return Err(Error::InsufficientSpectrum {
                    needed: j + 1,
                    found: model.dim(),
                });
            }
            let lambda = model.eigenvalues()[j];
            let mut e = CVector::zeros(model.dim());
            e[j] = c(1.0);
            let (norm, overflowed) = match ev.evolve_inverse(horizon, &e, None) {
                Ok(inv) => (Some(model.op.triple().h_norm(&inv.value)), false),
                Err(Error::Overflow { .. }) => (None, true),
                Err(err) => return Err(err),
            };
            Ok(InstabilityRow {
                j,
                lambda,
                norm,
                expected: (horizon * lambda).exp(),
                overflowed,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HolderGate {
    pub passes: bool,
    /// Empirical exponent in `[0, 1]`.
    pub sigma: f64,
    /// Largest difference quotient at exponent `sigma`.
    pub constant: f64,
}

/// Estimates the Hölder exponent of `f` from the modulus of continuity
/// `ω(δ) = max_{|t-s| ≤ δ} |f(t) - f(s)|` at dyadic scales of the node spacing,
/// and passes when it reaches `threshold`.
pub fn holder_gate(f: &SourceTerm, threshold: f64) -> Result<HolderGate> {
    let times = f.times();
    if times.len() < 3 {
        return Err(Error::InvalidArgument("the Hölder gate needs at least 3 nodes".into()));
    }
    let span = f.end() - f.start();
    let dmin = times.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let samples = f.samples();
    let modulus = |delta: f64| -> f64 {
        let mut worst = 0.0f64;
        for i in 0..times.len() {
            for j in (i + 1)..times.len() {
                if times[j] - times[i] > delta * (1.0 + 1e-12) {
                    break;
                }
                worst = worst.max((&samples[j] - &samples[i]).norm());
            }
        }
        worst
    };
    let mut scales = Vec::new();
    let mut delta = dmin;
    while delta <= span * (1.0 + 1e-12) && scales.len() < 4 {
        scales.push((delta, modulus(delta)));
        delta *= 2.0;
    }
    let sigma = if scales.iter().all(|s| s.1 == 0.0) {
        1.0
    } else if scales.len() < 2 || scales.iter().any(|s| s.1 == 0.0) {
        0.0
    } else {
        let pts: Vec<(f64, f64)> = scales.iter().map(|(d, w)| (d.ln(), w.ln())).collect();
        let m = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        (sxy / sxx).clamp(0.0, 1.0)
    };
    let constant = f.holder_quotient(sigma);
    Ok(HolderGate {
        passes: sigma >= threshold && constant.is_finite(),
        sigma,
        constant,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InteriorRegularity {
    pub gate: HolderGate,
    pub time: f64,
    pub fluxes: Vec<BoundaryFlux>,
    /// Fluxes shrink under every mesh refinement.
    pub decreasing: bool,
}

/// Gates `f` and, when it passes, checks the boundary flux of `u` at the
/// grid node nearest `T/2` on the given meshes; tags the trajectory when the
/// fluxes decrease.
pub fn interior_regularity(
    model: &NeumannModel,
    trajectory: &mut Trajectory,
    f: &SourceTerm,
    threshold: f64,
    meshes: &[usize],
) -> Result<InteriorRegularity> {
    let gate = holder_gate(f, threshold)?;
    let mid = trajectory.grid()[0] + 0.5 * trajectory.horizon();
    let i = trajectory
        .grid()
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - mid).abs().total_cmp(&(b.1 - mid).abs()))
        .map(|(i, _)| i)
        .unwrap();
    let time = trajectory.grid()[i];
    let mut fluxes = Vec::new();
    if gate.passes {
        for &mesh in meshes {
            fluxes.push(check_neumann_bc(model, &trajectory.values()[i], mesh)?);
        }
    }
    let decreasing = !fluxes.is_empty() && fluxes.windows(2).all(|w| w[1].max() <= w[0].max());
    if gate.passes && decreasing {
        trajectory.tags.push(INTERIOR_REGULARITY_TAG.to_string());
    }
    Ok(InteriorRegularity {
        gate,
        time,
        fluxes,
        decreasing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::duhamel::uniform_grid;
    use crate::linalg::real_vector;
    use crate::triple::verify_coercivity;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn interval(n: usize) -> NeumannModel {
        build_model(Geometry::Interval { length: PI }, n).unwrap()
    }

    /// Smallest eigenvalues of the finite-difference Neumann Laplacian on `[0, π]`
    /// (cell-centered, reflecting ends), by Sturm bisection on the tridiagonal matrix.
    fn fd_neumann_eigenvalues(cells: usize, count: usize) -> Vec<f64> {
        let h = PI / cells as f64;
        let diag: Vec<f64> = (0..cells)
            .map(|i| if i == 0 || i == cells - 1 { 1.0 } else { 2.0 } / (h * h))
            .collect();
        let off = 1.0 / (h * h);
        let below = |x: f64| -> usize {
            let mut count = 0;
            let mut d = diag[0] - x;
            if d < 0.0 {
                count += 1;
            }
            for &dd in &diag[1..] {
                let prev = if d == 0.0 { 1e-300 } else { d };
                d = dd - x - off * off / prev;
                if d < 0.0 {
                    count += 1;
                }
            }
            count
        };
        (0..count)
            .map(|k| {
                let (mut lo, mut hi) = (-1.0, 4.0 / (h * h) + 1.0);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if below(mid) > k {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                0.5 * (lo + hi)
            })
            .collect()
    }

    #[test]
    fn interval_eigenvalues_match_refined_finite_differences() {
        let model = interval(4);
        assert_eq!(model.eigenvalues(), &[0.0, 1.0, 4.0, 9.0]);
        let coarse = fd_neumann_eigenvalues(200, 4);
        let fine = fd_neumann_eigenvalues(400, 4);
        for j in 0..4 {
            let (ec, ef) = (
                (coarse[j] - model.eigenvalues()[j]).abs(),
                (fine[j] - model.eigenvalues()[j]).abs(),
            );
            assert!(ef < 1e-2, "mode {j}: {}", fine[j]);
            if j > 0 {
                assert!(ef < ec / 3.0, "mode {j} does not converge: {ec} -> {ef}");
            }
        }
    }

    #[test]
    fn rectangle_spectrum_with_ties() {
        let model = build_model(Geometry::Rectangle { lx: PI, ly: PI }, 4).unwrap();
        assert_eq!(model.eigenvalues(), &[0.0, 1.0, 1.0, 2.0]);
        assert_eq!(model.modes(), &[(0, 0), (0, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn weights_and_constants() {
        let model = interval(2);
        assert_eq!(model.operator().triple().gram_v()[(1, 1)].re, 2.0);
        let k = model.operator().constants();
        assert_eq!((k.c1, k.c2, k.c3, k.c4, k.k), (1.0, 1.0, 1.0, 1.0, 1.0));
        assert!(verify_coercivity(model.operator(), 200, 1e-12, 4).unwrap().passed());
    }

    #[test]
    fn invalid_geometry_is_rejected() {
        assert!(build_model(Geometry::Interval { length: 0.0 }, 4).is_err());
        assert!(build_model(Geometry::Interval { length: 1.0 }, 1).is_err());
    }

    #[test]
    fn boundary_flux_of_cosines() {
        let model = interval(4);
        let constant = real_vector(&[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(check_neumann_bc(&model, &constant, 64).unwrap().max(), 0.0);
        let cos1 = real_vector(&[0.0, 1.0, 0.0, 0.0]);
        assert!(check_neumann_bc(&model, &cos1, 1024).unwrap().max() <= 1e-2);
        let cos3 = real_vector(&[0.0, 0.0, 0.0, 1.0]);
        let f256 = check_neumann_bc(&model, &cos3, 256).unwrap().max();
        let f1024 = check_neumann_bc(&model, &cos3, 1024).unwrap().max();
        assert!(f1024 <= 1e-1 && f1024 < f256);
        assert!(check_neumann_bc(&model, &cos1, 16).is_err());
    }

    #[test]
    fn weyl_exponents() {
        let fit = weyl_check(&interval(64)).unwrap();
        assert!(fit.passed && (fit.exponent - 2.0).abs() < 0.1, "{fit:?}");
        let rect = build_model(Geometry::Rectangle { lx: PI, ly: PI }, 256).unwrap();
        let fit = weyl_check(&rect).unwrap();
        assert!(fit.passed, "{fit:?}");
        assert!(matches!(
            weyl_check(&interval(2)),
            Err(Error::InsufficientSpectrum { .. })
        ));
    }

    #[test]
    fn instability_table() {
        let model = interval(32);
        let rows = instability_experiment(&model, 1.0, &[0, 3, 27, 31]).unwrap();
        assert_eq!(rows[0].norm, Some(1.0));
        assert!((rows[1].norm.unwrap() - 8103.08).abs() < 0.01);
        assert_relative_eq!(rows[1].norm.unwrap(), 9f64.exp(), max_relative = 1e-14);
        assert!(rows[2].overflowed && rows[3].overflowed);
        assert!(rows[2].norm.is_none());
        let big = instability_experiment(&model, 1.0, &[26]).unwrap()[0];
        assert_relative_eq!(big.norm.unwrap(), 676f64.exp(), max_relative = 1e-12);
    }

    #[test]
    fn holder_gate_estimates() {
        let nodes = uniform_grid(1.0, 64);
        let v = real_vector(&[1.0, -2.0]);
        let constant = SourceTerm::from_fn(nodes.clone(), |_| v.clone()).unwrap();
        let g = holder_gate(&constant, 0.9).unwrap();
        assert!(g.passes && g.sigma == 1.0 && g.constant == 0.0);

        let sqrt = SourceTerm::from_fn(nodes.clone(), |t| v.scale(t.sqrt())).unwrap();
        let g = holder_gate(&sqrt, 0.4).unwrap();
        assert!((g.sigma - 0.5).abs() < 0.05, "{g:?}");
        assert!(g.passes);

        let jump = SourceTerm::from_fn(nodes, |t| if t < 0.5 { v.clone() } else { v.scale(-1.0) }).unwrap();
        let g = holder_gate(&jump, 0.1).unwrap();
        assert!(!g.passes, "{g:?}");
    }

    #[test]
    fn jump_constant_grows_under_node_refinement() {
        let v = real_vector(&[1.0]);
        let quotient = |m: usize| {
            let f = SourceTerm::from_fn(
                uniform_grid(1.0, m),
                |t| if t < 0.49 { v.clone() } else { v.scale(-1.0) },
            )
            .unwrap();
            f.holder_quotient(0.5)
        };
        assert!(quotient(64) > 1.5 * quotient(16));
    }
}
