//! Finite-dimensional Gelfand triples `V ⊂ H ⊂ V*` and coercive Lax-Milgram operators.
//!
//! Vectors are coefficient vectors in a fixed basis. The norm of `V` is
//! `‖v‖² = v* G_V v`, the norm of `H` is `|v|² = v* G_H v`, and the dual norm is
//! realized through the `H` pairing:
//!
//! ```text
//! ‖v‖_* = sup_w |⟨v, w⟩_H| / ‖w‖ = |L_V^{-1} G_H v|,   G_V = L_V L_V^*.
//! ```
//!
//! A coercive operator acts on coefficients; its sesquilinear form is
//! `a(u, v) = ⟨A u, v⟩_H = v* G_H A u`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{
    c, cholesky_factor, congruence_reduce, diagonal, generalized_hermitian_eigenvalues, hermitian_defect,
    hermitian_part, singular_values, CMatrix, CVector, C64,
};
use crate::sampling;

/// Hermitian tolerance for Gram tables, relative to the largest entry.
const GRAM_HERMITIAN_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct GelfandTriple {
    gram_v: CMatrix,
    gram_h: CMatrix,
    chol_v: CMatrix,
    /// `(v_weights, h_weights)` when both Gram tables are diagonal.
    diagonal: Option<(Vec<f64>, Vec<f64>)>,
    c1: f64,
    c2: f64,
}

fn diagonal_weights(m: &CMatrix) -> Option<Vec<f64>> {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..n {
            if i != j && m[(i, j)] != c(0.0) {
                return None;
            }
        }
        if m[(i, i)].im != 0.0 {
            return None;
        }
    }
    Some((0..n).map(|i| m[(i, i)].re).collect())
}

impl GelfandTriple {
    /// Builds a triple with the tightest embedding constants.
    pub fn new(gram_v: CMatrix, gram_h: CMatrix) -> Result<Self> {
        let n = gram_v.nrows();
        check_dim(n, gram_v.ncols())?;
        check_dim(n, gram_h.nrows())?;
        check_dim(n, gram_h.ncols())?;
        if n == 0 {
            return Err(Error::InvalidArgument("triple dimension must be positive".into()));
        }
        for (table, m) in [("gram_V", &gram_v), ("gram_H", &gram_h)] {
            let asymmetry = hermitian_defect(m);
            if asymmetry > GRAM_HERMITIAN_TOL {
                return Err(Error::NotHermitian { table, asymmetry });
            }
        }
        let chol_v = cholesky_factor(&gram_v, "gram_V")?;
        cholesky_factor(&gram_h, "gram_H")?;
        let diagonal = match (diagonal_weights(&gram_v), diagonal_weights(&gram_h)) {
            (Some(v), Some(h)) => Some((v, h)),
            _ => None,
        };
        let mu_max = *generalized_hermitian_eigenvalues(&gram_h, &gram_v)?
            .last()
            .expect("nonempty");
        Ok(GelfandTriple {
            gram_v,
            gram_h,
            chol_v,
            diagonal,
            c1: mu_max.sqrt(),
            c2: mu_max,
        })
    }

    /// Builds a triple with declared embedding constants, rejecting constants
    /// smaller than the tight ones.
    pub fn with_constants(gram_v: CMatrix, gram_h: CMatrix, c1: f64, c2: f64) -> Result<Self> {
        let mut triple = Self::new(gram_v, gram_h)?;
        let slack = 1e-12;
        if !(c1 >= triple.c1 * (1.0 - slack)) || !(c2 / c1 >= triple.c2 / triple.c1 * (1.0 - slack)) {
            return Err(Error::InvalidArgument(format!(
                "embedding constants C1={c1}, C2={c2} violate the chain (tight: C1={}, C2/C1={})",
                triple.c1,
                triple.c2 / triple.c1
            )));
        }
        triple.c1 = c1;
        triple.c2 = c2;
        Ok(triple)
    }

    pub fn euclidean(n: usize) -> Self {
        Self::new(CMatrix::identity(n, n), CMatrix::identity(n, n)).expect("identity is SPD")
    }

    /// Diagonal triple with `‖v‖² = Σ w_j |v_j|²` and `|v|² = Σ |v_j|²`.
    pub fn weighted(v_weights: &[f64]) -> Result<Self> {
        let n = v_weights.len();
        Self::new(diagonal(v_weights), CMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.gram_v.nrows()
    }

    pub fn gram_v(&self) -> &CMatrix {
        &self.gram_v
    }

    pub fn gram_h(&self) -> &CMatrix {
        &self.gram_h
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    /// Diagonal of `G_H` when both Gram tables are diagonal.
    pub fn h_weights(&self) -> Option<&[f64]> {
        self.diagonal.as_ref().map(|(_, h)| h.as_slice())
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    /// `⟨x, y⟩_H = y* G_H x`.
    pub fn h_inner(&self, x: &CVector, y: &CVector) -> C64 {
        match &self.diagonal {
            Some((_, h)) => x.iter().zip(y.iter()).zip(h).map(|((a, b), w)| a * b.conj() * *w).sum(),
            None => (y.adjoint() * (&self.gram_h * x))[(0, 0)],
        }
    }

    pub fn h_norm(&self, x: &CVector) -> f64 {
        match &self.diagonal {
            Some((_, h)) => weighted_norm(x, h.iter().copied()),
            None => self.h_inner(x, x).re.max(0.0).sqrt(),
        }
    }

    pub fn v_norm(&self, x: &CVector) -> f64 {
        match &self.diagonal {
            Some((v, _)) => weighted_norm(x, v.iter().copied()),
            None => (x.adjoint() * (&self.gram_v * x))[(0, 0)].re.max(0.0).sqrt(),
        }
    }

    pub fn dual_norm(&self, x: &CVector) -> f64 {
        match &self.diagonal {
            Some((v, h)) => weighted_norm(x, v.iter().zip(h).map(|(v, h)| h * h / v)),
            None => self
                .chol_v
                .solve_lower_triangular(&(&self.gram_h * x))
                .expect("Cholesky factor has nonzero diagonal")
                .norm(),
        }
    }

    /// Worst margins of `‖v‖_* ≤ C1|v|` and `C1|v| ≤ C2‖v‖` over random samples,
    /// each normalized by the right-hand side.
    pub fn embedding_margins(&self, samples: usize, seed: u64) -> (f64, f64) {
        let mut rng = sampling::rng(seed);
        let mut worst = (f64::INFINITY, f64::INFINITY);
        for _ in 0..samples {
            let v = sampling::complex_vector(&mut rng, self.dim());
            let (dual, h, vn) = (self.dual_norm(&v), self.h_norm(&v), self.v_norm(&v));
            worst.0 = worst.0.min((self.c1 * h - dual) / (self.c1 * h));
            worst.1 = worst.1.min((self.c2 * vn - self.c1 * h) / (self.c2 * vn));
        }
        worst
    }
}

/// `(Σ w_j |x_j|²)^{1/2}`, rescaled so that it stays finite up to `f64::MAX`.
fn weighted_norm(x: &CVector, weights: impl Iterator<Item = f64> + Clone) -> f64 {
    let terms = || x.iter().zip(weights.clone()).map(|(z, w)| z.norm() * w.sqrt());
    let scale = terms().fold(0.0, f64::max);
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    scale * terms().map(|t| (t / scale).powi(2)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone)]
pub enum Backend {
    /// Diagonal action `A e_j = λ_j e_j` in the coefficient basis.
    Spectral { eigenvalues: Vec<f64> },
    /// Dense coefficient-space operator.
    Matrix { matrix: CMatrix },
}

/// Boundedness and coercivity constants of the form together with the
/// embedding constants of its triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    #[serde(rename = "C3")]
    pub c3: f64,
    #[serde(rename = "C4")]
    pub c4: f64,
    pub k: f64,
}

#[derive(Debug, Clone)]
pub struct CoerciveOperator {
    backend: Backend,
    triple: GelfandTriple,
    c3: f64,
    c4: f64,
    k: f64,
}

impl CoerciveOperator {
    pub fn spectral(eigenvalues: Vec<f64>, triple: GelfandTriple, c3: f64, c4: f64, k: f64) -> Result<Self> {
        check_dim(triple.dim(), eigenvalues.len())?;
        if eigenvalues.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidArgument("eigenvalues must be finite".into()));
        }
        Self::assemble(Backend::Spectral { eigenvalues }, triple, c3, c4, k)
    }

    pub fn matrix(matrix: CMatrix, triple: GelfandTriple, c3: f64, c4: f64, k: f64) -> Result<Self> {
        check_dim(triple.dim(), matrix.nrows())?;
        check_dim(triple.dim(), matrix.ncols())?;
        Self::assemble(Backend::Matrix { matrix }, triple, c3, c4, k)
    }

    /// Operator with constants from [`estimate_constants`].
    pub fn with_estimated_constants(backend: Backend, triple: GelfandTriple) -> Result<Self> {
        let draft = Self::assemble(backend, triple, 0.0, 0.0, 0.0)?;
        let est = estimate_constants(&draft.form_matrix(), &draft.triple)?;
        Ok(CoerciveOperator {
            c3: est.c3,
            c4: est.c4,
            k: est.k,
            ..draft
        })
    }

    fn assemble(backend: Backend, triple: GelfandTriple, c3: f64, c4: f64, k: f64) -> Result<Self> {
        if [c3, c4, k].iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::InvalidArgument(
                "constants C3, C4, k must be finite and nonnegative".into(),
            ));
        }
        Ok(CoerciveOperator {
            backend,
            triple,
            c3,
            c4,
            k,
        })
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn triple(&self) -> &GelfandTriple {
        &self.triple
    }

    pub fn dim(&self) -> usize {
        self.triple.dim()
    }

    pub fn eigenvalues(&self) -> Option<&[f64]> {
        match &self.backend {
            Backend::Spectral { eigenvalues } => Some(eigenvalues),
            Backend::Matrix { .. } => None,
        }
    }

    pub fn constants(&self) -> Constants {
        Constants {
            c1: self.triple.c1,
            c2: self.triple.c2,
            c3: self.c3,
            c4: self.c4,
            k: self.k,
        }
    }

    /// `θ = arccot(C3 / C4)`, the half-opening of the analyticity sector.
    pub fn sector_angle(&self) -> f64 {
        self.c4.atan2(self.c3)
    }

    /// Coefficient matrix of `A`.
    pub fn dense(&self) -> CMatrix {
        match &self.backend {
            Backend::Spectral { eigenvalues } => diagonal(eigenvalues),
            Backend::Matrix { matrix } => matrix.clone(),
        }
    }

    /// Form table `B = G_H A`, so that `a(u, v) = v* B u`.
    pub fn form_matrix(&self) -> CMatrix {
        self.triple.gram_h() * self.dense()
    }

    pub fn apply(&self, x: &CVector) -> CVector {
        match &self.backend {
            Backend::Spectral { eigenvalues } => {
                CVector::from_iterator(x.len(), x.iter().zip(eigenvalues).map(|(z, l)| z * *l))
            }
            Backend::Matrix { matrix } => matrix * x,
        }
    }

    pub fn form(&self, u: &CVector, v: &CVector) -> C64 {
        self.triple.h_inner(&self.apply(u), v)
    }

    /// Smallest `k ≥ 0` with `Re a(v,v) + k|v|² ≥ 0`, i.e. the shift that makes
    /// `A + kI` accretive in `H`.
    pub fn accretive_shift(&self) -> f64 {
        let s = hermitian_part(&self.form_matrix());
        let min = generalized_hermitian_eigenvalues(&s, self.triple.gram_h()).expect("gram_H is SPD")[0];
        (-min).max(0.0)
    }

    pub fn descriptor(&self) -> OperatorDescriptor {
        let table = |m: &CMatrix| -> Vec<Vec<JsonScalar>> {
            (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| JsonScalar::from(m[(i, j)])).collect())
                .collect()
        };
        let (backend, eigenvalues, matrix) = match &self.backend {
            Backend::Spectral { eigenvalues } => (BackendKind::Spectral, Some(eigenvalues.clone()), None),
            Backend::Matrix { matrix } => (BackendKind::Matrix, None, Some(table(matrix))),
        };
        let k = self.constants();
        OperatorDescriptor {
            backend,
            eigenvalues,
            matrix,
            gram_v: Some(table(self.triple.gram_v())),
            gram_h: Some(table(self.triple.gram_h())),
            constants: Some(ConstantsDescriptor {
                c1: Some(k.c1),
                c2: Some(k.c2),
                c3: Some(k.c3),
                c4: Some(k.c4),
                k: Some(k.k),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantsEstimate {
    pub c3: f64,
    pub c4: f64,
    pub k: f64,
    /// Set when the balanced rule produced no clearly positive `C4` and the unit-shift
    /// fallback was used.
    pub degenerate: bool,
}

/// Tight boundedness constant and a deterministic `(C4, k)` pair for the form `B`.
///
/// `C3` is the largest singular value of `B` measured in the `V` geometry. For
/// `(C4, k)` let `γ(k)` be the `V`-ellipticity constant of the shifted form
/// `Re a(v,v) + k|v|²`. The estimator picks the largest `k ≥ 0` with `γ(k) ≥ k`
/// and sets `C4 = γ(k)`; when `γ(k) - k` never decreases the smallest such
/// shift `k = 0` is used. If neither yields `C4 > 0` the estimate falls back to
/// one unit beyond the accretive shift and is flagged degenerate.
pub fn estimate_constants(form: &CMatrix, triple: &GelfandTriple) -> Result<ConstantsEstimate> {
    let n = triple.dim();
    check_dim(n, form.nrows())?;
    check_dim(n, form.ncols())?;
    let l = &triple.chol_v;
    let c3 = singular_values(&congruence_reduce(form, l))
        .first()
        .copied()
        .unwrap_or(0.0);

    let s = hermitian_part(form);
    let gram_h = triple.gram_h();
    let gram_v = triple.gram_v();
    let gamma = |k: f64| -> f64 {
        generalized_hermitian_eigenvalues(&(&s + gram_h.scale(k)), gram_v).expect("gram_V is SPD")[0]
    };
    let mu_min = generalized_hermitian_eigenvalues(gram_h, gram_v)?[0];
    let accretive = (-generalized_hermitian_eigenvalues(&s, gram_h)?[0]).max(0.0);
    let gap = |k: f64| gamma(k) - k;
    let accept = |k: f64| gap(k) >= -1e-12 * (1.0 + k.abs());

    let balanced = if mu_min >= 1.0 {
        // γ(k) - k is nondecreasing: every large shift qualifies, take the smallest.
        Some(0.0)
    } else {
        let lo = if accept(0.0) {
            Some(0.0)
        } else {
            // Concave gap: locate its maximum by golden-section search.
            let mut hi = 1.0;
            while gap(2.0 * hi) > gap(hi) && hi < 1e12 {
                hi *= 2.0;
            }
            let (mut a, mut b) = (0.0, 2.0 * hi);
            let phi = 0.5 * (5f64.sqrt() - 1.0);
            for _ in 0..200 {
                let x1 = b - phi * (b - a);
                let x2 = a + phi * (b - a);
                if gap(x1) < gap(x2) {
                    a = x1;
                } else {
                    b = x2;
                }
            }
            let peak = 0.5 * (a + b);
            accept(peak).then_some(peak)
        };
        lo.map(|mut lo| {
            let mut hi = lo.max(1.0);
            while accept(hi) {
                lo = hi;
                hi *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if accept(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        })
    };

    if let Some(k) = balanced {
        let c4 = gamma(k);
        if c4 > 1e-8 * (1.0 + c3) {
            return Ok(ConstantsEstimate {
                c3,
                c4,
                k,
                degenerate: false,
            });
        }
    }
    let k = accretive + 1.0;
    Ok(ConstantsEstimate {
        c3,
        c4: gamma(k),
        k,
        degenerate: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoercivityReport {
    pub bounded: bool,
    pub coercive: bool,
    /// Smallest `C3 - |a(u,v)|/(‖u‖‖v‖)` over the sampled pairs.
    pub worst_bound_margin: f64,
    /// Smallest `(Re a(v,v) - C4‖v‖² + k|v|²)/‖v‖²` over the samples.
    pub worst_coercive_margin: f64,
    /// `C3` minus the largest singular value of the form in `V` geometry.
    pub extreme_bound_margin: f64,
    /// Smallest generalized eigenvalue of `Re a - C4 G_V + k G_H` against `G_V`.
    pub extreme_coercive_margin: f64,
}

impl CoercivityReport {
    pub fn passed(&self) -> bool {
        self.bounded && self.coercive
    }
}

/// Checks both inequalities of the Lax-Milgram hypothesis on random samples
/// and at the extremes of the symmetrized form.
pub fn verify_coercivity(op: &CoerciveOperator, samples: usize, tol: f64, seed: u64) -> Result<CoercivityReport> {
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be at least 1".into()));
    }
    let triple = op.triple();
    let n = op.dim();
    let (c3, c4, k) = (op.c3, op.c4, op.k);
    let mut rng = sampling::rng(seed);
    let mut worst_bound = f64::INFINITY;
    let mut worst_coercive = f64::INFINITY;
    for _ in 0..samples {
        let u = sampling::complex_vector(&mut rng, n);
        let v = sampling::complex_vector(&mut rng, n);
        let (un, vn) = (triple.v_norm(&u), triple.v_norm(&v));
        worst_bound = worst_bound.min(c3 - op.form(&u, &v).norm() / (un * vn));
        let h2 = triple.h_norm(&v).powi(2);
        worst_coercive = worst_coercive.min((op.form(&v, &v).re - c4 * vn * vn + k * h2) / (vn * vn));
    }

    let b = op.form_matrix();
    let sigma_max = singular_values(&congruence_reduce(&b, &triple.chol_v))
        .first()
        .copied()
        .unwrap_or(0.0);
    let shifted = hermitian_part(&b) - triple.gram_v().scale(c4) + triple.gram_h().scale(k);
    let extreme_coercive = generalized_hermitian_eigenvalues(&shifted, triple.gram_v())?[0];
    let extreme_bound = c3 - sigma_max;

    Ok(CoercivityReport {
        bounded: worst_bound >= -tol && extreme_bound >= -tol,
        coercive: worst_coercive >= -tol && extreme_coercive >= -tol,
        worst_bound_margin: worst_bound,
        worst_coercive_margin: worst_coercive,
        extreme_bound_margin: extreme_bound,
        extreme_coercive_margin: extreme_coercive,
    })
}

/// Real numbers serialize as plain JSON numbers, complex ones as `[re, im]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum JsonScalar {
    Real(f64),
    Complex([f64; 2]),
}

impl From<C64> for JsonScalar {
    fn from(z: C64) -> Self {
        if z.im == 0.0 {
            JsonScalar::Real(z.re)
        } else {
            JsonScalar::Complex([z.re, z.im])
        }
    }
}

impl From<JsonScalar> for C64 {
    fn from(s: JsonScalar) -> Self {
        match s {
            JsonScalar::Real(re) => c(re),
            JsonScalar::Complex([re, im]) => C64::new(re, im),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Spectral,
    Matrix,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsDescriptor {
    #[serde(rename = "C1", default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(rename = "C2", default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
    #[serde(rename = "C3", default, skip_serializing_if = "Option::is_none")]
    pub c3: Option<f64>,
    #[serde(rename = "C4", default, skip_serializing_if = "Option::is_none")]
    pub c4: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
}

/// JSON form of an operator and its triple.
///
/// Omitted Gram tables default to the identity for `gram_H`, and for `gram_V`
/// to `diag(1 + λ_j)` (spectral) or the identity (matrix). Omitted constants
/// are estimated; `C1`/`C2` default to the tight embedding constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorDescriptor {
    pub backend: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigenvalues: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<JsonScalar>>>,
    #[serde(rename = "gram_V", default, skip_serializing_if = "Option::is_none")]
    pub gram_v: Option<Vec<Vec<JsonScalar>>>,
    #[serde(rename = "gram_H", default, skip_serializing_if = "Option::is_none")]
    pub gram_h: Option<Vec<Vec<JsonScalar>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<ConstantsDescriptor>,
}

fn table_to_matrix(rows: &[Vec<JsonScalar>], name: &str) -> Result<CMatrix> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidArgument(format!("{name} must be a square table")));
    }
    Ok(CMatrix::from_fn(n, n, |i, j| rows[i][j].into()))
}

impl OperatorDescriptor {
    pub fn build(&self) -> Result<CoerciveOperator> {
        let backend = match self.backend {
            BackendKind::Spectral => {
                if self.matrix.is_some() {
                    return Err(Error::InvalidArgument(
                        "spectral backend takes `eigenvalues`, not `matrix`".into(),
                    ));
                }
                let eigenvalues = self
                    .eigenvalues
                    .clone()
                    .ok_or_else(|| Error::InvalidArgument("spectral backend requires `eigenvalues`".into()))?;
                Backend::Spectral { eigenvalues }
            }
            BackendKind::Matrix => {
                if self.eigenvalues.is_some() {
                    return Err(Error::InvalidArgument(
                        "matrix backend takes `matrix`, not `eigenvalues`".into(),
                    ));
                }
                let rows = self
                    .matrix
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("matrix backend requires `matrix`".into()))?;
                Backend::Matrix {
                    matrix: table_to_matrix(rows, "matrix")?,
                }
            }
        };
        let n = match &backend {
            Backend::Spectral { eigenvalues } => eigenvalues.len(),
            Backend::Matrix { matrix } => matrix.nrows(),
        };
        if n == 0 {
            return Err(Error::InvalidArgument("operator dimension must be positive".into()));
        }
        let gram_v = match (&self.gram_v, &backend) {
            (Some(rows), _) => table_to_matrix(rows, "gram_V")?,
            (None, Backend::Spectral { eigenvalues }) => {
                diagonal(&eigenvalues.iter().map(|l| 1.0 + l).collect::<Vec<_>>())
            }
            (None, Backend::Matrix { .. }) => CMatrix::identity(n, n),
        };
        let gram_h = match &self.gram_h {
            Some(rows) => table_to_matrix(rows, "gram_H")?,
            None => CMatrix::identity(n, n),
        };
        let declared = self.constants.clone().unwrap_or_default();
        let triple = match (declared.c1, declared.c2) {
            (Some(c1), Some(c2)) => GelfandTriple::with_constants(gram_v, gram_h, c1, c2)?,
            (None, None) => GelfandTriple::new(gram_v, gram_h)?,
            _ => return Err(Error::InvalidArgument("C1 and C2 must be given together".into())),
        };
        let op = CoerciveOperator::with_estimated_constants(backend, triple)?;
        let c3 = declared.c3.unwrap_or(op.c3);
        let (c4, k) = match (declared.c4, declared.k) {
            (Some(c4), Some(k)) => (c4, k),
            (None, None) => (op.c4, op.k),
            _ => return Err(Error::InvalidArgument("C4 and k must be given together".into())),
        };
        CoerciveOperator::assemble(op.backend, op.triple, c3, c4, k)
    }
}
