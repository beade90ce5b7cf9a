//! Dense complex linear algebra used by the operator backends.
//!
//! Everything is expressed over `Complex<f64>`; real inputs are embedded
//! with zero imaginary part.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CVector = DVector<C64>;
pub type CMatrix = DMatrix<C64>;

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn real_vector(values: &[f64]) -> CVector {
    CVector::from_iterator(values.len(), values.iter().map(|&v| c(v)))
}

/// Row-major real table to complex matrix.
pub fn real_matrix(rows: &[Vec<f64>]) -> Result<CMatrix> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::InvalidArgument("ragged matrix rows".into()));
    }
    Ok(CMatrix::from_fn(n, m, |i, j| c(rows[i][j])))
}

pub fn diagonal(values: &[f64]) -> CMatrix {
    CMatrix::from_diagonal(&real_vector(values))
}

/// Largest entry of `|m - m^*|` relative to the largest entry of `|m|`.
pub fn hermitian_defect(m: &CMatrix) -> f64 {
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst / scale
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// Eigenvalues (ascending) and orthonormal eigenvectors of a Hermitian matrix.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = hermitian_part(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    (values, vectors)
}

/// Lower Cholesky factor of a Hermitian positive definite matrix.
pub fn cholesky_factor(m: &CMatrix, table: &'static str) -> Result<CMatrix> {
    let (values, _) = hermitian_eigen(m);
    let min = values.first().copied().unwrap_or(0.0);
    if !(min > 0.0) {
        return Err(Error::NotPositiveDefinite {
            table,
            min_eigenvalue: min,
        });
    }
    hermitian_part(m)
        .cholesky()
        .map(|ch| ch.l())
        .ok_or(Error::NotPositiveDefinite {
            table,
            min_eigenvalue: min,
        })
}

/// `L^{-1} B L^{-*}` for lower-triangular `L`.
pub fn congruence_reduce(b: &CMatrix, l: &CMatrix) -> CMatrix {
    let left = l
        .solve_lower_triangular(b)
        .expect("Cholesky factor has nonzero diagonal");
    let right = l
        .solve_lower_triangular(&left.adjoint())
        .expect("Cholesky factor has nonzero diagonal");
    right.adjoint()
}

/// Eigenvalues (ascending) of the Hermitian pencil `B x = mu M x`, `M` positive definite.
pub fn generalized_hermitian_eigenvalues(b: &CMatrix, m: &CMatrix) -> Result<Vec<f64>> {
    let l = cholesky_factor(m, "pencil metric")?;
    let reduced = congruence_reduce(&hermitian_part(b), &l);
    Ok(hermitian_eigen(&reduced).0)
}

pub fn singular_values(m: &CMatrix) -> Vec<f64> {
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// 2-norm condition number (infinite for singular matrices).
pub fn condition_number(m: &CMatrix) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&max), Some(&min)) if min > 0.0 => max / min,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

pub fn one_norm(m: &CMatrix) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Scaling threshold for the degree-13 diagonal Pade approximant.
const THETA13: f64 = 5.371920351148152;

/// Matrix exponential by scaling and squaring with the degree-13 Pade approximant.
pub fn expm(a: &CMatrix) -> CMatrix {
    let n = a.nrows();
    if n == 0 {
        return a.clone();
    }
    let norm = one_norm(a);
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = a.scale(2f64.powi(-squarings));
    let b = &PADE13;
    let id = CMatrix::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let inner_u = &a6 * (a6.scale(b[13]) + a4.scale(b[11]) + a2.scale(b[9]));
    let u = &a * (inner_u + a6.scale(b[7]) + a4.scale(b[5]) + a2.scale(b[3]) + id.scale(b[1]));
    let inner_v = &a6 * (a6.scale(b[12]) + a4.scale(b[10]) + a2.scale(b[8]));
    let v = inner_v + a6.scale(b[6]) + a4.scale(b[4]) + a2.scale(b[2]) + id.scale(b[0]);

    let numer = &v + &u;
    let denom = &v - &u;
    let mut result = denom
        .lu()
        .solve(&numer)
        .expect("Pade denominator is nonsingular after scaling");
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Diagonalization `A = V diag(values) V^{-1}`.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    pub values: Vec<C64>,
    pub vectors: CMatrix,
    pub inverse: CMatrix,
    /// 2-norm condition number of `vectors`.
    pub condition: f64,
}

impl EigenBasis {
    /// Returns `None` when `a` is numerically defective.
    pub fn new(a: &CMatrix) -> Option<Self> {
        let n = a.nrows();
        if hermitian_defect(a) <= 1e-14 {
            let (values, vectors) = hermitian_eigen(a);
            let inverse = vectors.adjoint();
            return Some(EigenBasis {
                values: values.into_iter().map(c).collect(),
                vectors,
                inverse,
                condition: 1.0,
            });
        }
        let (q, t) = a.clone().schur().unpack();
        let scale = t.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let gap_floor = 1e3 * f64::EPSILON * scale;
        let mut y = CMatrix::zeros(n, n);
        for k in 0..n {
            y[(k, k)] = c(1.0);
            for i in (0..k).rev() {
                let mut acc = C64::new(0.0, 0.0);
                for m in (i + 1)..=k {
                    acc += t[(i, m)] * y[(m, k)];
                }
                let gap = t[(i, i)] - t[(k, k)];
                if gap.norm() < gap_floor {
                    if acc.norm() < gap_floor {
                        y[(i, k)] = C64::new(0.0, 0.0);
                        continue;
                    }
                    return None;
                }
                y[(i, k)] = -acc / gap;
            }
            let norm = y.column(k).norm();
            y.column_mut(k).unscale_mut(norm);
        }
        let vectors = &q * &y;
        let condition = condition_number(&vectors);
        if !condition.is_finite() {
            return None;
        }
        let inverse = vectors.clone().lu().try_inverse()?;
        let values = (0..n).map(|i| t[(i, i)]).collect();
        Some(EigenBasis {
            values,
            vectors,
            inverse,
            condition,
        })
    }

    /// `V diag(g(values)) V^{-1}`.
    pub fn apply_function(&self, g: impl Fn(C64) -> C64) -> CMatrix {
        let mut scaled = self.vectors.clone();
        for (j, &value) in self.values.iter().enumerate() {
            let factor = g(value);
            for z in scaled.column_mut(j).iter_mut() {
                *z *= factor;
            }
        }
        scaled * &self.inverse
    }
}
