//! Sampled solutions `u: [0, T] → V` and their solution-space norms.
//!
//! Time derivatives are second-order finite differences on the grid (central
//! inside, one-sided at the ends) and time integrals use the trapezoidal rule.

use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::linalg::CVector;
use crate::triple::GelfandTriple;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryNorms {
    /// `(∫ ‖u‖² dt)^{1/2}`
    pub l2_v: f64,
    /// `(∫ ‖u‖_*² dt)^{1/2}`
    pub l2_dual: f64,
    /// `sup |u(t)|` over the grid.
    pub sup_h: f64,
    /// `(∫ ‖u'‖_*² dt)^{1/2}`
    pub l2_dual_derivative: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    grid: Vec<f64>,
    values: Vec<CVector>,
    derivative: Vec<CVector>,
    v2: Vec<f64>,
    h2: Vec<f64>,
    d2: Vec<f64>,
    norms: TrajectoryNorms,
    pub tags: Vec<String>,
    pub warnings: Vec<String>,
}

/// Second-order finite-difference derivative on a possibly nonuniform grid.
pub fn grid_derivative(grid: &[f64], values: &[CVector]) -> Vec<CVector> {
    let n = grid.len();
    match n {
        0 => Vec::new(),
        1 => vec![CVector::zeros(values[0].len())],
        2 => {
            let d = (&values[1] - &values[0]) / crate::linalg::c(grid[1] - grid[0]);
            vec![d.clone(), d]
        }
        _ => (0..n)
            .map(|i| {
                let (a, b, cc, i0) = if i == 0 {
                    let (h1, h2) = (grid[1] - grid[0], grid[2] - grid[1]);
                    (
                        -(2.0 * h1 + h2) / (h1 * (h1 + h2)),
                        (h1 + h2) / (h1 * h2),
                        -h1 / (h2 * (h1 + h2)),
                        0,
                    )
                } else if i == n - 1 {
                    let (h1, h2) = (grid[n - 2] - grid[n - 3], grid[n - 1] - grid[n - 2]);
                    (
                        h2 / (h1 * (h1 + h2)),
                        -(h1 + h2) / (h1 * h2),
                        (2.0 * h2 + h1) / (h2 * (h1 + h2)),
                        n - 3,
                    )
                } else {
                    let (h1, h2) = (grid[i] - grid[i - 1], grid[i + 1] - grid[i]);
                    (
                        -h2 / (h1 * (h1 + h2)),
                        (h2 - h1) / (h1 * h2),
                        h1 / (h2 * (h1 + h2)),
                        i - 1,
                    )
                };
                values[i0].scale(a) + values[i0 + 1].scale(b) + values[i0 + 2].scale(cc)
            })
            .collect(),
    }
}

/// Running trapezoidal integrals `∫_{t_0}^{t_i} g`, starting at zero.
pub fn cumulative_trapezoid(grid: &[f64], g: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        if i > 0 {
            acc += 0.5 * (grid[i] - grid[i - 1]) * (g[i] + g[i - 1]);
        }
        out.push(acc);
    }
    out
}

fn trapezoid(grid: &[f64], g: &[f64]) -> f64 {
    cumulative_trapezoid(grid, g).last().copied().unwrap_or(0.0)
}

impl Trajectory {
    pub fn new(grid: Vec<f64>, values: Vec<CVector>, triple: &GelfandTriple) -> Result<Self> {
        check_dim(grid.len(), values.len())?;
        if grid.is_empty() || grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument(
                "trajectory grid must be nonempty and strictly increasing".into(),
            ));
        }
        for v in &values {
            check_dim(triple.dim(), v.len())?;
        }
        let derivative = grid_derivative(&grid, &values);
        let v2: Vec<f64> = values.iter().map(|u| triple.v_norm(u).powi(2)).collect();
        let h2: Vec<f64> = values.iter().map(|u| triple.h_norm(u).powi(2)).collect();
        let dual2: Vec<f64> = values.iter().map(|u| triple.dual_norm(u).powi(2)).collect();
        let d2: Vec<f64> = derivative.iter().map(|u| triple.dual_norm(u).powi(2)).collect();
        let norms = TrajectoryNorms {
            l2_v: trapezoid(&grid, &v2).sqrt(),
            l2_dual: trapezoid(&grid, &dual2).sqrt(),
            sup_h: h2.iter().copied().fold(0.0, f64::max).sqrt(),
            l2_dual_derivative: trapezoid(&grid, &d2).sqrt(),
        };
        Ok(Trajectory {
            grid,
            values,
            derivative,
            v2,
            h2,
            d2,
            norms,
            tags: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[CVector] {
        &self.values
    }

    /// Finite-difference `u'` at the grid nodes.
    pub fn derivative(&self) -> &[CVector] {
        &self.derivative
    }

    pub fn norms(&self) -> TrajectoryNorms {
        self.norms
    }

    pub fn first(&self) -> &CVector {
        &self.values[0]
    }

    pub fn last(&self) -> &CVector {
        self.values.last().unwrap()
    }

    pub fn horizon(&self) -> f64 {
        self.grid.last().unwrap() - self.grid[0]
    }

    /// The full norm `(∫‖u‖² + sup|u|² + ∫‖u‖_*² + ∫‖u'‖_*²)^{1/2}`.
    pub fn x_norm(&self) -> f64 {
        let n = &self.norms;
        (n.l2_v.powi(2) + n.sup_h.powi(2) + n.l2_dual.powi(2) + n.l2_dual_derivative.powi(2)).sqrt()
    }

    /// The equivalent norm `(∫‖u‖² + ∫‖u'‖_*²)^{1/2}`.
    pub fn triple_bar_norm(&self) -> f64 {
        (self.norms.l2_v.powi(2) + self.norms.l2_dual_derivative.powi(2)).sqrt()
    }

    /// `(1 + C2²/(C1²T))∫‖u‖² + ∫‖u'‖_*² - sup|u|²`; nonnegative when the
    /// vector-valued Sobolev inequality holds.
    pub fn sobolev_margin(&self, c1: f64, c2: f64) -> f64 {
        let t = self.horizon();
        let n = &self.norms;
        (1.0 + c2 * c2 / (c1 * c1 * t)) * n.l2_v.powi(2) + n.l2_dual_derivative.powi(2) - n.sup_h.powi(2)
    }

    /// `∫_0^{t_i}‖u‖² + sup_{s ≤ t_i}|u(s)|² + ∫_0^{t_i}‖u'‖_*²` at every node.
    pub fn cumulative_energy(&self) -> Vec<f64> {
        let iv = cumulative_trapezoid(&self.grid, &self.v2);
        let id = cumulative_trapezoid(&self.grid, &self.d2);
        let mut sup = 0.0f64;
        (0..self.grid.len())
            .map(|i| {
                sup = sup.max(self.h2[i]);
                iv[i] + sup + id[i]
            })
            .collect()
    }

    /// `self - other` on the shared grid.
    pub fn difference(&self, other: &Trajectory, triple: &GelfandTriple) -> Result<Trajectory> {
        if self.grid != other.grid {
            return Err(Error::InvalidArgument("trajectories live on different grids".into()));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Trajectory::new(self.grid.clone(), values, triple)
    }

    /// Largest Euclidean coefficient norm over the grid.
    pub fn sup_coefficient_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        crate::output::write_coefficient_csv(out, &self.grid, &self.values)
    }
}
