//! Time-dependent source terms `f: [0, T] → V*` sampled on a node grid.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{CVector, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    #[default]
    PiecewiseLinear,
    /// Left-continuous steps: the value on `[t_i, t_{i+1})` is the sample at `t_i`.
    PiecewiseConstant,
}

/// Declared Hölder regularity `|f(t) - f(s)| ≤ constant·|t - s|^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HolderSpec {
    pub exponent: f64,
    pub constant: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceTerm {
    times: Vec<f64>,
    samples: Vec<CVector>,
    interpolation: Interpolation,
    holder: Option<HolderSpec>,
}

impl SourceTerm {
    pub fn new(times: Vec<f64>, samples: Vec<CVector>, interpolation: Interpolation) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidArgument("a source needs at least two nodes".into()));
        }
        check_dim(times.len(), samples.len())?;
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "source nodes must be finite and strictly increasing".into(),
            ));
        }
        let n = samples[0].len();
        for s in &samples {
            check_dim(n, s.len())?;
        }
        Ok(SourceTerm {
            times,
            samples,
            interpolation,
            holder: None,
        })
    }

    /// The zero source on `[0, horizon]`.
    pub fn zero(dim: usize, horizon: f64) -> Result<Self> {
        Self::constant(CVector::zeros(dim), horizon)
    }

    pub fn constant(value: CVector, horizon: f64) -> Result<Self> {
        Self::new(
            vec![0.0, horizon],
            vec![value.clone(), value],
            Interpolation::PiecewiseLinear,
        )
    }

    /// Samples `f` at `nodes`.
    pub fn from_fn(nodes: Vec<f64>, f: impl Fn(f64) -> CVector) -> Result<Self> {
        let samples = nodes.iter().map(|&t| f(t)).collect();
        Self::new(nodes, samples, Interpolation::PiecewiseLinear)
    }

    /// Attaches a declared Hölder bound after checking it on all node pairs.
    pub fn with_holder(mut self, spec: HolderSpec) -> Result<Self> {
        if !(spec.exponent > 0.0 && spec.exponent < 1.0) || !(spec.constant >= 0.0) {
            return Err(Error::InvalidArgument(
                "Hölder exponent must lie in (0,1) with constant ≥ 0".into(),
            ));
        }
        let q = self.holder_quotient(spec.exponent);
        if q > spec.constant * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "samples violate the declared Hölder bound: quotient {q} > {}",
                spec.constant
            )));
        }
        self.holder = Some(spec);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn samples(&self) -> &[CVector] {
        &self.samples
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn holder(&self) -> Option<HolderSpec> {
        self.holder
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Whether the nodes cover `[a, b]` up to a relative slack of `1e-12`.
    pub fn spans(&self, a: f64, b: f64) -> bool {
        let slack = 1e-12 * (1.0 + a.abs().max(b.abs()));
        self.start() <= a + slack && self.end() >= b - slack
    }

    /// Interpolated value; times outside the node range clamp to the end samples.
    pub fn at(&self, t: f64) -> CVector {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.samples[0].clone();
        }
        if t >= self.times[n - 1] {
            return self.samples[n - 1].clone();
        }
        let i = self.times.partition_point(|&x| x <= t) - 1;
        match self.interpolation {
            Interpolation::PiecewiseConstant => self.samples[i].clone(),
            Interpolation::PiecewiseLinear => {
                let (t0, t1) = (self.times[i], self.times[i + 1]);
                let w = (t - t0) / (t1 - t0);
                self.samples[i].scale(1.0 - w) + self.samples[i + 1].scale(w)
            }
        }
    }

    /// Largest `|f(t_i) - f(t_j)| / |t_i - t_j|^σ` over node pairs, in the
    /// Euclidean coefficient norm.
    pub fn holder_quotient(&self, sigma: f64) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.times.len() {
            for j in (i + 1)..self.times.len() {
                let d = (&self.samples[j] - &self.samples[i]).norm();
                worst = worst.max(d / (self.times[j] - self.times[i]).powf(sigma));
            }
        }
        worst
    }

    /// `αf + βg` for sources on the same nodes.
    pub fn combine(alpha: C64, f: &SourceTerm, beta: C64, g: &SourceTerm) -> Result<SourceTerm> {
        if f.times != g.times || f.interpolation != g.interpolation {
            return Err(Error::InvalidArgument(
                "sources must share nodes and interpolation".into(),
            ));
        }
        check_dim(f.dim(), g.dim())?;
        let samples = f
            .samples
            .iter()
            .zip(&g.samples)
            .map(|(a, b)| a * alpha + b * beta)
            .collect();
        SourceTerm::new(f.times.clone(), samples, f.interpolation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::real_vector;

    fn ramp() -> SourceTerm {
        SourceTerm::new(
            vec![0.0, 1.0, 2.0],
            vec![real_vector(&[0.0]), real_vector(&[2.0]), real_vector(&[2.0])],
            Interpolation::PiecewiseLinear,
        )
        .unwrap()
    }

    #[test]
    fn linear_interpolation_between_nodes() {
        let f = ramp();
        assert_eq!(f.at(0.25)[0].re, 0.5);
        assert_eq!(f.at(1.5)[0].re, 2.0);
        assert_eq!(f.at(3.0)[0].re, 2.0);
    }

    #[test]
    fn constant_interpolation_is_left_continuous() {
        let f = SourceTerm::new(
            ramp().times.clone(),
            ramp().samples.clone(),
            Interpolation::PiecewiseConstant,
        )
        .unwrap();
        assert_eq!(f.at(0.99)[0].re, 0.0);
        assert_eq!(f.at(1.0)[0].re, 2.0);
    }

    #[test]
    fn rejects_unordered_nodes() {
        let r = SourceTerm::new(
            vec![0.0, 0.0],
            vec![real_vector(&[1.0]); 2],
            Interpolation::PiecewiseLinear,
        );
        assert!(r.is_err());
    }

    #[test]
    fn holder_bound_is_checked_on_samples() {
        let f = ramp();
        assert_eq!(f.holder_quotient(0.5), 2.0);
        assert!(f
            .clone()
            .with_holder(HolderSpec {
                exponent: 0.5,
                constant: 2.0
            })
            .is_ok());
        assert!(f
            .with_holder(HolderSpec {
                exponent: 0.5,
                constant: 1.9
            })
            .is_err());
    }

    #[test]
    fn spans_with_slack() {
        let f = ramp();
        assert!(f.spans(0.0, 2.0));
        assert!(!f.spans(0.0, 2.1));
    }
}
