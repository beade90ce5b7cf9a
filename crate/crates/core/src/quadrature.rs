//! Composite four-point Gauss-Legendre rules on panels graded toward an endpoint.

/// Nodes of the 4-point Gauss-Legendre rule on `[-1, 1]`.
pub const GL4_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];

pub const GL4_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_9,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_9,
];

/// Nodes and weights of the 4-point rule mapped to `[a, b]`.
pub fn gl4(a: f64, b: f64) -> [(f64, f64); 4] {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    std::array::from_fn(|i| (mid + half * GL4_NODES[i], half * GL4_WEIGHTS[i]))
}

/// Panels of `[a, b]` for integrands with a boundary layer of width `1/stiffness` at `b`.
///
/// The partition is the union of `base` uniform panels, every breakpoint
/// inside `(a, b)`, and the geometric points `b - 2^i / stiffness`, with each
/// geometric cell split into `sub` equal pieces. Panels are halved `refine` times.
pub fn graded_panels(
    a: f64,
    b: f64,
    base: usize,
    stiffness: f64,
    breakpoints: &[f64],
    sub: usize,
    refine: u32,
) -> Vec<(f64, f64)> {
    if !(b > a) {
        return Vec::new();
    }
    let len = b - a;
    let base = base.max(1);
    let mut edges: Vec<f64> = (0..=base).map(|i| a + len * i as f64 / base as f64).collect();
    edges.extend(breakpoints.iter().copied().filter(|&x| x > a && x < b));

    if stiffness * len > 1.0 {
        let sub = sub.max(1);
        let mut inner = 0.0;
        let mut outer = 1.0 / stiffness;
        loop {
            let stop = outer.min(len);
            for m in 0..sub {
                let d = inner + (stop - inner) * m as f64 / sub as f64;
                if d > 0.0 {
                    edges.push(b - d);
                }
            }
            if outer >= len {
                break;
            }
            inner = outer;
            outer *= 2.0;
        }
    }

    edges.sort_by(f64::total_cmp);
    let tiny = 1e-14 * len;
    edges.dedup_by(|x, y| (*x - *y).abs() <= tiny);
    *edges.first_mut().unwrap() = a;
    *edges.last_mut().unwrap() = b;

    let pieces = 1usize << refine;
    let mut panels = Vec::with_capacity((edges.len() - 1) * pieces);
    for w in edges.windows(2) {
        let h = (w[1] - w[0]) / pieces as f64;
        for p in 0..pieces {
            let lo = w[0] + h * p as f64;
            let hi = if p + 1 == pieces { w[1] } else { lo + h };
            panels.push((lo, hi));
        }
    }
    panels
}

/// Composite 4-point rule over `panels` for real integrands.
pub fn integrate(panels: &[(f64, f64)], f: impl Fn(f64) -> f64) -> f64 {
    panels
        .iter()
        .map(|&(a, b)| gl4(a, b).iter().map(|&(x, w)| w * f(x)).sum::<f64>())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_for_degree_seven() {
        let p = |x: f64| 3.0 * x.powi(7) - x.powi(4) + 2.0;
        let antiderivative = |x: f64| 3.0 / 8.0 * x.powi(8) - x.powi(5) / 5.0 + 2.0 * x;
        let v = integrate(&[(-0.5, 1.25)], p);
        assert_relative_eq!(v, antiderivative(1.25) - antiderivative(-0.5), max_relative = 1e-15);
    }

    #[test]
    fn weights_sum_to_interval_length() {
        let s: f64 = gl4(2.0, 5.0).iter().map(|(_, w)| w).sum();
        assert_relative_eq!(s, 3.0, max_relative = 1e-15);
    }

    #[test]
    fn panels_cover_interval_and_contain_breakpoints() {
        let panels = graded_panels(0.0, 1.0, 4, 1000.0, &[0.3, 0.7], 4, 1);
        assert_eq!(panels.first().unwrap().0, 0.0);
        assert_eq!(panels.last().unwrap().1, 1.0);
        for w in panels.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
        for bp in [0.3, 0.7] {
            assert!(panels.iter().any(|p| (p.0 - bp).abs() < 1e-15));
        }
        let last = panels.last().unwrap();
        assert!(last.1 - last.0 <= 1.0 / 1000.0 / 4.0 / 2.0 + 1e-15);
    }

    #[test]
    fn stiff_boundary_layer_is_resolved() {
        for lambda in [1.0, 50.0, 900.0, 1e5] {
            let panels = graded_panels(0.0, 0.5, 8, lambda, &[], 4, 0);
            let v = integrate(&panels, |s| (-lambda * (0.5 - s)).exp());
            let exact = -(-lambda * 0.5f64).exp_m1() / lambda;
            assert_relative_eq!(v, exact, max_relative = 1e-10);
        }
    }
}
