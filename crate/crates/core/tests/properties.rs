//! Randomized invariants of the triple, the semigroup and the solvers.

use fvpkit::duhamel::{compute_yf, gronwall_lemma_check, solve_forward_duhamel, uniform_grid, QuadratureOptions};
use fvpkit::fvp::{random_cauchy_data, solve_fvp, stability_constant, y_norm, FvpData, FvpOptions, RoundTripOptions};
use fvpkit::linalg::{c, singular_values, CMatrix, CVector, C64};
use fvpkit::sampling::{self, SeededRng};
use fvpkit::semigroup::{domain_chain_probe, height_profile, DomainTolerances, SemigroupEvaluator};
use fvpkit::source::SourceTerm;
use fvpkit::triple::{estimate_constants, verify_coercivity, Backend, CoerciveOperator, GelfandTriple};
use proptest::prelude::*;

/// Hermitian positive definite `B B^* + shift I`.
fn spd(rng: &mut SeededRng, n: usize, shift: f64) -> CMatrix {
    let b = CMatrix::from_fn(n, n, |_, _| sampling::complex_normal(rng));
    &b * b.adjoint() + CMatrix::identity(n, n).scale(shift)
}

/// Random triple with `G_V ≥ G_H` up to scale and a random non-normal generator.
fn random_matrix_operator(seed: u64, n: usize) -> CoerciveOperator {
    let mut rng = sampling::rng(seed);
    let gh = spd(&mut rng, n, 1.0);
    let gv = &gh + spd(&mut rng, n, 0.5);
    let triple = GelfandTriple::new(gv, gh).unwrap();
    let a = CMatrix::from_fn(n, n, |_, _| sampling::complex_normal(&mut rng)) + CMatrix::identity(n, n).scale(2.0);
    CoerciveOperator::with_estimated_constants(Backend::Matrix { matrix: a }, triple).unwrap()
}

fn random_spectral_operator(seed: u64, n: usize) -> CoerciveOperator {
    use rand::Rng;
    let mut rng = sampling::rng(seed);
    let mut eigs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..20.0)).collect();
    eigs.sort_by(f64::total_cmp);
    let triple = GelfandTriple::weighted(&eigs.iter().map(|l| 1.0 + l).collect::<Vec<_>>()).unwrap();
    CoerciveOperator::spectral(eigs, triple, 1.0, 1.0, 1.0).unwrap()
}

fn rel(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

fn neumann_like(n: usize) -> SemigroupEvaluator {
    let eigs: Vec<f64> = (0..n).map(|j| (j * j) as f64).collect();
    let triple = GelfandTriple::weighted(&eigs.iter().map(|l| 1.0 + l).collect::<Vec<_>>()).unwrap();
    SemigroupEvaluator::new(CoerciveOperator::spectral(eigs, triple, 1.0, 1.0, 1.0).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dual_norm_is_the_supremum_over_the_v_unit_ball(seed in any::<u64>(), n in 2usize..6) {
        let op = random_matrix_operator(seed, n);
        let t = op.triple();
        let mut rng = sampling::rng(seed ^ 1);
        let v = sampling::complex_vector(&mut rng, n);
        // sup_w |<v, w>_H|^2 / ‖w‖^2 = b^* G_V^{-1} b with b = G_H v, by an LU solve
        let b = t.gram_h() * &v;
        let sol = t.gram_v().clone().lu().solve(&b).unwrap();
        let sup = b.dotc(&sol).re.sqrt();
        prop_assert!((t.dual_norm(&v) - sup).abs() <= 1e-10 * sup);
    }

    #[test]
    fn embedding_chain_holds(seed in any::<u64>(), n in 2usize..6) {
        let op = random_matrix_operator(seed, n);
        let t = op.triple();
        let mut rng = sampling::rng(seed ^ 2);
        for _ in 0..1000 {
            let v = sampling::complex_vector(&mut rng, n);
            let (d, h, vn) = (t.dual_norm(&v), t.h_norm(&v), t.v_norm(&v));
            prop_assert!(d <= t.c1() * h * (1.0 + 1e-12));
            prop_assert!(t.c1() * h <= t.c2() * vn * (1.0 + 1e-12));
        }
    }

    #[test]
    fn estimated_constants_pass_verification(seed in any::<u64>(), n in 2usize..6) {
        let op = random_matrix_operator(seed, n);
        let est = estimate_constants(&op.form_matrix(), op.triple()).unwrap();
        prop_assert!(est.c4 > 0.0 && est.k >= 0.0);
        let report = verify_coercivity(&op, 500, 1e-9, seed).unwrap();
        prop_assert!(report.passed(), "{:?}", report);
    }

    #[test]
    fn semigroup_law(seed in any::<u64>(), s in 0.0f64..1.0, t in 0.0f64..1.0) {
        for op in [random_matrix_operator(seed, 4), random_spectral_operator(seed, 6)] {
            let ev = SemigroupEvaluator::new(op);
            let lhs = ev.propagator(s).unwrap() * ev.propagator(t).unwrap();
            prop_assert!(rel(&lhs, &ev.propagator(s + t).unwrap()) <= 1e-10);
        }
    }

    #[test]
    fn inverse_undoes_evolution_within_amplified_roundoff(seed in any::<u64>(), t in 0.01f64..1.0) {
        for op in [random_matrix_operator(seed, 4), random_spectral_operator(seed, 6)] {
            let ev = SemigroupEvaluator::new(op);
            let x = sampling::complex_vector(&mut sampling::rng(seed ^ 3), ev.dim());
            let back = ev.evolve_inverse(t, &ev.evolve(t, &x).unwrap(), None).unwrap();
            prop_assert!((&back.value - &x).norm() <= back.kappa.max(1.0) * 1e-12 * x.norm());
            let smin = *singular_values(&ev.propagator(t).unwrap()).last().unwrap();
            prop_assert!(smin > 0.0);
        }
    }

    #[test]
    fn inverse_commutes_with_evolution(seed in any::<u64>(), s in 0.0f64..0.5, t in 0.0f64..0.5) {
        let ev = SemigroupEvaluator::new(random_spectral_operator(seed, 6));
        let x = sampling::complex_vector(&mut sampling::rng(seed ^ 4), 6);
        let a = ev.evolve(s, &ev.evolve_inverse(t, &x, None).unwrap().value).unwrap();
        let b = ev.evolve_inverse(t, &ev.evolve(s, &x).unwrap(), None).unwrap().value;
        prop_assert!((&a - &b).norm() <= 1e-11 * a.norm());
    }

    #[test]
    fn graph_norms_grow_with_time(seed in any::<u64>(), t in 0.0f64..0.5, dt in 0.01f64..0.5) {
        let ev = SemigroupEvaluator::new(random_spectral_operator(seed, 8));
        let mut rng = sampling::rng(seed ^ 5);
        let x: Vec<f64> = (0..8).map(|_| sampling::normal(&mut rng)).collect();
        let levels = [2, 4, 8];
        let (a, b) = domain_chain_probe(&ev, t, t + dt, &levels, |j, _| x[j], &DomainTolerances::default()).unwrap();
        for (ga, gb) in a.log_graph_norms.iter().zip(&b.log_graph_norms) {
            prop_assert!(ga <= gb);
        }
    }

    #[test]
    fn evolution_solves_the_homogeneous_equation(seed in any::<u64>(), t in 0.1f64..1.0) {
        for op in [random_matrix_operator(seed, 4), random_spectral_operator(seed, 6)] {
            let ev = SemigroupEvaluator::new(op);
            let x = sampling::complex_vector(&mut sampling::rng(seed ^ 6), ev.dim());
            let h = 1e-5;
            let d = (ev.evolve(t + h, &x).unwrap() - ev.evolve(t - h, &x).unwrap()).unscale(2.0 * h);
            let exact = -ev.op().apply(&ev.evolve(t, &x).unwrap());
            prop_assert!((&d - &exact).norm() <= 1e-6 * exact.norm());
        }
    }

    #[test]
    fn height_is_bounded_below_by_the_smallest_singular_value(seed in any::<u64>()) {
        let ev = SemigroupEvaluator::new(random_matrix_operator(seed, 4));
        let u0 = sampling::complex_vector(&mut sampling::rng(seed ^ 7), 4);
        let grid = uniform_grid(1.0, 8);
        let profile = height_profile(&ev, &u0, &grid).unwrap();
        let h0 = ev.op().triple().h_norm(&u0);
        // σ_min of E(t) as a map on (C^n, |·|_H), via the Cholesky factor of G_H
        let l = ev.op().triple().gram_h().clone().cholesky().unwrap().l();
        let linv = l.clone().try_inverse().unwrap();
        for (t, h) in grid.iter().zip(&profile.h) {
            let e = l.adjoint() * ev.propagator(*t).unwrap() * linv.adjoint();
            let smin = *singular_values(&e).last().unwrap();
            prop_assert!(*h >= smin * h0 * (1.0 - 1e-10) && *h > 0.0);
        }
    }

    #[test]
    fn yield_is_linear_in_the_source(seed in any::<u64>(), alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
        let ev = neumann_like(8);
        let mut rng = sampling::rng(seed);
        let opts = RoundTripOptions::default();
        let (_, f) = random_cauchy_data(&ev, 0.5, &opts, &mut rng).unwrap();
        let (_, g) = random_cauchy_data(&ev, 0.5, &opts, &mut rng).unwrap();
        let q = QuadratureOptions::default();
        let combined = SourceTerm::combine(c(alpha), &f, c(beta), &g).unwrap();
        let lhs = compute_yf(&ev, &combined, 0.5, &q).unwrap().value;
        let rhs = compute_yf(&ev, &f, 0.5, &q).unwrap().value.scale(alpha) + compute_yf(&ev, &g, 0.5, &q).unwrap().value.scale(beta);
        prop_assert!((&lhs - &rhs).norm() <= 1e-12 * (1.0 + rhs.norm()));
    }

    #[test]
    fn yield_pairs_like_the_integral_of_pairings(seed in any::<u64>()) {
        let n = 5;
        let ev = SemigroupEvaluator::new(random_spectral_operator(seed, n));
        let mut rng = sampling::rng(seed);
        let horizon = 0.5;
        let nodes = uniform_grid(horizon, 4);
        let samples: Vec<CVector> = nodes.iter().map(|_| sampling::complex_vector(&mut rng, n)).collect();
        let f = SourceTerm::new(nodes, samples, Default::default()).unwrap();
        let yf = compute_yf(&ev, &f, horizon, &QuadratureOptions::default()).unwrap().value;
        let t = ev.op().triple();
        for _ in 0..10 {
            let phi = sampling::complex_vector(&mut rng, n);
            // composite Simpson on 2000 cells aligned with the source nodes
            let m = 2000;
            let g = |s: f64| t.h_inner(&ev.evolve(horizon - s, &f.at(s)).unwrap(), &phi);
            let h = horizon / m as f64;
            let mut acc = C64::new(0.0, 0.0);
            for i in 0..m {
                let (a, b) = (i as f64 * h, (i + 1) as f64 * h);
                acc += (g(a) + g(0.5 * (a + b)) * 4.0 + g(b)) * (h / 6.0);
            }
            let pairing = t.h_inner(&yf, &phi);
            prop_assert!((pairing - acc).norm() <= 1e-10 * (1.0 + acc.norm()), "{} vs {}", pairing, acc);
        }
    }

    #[test]
    fn gronwall_lemma_on_sampled_instances(seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = sampling::rng(seed);
        let grid = uniform_grid(1.0, 200);
        let k: Vec<f64> = grid.iter().map(|_| rng.random_range(0.0..3.0)).collect();
        let mut e = Vec::new();
        let mut acc = rng.random_range(0.1..1.0);
        for _ in &grid {
            acc += rng.random_range(0.0..0.01);
            e.push(acc);
        }
        // φ_i = θ_i (E_i + ∫_0^{t_i} kφ) with the trapezoidal integral solved for φ_i
        let mut phi: Vec<f64> = Vec::new();
        let mut integral = 0.0;
        for i in 0..grid.len() {
            let theta = rng.random_range(0.0..0.99);
            let value = if i == 0 {
                theta * e[0]
            } else {
                let h = grid[i] - grid[i - 1];
                let known = integral + 0.5 * h * k[i - 1] * phi[i - 1];
                let v = theta * (e[i] + known) / (1.0 - theta * 0.5 * h * k[i]);
                integral = known + 0.5 * h * k[i] * v;
                v
            };
            phi.push(value);
        }
        let check = gronwall_lemma_check(&grid, &phi, &k, &e, 1e-12).unwrap();
        prop_assert!(check.hypothesis);
        prop_assert!(check.conclusion);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn triple_bar_norm_is_equivalent_to_the_x_norm(seed in any::<u64>(), horizon in 0.2f64..2.0) {
        let ev = neumann_like(12);
        let (u0, f) = random_cauchy_data(&ev, horizon, &RoundTripOptions::default(), &mut sampling::rng(seed)).unwrap();
        let u = solve_forward_duhamel(&ev, &u0, &f, &uniform_grid(horizon, 64), &QuadratureOptions::default()).unwrap();
        let t = ev.op().triple();
        let (c1, c2) = (t.c1(), t.c2());
        let bound = (2.0 + c2 * c2 + c2 * c2 / (c1 * c1 * horizon)).sqrt();
        prop_assert!(u.triple_bar_norm() <= u.x_norm());
        prop_assert!(u.x_norm() <= bound * u.triple_bar_norm());
        prop_assert!(u.sobolev_margin(c1, c2) >= 0.0);
    }

    #[test]
    fn flow_map_is_injective(seed in any::<u64>()) {
        let ev = SemigroupEvaluator::new(random_matrix_operator(seed, 4));
        let horizon = 0.7;
        let mut rng = sampling::rng(seed);
        let f = SourceTerm::constant(sampling::complex_vector(&mut rng, 4), horizon).unwrap();
        let (a, b) = (sampling::complex_vector(&mut rng, 4), sampling::complex_vector(&mut rng, 4));
        let q = QuadratureOptions::default();
        let ua = solve_forward_duhamel(&ev, &a, &f, &[0.0, horizon], &q).unwrap();
        let ub = solve_forward_duhamel(&ev, &b, &f, &[0.0, horizon], &q).unwrap();
        let smin = *singular_values(&ev.propagator(horizon).unwrap()).last().unwrap();
        prop_assert!((ua.last() - ub.last()).norm() >= smin * (&a - &b).norm() * (1.0 - 1e-10));
    }

    #[test]
    fn homogeneous_final_coefficients_decay_exponentially(seed in any::<u64>(), horizon in 0.1f64..2.0) {
        let ev = neumann_like(16);
        let u0 = sampling::complex_vector(&mut sampling::rng(seed), 16);
        let f = SourceTerm::zero(16, horizon).unwrap();
        let u = solve_forward_duhamel(&ev, &u0, &f, &[0.0, horizon], &QuadratureOptions::default()).unwrap();
        for j in 0..16 {
            let decay = (-horizon * (j * j) as f64).exp();
            prop_assert!(u.last()[j].norm() <= decay * u0.norm() * (1.0 + 1e-14));
            // exact eigen-decay of each coefficient
            prop_assert!((u.last()[j] - u0[j] * decay).norm() <= 1e-15 * u0[j].norm());
        }
        // the zero mode is constant in time
        prop_assert_eq!(u.last()[0], u0[0]);
    }

    #[test]
    fn recovery_obeys_the_stability_estimate(seed in any::<u64>(), horizon in 0.2f64..1.0) {
        let ev = neumann_like(12);
        let (u0, f) = random_cauchy_data(&ev, horizon, &RoundTripOptions::default(), &mut sampling::rng(seed)).unwrap();
        let q = QuadratureOptions::default();
        let grid = uniform_grid(horizon, 128);
        let u_t = solve_forward_duhamel(&ev, &u0, &f, &grid, &q).unwrap().last().clone();
        let data = FvpData::new(f.clone(), u_t.clone(), horizon).unwrap();
        let sol = solve_fvp(&ev, &data, &grid, &FvpOptions::default()).unwrap();
        let y = y_norm(&ev, &f, &u_t, horizon, &q).unwrap();
        prop_assert!(sol.trajectory.x_norm() <= stability_constant(ev.op(), horizon) * y);
        // the zero mode is recovered exactly up to the yield roundoff
        prop_assert!((sol.u0[0] - u0[0]).norm() <= 1e-12 * (1.0 + u0[0].norm()));
    }
}
