//! Property tests for the orbit metric, the reduction and the oracle.

use orbitflow::dynamics::{self, vector_field, EventKind, IntegrateOptions};
use orbitflow::linalg::{self, c, CMatrix};
use orbitflow::oracle::{closed_form_2x2, eigenflow};
use orbitflow::orbit_metric::{chamber_map, distance, minimal_segment, segment_stratum_check, ChamberPoint};
use orbitflow::reduction::{hamiltonian_ambient, momentum_map, reconstruct, reduce};
use orbitflow::{hamiltonian_reduced, integrate_with, sampling, MatrixModel, ModelKind, ReducedState};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model_strategy(max_n: usize) -> impl Strategy<Value = MatrixModel> {
    (2..=max_n, any::<bool>()).prop_map(|(n, real)| {
        if real {
            MatrixModel::symmetric(n)
        } else {
            MatrixModel::hermitian(n)
        }
    })
}

fn permutation_matrix(perm: &[usize]) -> CMatrix {
    let n = perm.len();
    let mut p = CMatrix::zeros(n, n);
    for (i, &j) in perm.iter().enumerate() {
        p[(i, j)] = c(1.0, 0.0);
    }
    p
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn reduced_diff(s: &ReducedState, t: &ReducedState) -> f64 {
    max_diff(&s.a, &t.a).max(max_diff(&s.p, &t.p)).max(linalg::max_abs(&(&s.y - &t.y)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chamber_map_is_conjugation_invariant(model in model_strategy(6), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = sampling::random_matrix(model, &mut rng);
        let p0 = chamber_map(&a, model, 1e-8).unwrap();
        let mut perm: Vec<usize> = (0..model.n).collect();
        for i in (1..model.n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let pm = chamber_map(&linalg::conjugate(&permutation_matrix(&perm), &a), model, 1e-8).unwrap();
        prop_assert!(max_diff(p0.values(), pm.values()) < 1e-10);
        let g = sampling::random_group_element(model, &mut rng);
        let pg = chamber_map(&linalg::conjugate(&g, &a), model, 1e-8).unwrap();
        prop_assert!(max_diff(p0.values(), pg.values()) < 1e-10);
    }

    #[test]
    fn distance_is_a_metric_on_triples(n in 1usize..=6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<ChamberPoint> = (0..3)
            .map(|_| ChamberPoint::from_unsorted((0..n).map(|_| rng.random_range(-2.0..2.0)).collect(), 1e-12).unwrap())
            .collect();
        let d = |i: usize, j: usize| distance(&pts[i], &pts[j]).unwrap();
        prop_assert_eq!(d(0, 1), d(1, 0));
        prop_assert_eq!(d(0, 0), 0.0);
        prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-15);
    }

    #[test]
    fn minimal_segments_stay_sorted_and_refine(n in 1usize..=6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pt = || {
            let v = (0..n).map(|_| rng.random_range(-3..=3) as f64 * 0.5).collect();
            ChamberPoint::from_unsorted(v, 1e-12).unwrap()
        };
        let (p, q) = (pt(), pt());
        let seg = minimal_segment(&p, &q).unwrap();
        for k in 0..=20 {
            let x = seg.point_at(k as f64 / 20.0);
            prop_assert!(x.values().windows(2).all(|w| w[0] >= w[1]));
        }
        prop_assert!(segment_stratum_check(&seg, 50));
    }

    #[test]
    fn distance_bounds_conjugation_orbit(model in model_strategy(4), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = sampling::random_matrix(model, &mut rng);
        let b = sampling::random_matrix(model, &mut rng);
        let d = distance(&chamber_map(&a, model, 1e-8).unwrap(), &chamber_map(&b, model, 1e-8).unwrap()).unwrap();
        for _ in 0..50 {
            let g = sampling::random_group_element(model, &mut rng);
            prop_assert!(d <= linalg::frobenius(&(&a - linalg::conjugate(&g, &b))) + 1e-10);
        }
    }

    #[test]
    fn momentum_is_conserved_along_lines_and_equivariant(model in model_strategy(6), seed in any::<u64>(), t in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = sampling::random_regular_pair(model, 0.2, &mut rng);
        let j0 = momentum_map(&x);
        prop_assert!(linalg::max_abs(&(&momentum_map(&x.flow(t)) - &j0)) < 1e-12);
        let g = sampling::random_group_element(model, &mut rng);
        let jg = momentum_map(&x.conjugated(&g));
        prop_assert!(linalg::max_abs(&(&jg - linalg::conjugate(&g, &j0))) < 1e-10);
    }

    #[test]
    fn reduce_is_gauge_invariant(model in model_strategy(6), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = sampling::random_regular_pair(model, 0.2, &mut rng);
        let (s, _) = reduce(&x, model, 1e-8).unwrap();
        let g = sampling::random_group_element(model, &mut rng);
        let (sg, _) = reduce(&x.conjugated(&g), model, 1e-8).unwrap();
        prop_assert!(reduced_diff(&s, &sg) < 1e-8, "{}", reduced_diff(&s, &sg));
    }

    #[test]
    fn reduce_reconstruct_round_trip(model in model_strategy(6), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = sampling::random_regular_pair(model, 0.2, &mut rng);
        let (s, _) = reduce(&x, model, 1e-8).unwrap();
        for i in 0..model.n {
            prop_assert_eq!(s.y[(i, i)], c(0.0, 0.0));
        }
        let back = reconstruct(&s, model).unwrap();
        let (s2, _) = reduce(&back, model, 1e-8).unwrap();
        prop_assert!(reduced_diff(&s, &s2) < 1e-8);
        prop_assert!((hamiltonian_ambient(&x) - hamiltonian_reduced(&s)).abs() < 1e-10 * (1.0 + hamiltonian_reduced(&s)));
    }

    #[test]
    fn degenerate_pairs_reduce_to_exact_zero_spin(model in model_strategy(6).prop_filter("n >= 3", |m| m.n >= 3), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = sampling::degenerate_wall_pair(model, &mut rng);
        let g = sampling::random_group_element(model, &mut rng);
        let (s, _) = reduce(&x.conjugated(&g), model, 1e-8).unwrap();
        prop_assert_eq!(s.a[0], s.a[1]);
        prop_assert_eq!(s.y[(0, 1)], c(0.0, 0.0));
        prop_assert_eq!(s.y[(1, 0)], c(0.0, 0.0));
    }

    #[test]
    fn relabelling_permutes_the_vector_field(model in model_strategy(5), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = sampling::random_reduced_state(model, &mut rng);
        let n = model.n;
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let y = CMatrix::from_fn(n, n, |i, j| s.y[(perm[i], perm[j])]);
        let sp = ReducedState { a: perm.iter().map(|&i| s.a[i]).collect(), p: perm.iter().map(|&i| s.p[i]).collect(), y };
        let (f, fp) = (vector_field(&s, model), vector_field(&sp, model));
        for i in 0..n {
            prop_assert!((fp.da[i] - f.da[perm[i]]).abs() < 1e-12);
            prop_assert!((fp.dp[i] - f.dp[perm[i]]).abs() < 1e-12);
            for j in 0..n {
                prop_assert!((fp.dy[(i, j)] - f.dy[(perm[i], perm[j])]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn eigenflow_rows_are_sorted_and_lipschitz(model in model_strategy(6), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = sampling::random_regular_pair(model, 0.2, &mut rng);
        let h = 0.01;
        let times: Vec<f64> = (0..=100).map(|k| k as f64 * h).collect();
        let rows = eigenflow(&x.a, &x.alpha, model, &times).unwrap();
        let bound = linalg::frobenius(&x.alpha) * h + 1e-12;
        for r in 0..rows.nrows() {
            for i in 1..model.n {
                prop_assert!(rows[(r, i - 1)] >= rows[(r, i)]);
            }
            if r > 0 {
                let step: f64 = (0..model.n).map(|i| (rows[(r, i)] - rows[(r - 1, i)]).abs()).sum();
                prop_assert!(step <= model.n as f64 * bound);
                prop_assert!((0..model.n).all(|i| (rows[(r, i)] - rows[(r - 1, i)]).abs() <= bound));
            }
        }
    }

    #[test]
    fn closed_form_is_real_and_ordered(a1 in -5.0f64..5.0, a2 in -5.0f64..5.0, v1 in -5.0f64..5.0, v2 in -5.0f64..5.0, v3 in -5.0f64..5.0, t in -5.0f64..5.0) {
        let (l1, l2) = closed_form_2x2(a1, a2, v1, v2, v3, t);
        prop_assert!(l1.is_finite() && l2.is_finite() && l1 >= l2);
        prop_assert!((l1 + l2 - (a1 + a2 + t * (v1 + v2))).abs() < 1e-12);
    }
}

#[test]
fn coupled_small_systems_avoid_the_walls() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for n in [2, 3] {
        for kind in [ModelKind::Hermitian, ModelKind::Symmetric] {
            let model = MatrixModel::new(kind, n).unwrap();
            for _ in 0..5 {
                let s0 = sampling::random_reduced_state(model, &mut rng);
                assert!((0..n).all(|i| (0..n).all(|j| i == j || s0.y[(i, j)].norm() > 0.0)));
                let opts = IntegrateOptions { sample_times: Some(dynamics::uniform_times(5.0, 500)), ..Default::default() };
                let traj = integrate_with(&s0, model, 5.0, &opts).unwrap().unwrap();
                assert_eq!(traj.count_events(|e| matches!(e, EventKind::GapUnderflow { .. })), 0);
                let min_gap = traj.samples.iter().map(|s| s.diagnostics.min_gap).fold(f64::INFINITY, f64::min);
                assert!(min_gap > 1e-3, "n={n} {kind:?}: min gap {min_gap}");
                for s in &traj.samples {
                    let rate = dynamics::energy_rate(&s.state, &vector_field(&s.state, model));
                    assert!(rate.abs() < 1e-10 * (1.0 + s.diagnostics.energy));
                }
            }
        }
    }
}
