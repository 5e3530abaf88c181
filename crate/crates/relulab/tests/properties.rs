//! Property tests of invariants that hold for every input, not just examples.

use proptest::prelude::*;
use relulab::analysis::{equivalence_report, plateau_duration, structure_report};
use relulab::datasets::{check_symmetry, compute_stats, halfspace_stats, make_symmetric_gaussian, symmetrize, Dataset, Reduction, Teacher};
use relulab::dynamics::{train, Trajectory, TrainConfig};
use relulab::model::{init_gaussian, NetworkParams};
use relulab::numkit::{singular_values, Matrix, SeededRng};
use relulab::theory::{closed_form_w, max_margin, ols_solution, ClosedFormSpec};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = SeededRng::new(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.gaussian()).unwrap()
}

fn gaussian_data(seed: u64, pairs: usize, d: usize) -> Dataset {
    make_symmetric_gaussian(&mut SeededRng::new(seed), pairs, d, &Teacher::LinearPlusSine).unwrap()
}

fn unit(seed: u64, d: usize) -> Vec<f64> {
    let mut rng = SeededRng::new(seed);
    let r: Vec<f64> = (0..d).map(|_| rng.gaussian()).collect();
    let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    r.iter().map(|v| v / n).collect()
}

/// Same net with hidden units of a two-layer net reordered.
fn permuted(net: &NetworkParams, perm: &[usize]) -> NetworkParams {
    let (w1, w2) = (net.layer(0), net.layer(1));
    let a = Matrix::from_fn(w1.rows(), w1.cols(), |i, j| w1.get(perm[i], j)).unwrap();
    let b = Matrix::from_fn(1, w2.cols(), |_, j| w2.get(0, perm[j])).unwrap();
    NetworkParams::new(vec![a, b], net.alpha()).unwrap()
}

fn permuted_traj(t: &Trajectory, perm: &[usize]) -> Trajectory {
    let mut out = t.clone();
    for s in &mut out.snapshots {
        s.net = permuted(&s.net, perm);
    }
    out.final_net = permuted(&t.final_net, perm);
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matmul_is_associative(m in 1usize..6, k in 1usize..6, n in 1usize..6, q in 1usize..6, seed in any::<u64>()) {
        let (a, b, c) = (matrix(m, k, seed), matrix(k, n, seed ^ 1), matrix(n, q, seed ^ 2));
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        prop_assert!(left.max_abs_diff(&right) <= 1e-12 * left.frob_norm().max(1.0));
    }

    #[test]
    fn singular_values_survive_transposition(m in 1usize..7, n in 1usize..7, seed in any::<u64>()) {
        let a = matrix(m, n, seed);
        let (s, st) = (singular_values(&a), singular_values(&a.transpose()));
        let r = m.min(n);
        for i in 0..r {
            prop_assert!(close(s[i], st[i], 1e-10), "{:?} vs {:?}", s, st);
        }
    }

    #[test]
    fn frobenius_norm_is_root_sum_of_squared_singular_values(m in 1usize..7, n in 1usize..7, seed in any::<u64>()) {
        let a = matrix(m, n, seed);
        let via_sv: f64 = singular_values(&a).iter().map(|s| s * s).sum();
        prop_assert!(close(a.frob_norm_sq(), via_sv, 1e-10));
    }

    #[test]
    fn halfspace_statistics_equal_full_statistics_on_symmetric_data(seed in any::<u64>(), pairs in 3usize..40, d in 1usize..6) {
        let data = gaussian_data(seed, pairs, d);
        let r = unit(seed ^ 7, d);
        for reduction in [Reduction::Mean, Reduction::Sum] {
            let half = halfspace_stats(&data, &r, reduction).unwrap();
            let full = compute_stats(&data, reduction);
            prop_assert!(half.sigma.max_abs_diff(&full.sigma) <= 1e-12 * full.sigma.frob_norm().max(1.0));
            for (a, b) in half.beta.iter().zip(&full.beta) {
                prop_assert!(close(*a, *b, 1e-12));
            }
        }
    }

    #[test]
    fn symmetrized_data_is_symmetric_and_mirroring_again_keeps_mean_statistics(seed in any::<u64>(), p in 1usize..20, d in 1usize..5) {
        let mut rng = SeededRng::new(seed);
        let pts: Vec<(Vec<f64>, f64)> = (0..p).map(|_| ((0..d).map(|_| rng.gaussian()).collect(), rng.gaussian())).collect();
        let once = symmetrize(&Dataset::from_points(&pts, "raw").unwrap());
        prop_assert!(check_symmetry(&once).is_ok());
        let twice = symmetrize(&once);
        prop_assert_eq!(twice.len(), 4 * p);
        prop_assert!(check_symmetry(&twice).is_ok());
        let (a, b) = (compute_stats(&once, Reduction::Mean), compute_stats(&twice, Reduction::Mean));
        prop_assert!(a.sigma.max_abs_diff(&b.sigma) <= 1e-12 * a.sigma.frob_norm().max(1.0));
        prop_assert!(close(a.y2, b.y2, 1e-12));
    }

    #[test]
    fn networks_are_positively_homogeneous(seed in any::<u64>(), alpha in 0.0f64..1.0, c in 0.01f64..100.0, depth in 2usize..5) {
        let mut rng = SeededRng::new(seed);
        let mut widths = vec![3];
        widths.extend(std::iter::repeat_n(5, depth - 1));
        widths.push(1);
        let net = init_gaussian(&mut rng, &widths, alpha, 1.0).unwrap();
        let x = [rng.gaussian(), rng.gaussian(), rng.gaussian()];
        let cx: Vec<f64> = x.iter().map(|v| c * v).collect();
        let f = net.output(&x).unwrap();
        prop_assert!(close(net.output(&cx).unwrap(), c * f, 1e-12));
        // Scaling every layer by a scales the output by a^depth.
        let a = 1.7;
        prop_assert!(close(net.scaled(a).output(&x).unwrap(), a.powi(depth as i32) * f, 1e-12));
    }

    #[test]
    fn closed_form_depends_on_alpha_only_through_rescaled_time(seed in any::<u64>(), alpha in 0.0f64..1.0, t in 0.01f64..20.0, w_init in 1e-4f64..0.5) {
        let d = 4;
        let beta_hat = unit(seed, d);
        let mut r = unit(seed ^ 3, d);
        // Keep r away from −β̄, where the closed form is singular.
        if relulab::numkit::dot(&r, &beta_hat) < -0.9 {
            r.iter_mut().for_each(|v| *v = -*v);
        }
        let spec = |a: f64| ClosedFormSpec { r: r.clone(), w_init, s: 1.3, beta_hat: beta_hat.clone(), alpha: a, tau: 1.0 };
        let w = closed_form_w(&spec(alpha), t).unwrap();
        let w_lin = closed_form_w(&spec(1.0), (alpha + 1.0) * t / 2.0).unwrap();
        for (a, b) in w.iter().zip(&w_lin) {
            prop_assert!(close(*a, *b, 1e-12));
        }
    }

    #[test]
    fn max_margin_direction_ignores_input_scale(seed in any::<u64>(), c in 0.1f64..10.0) {
        let mut rng = SeededRng::new(seed);
        let w = unit(seed ^ 5, 2);
        let mut pts = Vec::new();
        while pts.len() < 8 {
            let x = vec![rng.gaussian(), rng.gaussian()];
            let m = relulab::numkit::dot(&w, &x);
            if m.abs() > 0.2 {
                pts.push((x, m.signum()));
            }
        }
        let data = symmetrize(&Dataset::from_points(&pts, "sep").unwrap());
        let scaled_pts: Vec<(Vec<f64>, f64)> = pts.iter().map(|(x, y)| (x.iter().map(|v| c * v).collect(), *y)).collect();
        let scaled = symmetrize(&Dataset::from_points(&scaled_pts, "sep").unwrap());
        let (a, b) = (max_margin(&data).unwrap(), max_margin(&scaled).unwrap());
        prop_assert!(relulab::numkit::dot(&a.direction, &b.direction) > 1.0 - 1e-8);
    }

    #[test]
    fn ols_does_not_depend_on_the_reduction(seed in any::<u64>(), pairs in 5usize..40, d in 1usize..5) {
        let data = gaussian_data(seed, pairs, d);
        let a = ols_solution(&compute_stats(&data, Reduction::Mean)).unwrap();
        let b = ols_solution(&compute_stats(&data, Reduction::Sum)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(close(*x, *y, 1e-10));
        }
    }

    #[test]
    fn plateau_duration_ignores_vertical_scaling(c in 1e-3f64..1e3, len in 50.0f64..400.0, drop in 0.2f64..0.9) {
        // Fast descent, flat stretch of length `len`, second descent.
        let times: Vec<f64> = (0..2000).map(|i| i as f64 * 0.5).collect();
        let losses: Vec<f64> = times
            .iter()
            .map(|t| {
                let first = 1.0 - drop * (1.0 - (-t / 5.0).exp());
                let second = if *t > 50.0 + len { (1.0 - drop) * 0.9 * (1.0 - (-(t - 50.0 - len) / 5.0).exp()) } else { 0.0 };
                first - second
            })
            .collect();
        let scaled: Vec<f64> = losses.iter().map(|l| c * l).collect();
        let (a, b) = (plateau_duration(&losses, &times).unwrap(), plateau_duration(&scaled, &times).unwrap());
        prop_assert!(a > 0.0);
        prop_assert!(close(a, b, 1e-9), "{a} vs {b}");
    }

    #[test]
    fn linear_deep_nets_have_coefficient_one(seed in any::<u64>(), depth in 2usize..5) {
        let mut rng = SeededRng::new(seed);
        let mut widths = vec![4];
        widths.extend(std::iter::repeat_n(6, depth - 1));
        widths.push(1);
        let net = init_gaussian(&mut rng, &widths, 1.0, 1.0).unwrap();
        prop_assert!((structure_report(&net, None).unwrap().effective_coefficient - 1.0).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn equivalence_error_ignores_hidden_unit_order(seed in any::<u64>()) {
        let data = gaussian_data(seed, 20, 3);
        let mut rng = SeededRng::new(seed ^ 11);
        let relu0 = init_gaussian(&mut rng, &[3, 6, 1], 0.0, 0.5).unwrap();
        let lin0 = init_gaussian(&mut rng, &[3, 6, 1], 1.0, 0.5).unwrap();
        let cfg = TrainConfig { eta: 0.01, steps: 200, snapshot_every: 20, ..TrainConfig::default() };
        let (relu, lin) = (train(&relu0, &data, &cfg).unwrap(), train(&lin0, &data, &cfg).unwrap());
        let perm = [3, 0, 5, 1, 4, 2];
        let a = equivalence_report(&relu, &lin, 1.0).unwrap();
        let b = equivalence_report(&permuted_traj(&relu, &perm), &permuted_traj(&lin, &perm), 1.0).unwrap();
        for (x, y) in a.weight_error.iter().zip(&b.weight_error) {
            prop_assert!(close(*x, *y, 1e-12));
        }
    }
}
