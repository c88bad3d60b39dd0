mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use scorekit::dsm1d::*;
use scorekit::prox::{SolveStatus, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use scorekit::{evaluate_network, Activation};

fn instance(seed: u64, n: usize, act: Activation, beta: f64) -> DSMProgram1D {
    let mut r = rng(seed);
    let clean = normal_vec(&mut r, n);
    let delta = normal_vec(&mut r, n);
    let eps = 0.1;
    let noisy: Vec<f64> = clean.iter().zip(&delta).map(|(x, d)| x + eps * d).collect();
    let labels: Vec<f64> = delta.iter().map(|d| -d / eps).collect();
    let (data, labels) = paired_dataset(&noisy, &labels).unwrap();
    build_dsm_program(&data, &labels, eps, act, beta).unwrap()
}

/// Cyclic coordinate descent on the explicit hinge matrix, written
/// independently of the library solver.
fn coordinate_descent(p: &DSMProgram1D, sweeps: usize) -> f64 {
    let x = p.data.points();
    let n = x.len();
    let k = p.width();
    let raw = DMatrix::from_fn(n, k, |i, j| match p.activation {
        Activation::Abs => (x[i] - x[j]).abs(),
        Activation::Relu if j < n => (x[i] - x[j]).max(0.0),
        Activation::Relu => (x[j - n] - x[i]).max(0.0),
    });
    let mean_l = p.raw_labels.iter().sum::<f64>() / n as f64;
    let mut a = raw.clone();
    for mut c in a.column_iter_mut() {
        let m = c.mean();
        c.add_scalar_mut(-m);
    }
    let t = DVector::from_iterator(n, p.raw_labels.iter().map(|l| l - mean_l));
    let mut y: DVector<f64> = DVector::zeros(k);
    let mut r = t.clone();
    for _ in 0..sweeps {
        for j in 0..k {
            let cj = a.column(j);
            let nj = cj.norm_squared();
            if nj == 0.0 {
                continue;
            }
            let old: f64 = y[j];
            let z: f64 = old - cj.dot(&r) / nj;
            let thr = p.beta / nj;
            let new = z.signum() * (z.abs() - thr).max(0.0);
            if new != old {
                r += cj * (new - old);
                y[j] = new;
            }
        }
    }
    0.5 * r.norm_squared() + p.beta * y.lp_norm(1)
}

#[test]
fn kkt_and_independent_optimum_on_random_instances() {
    for seed in 0..50u64 {
        let act = if seed % 2 == 0 { Activation::Relu } else { Activation::Abs };
        let n = 10 + (seed as usize % 4) * 5;
        let beta = 0.05 + (seed as f64) * 0.1;
        let p = instance(seed, n, act, beta);
        let sol = p.solve(DEFAULT_TOL, DEFAULT_MAX_ITERS).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        assert!(sol.kkt_residual <= 1e-8, "seed {seed}: kkt {}", sol.kkt_residual);
        let cd = coordinate_descent(&p, 20_000);
        assert!(sol.objective <= cd + 1e-7 * (1.0 + cd.abs()), "seed {seed}: {} vs {cd}", sol.objective);
    }
}

#[test]
fn network_reproduces_lasso_optimum_n20() {
    for (seed, act) in [(101, Activation::Relu), (102, Activation::Abs)] {
        let p = instance(seed, 20, act, 0.7);
        let fit = fit_dsm_1d(&p, DEFAULT_TOL, DEFAULT_MAX_ITERS).unwrap();
        let loss = dsm_network_objective(&fit.network, &p).unwrap();
        assert!((loss - fit.objective).abs() <= 1e-6, "{act:?}: {loss} vs {}", fit.objective);
    }
}

#[test]
fn prediction_matches_network_on_grid() {
    for act in [Activation::Relu, Activation::Abs] {
        let p = instance(7, 25, act, 0.3);
        let sol = p.solve(DEFAULT_TOL, DEFAULT_MAX_ITERS).unwrap();
        let net = reconstruct_dsm_network(&sol.y_star, &p).unwrap();
        let grid: Vec<f64> = (0..401).map(|i| -5.0 + 0.025 * i as f64).collect();
        let direct = predict_dsm_score(&sol.y_star, &p, &grid).unwrap();
        let via_net = evaluate_network(&net, &grid).unwrap();
        for (a, b) in direct.iter().zip(&via_net) {
            assert!((a - b).abs() <= 1e-8);
        }
    }
}

#[test]
fn far_field_slope_is_minus_sum_of_right_hinges() {
    let p = instance(3, 30, Activation::Relu, 0.2);
    let sol = p.solve(DEFAULT_TOL, DEFAULT_MAX_ITERS).unwrap();
    let n = p.data.n();
    let x0 = p.data.max() + 1.0;
    let s = predict_dsm_score(&sol.y_star, &p, &[x0, x0 + 1.0]).unwrap();
    let expect = -sol.y_star[..n].iter().sum::<f64>();
    assert!((s[1] - s[0] - expect).abs() < 1e-9);
}

#[test]
fn large_beta_predicts_mean_label() {
    let p0 = instance(5, 15, Activation::Relu, 1.0);
    let beta = p0.zero_threshold() * 1.0001;
    let p = build_dsm_program(&p0.data, &p0.raw_labels, p0.epsilon, Activation::Relu, beta).unwrap();
    let sol = p.solve(DEFAULT_TOL, DEFAULT_MAX_ITERS).unwrap();
    assert!(sol.y_star.iter().all(|&v| v == 0.0));
    let mean = p.raw_labels.iter().sum::<f64>() / p.data.n() as f64;
    for v in predict_dsm_score(&sol.y_star, &p, &[-10.0, 0.0, 3.0]).unwrap() {
        assert!((v - mean).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn label_shift_changes_only_output_bias(seed in 0u64..1000, c in -5.0f64..5.0) {
        let p = instance(seed, 12, Activation::Relu, 0.5);
        let shifted: Vec<f64> = p.raw_labels.iter().map(|l| l + c).collect();
        let q = build_dsm_program(&p.data, &shifted, p.epsilon, Activation::Relu, 0.5).unwrap();
        let a = p.solve(DEFAULT_TOL, DEFAULT_MAX_ITERS).unwrap();
        let b = q.solve(DEFAULT_TOL, DEFAULT_MAX_ITERS).unwrap();
        prop_assert!((a.objective - b.objective).abs() <= 1e-10 * (1.0 + a.objective.abs()));
        for (ya, yb) in a.y_star.iter().zip(&b.y_star) {
            prop_assert!((ya - yb).abs() <= 1e-6 * (1.0 + ya.abs()));
        }
        let sa = predict_dsm_score(&a.y_star, &p, p.data.points()).unwrap();
        let sb = predict_dsm_score(&b.y_star, &q, q.data.points()).unwrap();
        for (u, v) in sa.iter().zip(&sb) {
            prop_assert!((v - u - c).abs() < 1e-7);
        }
        let ba = p.output_bias(&a.y_star).unwrap();
        let bb = q.output_bias(&b.y_star).unwrap();
        prop_assert!((bb - ba - c).abs() < 1e-6);
    }
}
