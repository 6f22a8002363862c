mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rkhs_envelope::qclp::{solve_min_norm, L1Method};
use rkhs_envelope::*;

/// Small random instance with sites at least `0.3ℓ` apart and Γ above the
/// interpolant norm, so the feasible set is non-empty.
fn small_instance(seed: u64) -> (BoundProblem, Vec<f64>) {
    let mut r = rng(seed);
    let dim = r.random_range(1..=2usize);
    let d = r.random_range(1..=3usize);
    let ell = r.random_range(0.5..2.0);
    let kernel = KernelSpec::squared_exponential(ell).unwrap();
    let xs = random_points(&mut r, d, dim, 0.3 * ell, 2.0);
    let ys: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
    let delta_bar = r.random_range(0.05..1.0);
    let k = kernel_matrix(&kernel, &xs).unwrap();
    let y = DVector::from_column_slice(&ys);
    let interp = y.dot(&(inverse(&k) * &y)).sqrt();
    let gamma = interp * r.random_range(0.8..2.5) + 0.1;
    let domain = DomainBox::cube(dim, -3.0, 3.0).unwrap();
    let ds = Dataset::from_samples(domain, &xs, &ys).unwrap();
    let p = BoundProblem::new(kernel, ds, HyperParams::new(gamma, delta_bar).unwrap()).unwrap();
    let q: Vec<f64> = (0..dim).map(|_| r.random_range(-3.0..3.0)).collect();
    (p, q)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn norm_ball_lp_matches_decomposition_oracle(seed in any::<u64>()) {
        let (p, q) = small_instance(seed);
        let up = p.upper_bound(&q).unwrap();
        let low = p.lower_bound(&q).unwrap();
        if !p.is_feasible() {
            prop_assert_eq!(up.status, SolveStatus::Infeasible);
            return Ok(());
        }
        let site = match p.query_term(&q).unwrap() {
            QueryTerm::Site(i) => Some(i),
            _ => None,
        };
        let oracle_up = brute_force_upper(&p, &q, site);
        prop_assert!((up.value - oracle_up).abs() < 1e-3, "upper {} vs oracle {}", up.value, oracle_up);
        // B(x) is minus the upper bound of the problem with negated outputs.
        let neg: Vec<f64> = p.dataset().outputs().iter().map(|v| -v).collect();
        let ds = Dataset::from_samples(p.dataset().domain().clone(), p.dataset().inputs(), &neg).unwrap();
        let pn = BoundProblem::new(*p.kernel(), ds, *p.params()).unwrap();
        let oracle_low = -brute_force_upper(&pn, &q, site);
        prop_assert!((low.value - oracle_low).abs() < 1e-3, "lower {} vs oracle {}", low.value, oracle_low);
    }

    #[test]
    fn optimizer_satisfies_constraints(seed in any::<u64>()) {
        let (p, q) = small_instance(seed);
        prop_assume!(p.is_feasible());
        let rep = p.upper_bound(&q).unwrap();
        prop_assert_eq!(rep.status, SolveStatus::Optimal);
        let d = p.dataset().sites();
        let c = rep.optimizer.rows(0, d).into_owned();
        let (lo, hi) = p.site_bounds();
        let db = p.params().delta_bar;
        for i in 0..d {
            prop_assert!(c[i] >= lo[i] - 1e-8 * db.max(1.0) && c[i] <= hi[i] + 1e-8 * db.max(1.0));
        }
        // Full vector including c_x must lie in the Γ-ball of the augmented matrix.
        let norm_sq = if rep.optimizer.len() == d + 1 {
            let mut pts = p.dataset().inputs().to_vec();
            pts.push(q.clone());
            let mut k = kernel_matrix(p.kernel(), &pts).unwrap();
            k.view_mut((0, 0), (d, d)).copy_from(p.gram());
            rep.optimizer.dot(&(inverse(&k) * &rep.optimizer))
        } else {
            c.dot(&(inverse(p.gram()) * &c))
        };
        let g2 = p.params().gamma.powi(2);
        prop_assert!(norm_sq <= g2 + 1e-8 * g2.max(1.0) * 1e2, "{} > {}", norm_sq, g2);
    }

    #[test]
    fn l1_paths_agree(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(1..=6usize);
        let b = DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0));
        let q = &b * b.transpose() + DMatrix::identity(n, n) * 0.1;
        let a = DVector::from_fn(n, |_, _| r.random_range(-3.0..3.0));
        let w = r.random_range(0.0..2.0);
        let cfg = SolverConfig::default();
        let ipm = qclp::solve_l1_quadratic_with(&q, &a, w, &cfg, L1Method::InteriorPoint).unwrap();
        let cd = qclp::solve_l1_quadratic_with(&q, &a, w, &cfg, L1Method::CoordinateDescent).unwrap();
        prop_assert!((ipm.value - cd.value).abs() < 1e-6 * ipm.value.abs().max(1.0), "{} vs {}", ipm.value, cd.value);
    }

    #[test]
    fn l1_matches_grid_oracle(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(1..=2usize);
        let b = DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0));
        let q = &b * b.transpose() + DMatrix::identity(n, n) * 0.2;
        let a = DVector::from_fn(n, |_, _| r.random_range(-2.0..2.0));
        let w = r.random_range(0.0..1.5);
        // |ν| ≤ 4‖a‖/λ_min(Q) bounds the minimizer.
        let radius = 4.0 * a.norm() / 0.2 + 1.0;
        let oracle = brute_force_l1(&q, &a, w, radius);
        let rep = solve_l1_quadratic(&q, &a, w, &SolverConfig::default()).unwrap();
        prop_assert!((rep.value - oracle).abs() < 1e-4, "{} vs {}", rep.value, oracle);
    }
}

#[test]
fn repeated_solves_are_identical() {
    let (p, q) = small_instance(11);
    let a = p.upper_bound(&q).unwrap();
    let b = p.upper_bound(&q).unwrap();
    assert_eq!(a.value.to_bits(), b.value.to_bits());
}

#[test]
fn zero_noise_envelope_interpolates() {
    let kernel = KernelSpec::squared_exponential(1.0).unwrap();
    let xs = vec![vec![0.0], vec![1.5]];
    let ds = Dataset::from_samples(DomainBox::cube(1, -5.0, 5.0).unwrap(), &xs, &[0.4, -0.2]).unwrap();
    let p = BoundProblem::new(kernel, ds, HyperParams::new(3.0, 0.0).unwrap()).unwrap();
    let e = p.envelope(&[0.0]).unwrap();
    assert!((e.upper - 0.4).abs() < 1e-9 && (e.lower - 0.4).abs() < 1e-9);
}

#[test]
fn min_norm_of_single_box() {
    let f = factorize_psd(&DMatrix::identity(1, 1), &JitterPolicy::default()).unwrap();
    let rep = solve_min_norm(&f, &[1.0], &[3.0], &SolverConfig::default()).unwrap();
    assert!((rep.norm - 1.0).abs() < 1e-7, "{}", rep.norm);
    let rep = solve_min_norm(&f, &[-1.0], &[3.0], &SolverConfig::default()).unwrap();
    assert!(rep.norm < 1e-6);
}
