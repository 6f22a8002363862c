//! Minimization of `¼ νᵀQν + aᵀν + w‖ν‖₁` for positive semidefinite Q.
//!
//! The main path is a primal-dual interior-point method on the split
//! `−η ≤ ν ≤ η`; eliminating η leaves `(½Q + 4D₁D₂/(D₁+D₂)) Δν = r`.
//! Coordinate descent with soft thresholding is kept as an independent path.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::cone::IpmSettings;

#[derive(Debug, Clone)]
pub(crate) struct L1Solution {
    pub nu: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    pub residual: f64,
    pub gap: f64,
    pub converged: bool,
    /// Descent direction along which the objective is unbounded below.
    pub unbounded: Option<DVector<f64>>,
}

pub(crate) fn objective(q: &DMatrix<f64>, a: &DVector<f64>, weight: f64, nu: &DVector<f64>) -> f64 {
    0.25 * nu.dot(&(q * nu)) + a.dot(nu) + weight * nu.abs().sum()
}

/// Smooth case: ν = −2 Q⁺ a, unbounded when a leaves the range of Q.
fn solve_smooth(q: &DMatrix<f64>, a: &DVector<f64>) -> L1Solution {
    let n = a.len();
    let eig = SymmetricEigen::new(q.clone());
    let top = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let mut nu = DVector::zeros(n);
    let mut unbounded: Option<DVector<f64>> = None;
    let a_scale = a.amax().max(1.0);
    for k in 0..n {
        let lam = eig.eigenvalues[k];
        let u = eig.eigenvectors.column(k);
        let proj = u.dot(a);
        if lam > 1e-12 * top {
            nu -= u * (2.0 * proj / lam);
        } else if proj.abs() > 1e-9 * a_scale {
            let dir = u * (-proj.signum());
            unbounded = Some(match unbounded {
                Some(prev) => prev + dir,
                None => dir.into_owned(),
            });
        }
    }
    if let Some(dir) = unbounded {
        let norm = dir.norm();
        return L1Solution {
            value: f64::NEG_INFINITY,
            nu,
            iterations: 0,
            residual: f64::NAN,
            gap: f64::NAN,
            converged: false,
            unbounded: Some(dir / norm),
        };
    }
    let residual = (q * &nu * 0.5 + a).amax();
    L1Solution {
        value: objective(q, a, 0.0, &nu),
        nu,
        iterations: 1,
        residual,
        gap: 0.0,
        converged: true,
        unbounded: None,
    }
}

pub(crate) fn solve_ipm(q: &DMatrix<f64>, a: &DVector<f64>, weight: f64, cfg: &IpmSettings) -> L1Solution {
    if weight <= 0.0 {
        return solve_smooth(q, a);
    }
    let n = a.len();
    // Rescale so the ℓ1 weight is one; the minimizer is unchanged.
    let a = a / weight;
    let q = q / weight;
    let mut nu: DVector<f64> = DVector::zeros(n);
    let mut eta = DVector::from_element(n, 1.0);
    let mut z1 = DVector::from_element(n, 0.5);
    let mut z2 = DVector::from_element(n, 0.5);
    let scale = a.amax().max(1.0);
    let mut best: Option<(f64, DVector<f64>, f64, f64)> = None;
    let mut iterations = 0;

    for it in 0..cfg.max_iterations {
        iterations = it;
        let s1 = &eta - &nu;
        let s2 = &eta + &nu;
        let r_nu = &q * &nu * 0.5 + &a + &z1 - &z2;
        let r_eta = DVector::from_element(n, 1.0) - &z1 - &z2;
        let gap = s1.dot(&z1) + s2.dot(&z2);
        let pobj = objective(&q, &a, 1.0, &nu);
        let res = r_nu.amax().max(r_eta.amax()) / scale;
        if !(res.is_finite() && gap.is_finite()) {
            break;
        }
        if nu.amax() > 1e12 * scale {
            let dir = &nu / nu.norm();
            return L1Solution {
                value: f64::NEG_INFINITY,
                nu,
                iterations: it,
                residual: res,
                gap,
                converged: false,
                unbounded: Some(dir),
            };
        }
        let rel_gap = gap / pobj.abs().max(1.0);
        let merit = res.max(rel_gap);
        if best.as_ref().is_none_or(|(m, ..)| merit < *m) {
            best = Some((merit, nu.clone(), res, gap));
        }
        if res < cfg.tolerance && rel_gap < cfg.tolerance {
            let nu = polish(&q, &a, &nu).unwrap_or(nu);
            return L1Solution {
                value: objective(&q, &a, 1.0, &nu) * weight,
                nu,
                iterations: it,
                residual: res,
                gap: gap * weight,
                converged: true,
                unbounded: None,
            };
        }

        let d1 = z1.component_div(&s1);
        let d2 = z2.component_div(&s2);
        let dsum = &d1 + &d2;
        let mut m = &q * 0.5;
        for i in 0..n {
            m[(i, i)] += 4.0 * d1[i] * d2[i] / dsum[i];
        }
        let Some(chol) = nalgebra::Cholesky::new(m) else { break };
        let mu = gap / (2 * n) as f64;

        // Newton step for complementarity targets c1 = s1∘z1 + Δ, c2 likewise.
        let step = |c1: &DVector<f64>, c2: &DVector<f64>| {
            let e1 = c1.component_div(&s1);
            let e2 = c2.component_div(&s2);
            let mut rhs = -&r_nu - &e1 + &e2;
            for i in 0..n {
                rhs[i] -= (d2[i] - d1[i]) * (-r_eta[i] + e1[i] + e2[i]) / dsum[i];
            }
            let dnu = chol.solve(&rhs);
            let mut deta = DVector::zeros(n);
            for i in 0..n {
                deta[i] = (-r_eta[i] + e1[i] + e2[i] + (d1[i] - d2[i]) * dnu[i]) / dsum[i];
            }
            let ds1 = &deta - &dnu;
            let ds2 = &deta + &dnu;
            let dz1 = e1 - d1.component_mul(&ds1);
            let dz2 = e2 - d2.component_mul(&ds2);
            (dnu, deta, ds1, ds2, dz1, dz2)
        };
        let max_step = |u: &DVector<f64>, du: &DVector<f64>| -> f64 {
            u.iter()
                .zip(du.iter())
                .filter(|(_, d)| **d < 0.0)
                .map(|(v, d)| -v / d)
                .fold(f64::INFINITY, f64::min)
        };
        let c1 = -s1.component_mul(&z1);
        let c2 = -s2.component_mul(&z2);
        let (_, _, ds1a, ds2a, dz1a, dz2a) = step(&c1, &c2);
        let aff = max_step(&s1, &ds1a)
            .min(max_step(&s2, &ds2a))
            .min(max_step(&z1, &dz1a))
            .min(max_step(&z2, &dz2a))
            .min(1.0);
        let sigma = (1.0 - aff).powi(3);
        let c1 = c1 - ds1a.component_mul(&dz1a) + DVector::from_element(n, sigma * mu);
        let c2 = c2 - ds2a.component_mul(&dz2a) + DVector::from_element(n, sigma * mu);
        let (dnu, deta, ds1, ds2, dz1, dz2) = step(&c1, &c2);
        let alpha = (0.99
            * max_step(&s1, &ds1)
                .min(max_step(&s2, &ds2))
                .min(max_step(&z1, &dz1))
                .min(max_step(&z2, &dz2)))
        .min(1.0);
        nu += &dnu * alpha;
        eta += &deta * alpha;
        z1 += &dz1 * alpha;
        z2 += &dz2 * alpha;
    }
    let (_, nu, residual, gap) = best.unwrap_or((f64::INFINITY, nu, f64::INFINITY, f64::NAN));
    // The support is usually settled long before the Newton systems degrade.
    let (nu, converged) = match polish(&q, &a, &nu) {
        Some(p) => (p, true),
        None => (nu, false),
    };
    L1Solution {
        value: objective(&q, &a, 1.0, &nu) * weight,
        nu,
        iterations,
        residual,
        gap: gap * weight,
        converged,
        unbounded: None,
    }
}

/// Re-solves `½ Q_AA ν_A = −(a_A + sign(ν_A))` on the support of an
/// approximate solution (unit ℓ1 weight). Returns the result only when it
/// satisfies the optimality conditions: signs preserved on the support and
/// `|(½Qν + a)_i| ≤ 1` off it.
fn polish(q: &DMatrix<f64>, a: &DVector<f64>, nu: &DVector<f64>) -> Option<DVector<f64>> {
    let n = nu.len();
    let cut = 1e-7 * nu.amax().max(1e-300);
    let support: Vec<usize> = (0..n).filter(|&i| nu[i].abs() > cut).collect();
    let mut out = DVector::zeros(n);
    if !support.is_empty() {
        let m = support.len();
        let qa = DMatrix::from_fn(m, m, |r, c| 0.5 * q[(support[r], support[c])]);
        let rhs = DVector::from_fn(m, |r, _| -(a[support[r]] + nu[support[r]].signum()));
        let sol = nalgebra::Cholesky::new(qa)?.solve(&rhs);
        for (r, &i) in support.iter().enumerate() {
            if sol[r].signum() != nu[i].signum() {
                return None;
            }
            out[i] = sol[r];
        }
    }
    let grad = q * &out * 0.5 + a;
    let slack = 1e-9 * a.amax().max(1.0);
    if (0..n).any(|i| out[i] == 0.0 && grad[i].abs() > 1.0 + slack) {
        return None;
    }
    Some(out)
}

fn soft_threshold(b: f64, w: f64) -> f64 {
    b.signum() * (b.abs() - w).max(0.0)
}

/// Cyclic coordinate descent; requires a positive diagonal.
pub(crate) fn solve_coordinate_descent(
    q: &DMatrix<f64>,
    a: &DVector<f64>,
    weight: f64,
    max_sweeps: usize,
    tolerance: f64,
) -> L1Solution {
    let n = a.len();
    let mut nu: DVector<f64> = DVector::zeros(n);
    // grad = ½ Q ν, kept up to date.
    let mut half_qnu: DVector<f64> = DVector::zeros(n);
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut biggest: f64 = 0.0;
        for i in 0..n {
            let qii = q[(i, i)];
            if qii <= 0.0 {
                continue;
            }
            let b = a[i] + half_qnu[i] - 0.5 * qii * nu[i];
            let new = -soft_threshold(b, weight) / (0.5 * qii);
            let delta = new - nu[i];
            if delta != 0.0 {
                half_qnu.axpy(0.5 * delta, &q.column(i), 1.0);
                nu[i] = new;
                biggest = biggest.max(delta.abs());
            }
        }
        if biggest <= tolerance * nu.amax().max(1.0) {
            converged = true;
            break;
        }
    }
    L1Solution {
        value: objective(q, a, weight, &nu),
        nu,
        iterations: sweeps,
        residual: f64::NAN,
        gap: f64::NAN,
        converged,
        unbounded: None,
    }
}
