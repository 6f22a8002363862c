//! Independent oracles and instance generators shared by the integration
//! tests. Nothing here calls the solvers under test.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rkhs_envelope::{kernel_matrix, BoundProblem, Dataset, DomainBox, HyperParams, KernelSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Dense inverse through an LU decomposition.
pub fn inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().lu().try_inverse().expect("invertible")
}

/// Maximize a concave function over a box by repeated grid zooming. Points
/// where `f` is NaN count as infeasible.
pub fn zoom_max(lo: &[f64], hi: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    let n = lo.len();
    let per_axis: usize = match n {
        0 | 1 => 401,
        2 => 61,
        _ => 21,
    };
    let mut lo = lo.to_vec();
    let mut hi = hi.to_vec();
    let mut best = f64::NEG_INFINITY;
    let mut arg = vec![0.0; n];
    for _ in 0..40 {
        let total = per_axis.pow(n as u32);
        let mut p = vec![0.0; n];
        for idx in 0..total {
            let mut r = idx;
            for k in 0..n {
                let t = (r % per_axis) as f64 / (per_axis - 1) as f64;
                r /= per_axis;
                p[k] = lo[k] + t * (hi[k] - lo[k]);
            }
            let v = f(&p);
            if v > best {
                best = v;
                arg.copy_from_slice(&p);
            }
        }
        if !best.is_finite() {
            return best;
        }
        let mut done = true;
        for k in 0..n {
            let h = (hi[k] - lo[k]) / (per_axis - 1) as f64;
            if h > 1e-13 {
                done = false;
            }
            let (a, b) = (lo[k], hi[k]);
            lo[k] = (arg[k] - 3.0 * h).max(a);
            hi[k] = (arg[k] + 3.0 * h).min(b);
        }
        if done {
            break;
        }
    }
    best
}

/// Upper bound at `x` by the quadratic decomposition of the augmented norm:
/// `C(x) = max_c s(c) + P √(Γ² − cᵀK⁻¹c)` over box-feasible c, where
/// `s(c) = K_xX K⁻¹ c`. On data (P ≈ 0) this is `max c_i`.
pub fn brute_force_upper(p: &BoundProblem, x: &[f64], site: Option<usize>) -> f64 {
    let k = p.gram().clone();
    let kinv = inverse(&k);
    let (lo, hi) = p.site_bounds();
    let gamma = p.params().gamma;
    let (gain, power) = match site {
        Some(_) => (DVector::zeros(k.nrows()), 0.0),
        None => {
            let kx = DVector::from_iterator(
                k.nrows(),
                p.dataset().inputs().iter().map(|xi| p.kernel().k(xi, x)),
            );
            let gain = &kinv * &kx;
            (gain.clone(), (p.kernel().k(x, x) - kx.dot(&gain)).max(0.0).sqrt())
        }
    };
    zoom_max(lo, hi, |c| {
        let c = DVector::from_column_slice(c);
        let q = c.dot(&(&kinv * &c));
        if q > gamma * gamma {
            return f64::NAN;
        }
        match site {
            Some(i) => c[i],
            None => gain.dot(&c) + power * (gamma * gamma - q).sqrt(),
        }
    })
}

/// Minimum of `¼ νᵀQν + aᵀν + w‖ν‖₁` for d ≤ 2 by zooming on a box that
/// must contain the minimizer.
pub fn brute_force_l1(q: &DMatrix<f64>, a: &DVector<f64>, w: f64, radius: f64) -> f64 {
    let n = a.len();
    let lo = vec![-radius; n];
    let hi = vec![radius; n];
    -zoom_max(&lo, &hi, |v| {
        let v = DVector::from_column_slice(v);
        -(0.25 * v.dot(&(q * &v)) + a.dot(&v) + w * v.abs().sum())
    })
}

pub fn random_points(rng: &mut impl Rng, count: usize, dim: usize, min_sep: f64, half_width: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    while out.len() < count {
        let p: Vec<f64> = (0..dim).map(|_| rng.random_range(-half_width..half_width)).collect();
        let ok = out
            .iter()
            .all(|q| q.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() >= min_sep);
        if ok {
            out.push(p);
        }
    }
    out
}

/// A finite kernel expansion `f = Σ αᵢ k(cᵢ, ·)` with a known RKHS norm.
#[derive(Debug, Clone)]
pub struct Expansion {
    pub kernel: KernelSpec,
    pub centers: Vec<Vec<f64>>,
    pub alpha: DVector<f64>,
}

impl Expansion {
    pub fn random(rng: &mut impl Rng, kernel: KernelSpec, count: usize, dim: usize, norm: f64, half_width: f64) -> Self {
        let centers = random_points(rng, count, dim, 0.0, half_width);
        let alpha = DVector::from_iterator(count, (0..count).map(|_| rng.random_range(-1.0..1.0)));
        let mut e = Self { kernel, centers, alpha };
        let scale = norm / e.norm();
        e.alpha *= scale;
        e
    }

    pub fn norm(&self) -> f64 {
        let k = kernel_matrix(&self.kernel, &self.centers).unwrap();
        self.alpha.dot(&(&k * &self.alpha)).max(0.0).sqrt()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.centers
            .iter()
            .zip(self.alpha.iter())
            .map(|(c, a)| a * self.kernel.k(c, x))
            .sum()
    }
}

/// Noisy samples of `e` at `inputs` with noise strictly inside ±`noise`.
pub fn noisy_problem(
    rng: &mut impl Rng,
    e: &Expansion,
    inputs: &[Vec<f64>],
    noise: f64,
    gamma: f64,
    delta_bar: f64,
    half_width: f64,
) -> BoundProblem {
    let ys: Vec<f64> = inputs
        .iter()
        .map(|x| e.eval(x) + noise * rng.random_range(-1.0..1.0))
        .collect();
    let dim = inputs[0].len();
    let domain = DomainBox::cube(dim, -half_width, half_width).unwrap();
    let ds = Dataset::from_samples(domain, inputs, &ys).unwrap();
    BoundProblem::new(e.kernel, ds, HyperParams::new(gamma, delta_bar).unwrap()).unwrap()
}
