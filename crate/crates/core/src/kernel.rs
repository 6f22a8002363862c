//! Kernel evaluation, Gram matrices, jittered Cholesky factorization and the
//! power function.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    SquaredExponential,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub lengthscale: f64,
}

impl KernelSpec {
    pub fn squared_exponential(lengthscale: f64) -> Result<Self> {
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lengthscale must be positive, got {lengthscale}"
            )));
        }
        Ok(Self {
            family: KernelFamily::SquaredExponential,
            lengthscale,
        })
    }

    /// Kernel value without the dimension check. Callers guarantee equal lengths.
    #[inline]
    pub fn k(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        match self.family {
            KernelFamily::SquaredExponential => {
                let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-r2 / (2.0 * self.lengthscale * self.lengthscale)).exp()
            }
        }
    }

    /// k(x, x), which does not depend on x for stationary kernels.
    pub fn diag(&self) -> f64 {
        match self.family {
            KernelFamily::SquaredExponential => 1.0,
        }
    }
}

fn check_dims(points: &[Vec<f64>], dim: usize) -> Result<()> {
    for p in points {
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p.len(),
            });
        }
    }
    Ok(())
}

pub fn eval_kernel(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(spec.k(x, y))
}

pub fn kernel_matrix(spec: &KernelSpec, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let Some(first) = points.first() else {
        return Err(Error::InvalidArgument("empty point list".into()));
    };
    check_dims(points, first.len())?;
    let n = points.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = spec.k(&points[i], &points[i]);
        for j in 0..i {
            let v = spec.k(&points[i], &points[j]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

pub fn kernel_vector(spec: &KernelSpec, points: &[Vec<f64>], x: &[f64]) -> Result<DVector<f64>> {
    check_dims(points, x.len())?;
    Ok(DVector::from_iterator(
        points.len(),
        points.iter().map(|p| spec.k(p, x)),
    ))
}

/// Jitter escalation rules for [`factorize_psd`].
///
/// The ladder is `floor`, then `r * trace/n` for r = 1e-12, 1e-10, ... up to
/// `cap`. A level is accepted once the Cholesky factorization succeeds and
/// the condition estimate of the jittered matrix is below
/// `condition_threshold`; the cap level is accepted whenever it factorizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterPolicy {
    pub condition_threshold: f64,
    pub cap: f64,
    pub floor: f64,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        Self {
            condition_threshold: 1e8,
            cap: 1e-6,
            floor: 0.0,
        }
    }
}

impl JitterPolicy {
    /// A policy that never adds jitter unless the plain factorization fails.
    pub fn minimal() -> Self {
        Self {
            condition_threshold: f64::INFINITY,
            ..Self::default()
        }
    }

    pub fn with_floor(self, floor: f64) -> Self {
        Self { floor, ..self }
    }

    fn levels(&self, scale: f64) -> Vec<f64> {
        let mut out = vec![self.floor.max(0.0)];
        let mut r = 1e-12;
        while r <= self.cap * (1.0 + 1e-9) {
            let lvl = r * scale;
            if lvl > out[0] {
                out.push(lvl);
            }
            r *= 100.0;
        }
        let cap = self.cap * scale;
        if cap > *out.last().unwrap() * (1.0 + 1e-9) {
            out.push(cap);
        }
        out
    }
}

/// Cholesky factor of `M + jitter * I`.
#[derive(Debug, Clone)]
pub struct PsdFactorization {
    pub lower: DMatrix<f64>,
    pub jitter: f64,
    pub size: usize,
    pub condition: f64,
}

impl PsdFactorization {
    /// L⁻¹ b
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        self.lower.solve_lower_triangular(b).expect("non-singular factor")
    }

    /// L⁻ᵀ b
    pub fn solve_upper(&self, b: &DVector<f64>) -> DVector<f64> {
        self.lower
            .tr_solve_lower_triangular(b)
            .expect("non-singular factor")
    }

    /// (M + jitter I)⁻¹ b
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// L Lᵀ, i.e. the jittered matrix that was factorized.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.lower * self.lower.transpose()
    }
}

fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

/// Deterministic, non-symmetric start vector for power iterations.
fn probe_vector(n: usize) -> DVector<f64> {
    let v = DVector::from_iterator(n, (0..n).map(|i| 1.0 + 0.5 * (1.618_033_988_75 * (i as f64 + 1.0)).sin()));
    let norm = v.norm();
    v / norm
}

/// λmax / λmin estimated with a few power and inverse-power iterations.
fn condition_estimate(m: &DMatrix<f64>, lower: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 1 {
        return 1.0;
    }
    let mut v = probe_vector(n);
    let mut lmax = 0.0;
    for _ in 0..30 {
        let w = m * &v;
        lmax = v.dot(&w);
        let nw = w.norm();
        if nw == 0.0 {
            return f64::INFINITY;
        }
        v = w / nw;
    }
    let mut u = probe_vector(n);
    let mut inv = 0.0;
    for _ in 0..30 {
        let Some(y) = lower.solve_lower_triangular(&u) else {
            return f64::INFINITY;
        };
        let Some(w) = lower.tr_solve_lower_triangular(&y) else {
            return f64::INFINITY;
        };
        inv = u.dot(&w);
        let nw = w.norm();
        if !nw.is_finite() || nw == 0.0 {
            return f64::INFINITY;
        }
        u = w / nw;
    }
    if inv <= 0.0 || !inv.is_finite() {
        return f64::INFINITY;
    }
    lmax * inv
}

pub fn factorize_psd(m: &DMatrix<f64>, policy: &JitterPolicy) -> Result<PsdFactorization> {
    let n = m.nrows();
    if n == 0 || m.ncols() != n {
        return Err(Error::InvalidArgument(format!(
            "expected a non-empty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let asym = relative_asymmetry(m);
    if asym > 1e-12 {
        return Err(Error::NotSymmetric(asym));
    }
    let sym = (m + m.transpose()) * 0.5;
    let scale = (sym.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let levels = policy.levels(scale);
    let last = levels.len() - 1;
    for (idx, &jitter) in levels.iter().enumerate() {
        let mut shifted = sym.clone();
        for i in 0..n {
            shifted[(i, i)] += jitter;
        }
        let Some(chol) = nalgebra::Cholesky::new(shifted.clone()) else {
            continue;
        };
        let lower = chol.unpack();
        if lower.diagonal().iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            continue;
        }
        let condition = condition_estimate(&shifted, &lower);
        if condition <= policy.condition_threshold || idx == last {
            return Ok(PsdFactorization {
                lower,
                jitter,
                size: n,
                condition,
            });
        }
    }
    Err(Error::FactorizationFailed {
        cap: policy.cap * scale,
    })
}

/// Triangular-solve pieces of the power function at one query.
#[derive(Debug, Clone)]
pub struct PowerParts {
    /// L⁻¹ K_Xx
    pub ell: DVector<f64>,
    pub power: f64,
    /// True when a negative radicand from roundoff was clamped to zero.
    pub clamped: bool,
}

pub fn power_parts(
    spec: &KernelSpec,
    points: &[Vec<f64>],
    fact: &PsdFactorization,
    x: &[f64],
) -> Result<PowerParts> {
    if points.len() != fact.size {
        return Err(Error::DimensionMismatch {
            expected: fact.size,
            got: points.len(),
        });
    }
    let kx = kernel_vector(spec, points, x)?;
    let ell = fact.solve_lower(&kx);
    let radicand = spec.k(x, x) - ell.norm_squared();
    Ok(PowerParts {
        ell,
        power: radicand.max(0.0).sqrt(),
        clamped: radicand < 0.0,
    })
}

pub fn power_function(
    spec: &KernelSpec,
    points: &[Vec<f64>],
    fact: &PsdFactorization,
    x: &[f64],
) -> Result<f64> {
    Ok(power_parts(spec, points, fact, x)?.power)
}

/// Schur complement and gain of the block matrix `[A B; Bᵀ c]`.
#[derive(Debug, Clone)]
pub struct BlockInverse {
    pub schur: f64,
    /// A⁻¹ B
    pub gain: DVector<f64>,
}

impl BlockInverse {
    /// `[A⁻¹ + g gᵀ/s, −g/s; −gᵀ/s, 1/s]` with g the gain and s the Schur complement.
    pub fn assemble(&self, a_fact: &PsdFactorization) -> DMatrix<f64> {
        let n = a_fact.size;
        let a_inv = {
            let eye = DMatrix::identity(n, n);
            let y = a_fact.lower.solve_lower_triangular(&eye).expect("non-singular factor");
            y.transpose() * y
        };
        let s = self.schur;
        let mut out = DMatrix::zeros(n + 1, n + 1);
        out.view_mut((0, 0), (n, n))
            .copy_from(&(a_inv + &self.gain * self.gain.transpose() / s));
        for i in 0..n {
            out[(i, n)] = -self.gain[i] / s;
            out[(n, i)] = -self.gain[i] / s;
        }
        out[(n, n)] = 1.0 / s;
        out
    }
}

/// Relative Schur threshold below which the augmented matrix is treated as singular.
pub const SCHUR_DEGENERACY: f64 = 1e-8;

pub fn block_inverse(a_fact: &PsdFactorization, b: &DVector<f64>, c: f64) -> Result<BlockInverse> {
    if b.len() != a_fact.size {
        return Err(Error::DimensionMismatch {
            expected: a_fact.size,
            got: b.len(),
        });
    }
    let ell = a_fact.solve_lower(b);
    let schur = c - ell.norm_squared();
    if schur < SCHUR_DEGENERACY * c.abs() {
        return Err(Error::NearData { schur });
    }
    Ok(BlockInverse {
        schur,
        gain: a_fact.solve_upper(&ell),
    })
}
