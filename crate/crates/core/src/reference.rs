//! Comparison bounds: nominal kernel models, the closed-form sub-optimal
//! envelope, a Gaussian-process confidence band, and the data-driven
//! lower estimate of the RKHS norm.

use nalgebra::{DMatrix, DVector};

use crate::envelope::BoundProblem;
use crate::error::{Error, Result};
use crate::kernel::{factorize_psd, kernel_matrix, kernel_vector, JitterPolicy, KernelSpec, PsdFactorization};
use crate::qclp::{solve_l1_quadratic, SolveReport, SolveStatus};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NominalKind {
    Interpolant,
    /// Kernel ridge regression with regularization μ.
    Krr { mu: f64 },
    MinNorm,
}

/// A kernel model `s(x) = αᵀ K_Xx`.
#[derive(Debug, Clone)]
pub struct NominalModel {
    pub weights: DVector<f64>,
    pub kind: NominalKind,
}

impl NominalModel {
    pub fn predict(&self, p: &BoundProblem, x: &[f64]) -> Result<f64> {
        Ok(self.weights.dot(&kernel_vector(p.kernel(), p.dataset().inputs(), x)?))
    }
}

/// Default ridge parameter `d·δ̄²/Γ²`.
pub fn default_krr_mu(sites: usize, delta_bar: f64, gamma: f64) -> f64 {
    sites as f64 * delta_bar * delta_bar / (gamma * gamma)
}

fn single_outputs(p: &BoundProblem) -> Result<DVector<f64>> {
    p.dataset().single_outputs().ok_or_else(|| {
        Error::InvalidArgument("this model needs exactly one output per input site".into())
    })
}

pub fn fit_nominal(p: &BoundProblem, kind: NominalKind) -> Result<NominalModel> {
    let weights = match kind {
        NominalKind::Interpolant => p.factorization().solve(&single_outputs(p)?),
        NominalKind::Krr { mu } => {
            if !(mu >= 0.0) {
                return Err(Error::InvalidArgument(format!("negative ridge parameter {mu}")));
            }
            let y = single_outputs(p)?;
            let mut m = p.gram().clone();
            for i in 0..m.nrows() {
                m[(i, i)] += mu;
            }
            factorize_psd(&m, &JitterPolicy::minimal())?.solve(&y)
        }
        NominalKind::MinNorm => {
            let mn = p.min_norm();
            if mn.status == SolveStatus::Infeasible {
                return Err(Error::Inconsistent("noise bound contradicts repeated outputs".into()));
            }
            p.factorization().solve_upper(&mn.w)
        }
    };
    Ok(NominalModel { weights, kind })
}

/// Minimizer report of `¼ νᵀKν + νᵀy + δ̄‖ν‖₁`.
pub fn delta_tilde_report(p: &BoundProblem) -> Result<SolveReport> {
    let y = single_outputs(p)?;
    solve_l1_quadratic(p.gram(), &y, p.params().delta_bar, &p.options().solver)
}

/// Δ̃, the constant in the sub-optimal width.
pub fn compute_delta_tilde(p: &BoundProblem) -> Result<f64> {
    let rep = delta_tilde_report(p)?;
    match rep.status {
        SolveStatus::Optimal | SolveStatus::Approximate => Ok(rep.value),
        s => Err(Error::Degenerate(format!("Δ̃ problem ended with status {}", s.as_str()))),
    }
}

#[derive(Debug, Clone)]
pub struct SubOptimalEnvelope {
    pub delta_tilde: f64,
    pub model: NominalModel,
    /// yᵀK⁻¹y
    pub interpolant_norm_sq: f64,
    interpolant: DVector<f64>,
}

impl SubOptimalEnvelope {
    pub fn new(p: &BoundProblem, model: NominalModel) -> Result<Self> {
        let y = single_outputs(p)?;
        let interpolant = p.factorization().solve(&y);
        let radicand = p.params().gamma.powi(2);
        let delta_tilde = compute_delta_tilde(p)?;
        if radicand + delta_tilde < -1e-8 * radicand.max(1.0) {
            return Err(Error::Inconsistent(format!(
                "Γ² + Δ̃ = {:.6e} is negative; Γ is too small for the data",
                radicand + delta_tilde
            )));
        }
        Ok(Self {
            delta_tilde,
            model,
            interpolant_norm_sq: y.dot(&interpolant),
            interpolant,
        })
    }
}

/// Pieces of the sub-optimal half-width S(x).
#[derive(Debug, Clone, Copy)]
pub struct SubOptimalTerms {
    pub nominal: f64,
    pub interpolant: f64,
    pub power: f64,
    /// ‖K⁻¹K_Xx‖₁
    pub l1_gain: f64,
    pub half_width: f64,
}

pub fn suboptimal_terms(env: &SubOptimalEnvelope, p: &BoundProblem, x: &[f64]) -> Result<SubOptimalTerms> {
    let kx = kernel_vector(p.kernel(), p.dataset().inputs(), x)?;
    let ell = p.factorization().solve_lower(&kx);
    let power = (p.kernel().k(x, x) - ell.norm_squared()).max(0.0).sqrt();
    let gain = p.factorization().solve_upper(&ell);
    let gamma = p.params().gamma;
    let radicand = (gamma * gamma + env.delta_tilde).max(0.0);
    let nominal = env.model.weights.dot(&kx);
    let interpolant = env.interpolant.dot(&kx);
    let l1_gain = gain.abs().sum();
    let half_width = power * radicand.sqrt() + p.params().delta_bar * l1_gain + (interpolant - nominal).abs();
    Ok(SubOptimalTerms {
        nominal,
        interpolant,
        power,
        l1_gain,
        half_width,
    })
}

/// `(s(x) − S(x), s(x) + S(x))`
pub fn suboptimal_envelope(env: &SubOptimalEnvelope, p: &BoundProblem, x: &[f64]) -> Result<(f64, f64)> {
    let t = suboptimal_terms(env, p, x)?;
    Ok((t.nominal - t.half_width, t.nominal + t.half_width))
}

/// How the noise parameter enters the GP posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GpNoise {
    /// `K + λ² I`: λ is the noise standard deviation.
    #[default]
    StdDev,
    /// `K + λ I`: λ is used directly as the noise variance.
    Variance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpBaseline {
    pub noise_std: f64,
    pub confidence: f64,
    pub info_gain_lower: f64,
    pub beta: f64,
}

impl GpBaseline {
    pub fn new(gamma: f64, noise_std: f64, confidence: f64, info_gain_lower: f64) -> Result<Self> {
        if !(confidence > 0.0 && confidence < 1.0) {
            return Err(Error::InvalidArgument(format!("confidence must be in (0,1), got {confidence}")));
        }
        let delta = 1.0 - confidence;
        let beta = gamma + 4.0 * noise_std * (info_gain_lower + 1.0 + (1.0 / delta).ln()).sqrt();
        Ok(Self {
            noise_std,
            confidence,
            info_gain_lower,
            beta,
        })
    }
}

/// `(μ − βσ, μ + βσ)`
pub fn gp_bound(g: &GpBaseline, gp_mean: f64, gp_std: f64) -> (f64, f64) {
    (gp_mean - g.beta * gp_std, gp_mean + g.beta * gp_std)
}

fn row_inputs(p: &BoundProblem) -> (Vec<Vec<f64>>, DVector<f64>) {
    let inputs = p.dataset().inputs();
    let rows: Vec<Vec<f64>> = p.dataset().shape().row_sites().into_iter().map(|i| inputs[i].clone()).collect();
    (rows, p.dataset().outputs())
}

/// ½ ln det(I + λ⁻² K) over all observations.
pub fn info_gain_lower(p: &BoundProblem, noise_std: f64) -> Result<f64> {
    if !(noise_std > 0.0) {
        return Err(Error::InvalidArgument(format!("noise std must be positive, got {noise_std}")));
    }
    let (rows, _) = row_inputs(p);
    let k = kernel_matrix(p.kernel(), &rows)?;
    let n = k.nrows();
    let m = DMatrix::identity(n, n) + k / (noise_std * noise_std);
    Ok(0.5 * factorize_psd(&m, &JitterPolicy::minimal())?.log_det())
}

/// Posterior of a zero-mean GP with the problem's kernel.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    rows: Vec<Vec<f64>>,
    kernel: KernelSpec,
    factor: PsdFactorization,
    alpha: DVector<f64>,
}

impl GpPosterior {
    pub fn fit(p: &BoundProblem, noise_std: f64, noise: GpNoise) -> Result<Self> {
        let (rows, y) = row_inputs(p);
        let mut k = kernel_matrix(p.kernel(), &rows)?;
        let add = match noise {
            GpNoise::StdDev => noise_std * noise_std,
            GpNoise::Variance => noise_std,
        };
        for i in 0..k.nrows() {
            k[(i, i)] += add;
        }
        let factor = factorize_psd(&k, &JitterPolicy::minimal())?;
        let alpha = factor.solve(&y);
        Ok(Self {
            rows,
            kernel: *p.kernel(),
            factor,
            alpha,
        })
    }

    /// Posterior mean and standard deviation at x.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        let kx = kernel_vector(&self.kernel, &self.rows, x)?;
        let mean = self.alpha.dot(&kx);
        let v = self.factor.solve_lower(&kx);
        let var = (self.kernel.k(x, x) - v.norm_squared()).max(0.0);
        Ok((mean, var.sqrt()))
    }
}

/// Γ̂ = √(f_Xᵀ K⁻¹ f_X) from noise-free values.
pub fn norm_lower_estimate(kernel: &KernelSpec, inputs: &[Vec<f64>], values: &[f64], policy: &JitterPolicy) -> Result<f64> {
    if inputs.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.len(),
            got: values.len(),
        });
    }
    let k = kernel_matrix(kernel, inputs)?;
    let f = factorize_psd(&k, policy)?;
    Ok(f.solve_lower(&DVector::from_column_slice(values)).norm())
}

/// Γ̂ for every prefix of the samples, from one factorization: the Cholesky
/// factor of a leading block is the leading block of the factor, so the
/// sequence is non-decreasing by construction.
pub fn norm_lower_estimate_path(
    kernel: &KernelSpec,
    inputs: &[Vec<f64>],
    values: &[f64],
    policy: &JitterPolicy,
) -> Result<Vec<f64>> {
    if inputs.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.len(),
            got: values.len(),
        });
    }
    let k = kernel_matrix(kernel, inputs)?;
    let z = factorize_psd(&k, policy)?.solve_lower(&DVector::from_column_slice(values));
    let mut acc = 0.0;
    Ok(z.iter()
        .map(|v| {
            acc += v * v;
            acc.sqrt()
        })
        .collect())
}
