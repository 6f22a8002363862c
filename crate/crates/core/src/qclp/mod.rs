//! Solvers for the two convex patterns the bounds reduce to: a linear
//! objective over an RKHS-norm ball intersected with site boxes, and an
//! ℓ1-regularized convex quadratic.

mod cone;
mod l1qp;

use nalgebra::{DMatrix, DVector};

pub use cone::IpmSettings;

use crate::dataset::SelectionShape;
use crate::error::{Error, Result};
use crate::kernel::PsdFactorization;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Scaled feasibility and optimality tolerance.
    pub tolerance: f64,
    pub refinement_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-9,
            refinement_steps: 2,
        }
    }
}

impl SolverConfig {
    fn ipm(&self) -> IpmSettings {
        IpmSettings {
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            refinement_steps: self.refinement_steps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Approximate,
    Infeasible,
    Degenerate,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Approximate => "approximate",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Degenerate => "degenerate",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub value: f64,
    pub optimizer: DVector<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub residual: f64,
    /// Primal minus dual objective in problem units; NaN when not computed.
    pub duality_gap: f64,
}

impl SolveReport {
    pub(crate) fn infeasible(dim: usize) -> Self {
        Self {
            value: f64::NAN,
            optimizer: DVector::from_element(dim, f64::NAN),
            status: SolveStatus::Infeasible,
            iterations: 0,
            residual: f64::NAN,
            duality_gap: f64::NAN,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Maximize,
    Minimize,
}

impl Direction {
    fn sign(&self) -> f64 {
        match self {
            Direction::Maximize => -1.0,
            Direction::Minimize => 1.0,
        }
    }
}

/// The coordinate being optimized.
#[derive(Debug, Clone)]
pub enum QueryTerm {
    /// Value at data site i (the on-data program).
    Site(usize),
    /// Off-data query, given by the last row `[ellᵀ power]` of the Cholesky
    /// factor of the augmented kernel matrix on X ∪ {x}.
    Augmented { ell: DVector<f64>, power: f64 },
}

/// Per-site boxes `[max_j y_ij − δ̄, min_j y_ij + δ̄]` from grouped outputs.
pub fn site_boxes(shape: &SelectionShape, outputs: &DVector<f64>, delta_bar: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if outputs.len() != shape.total() {
        return Err(Error::DimensionMismatch {
            expected: shape.total(),
            got: outputs.len(),
        });
    }
    let d = shape.sites();
    let mut lo = vec![f64::NEG_INFINITY; d];
    let mut hi = vec![f64::INFINITY; d];
    for (row, site) in shape.row_sites().into_iter().enumerate() {
        lo[site] = lo[site].max(outputs[row] - delta_bar);
        hi[site] = hi[site].min(outputs[row] + delta_bar);
    }
    Ok((lo, hi))
}

/// Maximize or minimize one coordinate over `{z : zᵀK⁻¹z ≤ Γ², ‖Λc − y‖∞ ≤ δ̄}`
/// where K is the (augmented) kernel matrix.
#[derive(Debug, Clone)]
pub struct NormBallLp<'a> {
    pub factor: &'a PsdFactorization,
    pub shape: &'a SelectionShape,
    pub outputs: &'a DVector<f64>,
    pub gamma: f64,
    pub delta_bar: f64,
    pub query: QueryTerm,
    pub direction: Direction,
    /// Precomputed `L Lᵀ` and minimum feasible norm, to share across queries.
    pub cache: Option<&'a LpCache>,
}

/// Query-independent data reused by [`solve_norm_ball_lp`].
#[derive(Debug, Clone)]
pub struct LpCache {
    pub gram: DMatrix<f64>,
    pub min_norm: MinNormReport,
}

impl LpCache {
    pub fn new(factor: &PsdFactorization, lo: &[f64], hi: &[f64], cfg: &SolverConfig) -> Result<Self> {
        Ok(Self {
            gram: factor.reconstruct(),
            min_norm: solve_min_norm(factor, lo, hi, cfg)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct MinNormReport {
    /// min ‖w‖ subject to `lo ≤ L w ≤ hi`; infinite when the boxes are empty.
    pub norm: f64,
    pub w: DVector<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
}

fn fixed_mask(lo: &[f64], hi: &[f64]) -> Vec<bool> {
    lo.iter()
        .zip(hi)
        .map(|(a, b)| b - a <= 1e-12 * a.abs().max(b.abs()).max(1.0))
        .collect()
}

fn boxes_consistent(lo: &[f64], hi: &[f64]) -> bool {
    lo.iter()
        .zip(hi)
        .all(|(a, b)| *a <= *b + 1e-12 * a.abs().max(b.abs()).max(1.0))
}

/// Smallest RKHS norm among site values in the boxes.
pub fn solve_min_norm(factor: &PsdFactorization, lo: &[f64], hi: &[f64], cfg: &SolverConfig) -> Result<MinNormReport> {
    let d = factor.size;
    if lo.len() != d || hi.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: lo.len().min(hi.len()),
        });
    }
    if !boxes_consistent(lo, hi) {
        return Ok(MinNormReport {
            norm: f64::INFINITY,
            w: DVector::from_element(d, f64::NAN),
            status: SolveStatus::Infeasible,
            iterations: 0,
        });
    }
    let fixed = fixed_mask(lo, hi);
    if fixed.iter().all(|f| *f) {
        let mid = DVector::from_iterator(d, lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)));
        let w = factor.solve_lower(&mid);
        return Ok(MinNormReport {
            norm: w.norm(),
            w,
            status: SolveStatus::Optimal,
            iterations: 0,
        });
    }
    let scale = lo
        .iter()
        .chain(hi)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let lo_s: Vec<f64> = lo.iter().map(|v| v / scale).collect();
    let hi_s: Vec<f64> = hi.iter().map(|v| v / scale).collect();
    let gram = factor.reconstruct();
    let p = cone::ConeProblem {
        l: &factor.lower,
        gram: &gram,
        lo: &lo_s,
        hi: &hi_s,
        fixed: &fixed,
        gamma: None,
        obj_c: None,
        obj_rho: 1.0,
        obj_w: None,
        obj_t: None,
    };
    let sol = cone::solve(&p, &cfg.ipm());
    Ok(MinNormReport {
        norm: sol.w.norm() * scale,
        w: sol.w * scale,
        status: if sol.converged {
            SolveStatus::Optimal
        } else {
            SolveStatus::Approximate
        },
        iterations: sol.iterations,
    })
}

/// Relative slack allowed between the minimum feasible norm and Γ.
const PHASE1_SLACK: f64 = 1e-9;

pub fn solve_norm_ball_lp(p: &NormBallLp<'_>, cfg: &SolverConfig) -> Result<SolveReport> {
    let d = p.factor.size;
    if !(p.gamma > 0.0) || !(p.delta_bar >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need gamma > 0 and delta_bar >= 0, got {} and {}",
            p.gamma, p.delta_bar
        )));
    }
    if p.shape.sites() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: p.shape.sites(),
        });
    }
    let out_dim = match &p.query {
        QueryTerm::Site(i) => {
            if *i >= d {
                return Err(Error::InvalidArgument(format!("site index {i} out of range")));
            }
            d
        }
        QueryTerm::Augmented { ell, power } => {
            if ell.len() != d || !(*power >= 0.0) {
                return Err(Error::InvalidArgument("malformed augmented query row".into()));
            }
            d + 1
        }
    };
    let (lo, hi) = site_boxes(p.shape, p.outputs, p.delta_bar)?;
    if !boxes_consistent(&lo, &hi) {
        return Ok(SolveReport::infeasible(out_dim));
    }
    let owned;
    let cache = match p.cache {
        Some(c) => c,
        None => {
            owned = LpCache::new(p.factor, &lo, &hi, cfg)?;
            &owned
        }
    };
    let mn = &cache.min_norm;
    if mn.status == SolveStatus::Infeasible || mn.norm > p.gamma * (1.0 + PHASE1_SLACK) {
        return Ok(SolveReport::infeasible(out_dim));
    }

    let sign = p.direction.sign();
    let fixed = fixed_mask(&lo, &hi);
    let scale = p.gamma;
    let lo_s: Vec<f64> = lo.iter().map(|v| v / scale).collect();
    let hi_s: Vec<f64> = hi.iter().map(|v| v / scale).collect();

    if fixed.iter().all(|f| *f) {
        return Ok(all_fixed(p, &lo, &hi, out_dim));
    }

    let obj_w;
    let problem = match &p.query {
        QueryTerm::Site(i) => cone::ConeProblem {
            l: &p.factor.lower,
            gram: &cache.gram,
            lo: &lo_s,
            hi: &hi_s,
            fixed: &fixed,
            gamma: Some(1.0),
            obj_c: Some((*i, sign)),
            obj_rho: 0.0,
            obj_w: None,
            obj_t: None,
        },
        QueryTerm::Augmented { ell, power } => {
            obj_w = ell * sign;
            cone::ConeProblem {
                l: &p.factor.lower,
                gram: &cache.gram,
                lo: &lo_s,
                hi: &hi_s,
                fixed: &fixed,
                gamma: Some(1.0),
                obj_c: None,
                obj_rho: 0.0,
                obj_w: Some(&obj_w),
                obj_t: Some(sign * power),
            }
        }
    };
    let sol = cone::solve(&problem, &cfg.ipm());
    let w = &sol.w * scale;
    let c = &p.factor.lower * &w;
    let mut optimizer = DVector::zeros(out_dim);
    optimizer.rows_mut(0, d).copy_from(&c);
    if let QueryTerm::Augmented { ell, power } = &p.query {
        optimizer[d] = ell.dot(&w) + power * sol.t * scale;
    }
    let value = sign * sol.value * scale;
    Ok(SolveReport {
        value,
        optimizer,
        status: if sol.converged {
            SolveStatus::Optimal
        } else {
            SolveStatus::Approximate
        },
        iterations: sol.iterations,
        residual: sol.residual,
        duality_gap: sol.gap * scale,
    })
}

/// δ̄ = 0 style problems where every site value is pinned.
fn all_fixed(p: &NormBallLp<'_>, lo: &[f64], hi: &[f64], out_dim: usize) -> SolveReport {
    let d = p.factor.size;
    let c = DVector::from_iterator(d, lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)));
    let mut optimizer = DVector::zeros(out_dim);
    optimizer.rows_mut(0, d).copy_from(&c);
    let value = match &p.query {
        QueryTerm::Site(i) => c[*i],
        QueryTerm::Augmented { ell, power } => {
            let w = p.factor.solve_lower(&c);
            let slack = (p.gamma * p.gamma - w.norm_squared()).max(0.0).sqrt();
            let v = ell.dot(&w) - p.direction.sign() * power * slack;
            optimizer[d] = v;
            v
        }
    };
    SolveReport {
        value,
        optimizer,
        status: SolveStatus::Optimal,
        iterations: 0,
        residual: 0.0,
        duality_gap: 0.0,
    }
}

/// Which algorithm [`solve_l1_quadratic_with`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum L1Method {
    #[default]
    InteriorPoint,
    CoordinateDescent,
}

/// Minimizes `¼ νᵀQν + linearᵀν + l1_weight ‖ν‖₁`.
pub fn solve_l1_quadratic(q: &DMatrix<f64>, linear: &DVector<f64>, l1_weight: f64, cfg: &SolverConfig) -> Result<SolveReport> {
    solve_l1_quadratic_with(q, linear, l1_weight, cfg, L1Method::InteriorPoint)
}

pub fn solve_l1_quadratic_with(
    q: &DMatrix<f64>,
    linear: &DVector<f64>,
    l1_weight: f64,
    cfg: &SolverConfig,
    method: L1Method,
) -> Result<SolveReport> {
    let n = linear.len();
    if q.nrows() != n || q.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: q.nrows(),
        });
    }
    if !(l1_weight >= 0.0) {
        return Err(Error::InvalidArgument(format!("negative l1 weight {l1_weight}")));
    }
    let sol = match method {
        L1Method::InteriorPoint => l1qp::solve_ipm(q, linear, l1_weight, &cfg.ipm()),
        L1Method::CoordinateDescent => {
            l1qp::solve_coordinate_descent(q, linear, l1_weight, 100_000, cfg.tolerance)
        }
    };
    if let Some(dir) = sol.unbounded {
        return Ok(SolveReport {
            value: f64::NEG_INFINITY,
            optimizer: dir,
            status: SolveStatus::Degenerate,
            iterations: sol.iterations,
            residual: sol.residual,
            duality_gap: f64::NAN,
        });
    }
    Ok(SolveReport {
        value: sol.value,
        optimizer: sol.nu,
        status: if sol.converged {
            SolveStatus::Optimal
        } else {
            SolveStatus::Approximate
        },
        iterations: sol.iterations,
        residual: sol.residual,
        duality_gap: sol.gap,
    })
}

/// Objective `¼ νᵀQν + linearᵀν + l1_weight ‖ν‖₁` at a point.
pub fn l1_quadratic_objective(q: &DMatrix<f64>, linear: &DVector<f64>, l1_weight: f64, nu: &DVector<f64>) -> f64 {
    l1qp::objective(q, linear, l1_weight, nu)
}
