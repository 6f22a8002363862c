//! Optimal upper and lower bounds C(x), B(x), their Lagrangian duals and
//! the alternating dual scheme.

use nalgebra::{DMatrix, DVector};

use crate::dataset::{Dataset, HyperParams, SelectionShape};
use crate::error::{Error, Result};
use crate::kernel::{kernel_matrix, power_parts, JitterPolicy, KernelSpec, PsdFactorization};
use crate::kernel::factorize_psd;
use crate::qclp::{
    site_boxes, solve_l1_quadratic, solve_norm_ball_lp, Direction, LpCache, MinNormReport,
    NormBallLp, QueryTerm, SolveReport, SolveStatus, SolverConfig,
};

/// Queries whose power function is below this fraction of √k(x,x) are
/// evaluated at the nearest data site.
pub const ROUTING_POWER: f64 = 1e-6;

/// Alternation steps tried in exact dual mode before switching to bisection.
const EXACT_ALTERNATIONS: usize = 60;

/// Smallest λ tried, relative to the ν = 0 value √k(x,x)/(2Γ).
const LAMBDA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProblemOptions {
    pub jitter: JitterPolicy,
    pub solver: SolverConfig,
}

/// Kernel, data and hyperparameters together with the factorization of K_XX.
#[derive(Debug, Clone)]
pub struct BoundProblem {
    kernel: KernelSpec,
    dataset: Dataset,
    params: HyperParams,
    options: ProblemOptions,
    factor: PsdFactorization,
    shape: SelectionShape,
    outputs: DVector<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    cache: LpCache,
    checksum: u64,
}

fn input_checksum(kernel: &KernelSpec, dataset: &Dataset) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    kernel.lengthscale.to_bits().hash(&mut h);
    for p in dataset.inputs() {
        for v in p {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvelopeMethod {
    Primal,
    DualExact,
    DualAlternating,
}

impl EnvelopeMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            EnvelopeMethod::Primal => "primal",
            EnvelopeMethod::DualExact => "dual-exact",
            EnvelopeMethod::DualAlternating => "dual-alternating",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnvelopeResult {
    pub query: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
    pub method: EnvelopeMethod,
    /// Sum of the solver duality gaps of both sides.
    pub gap: f64,
    pub status_lower: SolveStatus,
    pub status_upper: SolveStatus,
}

impl EnvelopeResult {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DualMode {
    /// Alternate until λ settles to a relative `tolerance`; if it does not
    /// settle quickly, bisect on the derivative of the partial minimum in λ.
    Exact { max_iterations: usize, tolerance: f64 },
    /// Alternating ν/λ minimization with iteration cap L and λ tolerance ε.
    FixedIterations { max_iterations: usize, epsilon: f64 },
}

impl DualMode {
    pub fn exact() -> Self {
        DualMode::Exact {
            max_iterations: 300,
            tolerance: 1e-11,
        }
    }

    pub fn alternating() -> Self {
        DualMode::FixedIterations {
            max_iterations: 20,
            epsilon: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DualIterate {
    pub nu: DVector<f64>,
    pub lambda: f64,
    pub objective: f64,
}

/// Outcome of comparing envelopes before and after adding a sample.
#[derive(Debug, Clone)]
pub struct ShrinkageReport {
    pub max_upper_increase: f64,
    pub max_lower_decrease: f64,
    /// Queries skipped because a solve was not optimal.
    pub skipped: Vec<usize>,
    pub jitter: f64,
}

impl ShrinkageReport {
    pub fn max_violation(&self) -> f64 {
        self.max_upper_increase.max(self.max_lower_decrease).max(0.0)
    }
}

/// Query-dependent pieces of the dual objective.
struct DualData {
    /// Λ K_j Λᵀ
    q: DMatrix<f64>,
    /// Λ K_Xx (or Λ K_j e_i on data)
    b: DVector<f64>,
    kxx: f64,
    /// Last row of the augmented Cholesky factor, `[ellᵀ power]`.
    ell: DVector<f64>,
    power: f64,
    rows: Vec<usize>,
}

impl DualData {
    /// `νᵀQν − 2bᵀν + k(x,x)` as a sum of squares, which stays accurate when
    /// it is tiny compared with its terms.
    fn residual(&self, lower: &DMatrix<f64>, nu: &DVector<f64>) -> f64 {
        let mut site = DVector::zeros(self.ell.len());
        for (r, &i) in self.rows.iter().enumerate() {
            site[i] += nu[r];
        }
        (&self.ell - lower.tr_mul(&site)).norm_squared() + self.power * self.power
    }
}

impl BoundProblem {
    pub fn new(kernel: KernelSpec, dataset: Dataset, params: HyperParams) -> Result<Self> {
        Self::with_options(kernel, dataset, params, ProblemOptions::default())
    }

    pub fn with_options(
        kernel: KernelSpec,
        dataset: Dataset,
        params: HyperParams,
        options: ProblemOptions,
    ) -> Result<Self> {
        if dataset.sites() == 0 {
            return Err(Error::InvalidArgument("dataset has no samples".into()));
        }
        let k = kernel_matrix(&kernel, dataset.inputs())?;
        let factor = factorize_psd(&k, &options.jitter)?;
        let shape = dataset.shape();
        let outputs = dataset.outputs();
        let (lo, hi) = site_boxes(&shape, &outputs, params.delta_bar)?;
        let cache = LpCache::new(&factor, &lo, &hi, &options.solver)?;
        let checksum = input_checksum(&kernel, &dataset);
        Ok(Self {
            kernel,
            dataset,
            params,
            options,
            factor,
            shape,
            outputs,
            lo,
            hi,
            cache,
            checksum,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn params(&self) -> &HyperParams {
        &self.params
    }

    pub fn options(&self) -> &ProblemOptions {
        &self.options
    }

    pub fn factorization(&self) -> &PsdFactorization {
        &self.factor
    }

    /// K_XX + jitter·I as used by every bound.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.cache.gram
    }

    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    /// True when the cached factorization still matches kernel and inputs.
    pub fn is_consistent(&self) -> bool {
        self.checksum == input_checksum(&self.kernel, &self.dataset)
    }

    pub fn site_bounds(&self) -> (&[f64], &[f64]) {
        (&self.lo, &self.hi)
    }

    /// Smallest RKHS norm compatible with the data (the phase-1 certificate).
    pub fn min_norm(&self) -> &MinNormReport {
        &self.cache.min_norm
    }

    pub fn is_feasible(&self) -> bool {
        self.cache.min_norm.status != SolveStatus::Infeasible && self.cache.min_norm.norm <= self.params.gamma * (1.0 + 1e-9)
    }

    /// Heuristic check of the strict-feasibility condition behind zero duality gap.
    pub fn strictly_feasible_hint(&self) -> bool {
        let boxes_open = self.lo.iter().zip(&self.hi).all(|(a, b)| b - a > 1e-9 * a.abs().max(b.abs()).max(1.0));
        boxes_open && self.cache.min_norm.norm < self.params.gamma * (1.0 - 1e-6)
    }

    fn nearest_site(&self, x: &[f64]) -> usize {
        let d2 = |p: &Vec<f64>| -> f64 { p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum() };
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.dataset.inputs().iter().enumerate() {
            let v = d2(p);
            if v < best_d {
                best_d = v;
                best = i;
            }
        }
        best
    }

    /// Which program evaluates x: a data site or the augmented problem.
    pub fn query_term(&self, x: &[f64]) -> Result<QueryTerm> {
        if x.len() != self.dataset.domain().dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dataset.domain().dim(),
                got: x.len(),
            });
        }
        if let Some(i) = self.dataset.find_site(x) {
            return Ok(QueryTerm::Site(i));
        }
        let parts = power_parts(&self.kernel, self.dataset.inputs(), &self.factor, x)?;
        if parts.power < ROUTING_POWER * self.kernel.k(x, x).sqrt() {
            return Ok(QueryTerm::Site(self.nearest_site(x)));
        }
        Ok(QueryTerm::Augmented {
            ell: parts.ell,
            power: parts.power,
        })
    }

    fn solve(&self, term: QueryTerm, direction: Direction) -> Result<SolveReport> {
        let lp = NormBallLp {
            factor: &self.factor,
            shape: &self.shape,
            outputs: &self.outputs,
            gamma: self.params.gamma,
            delta_bar: self.params.delta_bar,
            query: term,
            direction,
            cache: Some(&self.cache),
        };
        solve_norm_ball_lp(&lp, &self.options.solver)
    }

    /// C(x)
    pub fn upper_bound(&self, x: &[f64]) -> Result<SolveReport> {
        self.solve(self.query_term(x)?, Direction::Maximize)
    }

    /// B(x)
    pub fn lower_bound(&self, x: &[f64]) -> Result<SolveReport> {
        self.solve(self.query_term(x)?, Direction::Minimize)
    }

    pub fn envelope(&self, x: &[f64]) -> Result<EnvelopeResult> {
        let term = self.query_term(x)?;
        let up = self.solve(term.clone(), Direction::Maximize)?;
        let low = self.solve(term, Direction::Minimize)?;
        Ok(EnvelopeResult {
            query: x.to_vec(),
            lower: low.value,
            upper: up.value,
            method: EnvelopeMethod::Primal,
            gap: up.duality_gap.abs() + low.duality_gap.abs(),
            status_lower: low.status,
            status_upper: up.status,
        })
    }

    /// Envelope from the dual side; both values are valid outer bounds.
    pub fn dual_envelope(&self, x: &[f64], mode: DualMode) -> Result<EnvelopeResult> {
        let up = self.dual_upper_bound(x, mode, None)?;
        let low = self.dual_lower_bound(x, mode, None)?;
        Ok(EnvelopeResult {
            query: x.to_vec(),
            lower: low.value,
            upper: up.value,
            method: match mode {
                DualMode::Exact { .. } => EnvelopeMethod::DualExact,
                DualMode::FixedIterations { .. } => EnvelopeMethod::DualAlternating,
            },
            gap: f64::NAN,
            status_lower: low.status,
            status_upper: up.status,
        })
    }

    fn dual_data(&self, term: &QueryTerm, x: &[f64]) -> Result<DualData> {
        let rows = self.shape.row_sites();
        let gram = &self.cache.gram;
        let q = DMatrix::from_fn(rows.len(), rows.len(), |r, s| gram[(rows[r], rows[s])]);
        let (kx, kxx, ell, power) = match term {
            QueryTerm::Site(i) => (
                gram.column(*i).into_owned(),
                gram[(*i, *i)],
                self.factor.lower.row(*i).transpose(),
                0.0,
            ),
            QueryTerm::Augmented { ell, power } => (
                crate::kernel::kernel_vector(&self.kernel, self.dataset.inputs(), x)?,
                self.kernel.k(x, x),
                ell.clone(),
                *power,
            ),
        };
        let b = DVector::from_iterator(rows.len(), rows.iter().map(|&i| kx[i]));
        Ok(DualData {
            q,
            b,
            kxx,
            ell,
            power,
            rows,
        })
    }

    /// Dual objective g(λ, ν) for outputs `y`.
    fn dual_objective(&self, data: &DualData, y: &DVector<f64>, lambda: f64, nu: &DVector<f64>) -> f64 {
        data.residual(&self.factor.lower, nu) / (4.0 * lambda)
            + y.dot(nu)
            + self.params.delta_bar * nu.abs().sum()
            + lambda * self.params.gamma * self.params.gamma
    }

    fn lambda_star(&self, data: &DualData, nu: &DVector<f64>) -> Result<f64> {
        let radicand = data.residual(&self.factor.lower, nu);
        if !radicand.is_finite() {
            return Err(Error::Degenerate(format!("λ* radicand {radicand}")));
        }
        Ok(radicand.sqrt() / (2.0 * self.params.gamma))
    }

    fn nu_step(&self, data: &DualData, y: &DVector<f64>, lambda: f64) -> Result<(DVector<f64>, SolveStatus)> {
        let q = &data.q / lambda;
        let linear = y - &data.b / (2.0 * lambda);
        let rep = solve_l1_quadratic(&q, &linear, self.params.delta_bar, &self.options.solver)?;
        match rep.status {
            SolveStatus::Degenerate | SolveStatus::Infeasible => Err(Error::Degenerate(
                "dual ν-step unbounded; data inconsistent with the noise bound".into(),
            )),
            s => Ok((rep.optimizer, s)),
        }
    }

    /// Alternating minimization of the dual for outputs `y`.
    fn run_dual(
        &self,
        data: &DualData,
        y: &DVector<f64>,
        mode: DualMode,
        lambda0: Option<f64>,
    ) -> Result<(SolveReport, Vec<DualIterate>)> {
        let gamma = self.params.gamma;
        // Below this the ν-step is too ill-conditioned; at data sites the
        // λ = 0 branch takes over anyway.
        let floor = LAMBDA_FLOOR * data.kxx.max(f64::MIN_POSITIVE).sqrt() / (2.0 * gamma);
        let mut lambda = lambda0.unwrap_or(data.kxx.sqrt() / (2.0 * gamma)).max(floor);
        let n = y.len();
        let zero = DVector::zeros(n);
        let mut iterates = vec![DualIterate {
            objective: self.dual_objective(data, y, lambda, &zero),
            nu: zero,
            lambda,
        }];
        let (cap, tol, exact) = match mode {
            DualMode::Exact { max_iterations, tolerance } => (max_iterations, tolerance, true),
            DualMode::FixedIterations { max_iterations, epsilon } => (max_iterations, epsilon, false),
        };
        let mut status = SolveStatus::Approximate;
        let mut sub_ok = true;
        let budget = if exact { cap.min(EXACT_ALTERNATIONS) } else { cap };
        let mut spent = 0;
        for _ in 0..budget {
            spent += 1;
            let (nu, s) = self.nu_step(data, y, lambda)?;
            sub_ok &= s == SolveStatus::Optimal;
            let next = self.lambda_star(data, &nu)?.max(floor);
            let objective = self.dual_objective(data, y, next, &nu);
            let change = (next - lambda).abs();
            let settle = if exact { tol * lambda.max(floor) } else { tol };
            lambda = next;
            iterates.push(DualIterate { nu, lambda, objective });
            if change <= settle {
                status = SolveStatus::Optimal;
                break;
            }
        }
        if exact && status != SolveStatus::Optimal {
            let (s, ok) = self.bisect_lambda(data, y, lambda, floor, tol, cap.saturating_sub(spent), &mut iterates)?;
            status = s;
            sub_ok &= ok;
        } else if exact {
            let (nu, s) = self.nu_step(data, y, lambda)?;
            sub_ok &= s == SolveStatus::Optimal;
            let objective = self.dual_objective(data, y, lambda, &nu);
            iterates.push(DualIterate { nu, lambda, objective });
        }
        if !sub_ok {
            status = SolveStatus::Approximate;
        }
        let best = iterates
            .iter()
            .min_by(|a, b| a.objective.total_cmp(&b.objective))
            .expect("at least one iterate");
        let report = SolveReport {
            value: best.objective,
            optimizer: best.nu.clone(),
            status,
            iterations: iterates.len() - 1,
            residual: f64::NAN,
            duality_gap: f64::NAN,
        };
        Ok((report, iterates))
    }

    /// Bisection in log λ on φ'(λ) = Γ² − r(ν*(λ))/(4λ²), where φ is the
    /// (convex) minimum of the dual objective over ν.
    #[allow(clippy::too_many_arguments)]
    fn bisect_lambda(
        &self,
        data: &DualData,
        y: &DVector<f64>,
        start: f64,
        floor: f64,
        tol: f64,
        budget: usize,
        iterates: &mut Vec<DualIterate>,
    ) -> Result<(SolveStatus, bool)> {
        let g2 = self.params.gamma * self.params.gamma;
        let mut ok = true;
        let mut evals = 0;
        let mut probe = |lambda: f64, iterates: &mut Vec<DualIterate>| -> Result<f64> {
            let (nu, s) = self.nu_step(data, y, lambda)?;
            ok &= s == SolveStatus::Optimal;
            let r = data.residual(&self.factor.lower, &nu);
            let objective = self.dual_objective(data, y, lambda, &nu);
            iterates.push(DualIterate { nu, lambda, objective });
            Ok(g2 - r / (4.0 * lambda * lambda))
        };
        let d0 = probe(start, iterates)?;
        evals += 1;
        let (mut lo, mut hi) = (start, start);
        if d0 < 0.0 {
            while evals < budget {
                hi *= 2.0;
                evals += 1;
                if probe(hi, iterates)? >= 0.0 {
                    break;
                }
                lo = hi;
            }
        } else {
            while evals < budget && lo > floor {
                lo = (lo / 2.0).max(floor);
                evals += 1;
                if probe(lo, iterates)? <= 0.0 {
                    break;
                }
                hi = lo;
            }
        }
        while evals < budget {
            if hi - lo <= tol * hi {
                return Ok((SolveStatus::Optimal, ok));
            }
            let mid = (lo * hi).sqrt();
            evals += 1;
            if probe(mid, iterates)? < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok((if hi - lo <= tol * hi { SolveStatus::Optimal } else { SolveStatus::Approximate }, ok))
    }

    /// Dual upper bound with the iterate history of the alternating scheme.
    pub fn dual_upper_bound_traced(
        &self,
        x: &[f64],
        mode: DualMode,
        lambda0: Option<f64>,
    ) -> Result<(SolveReport, Vec<DualIterate>)> {
        let term = self.query_term(x)?;
        let data = self.dual_data(&term, x)?;
        self.run_dual(&data, &self.outputs, mode, lambda0)
    }

    /// Any returned value is at least C(x). At data sites the λ = 0 branch is
    /// also taken into account.
    pub fn dual_upper_bound(&self, x: &[f64], mode: DualMode, lambda0: Option<f64>) -> Result<SolveReport> {
        match self.query_term(x)? {
            QueryTerm::Site(i) => self.on_data_dual(i, &self.outputs, mode),
            term => {
                let data = self.dual_data(&term, x)?;
                Ok(self.run_dual(&data, &self.outputs, mode, lambda0)?.0)
            }
        }
    }

    /// Any returned value is at most B(x).
    pub fn dual_lower_bound(&self, x: &[f64], mode: DualMode, lambda0: Option<f64>) -> Result<SolveReport> {
        let neg = -&self.outputs;
        let mut rep = match self.query_term(x)? {
            QueryTerm::Site(i) => self.on_data_dual(i, &neg, mode)?,
            term => {
                let data = self.dual_data(&term, x)?;
                self.run_dual(&data, &neg, mode, lambda0)?.0
            }
        };
        rep.value = -rep.value;
        rep.optimizer = -rep.optimizer;
        Ok(rep)
    }

    fn on_data_dual(&self, site: usize, y: &DVector<f64>, mode: DualMode) -> Result<SolveReport> {
        let data = self.dual_data(&QueryTerm::Site(site), &[])?;
        let positive = self.run_dual(&data, y, mode, None)?.0;
        let rows = self.shape.row_sites();
        let branch0 = rows
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == site)
            .map(|(r, _)| y[r])
            .fold(f64::INFINITY, f64::min)
            + self.params.delta_bar;
        if branch0 <= positive.value {
            return Ok(SolveReport {
                value: branch0,
                optimizer: DVector::zeros(y.len()),
                status: SolveStatus::Optimal,
                iterations: positive.iterations,
                residual: 0.0,
                duality_gap: f64::NAN,
            });
        }
        Ok(positive)
    }

    /// Dual value at data site `site`: the smaller of both branches.
    pub fn dual_on_data_branch(&self, site: usize, mode: DualMode) -> Result<SolveReport> {
        if site >= self.dataset.sites() {
            return Err(Error::InvalidArgument(format!("site index {site} out of range")));
        }
        self.on_data_dual(site, &self.outputs, mode)
    }

    /// Value of the λ = 0 branch at a data site: `min_j y_ij + δ̄`.
    pub fn on_data_zero_branch(&self, site: usize) -> f64 {
        self.hi[site]
    }

    /// Dual objective for the upper bound at x, for inspecting iterates.
    pub fn dual_objective_at(&self, x: &[f64], lambda: f64, nu: &DVector<f64>) -> Result<f64> {
        let term = self.query_term(x)?;
        let data = self.dual_data(&term, x)?;
        Ok(self.dual_objective(&data, &self.outputs, lambda, nu))
    }

    /// Same problem with an extra sample and the same hyperparameters.
    pub fn with_sample(&self, x: &[f64], y: f64) -> Result<Self> {
        Self::with_options(self.kernel, self.dataset.add_sample(x, y)?, self.params, self.options)
    }

    /// Rebuilds the problem with at least the given jitter.
    pub fn with_jitter_floor(&self, floor: f64) -> Result<Self> {
        let mut options = self.options;
        options.jitter = options.jitter.with_floor(floor);
        Self::with_options(self.kernel, self.dataset.clone(), self.params, options)
    }
}

/// Compares C and B before and after adding `sample`, using one common
/// jitter level for both problems.
pub fn check_shrinkage(p: &BoundProblem, sample: (&[f64], f64), queries: &[Vec<f64>]) -> Result<ShrinkageReport> {
    let mut before = p.clone();
    let mut after = p.with_sample(sample.0, sample.1)?.with_jitter_floor(p.factor.jitter)?;
    if after.factor.jitter > before.factor.jitter {
        before = p.with_jitter_floor(after.factor.jitter)?;
        if before.factor.jitter > after.factor.jitter {
            after = after.with_jitter_floor(before.factor.jitter)?;
        }
    }
    let mut report = ShrinkageReport {
        max_upper_increase: f64::NEG_INFINITY,
        max_lower_decrease: f64::NEG_INFINITY,
        skipped: Vec::new(),
        jitter: after.factor.jitter,
    };
    for (k, x) in queries.iter().enumerate() {
        let b = before.envelope(x)?;
        let a = after.envelope(x)?;
        let ok = [b.status_lower, b.status_upper, a.status_lower, a.status_upper]
            .iter()
            .all(|s| *s == SolveStatus::Optimal);
        if !ok {
            report.skipped.push(k);
            continue;
        }
        report.max_upper_increase = report.max_upper_increase.max(a.upper - b.upper);
        report.max_lower_decrease = report.max_lower_decrease.max(b.lower - a.lower);
    }
    Ok(report)
}
