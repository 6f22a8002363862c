//! Experiment drivers. Every random draw is made up front from the config
//! seed, so results do not depend on the thread count.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use rkhs_envelope::dataset::CLIPPED_GAUSSIAN_RATIO;
use rkhs_envelope::{
    check_shrinkage, corrupt_outputs, default_krr_mu, fit_nominal, gp_bound, info_gain_lower, kernel_matrix,
    norm_lower_estimate_path, sample_inputs, suboptimal_envelope, BoundProblem, Dataset, DomainBox, DualMode,
    GpBaseline, GpNoise, GpPosterior, HyperParams, KernelSpec, NoiseModel, NominalKind, NominalModel,
    Sampling, SolveStatus, SubOptimalEnvelope,
};
use serde::Serialize;

use crate::config::{ExperimentConfig, GpNoiseKind, GroundTruthKind, MethodKind, SamplingKind};
use crate::{CliError, Result};

/// Methods compared in the width tables.
pub const COMPARISON_METHODS: [MethodKind; 3] = [MethodKind::Optimal, MethodKind::SuboptimalKrr, MethodKind::Gp];

/// Slack allowed when checking that the ground truth lies inside a band.
const CONTAINMENT_TOL: f64 = 1e-6;

/// `1 − 0.8 z₁² + z₂ + 8 sin(0.8 z₂)`
pub fn henon_ground_truth(z1: f64, z2: f64) -> f64 {
    1.0 - 0.8 * z1 * z1 + z2 + 8.0 * (0.8 * z2).sin()
}

#[derive(Debug, Clone)]
pub enum GroundTruth {
    Henon,
    Expansion {
        kernel: KernelSpec,
        centers: Vec<Vec<f64>>,
        alpha: Vec<f64>,
    },
}

impl GroundTruth {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        match cfg.ground_truth {
            GroundTruthKind::HenonForced => Ok(GroundTruth::Henon),
            GroundTruthKind::KernelExpansion => {
                let path = cfg
                    .expansion_file
                    .as_deref()
                    .ok_or_else(|| CliError::Config("expansion_file is not set".into()))?;
                let rows = crate::output::read_rows(path)?;
                let dim = cfg.domain_lo.len();
                let mut centers = Vec::with_capacity(rows.len());
                let mut alpha = Vec::with_capacity(rows.len());
                for (line, row) in rows {
                    if row.len() != dim + 1 {
                        return Err(CliError::Config(format!(
                            "{}: line {line}: expected {} columns, got {}",
                            path.display(),
                            dim + 1,
                            row.len()
                        )));
                    }
                    alpha.push(row[dim]);
                    centers.push(row[..dim].to_vec());
                }
                if centers.is_empty() {
                    return Err(CliError::Config(format!("{}: no expansion terms", path.display())));
                }
                Ok(GroundTruth::Expansion {
                    kernel: KernelSpec::squared_exponential(cfg.lengthscale)?,
                    centers,
                    alpha,
                })
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            GroundTruth::Henon => henon_ground_truth(x[0], x[1]),
            GroundTruth::Expansion { kernel, centers, alpha } => {
                centers.iter().zip(alpha).map(|(c, a)| a * kernel.k(c, x)).sum()
            }
        }
    }

    /// RKHS norm, known only for kernel expansions.
    pub fn norm(&self) -> Option<f64> {
        match self {
            GroundTruth::Henon => None,
            GroundTruth::Expansion { kernel, centers, alpha } => {
                let k = kernel_matrix(kernel, centers).ok()?;
                let mut q = 0.0;
                for (i, ai) in alpha.iter().enumerate() {
                    for (j, aj) in alpha.iter().enumerate() {
                        q += ai * k[(i, j)] * aj;
                    }
                }
                Some(q.max(0.0).sqrt())
            }
        }
    }
}

/// Independent seed for each random stream of a run.
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

const INPUT_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;
const ADDED_INPUT_STREAM: u64 = 2;
const ADDED_NOISE_STREAM: u64 = 3;
const QUERY_STREAM: u64 = 4;

/// Inputs, noise-free values and corrupted outputs of one experiment.
#[derive(Debug, Clone)]
pub struct SampledData {
    pub inputs: Vec<Vec<f64>>,
    pub clean: Vec<f64>,
    pub outputs: Vec<f64>,
}

pub fn sample_data(
    truth: &GroundTruth,
    domain: &DomainBox,
    sampling: SamplingKind,
    count: usize,
    noise: NoiseModel,
    seed: u64,
) -> Result<SampledData> {
    let inputs = sample_inputs(sampling.strategy(), count, domain, stream_seed(seed, INPUT_STREAM))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let clean: Vec<f64> = inputs.iter().map(|x| truth.eval(x)).collect();
    let outputs = corrupt_outputs(&clean, noise, stream_seed(seed, NOISE_STREAM));
    Ok(SampledData { inputs, clean, outputs })
}

/// Builds the bound problem and checks that some function of norm ≤ Γ fits
/// the data.
pub fn build_problem(
    cfg: &ExperimentConfig,
    domain: &DomainBox,
    data: &SampledData,
    gamma: f64,
    delta_bar: f64,
) -> Result<BoundProblem> {
    let ds = Dataset::from_samples(domain.clone(), &data.inputs, &data.outputs)?;
    feasible_problem(cfg, ds, gamma, delta_bar)
}

pub fn feasible_problem(cfg: &ExperimentConfig, ds: Dataset, gamma: f64, delta_bar: f64) -> Result<BoundProblem> {
    let p = BoundProblem::with_options(
        KernelSpec::squared_exponential(cfg.lengthscale)?,
        ds,
        HyperParams::new(gamma, delta_bar)?,
        cfg.problem_options(),
    )?;
    if !p.is_feasible() {
        return Err(CliError::Infeasible(format!(
            "no function of norm ≤ Γ = {gamma} fits the data within δ̄ = {delta_bar} (smallest norm {})",
            p.min_norm().norm
        )));
    }
    Ok(p)
}

/// Lattice with `res` points per axis, first coordinate slowest.
pub fn query_lattice(domain: &DomainBox, res: usize) -> Result<Vec<Vec<f64>>> {
    let count = res
        .checked_pow(domain.dim() as u32)
        .ok_or_else(|| CliError::Config(format!("query lattice {res}^{} is too large", domain.dim())))?;
    Ok(sample_inputs(Sampling::Grid, count, domain, 0)?)
}

fn linspace(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| a + (b - a) * i as f64 / (n - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
    /// False when a solver stopped short of its tolerance.
    pub optimal: bool,
}

enum EvalKind {
    Optimal,
    Dual(DualMode),
    Sub(SubOptimalEnvelope),
    Gp(GpPosterior, GpBaseline),
}

/// One bounding method prepared for a problem.
pub struct Evaluator<'a> {
    problem: &'a BoundProblem,
    kind: EvalKind,
}

pub fn krr_mu(cfg: &ExperimentConfig, p: &BoundProblem) -> f64 {
    cfg.krr_mu
        .unwrap_or_else(|| default_krr_mu(p.dataset().sites(), p.params().delta_bar, p.params().gamma))
}

fn suboptimal(p: &BoundProblem, kind: NominalKind) -> Result<SubOptimalEnvelope> {
    let model = fit_nominal(p, kind)?;
    SubOptimalEnvelope::new(p, model).map_err(|e| match e {
        rkhs_envelope::Error::Inconsistent(m) => CliError::Infeasible(m),
        other => other.into(),
    })
}

impl<'a> Evaluator<'a> {
    pub fn new(p: &'a BoundProblem, method: MethodKind, cfg: &ExperimentConfig) -> Result<Self> {
        let kind = match method {
            MethodKind::Optimal => EvalKind::Optimal,
            MethodKind::DualAlternating => EvalKind::Dual(DualMode::alternating()),
            MethodKind::DualExact => EvalKind::Dual(DualMode::exact()),
            MethodKind::SuboptimalKrr => EvalKind::Sub(suboptimal(p, NominalKind::Krr { mu: krr_mu(cfg, p) })?),
            MethodKind::SuboptimalMinnorm => EvalKind::Sub(suboptimal(p, NominalKind::MinNorm)?),
            MethodKind::Gp => {
                let db = p.params().delta_bar;
                if db <= 0.0 {
                    return Err(CliError::Config("the GP baseline needs delta_bar > 0".into()));
                }
                let lambda = db / CLIPPED_GAUSSIAN_RATIO;
                let noise = match cfg.gp_noise {
                    GpNoiseKind::Variance => GpNoise::Variance,
                    GpNoiseKind::StdDev => GpNoise::StdDev,
                };
                let post = GpPosterior::fit(p, lambda, noise)?;
                let baseline = GpBaseline::new(p.params().gamma, lambda, cfg.gp_confidence, info_gain_lower(p, lambda)?)?;
                EvalKind::Gp(post, baseline)
            }
        };
        Ok(Self { problem: p, kind })
    }

    pub fn bounds(&self, x: &[f64]) -> Result<Bounds> {
        let p = self.problem;
        match &self.kind {
            EvalKind::Optimal | EvalKind::Dual(_) => {
                let e = match &self.kind {
                    EvalKind::Dual(mode) => p.dual_envelope(x, *mode)?,
                    _ => p.envelope(x)?,
                };
                if e.status_lower == SolveStatus::Infeasible || e.status_upper == SolveStatus::Infeasible {
                    return Err(CliError::Infeasible(format!("solve at query {x:?} reported infeasibility")));
                }
                Ok(Bounds {
                    lower: e.lower,
                    upper: e.upper,
                    optimal: e.status_lower == SolveStatus::Optimal && e.status_upper == SolveStatus::Optimal,
                })
            }
            EvalKind::Sub(env) => {
                let (lower, upper) = suboptimal_envelope(env, p, x)?;
                Ok(Bounds { lower, upper, optimal: true })
            }
            EvalKind::Gp(post, baseline) => {
                let (m, s) = post.predict(x)?;
                let (lower, upper) = gp_bound(baseline, m, s);
                Ok(Bounds { lower, upper, optimal: true })
            }
        }
    }
}

/// Bounds of one method over a set of queries.
#[derive(Debug, Clone)]
pub struct Surface {
    pub method: MethodKind,
    pub queries: Vec<Vec<f64>>,
    pub bounds: Vec<Bounds>,
    pub runtime_seconds: f64,
}

pub fn evaluate_surface(
    p: &BoundProblem,
    method: MethodKind,
    cfg: &ExperimentConfig,
    queries: &[Vec<f64>],
) -> Result<Surface> {
    let start = Instant::now();
    let ev = Evaluator::new(p, method, cfg)?;
    let bounds = queries.par_iter().map(|x| ev.bounds(x)).collect::<Result<Vec<_>>>()?;
    Ok(Surface {
        method,
        queries: queries.to_vec(),
        bounds,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub method: &'static str,
    /// Mean of C(x) − f*(x).
    pub average_upper_distance: f64,
    /// Mean of C(x) − B(x).
    pub average_width: f64,
    /// Queries where f* falls outside [B, C].
    pub violations: usize,
    pub nonoptimal: usize,
    pub runtime_seconds: f64,
}

pub fn summarize(surface: &Surface, truth: &GroundTruth) -> MethodSummary {
    let n = surface.bounds.len().max(1) as f64;
    let mut dist = 0.0;
    let mut width = 0.0;
    let mut violations = 0;
    for (x, b) in surface.queries.iter().zip(&surface.bounds) {
        let f = truth.eval(x);
        dist += b.upper - f;
        width += b.upper - b.lower;
        if f > b.upper + CONTAINMENT_TOL || f < b.lower - CONTAINMENT_TOL {
            violations += 1;
        }
    }
    MethodSummary {
        method: surface.method.as_str(),
        average_upper_distance: dist / n,
        average_width: width / n,
        violations,
        nonoptimal: surface.bounds.iter().filter(|b| !b.optimal).count(),
        runtime_seconds: surface.runtime_seconds,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SliceSummary {
    pub method: &'static str,
    pub first_coordinate: f64,
    pub points: usize,
    pub average_width: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Example1Report {
    pub sampling: &'static str,
    pub samples: usize,
    pub seed: u64,
    pub gamma: f64,
    pub delta_bar: f64,
    pub lengthscale: f64,
    pub query_resolution: usize,
    pub jitter: f64,
    pub min_norm: f64,
    pub methods: Vec<MethodSummary>,
    pub slice: Vec<SliceSummary>,
    #[serde(skip)]
    pub surfaces: Vec<Surface>,
}

impl Example1Report {
    pub fn method(&self, m: MethodKind) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m.as_str())
    }
}

pub fn run_example1(cfg: &ExperimentConfig) -> Result<Example1Report> {
    cfg.validate()?;
    let seed = cfg.require_seed()?;
    let truth = GroundTruth::from_config(cfg)?;
    let domain = cfg.domain()?;
    let data = sample_data(&truth, &domain, cfg.sampling, cfg.samples, cfg.noise.model(cfg.delta_bar), seed)?;
    let p = build_problem(cfg, &domain, &data, cfg.gamma, cfg.delta_bar)?;
    let queries = query_lattice(&domain, cfg.query_resolution)?;
    let mut surfaces = Vec::new();
    let mut methods = Vec::new();
    for &m in &cfg.methods {
        let s = evaluate_surface(&p, m, cfg, &queries)?;
        methods.push(summarize(&s, &truth));
        surfaces.push(s);
    }
    let mut slice = Vec::new();
    if let (Some(v), 2) = (cfg.slice_value, domain.dim()) {
        let pts: Vec<Vec<f64>> = linspace(domain.lo[1], domain.hi[1], cfg.slice_points).map(|z2| vec![v, z2]).collect();
        for &m in &cfg.methods {
            let s = evaluate_surface(&p, m, cfg, &pts)?;
            slice.push(SliceSummary {
                method: m.as_str(),
                first_coordinate: v,
                points: pts.len(),
                average_width: summarize(&s, &truth).average_width,
            });
        }
    }
    Ok(Example1Report {
        sampling: cfg.sampling.as_str(),
        samples: cfg.samples,
        seed,
        gamma: cfg.gamma,
        delta_bar: cfg.delta_bar,
        lengthscale: cfg.lengthscale,
        query_resolution: cfg.query_resolution,
        jitter: p.factorization().jitter,
        min_norm: p.min_norm().norm,
        methods,
        slice,
        surfaces,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TableRow {
    pub sampling: &'static str,
    pub gamma_factor: f64,
    pub delta_factor: f64,
    pub gamma: f64,
    pub delta_bar: f64,
    pub method: &'static str,
    pub average_width: f64,
    pub average_upper_distance: f64,
    pub runtime_seconds: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct BoundTable {
    pub rows: Vec<TableRow>,
}

impl BoundTable {
    pub fn get(&self, sampling: SamplingKind, gamma_factor: f64, delta_factor: f64, method: MethodKind) -> Option<&TableRow> {
        self.rows.iter().find(|r| {
            r.sampling == sampling.as_str()
                && r.gamma_factor == gamma_factor
                && r.delta_factor == delta_factor
                && r.method == method.as_str()
        })
    }

    /// Cells that break `optimal ≤ suboptimal ≤ gp`, as `(sampling, Γ factor, δ̄ factor)`.
    pub fn ordering_violations(&self) -> Vec<(&'static str, f64, f64)> {
        let mut out = Vec::new();
        for r in self.rows.iter().filter(|r| r.method == MethodKind::Optimal.as_str()) {
            let find = |m: MethodKind| {
                self.rows.iter().find(|s| {
                    s.sampling == r.sampling && s.gamma_factor == r.gamma_factor && s.delta_factor == r.delta_factor && s.method == m.as_str()
                })
            };
            if let (Some(sub), Some(gp)) = (find(MethodKind::SuboptimalKrr), find(MethodKind::Gp)) {
                if !(r.average_width <= sub.average_width && sub.average_width <= gp.average_width) {
                    out.push((r.sampling, r.gamma_factor, r.delta_factor));
                }
            }
        }
        out
    }
}

/// Average widths of the compared methods for every sampling strategy and
/// factor pair. The data of each sampling strategy are drawn once and shared
/// by all cells and methods.
pub fn run_comparison(cfg: &ExperimentConfig) -> Result<BoundTable> {
    cfg.validate()?;
    let seed = cfg.require_seed()?;
    let truth = GroundTruth::from_config(cfg)?;
    let domain = cfg.domain()?;
    let queries = query_lattice(&domain, cfg.query_resolution)?;
    let mut table = BoundTable::default();
    for &sampling in &cfg.comparison_samplings {
        let noise = cfg.comparison_noise.model(cfg.delta_bar);
        let data = sample_data(&truth, &domain, sampling, cfg.samples, noise, seed)?;
        for &gf in &cfg.gamma_factors {
            for &df in &cfg.delta_factors {
                let gamma = cfg.gamma * gf;
                let delta_bar = cfg.delta_bar * df;
                let p = build_problem(cfg, &domain, &data, gamma, delta_bar)?;
                for m in COMPARISON_METHODS {
                    let s = evaluate_surface(&p, m, cfg, &queries)?;
                    let sum = summarize(&s, &truth);
                    table.rows.push(TableRow {
                        sampling: sampling.as_str(),
                        gamma_factor: gf,
                        delta_factor: df,
                        gamma,
                        delta_bar,
                        method: m.as_str(),
                        average_width: sum.average_width,
                        average_upper_distance: sum.average_upper_distance,
                        runtime_seconds: sum.runtime_seconds,
                    });
                }
            }
        }
    }
    Ok(table)
}

/// A lattice point minimizing the objective subject to a constraint.
#[derive(Debug, Clone, Serialize)]
pub struct Minimizer {
    pub point: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Example2Run {
    pub count: usize,
    /// None when the inner approximation of the feasible set is empty.
    pub minimizer: Option<Minimizer>,
    /// Upper-bound programs solved; the rest were settled by cheaper bounds.
    pub exact_solves: usize,
    pub jitter: f64,
    #[serde(skip)]
    pub mask: Option<Vec<(Vec<f64>, bool)>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Example2Report {
    pub sampling: &'static str,
    pub seed: u64,
    pub resolution: usize,
    pub threshold: f64,
    pub target: Vec<f64>,
    pub true_minimizer: Option<Minimizer>,
    pub runs: Vec<Example2Run>,
}

fn objective(target: &[f64], z: &[f64]) -> f64 {
    z.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Visits lattice points by increasing objective and returns the first one
/// accepted by `feasible`. Candidates are tested in parallel batches; the
/// answer is the first feasible point in the global order.
fn lazy_minimize<F>(lattice: &[Vec<f64>], target: &[f64], feasible: F) -> Result<Option<Minimizer>>
where
    F: Fn(&[f64]) -> Result<bool> + Sync,
{
    let mut order: Vec<(f64, usize)> = lattice.iter().enumerate().map(|(i, z)| (objective(target, z), i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for batch in order.chunks(256) {
        let flags = batch
            .par_iter()
            .map(|&(_, i)| feasible(&lattice[i]))
            .collect::<Result<Vec<bool>>>()?;
        if let Some(k) = flags.iter().position(|f| *f) {
            let (obj, i) = batch[k];
            return Ok(Some(Minimizer {
                point: lattice[i].clone(),
                objective: obj,
            }));
        }
    }
    Ok(None)
}

/// Decides `C(z) ≤ threshold`, trying the minimum-norm model (which lies
/// below C) and the sub-optimal upper bound (which lies above C) before
/// solving for C itself.
struct ConstraintCheck<'a> {
    p: &'a BoundProblem,
    min_norm: NominalModel,
    sub: SubOptimalEnvelope,
    threshold: f64,
    solves: std::sync::atomic::AtomicUsize,
}

impl<'a> ConstraintCheck<'a> {
    fn new(p: &'a BoundProblem, cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            p,
            min_norm: fit_nominal(p, NominalKind::MinNorm)?,
            sub: suboptimal(p, NominalKind::Krr { mu: krr_mu(cfg, p) })?,
            threshold: cfg.example2_threshold,
            solves: 0.into(),
        })
    }

    fn feasible(&self, z: &[f64]) -> Result<bool> {
        let margin = 1e-6 * (1.0 + self.threshold.abs());
        if self.min_norm.predict(self.p, z)? > self.threshold + margin {
            return Ok(false);
        }
        if suboptimal_envelope(&self.sub, self.p, z)?.1 <= self.threshold {
            return Ok(true);
        }
        self.solves.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let c = self.p.upper_bound(z)?;
        if c.status == SolveStatus::Infeasible {
            return Err(CliError::Infeasible(format!("upper bound at {z:?} reported infeasibility")));
        }
        Ok(c.value <= self.threshold)
    }
}

pub fn run_example2(cfg: &ExperimentConfig) -> Result<Example2Report> {
    cfg.validate()?;
    let seed = cfg.require_seed()?;
    let truth = GroundTruth::from_config(cfg)?;
    let domain = cfg.domain()?;
    let lattice = query_lattice(&domain, cfg.example2_resolution)?;
    let target = &cfg.example2_target;
    let threshold = cfg.example2_threshold;
    let true_minimizer = lazy_minimize(&lattice, target, |z| Ok(truth.eval(z) <= threshold))?;
    let mask_lattice = match cfg.example2_mask_resolution {
        0 => None,
        r => Some(query_lattice(&domain, r)?),
    };
    let mut runs = Vec::new();
    for &count in &cfg.example2_counts {
        let data = sample_data(&truth, &domain, cfg.sampling, count, cfg.noise.model(cfg.delta_bar), seed)?;
        let p = build_problem(cfg, &domain, &data, cfg.gamma, cfg.delta_bar)?;
        let check = ConstraintCheck::new(&p, cfg)?;
        let minimizer = lazy_minimize(&lattice, target, |z| check.feasible(z))?;
        let exact_solves = check.solves.load(std::sync::atomic::Ordering::Relaxed);
        let mask = match &mask_lattice {
            None => None,
            Some(pts) => {
                let flags = pts.par_iter().map(|z| check.feasible(z)).collect::<Result<Vec<bool>>>()?;
                Some(pts.iter().cloned().zip(flags).collect())
            }
        };
        runs.push(Example2Run {
            count,
            minimizer,
            exact_solves,
            jitter: p.factorization().jitter,
            mask,
        });
    }
    Ok(Example2Report {
        sampling: cfg.sampling.as_str(),
        seed,
        resolution: cfg.example2_resolution,
        threshold,
        target: target.clone(),
        true_minimizer,
        runs,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ShrinkageStep {
    pub sample: Vec<f64>,
    pub output: f64,
    pub max_upper_increase: f64,
    pub max_lower_decrease: f64,
    pub skipped: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ShrinkageSummary {
    pub queries: usize,
    pub max_violation: f64,
    pub steps: Vec<ShrinkageStep>,
}

/// Adds random noisy samples one at a time and records how much C grew or B
/// fell on random queries; both should be zero up to solver tolerance.
pub fn run_shrinkage_check(cfg: &ExperimentConfig) -> Result<ShrinkageSummary> {
    cfg.validate()?;
    let seed = cfg.require_seed()?;
    let truth = GroundTruth::from_config(cfg)?;
    let domain = cfg.domain()?;
    let noise = cfg.noise.model(cfg.delta_bar);
    let data = sample_data(&truth, &domain, cfg.sampling, cfg.samples, noise, seed)?;
    let mut p = build_problem(cfg, &domain, &data, cfg.gamma, cfg.delta_bar)?;
    let added = sample_inputs(Sampling::UniformRandom, cfg.shrinkage_added, &domain, stream_seed(seed, ADDED_INPUT_STREAM))?;
    let clean: Vec<f64> = added.iter().map(|x| truth.eval(x)).collect();
    let ys = corrupt_outputs(&clean, noise, stream_seed(seed, ADDED_NOISE_STREAM));
    let queries = sample_inputs(Sampling::UniformRandom, cfg.shrinkage_queries, &domain, stream_seed(seed, QUERY_STREAM))?;
    let mut steps = Vec::new();
    let mut worst: f64 = 0.0;
    for (x, y) in added.iter().zip(ys) {
        let rep = check_shrinkage(&p, (x, y), &queries)?;
        worst = worst.max(rep.max_violation());
        steps.push(ShrinkageStep {
            sample: x.clone(),
            output: y,
            max_upper_increase: rep.max_upper_increase,
            max_lower_decrease: rep.max_lower_decrease,
            skipped: rep.skipped.len(),
        });
        p = p.with_sample(x, y)?;
    }
    Ok(ShrinkageSummary {
        queries: queries.len(),
        max_violation: worst,
        steps,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct NormEstimate {
    pub samples: usize,
    pub estimate: f64,
    /// Estimate after each prefix of the samples.
    pub path: Vec<f64>,
    pub true_norm: Option<f64>,
}

/// Γ̂ from noise-free evaluations of the configured ground truth.
pub fn run_estimate_norm(cfg: &ExperimentConfig) -> Result<NormEstimate> {
    let truth = GroundTruth::from_config(cfg)?;
    let domain = cfg.domain()?;
    let seed = match cfg.sampling {
        SamplingKind::Grid => cfg.seed.unwrap_or(0),
        SamplingKind::Random => cfg.require_seed()?,
    };
    let inputs = sample_inputs(cfg.sampling.strategy(), cfg.samples, &domain, stream_seed(seed, INPUT_STREAM))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let values: Vec<f64> = inputs.iter().map(|x| truth.eval(x)).collect();
    let mut est = estimate_norm(cfg, &inputs, &values)?;
    est.true_norm = truth.norm();
    Ok(est)
}

pub fn estimate_norm(cfg: &ExperimentConfig, inputs: &[Vec<f64>], values: &[f64]) -> Result<NormEstimate> {
    let kernel = KernelSpec::squared_exponential(cfg.lengthscale)?;
    let path = norm_lower_estimate_path(&kernel, inputs, values, &cfg.problem_options().jitter)?;
    Ok(NormEstimate {
        samples: inputs.len(),
        estimate: path.last().copied().unwrap_or(0.0),
        path,
        true_norm: None,
    })
}

/// Γ̂ from a dataset file with one output per input.
pub fn estimate_norm_from_file(cfg: &ExperimentConfig, path: &Path) -> Result<NormEstimate> {
    let ds = rkhs_envelope::load_csv(path, &Default::default())?;
    let y = ds
        .single_outputs()
        .ok_or_else(|| CliError::Config(format!("{}: norm estimation needs one output per input", path.display())))?;
    estimate_norm(cfg, ds.inputs(), y.as_slice())
}

/// Bounds of one method at the given queries for a dataset file.
pub fn run_bound(
    cfg: &ExperimentConfig,
    ds: Dataset,
    method: MethodKind,
    queries: &[Vec<f64>],
) -> Result<(BoundProblem, Surface)> {
    let dim = ds.domain().dim();
    if let Some(q) = queries.iter().find(|q| q.len() != dim) {
        return Err(CliError::Config(format!("query {q:?} does not have the data dimension {dim}")));
    }
    let p = feasible_problem(cfg, ds, cfg.gamma, cfg.delta_bar)?;
    let s = evaluate_surface(&p, method, cfg, queries)?;
    Ok((p, s))
}
