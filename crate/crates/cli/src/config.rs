//! Experiment configuration.
//!
//! Configs are flat TOML files; every key is optional and defaults to the
//! Hénon study settings (ℓ = 5, Γ = 1200, 100 samples on [−10, 10]², δ̄ = 1).
//! The seed has no default. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use rkhs_envelope::{DomainBox, JitterPolicy, NoiseModel, ProblemOptions, Sampling, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroundTruthKind {
    HenonForced,
    /// `Σ αᵢ k(cᵢ, ·)` read from `expansion_file`, one `c₁,…,c_n,α` row per center.
    KernelExpansion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingKind {
    Grid,
    Random,
}

impl SamplingKind {
    pub fn strategy(self) -> Sampling {
        match self {
            SamplingKind::Grid => Sampling::Grid,
            SamplingKind::Random => Sampling::UniformRandom,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SamplingKind::Grid => "grid",
            SamplingKind::Random => "random",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Uniform,
    ClippedGaussian,
}

impl NoiseKind {
    pub fn model(self, delta_bar: f64) -> NoiseModel {
        match self {
            NoiseKind::Uniform => NoiseModel::Uniform { delta_bar },
            NoiseKind::ClippedGaussian => NoiseModel::ClippedGaussian { delta_bar },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    Optimal,
    DualAlternating,
    DualExact,
    SuboptimalKrr,
    SuboptimalMinnorm,
    Gp,
}

impl MethodKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodKind::Optimal => "optimal",
            MethodKind::DualAlternating => "dual-alternating",
            MethodKind::DualExact => "dual-exact",
            MethodKind::SuboptimalKrr => "suboptimal-krr",
            MethodKind::SuboptimalMinnorm => "suboptimal-minnorm",
            MethodKind::Gp => "gp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GpNoiseKind {
    /// λ enters the posterior as a variance, `K + λI`.
    Variance,
    /// λ is a standard deviation, `K + λ²I`.
    StdDev,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub ground_truth: GroundTruthKind,
    pub expansion_file: Option<PathBuf>,
    pub domain_lo: Vec<f64>,
    pub domain_hi: Vec<f64>,
    pub samples: usize,
    pub sampling: SamplingKind,
    pub seed: Option<u64>,
    pub noise: NoiseKind,
    /// Bound on the noise, used both to corrupt the data and in the bounds.
    pub delta_bar: f64,
    pub lengthscale: f64,
    pub gamma: f64,
    /// Points per axis of the query lattice.
    pub query_resolution: usize,
    pub methods: Vec<MethodKind>,
    /// Ridge parameter of the KRR nominal model; `d·δ̄²/Γ²` when absent.
    pub krr_mu: Option<f64>,
    pub gp_confidence: f64,
    pub gp_noise: GpNoiseKind,
    /// First coordinate of the slice whose envelope widths are reported.
    pub slice_value: Option<f64>,
    pub slice_points: usize,

    pub comparison_samplings: Vec<SamplingKind>,
    pub comparison_noise: NoiseKind,
    pub gamma_factors: Vec<f64>,
    pub delta_factors: Vec<f64>,

    pub example2_counts: Vec<usize>,
    pub example2_resolution: usize,
    pub example2_threshold: f64,
    pub example2_target: Vec<f64>,
    /// Points per axis of the written feasibility masks; 0 disables them.
    pub example2_mask_resolution: usize,

    pub shrinkage_added: usize,
    pub shrinkage_queries: usize,

    pub solver_max_iterations: usize,
    pub solver_tolerance: f64,
    pub solver_refinement_steps: usize,
    /// Condition number above which K_XX is regularized.
    pub jitter_condition_threshold: f64,
    /// Largest jitter, relative to trace(K_XX)/n.
    pub jitter_cap: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let solver = SolverConfig::default();
        let jitter = JitterPolicy::default();
        Self {
            ground_truth: GroundTruthKind::HenonForced,
            expansion_file: None,
            domain_lo: vec![-10.0, -10.0],
            domain_hi: vec![10.0, 10.0],
            samples: 100,
            sampling: SamplingKind::Grid,
            seed: None,
            noise: NoiseKind::Uniform,
            delta_bar: 1.0,
            lengthscale: 5.0,
            gamma: 1200.0,
            query_resolution: 50,
            methods: vec![MethodKind::Optimal, MethodKind::SuboptimalKrr],
            krr_mu: None,
            gp_confidence: 0.99,
            gp_noise: GpNoiseKind::Variance,
            slice_value: Some(-3.0),
            slice_points: 100,
            comparison_samplings: vec![SamplingKind::Grid, SamplingKind::Random],
            comparison_noise: NoiseKind::ClippedGaussian,
            gamma_factors: vec![1.0, 1.5, 2.0],
            delta_factors: vec![1.0, 1.5, 2.0],
            example2_counts: vec![64, 81, 100],
            example2_resolution: 200,
            example2_threshold: -10.0,
            example2_target: vec![1.0, 5.0],
            example2_mask_resolution: 50,
            shrinkage_added: 10,
            shrinkage_queries: 100,
            solver_max_iterations: solver.max_iterations,
            solver_tolerance: solver.tolerance,
            solver_refinement_steps: solver.refinement_steps,
            jitter_condition_threshold: jitter.condition_threshold,
            jitter_cap: jitter.cap,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn domain(&self) -> Result<DomainBox> {
        DomainBox::new(self.domain_lo.clone(), self.domain_hi.clone()).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn problem_options(&self) -> ProblemOptions {
        ProblemOptions {
            jitter: JitterPolicy {
                condition_threshold: self.jitter_condition_threshold,
                cap: self.jitter_cap,
                ..JitterPolicy::default()
            },
            solver: SolverConfig {
                max_iterations: self.solver_max_iterations,
                tolerance: self.solver_tolerance,
                refinement_steps: self.solver_refinement_steps,
            },
        }
    }

    /// The seed, which every run that draws noise or random inputs needs.
    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| CliError::Config("a seed is required (set `seed` or pass --seed)".into()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        self.domain()?;
        if self.ground_truth == GroundTruthKind::KernelExpansion && self.expansion_file.is_none() {
            return bad("ground_truth = \"kernel-expansion\" needs expansion_file".into());
        }
        if self.ground_truth == GroundTruthKind::HenonForced && self.domain_lo.len() != 2 {
            return bad("the Hénon ground truth is defined on a 2-dimensional domain".into());
        }
        if self.samples == 0 {
            return bad("samples must be positive".into());
        }
        if !(self.delta_bar >= 0.0 && self.delta_bar.is_finite()) {
            return bad(format!("delta_bar must be non-negative, got {}", self.delta_bar));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.lengthscale > 0.0 && self.lengthscale.is_finite()) {
            return bad(format!("lengthscale must be positive, got {}", self.lengthscale));
        }
        if self.query_resolution < 2 {
            return bad("query_resolution must be at least 2".into());
        }
        if self.methods.is_empty() {
            return bad("methods is empty".into());
        }
        if !(self.gp_confidence > 0.0 && self.gp_confidence < 1.0) {
            return bad(format!("gp_confidence must lie in (0, 1), got {}", self.gp_confidence));
        }
        if self.krr_mu.is_some_and(|m| !(m >= 0.0)) {
            return bad("krr_mu must be non-negative".into());
        }
        if self.gamma_factors.iter().chain(&self.delta_factors).any(|f| !(*f > 0.0)) {
            return bad("comparison factors must be positive".into());
        }
        if self.solver_max_iterations == 0 || !(self.solver_tolerance > 0.0) {
            return bad("solver_max_iterations and solver_tolerance must be positive".into());
        }
        if !(self.jitter_cap >= 0.0) || !(self.jitter_condition_threshold > 1.0) {
            return bad("jitter_cap must be non-negative and jitter_condition_threshold above 1".into());
        }
        if self.example2_target.len() != self.domain_lo.len() {
            return bad("example2_target must have the domain dimension".into());
        }
        if self.example2_resolution < 2 {
            return bad("example2_resolution must be at least 2".into());
        }
        if self.slice_value.is_some() && self.slice_points < 2 {
            return bad("slice_points must be at least 2".into());
        }
        let random = self.sampling == SamplingKind::Random || self.comparison_samplings.contains(&SamplingKind::Random);
        if (random || self.delta_bar > 0.0) && self.seed.is_none() {
            self.require_seed()?;
        }
        Ok(())
    }
}
