//! Robust pointwise bounds for functions in an RKHS ball observed under
//! bounded noise.
//!
//! Given samples `y_ij = f(x_i) + δ_ij` with `|δ_ij| ≤ δ̄` and `‖f‖_H ≤ Γ`,
//! [`envelope::BoundProblem`] computes the tightest interval `[B(x), C(x)]`
//! containing every admissible `f(x)`, by solving a second-order cone
//! program per query. Lagrangian duals, the alternating dual scheme, a
//! closed-form sub-optimal envelope, and a Gaussian-process baseline are
//! provided for comparison.

pub mod dataset;
pub mod envelope;
pub mod error;
pub mod kernel;
pub mod qclp;
pub mod reference;

pub use dataset::{
    corrupt_outputs, load_csv, sample_inputs, selection_apply, CsvSchema, Dataset, DomainBox, HeaderMode,
    HyperParams, NoiseModel, Sampling, SelectionShape,
};
pub use envelope::{check_shrinkage, BoundProblem, DualIterate, DualMode, EnvelopeMethod, EnvelopeResult, ProblemOptions};
pub use error::{Error, Result};
pub use kernel::{
    block_inverse, eval_kernel, factorize_psd, kernel_matrix, kernel_vector, power_function, BlockInverse,
    JitterPolicy, KernelFamily, KernelSpec, PsdFactorization,
};
pub use qclp::{
    solve_l1_quadratic, solve_norm_ball_lp, Direction, NormBallLp, QueryTerm, SolveReport, SolveStatus,
    SolverConfig,
};
pub use reference::{
    compute_delta_tilde, default_krr_mu, fit_nominal, gp_bound, info_gain_lower, norm_lower_estimate, norm_lower_estimate_path,
    suboptimal_envelope, suboptimal_terms, GpBaseline, GpNoise, GpPosterior, NominalKind, NominalModel,
    SubOptimalEnvelope,
};
