//! Fixtures for the benchmarks: noisy samples of the forced Hénon map on
//! [−10, 10]² with ℓ = 5 and Γ = 1200.

use rkhs_envelope::{
    corrupt_outputs, sample_inputs, BoundProblem, Dataset, DomainBox, HyperParams, KernelSpec, NoiseModel, Sampling,
};

pub fn henon(z: &[f64]) -> f64 {
    1.0 - 0.8 * z[0] * z[0] + z[1] + 8.0 * (0.8 * z[1]).sin()
}

/// `count` grid samples (a perfect square) with uniform noise of size `delta_bar`.
pub fn henon_problem(count: usize, delta_bar: f64) -> BoundProblem {
    let domain = DomainBox::cube(2, -10.0, 10.0).expect("valid box");
    let xs = sample_inputs(Sampling::Grid, count, &domain, 0).expect("square count");
    let clean: Vec<f64> = xs.iter().map(|x| henon(x)).collect();
    let ys = corrupt_outputs(&clean, NoiseModel::Uniform { delta_bar }, 1);
    let ds = Dataset::from_samples(domain, &xs, &ys).expect("valid samples");
    BoundProblem::new(
        KernelSpec::squared_exponential(5.0).expect("positive lengthscale"),
        ds,
        HyperParams::new(1200.0, delta_bar).expect("valid params"),
    )
    .expect("factorizable")
}

/// Off-grid query points.
pub fn queries(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let t = i as f64 / n as f64;
            vec![-9.3 + 18.1 * t, 8.7 - 17.2 * (3.0 * t).fract()]
        })
        .collect()
}
