//! Noise-variance curvature under uniform and nearby sampling, the eigendecay
//! of the full kernel matrix, and the analytic large-m surrogate.

use gp_sgd::data::{draw_inputs, InputDistribution};
use gp_sgd::diagnostics::{
    analytic_gaussian_eigenvalues, curvature_experiment, curvature_surrogate, eigendecay_fit,
    gaussian_beta, CurvatureStudy, DecayFamily,
};
use gp_sgd::kernels::{kernel_matrix, KernelSpec, MultiKernel};
use gp_sgd::linalg::sym_eigenvalues;

fn main() -> gp_sgd::Result<()> {
    let spec = KernelSpec::rbf(vec![0.5])?;
    let study = CurvatureStudy {
        pool_size: 2048,
        batch_sizes: vec![16, 64],
        replicates: 20,
        theta: [4.0, 1.0],
        kernel: MultiKernel::single(spec.clone()),
        inputs: InputDistribution::Gaussian { sd: 10.0 },
        dim: 1,
        seed: 1,
        keep_eigenvalues: false,
    };
    for r in curvature_experiment(&study)? {
        println!("m={:<4} {:>8}  γ = {:.4} ± {:.4}", r.batch_size, r.scheme.name(), r.mean, r.sd);
    }

    let x = draw_inputs(study.inputs, 1024, 1, 2)?;
    let spectrum = sym_eigenvalues(&kernel_matrix(&spec, &x)?)?;
    let fit = eigendecay_fit(&spectrum, 1024, DecayFamily::Exponential, Some(10))?;
    let beta = gaussian_beta(10.0, 0.5);
    println!("fitted decay rate {:.4}, analytic -log β = {:.4}", fit.rate, -beta.ln());

    for l in [0.5, 1.0, 2.0] {
        let eigs = analytic_gaussian_eigenvalues(10.0, l, 2048);
        println!("l = {l}: γ̃ = {:.4}", curvature_surrogate(4.0, 1.0, &eigs, 2048));
    }
    Ok(())
}
