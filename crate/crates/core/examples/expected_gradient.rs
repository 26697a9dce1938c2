//! The conditional expected gradient g* against a Monte Carlo average of
//! minibatch gradients at fixed inputs.

use gp_sgd::data::{draw_inputs, InputDistribution};
use gp_sgd::diagnostics::{conditional_expected_gradient, monte_carlo_gradient};
use gp_sgd::kernels::{HyperParams, KernelSpec, MultiKernel};
use gp_sgd::training::ScalingPolicy;

fn main() -> gp_sgd::Result<()> {
    let kernel = MultiKernel::single(KernelSpec::rbf(vec![0.5])?);
    let x = draw_inputs(InputDistribution::Gaussian { sd: 2.0 }, 32, 1, 4)?;
    let truth = HyperParams::pair(4.0, 1.0)?;
    let scaling = ScalingPolicy::log_signal(3.0);

    for theta in [HyperParams::pair(2.5, 1.6)?, truth.clone()] {
        let exact = conditional_expected_gradient(&theta, &truth, &kernel, &x, &scaling)?;
        let mc = monte_carlo_gradient(&theta, &truth, &kernel, &x, &scaling, 5000, 8)?;
        println!("θ = {:?}", theta.as_vec());
        for l in 0..exact.len() {
            let z = (mc.mean[l] - exact[l]) / mc.std_error[l];
            println!("  slot {l}: g* = {:+.5}  MC = {:+.5} ± {:.5}  (z = {z:+.2})", exact[l], mc.mean[l], mc.std_error[l]);
        }
    }
    Ok(())
}
