//! Kernel matrices and their derivatives, checked against finite differences.

use gp_sgd::kernels::{
    kernel_matrix, kernel_matrix_grad, marginal_covariance, HyperParams, KernelSpec, MaternOrder,
    MultiKernel,
};
use nalgebra::DMatrix;

fn main() -> gp_sgd::Result<()> {
    let x = DMatrix::from_fn(6, 2, |i, j| (i as f64 * 0.7 + j as f64 * 0.3).sin());
    let kernels = MultiKernel::new(vec![
        KernelSpec::rbf(vec![0.8, 1.5])?,
        KernelSpec::matern(MaternOrder::ThreeHalves, 1.2)?,
    ])?;
    let theta = HyperParams::new(vec![2.0, 0.5], 0.1)?.with_lengthscales(kernels.lengthscales())?;

    for (spec, name) in kernels.components().iter().zip(["rbf", "matern 3/2"]) {
        let k = kernel_matrix(spec, &x)?;
        println!("{name:>10}: diag {:.1}, K[0,1] = {:.4}", k[(0, 0)], k[(0, 1)]);
    }

    let h = 1e-6;
    let flat = theta.as_vec();
    println!("{:>16} {:>12}", "slot", "max |Δ|");
    for (i, label) in theta.labels().iter().enumerate() {
        let param = theta.param_index(i).expect("slot");
        let exact = kernel_matrix_grad(&kernels, &theta, &x, param)?;
        let mut up = flat.clone();
        let mut down = flat.clone();
        up[i] += h;
        down[i] -= h;
        let fd = (marginal_covariance(&kernels, &theta.from_flat(&up)?, &x)?
            - marginal_covariance(&kernels, &theta.from_flat(&down)?, &x)?)
            / (2.0 * h);
        println!("{label:>16} {:>12.2e}", (exact - fd).abs().max());
    }
    Ok(())
}
