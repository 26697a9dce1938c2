//! Cholesky solves, conjugate gradients and symmetric eigenvalues on a kernel matrix.

use gp_sgd::kernels::{marginal_covariance, HyperParams, KernelSpec, MultiKernel};
use gp_sgd::linalg::{cg_solve, cholesky, sym_eigenvalues, Preconditioner};
use nalgebra::{DMatrix, DVector};

fn main() -> gp_sgd::Result<()> {
    let n = 400;
    let x = DMatrix::from_fn(n, 1, |i, _| i as f64 / 40.0);
    let kernel = MultiKernel::single(KernelSpec::rbf(vec![0.5])?);
    let k = marginal_covariance(&kernel, &HyperParams::pair(4.0, 0.5)?, &x)?;
    let b = DVector::from_fn(n, |i, _| (i as f64 / 13.0).cos());

    let factor = cholesky(&k)?;
    let direct = factor.solve_vec(&b)?;
    println!("log|K| = {:.6}", factor.log_det());

    let plain = cg_solve(|v| &k * v, &b, 1e-10, 1000, &Preconditioner::None)?;
    let jacobi = cg_solve(|v| &k * v, &b, 1e-10, 1000, &Preconditioner::jacobi(&k.diagonal())?)?;
    for (name, sol) in [("cg", &plain), ("cg+jacobi", &jacobi)] {
        println!(
            "{name:>10}: {} iterations, residual {:.1e}, max diff to Cholesky {:.1e}",
            sol.iterations,
            sol.residual,
            (&sol.x - &direct).abs().max()
        );
    }

    let spectrum = sym_eigenvalues(&k)?;
    let v = spectrum.values();
    println!("eigenvalues: largest {:.3}, smallest {:.3}, sum {:.3} = trace {:.3}", v[0], v[n - 1], spectrum.sum(), k.trace());
    Ok(())
}
