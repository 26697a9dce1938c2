#![allow(dead_code)]

use gp_sgd::kernels::{HyperParams, KernelSpec, MaternOrder, MultiKernel};
use gp_sgd::training::{full_gradient, nll_loss};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random model with lengthscale slots: one or two kernels, up to 50 points in 1 or 2 dims.
pub struct Fixture {
    pub kernels: MultiKernel,
    pub theta: HyperParams,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

pub fn fixture(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(5..=50);
    let dim = rng.random_range(1..=2);
    let two = rng.random_bool(0.5);
    let x = DMatrix::from_fn(n, dim, |_, _| rng.random_range(-3.0..3.0));
    let y = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
    let mut specs = vec![KernelSpec::rbf((0..dim).map(|_| rng.random_range(0.3..2.0)).collect()).unwrap()];
    if two {
        let order = [MaternOrder::Half, MaternOrder::ThreeHalves, MaternOrder::FiveHalves][rng.random_range(0..3)];
        specs.push(KernelSpec::matern(order, rng.random_range(0.3..2.0)).unwrap());
    }
    let kernels = MultiKernel::new(specs).unwrap();
    let signals = (0..kernels.len()).map(|_| rng.random_range(0.2..3.0)).collect();
    let theta = HyperParams::new(signals, rng.random_range(0.05..1.0))
        .unwrap()
        .with_lengthscales(kernels.lengthscales())
        .unwrap();
    Fixture { kernels, theta, x, y }
}

/// Largest per-slot relative error between `full_gradient` and central
/// differences of `nll_loss` with `h = 1e-5·max(1, |θ_l|)`.
pub fn gradient_fd_error(f: &Fixture) -> f64 {
    let g = full_gradient(&f.theta, &f.kernels, &f.x, &f.y).unwrap();
    let v = f.theta.as_vec();
    (0..v.len())
        .map(|i| {
            let h = 1e-5 * v[i].abs().max(1.0);
            let at = |d: f64| {
                let mut w = v.clone();
                w[i] += d;
                nll_loss(&f.theta.from_flat(&w).unwrap(), &f.kernels, &f.x, &f.y).unwrap()
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            (g[i] - fd).abs() / fd.abs().max(1e-8)
        })
        .fold(0.0, f64::max)
}
