//! Exact, conjugate-gradient and nearest-neighbour prediction on the same split.

use gp_sgd::data::{simulate_gp, train_test_split, InputDistribution};
use gp_sgd::kernels::{HyperParams, KernelSpec, MultiKernel};
use gp_sgd::prediction::{predict, predict_nn, rmse, CgSettings, Strategy};
use gp_sgd::sampling::SpatialIndex;

fn main() -> gp_sgd::Result<()> {
    let kernel = MultiKernel::single(KernelSpec::rbf(vec![0.5])?);
    let theta = HyperParams::pair(4.0, 0.1)?;
    let data = simulate_gp(&kernel, &theta, 1500, InputDistribution::Gaussian { sd: 5.0 }, 1, 21)?;
    let (train, test) = train_test_split(&data, 0.6, 3)?;

    let exact = predict(&theta, &kernel, train.x(), train.y(), test.x(), Strategy::Exact)?;
    let cg = predict(&theta, &kernel, train.x(), train.y(), test.x(), Strategy::Cg(CgSettings::default()))?;
    let index = SpatialIndex::build(train.x())?;

    println!("{:<12} {:>8} {:>14}", "method", "rmse", "max |Δμ|");
    println!("{:<12} {:>8.4} {:>14}", "exact", rmse(&exact.mean, test.y())?, "-");
    println!("{:<12} {:>8.4} {:>14.2e}", "cg", rmse(&cg.mean, test.y())?, (&cg.mean - &exact.mean).abs().max());
    for count in [4, 16, 64] {
        let nn = predict_nn(&theta, &kernel, train.x(), train.y(), test.x(), count, &index)?;
        let name = format!("nn({count})");
        println!("{name:<12} {:>8.4} {:>14.2e}", rmse(&nn.mean, test.y())?, (&nn.mean - &exact.mean).abs().max());
    }
    let iters = cg.cg_iterations.as_ref().map(|v| v.iter().max().copied().unwrap_or(0));
    println!("largest CG iteration count: {iters:?}");
    Ok(())
}
