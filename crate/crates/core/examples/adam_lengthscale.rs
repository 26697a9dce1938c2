//! Adam with a learned lengthscale, starting four times too long.

use gp_sgd::data::{simulate_gp, InputDistribution};
use gp_sgd::kernels::{HyperParams, KernelSpec, MultiKernel};
use gp_sgd::training::{adam_fit, AdamSettings, SgdConfig};

fn main() -> gp_sgd::Result<()> {
    let truth = MultiKernel::single(KernelSpec::rbf(vec![0.5])?);
    let data = simulate_gp(&truth, &HyperParams::pair(4.0, 0.25)?, 800, InputDistribution::Gaussian { sd: 3.0 }, 1, 5)?;

    let start = MultiKernel::single(KernelSpec::rbf(vec![2.0])?);
    let mut config = SgdConfig::new(64, 600, 0.05);
    config.seed = 9;
    let trace = adam_fit(&data, &start, &config, &AdamSettings::default(), &HyperParams::pair(1.0, 1.0)?, true)?;

    let labels = &trace.labels;
    for k in [0, 50, 150, 300, 600] {
        let r = &trace.records[k];
        let cells: Vec<String> = labels.iter().zip(&r.theta).map(|(l, v)| format!("{l}={v:.3}")).collect();
        println!("iter {k:>3}: {}", cells.join("  "));
    }
    Ok(())
}
