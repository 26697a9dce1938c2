//! End to end on a noisy 2-D Levy surface: split, standardize, train with Adam
//! (variances and lengthscales), predict, and compare with the constant-mean baseline.
//!
//! ```bash
//! cargo run --release --example levy_regression
//! ```

use gp_sgd::data::{normalize, simulate_function, train_test_split, TestFunction};
use gp_sgd::kernels::{HyperParams, KernelSpec, MultiKernel};
use gp_sgd::prediction::{predict, rmse, Strategy};
use gp_sgd::training::{adam_fit, AdamSettings, SgdConfig};
use nalgebra::DVector;

fn main() -> gp_sgd::Result<()> {
    let data = simulate_function(TestFunction::Levy, 3000, 2, 1.0, 17)?;
    let (train, test) = train_test_split(&data, 0.6, 1)?;
    let (train_n, test_n, norm) = normalize(&train, &test)?;

    let kernel = MultiKernel::single(KernelSpec::rbf(vec![1.0, 1.0])?);
    let mut config = SgdConfig::new(256, 400, 0.05);
    config.seed = 3;
    let trace = adam_fit(&train_n, &kernel, &config, &AdamSettings::default(), &HyperParams::pair(1.0, 0.5)?, true)?;
    let theta = trace.final_params();
    println!("learned {:?}", trace.labels.iter().zip(theta.as_vec()).collect::<Vec<_>>());

    let mut pred = predict(&theta, &kernel.resolve(&theta)?, train_n.x(), train_n.y(), test_n.x(), Strategy::Auto)?;
    pred.rescale(norm.y_mean, norm.y_sd);
    let gp = rmse(&pred.mean, test.y())?;
    let baseline = rmse(&DVector::from_element(test.len(), train.y().mean()), test.y())?;
    println!("GP rmse {gp:.4}  baseline rmse {baseline:.4}  ratio {:.2}", baseline / gp);
    Ok(())
}
