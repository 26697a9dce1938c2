//! Draw a GP dataset, write it to CSV and read it back.
//!
//! ```bash
//! cargo run --example simulate_data
//! ```

use gp_sgd::data::{load_csv, save_csv, simulate_function, simulate_gp, InputDistribution, TestFunction};
use gp_sgd::kernels::{HyperParams, KernelSpec, MultiKernel};

fn main() -> gp_sgd::Result<()> {
    let kernel = MultiKernel::single(KernelSpec::rbf(vec![0.5])?);
    let theta = HyperParams::pair(4.0, 1.0)?;
    let data = simulate_gp(&kernel, &theta, 1024, InputDistribution::Gaussian { sd: 5.0 }, 1, 42)?;

    let mean = data.y().mean();
    let var = data.y().variance();
    println!("n = {}, sample mean {mean:.3}, sample variance {var:.3} (model: 0, 5)", data.len());

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("gp.csv");
    save_csv(&data, &path)?;
    let back = load_csv(&path)?;
    assert_eq!(back.x(), data.x());
    assert_eq!(back.y(), data.y());
    println!("round trip through {} is exact", path.display());

    let levy = simulate_function(TestFunction::Levy, 500, 2, 0.1, 7)?;
    let (lo, hi) = TestFunction::Levy.domain();
    println!("Levy sample: {} points in [{lo}, {hi}]^2, y in [{:.2}, {:.2}]", levy.len(), levy.y().min(), levy.y().max());
    Ok(())
}
