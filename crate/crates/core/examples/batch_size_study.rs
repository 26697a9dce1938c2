//! Several repetitions at three minibatch sizes, aggregated per iteration.
//! Larger batches end with a smaller full-gradient norm.

use gp_sgd::cli::studies::{aggregate, vary_batch_size, Protocol};
use gp_sgd::kernels::HyperParams;

fn main() -> gp_sgd::Result<()> {
    let protocol = Protocol {
        n: 512,
        epochs: 10,
        repetitions: 4,
        seed: 8,
        ..Protocol::default()
    };
    let runs = vary_batch_size(&protocol, &[32, 128, 256], &HyperParams::pair(5.0, 3.0)?, 9.0, true)?;
    for (m, traces) in &runs {
        let rows = aggregate(traces)?;
        let last = rows.last().expect("non-empty");
        let (norm, sd) = last.grad_norm_sq.expect("recorded at the final iteration");
        println!(
            "m={m:<4} K={:<4} θ = ({:.3}, {:.3})  ‖∇ℓ‖² = {norm:.2e} ± {sd:.1e}",
            last.iter, last.mean[0], last.mean[1]
        );
    }
    Ok(())
}
