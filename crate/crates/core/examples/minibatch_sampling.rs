//! Uniform and nearby minibatches over a 2-D point cloud, and the k-d tree behind them.

use gp_sgd::data::{draw_inputs, InputDistribution};
use gp_sgd::sampling::{BatchSampler, SamplingScheme, SpatialIndex};

fn spread(x: &nalgebra::DMatrix<f64>, idx: &[usize]) -> f64 {
    // Mean distance to the batch centroid.
    let rows = x.select_rows(idx);
    let c = rows.row_mean();
    rows.row_iter().map(|r| (r - &c).norm()).sum::<f64>() / idx.len() as f64
}

fn main() -> gp_sgd::Result<()> {
    let x = draw_inputs(InputDistribution::Uniform { low: 0.0, high: 10.0 }, 5000, 2, 3)?;

    let index = SpatialIndex::build(&x)?;
    let probe = [5.0, 5.0];
    for (i, d) in index.query_with_distances(&probe, 5, None)? {
        println!("neighbour {i:>4} at distance {d:.4}");
    }

    for scheme in [SamplingScheme::Uniform, SamplingScheme::Nearby] {
        let sampler = BatchSampler::new(&x, 64, scheme, 11)?;
        let mean_spread: f64 = (1..=20).map(|k| spread(&x, sampler.draw(k).indices())).sum::<f64>() / 20.0;
        let again = sampler.draw(1);
        assert_eq!(again, sampler.draw(1));
        println!("{:>8}: mean spread of 64-point batches {mean_spread:.3}", scheme.name());
    }
    Ok(())
}
