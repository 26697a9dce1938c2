//! Multi-repetition protocols behind the `experiment` subcommand.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{format_float, simulate_gp, Dataset, InputDistribution};
use crate::diagnostics::{analytic_gaussian_eigenvalues, curvature_surrogate};
use crate::error::{Error, Result};
use crate::kernels::{HyperParams, KernelSpec, MultiKernel};
use crate::sampling::SamplingScheme;
use crate::seed::derive_seed;
use crate::training::{
    iterations_for_epochs, iterations_per_epoch, sgd_fit, Bounds, FitTrace, ScalingPolicy,
    SgdConfig,
};

/// Simulated-pool SGD protocol shared by the convergence studies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub n: usize,
    pub dim: usize,
    pub inputs: InputDistribution,
    pub kernel: MultiKernel,
    pub theta_true: HyperParams,
    pub batch_size: usize,
    pub epochs: usize,
    pub scaling: ScalingPolicy,
    pub scheme: SamplingScheme,
    pub clamp: Option<Bounds>,
    pub clip: Option<f64>,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for Protocol {
    /// `n = 1024`, `x ~ N(0, 5²)`, RBF `l = 0.5`, `θ* = (4, 1)`, `m = 128`,
    /// 25 epochs, `s₁ = 3 log m`, `s₂ = m`, uniform sampling, 10 repetitions.
    fn default() -> Self {
        Self {
            n: 1024,
            dim: 1,
            inputs: InputDistribution::Gaussian { sd: 5.0 },
            kernel: MultiKernel::single(KernelSpec::rbf(vec![0.5]).expect("valid lengthscale")),
            theta_true: HyperParams::pair(4.0, 1.0).expect("positive"),
            batch_size: 128,
            epochs: 25,
            scaling: ScalingPolicy::log_signal(3.0),
            scheme: SamplingScheme::Uniform,
            clamp: Some(Bounds::default()),
            clip: None,
            repetitions: 10,
            seed: 0,
        }
    }
}

impl Protocol {
    pub fn iterations(&self) -> usize {
        iterations_for_epochs(self.n, self.batch_size, self.epochs)
    }

    /// The data pool of repetition `rep`; independent across repetitions and
    /// shared by every run of the same repetition.
    pub fn dataset(&self, rep: usize) -> Result<Dataset> {
        simulate_gp(
            &self.kernel,
            &self.theta_true,
            self.n,
            self.inputs,
            self.dim,
            derive_seed(self.seed, "data", rep as u64),
        )
    }

    pub fn sgd_config(&self, step_size: f64, rep: usize) -> SgdConfig {
        SgdConfig {
            batch_size: self.batch_size,
            iterations: self.iterations(),
            step_size,
            scheme: self.scheme,
            scaling: self.scaling,
            clamp: self.clamp,
            clip: self.clip,
            seed: derive_seed(self.seed, "batches", rep as u64),
            grad_norm_every: None,
            record_time: false,
        }
    }

    /// One SGD run per repetition, in repetition order.
    pub fn run(
        &self,
        theta0: &HyperParams,
        step_size: f64,
        grad_norm_every: Option<usize>,
    ) -> Result<Vec<FitTrace>> {
        if self.repetitions == 0 {
            return Err(Error::InvalidArgument("at least one repetition is required".into()));
        }
        (0..self.repetitions)
            .into_par_iter()
            .map(|rep| {
                let data = self.dataset(rep)?;
                let mut cfg = self.sgd_config(step_size, rep);
                cfg.grad_norm_every = grad_norm_every;
                sgd_fit(&data, &self.kernel, &cfg, theta0)
            })
            .collect()
    }
}

/// Starting points and initial step sizes for the three parameter-convergence runs.
pub fn default_initializations() -> Vec<(HyperParams, f64)> {
    [((5.0, 5.0), 9.0), ((2.0, 5.0), 9.0), ((8.0, 4.5), 6.0)]
        .into_iter()
        .map(|((a, b), step)| (HyperParams::pair(a, b).expect("positive"), step))
        .collect()
}

/// Mean and sample sd across repetitions at one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub iter: usize,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub grad_norm_sq: Option<(f64, f64)>,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Per-iteration mean and sd over traces of equal length.
pub fn aggregate(traces: &[FitTrace]) -> Result<Vec<AggregateRow>> {
    let first = traces
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to aggregate".into()))?;
    if let Some(t) = traces.iter().find(|t| t.len() != first.len()) {
        return Err(Error::DimensionMismatch {
            what: "trace length",
            expected: first.len(),
            got: t.len(),
        });
    }
    let slots = first.labels.len();
    Ok((0..first.len())
        .map(|i| {
            let stats: Vec<(f64, f64)> = (0..slots)
                .map(|s| mean_sd(&traces.iter().map(|t| t.records[i].theta[s]).collect::<Vec<_>>()))
                .collect();
            let norms: Option<Vec<f64>> = traces.iter().map(|t| t.records[i].grad_norm_sq).collect();
            AggregateRow {
                iter: first.records[i].iter,
                mean: stats.iter().map(|s| s.0).collect(),
                sd: stats.iter().map(|s| s.1).collect(),
                grad_norm_sq: norms.map(|v| mean_sd(&v)),
            }
        })
        .collect())
}

/// Rows tagged with a `group` column; rows without gradient norms are skipped
/// when `norms_only` is set.
pub fn write_aggregate_csv<W: Write>(
    groups: &[(String, Vec<AggregateRow>)],
    labels: &[String],
    norms_only: bool,
    mut w: W,
) -> Result<()> {
    let with_norms = groups
        .iter()
        .any(|(_, rows)| rows.iter().any(|r| r.grad_norm_sq.is_some()));
    let mut header = vec!["group".to_string(), "iter".to_string()];
    for l in labels {
        header.push(format!("{l}_mean"));
        header.push(format!("{l}_sd"));
    }
    if with_norms {
        header.push("grad_norm_sq_mean".into());
        header.push("grad_norm_sq_sd".into());
    }
    writeln!(w, "{}", header.join(","))?;
    for (group, rows) in groups {
        for r in rows {
            if norms_only && r.grad_norm_sq.is_none() {
                continue;
            }
            let mut row = vec![group.clone(), r.iter.to_string()];
            for (m, s) in r.mean.iter().zip(&r.sd) {
                row.push(format_float(*m));
                row.push(format_float(*s));
            }
            if with_norms {
                match r.grad_norm_sq {
                    Some((m, s)) => {
                        row.push(format_float(m));
                        row.push(format_float(s));
                    }
                    None => row.extend([String::new(), String::new()]),
                }
            }
            writeln!(w, "{}", row.join(","))?;
        }
    }
    Ok(())
}

/// Runs the protocol at each batch size from a shared start, recording the
/// full-gradient norm once per epoch when `record_norms` is set.
pub fn vary_batch_size(
    protocol: &Protocol,
    batch_sizes: &[usize],
    theta0: &HyperParams,
    step_size: f64,
    record_norms: bool,
) -> Result<Vec<(usize, Vec<FitTrace>)>> {
    batch_sizes
        .iter()
        .map(|&m| {
            let p = Protocol {
                batch_size: m,
                ..protocol.clone()
            };
            let every = record_norms.then(|| iterations_per_epoch(p.n, m));
            Ok((m, p.run(theta0, step_size, every)?))
        })
        .collect()
}

/// `γ̃` at each lengthscale with analytic Gaussian-kernel eigenvalues.
pub fn surrogate_curve(
    sigma: f64,
    lengthscales: &[f64],
    m: usize,
    theta: [f64; 2],
) -> Vec<(f64, f64)> {
    lengthscales
        .iter()
        .map(|&l| {
            let eigs = analytic_gaussian_eigenvalues(sigma, l, m);
            (l, curvature_surrogate(theta[0], theta[1], &eigs, m))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Protocol {
        Protocol {
            n: 96,
            batch_size: 16,
            epochs: 2,
            repetitions: 3,
            seed: 5,
            ..Protocol::default()
        }
    }

    #[test]
    fn repetitions_are_reproducible_and_distinct() {
        let p = tiny();
        let theta0 = HyperParams::pair(5.0, 3.0).unwrap();
        let a = p.run(&theta0, 9.0, None).unwrap();
        assert_eq!(a, p.run(&theta0, 9.0, None).unwrap());
        assert_eq!(a.len(), 3);
        assert_eq!(a[0].len(), 1 + 2 * 6);
        assert_ne!(a[0].records.last(), a[1].records.last());
        assert_ne!(p.dataset(0).unwrap().y(), p.dataset(1).unwrap().y());
    }

    #[test]
    fn aggregation() {
        let p = tiny();
        let traces = p.run(&HyperParams::pair(5.0, 3.0).unwrap(), 9.0, Some(6)).unwrap();
        let rows = aggregate(&traces).unwrap();
        assert_eq!(rows.len(), 13);
        assert_eq!(rows[0].mean, vec![5.0, 3.0]);
        assert_eq!(rows[0].sd, vec![0.0, 0.0]);
        let last = rows.last().unwrap();
        let (m, _) = mean_sd(&traces.iter().map(|t| t.records[12].theta[1]).collect::<Vec<_>>());
        assert_eq!(last.mean[1], m);
        assert!(rows[6].grad_norm_sq.is_some() && rows[5].grad_norm_sq.is_none());
        let mut out = Vec::new();
        write_aggregate_csv(&[("a".into(), rows)], &traces[0].labels, true, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 1 + 3);
        assert!(text.starts_with("group,iter,theta_1_mean,theta_1_sd,theta_2_mean,theta_2_sd,grad_norm_sq_mean,grad_norm_sq_sd\n"));
    }

    #[test]
    fn surrogate_curve_is_monotone() {
        let curve = surrogate_curve(10.0, &[0.5, 0.75, 1.0, 1.5, 2.0], 2048, [4.0, 1.0]);
        assert!(curve.windows(2).all(|w| w[1].1 >= w[0].1));
    }
}
