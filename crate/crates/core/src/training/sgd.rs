use std::time::Instant;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{HyperParams, MultiKernel};
use crate::sampling::BatchSampler;

use super::objective::{batch_gradient, full_gradient};
use super::trace::{FitTrace, TraceRecord};
use super::SgdConfig;

/// Minibatch SGD with step `α_k = α₁/k`.
///
/// The batch for iteration `k` depends only on `(config.seed, k)`, so a rerun
/// reproduces the trace bit for bit.
pub fn sgd_fit(
    dataset: &Dataset,
    kernels: &MultiKernel,
    config: &SgdConfig,
    theta0: &HyperParams,
) -> Result<FitTrace> {
    drive(dataset, kernels, config, theta0, true, |k, _g| config.step_size / k as f64, |_, theta, g, alpha| {
        for (t, gi) in theta.iter_mut().zip(g) {
            *t -= alpha * gi;
        }
    })
}

/// The shared loop: sample, differentiate, optionally clip, update, clamp, record.
///
/// `step(k, g)` returns the step size recorded for iteration `k`; `update`
/// applies it to the flat parameter vector.
pub(super) fn drive(
    dataset: &Dataset,
    kernels: &MultiKernel,
    config: &SgdConfig,
    theta0: &HyperParams,
    lengthscales: bool,
    step: impl Fn(usize, &[f64]) -> f64,
    mut update: impl FnMut(usize, &mut [f64], &[f64], f64),
) -> Result<FitTrace> {
    config.validate()?;
    kernels.check_params(theta0)?;
    let x = dataset.x();
    let y = dataset.y();
    let sampler = BatchSampler::new(x, config.batch_size, config.scheme, config.seed)?;
    // Surface bad scaling choices (e.g. log scaling with m < 3) before iterating.
    config.scaling.divisors(theta0, config.batch_size)?;

    let start = Instant::now();
    let elapsed = |record: bool| if record { start.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
    let k_max = config.iterations;
    let wants_norm = |k: usize| {
        config
            .grad_norm_every
            .is_some_and(|every| k.is_multiple_of(every) || k == k_max)
    };

    let mut trace = FitTrace::new(theta0);
    let mut theta = theta0.as_vec();
    let norm_at = |params: &HyperParams| -> Result<f64> {
        Ok(full_gradient(params, kernels, x, y)?.iter().map(|g| g * g).sum())
    };
    trace.records.push(TraceRecord {
        iter: 0,
        alpha: 0.0,
        theta: theta.clone(),
        gradient: None,
        grad_norm_sq: if wants_norm(0) { Some(norm_at(theta0)?) } else { None },
        elapsed_ms: elapsed(config.record_time),
    });

    let abort = |k: usize, source: Error, trace: &FitTrace| Error::FitAborted {
        iteration: k,
        source: Box::new(source),
        trace: Box::new(trace.clone()),
    };

    for k in 1..=k_max {
        let params = theta0.from_flat(&theta).expect("iterates stay in the domain");
        let batch = sampler.draw(k as u64);
        let mut g = batch_gradient(&params, kernels, &batch, x, y, &config.scaling, lengthscales)
            .map_err(|e| abort(k, e, &trace))?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(abort(k, Error::NonFinite("stochastic gradient"), &trace));
        }
        if let Some(limit) = config.clip {
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > limit {
                g.iter_mut().for_each(|v| *v *= limit / norm);
                trace.clip_events += 1;
            }
        }
        let alpha = step(k, &g);
        update(k, &mut theta, &g, alpha);
        if let Some(b) = config.clamp {
            for t in theta.iter_mut() {
                let c = t.clamp(b.min, b.max);
                if c != *t {
                    *t = c;
                    trace.clamp_events += 1;
                }
            }
        }
        if let Some(slot) = theta.iter().position(|t| !(t.is_finite() && *t > 0.0)) {
            let err = Error::ParameterOutOfDomain {
                iteration: k,
                slot,
                value: theta[slot],
            };
            return Err(abort(k, err, &trace));
        }
        let grad_norm_sq = if wants_norm(k) {
            let p = theta0.from_flat(&theta).expect("checked above");
            Some(norm_at(&p).map_err(|e| abort(k, e, &trace))?)
        } else {
            None
        };
        trace.records.push(TraceRecord {
            iter: k,
            alpha,
            theta: theta.clone(),
            gradient: Some(g),
            grad_norm_sq,
            elapsed_ms: elapsed(config.record_time),
        });
    }
    Ok(trace)
}
