//! Loss, gradients and the minibatch optimisation loops.

mod adam;
mod objective;
mod sgd;
mod trace;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::SamplingScheme;

pub use adam::{adam_fit, AdamSettings};
pub(crate) use objective::BatchSystem;
pub use objective::{full_gradient, nll_loss, stochastic_gradient, ScalingPolicy, SlotScaling};
pub use sgd::sgd_fit;
pub use trace::{FitTrace, TraceRecord};

/// Box constraint applied to every parameter after each step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Self { min: 1e-4, max: 1e4 }
    }
}

impl Bounds {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        let b = Self { min, max };
        b.validate()?;
        Ok(b)
    }

    fn validate(&self) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(Error::InvalidArgument(format!(
                "clamp bounds need min < max, got [{}, {}]",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

/// Settings shared by [`sgd_fit`] and [`adam_fit`].
///
/// For SGD `step_size` is `α₁` and the step at iteration `k` is `α₁/k`; for
/// Adam it is the constant learning rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub step_size: f64,
    pub scheme: SamplingScheme,
    pub scaling: ScalingPolicy,
    pub clamp: Option<Bounds>,
    /// Rescale the stochastic gradient to this Euclidean norm when it is longer.
    pub clip: Option<f64>,
    pub seed: u64,
    /// Record `‖∇ℓ‖²` on the full data every this many iterations and at the end.
    pub grad_norm_every: Option<usize>,
    /// Store wall-clock time in the trace. Off by default so traces are reproducible.
    pub record_time: bool,
}

impl SgdConfig {
    pub fn new(batch_size: usize, iterations: usize, step_size: f64) -> Self {
        Self {
            batch_size,
            iterations,
            step_size,
            scheme: SamplingScheme::Uniform,
            scaling: ScalingPolicy::linear(),
            clamp: None,
            clip: None,
            seed: 0,
            grad_norm_every: None,
            record_time: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if let Some(b) = &self.clamp {
            b.validate()?;
        }
        if let Some(g) = self.clip {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::InvalidArgument(format!("clip threshold must be positive, got {g}")));
            }
        }
        if self.grad_norm_every == Some(0) {
            return Err(Error::InvalidArgument("grad_norm_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Iterations in one pass over `n` points with batches of `m`: `⌈n/m⌉`.
pub fn iterations_per_epoch(n: usize, m: usize) -> usize {
    n.div_ceil(m.max(1))
}

/// `epochs · ⌈n/m⌉`.
pub fn iterations_for_epochs(n: usize, m: usize, epochs: usize) -> usize {
    epochs * iterations_per_epoch(n, m)
}
