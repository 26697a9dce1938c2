use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::Result;
use crate::kernels::{HyperParams, MultiKernel};

use super::sgd::drive;
use super::trace::FitTrace;
use super::{Bounds, SgdConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamSettings {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamSettings {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam on the raw parameters with constant learning rate `config.step_size`.
///
/// Parameters are always clamped, to `config.clamp` or the default bounds, so
/// they stay positive. With `learn_lengthscales` the lengthscale slots are
/// added (taken from `kernels` when `theta0` has none) and updated too;
/// otherwise they are left out entirely.
pub fn adam_fit(
    dataset: &Dataset,
    kernels: &MultiKernel,
    config: &SgdConfig,
    settings: &AdamSettings,
    theta0: &HyperParams,
    learn_lengthscales: bool,
) -> Result<FitTrace> {
    let theta0 = match (learn_lengthscales, theta0.lengthscales()) {
        (true, None) => theta0.clone().with_lengthscales(kernels.lengthscales())?,
        _ => theta0.clone(),
    };
    let mut config = config.clone();
    config.clamp.get_or_insert_with(Bounds::default);
    let lr = config.step_size;
    let state = RefCell::new((vec![0.0; theta0.len()], vec![0.0; theta0.len()]));
    let s = *settings;
    drive(dataset, kernels, &config, &theta0, learn_lengthscales, |_, _| lr, |k, theta, g, alpha| {
        let (m, v) = &mut *state.borrow_mut();
        let c1 = 1.0 - s.beta1.powi(k as i32);
        let c2 = 1.0 - s.beta2.powi(k as i32);
        for i in 0..theta.len() {
            m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
            v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
            theta[i] -= alpha * (m[i] / c1) / ((v[i] / c2).sqrt() + s.epsilon);
        }
    })
}
