//! The scaled negative log marginal likelihood and its full and minibatch gradients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{
    component_matrices, lengthscale_grad_matrix, marginal_from_components, point_columns,
    HyperParams, MultiKernel, ParamIndex,
};
use crate::linalg::{cholesky, CholeskyFactor};
use crate::sampling::Minibatch;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Gradient divisor `s_l(m)` for one group of slots.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SlotScaling {
    /// `s(m) = m`.
    Linear,
    /// `s(m) = τ log m`; needs `m ≥ 3`.
    LogScaled { tau: f64 },
}

impl SlotScaling {
    pub fn divisor(self, m: usize) -> Result<f64> {
        match self {
            Self::Linear => Ok(m as f64),
            Self::LogScaled { tau } => {
                if !(tau > 0.0 && tau.is_finite()) {
                    return Err(Error::InvalidArgument(format!("log scaling needs τ > 0, got {tau}")));
                }
                if m < 3 {
                    return Err(Error::InvalidArgument(format!(
                        "log scaling needs a minibatch of at least 3, got {m}"
                    )));
                }
                Ok(tau * (m as f64).ln())
            }
        }
    }
}

/// Per-slot gradient scaling. The noise slot is always linear.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPolicy {
    pub signal: SlotScaling,
    pub lengthscale: SlotScaling,
}

impl Default for ScalingPolicy {
    fn default() -> Self {
        Self::linear()
    }
}

impl ScalingPolicy {
    pub fn linear() -> Self {
        Self {
            signal: SlotScaling::Linear,
            lengthscale: SlotScaling::Linear,
        }
    }

    /// `s_l(m) = τ log m` for signal variances, `m` for everything else.
    pub fn log_signal(tau: f64) -> Self {
        Self {
            signal: SlotScaling::LogScaled { tau },
            lengthscale: SlotScaling::Linear,
        }
    }

    pub fn divisor(&self, param: ParamIndex, m: usize) -> Result<f64> {
        match param {
            ParamIndex::Signal(_) => self.signal.divisor(m),
            ParamIndex::Noise => Ok(m as f64),
            ParamIndex::Lengthscale { .. } => self.lengthscale.divisor(m),
        }
    }

    pub(crate) fn divisors(&self, theta: &HyperParams, m: usize) -> Result<Vec<f64>> {
        (0..theta.len())
            .map(|i| self.divisor(theta.param_index(i).expect("slot in range"), m))
            .collect()
    }
}

/// Factorized `K_ξ(θ)` for a set of points plus what is needed to form `∂K_ξ/∂θ_p`.
pub(crate) struct BatchSystem {
    kernels: MultiKernel,
    theta: HyperParams,
    pts: DMatrix<f64>,
    components: Vec<DMatrix<f64>>,
    pub(crate) factor: CholeskyFactor,
}

impl BatchSystem {
    pub(crate) fn new(kernels: &MultiKernel, theta: &HyperParams, x: &DMatrix<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::InvalidArgument("empty input set".into()));
        }
        let kernels = kernels.resolve(theta)?;
        if let Some(d) = kernels.components().iter().find_map(|c| c.input_dim()) {
            if d != x.ncols() {
                return Err(Error::DimensionMismatch {
                    what: "input dimension vs rbf lengthscales",
                    expected: d,
                    got: x.ncols(),
                });
            }
        }
        let components = component_matrices(&kernels, x);
        let k = marginal_from_components(&components, theta);
        let factor = cholesky(&k)?;
        Ok(Self {
            kernels,
            theta: theta.clone(),
            pts: point_columns(x),
            components,
            factor,
        })
    }

    pub(crate) fn dim(&self) -> usize {
        self.factor.dim()
    }

    /// `∂K/∂θ_p`; `None` stands for the identity (noise slot).
    pub(crate) fn derivative(&self, param: ParamIndex) -> Option<DMatrix<f64>> {
        match param {
            ParamIndex::Signal(l) => Some(self.components[l].clone()),
            ParamIndex::Noise => None,
            ParamIndex::Lengthscale { component, slot } => Some(lengthscale_grad_matrix(
                &self.kernels.components()[component],
                self.theta.signal_variances()[component],
                &self.pts,
                slot,
            )),
        }
    }

    /// `tr[K⁻¹ A] − (K⁻¹y)ᵀ A (K⁻¹y)` for every slot with `want(slot)`; zero otherwise.
    ///
    /// The trace is `Σ (L⁻¹ ∘ L⁻¹A)`, one triangular solve against `A` per slot.
    pub(crate) fn raw_gradient(&self, y: &DVector<f64>, want: impl Fn(ParamIndex) -> bool) -> Result<Vec<f64>> {
        let alpha = self.factor.solve_vec(y)?;
        let kinv = self.factor.inverse();
        let mut out = vec![0.0; self.theta.len()];
        for (i, slot) in out.iter_mut().enumerate() {
            let param = self.theta.param_index(i).expect("slot in range");
            if !want(param) {
                continue;
            }
            // tr[K⁻¹A] = ⟨K⁻¹, A⟩ for symmetric A.
            *slot = match self.derivative(param) {
                None => kinv.trace() - alpha.norm_squared(),
                Some(a) => kinv.dot(&a) - alpha.dot(&(&a * &alpha)),
            };
        }
        Ok(out)
    }
}

fn check_xy(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            what: "responses vs input rows",
            expected: x.nrows(),
            got: y.len(),
        });
    }
    Ok(())
}

/// `ℓ(θ) = (1/2n)[yᵀK⁻¹y + log|K| + n log 2π]`.
pub fn nll_loss(
    theta: &HyperParams,
    kernels: &MultiKernel,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<f64> {
    check_xy(x, y)?;
    let sys = BatchSystem::new(kernels, theta, x)?;
    let alpha = sys.factor.solve_vec(y)?;
    let n = y.len() as f64;
    Ok((y.dot(&alpha) + sys.factor.log_det() + n * LN_2PI) / (2.0 * n))
}

/// `∇ℓ(θ)`, one entry per slot of `theta` (lengthscales included when present).
pub fn full_gradient(
    theta: &HyperParams,
    kernels: &MultiKernel,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<Vec<f64>> {
    check_xy(x, y)?;
    let sys = BatchSystem::new(kernels, theta, x)?;
    let n = y.len() as f64;
    Ok(sys
        .raw_gradient(y, |_| true)?
        .into_iter()
        .map(|g| g / (2.0 * n))
        .collect())
}

/// Minibatch gradient on the principal submatrix indexed by `batch`, slot `l`
/// divided by `2 s_l(m)`.
pub fn stochastic_gradient(
    theta: &HyperParams,
    kernels: &MultiKernel,
    batch: &Minibatch,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    scaling: &ScalingPolicy,
) -> Result<Vec<f64>> {
    batch_gradient(theta, kernels, batch, x, y, scaling, true)
}

pub(crate) fn batch_gradient(
    theta: &HyperParams,
    kernels: &MultiKernel,
    batch: &Minibatch,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    scaling: &ScalingPolicy,
    lengthscales: bool,
) -> Result<Vec<f64>> {
    check_xy(x, y)?;
    if let Some(&bad) = batch.indices().iter().find(|&&i| i >= x.nrows()) {
        return Err(Error::InvalidArgument(format!(
            "batch index {bad} out of range for {} rows",
            x.nrows()
        )));
    }
    let m = batch.len();
    let divisors = scaling.divisors(theta, m)?;
    let xb = x.select_rows(batch.indices());
    let yb = y.select_rows(batch.indices());
    let sys = BatchSystem::new(kernels, theta, &xb)?;
    let raw = sys.raw_gradient(&yb, |p| {
        lengthscales || !matches!(p, ParamIndex::Lengthscale { .. })
    })?;
    Ok(raw
        .into_iter()
        .zip(divisors)
        .map(|(g, s)| g / (2.0 * s))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{marginal_covariance, KernelSpec, MaternOrder};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rbf(l: f64) -> MultiKernel {
        MultiKernel::single(KernelSpec::rbf(vec![l]).unwrap())
    }

    fn one_point(y: f64) -> (DMatrix<f64>, DVector<f64>) {
        (DMatrix::from_element(1, 1, 0.0), DVector::from_element(1, y))
    }

    #[test]
    fn scalar_loss_values() {
        let (x, y) = one_point(0.0);
        let l = nll_loss(&HyperParams::pair(0.5, 0.5).unwrap(), &rbf(1.0), &x, &y).unwrap();
        assert_relative_eq!(l, 0.918_938_533_204_672_7, epsilon = 1e-14);
        let e = std::f64::consts::E;
        let l = nll_loss(&HyperParams::pair(e - 1.0, 1.0).unwrap(), &rbf(1.0), &x, &y).unwrap();
        assert_relative_eq!(l, 1.418_938_533_204_672_7, epsilon = 1e-14);
    }

    #[test]
    fn loss_matches_explicit_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(20, 2, |_, _| rng.random_range(-2.0..2.0));
        let y = DVector::from_fn(20, |_, _| rng.random_range(-2.0..2.0));
        let kernels = MultiKernel::single(KernelSpec::rbf(vec![0.7, 1.4]).unwrap());
        let theta = HyperParams::pair(1.3, 0.4).unwrap();
        let k = marginal_covariance(&kernels, &theta, &x).unwrap();
        let inv = k.clone().try_inverse().unwrap();
        let want = ((y.transpose() * &inv * &y)[0] + k.determinant().ln() + 20.0 * LN_2PI) / 40.0;
        assert_relative_eq!(nll_loss(&theta, &kernels, &x, &y).unwrap(), want, max_relative = 1e-12);
    }

    #[test]
    fn scalar_gradient() {
        let (x, y) = one_point(2.0);
        let g = full_gradient(&HyperParams::pair(1.0, 1.0).unwrap(), &rbf(1.0), &x, &y).unwrap();
        assert_relative_eq!(g[0], -0.25, epsilon = 1e-15);
        assert_relative_eq!(g[1], -0.25, epsilon = 1e-15);
        let batch = Minibatch::full(1);
        let s = stochastic_gradient(&HyperParams::pair(1.0, 1.0).unwrap(), &rbf(1.0), &batch, &x, &y, &ScalingPolicy::linear()).unwrap();
        assert_eq!(s, g);
    }

    #[test]
    fn zero_response_gives_positive_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(15, 1, |_, _| rng.random_range(-3.0..3.0));
        let y = DVector::zeros(15);
        let g = full_gradient(&HyperParams::pair(2.0, 0.3).unwrap(), &rbf(0.5), &x, &y).unwrap();
        assert!(g.iter().all(|v| *v > 0.0), "{g:?}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(30, 1, |_, _| rng.random_range(-3.0..3.0));
        let y = DVector::from_fn(30, |_, _| rng.random_range(-2.0..2.0));
        let kernels = MultiKernel::new(vec![
            KernelSpec::rbf(vec![0.6]).unwrap(),
            KernelSpec::matern(MaternOrder::ThreeHalves, 1.1).unwrap(),
        ])
        .unwrap();
        let theta = HyperParams::new(vec![1.5, 0.7], 0.4)
            .unwrap()
            .with_lengthscales(vec![vec![0.6], vec![1.1]])
            .unwrap();
        let g = full_gradient(&theta, &kernels, &x, &y).unwrap();
        let v = theta.as_vec();
        for i in 0..v.len() {
            let h = 1e-5 * v[i].abs().max(1.0);
            let at = |d: f64| {
                let mut w = v.clone();
                w[i] += d;
                nll_loss(&theta.from_flat(&w).unwrap(), &kernels, &x, &y).unwrap()
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            assert!((g[i] - fd).abs() / fd.abs().max(1e-8) < 1e-5, "slot {i}: {} vs {fd}", g[i]);
        }
    }

    #[test]
    fn log_scaling_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = DMatrix::from_fn(128, 1, |_, _| rng.random_range(-5.0..5.0));
        let y = DVector::from_fn(128, |_, _| rng.random_range(-2.0..2.0));
        let theta = HyperParams::pair(4.0, 1.0).unwrap();
        let batch = Minibatch::full(128);
        let lin = stochastic_gradient(&theta, &rbf(0.5), &batch, &x, &y, &ScalingPolicy::linear()).unwrap();
        let log = stochastic_gradient(&theta, &rbf(0.5), &batch, &x, &y, &ScalingPolicy::log_signal(3.0)).unwrap();
        let ratio = 128.0 / (3.0 * 128f64.ln());
        assert_relative_eq!(log[0], lin[0] * ratio, max_relative = 1e-13);
        assert_eq!(log[1], lin[1]);
    }

    #[test]
    fn log_scaling_needs_three_points() {
        let (x, y) = one_point(1.0);
        let r = stochastic_gradient(&HyperParams::pair(1.0, 1.0).unwrap(), &rbf(1.0), &Minibatch::full(1), &x, &y, &ScalingPolicy::log_signal(3.0));
        assert!(r.is_err());
        assert!(SlotScaling::LogScaled { tau: 0.0 }.divisor(10).is_err());
    }

    #[test]
    fn loss_is_scale_covariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = DMatrix::from_fn(25, 1, |_, _| rng.random_range(-3.0..3.0));
        let y = DVector::from_fn(25, |_, _| rng.random_range(-2.0..2.0));
        let theta = HyperParams::pair(1.2, 0.6).unwrap();
        let scaled = HyperParams::pair(4.8, 2.4).unwrap();
        let a = nll_loss(&theta, &rbf(0.5), &x, &y).unwrap();
        let b = nll_loss(&scaled, &rbf(0.5), &x, &(&y * 2.0)).unwrap();
        assert!((b - a - 2f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn batch_errors() {
        let (x, y) = one_point(1.0);
        let theta = HyperParams::pair(1.0, 1.0).unwrap();
        let bad = Minibatch::full(2);
        assert!(stochastic_gradient(&theta, &rbf(1.0), &bad, &x, &y, &ScalingPolicy::linear()).is_err());
        let y2 = DVector::zeros(2);
        assert!(nll_loss(&theta, &rbf(1.0), &x, &y2).is_err());
    }
}
