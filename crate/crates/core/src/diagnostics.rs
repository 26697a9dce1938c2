//! Analysis quantities: conditional expected gradients, noise-variance
//! curvature, Gaussian-kernel eigenvalues and empirical eigendecay fits.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand_distr::StandardNormal;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{draw_inputs, format_float, InputDistribution};
use crate::error::{Error, Result};
use crate::kernels::{kernel_matrix, marginal_covariance, HyperParams, MultiKernel, ParamIndex};
use crate::linalg::{cholesky, sym_eigenvalues, EigenSpectrum};
use crate::sampling::{BatchSampler, SamplingScheme};
use crate::seed::{derive_seed, stream_rng};
use crate::training::{BatchSystem, ScalingPolicy};

/// `E[g(θ) | X_ξ]` when `y_ξ ~ N(0, K_ξ(θ*))`:
/// `g*_l = (1/2s_l) tr[K⁻¹(I − K* K⁻¹) ∂K/∂θ_l]`.
///
/// A single kernel without lengthscale slots goes through the eigenvalues of
/// `K_f`; anything else uses the trace form directly.
pub fn conditional_expected_gradient(
    theta: &HyperParams,
    theta_true: &HyperParams,
    kernels: &MultiKernel,
    batch_x: &DMatrix<f64>,
    scaling: &ScalingPolicy,
) -> Result<Vec<f64>> {
    if theta.num_signals() != theta_true.num_signals() {
        return Err(Error::DimensionMismatch {
            what: "signal variances in θ vs θ*",
            expected: theta.num_signals(),
            got: theta_true.num_signals(),
        });
    }
    let plain = theta.num_signals() == 1 && theta.lengthscales().is_none();
    if plain && kernels.resolve(theta)? == kernels.resolve(theta_true)? {
        let kf = kernel_matrix(&kernels.resolve(theta)?.components()[0], batch_x)?;
        let eigs = sym_eigenvalues(&kf)?;
        let m = batch_x.nrows();
        let g = conditional_expected_gradient_eigen(
            [theta.signal_variances()[0], theta.noise_variance()],
            [theta_true.signal_variances()[0], theta_true.noise_variance()],
            eigs.values(),
            [scaling.divisor(ParamIndex::Signal(0), m)?, scaling.divisor(ParamIndex::Noise, m)?],
        );
        return Ok(g.to_vec());
    }
    conditional_expected_gradient_trace(theta, theta_true, kernels, batch_x, scaling)
}

/// The trace form, valid for any number of (possibly non-commuting) kernels.
pub fn conditional_expected_gradient_trace(
    theta: &HyperParams,
    theta_true: &HyperParams,
    kernels: &MultiKernel,
    batch_x: &DMatrix<f64>,
    scaling: &ScalingPolicy,
) -> Result<Vec<f64>> {
    let sys = BatchSystem::new(kernels, theta, batch_x)?;
    let m = sys.dim();
    let divisors = scaling.divisors(theta, m)?;
    // I − K* K⁻¹ = −Δ K⁻¹ with Δ = K* − K, which vanishes identically at θ = θ*.
    let delta = marginal_covariance(kernels, theta_true, batch_x)?
        - marginal_covariance(kernels, theta, batch_x)?;
    let linv = sys.factor.inverse_lower();
    let w = &linv * delta * linv.transpose();
    (0..theta.len())
        .map(|i| {
            let param = theta.param_index(i).expect("slot in range");
            let d = match sys.derivative(param) {
                None => &linv * linv.transpose(),
                Some(a) => &linv * a * linv.transpose(),
            };
            Ok(-w.dot(&d) / (2.0 * divisors[i]))
        })
        .collect()
}

/// Commuting case with one kernel:
/// `g*_l = (1/2s_l) Σ_j [(θ₁−θ₁*)λ_j + (θ₂−θ₂*)] μ_lj / (θ₁λ_j + θ₂)²`
/// where `μ_1j = λ_j` and `μ_2j = 1`.
pub fn conditional_expected_gradient_eigen(
    theta: [f64; 2],
    theta_true: [f64; 2],
    eigenvalues: &[f64],
    divisors: [f64; 2],
) -> [f64; 2] {
    let d1 = theta[0] - theta_true[0];
    let d2 = theta[1] - theta_true[1];
    let (mut s1, mut s2) = (0.0, 0.0);
    for &lam in eigenvalues {
        let denom = theta[0] * lam + theta[1];
        let c = (d1 * lam + d2) / (denom * denom);
        s1 += c * lam;
        s2 += c;
    }
    [s1 / (2.0 * divisors[0]), s2 / (2.0 * divisors[1])]
}

/// `γ(θ) = (1/2m) Σ_j (θ₁λ_j + θ₂)⁻²` over the eigenvalues of `K_{f,ξ}`.
pub fn curvature(theta1: f64, theta2: f64, eigenvalues: &[f64]) -> f64 {
    let m = eigenvalues.len() as f64;
    eigenvalues
        .iter()
        .map(|&lam| (theta1 * lam + theta2).powi(-2))
        .sum::<f64>()
        / (2.0 * m)
}

/// `(1/2m) tr[K_ξ(θ)⁻²]`, the same quantity without an eigendecomposition.
pub fn curvature_from_kernel(
    theta: &HyperParams,
    kernels: &MultiKernel,
    batch_x: &DMatrix<f64>,
) -> Result<f64> {
    let sys = BatchSystem::new(kernels, theta, batch_x)?;
    let linv = sys.factor.inverse_lower();
    let kinv = linv.transpose() * &linv;
    Ok(kinv.norm_squared() / (2.0 * sys.dim() as f64))
}

/// `γ̃(θ) = (1/m) Σ_j (θ₁ m λ*_j + θ₂)⁻²` with population eigenvalues `λ*`.
pub fn curvature_surrogate(theta1: f64, theta2: f64, population: &[f64], m: usize) -> f64 {
    let mf = m as f64;
    population
        .iter()
        .map(|&lam| (theta1 * mf * lam + theta2).powi(-2))
        .sum::<f64>()
        / mf
}

/// `β = 2σ² / (2σ² + l² + l√(l² + 4σ²))` for the Gaussian kernel under `N(0, σ²)` inputs.
pub fn gaussian_beta(sigma: f64, lengthscale: f64) -> f64 {
    let s2 = sigma * sigma;
    let l = lengthscale;
    2.0 * s2 / (2.0 * s2 + l * l + l * (l * l + 4.0 * s2).sqrt())
}

/// The first `count` population eigenvalues `λ*_j = (1−β)β^{j−1}`.
pub fn analytic_gaussian_eigenvalues(sigma: f64, lengthscale: f64, count: usize) -> Vec<f64> {
    let beta = gaussian_beta(sigma, lengthscale);
    let mut out = Vec::with_capacity(count);
    let mut p = 1.0 - beta;
    for _ in 0..count {
        out.push(p);
        p *= beta;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayFamily {
    /// `λ_j/n ≈ C e^{−bj}`, `j = 0, 1, …`.
    Exponential,
    /// `λ_j/n ≈ C j^{−2b}`, `j = 1, 2, …`.
    Polynomial,
}

impl DecayFamily {
    pub fn name(self) -> &'static str {
        match self {
            Self::Exponential => "exponential",
            Self::Polynomial => "polynomial",
        }
    }
}

/// Least-squares fit of `log(λ_j/n)` against `j` or `log j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigendecayFit {
    pub family: DecayFamily,
    /// `b`; for the polynomial family the fitted slope is `2b`.
    pub rate: f64,
    pub scale: f64,
    /// Eigenvalue positions used, 1-based and inclusive.
    pub first_index: usize,
    pub last_index: usize,
    /// Root mean square of the log-scale residuals.
    pub residual: f64,
}

/// Eigenvalues below this fraction of the largest are treated as solver noise.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Fits the decay law to `λ_j/n`, using at most `max_count` leading eigenvalues.
pub fn eigendecay_fit(
    spectrum: &EigenSpectrum,
    n: usize,
    family: DecayFamily,
    max_count: Option<usize>,
) -> Result<EigendecayFit> {
    let values = spectrum.values();
    let top = values.first().copied().unwrap_or(0.0);
    let floor = EIGEN_FLOOR * top;
    let limit = max_count.unwrap_or(values.len()).min(values.len());
    let usable = values[..limit]
        .iter()
        .take_while(|&&v| v > floor && v > 0.0)
        .count();
    if usable < 3 {
        return Err(Error::TooFewEigenvalues(usable));
    }
    let pts: Vec<(f64, f64)> = values[..usable]
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let t = match family {
                DecayFamily::Exponential => i as f64,
                DecayFamily::Polynomial => ((i + 1) as f64).ln(),
            };
            (t, (v / n as f64).ln())
        })
        .collect();
    let k = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|(t, y)| (t - tm) * (y - ym)).sum();
    let sxx: f64 = pts.iter().map(|(t, _)| (t - tm) * (t - tm)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * tm;
    let residual = (pts
        .iter()
        .map(|(t, y)| (y - intercept - slope * t).powi(2))
        .sum::<f64>()
        / k)
        .sqrt();
    let rate = match family {
        DecayFamily::Exponential => -slope,
        DecayFamily::Polynomial => -slope / 2.0,
    };
    Ok(EigendecayFit {
        family,
        rate,
        scale: intercept.exp(),
        first_index: 1,
        last_index: usable,
        residual,
    })
}

pub fn write_eigendecay_csv<W: Write>(fits: &[EigendecayFit], mut w: W) -> Result<()> {
    writeln!(w, "family,rate,scale,first_index,last_index,residual")?;
    for f in fits {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            f.family.name(),
            format_float(f.rate),
            format_float(f.scale),
            f.first_index,
            f.last_index,
            format_float(f.residual)
        )?;
    }
    Ok(())
}

/// `(Σ_j λ_j/(θ₁λ_j+θ₂)², Σ_j 1/(θ₁λ_j+θ₂)²)`.
pub fn eigen_ratio_sums(theta1: f64, theta2: f64, eigenvalues: &[f64]) -> (f64, f64) {
    eigenvalues.iter().fold((0.0, 0.0), |(a, b), &lam| {
        let w = (theta1 * lam + theta2).powi(-2);
        (a + lam * w, b + w)
    })
}

/// γ over replicate minibatches for one `(m, scheme)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureReport {
    pub batch_size: usize,
    pub scheme: SamplingScheme,
    pub theta: [f64; 2],
    pub values: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigenvalues: Option<Vec<Vec<f64>>>,
}

impl CurvatureReport {
    fn from_values(
        batch_size: usize,
        scheme: SamplingScheme,
        theta: [f64; 2],
        values: Vec<f64>,
        eigenvalues: Option<Vec<Vec<f64>>>,
    ) -> Self {
        let k = values.len() as f64;
        let mean = values.iter().sum::<f64>() / k;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            batch_size,
            scheme,
            theta,
            values,
            mean,
            sd,
            eigenvalues,
        }
    }

    pub fn replicates(&self) -> usize {
        self.values.len()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn write_curvature_csv<W: Write>(reports: &[CurvatureReport], mut w: W) -> Result<()> {
    writeln!(w, "m,scheme,replicates,mean,sd,min,max")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.batch_size,
            r.scheme,
            r.replicates(),
            format_float(r.mean),
            format_float(r.sd),
            format_float(r.min()),
            format_float(r.max())
        )?;
    }
    Ok(())
}

/// Settings for the curvature comparison between sampling schemes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureStudy {
    pub pool_size: usize,
    pub batch_sizes: Vec<usize>,
    pub replicates: usize,
    pub theta: [f64; 2],
    pub kernel: MultiKernel,
    pub inputs: InputDistribution,
    pub dim: usize,
    pub seed: u64,
    pub keep_eigenvalues: bool,
}

/// For every `m` and both schemes: γ of replicate batches from one fixed pool.
///
/// Batches are drawn from per-cell seeds and their kernel matrices are built on
/// sorted indices, so `m = n` gives the same γ under both schemes.
pub fn curvature_experiment(study: &CurvatureStudy) -> Result<Vec<CurvatureReport>> {
    if study.kernel.len() != 1 {
        return Err(Error::InvalidArgument("the curvature study needs a single kernel".into()));
    }
    if study.replicates == 0 {
        return Err(Error::InvalidArgument("at least one replicate is required".into()));
    }
    let spec = &study.kernel.components()[0];
    let pool = draw_inputs(study.inputs, study.pool_size, study.dim, derive_seed(study.seed, "pool", 0))?;
    let [t1, t2] = study.theta;
    let mut reports = Vec::new();
    for &m in &study.batch_sizes {
        for scheme in [SamplingScheme::Uniform, SamplingScheme::Nearby] {
            let cell = derive_seed(study.seed, scheme.name(), m as u64);
            let sampler = BatchSampler::new(&pool, m, scheme, cell)?;
            let per_rep: Vec<Vec<f64>> = (0..study.replicates)
                .into_par_iter()
                .map(|r| {
                    let batch = sampler.draw(r as u64);
                    let xb = pool.select_rows(&batch.sorted_indices());
                    Ok(sym_eigenvalues(&kernel_matrix(spec, &xb)?)?.values().to_vec())
                })
                .collect::<Result<_>>()?;
            let values = per_rep.iter().map(|e| curvature(t1, t2, e)).collect();
            let eigs = study.keep_eigenvalues.then_some(per_rep);
            reports.push(CurvatureReport::from_values(m, scheme, study.theta, values, eigs));
        }
    }
    Ok(reports)
}

/// Sample mean and its standard error, per slot.
#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub draws: usize,
}

/// Averages the minibatch gradient at fixed `batch_x` over `draws` response
/// vectors `y_ξ ~ N(0, K_ξ(θ*))`, drawn through the Cholesky factor of `K_ξ(θ*)`.
pub fn monte_carlo_gradient(
    theta: &HyperParams,
    theta_true: &HyperParams,
    kernels: &MultiKernel,
    batch_x: &DMatrix<f64>,
    scaling: &ScalingPolicy,
    draws: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    if draws < 2 {
        return Err(Error::InvalidArgument("at least two draws are required".into()));
    }
    let sys = BatchSystem::new(kernels, theta, batch_x)?;
    let m = sys.dim();
    let divisors = scaling.divisors(theta, m)?;
    let truth = cholesky(&marginal_covariance(kernels, theta_true, batch_x)?)?;
    let linv = sys.factor.inverse_lower();
    let derivs: Vec<Option<DMatrix<f64>>> = (0..theta.len())
        .map(|i| sys.derivative(theta.param_index(i).expect("slot in range")))
        .collect();
    let traces: Vec<f64> = derivs
        .iter()
        .map(|d| match d {
            None => Ok(linv.norm_squared()),
            Some(a) => Ok(linv.dot(&sys.factor.solve_lower(a)?)),
        })
        .collect::<Result<_>>()?;
    let samples: Vec<Vec<f64>> = (0..draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, "monte-carlo", i as u64);
            let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y = truth.l() * z;
            let alpha = sys.factor.solve_vec(&y)?;
            Ok(derivs
                .iter()
                .zip(&traces)
                .zip(&divisors)
                .map(|((d, tr), s)| {
                    let quad = match d {
                        None => alpha.norm_squared(),
                        Some(a) => alpha.dot(&(a * &alpha)),
                    };
                    (tr - quad) / (2.0 * s)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let k = draws as f64;
    let p = theta.len();
    let mean: Vec<f64> = (0..p).map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / k).collect();
    let std_error = (0..p)
        .map(|j| {
            let var = samples.iter().map(|s| (s[j] - mean[j]).powi(2)).sum::<f64>() / (k - 1.0);
            (var / k).sqrt()
        })
        .collect();
    Ok(MonteCarloEstimate {
        mean,
        std_error,
        draws,
    })
}
