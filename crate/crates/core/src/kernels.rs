//! Covariance functions and the matrices built from them.
//!
//! Every base kernel has unit diagonal, `k(x, x) = 1`. Scale enters only
//! through the signal variances in [`HyperParams`], so the marginal covariance
//! of a sum-of-kernels model is
//!
//! `K_n(θ) = Σ_l θ_l K_l + θ_{M+1} I`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT3: f64 = 1.732_050_807_568_877_2;
const SQRT5: f64 = 2.236_067_977_499_79;

/// Rows handed to the parallel builder below this size are not worth splitting.
const PAR_THRESHOLD: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Rbf,
    Matern,
}

/// Half-integer Matérn smoothness. Other orders need Bessel-K evaluation and are rejected.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaternOrder {
    Half,
    ThreeHalves,
    FiveHalves,
}

impl MaternOrder {
    pub fn from_value(nu: f64) -> Result<Self> {
        if nu == 0.5 {
            Ok(Self::Half)
        } else if nu == 1.5 {
            Ok(Self::ThreeHalves)
        } else if nu == 2.5 {
            Ok(Self::FiveHalves)
        } else {
            Err(Error::InvalidArgument(format!(
                "Matern order {nu} is not supported (use 0.5, 1.5 or 2.5)"
            )))
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Self::Half => 0.5,
            Self::ThreeHalves => 1.5,
            Self::FiveHalves => 2.5,
        }
    }
}

/// A unit-diagonal stationary kernel.
///
/// RBF carries one lengthscale per input dimension (ARD); Matérn carries a
/// single scale `h` and works in any dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKernelSpec", into = "RawKernelSpec")]
pub struct KernelSpec {
    family: KernelFamily,
    lengthscales: Vec<f64>,
    order: Option<MaternOrder>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKernelSpec {
    family: KernelFamily,
    lengthscales: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    matern_order: Option<f64>,
}

impl TryFrom<RawKernelSpec> for KernelSpec {
    type Error = Error;

    fn try_from(raw: RawKernelSpec) -> Result<Self> {
        match raw.family {
            KernelFamily::Rbf => {
                if raw.matern_order.is_some() {
                    return Err(Error::InvalidArgument(
                        "matern_order given for an rbf kernel".into(),
                    ));
                }
                KernelSpec::rbf(raw.lengthscales)
            }
            KernelFamily::Matern => {
                let nu = raw.matern_order.ok_or_else(|| {
                    Error::InvalidArgument("matern kernel needs matern_order".into())
                })?;
                if raw.lengthscales.len() != 1 {
                    return Err(Error::DimensionMismatch {
                        what: "matern lengthscales",
                        expected: 1,
                        got: raw.lengthscales.len(),
                    });
                }
                KernelSpec::matern(MaternOrder::from_value(nu)?, raw.lengthscales[0])
            }
        }
    }
}

impl From<KernelSpec> for RawKernelSpec {
    fn from(spec: KernelSpec) -> Self {
        RawKernelSpec {
            family: spec.family,
            lengthscales: spec.lengthscales,
            matern_order: spec.order.map(MaternOrder::value),
        }
    }
}

fn check_lengthscales(ls: &[f64]) -> Result<()> {
    if ls.is_empty() {
        return Err(Error::InvalidArgument("at least one lengthscale is required".into()));
    }
    if let Some(bad) = ls.iter().find(|&&l| !(l.is_finite() && l > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "lengthscales must be finite and positive, got {bad}"
        )));
    }
    Ok(())
}

impl KernelSpec {
    /// Squared exponential with per-dimension lengthscales.
    pub fn rbf(lengthscales: Vec<f64>) -> Result<Self> {
        check_lengthscales(&lengthscales)?;
        Ok(Self {
            family: KernelFamily::Rbf,
            lengthscales,
            order: None,
        })
    }

    pub fn matern(order: MaternOrder, lengthscale: f64) -> Result<Self> {
        check_lengthscales(&[lengthscale])?;
        Ok(Self {
            family: KernelFamily::Matern,
            lengthscales: vec![lengthscale],
            order: Some(order),
        })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn matern_order(&self) -> Option<MaternOrder> {
        self.order
    }

    /// Input dimension the kernel is tied to, if any.
    pub fn input_dim(&self) -> Option<usize> {
        match self.family {
            KernelFamily::Rbf => Some(self.lengthscales.len()),
            KernelFamily::Matern => None,
        }
    }

    /// Same kernel with replaced lengthscales.
    pub fn with_lengthscales(&self, lengthscales: &[f64]) -> Result<Self> {
        if lengthscales.len() != self.lengthscales.len() {
            return Err(Error::DimensionMismatch {
                what: "lengthscale slots",
                expected: self.lengthscales.len(),
                got: lengthscales.len(),
            });
        }
        check_lengthscales(lengthscales)?;
        Ok(Self {
            lengthscales: lengthscales.to_vec(),
            ..self.clone()
        })
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        match self.input_dim() {
            Some(expected) if expected != d => Err(Error::DimensionMismatch {
                what: "input dimension vs rbf lengthscales",
                expected,
                got: d,
            }),
            _ => Ok(()),
        }
    }

    /// Kernel value without validation. Symmetric bit-for-bit in its arguments.
    pub(crate) fn value(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Rbf => {
                let s: f64 = a
                    .iter()
                    .zip(b)
                    .zip(&self.lengthscales)
                    .map(|((x, y), l)| {
                        let d = (x - y) / l;
                        d * d
                    })
                    .sum();
                (-0.5 * s).exp()
            }
            KernelFamily::Matern => {
                let r = euclidean(a, b) / self.lengthscales[0];
                match self.order.expect("matern kernel carries an order") {
                    MaternOrder::Half => (-r).exp(),
                    MaternOrder::ThreeHalves => {
                        let s = SQRT3 * r;
                        (1.0 + s) * (-s).exp()
                    }
                    MaternOrder::FiveHalves => {
                        let s = SQRT5 * r;
                        (1.0 + s + s * s / 3.0) * (-s).exp()
                    }
                }
            }
        }
    }

    /// `∂k(a, b)/∂l_slot`.
    pub(crate) fn lengthscale_derivative(&self, a: &[f64], b: &[f64], slot: usize) -> f64 {
        match self.family {
            KernelFamily::Rbf => {
                let l = self.lengthscales[slot];
                let d = a[slot] - b[slot];
                self.value(a, b) * d * d / (l * l * l)
            }
            KernelFamily::Matern => {
                let h = self.lengthscales[0];
                let r = euclidean(a, b) / h;
                match self.order.expect("matern kernel carries an order") {
                    MaternOrder::Half => r * (-r).exp() / h,
                    MaternOrder::ThreeHalves => {
                        let s = SQRT3 * r;
                        s * s * (-s).exp() / h
                    }
                    MaternOrder::FiveHalves => {
                        let s = SQRT5 * r;
                        s * s * (1.0 + s) * (-s).exp() / (3.0 * h)
                    }
                }
            }
        }
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Ordered list of component kernels. Position `l` pairs with signal variance `θ_l`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiKernel {
    components: Vec<KernelSpec>,
}

impl MultiKernel {
    pub fn new(components: Vec<KernelSpec>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument("a kernel sum needs at least one component".into()));
        }
        let dims: Vec<usize> = components.iter().filter_map(KernelSpec::input_dim).collect();
        if let Some(&d0) = dims.first() {
            if let Some(&d) = dims.iter().find(|&&d| d != d0) {
                return Err(Error::DimensionMismatch {
                    what: "rbf components disagree on input dimension",
                    expected: d0,
                    got: d,
                });
            }
        }
        Ok(Self { components })
    }

    pub fn single(spec: KernelSpec) -> Self {
        Self {
            components: vec![spec],
        }
    }

    pub fn components(&self) -> &[KernelSpec] {
        &self.components
    }

    /// Number of signal variances, M.
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Lengthscale slot counts per component.
    pub fn lengthscale_layout(&self) -> Vec<usize> {
        self.components.iter().map(|c| c.lengthscales.len()).collect()
    }

    pub fn lengthscales(&self) -> Vec<Vec<f64>> {
        self.components.iter().map(|c| c.lengthscales.clone()).collect()
    }

    pub fn with_lengthscales(&self, lengthscales: &[Vec<f64>]) -> Result<Self> {
        if lengthscales.len() != self.components.len() {
            return Err(Error::DimensionMismatch {
                what: "lengthscale groups",
                expected: self.components.len(),
                got: lengthscales.len(),
            });
        }
        let components = self
            .components
            .iter()
            .zip(lengthscales)
            .map(|(c, ls)| c.with_lengthscales(ls))
            .collect::<Result<_>>()?;
        Ok(Self { components })
    }

    /// Kernels with the lengthscales carried by `theta`, when it carries any.
    pub fn resolve(&self, theta: &HyperParams) -> Result<Self> {
        self.check_params(theta)?;
        match theta.lengthscales() {
            Some(ls) => self.with_lengthscales(ls),
            None => Ok(self.clone()),
        }
    }

    pub fn check_params(&self, theta: &HyperParams) -> Result<()> {
        if theta.num_signals() != self.len() {
            return Err(Error::DimensionMismatch {
                what: "signal variances vs kernel components",
                expected: self.len(),
                got: theta.num_signals(),
            });
        }
        if let Some(ls) = theta.lengthscales() {
            let layout = self.lengthscale_layout();
            let got: Vec<usize> = ls.iter().map(Vec::len).collect();
            if got != layout {
                return Err(Error::InvalidArgument(format!(
                    "lengthscale layout {got:?} does not match kernels {layout:?}"
                )));
            }
        }
        Ok(())
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        self.components.iter().try_for_each(|c| c.check_dim(d))
    }
}

/// Hyperparameters `θ = (θ_1..θ_M, θ_{M+1})` plus optional lengthscales.
///
/// The flat layout used by gradients and traces is
/// `[signal_1, .., signal_M, noise, lengthscales of component 1, .., of component M]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    signal_variances: Vec<f64>,
    noise_variance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lengthscales: Option<Vec<Vec<f64>>>,
}

/// Address of one hyperparameter slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamIndex {
    Signal(usize),
    Noise,
    Lengthscale { component: usize, slot: usize },
}

impl HyperParams {
    pub fn new(signal_variances: Vec<f64>, noise_variance: f64) -> Result<Self> {
        let p = Self {
            signal_variances,
            noise_variance,
            lengthscales: None,
        };
        p.validate()?;
        Ok(p)
    }

    /// `θ = (σ_f², σ_ε²)` for a single kernel.
    pub fn pair(signal: f64, noise: f64) -> Result<Self> {
        Self::new(vec![signal], noise)
    }

    pub fn with_lengthscales(mut self, lengthscales: Vec<Vec<f64>>) -> Result<Self> {
        self.lengthscales = Some(lengthscales);
        self.validate()?;
        Ok(self)
    }

    pub fn without_lengthscales(mut self) -> Self {
        self.lengthscales = None;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.signal_variances.is_empty() {
            return Err(Error::InvalidArgument("at least one signal variance is required".into()));
        }
        match self.as_vec().iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            Some(i) => Err(Error::InvalidArgument(format!(
                "hyperparameter slot {i} must be finite and positive"
            ))),
            None => Ok(()),
        }
    }

    pub fn signal_variances(&self) -> &[f64] {
        &self.signal_variances
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn lengthscales(&self) -> Option<&[Vec<f64>]> {
        self.lengthscales.as_deref()
    }

    pub fn num_signals(&self) -> usize {
        self.signal_variances.len()
    }

    /// Number of flat slots.
    pub fn len(&self) -> usize {
        self.signal_variances.len()
            + 1
            + self
                .lengthscales
                .as_ref()
                .map_or(0, |ls| ls.iter().map(Vec::len).sum())
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_vec(&self) -> Vec<f64> {
        let mut v = self.signal_variances.clone();
        v.push(self.noise_variance);
        if let Some(ls) = &self.lengthscales {
            v.extend(ls.iter().flatten());
        }
        v
    }

    /// Inverse of [`as_vec`](Self::as_vec), reusing this value's layout.
    pub fn from_flat(&self, values: &[f64]) -> Result<Self> {
        if values.len() != self.len() {
            return Err(Error::DimensionMismatch {
                what: "flat hyperparameter vector",
                expected: self.len(),
                got: values.len(),
            });
        }
        let m = self.signal_variances.len();
        let lengthscales = self.lengthscales.as_ref().map(|groups| {
            let mut offset = m + 1;
            groups
                .iter()
                .map(|g| {
                    let out = values[offset..offset + g.len()].to_vec();
                    offset += g.len();
                    out
                })
                .collect()
        });
        let p = Self {
            signal_variances: values[..m].to_vec(),
            noise_variance: values[m],
            lengthscales,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn param_index(&self, flat: usize) -> Option<ParamIndex> {
        let m = self.signal_variances.len();
        if flat < m {
            return Some(ParamIndex::Signal(flat));
        }
        if flat == m {
            return Some(ParamIndex::Noise);
        }
        let mut offset = m + 1;
        for (component, g) in self.lengthscales.as_ref()?.iter().enumerate() {
            if flat < offset + g.len() {
                return Some(ParamIndex::Lengthscale {
                    component,
                    slot: flat - offset,
                });
            }
            offset += g.len();
        }
        None
    }

    /// Column labels matching the flat layout: `theta_1..theta_{M+1}`, then `lengthscale_<c>_<d>`.
    pub fn labels(&self) -> Vec<String> {
        let m = self.signal_variances.len();
        let mut out: Vec<String> = (1..=m + 1).map(|i| format!("theta_{i}")).collect();
        if let Some(ls) = &self.lengthscales {
            for (c, g) in ls.iter().enumerate() {
                out.extend((0..g.len()).map(|d| format!("lengthscale_{}_{}", c + 1, d + 1)));
            }
        }
        out
    }
}

fn check_points(x: &DMatrix<f64>) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::InvalidArgument("at least one input point is required".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("input coordinates"));
    }
    Ok(())
}

/// Rows of `x` laid out contiguously (column `i` of the transpose is point `i`).
pub(crate) fn point_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.transpose()
}

/// Symmetric matrix from a pairwise function, filled upper triangle first and mirrored.
pub(crate) fn symmetric_from<F>(n: usize, f: F) -> DMatrix<f64>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let mut data = vec![0.0; n * n];
    let fill = |(j, col): (usize, &mut [f64])| {
        for (i, v) in col.iter_mut().enumerate().take(j + 1) {
            *v = f(i, j);
        }
    };
    if n >= PAR_THRESHOLD {
        data.par_chunks_mut(n).enumerate().for_each(fill);
    } else {
        data.chunks_mut(n).enumerate().for_each(fill);
    }
    let mut k = DMatrix::from_vec(n, n, data);
    for j in 0..n {
        for i in 0..j {
            k[(j, i)] = k[(i, j)];
        }
    }
    k
}

/// `k(x, x2)` with argument validation.
pub fn eval_kernel(spec: &KernelSpec, x: &[f64], x2: &[f64]) -> Result<f64> {
    if x.len() != x2.len() {
        return Err(Error::DimensionMismatch {
            what: "kernel arguments",
            expected: x.len(),
            got: x2.len(),
        });
    }
    spec.check_dim(x.len())?;
    if x.iter().chain(x2).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel arguments"));
    }
    Ok(spec.value(x, x2))
}

/// `(K)_{ij} = k(x_i, x_j)` for the rows of `x`.
pub fn kernel_matrix(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_points(x)?;
    spec.check_dim(x.ncols())?;
    Ok(kernel_matrix_unchecked(spec, x))
}

pub(crate) fn kernel_matrix_unchecked(spec: &KernelSpec, x: &DMatrix<f64>) -> DMatrix<f64> {
    let pts = point_columns(x);
    symmetric_from(x.nrows(), |i, j| {
        if i == j {
            1.0
        } else {
            spec.value(pts.column(i).as_slice(), pts.column(j).as_slice())
        }
    })
}

/// Cross-kernel `(K)_{ij} = k(a_i, b_j)`.
pub fn cross_kernel_matrix(
    spec: &KernelSpec,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            what: "cross-kernel input dimension",
            expected: a.ncols(),
            got: b.ncols(),
        });
    }
    spec.check_dim(a.ncols())?;
    let pa = point_columns(a);
    let pb = point_columns(b);
    Ok(DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        spec.value(pa.column(i).as_slice(), pb.column(j).as_slice())
    }))
}

/// `K_n(θ) = Σ_l θ_l K_l + θ_{M+1} I`.
pub fn marginal_covariance(
    kernels: &MultiKernel,
    theta: &HyperParams,
    x: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_points(x)?;
    let kernels = kernels.resolve(theta)?;
    kernels.check_dim(x.ncols())?;
    Ok(marginal_from_components(
        &component_matrices(&kernels, x),
        theta,
    ))
}

pub(crate) fn component_matrices(kernels: &MultiKernel, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    kernels
        .components()
        .iter()
        .map(|c| kernel_matrix_unchecked(c, x))
        .collect()
}

pub(crate) fn marginal_from_components(
    components: &[DMatrix<f64>],
    theta: &HyperParams,
) -> DMatrix<f64> {
    let n = components[0].nrows();
    let mut k = DMatrix::from_diagonal_element(n, n, theta.noise_variance());
    for (kl, &w) in components.iter().zip(theta.signal_variances()) {
        k.zip_apply(kl, |a, b| *a += w * b);
    }
    k
}

/// `∂K_n(θ)/∂θ_p` for any slot: a component kernel matrix for a signal
/// variance, the identity for the noise, and the elementwise derivative
/// (scaled by the component's signal variance) for a lengthscale.
pub fn kernel_matrix_grad(
    kernels: &MultiKernel,
    theta: &HyperParams,
    x: &DMatrix<f64>,
    param: ParamIndex,
) -> Result<DMatrix<f64>> {
    check_points(x)?;
    let kernels = kernels.resolve(theta)?;
    kernels.check_dim(x.ncols())?;
    let n = x.nrows();
    match param {
        ParamIndex::Signal(l) => {
            let spec = kernels.components().get(l).ok_or_else(|| {
                Error::InvalidArgument(format!("signal index {l} out of range"))
            })?;
            Ok(kernel_matrix_unchecked(spec, x))
        }
        ParamIndex::Noise => Ok(DMatrix::identity(n, n)),
        ParamIndex::Lengthscale { component, slot } => {
            let spec = kernels.components().get(component).ok_or_else(|| {
                Error::InvalidArgument(format!("component {component} out of range"))
            })?;
            if slot >= spec.lengthscales().len() {
                return Err(Error::InvalidArgument(format!(
                    "lengthscale slot {slot} out of range for component {component}"
                )));
            }
            Ok(lengthscale_grad_matrix(
                spec,
                theta.signal_variances()[component],
                &point_columns(x),
                slot,
            ))
        }
    }
}

/// `θ_c ∂K_c/∂l_slot` over points stored as columns.
pub(crate) fn lengthscale_grad_matrix(
    spec: &KernelSpec,
    weight: f64,
    pts: &DMatrix<f64>,
    slot: usize,
) -> DMatrix<f64> {
    symmetric_from(pts.ncols(), |i, j| {
        if i == j {
            0.0
        } else {
            weight
                * spec.lengthscale_derivative(pts.column(i).as_slice(), pts.column(j).as_slice(), slot)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn rbf_examples() {
        let k = KernelSpec::rbf(vec![0.5]).unwrap();
        assert_eq!(eval_kernel(&k, &[0.3], &[0.3]).unwrap(), 1.0);
        assert_relative_eq!(
            eval_kernel(&k, &[0.0], &[0.5]).unwrap(),
            0.606_530_659_712_633_4,
            max_relative = 1e-14
        );
    }

    #[test]
    fn matern_closed_forms() {
        let half = KernelSpec::matern(MaternOrder::Half, 1.0).unwrap();
        assert_relative_eq!(
            eval_kernel(&half, &[0.0], &[1.0]).unwrap(),
            0.367_879_441_171_442_33,
            max_relative = 1e-14
        );
        // Matérn 3/2 at r = h/√3: (1 + 1) e^{-1}.
        let m32 = KernelSpec::matern(MaternOrder::ThreeHalves, 3f64.sqrt()).unwrap();
        assert_relative_eq!(
            eval_kernel(&m32, &[0.0, 0.0], &[0.6, 0.8]).unwrap(),
            2.0 * (-1.0f64).exp(),
            max_relative = 1e-14
        );
        let m52 = KernelSpec::matern(MaternOrder::FiveHalves, 5f64.sqrt()).unwrap();
        assert_relative_eq!(
            eval_kernel(&m52, &[1.0], &[2.0]).unwrap(),
            (1.0 + 1.0 + 1.0 / 3.0) * (-1.0f64).exp(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(MaternOrder::from_value(1.0).is_err());
        assert!(KernelSpec::rbf(vec![0.0]).is_err());
        assert!(KernelSpec::rbf(vec![]).is_err());
        let k = KernelSpec::rbf(vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            eval_kernel(&k, &[0.0], &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            eval_kernel(&k, &[0.0, f64::NAN], &[0.0, 1.0]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn spec_config_round_trip() {
        let json = r#"{"family":"matern","lengthscales":[2.0],"matern_order":1.5}"#;
        let spec: KernelSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.matern_order(), Some(MaternOrder::ThreeHalves));
        assert_eq!(serde_json::to_string(&spec).unwrap(), json);
        assert!(serde_json::from_str::<KernelSpec>(
            r#"{"family":"matern","lengthscales":[2.0],"matern_order":2.0}"#
        )
        .is_err());
        assert!(serde_json::from_str::<KernelSpec>(
            r#"{"family":"rbf","lengthscales":[1.0],"colour":1}"#
        )
        .is_err());
    }

    #[test]
    fn kernel_matrix_small_cases() {
        let k = KernelSpec::rbf(vec![0.5]).unwrap();
        let one = kernel_matrix(&k, &DMatrix::from_element(1, 1, 3.0)).unwrap();
        assert_eq!(one, DMatrix::from_element(1, 1, 1.0));
        let two = kernel_matrix(&k, &DMatrix::from_column_slice(2, 1, &[0.0, 0.5])).unwrap();
        let e = (-0.5f64).exp();
        assert_relative_eq!(two, DMatrix::from_row_slice(2, 2, &[1.0, e, e, 1.0]), epsilon = 1e-15);
    }

    #[test]
    fn kernel_matrix_matches_pairwise_evaluation() {
        let x = random_points(300, 3, 1);
        for spec in [
            KernelSpec::rbf(vec![0.4, 1.0, 2.0]).unwrap(),
            KernelSpec::matern(MaternOrder::FiveHalves, 0.7).unwrap(),
        ] {
            let k = kernel_matrix(&spec, &x).unwrap();
            for i in 0..x.nrows() {
                for j in 0..x.nrows() {
                    let brute = eval_kernel(
                        &spec,
                        x.row(i).transpose().as_slice(),
                        x.row(j).transpose().as_slice(),
                    )
                    .unwrap();
                    assert_eq!(k[(i, j)], brute);
                }
            }
            assert_eq!(k, k.transpose());
        }
    }

    #[test]
    fn marginal_covariance_examples() {
        let k = MultiKernel::single(KernelSpec::rbf(vec![1.0]).unwrap());
        let x = DMatrix::from_element(1, 1, 0.0);
        let c = marginal_covariance(&k, &HyperParams::pair(4.0, 1.0).unwrap(), &x).unwrap();
        assert_eq!(c[(0, 0)], 5.0);

        let x = random_points(6, 1, 2);
        let c = marginal_covariance(&k, &HyperParams::pair(1e-12, 2.5).unwrap(), &x).unwrap();
        let diff = &c - DMatrix::<f64>::identity(6, 6) * 2.5;
        assert!(diff.amax() < 1e-11);
    }

    #[test]
    fn marginal_covariance_sums_components() {
        let a = KernelSpec::rbf(vec![0.3, 0.9]).unwrap();
        let b = KernelSpec::matern(MaternOrder::Half, 1.2).unwrap();
        let mk = MultiKernel::new(vec![a.clone(), b.clone()]).unwrap();
        let theta = HyperParams::new(vec![2.0, 0.5], 0.3).unwrap();
        let x = random_points(20, 2, 3);
        let got = marginal_covariance(&mk, &theta, &x).unwrap();
        let want = DMatrix::from_fn(20, 20, |i, j| {
            let (xi, xj) = (x.row(i).transpose(), x.row(j).transpose());
            2.0 * eval_kernel(&a, xi.as_slice(), xj.as_slice()).unwrap()
                + 0.5 * eval_kernel(&b, xi.as_slice(), xj.as_slice()).unwrap()
                + if i == j { 0.3 } else { 0.0 }
        });
        assert_relative_eq!(got, want, epsilon = 1e-14);
        assert!(marginal_covariance(&mk, &HyperParams::pair(1.0, 1.0).unwrap(), &x).is_err());
    }

    #[test]
    fn noise_shifts_every_eigenvalue() {
        let mk = MultiKernel::single(KernelSpec::rbf(vec![0.8]).unwrap());
        let x = random_points(48, 1, 4);
        let base = marginal_covariance(&mk, &HyperParams::pair(3.0, 1e-300).unwrap(), &x).unwrap();
        let shifted = marginal_covariance(&mk, &HyperParams::pair(3.0, 0.7).unwrap(), &x).unwrap();
        let mut e0: Vec<f64> = SymmetricEigen::new(base).eigenvalues.iter().copied().collect();
        let mut e1: Vec<f64> = SymmetricEigen::new(shifted).eigenvalues.iter().copied().collect();
        e0.sort_by(f64::total_cmp);
        e1.sort_by(f64::total_cmp);
        for (a, b) in e0.iter().zip(&e1) {
            assert!((b - a - 0.7).abs() < 1e-10);
        }
        assert!(e1[0] >= 0.7 - 1e-10);
    }

    #[test]
    fn rbf_matrices_are_psd() {
        for seed in 0..4 {
            let x = random_points(256, 2, 10 + seed);
            let k = kernel_matrix(&KernelSpec::rbf(vec![0.6, 1.1]).unwrap(), &x).unwrap();
            let lo = SymmetricEigen::new(k).eigenvalues.min();
            assert!(lo >= -1e-10 * 256.0, "min eigenvalue {lo}");
        }
    }

    #[test]
    fn kernels_decrease_with_distance() {
        for spec in [
            KernelSpec::rbf(vec![0.7]).unwrap(),
            KernelSpec::matern(MaternOrder::Half, 0.7).unwrap(),
            KernelSpec::matern(MaternOrder::ThreeHalves, 0.7).unwrap(),
            KernelSpec::matern(MaternOrder::FiveHalves, 0.7).unwrap(),
        ] {
            let vals: Vec<f64> = (0..200)
                .map(|i| spec.value(&[0.0], &[i as f64 * 0.02]))
                .collect();
            assert!(vals.windows(2).all(|w| w[1] < w[0]), "{spec:?}");
        }
    }

    #[test]
    fn variance_and_noise_derivatives() {
        let spec = KernelSpec::rbf(vec![0.5]).unwrap();
        let mk = MultiKernel::single(spec.clone());
        let theta = HyperParams::pair(2.0, 0.5).unwrap();
        let x = random_points(7, 1, 5);
        assert_eq!(
            kernel_matrix_grad(&mk, &theta, &x, ParamIndex::Noise).unwrap(),
            DMatrix::identity(7, 7)
        );
        assert_eq!(
            kernel_matrix_grad(&mk, &theta, &x, ParamIndex::Signal(0)).unwrap(),
            kernel_matrix(&spec, &x).unwrap()
        );
        assert!(kernel_matrix_grad(&mk, &theta, &x, ParamIndex::Signal(1)).is_err());
        assert!(kernel_matrix_grad(
            &mk,
            &theta,
            &x,
            ParamIndex::Lengthscale { component: 0, slot: 1 }
        )
        .is_err());
    }

    #[test]
    fn lengthscale_derivatives_match_central_differences() {
        let x = random_points(12, 2, 6);
        let kernels = [
            KernelSpec::rbf(vec![0.6, 1.3]).unwrap(),
            KernelSpec::matern(MaternOrder::Half, 0.9).unwrap(),
            KernelSpec::matern(MaternOrder::ThreeHalves, 0.9).unwrap(),
            KernelSpec::matern(MaternOrder::FiveHalves, 0.9).unwrap(),
        ];
        for spec in kernels {
            let mk = MultiKernel::single(spec.clone());
            let ls = spec.lengthscales().to_vec();
            let theta = HyperParams::pair(1.7, 0.4)
                .unwrap()
                .with_lengthscales(vec![ls.clone()])
                .unwrap();
            for slot in 0..ls.len() {
                let analytic = kernel_matrix_grad(
                    &mk,
                    &theta,
                    &x,
                    ParamIndex::Lengthscale { component: 0, slot },
                )
                .unwrap();
                let h = 1e-6;
                let shifted = |delta: f64| {
                    let mut l = ls.clone();
                    l[slot] += delta;
                    let t = theta.clone().with_lengthscales(vec![l]).unwrap();
                    marginal_covariance(&mk, &t, &x).unwrap()
                };
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                for (a, f) in analytic.iter().zip(fd.iter()) {
                    let scale = a.abs().max(1e-3);
                    assert!((a - f).abs() / scale < 1e-5, "{spec:?}: {a} vs {f}");
                }
            }
        }
    }

    #[test]
    fn flat_layout_round_trip() {
        let theta = HyperParams::new(vec![1.0, 2.0], 0.1)
            .unwrap()
            .with_lengthscales(vec![vec![0.5, 0.6], vec![0.7]])
            .unwrap();
        assert_eq!(theta.len(), 6);
        assert_eq!(theta.as_vec(), vec![1.0, 2.0, 0.1, 0.5, 0.6, 0.7]);
        assert_eq!(theta.from_flat(&theta.as_vec()).unwrap(), theta);
        assert_eq!(theta.param_index(2), Some(ParamIndex::Noise));
        assert_eq!(
            theta.param_index(5),
            Some(ParamIndex::Lengthscale { component: 1, slot: 0 })
        );
        assert_eq!(theta.param_index(6), None);
        assert_eq!(
            theta.labels(),
            ["theta_1", "theta_2", "theta_3", "lengthscale_1_1", "lengthscale_1_2", "lengthscale_2_1"]
        );
        assert!(HyperParams::pair(1.0, 0.0).is_err());
    }
}
