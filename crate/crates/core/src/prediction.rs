//! Posterior predictive mean and variance: exact, conjugate-gradient and
//! nearest-neighbour-truncated.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::format_float;
use crate::error::{Error, Result};
use crate::kernels::{cross_kernel_matrix, marginal_covariance, HyperParams, MultiKernel};
use crate::linalg::{cg_solve, cholesky, Preconditioner};
use crate::sampling::SpatialIndex;

/// Training sizes from this point on default to conjugate gradients.
pub const CG_THRESHOLD: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CgSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub jacobi: bool,
}

impl Default for CgSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 1000,
            jacobi: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Strategy {
    Exact,
    Cg(CgSettings),
    /// Exact below [`CG_THRESHOLD`] training points, default CG above.
    Auto,
}

/// How a [`PredictionResult`] was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Method {
    Exact,
    Cg,
    Neighbours { count: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionResult {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
    /// Full posterior covariance between test points, when requested.
    pub covariance: Option<DMatrix<f64>>,
    pub method: Method,
    /// CG iterations: the mean solve first, then one per test point.
    pub cg_iterations: Option<Vec<usize>>,
}

impl PredictionResult {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// `index,mean,variance[,truth,abs_err]`.
    pub fn write_csv<W: Write>(&self, truth: Option<&DVector<f64>>, mut w: W) -> Result<()> {
        if let Some(t) = truth {
            check_len("truth", self.len(), t.len())?;
            writeln!(w, "index,mean,variance,truth,abs_err")?;
        } else {
            writeln!(w, "index,mean,variance")?;
        }
        for i in 0..self.len() {
            let (m, v) = (self.mean[i], self.variance[i]);
            match truth {
                Some(t) => writeln!(
                    w,
                    "{i},{},{},{},{}",
                    format_float(m),
                    format_float(v),
                    format_float(t[i]),
                    format_float((m - t[i]).abs())
                )?,
                None => writeln!(w, "{i},{},{}", format_float(m), format_float(v))?,
            }
        }
        Ok(())
    }

    /// Maps mean and variance back to raw response units.
    pub fn rescale(&mut self, y_mean: f64, y_sd: f64) {
        self.mean.apply(|m| *m = *m * y_sd + y_mean);
        self.variance.apply(|v| *v *= y_sd * y_sd);
        if let Some(c) = &mut self.covariance {
            c.apply(|v| *v *= y_sd * y_sd);
        }
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { what, expected, got });
    }
    Ok(())
}

fn check_inputs(
    kernels: &MultiKernel,
    theta: &HyperParams,
    x_train: &DMatrix<f64>,
    y_train: &DVector<f64>,
    x_test: &DMatrix<f64>,
) -> Result<MultiKernel> {
    check_len("training responses", x_train.nrows(), y_train.len())?;
    check_len("test input dimension", x_train.ncols(), x_test.ncols())?;
    if x_test.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("test inputs"));
    }
    if y_train.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training responses"));
    }
    kernels.resolve(theta)
}

/// `k(A, B) = Σ_l θ_l k_l(A, B)`.
fn weighted_cross(
    kernels: &MultiKernel,
    theta: &HyperParams,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(a.nrows(), b.nrows());
    for (spec, &w) in kernels.components().iter().zip(theta.signal_variances()) {
        let k = cross_kernel_matrix(spec, a, b)?;
        out.zip_apply(&k, |o, v| *o += w * v);
    }
    Ok(out)
}

/// `Σ_l θ_l k_l(x*, x*)`, the prior variance at each test point.
fn prior_variance(
    kernels: &MultiKernel,
    theta: &HyperParams,
    x_test: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(x_test.nrows());
    for i in 0..x_test.nrows() {
        let row = x_test.rows(i, 1).into_owned();
        out[i] = weighted_cross(kernels, theta, &row, &row)?[(0, 0)];
    }
    Ok(out)
}

/// `μ(x*) = k*ᵀ K⁻¹ y` and `σ²(x*) = k(x*, x*) − k*ᵀ K⁻¹ k*`.
pub fn predict(
    theta: &HyperParams,
    kernels: &MultiKernel,
    x_train: &DMatrix<f64>,
    y_train: &DVector<f64>,
    x_test: &DMatrix<f64>,
    strategy: Strategy,
) -> Result<PredictionResult> {
    let kernels = check_inputs(kernels, theta, x_train, y_train, x_test)?;
    let strategy = match strategy {
        Strategy::Auto if x_train.nrows() < CG_THRESHOLD => Strategy::Exact,
        Strategy::Auto => Strategy::Cg(CgSettings::default()),
        s => s,
    };
    let k = marginal_covariance(&kernels, theta, x_train)?;
    let cross = weighted_cross(&kernels, theta, x_train, x_test)?;
    let prior = prior_variance(&kernels, theta, x_test)?;
    match strategy {
        Strategy::Cg(settings) => predict_cg(&k, &cross, &prior, y_train, settings),
        _ => {
            let factor = cholesky(&k)?;
            let alpha = factor.solve_vec(y_train)?;
            let mean = cross.tr_mul(&alpha);
            let v = factor.solve_lower(&cross)?;
            let explained = DVector::from_iterator(v.ncols(), v.column_iter().map(|c| c.norm_squared()));
            Ok(PredictionResult {
                mean,
                variance: (prior - explained).map(|s| s.max(0.0)),
                covariance: None,
                method: Method::Exact,
                cg_iterations: None,
            })
        }
    }
}

fn predict_cg(
    k: &DMatrix<f64>,
    cross: &DMatrix<f64>,
    prior: &DVector<f64>,
    y: &DVector<f64>,
    settings: CgSettings,
) -> Result<PredictionResult> {
    let precond = if settings.jacobi {
        Preconditioner::jacobi(&k.diagonal())?
    } else {
        Preconditioner::None
    };
    let solve = |b: &DVector<f64>| -> Result<(DVector<f64>, usize)> {
        let sol = cg_solve(|v| k * v, b, settings.tol, settings.max_iter, &precond)?;
        if !sol.converged {
            return Err(Error::CgNotConverged {
                iterations: sol.iterations,
                residual: sol.residual,
            });
        }
        Ok((sol.x, sol.iterations))
    };
    let (alpha, it0) = solve(y)?;
    let mean = cross.tr_mul(&alpha);
    let per_point: Vec<(f64, usize)> = (0..cross.ncols())
        .into_par_iter()
        .map(|j| {
            let c = cross.column(j).into_owned();
            let (s, it) = solve(&c)?;
            Ok((c.dot(&s), it))
        })
        .collect::<Result<_>>()?;
    let explained = DVector::from_iterator(per_point.len(), per_point.iter().map(|p| p.0));
    let mut iterations = vec![it0];
    iterations.extend(per_point.iter().map(|p| p.1));
    Ok(PredictionResult {
        mean,
        variance: (prior - explained).map(|s| s.max(0.0)),
        covariance: None,
        method: Method::Cg,
        cg_iterations: Some(iterations),
    })
}

/// Exact prediction that also returns the full posterior covariance
/// `K** − K*ᵀ K⁻¹ K*` between test points.
pub fn predict_with_covariance(
    theta: &HyperParams,
    kernels: &MultiKernel,
    x_train: &DMatrix<f64>,
    y_train: &DVector<f64>,
    x_test: &DMatrix<f64>,
) -> Result<PredictionResult> {
    let mut out = predict(theta, kernels, x_train, y_train, x_test, Strategy::Exact)?;
    let resolved = kernels.resolve(theta)?;
    let factor = cholesky(&marginal_covariance(&resolved, theta, x_train)?)?;
    let v = factor.solve_lower(&weighted_cross(&resolved, theta, x_train, x_test)?)?;
    let prior = weighted_cross(&resolved, theta, x_test, x_test)?;
    out.covariance = Some(prior - v.tr_mul(&v));
    Ok(out)
}

/// Exact prediction at each test point from its `count` nearest training points.
///
/// The neighbour set is used in increasing index order, so `count = n`
/// reproduces [`predict`] with [`Strategy::Exact`] bit for bit.
pub fn predict_nn(
    theta: &HyperParams,
    kernels: &MultiKernel,
    x_train: &DMatrix<f64>,
    y_train: &DVector<f64>,
    x_test: &DMatrix<f64>,
    count: usize,
    index: &SpatialIndex,
) -> Result<PredictionResult> {
    let kernels = check_inputs(kernels, theta, x_train, y_train, x_test)?;
    check_len("spatial index size", x_train.nrows(), index.len())?;
    if count == 0 || count > x_train.nrows() {
        return Err(Error::InvalidArgument(format!(
            "neighbour count {count} must lie in 1..={}",
            x_train.nrows()
        )));
    }
    let per_point: Vec<(f64, f64)> = (0..x_test.nrows())
        .into_par_iter()
        .map(|i| {
            let q: Vec<f64> = x_test.row(i).iter().copied().collect();
            let mut nb = index.query(&q, count)?;
            nb.sort_unstable();
            let xs = x_train.select_rows(&nb);
            let ys = y_train.select_rows(&nb);
            let xq = x_test.rows(i, 1).into_owned();
            let r = predict(theta, &kernels, &xs, &ys, &xq, Strategy::Exact)?;
            Ok((r.mean[0], r.variance[0]))
        })
        .collect::<Result<_>>()?;
    Ok(PredictionResult {
        mean: DVector::from_iterator(per_point.len(), per_point.iter().map(|p| p.0)),
        variance: DVector::from_iterator(per_point.len(), per_point.iter().map(|p| p.1)),
        covariance: None,
        method: Method::Neighbours { count },
        cg_iterations: None,
    })
}

/// `√(mean (a_i − b_i)²)`.
pub fn rmse(predicted: &DVector<f64>, truth: &DVector<f64>) -> Result<f64> {
    check_len("rmse inputs", predicted.len(), truth.len())?;
    if predicted.is_empty() {
        return Err(Error::InvalidArgument("rmse of empty vectors".into()));
    }
    Ok(((predicted - truth).norm_squared() / predicted.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{draw_inputs, simulate_gp, InputDistribution};
    use crate::kernels::{KernelSpec, MaternOrder};
    use approx::assert_relative_eq;

    fn rbf(l: f64) -> MultiKernel {
        MultiKernel::single(KernelSpec::rbf(vec![l]).unwrap())
    }

    #[test]
    fn single_training_point() {
        let x = DMatrix::from_element(1, 1, 0.0);
        let y = DVector::from_element(1, 2.0);
        let xs = DMatrix::from_element(1, 1, 0.7);
        let theta = HyperParams::pair(3.0, 0.5).unwrap();
        let r = predict(&theta, &rbf(1.0), &x, &y, &xs, Strategy::Exact).unwrap();
        let k = (-0.49f64 / 2.0).exp();
        assert_relative_eq!(r.mean[0], 3.0 * k * 2.0 / 3.5, epsilon = 1e-14);
        assert_relative_eq!(r.variance[0], 3.0 - 9.0 * k * k / 3.5, epsilon = 1e-14);
    }

    #[test]
    fn near_noiseless_interpolation() {
        let x = draw_inputs(InputDistribution::Uniform { low: 0.0, high: 10.0 }, 15, 1, 1).unwrap();
        let y = x.column(0).map(|v| v.sin());
        let theta = HyperParams::pair(1.0, 1e-12).unwrap();
        let r = predict(&theta, &rbf(0.5), &x, &y, &x, Strategy::Exact).unwrap();
        for i in 0..15 {
            assert!((r.mean[i] - y[i]).abs() < 1e-4);
        }
    }

    #[test]
    fn far_point_recovers_prior() {
        let x = draw_inputs(InputDistribution::Gaussian { sd: 1.0 }, 20, 2, 2).unwrap();
        let y = DVector::from_fn(20, |i, _| i as f64 * 0.1);
        let xs = DMatrix::from_row_slice(1, 2, &[100.0, -100.0]);
        let theta = HyperParams::pair(2.5, 0.3).unwrap();
        let kernels = MultiKernel::single(KernelSpec::rbf(vec![0.5, 0.5]).unwrap());
        let r = predict(&theta, &kernels, &x, &y, &xs, Strategy::Exact).unwrap();
        assert!((r.variance[0] - 2.5).abs() < 1e-6);
        assert!(r.mean[0].abs() < 1e-6);
    }

    #[test]
    fn variance_bounded_by_prior() {
        let kernels = MultiKernel::new(vec![
            KernelSpec::rbf(vec![0.5]).unwrap(),
            KernelSpec::matern(MaternOrder::FiveHalves, 2.0).unwrap(),
        ])
        .unwrap();
        let theta = HyperParams::new(vec![1.5, 0.5], 0.1).unwrap();
        let x = draw_inputs(InputDistribution::Gaussian { sd: 2.0 }, 60, 1, 3).unwrap();
        let y = x.column(0).map(|v| v.cos());
        let xs = draw_inputs(InputDistribution::Gaussian { sd: 3.0 }, 40, 1, 4).unwrap();
        let r = predict_with_covariance(&theta, &kernels, &x, &y, &xs).unwrap();
        let cov = r.covariance.as_ref().unwrap();
        for i in 0..40 {
            assert!(r.variance[i] >= 0.0 && r.variance[i] <= 2.0 + 1e-8);
            assert_relative_eq!(cov[(i, i)], r.variance[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn cg_matches_exact() {
        let theta = HyperParams::pair(4.0, 1.0).unwrap();
        let data = simulate_gp(&rbf(0.5), &theta, 300, InputDistribution::Gaussian { sd: 5.0 }, 1, 5).unwrap();
        let xs = draw_inputs(InputDistribution::Gaussian { sd: 5.0 }, 10, 1, 6).unwrap();
        let exact = predict(&theta, &rbf(0.5), data.x(), data.y(), &xs, Strategy::Exact).unwrap();
        for jacobi in [false, true] {
            let settings = CgSettings { tol: 1e-8, max_iter: 1000, jacobi };
            let cg = predict(&theta, &rbf(0.5), data.x(), data.y(), &xs, Strategy::Cg(settings)).unwrap();
            assert_eq!(cg.method, Method::Cg);
            assert_eq!(cg.cg_iterations.as_ref().unwrap().len(), 11);
            for i in 0..10 {
                assert!((cg.mean[i] - exact.mean[i]).abs() < 1e-7);
                assert!((cg.variance[i] - exact.variance[i]).abs() < 1e-7);
            }
        }
        let starved = CgSettings { tol: 1e-12, max_iter: 2, jacobi: false };
        assert!(matches!(
            predict(&theta, &rbf(0.5), data.x(), data.y(), &xs, Strategy::Cg(starved)),
            Err(Error::CgNotConverged { .. })
        ));
    }

    #[test]
    fn neighbour_prediction() {
        let theta = HyperParams::pair(4.0, 1.0).unwrap();
        let iso = MultiKernel::single(KernelSpec::rbf(vec![0.5, 0.5]).unwrap());
        let data = simulate_gp(&iso, &theta, 120, InputDistribution::Gaussian { sd: 3.0 }, 2, 7).unwrap();
        let xs = draw_inputs(InputDistribution::Gaussian { sd: 3.0 }, 8, 2, 8).unwrap();
        let index = SpatialIndex::build(data.x()).unwrap();
        let exact = predict(&theta, &iso, data.x(), data.y(), &xs, Strategy::Exact).unwrap();
        let full = predict_nn(&theta, &iso, data.x(), data.y(), &xs, 120, &index).unwrap();
        for i in 0..8 {
            assert!((full.mean[i] - exact.mean[i]).abs() < 1e-10);
            assert!((full.variance[i] - exact.variance[i]).abs() < 1e-10);
        }
        let one = predict_nn(&theta, &iso, data.x(), data.y(), &xs, 1, &index).unwrap();
        for i in 0..8 {
            let q: Vec<f64> = xs.row(i).iter().copied().collect();
            let j = index.query(&q, 1).unwrap()[0];
            let d2 = (xs.row(i) - data.x().row(j)).norm_squared();
            let k = 4.0 * (-d2 / 0.5).exp();
            assert_relative_eq!(one.mean[i], k * data.y()[j] / 5.0, epsilon = 1e-12);
        }
        assert!(predict_nn(&theta, &iso, data.x(), data.y(), &xs, 0, &index).is_err());
        assert!(predict_nn(&theta, &iso, data.x(), data.y(), &xs, 121, &index).is_err());
    }

    #[test]
    fn neighbour_error_shrinks_toward_exact() {
        let theta = HyperParams::pair(4.0, 0.5).unwrap();
        let data = simulate_gp(&rbf(1.0), &theta, 200, InputDistribution::Gaussian { sd: 2.0 }, 1, 9).unwrap();
        let xs = draw_inputs(InputDistribution::Gaussian { sd: 2.0 }, 10, 1, 10).unwrap();
        let index = SpatialIndex::build(data.x()).unwrap();
        let exact = predict(&theta, &rbf(1.0), data.x(), data.y(), &xs, Strategy::Exact).unwrap();
        let gaps: Vec<f64> = [8, 32, 128, 200]
            .iter()
            .map(|&c| {
                let r = predict_nn(&theta, &rbf(1.0), data.x(), data.y(), &xs, c, &index).unwrap();
                (r.mean - &exact.mean).amax()
            })
            .collect();
        assert!(gaps.windows(2).all(|w| w[1] <= w[0] + 1e-10), "{gaps:?}");
    }

    #[test]
    fn rmse_values() {
        let a = DVector::from_vec(vec![0.0, 0.0]);
        let b = DVector::from_vec(vec![3.0, 4.0]);
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        assert_relative_eq!(rmse(&a, &b).unwrap(), 3.535_533_905_932_737_6, epsilon = 1e-15);
        let p = DVector::from_vec(vec![1.0, 5.0, -2.0]);
        let t = DVector::from_vec(vec![0.5, 4.0, 1.0]);
        let pp = DVector::from_vec(vec![-2.0, 1.0, 5.0]);
        let tp = DVector::from_vec(vec![1.0, 0.5, 4.0]);
        assert_relative_eq!(rmse(&p, &t).unwrap(), rmse(&pp, &tp).unwrap(), epsilon = 1e-15);
        assert!(rmse(&a, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn csv_columns() {
        let r = PredictionResult {
            mean: DVector::from_vec(vec![1.0, 2.0]),
            variance: DVector::from_vec(vec![0.5, 0.25]),
            covariance: None,
            method: Method::Exact,
            cg_iterations: None,
        };
        let mut out = Vec::new();
        r.write_csv(Some(&DVector::from_vec(vec![1.5, 2.0])), &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "index,mean,variance,truth,abs_err\n0,1,0.5,1.5,0.5\n1,2,0.25,2,0\n"
        );
    }
}
