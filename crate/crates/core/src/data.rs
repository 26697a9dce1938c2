//! Datasets: simulation, CSV I/O, splitting and standardization.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{marginal_covariance, HyperParams, MultiKernel};
use crate::linalg::cholesky;
use crate::seed::stream_rng;

/// How input coordinates are drawn; every coordinate is independent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InputDistribution {
    Gaussian { sd: f64 },
    Uniform { low: f64, high: f64 },
}

impl InputDistribution {
    fn validate(&self) -> Result<()> {
        match *self {
            Self::Gaussian { sd } if sd > 0.0 && sd.is_finite() => Ok(()),
            Self::Uniform { low, high } if low < high && low.is_finite() && high.is_finite() => {
                Ok(())
            }
            _ => Err(Error::InvalidArgument(format!("invalid input distribution {self:?}"))),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Gaussian { sd } => sd * rng.sample::<f64, _>(StandardNormal),
            Self::Uniform { low, high } => rng.random_range(low..high),
        }
    }
}

/// Closed-form benchmark surfaces for noisy-function datasets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestFunction {
    Levy,
    Griewank,
}

impl TestFunction {
    pub fn eval(self, x: &[f64]) -> f64 {
        use std::f64::consts::PI;
        match self {
            Self::Levy => {
                let w: Vec<f64> = x.iter().map(|v| 1.0 + (v - 1.0) / 4.0).collect();
                let d = w.len();
                let head = (PI * w[0]).sin().powi(2);
                let mid: f64 = w[..d - 1]
                    .iter()
                    .map(|wi| (wi - 1.0).powi(2) * (1.0 + 10.0 * (PI * wi + 1.0).sin().powi(2)))
                    .sum();
                let wd = w[d - 1];
                let tail = (wd - 1.0).powi(2) * (1.0 + (2.0 * PI * wd).sin().powi(2));
                head + mid + tail
            }
            Self::Griewank => {
                let sum: f64 = x.iter().map(|v| v * v / 4000.0).sum();
                let prod: f64 = x
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (v / ((i + 1) as f64).sqrt()).cos())
                    .product();
                sum - prod + 1.0
            }
        }
    }

    /// Usual evaluation box, per coordinate.
    pub fn domain(self) -> (f64, f64) {
        match self {
            Self::Levy => (-10.0, 10.0),
            Self::Griewank => (-600.0, 600.0),
        }
    }
}

/// How a simulated dataset was generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "lowercase")]
pub enum Provenance {
    Gp {
        kernels: MultiKernel,
        theta: HyperParams,
        inputs: InputDistribution,
        seed: u64,
    },
    Function {
        function: TestFunction,
        noise_sd: f64,
        seed: u64,
    },
}

/// Per-column location and scale used to standardize a train/test pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub x_mean: Vec<f64>,
    pub x_sd: Vec<f64>,
    pub y_mean: f64,
    pub y_sd: f64,
}

impl Normalization {
    pub fn apply(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let xn = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.x_mean[j]) / self.x_sd[j]
        });
        let yn = y.map(|v| (v - self.y_mean) / self.y_sd);
        (xn, yn)
    }

    pub fn invert(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let xr = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            x[(i, j)] * self.x_sd[j] + self.x_mean[j]
        });
        (xr, y.map(|v| self.invert_response(v)))
    }

    pub fn invert_response(&self, v: f64) -> f64 {
        v * self.y_sd + self.y_mean
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    pub provenance: Option<Provenance>,
    pub normalization: Option<Normalization>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                what: "responses vs input rows",
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if x.ncols() == 0 {
            return Err(Error::InvalidArgument("inputs need at least one column".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset"));
        }
        Ok(Self {
            x,
            y,
            provenance: None,
            normalization: None,
        })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(rows),
            y: self.y.select_rows(rows),
            provenance: self.provenance.clone(),
            normalization: self.normalization.clone(),
        }
    }
}

/// `n × dim` inputs with independent coordinates from `inputs`.
pub fn draw_inputs(inputs: InputDistribution, n: usize, dim: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 || dim == 0 {
        return Err(Error::InvalidArgument("simulation needs n ≥ 1 and dim ≥ 1".into()));
    }
    inputs.validate()?;
    let mut rng = stream_rng(seed, "inputs", 0);
    Ok(DMatrix::from_fn(n, dim, |_, _| inputs.sample(&mut rng)))
}

/// Draws `X` from `inputs` and `y ~ N(0, K_n(θ_true))` as `y = L z`.
pub fn simulate_gp(
    kernels: &MultiKernel,
    theta_true: &HyperParams,
    n: usize,
    inputs: InputDistribution,
    dim: usize,
    seed: u64,
) -> Result<Dataset> {
    let x = draw_inputs(inputs, n, dim, seed)?;
    let y = draw_gp_responses(kernels, theta_true, &x, seed)?;
    let mut ds = Dataset::new(x, y)?;
    ds.provenance = Some(Provenance::Gp {
        kernels: kernels.clone(),
        theta: theta_true.clone(),
        inputs,
        seed,
    });
    Ok(ds)
}

/// `y = L z` for fixed inputs, `L` the Cholesky factor of `K_n(θ_true)`.
pub fn draw_gp_responses(
    kernels: &MultiKernel,
    theta_true: &HyperParams,
    x: &DMatrix<f64>,
    seed: u64,
) -> Result<DVector<f64>> {
    let k = marginal_covariance(kernels, theta_true, x)?;
    let factor = cholesky(&k)?;
    let mut rng = stream_rng(seed, "responses", 0);
    let z = DVector::from_fn(x.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(factor.l() * z)
}

/// Inputs uniform on the function's box, responses `f(x) + N(0, noise_sd²)`.
pub fn simulate_function(
    function: TestFunction,
    n: usize,
    dim: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 || dim == 0 {
        return Err(Error::InvalidArgument("simulation needs n ≥ 1 and dim ≥ 1".into()));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise sd must be ≥ 0, got {noise_sd}")));
    }
    let (low, high) = function.domain();
    let mut rng = stream_rng(seed, "inputs", 0);
    let x = DMatrix::from_fn(n, dim, |_, _| rng.random_range(low..high));
    let mut noise = stream_rng(seed, "responses", 0);
    let y = DVector::from_fn(n, |i, _| {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        function.eval(&row) + noise_sd * noise.sample::<f64, _>(StandardNormal)
    });
    let mut ds = Dataset::new(x, y)?;
    ds.provenance = Some(Provenance::Function {
        function,
        noise_sd,
        seed,
    });
    Ok(ds)
}

/// Random partition of `0..n` into `⌊fraction·n⌋` training and the rest test indices.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n_train = (train_fraction * n as f64).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::InvalidArgument(format!(
            "split of {n} rows at {train_fraction} leaves an empty side"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream_rng(seed, "split", 0));
    let test = perm.split_off(n_train);
    Ok((perm, test))
}

pub fn train_test_split(
    dataset: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(dataset.len(), train_fraction, seed)?;
    Ok((dataset.select(&train), dataset.select(&test)))
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Standardizes both sets with the training means and sample (n − 1) standard deviations.
pub fn normalize(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset, Normalization)> {
    if train.dim() != test.dim() {
        return Err(Error::DimensionMismatch {
            what: "test input dimension",
            expected: train.dim(),
            got: test.dim(),
        });
    }
    if train.len() < 2 {
        return Err(Error::InvalidArgument("normalization needs at least two training rows".into()));
    }
    let mut x_mean = Vec::with_capacity(train.dim());
    let mut x_sd = Vec::with_capacity(train.dim());
    for j in 0..train.dim() {
        let (m, s) = mean_sd(train.x.column(j).iter().copied());
        if !(s > 0.0) {
            return Err(Error::InvalidArgument(format!("input column {} is constant", j + 1)));
        }
        x_mean.push(m);
        x_sd.push(s);
    }
    let (y_mean, y_sd) = mean_sd(train.y.iter().copied());
    if !(y_sd > 0.0) {
        return Err(Error::InvalidArgument("response is constant".into()));
    }
    let meta = Normalization {
        x_mean,
        x_sd,
        y_mean,
        y_sd,
    };
    let wrap = |ds: &Dataset| {
        let (x, y) = meta.apply(&ds.x, &ds.y);
        Dataset {
            x,
            y,
            provenance: ds.provenance.clone(),
            normalization: Some(meta.clone()),
        }
    };
    Ok((wrap(train), wrap(test), meta))
}

/// Shortest representation that parses back to the same bits (at most 17
/// significant digits); exponent form outside `[1e-4, 1e15)`.
pub fn format_float(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn header_for(dim: usize) -> Vec<String> {
    (1..=dim).map(|j| format!("x{j}")).chain(["y".to_string()]).collect()
}

/// Reads `x1,…,xD,y` CSV; the last column is the response.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < 2 || header.iter().all(|h| h.is_empty()) {
        return Err(Error::Data {
            path: path.to_path_buf(),
            message: "no data rows".into(),
        });
    }
    let expected = header_for(header.len() - 1);
    if header != expected {
        return Err(Error::Data {
            path: path.to_path_buf(),
            message: format!("header must be {}, found {}", expected.join(","), header.join(",")),
        });
    }
    let cols = header.len();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 2;
        if rec.len() != cols {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row,
                column: rec.len().min(cols) + 1,
                message: format!("expected {cols} fields, found {}", rec.len()),
            });
        }
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row,
                column: c + 1,
                message: format!("not a number: {field:?}"),
            })?;
            if c + 1 == cols {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    if ys.is_empty() {
        return Err(Error::Data {
            path: path.to_path_buf(),
            message: "no data rows".into(),
        });
    }
    let x = DMatrix::from_row_slice(ys.len(), cols - 1, &xs);
    Dataset::new(x, DVector::from_vec(ys)).map_err(|e| Error::Data {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", header_for(dataset.dim()).join(","))?;
    for i in 0..dataset.len() {
        let mut fields: Vec<String> = dataset.x.row(i).iter().map(|v| format_float(*v)).collect();
        fields.push(format_float(dataset.y[i]));
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}
