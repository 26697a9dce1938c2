//! Dense symmetric linear algebra: Cholesky, triangular solves, log-determinant,
//! eigenvalues and conjugate gradients.

use nalgebra::{DMatrix, DVector, SymmetricTridiagonal};

use crate::error::{Error, Result};

/// Default matrix size limit for [`sym_eigenvalues`].
pub const DEFAULT_EIGEN_CAP: usize = 4096;

/// QL sweeps allowed per eigenvalue before giving up.
const QL_MAX_SWEEPS: usize = 60;

/// Lower-triangular `L` with `K = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    l: DMatrix<f64>,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// `K x = b`, for a vector or a block of right-hand sides.
    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if b.nrows() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "right-hand side rows",
                expected: self.dim(),
                got: b.nrows(),
            });
        }
        let mut x = b.clone();
        self.l.solve_lower_triangular_unchecked_mut(&mut x);
        self.l.tr_solve_lower_triangular_unchecked_mut(&mut x);
        Ok(x)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if b.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "right-hand side length",
                expected: self.dim(),
                got: b.len(),
            });
        }
        let mut x = b.clone();
        self.l.solve_lower_triangular_unchecked_mut(&mut x);
        self.l.tr_solve_lower_triangular_unchecked_mut(&mut x);
        Ok(x)
    }

    /// `L⁻¹ b`.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if b.nrows() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "right-hand side rows",
                expected: self.dim(),
                got: b.nrows(),
            });
        }
        let mut x = b.clone();
        self.l.solve_lower_triangular_unchecked_mut(&mut x);
        Ok(x)
    }

    /// `L⁻¹` (not `K⁻¹`).
    pub fn inverse_lower(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut inv = DMatrix::zeros(n, n);
        let l = self.l.as_slice();
        // Column j of L⁻¹ vanishes above row j, so each solve starts on the diagonal.
        for (j, col) in inv.as_mut_slice().chunks_mut(n).enumerate() {
            col[j] = 1.0;
            for k in j..n {
                let lk = &l[k * n..(k + 1) * n];
                let xk = col[k] / lk[k];
                col[k] = xk;
                if xk != 0.0 {
                    for (c, v) in col[k + 1..].iter_mut().zip(&lk[k + 1..]) {
                        *c -= xk * v;
                    }
                }
            }
        }
        inv
    }

    /// `K⁻¹ = L⁻ᵀ L⁻¹`.
    pub fn inverse(&self) -> DMatrix<f64> {
        let linv = self.inverse_lower();
        linv.transpose() * &linv
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Cholesky factorization. Only the lower triangle of `k` is read.
///
/// No jitter is added: a non-positive pivot is reported as
/// [`Error::NotPositiveDefinite`].
pub fn cholesky(k: &DMatrix<f64>) -> Result<CholeskyFactor> {
    let n = k.nrows();
    if k.ncols() != n {
        return Err(Error::DimensionMismatch {
            what: "square matrix",
            expected: n,
            got: k.ncols(),
        });
    }
    let mut a = k.clone();
    {
        let s = a.as_mut_slice();
        // Right-looking, column oriented: every inner loop runs down a column.
        for j in 0..n {
            let pivot = s[j * n + j];
            if !(pivot > 0.0) || !pivot.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j, value: pivot });
            }
            let d = pivot.sqrt();
            s[j * n + j] = d;
            for v in &mut s[j * n + j + 1..(j + 1) * n] {
                *v /= d;
            }
            let (head, tail) = s.split_at_mut((j + 1) * n);
            let col_j = &head[j * n..];
            for (off, col_k) in tail.chunks_mut(n).enumerate() {
                let kk = j + 1 + off;
                let ljk = col_j[kk];
                if ljk != 0.0 {
                    for i in kk..n {
                        col_k[i] -= col_j[i] * ljk;
                    }
                }
            }
        }
    }
    for j in 1..n {
        for i in 0..j {
            a[(i, j)] = 0.0;
        }
    }
    Ok(CholeskyFactor { l: a })
}

pub fn solve(factor: &CholeskyFactor, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    factor.solve(b)
}

/// `log|K| = 2 Σ log L_ii`.
pub fn log_det(factor: &CholeskyFactor) -> f64 {
    factor.log_det()
}

/// Eigenvalues of a symmetric matrix, largest first.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenSpectrum {
    values: Vec<f64>,
}

impl EigenSpectrum {
    /// Sorts the given values into descending order.
    pub fn from_values(mut values: Vec<f64>) -> Self {
        values.sort_by(|a, b| b.total_cmp(a));
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

pub fn sym_eigenvalues(k: &DMatrix<f64>) -> Result<EigenSpectrum> {
    sym_eigenvalues_capped(k, DEFAULT_EIGEN_CAP)
}

/// Householder tridiagonalization followed by implicit-shift QL on the
/// tridiagonal. Eigenvectors are never formed.
pub fn sym_eigenvalues_capped(k: &DMatrix<f64>, cap: usize) -> Result<EigenSpectrum> {
    let n = k.nrows();
    if k.ncols() != n {
        return Err(Error::DimensionMismatch {
            what: "square matrix",
            expected: n,
            got: k.ncols(),
        });
    }
    if n > cap {
        return Err(Error::InvalidArgument(format!(
            "matrix of size {n} exceeds the eigensolver cap {cap}"
        )));
    }
    match n {
        0 => return Ok(EigenSpectrum { values: vec![] }),
        1 => return Ok(EigenSpectrum { values: vec![k[(0, 0)]] }),
        _ => {}
    }
    let (diag, off) = SymmetricTridiagonal::new(k.clone()).unpack_tridiagonal();
    let mut d: Vec<f64> = diag.iter().copied().collect();
    let mut e: Vec<f64> = off.iter().copied().collect();
    e.push(0.0);
    tridiagonal_ql(&mut d, &mut e)?;
    Ok(EigenSpectrum::from_values(d))
}

/// Implicit QL with Wilkinson-style shifts. `e[i]` couples `d[i]` and `d[i+1]`;
/// the last entry of `e` is scratch. Eigenvalues overwrite `d`.
fn tridiagonal_ql(d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    // Deflate against the norm of the whole matrix: near-null clusters never
    // meet a test relative to their own tiny diagonal.
    let norm = d.iter().zip(e.iter()).map(|(a, b)| a.abs() + b.abs()).fold(0.0, f64::max);
    for l in 0..n {
        let mut sweeps = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd.max(norm) {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            sweeps += 1;
            if sweeps > QL_MAX_SWEEPS {
                return Err(Error::EigenNotConverged(sweeps - 1));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub enum Preconditioner {
    None,
    /// Inverse of the operator's diagonal.
    Jacobi(DVector<f64>),
}

impl Preconditioner {
    pub fn jacobi(diagonal: &DVector<f64>) -> Result<Self> {
        if diagonal.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::InvalidArgument(
                "Jacobi preconditioner needs a positive diagonal".into(),
            ));
        }
        Ok(Self::Jacobi(diagonal.map(|d| 1.0 / d)))
    }

    fn apply(&self, r: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::None => r.clone(),
            Self::Jacobi(inv) => r.component_mul(inv),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CgSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
    /// Final `‖A x − b‖ / ‖b‖` as tracked by the recurrence.
    pub residual: f64,
    pub converged: bool,
}

/// Preconditioned conjugate gradients for a symmetric positive definite operator.
///
/// Stops once the relative residual drops to `tol` or after `max_iter`
/// iterations; the latter is reported through `converged = false`.
pub fn cg_solve<F>(
    matvec: F,
    b: &DVector<f64>,
    tol: f64,
    max_iter: usize,
    precond: &Preconditioner,
) -> Result<CgSolution>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("CG tolerance must be positive, got {tol}")));
    }
    if let Preconditioner::Jacobi(inv) = precond {
        if inv.len() != b.len() {
            return Err(Error::DimensionMismatch {
                what: "preconditioner length",
                expected: b.len(),
                got: inv.len(),
            });
        }
    }
    let n = b.len();
    let b_norm = b.norm();
    let mut x = DVector::zeros(n);
    if b_norm == 0.0 {
        return Ok(CgSolution {
            x,
            iterations: 0,
            residual: 0.0,
            converged: true,
        });
    }
    let mut r = b.clone();
    let mut z = precond.apply(&r);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    let mut residual = 1.0;
    for it in 1..=max_iter {
        let ap = matvec(&p);
        if ap.len() != n {
            return Err(Error::DimensionMismatch {
                what: "operator output length",
                expected: n,
                got: ap.len(),
            });
        }
        let curvature = p.dot(&ap);
        if !(curvature > 0.0) {
            return Err(Error::CgBreakdown {
                iteration: it,
                curvature,
            });
        }
        let alpha = rz / curvature;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        residual = r.norm() / b_norm;
        if residual <= tol {
            return Ok(CgSolution {
                x,
                iterations: it,
                residual,
                converged: true,
            });
        }
        z = precond.apply(&r);
        let rz_next = r.dot(&z);
        let beta = rz_next / rz;
        rz = rz_next;
        p = &z + p * beta;
    }
    Ok(CgSolution {
        x,
        iterations: max_iter,
        residual,
        converged: false,
    })
}
