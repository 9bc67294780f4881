//! Spectra of kernel operators through the `M x M` matrix
//! `A_kl = W(k/M, l/M) / M`, whose eigenvalues estimate the operator's
//! directly.
//!
//! Full symmetric eigendecomposition is used up to [`FULL_EIGEN_LIMIT`];
//! beyond that, power iteration with deflation. Norm-only queries on large
//! grids use Lanczos with full reorthogonalization, which resolves the
//! clustered spectral edges of random-graph difference matrices far faster
//! than power iteration.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels::{GraphonKernel, KernelClass, SamplePoint};
use crate::rng;
use crate::step::StepFunction;

pub const FULL_EIGEN_LIMIT: usize = 2000;
/// Grids above this size use Lanczos for `op2_norm`.
const LANCZOS_LIMIT: usize = 256;
const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 10_000;
const LANCZOS_MAX_STEPS: usize = 500;
const LANCZOS_TOL: f64 = 1e-9;
const DEGENERATE_TOL: f64 = 1e-12;

/// Leading eigenpairs of a kernel operator, ordered by decreasing `|lambda|`.
/// Eigenfunctions are unit-`L^2` step functions whose largest-magnitude cell
/// is positive. Order within ties of `|lambda|` is unspecified.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenfunctions: Vec<StepFunction>,
    pub grid_size: usize,
}

pub fn operator_matrix(kernel: &GraphonKernel, m: usize) -> DMatrix<f64> {
    let vals = kernel.sample_matrix(m, SamplePoint::RightEndpoint);
    let inv = 1.0 / m as f64;
    DMatrix::from_iterator(m, m, vals.into_iter().map(|v| v * inv))
}

fn normalize_sign(v: &mut [f64]) {
    let max = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if let Some(x) = v.iter().find(|x| x.abs() >= max * (1.0 - 1e-12)) {
        if *x < 0.0 {
            v.iter_mut().for_each(|e| *e = -*e);
        }
    }
}

fn start_vector(n: usize, salt: u64) -> DVector<f64> {
    let mut r = rng::stream(0x5eed_0f_5eed ^ salt, 0);
    let v = DVector::from_iterator(n, (0..n).map(|_| r.random::<f64>() - 0.5));
    let norm = v.norm();
    v / norm
}

fn full_pairs(a: DMatrix<f64>, k: usize) -> Vec<(f64, DVector<f64>)> {
    let eig = SymmetricEigen::new(a);
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].abs().total_cmp(&eig.eigenvalues[i].abs()));
    idx.into_iter()
        .take(k)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).into_owned()))
        .collect()
}

/// Power iteration on `A - sum_i lambda_i u_i u_i^T`, one pair at a time.
fn power_pairs(a: &DMatrix<f64>, k: usize) -> Result<Vec<(f64, DVector<f64>)>> {
    let n = a.nrows();
    let mut found: Vec<(f64, DVector<f64>)> = Vec::with_capacity(k);
    for idx in 0..k {
        let mut v = start_vector(n, idx as u64);
        let mut lambda = 0.0;
        let mut converged = false;
        for _ in 0..POWER_MAX_ITER {
            let mut w = a * &v;
            for (l, u) in &found {
                let c = l * u.dot(&v);
                w.axpy(-c, u, 1.0);
            }
            let next = v.dot(&w);
            let norm = w.norm();
            if norm == 0.0 {
                lambda = 0.0;
                converged = true;
                break;
            }
            v = w / norm;
            if (next - lambda).abs() <= POWER_TOL * next.abs().max(1.0) {
                lambda = next;
                converged = true;
                break;
            }
            lambda = next;
        }
        if !converged {
            return Err(Error::Numerical(format!(
                "power iteration for eigenpair {} did not converge in {POWER_MAX_ITER} iterations",
                idx + 1
            )));
        }
        found.push((lambda, v));
    }
    Ok(found)
}

/// Extreme Ritz values `(min, max)` of a symmetric matrix.
fn lanczos_extremes(a: &DMatrix<f64>) -> (f64, f64) {
    let n = a.nrows();
    let steps = n.min(LANCZOS_MAX_STEPS);
    let mut basis: Vec<DVector<f64>> = vec![start_vector(n, 0xa11)];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut extremes = (0.0, 0.0);
    let frob = a.norm().max(f64::MIN_POSITIVE);
    for j in 0..steps {
        let q = &basis[j];
        let mut w = a * q;
        let aj = q.dot(&w);
        alpha.push(aj);
        // Two passes of classical Gram-Schmidt against the whole basis.
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&w);
                w.axpy(-c, b, 1.0);
            }
        }
        let bj = w.norm();
        let breakdown = bj <= 1e-14 * frob;
        if j % 10 == 9 || j + 1 == steps || breakdown {
            let t = tridiagonal_eigen(&alpha, &beta);
            let last = t.eigenvectors.nrows() - 1;
            let (mut imin, mut imax) = (0, 0);
            for i in 0..t.eigenvalues.len() {
                if t.eigenvalues[i] < t.eigenvalues[imin] {
                    imin = i;
                }
                if t.eigenvalues[i] > t.eigenvalues[imax] {
                    imax = i;
                }
            }
            extremes = (t.eigenvalues[imin], t.eigenvalues[imax]);
            let scale = extremes.0.abs().max(extremes.1.abs()).max(f64::MIN_POSITIVE);
            let res_min = bj * t.eigenvectors[(last, imin)].abs();
            let res_max = bj * t.eigenvectors[(last, imax)].abs();
            if breakdown || res_min.max(res_max) <= LANCZOS_TOL * scale {
                break;
            }
        }
        beta.push(bj);
        basis.push(w / bj);
    }
    extremes
}

fn tridiagonal_eigen(alpha: &[f64], beta: &[f64]) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let k = alpha.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    SymmetricEigen::new(t)
}

/// Top-`k` eigenpairs (by `|lambda|`) of the kernel discretized on `m` cells.
pub fn spectrum(kernel: &GraphonKernel, m: usize, k: usize) -> Result<Spectrum> {
    if k == 0 || k > m {
        return Err(Error::domain(format!(
            "need 1 <= K <= M, got K = {k}, M = {m}"
        )));
    }
    let a = operator_matrix(kernel, m);
    let pairs = if m <= FULL_EIGEN_LIMIT {
        full_pairs(a, k)
    } else {
        let mut p = power_pairs(&a, k)?;
        p.sort_by(|x, y| y.0.abs().total_cmp(&x.0.abs()));
        p
    };
    let scale = (m as f64).sqrt();
    let mut eigenvalues = Vec::with_capacity(k);
    let mut eigenfunctions = Vec::with_capacity(k);
    for (lambda, v) in pairs {
        let mut vals: Vec<f64> = v.iter().map(|x| x * scale).collect();
        normalize_sign(&mut vals);
        eigenvalues.push(lambda);
        eigenfunctions.push(StepFunction::scalar(vals)?);
    }
    Ok(Spectrum {
        eigenvalues,
        eigenfunctions,
        grid_size: m,
    })
}

/// Finite-rank kernel `sum_{k<=K} lambda_k f_k(x) f_k(y)` from the top-`K` pairs.
pub fn truncate(kernel: &GraphonKernel, k: usize, m: usize) -> Result<GraphonKernel> {
    let s = spectrum(kernel, m, k)?;
    GraphonKernel::finite_rank(
        s.eigenvalues.into_iter().zip(s.eigenfunctions).collect(),
        KernelClass::Signed,
    )
}

/// Largest `|lambda|` of the symmetric matrix `a`.
pub fn matrix_op2_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    if a.nrows() <= LANCZOS_LIMIT {
        a.clone()
            .symmetric_eigenvalues()
            .iter()
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    } else {
        let (lo, hi) = lanczos_extremes(a);
        lo.abs().max(hi.abs())
    }
}

/// `||W||_{op,2}`: the largest `|lambda|` of the discretized operator.
pub fn op2_norm(kernel: &GraphonKernel, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::domain("grid size must be positive"));
    }
    Ok(matrix_op2_norm(&operator_matrix(kernel, m)))
}

/// Eigenvalue of largest magnitude, with sign.
pub fn leading_eigenvalue(kernel: &GraphonKernel, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::domain("grid size must be positive"));
    }
    let a = operator_matrix(kernel, m);
    if m <= FULL_EIGEN_LIMIT {
        let ev = a.symmetric_eigenvalues();
        Ok(ev
            .iter()
            .copied()
            .fold(0.0, |best: f64, v| if v.abs() > best.abs() { v } else { best }))
    } else {
        let (lo, hi) = lanczos_extremes(&a);
        Ok(if lo.abs() > hi.abs() { lo } else { hi })
    }
}

/// SIS threshold `beta_c = 1 / lambda_1`.
pub fn epidemic_threshold(kernel: &GraphonKernel, m: usize) -> Result<f64> {
    let lambda = leading_eigenvalue(kernel, m)?;
    if lambda <= DEGENERATE_TOL {
        return Err(Error::DegenerateKernel { lambda });
    }
    Ok(1.0 / lambda)
}
