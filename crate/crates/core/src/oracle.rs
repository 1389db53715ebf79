//! Dense ground-truth linear algebra used to audit every other module.
//!
//! Everything here is O(n³) and intended for instances of a few hundred
//! nodes at most.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::graph::{laplacian, WeightedGraph};

/// Relative tolerance used to decide which eigenvalues belong to the kernel.
pub const KERNEL_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("matrix is not symmetric (max deviation {0:e})")]
    Asymmetric(f64),
    #[error("matrices have different kernels (residual {0:e})")]
    KernelMismatch(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn symmetric_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>, OracleError> {
    if m.nrows() != m.ncols() {
        return Err(OracleError::Dimension(m.nrows(), m.ncols()));
    }
    let dev = asymmetry(m);
    if dev > 1e-10 * (1.0 + m.amax()) {
        return Err(OracleError::Asymmetric(dev));
    }
    let sym = (m + m.transpose()) * 0.5;
    Ok(SymmetricEigen::new(sym))
}

fn cutoff(eig: &DVector<f64>) -> f64 {
    let top = eig.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    top * KERNEL_TOL
}

/// Moore–Penrose pseudo-inverse of a symmetric PSD matrix.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>, OracleError> {
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eig = symmetric_eigen(m)?;
    let tol = cutoff(&eig.eigenvalues);
    let mut out = DMatrix::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() > tol && lambda.abs() > 0.0 {
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / lambda;
        }
    }
    Ok(out)
}

/// Pseudo-inverse of the Laplacian of a connected graph, via
/// `L† = (L + J/n)⁻¹ − J/n`. Falls back to the eigen route when the shifted
/// matrix is not positive definite (disconnected input).
pub fn laplacian_pinv(l: &DMatrix<f64>) -> Result<DMatrix<f64>, OracleError> {
    let n = l.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let j = DMatrix::from_element(n, n, 1.0 / n as f64);
    match (l + &j).cholesky() {
        Some(ch) => {
            let inv = ch.inverse();
            // Guard against a numerically singular shift.
            if inv.iter().all(|x| x.is_finite()) && (l * &inv * l - l).amax() <= 1e-6 * (1.0 + l.amax()) {
                Ok(inv - j)
            } else {
                pseudo_inverse(l)
            }
        }
        None => pseudo_inverse(l),
    }
}

/// `A[T,T] − A[T,S] A[S,S]† A[S,T]` with rows/columns ordered as in `t`.
pub fn schur_complement(a: &DMatrix<f64>, t: &[usize]) -> Result<DMatrix<f64>, OracleError> {
    let n = a.nrows();
    let mut in_t = vec![false; n];
    for &x in t {
        if x >= n {
            return Err(OracleError::Dimension(x, n));
        }
        in_t[x] = true;
    }
    let s: Vec<usize> = (0..n).filter(|&x| !in_t[x]).collect();
    let att = a.select_rows(t).select_columns(t);
    if s.is_empty() {
        return Ok(att);
    }
    let ass = a.select_rows(&s).select_columns(&s);
    let ats = a.select_rows(t).select_columns(&s);
    let ass_pinv = match ass.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => pseudo_inverse(&ass)?,
    };
    let sc = att - &ats * ass_pinv * ats.transpose();
    Ok((&sc + sc.transpose()) * 0.5)
}

/// Schur complement of a graph Laplacian onto `t`.
pub fn laplacian_schur(g: &WeightedGraph, t: &[usize]) -> DMatrix<f64> {
    schur_complement(&laplacian(g), t).expect("Laplacians are symmetric")
}

/// Extremal generalized eigenvalues of the pencil `(B, A)` on `range(A)`.
///
/// Errors when `B` does not vanish on `ker(A)` or when `B` is singular on
/// `range(A)` (so the two kernels differ).
pub fn generalized_eigen_range(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<(f64, f64), OracleError> {
    if a.shape() != b.shape() {
        return Err(OracleError::Dimension(a.nrows(), b.nrows()));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok((1.0, 1.0));
    }
    let eig = symmetric_eigen(a)?;
    symmetric_eigen(b)?;
    let tol = cutoff(&eig.eigenvalues);
    let range: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] > tol).collect();
    let kernel: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] <= tol).collect();
    let scale = b.amax().max(a.amax()).max(f64::MIN_POSITIVE);
    if !kernel.is_empty() {
        let k = eig.eigenvectors.select_columns(&kernel);
        let leak = (b * &k).amax();
        if leak > KERNEL_TOL * scale * (n as f64).sqrt() {
            return Err(OracleError::KernelMismatch(leak / scale));
        }
    }
    if range.is_empty() {
        return Ok((1.0, 1.0));
    }
    let u = eig.eigenvectors.select_columns(&range);
    let inv_sqrt = DVector::from_iterator(range.len(), range.iter().map(|&k| 1.0 / eig.eigenvalues[k].sqrt()));
    let mut p = u.transpose() * b * &u;
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            p[(i, j)] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    let p = (&p + p.transpose()) * 0.5;
    let vals = SymmetricEigen::new(p).eigenvalues;
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo <= 1e-10 * hi.max(1.0) {
        return Err(OracleError::KernelMismatch(lo));
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxCheck {
    pub holds: bool,
    pub lo: f64,
    pub hi: f64,
    /// The generalized eigenvalue farthest (in log scale) from 1.
    pub witness: f64,
    /// Smallest `ε` for which `A ≈_ε B` holds.
    pub achieved_eps: f64,
}

/// Decides `A ≈_ε B`, i.e. `exp(−ε)A ⪯ B ⪯ exp(ε)A`.
pub fn spectral_approx_check(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    eps: f64,
) -> Result<ApproxCheck, OracleError> {
    let (lo, hi) = generalized_eigen_range(a, b)?;
    let witness = if hi.ln().abs() >= lo.ln().abs() { hi } else { lo };
    let achieved_eps = witness.ln().abs();
    let slack = 1e-12;
    Ok(ApproxCheck {
        holds: lo >= (-eps).exp() - slack && hi <= eps.exp() + slack,
        lo,
        hi,
        witness,
        achieved_eps,
    })
}

/// Decides `lo·A ⪯ B ⪯ hi·A`.
pub fn loewner_sandwich_check(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    lo: f64,
    hi: f64,
) -> Result<bool, OracleError> {
    let (l, h) = generalized_eigen_range(a, b)?;
    let slack = 1e-9;
    Ok(l >= lo * (1.0 - slack) && h <= hi * (1.0 + slack))
}

/// `w_e · b_eᵀ L† b_e`; self-loops score zero.
pub fn leverage_score_exact(g: &WeightedGraph, e: usize) -> f64 {
    leverage_scores_exact(g)[e]
}

/// Leverage scores of every edge, sharing one pseudo-inverse.
pub fn leverage_scores_exact(g: &WeightedGraph) -> Vec<f64> {
    let lp = laplacian_pinv(&laplacian(g)).expect("Laplacians are symmetric");
    g.edges()
        .iter()
        .map(|e| {
            if e.is_loop() {
                0.0
            } else {
                e.weight * effective_resistance(&lp, e.u, e.v)
            }
        })
        .collect()
}

/// `b_{uv}ᵀ M b_{uv}` for a precomputed `M = L†`.
pub fn effective_resistance(lp: &DMatrix<f64>, u: usize, v: usize) -> f64 {
    lp[(u, u)] + lp[(v, v)] - 2.0 * lp[(u, v)]
}

pub fn mahalanobis_norm(x: &DVector<f64>, a: &DMatrix<f64>) -> f64 {
    x.dot(&(a * x)).max(0.0).sqrt()
}

/// `L† b`; components of `b` in the kernel are discarded.
pub fn exact_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, OracleError> {
    if l.nrows() != b.len() {
        return Err(OracleError::Dimension(l.nrows(), b.len()));
    }
    Ok(pseudo_inverse(l)? * b)
}

/// Edge indicator `b_e = 1_u − 1_v`.
pub fn edge_vector(n: usize, u: usize, v: usize) -> DVector<f64> {
    let mut b = DVector::zeros(n);
    b[u] += 1.0;
    b[v] -= 1.0;
    b
}

/// Removes the all-ones component.
pub fn project_mean_zero(b: &DVector<f64>) -> DVector<f64> {
    if b.is_empty() {
        return b.clone();
    }
    let mean = b.mean();
    b.map(|x| x - mean)
}
