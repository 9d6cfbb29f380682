//! Small numerical utilities shared by the solvers: conjugate gradients on
//! user-supplied vector spaces, Hermitian matrix exponentials, and kernel
//! extraction by singular-value gap.

use ndarray::Array2;
use ndarray_linalg::{Eigh, UPLO};

use crate::{C64, Error, Result};

/// Conjugate gradients for a self-adjoint positive (semi-)definite operator
/// given as a closure over flat complex vectors, with a user-supplied real
/// inner product. Returns the solution and the iteration count.
pub fn cg_solve<A, P>(
    apply: A,
    ip: P,
    rhs: &[C64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<C64>, usize)>
where
    A: Fn(&[C64]) -> Vec<C64>,
    P: Fn(&[C64], &[C64]) -> f64,
{
    let n = rhs.len();
    let mut x = vec![C64::new(0.0, 0.0); n];
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let rhs_norm = ip(rhs, rhs).sqrt();
    if rhs_norm == 0.0 {
        return Ok((x, 0));
    }
    let mut rs = ip(&r, &r);
    for it in 0..max_iter {
        if rs.sqrt() <= tol * rhs_norm {
            return Ok((x, it));
        }
        let ap = apply(&p);
        let pap = ip(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::Numeric(format!(
                "CG: operator not positive definite (p·Ap = {pap:.3e} at iter {it})"
            )));
        }
        let alpha = rs / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new = ip(&r, &r);
        let beta = rs_new / rs;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_new;
    }
    if rs.sqrt() <= tol * rhs_norm * 10.0 {
        // Accept a mildly stagnated solve; report the iteration budget.
        return Ok((x, max_iter));
    }
    Err(Error::Convergence(format!(
        "CG failed: relative residual {:.3e} after {max_iter} iterations",
        rs.sqrt() / rhs_norm
    )))
}

/// exp(M) for a Hermitian matrix (stored row-major n×n), via eigendecomposition.
pub fn expm_hermitian(m: &[C64], n: usize) -> Result<Vec<C64>> {
    let mut a = Array2::<C64>::zeros((n, n));
    for r in 0..n {
        for c in 0..n {
            a[(r, c)] = m[r * n + c];
        }
    }
    let (vals, vecs) = a
        .eigh(UPLO::Upper)
        .map_err(|e| Error::Numeric(format!("hermitian eigensolve failed: {e}")))?;
    // The LAPACK call sees the row-major buffer as column-major, i.e. it
    // diagonalizes Mᵀ = conj(M); reconstruct with conjugated eigenvectors.
    let mut out = vec![C64::new(0.0, 0.0); n * n];
    for r in 0..n {
        for c in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..n {
                acc += vecs[(r, k)].conj() * vals[k].exp() * vecs[(c, k)];
            }
            out[r * n + c] = acc;
        }
    }
    Ok(out)
}

/// Kernel of a (possibly rectangular) weighted operator matrix by the
/// singular-value rule: values below h²·σ_max count as kernel, and a factor-10
/// gap to the first non-kernel value is required. Returns the orthonormal
/// right-singular vectors spanning the kernel (in the weighted coordinates).
pub fn kernel_by_gap(mat: &Array2<C64>, h: f64) -> Result<Vec<Vec<C64>>> {
    kernel_by_gap_scaled(mat, h, 1.0)
}

/// `kernel_by_gap` with the threshold tightened by `scale` (≤ 1): kernel
/// values count below scale·h²·σ_max. Stacked first-order systems put their
/// discrete-kernel band well below h²σ_max while the first continuum singular
/// value can sit just above it; a smaller scale keeps both the kernel cut and
/// the empty-kernel confidence margin inside the measured gap.
pub fn kernel_by_gap_scaled(mat: &Array2<C64>, h: f64, scale: f64) -> Result<Vec<Vec<C64>>> {
    use ndarray_linalg::SVD;
    let (_, sv, vt) = mat
        .svd(false, true)
        .map_err(|e| Error::Numeric(format!("SVD failed: {e}")))?;
    let vt = vt.ok_or_else(|| Error::Numeric("SVD returned no right vectors".into()))?;
    let mut idx: Vec<usize> = (0..sv.len()).collect();
    idx.sort_by(|&a, &b| sv[a].partial_cmp(&sv[b]).unwrap());
    let smax = sv.iter().cloned().fold(0.0f64, f64::max);
    let thresh = scale * h * h * smax;
    let kdim = sv.iter().filter(|&&x| x < thresh).count();
    if kdim > 0 {
        let s_kernel_top = sv[idx[kdim - 1]];
        if kdim < sv.len() {
            let s_next = sv[idx[kdim]];
            if s_next / s_kernel_top.max(1e-300) < 10.0 {
                return Err(Error::Numeric(format!(
                    "no clear singular-value gap: kernel candidate {s_kernel_top:.3e}, next {s_next:.3e}, threshold {thresh:.3e}"
                )));
            }
        }
    } else if let Some(&first) = idx.first() {
        // Empty kernel: demand the smallest value sits clearly above threshold.
        if sv[first] < thresh * 2.0 {
            return Err(Error::Numeric(format!(
                "ambiguous empty kernel: smallest singular value {:.3e} near threshold {thresh:.3e}",
                sv[first]
            )));
        }
    }
    let ncol = mat.ncols();
    let mut basis = Vec::with_capacity(kdim);
    for &k in idx.iter().take(kdim) {
        let mut v = vec![C64::new(0.0, 0.0); ncol];
        for j in 0..ncol {
            v[j] = vt[(k, j)].conj();
        }
        basis.push(v);
    }
    Ok(basis)
}
