//! Dense symmetric eigen-solvers and a small Cholesky, sized for this
//! crate's needs: covariance/Gram matrices up to a few thousand rows, and
//! bandwidth matrices up to ~10 dims.

use crate::error::Error;
use crate::Result;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// (eigenvalues, eigenvectors as columns), sorted by decreasing eigenvalue.
/// O(n^3) per sweep; intended for matrices up to a few hundred rows.
pub fn jacobi_eig(a: &ArrayView2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut m = a.to_owned();
    let mut v: Array2<f64> = Array2::eye(n);
    let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[[p, q]] * m[[p, q]];
            }
        }
        if off.sqrt() < 1e-14 * norm {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| m[[j, j]].partial_cmp(&m[[i, i]]).unwrap());
    let values: Vec<f64> = idx.iter().map(|&i| m[[i, i]]).collect();
    let mut vectors = Array2::zeros((n, n));
    for (col, &i) in idx.iter().enumerate() {
        vectors.column_mut(col).assign(&v.column(i));
    }
    (values, vectors)
}

/// In-place modified Gram-Schmidt; columns become orthonormal.
fn orthonormalize(q: &mut Array2<f64>) {
    let k = q.ncols();
    for j in 0..k {
        for i in 0..j {
            let dot = q.column(i).dot(&q.column(j));
            let qi = q.column(i).to_owned();
            q.column_mut(j).scaled_add(-dot, &qi);
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        if norm > 1e-300 {
            q.column_mut(j).mapv_inplace(|x| x / norm);
        }
    }
}

/// Top-l eigenpairs of a symmetric matrix by block subspace iteration with
/// Rayleigh-Ritz extraction. Deterministic (fixed internal start).
pub fn sym_eig_topl(a: &ArrayView2<f64>, l: usize) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = a.nrows();
    if l > n {
        return Err(Error::LatentTooLarge { l, n, d: n });
    }
    if n <= 160 {
        let (vals, vecs) = jacobi_eig(a);
        let mut top = Array2::zeros((n, l));
        for c in 0..l {
            top.column_mut(c).assign(&vecs.column(c));
        }
        return Ok((vals[..l].to_vec(), top));
    }
    let block = (l + 8).min(n);
    let mut rng = crate::rng::rng_from(0x5eed_b10c);
    let mut q = Array2::from_shape_fn((n, block), |_| rng.gen::<f64>() - 0.5);
    orthonormalize(&mut q);
    let mut best: Option<(Vec<f64>, Array2<f64>)> = None;
    for _ in 0..1000 {
        let y = a.dot(&q);
        // Rayleigh-Ritz on the current subspace
        let t = q.t().dot(&y);
        let (vals, s) = jacobi_eig(&t.view());
        let ritz = q.dot(&s);
        // residual ||A v - lambda v|| per Ritz pair, via R = Y S - (Q S) L
        let mut resid = y.dot(&s);
        for (c, &lam) in vals.iter().enumerate() {
            let col = ritz.column(c).to_owned();
            resid.column_mut(c).scaled_add(-lam, &col);
        }
        let scale = vals[0].abs().max(1e-300);
        let worst = (0..l)
            .map(|c| resid.column(c).dot(&resid.column(c)).sqrt())
            .fold(0.0f64, f64::max);
        if worst < 1e-9 * scale {
            best = Some((vals[..l].to_vec(), ritz));
            break;
        }
        best = Some((vals[..l].to_vec(), ritz));
        let mut next = y;
        orthonormalize(&mut next);
        q = next;
    }
    let (vals, ritz) = best.expect("at least one iteration runs");
    let mut vectors = Array2::zeros((n, l));
    for c in 0..l {
        vectors.column_mut(c).assign(&ritz.column(c));
    }
    Ok((vals, vectors))
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::NotPositiveDefinite);
                }
                l[[i, j]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Solves L x = b for lower-triangular L.
pub fn solve_lower(l: &ArrayView2<f64>, b: &[f64]) -> Vec<f64> {
    let n = l.nrows();
    let mut x = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[[i, k]] * x[k];
        }
        x[i] = sum / l[[i, i]];
    }
    x
}

/// Column means of a matrix.
pub fn column_means(x: &ArrayView2<f64>) -> Array1<f64> {
    x.mean_axis(Axis(0)).expect("nonempty matrix")
}
