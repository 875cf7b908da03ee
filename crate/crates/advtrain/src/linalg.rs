//! Small dense linear-algebra helpers.
//!
//! Everything here targets the matrix sizes this crate actually meets:
//! covariances up to a few hundred rows and Gram matrices X X^T with
//! n <= a few hundred. No external LAPACK is used so results are identical
//! across platforms.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// sign with sign(0) = 0. Used for residual ties and zero coordinates.
#[inline]
pub fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
pub fn dot(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.dot(&b)
}

#[inline]
pub fn norm2(a: ArrayView1<f64>) -> f64 {
    a.dot(&a).sqrt()
}

#[inline]
pub fn norm1(a: ArrayView1<f64>) -> f64 {
    a.iter().map(|v| v.abs()).sum()
}

/// Cholesky factorization A = L L^T for symmetric positive-definite A.
/// Returns the lower factor, or the failing pivot value when A is not PD.
pub fn cholesky(a: &Array2<f64>) -> std::result::Result<Array2<f64>, f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "cholesky needs a square matrix");
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(d);
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    Ok(l)
}

/// Solves L L^T x = b given the lower Cholesky factor.
pub fn cholesky_solve(l: &Array2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = b.to_owned();
    for i in 0..n {
        for k in 0..i {
            let v = y[k];
            y[i] -= l[(i, k)] * v;
        }
        y[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let v = y[k];
            y[i] -= l[(k, i)] * v;
        }
        y[i] /= l[(i, i)];
    }
    y
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut off = off_diag_norm(&m);
    let scale = m.iter().map(|v| v.abs()).fold(0.0f64, f64::max).max(1e-300);
    let tol = 1e-14 * scale;
    let mut sweeps = 0;
    while off > tol && sweeps < 100 {
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= tol * 1e-3 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = 0.5 * (aqq - app) / apq;
                let t = if theta == 0.0 {
                    1.0
                } else {
                    sgn(theta) / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
        off = off_diag_norm(&m);
        sweeps += 1;
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eigs
}

fn off_diag_norm(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += m[(i, j)] * m[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Largest eigenvalue of X^T X by power iteration on v -> X^T (X v).
/// Deterministic: the start vector comes from a fixed internal seed.
pub fn lambda_max_xtx(x: ArrayView2<f64>) -> f64 {
    let d = x.ncols();
    let mut g = crate::rng::GaussianStream::new(0x5EED_1A57);
    let mut v = Array1::<f64>::zeros(d);
    g.fill_standard_normal(v.as_slice_mut().unwrap());
    let nv = norm2(v.view());
    v.mapv_inplace(|t| t / nv);
    let mut lambda = 0.0;
    for _ in 0..200 {
        let xv = x.dot(&v);
        let mut w = x.t().dot(&xv);
        let nw = norm2(w.view());
        if nw == 0.0 {
            return 0.0;
        }
        w.mapv_inplace(|t| t / nw);
        let new_lambda = {
            let xw = x.dot(&w);
            xw.dot(&xw)
        };
        if (new_lambda - lambda).abs() <= 1e-10 * new_lambda.max(1.0) {
            return new_lambda;
        }
        lambda = new_lambda;
        v = w;
    }
    lambda
}

/// Ordinary least squares via the normal equations (well-conditioned, n >= d).
pub fn ols(x: ArrayView2<f64>, y: ArrayView1<f64>) -> crate::error::Result<Array1<f64>> {
    let d = x.ncols();
    let mut xtx = Array2::<f64>::zeros((d, d));
    for i in 0..x.nrows() {
        let row = x.row(i);
        for a in 0..d {
            for b in a..d {
                xtx[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
    }
    let xty = x.t().dot(&y);
    let l = cholesky(&xtx).map_err(|piv| crate::error::Error::SingularGram {
        min_eigenvalue: piv,
        condition: f64::INFINITY,
    })?;
    Ok(cholesky_solve(&l, xty.view()))
}
