//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

/// Relative singular-value cutoff used for ranks and pseudoinverses.
pub const RANK_RTOL: f64 = 1e-10;

/// Tie-breaking sign with sign(0) = +1.
#[inline]
pub fn sign0(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Soft-threshold operator.
#[inline]
pub fn soft(x: f64, k: f64) -> f64 {
    if x > k {
        x - k
    } else if x < -k {
        x + k
    } else {
        0.0
    }
}

/// Thin singular value decomposition `m = u diag(s) v^T`, singular values descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl Svd {
    pub fn recompose(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (k, &s) in self.s.iter().enumerate() {
            us.column_mut(k).scale_mut(s);
        }
        us * self.v.transpose()
    }

    /// Number of singular values above `RANK_RTOL * s_max`.
    pub fn rank(&self) -> usize {
        let s1 = self.s.first().copied().unwrap_or(0.0);
        if s1 == 0.0 {
            return 0;
        }
        self.s.iter().filter(|&&s| s > RANK_RTOL * s1).count()
    }
}

/// One-sided Jacobi SVD. Slower than bidiagonalisation but accurate for
/// small, nearly rank-deficient matrices, where nalgebra's `svd` can return
/// factors that do not reproduce the input.
pub fn svd(m: &DMatrix<f64>) -> Svd {
    let (r, c) = m.shape();
    if r < c {
        let t = svd(&m.transpose());
        return Svd { u: t.v, s: t.s, v: t.u };
    }
    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(c, c);
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..c {
            for q in (p + 1)..c {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for mat in [&mut a, &mut v] {
                    for i in 0..mat.nrows() {
                        let xp = mat[(i, p)];
                        let xq = mat[(i, q)];
                        mat[(i, p)] = cs * xp - sn * xq;
                        mat[(i, q)] = sn * xp + cs * xq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<(usize, f64)> = (0..c).map(|k| (k, a.column(k).norm())).collect();
    order.sort_by(|x, y| y.1.total_cmp(&x.1));
    let mut u = DMatrix::zeros(r, c);
    let mut vs = DMatrix::zeros(c, c);
    let mut s = Vec::with_capacity(c);
    for (dst, &(k, sk)) in order.iter().enumerate() {
        if sk > 0.0 {
            u.set_column(dst, &(a.column(k) / sk));
        }
        vs.set_column(dst, &v.column(k));
        s.push(sk);
    }
    Svd { u, s, v: vs }
}

pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    svd(m).rank()
}

/// Moore-Penrose pseudoinverse with cutoff `RANK_RTOL * sigma_1`.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let f = svd(m);
    let k = f.rank();
    let mut vs = f.v.columns(0, k).into_owned();
    for j in 0..k {
        vs.column_mut(j).scale_mut(1.0 / f.s[j]);
    }
    vs * f.u.columns(0, k).transpose()
}

/// Subtract each column's mean, i.e. (I - 11^T/n) M.
pub fn center_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows() as f64;
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    out
}

pub fn center_vector(v: &DVector<f64>) -> DVector<f64> {
    let mean = v.mean();
    v.add_scalar(-mean)
}

/// Largest eigenvalue of A^T A by power iteration.
pub fn gram_lmax(a: &DMatrix<f64>, iters: usize, tol: f64) -> f64 {
    let k = a.ncols();
    if k == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let mut v = DVector::from_fn(k, |j, _| 1.0 + 0.5 * ((j * 7919 % 97) as f64 / 97.0));
    v /= v.norm();
    let mut lam = 0.0;
    for _ in 0..iters {
        let w = a.tr_mul(&(a * &v));
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / nw;
        if (next - lam).abs() <= tol * next.abs().max(1.0) {
            lam = next;
            break;
        }
        lam = next;
    }
    lam.max(0.0)
}

/// Orthonormal basis (as columns) of the row space of `m`.
pub fn row_space_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    let d = m.ncols();
    if m.nrows() == 0 {
        return DMatrix::zeros(d, 0);
    }
    let f = svd(m);
    f.v.columns(0, f.rank()).into_owned()
}
