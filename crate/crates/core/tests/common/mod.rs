#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use scorekit::smnd::ActivationPattern;
use scorekit::{Activation, DatasetND};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn random_nd(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DatasetND {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| normal_vec(rng, d)).collect();
    DatasetND::from_rows(&rows).unwrap()
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Independent assembly of sum_i D_i X W_i as an explicit quadratic in the
/// stacked variable, written without the library's stacking helpers.
pub struct QuadraticOracle {
    pub g: DMatrix<f64>,
    pub lin: DMatrix<f64>,
    pub d: usize,
}

impl QuadraticOracle {
    pub fn sm(data: &DatasetND, pats: &[ActivationPattern], act: Activation) -> Self {
        let (n, d) = (data.n(), data.d());
        let p = pats.len();
        let diag = |pat: &ActivationPattern, k: usize| -> f64 {
            match (act, pat.mask[k]) {
                (_, true) => 1.0,
                (Activation::Relu, false) => 0.0,
                (Activation::Abs, false) => -1.0,
            }
        };
        // G[(i,a),(j,b)] = sum_k D_i[k] D_j[k] x_k[a] x_k[b]
        let mut g = DMatrix::zeros(p * d, p * d);
        for i in 0..p {
            for j in 0..p {
                for a in 0..d {
                    for b in 0..d {
                        let mut s = 0.0;
                        for k in 0..n {
                            s += diag(&pats[i], k) * diag(&pats[j], k) * data.x()[(k, a)] * data.x()[(k, b)];
                        }
                        g[(i * d + a, j * d + b)] = s;
                    }
                }
            }
        }
        let mut lin = DMatrix::zeros(p * d, d);
        for i in 0..p {
            let tr: f64 = (0..n).map(|k| diag(&pats[i], k)).sum();
            for a in 0..d {
                lin[(i * d + a, a)] = tr;
            }
        }
        QuadraticOracle { g, lin, d }
    }

    pub fn objective(&self, w: &DMatrix<f64>) -> f64 {
        0.5 * (w.transpose() * &self.g * w).trace() + (self.lin.transpose() * w).trace()
    }

    /// Accelerated gradient descent restricted to range(G), the projector
    /// coming from a symmetric eigendecomposition.
    pub fn projected_gradient(&self, iters: usize) -> DMatrix<f64> {
        let eig = SymmetricEigen::new(self.g.clone());
        let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let m = self.g.nrows();
        let mut proj = DMatrix::zeros(m, m);
        for (k, &ev) in eig.eigenvalues.iter().enumerate() {
            if ev > 1e-9 * lmax {
                let v = eig.eigenvectors.column(k);
                proj += &v * v.transpose();
            }
        }
        let step = 1.0 / lmax.max(1e-300);
        let mut w = DMatrix::zeros(m, self.d);
        let mut y = w.clone();
        let mut t = 1.0f64;
        let mut f_prev = self.objective(&w);
        for _ in 0..iters {
            let grad = &proj * (&self.g * &y + &self.lin);
            let next = &y - grad * step;
            let f = self.objective(&next);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            if f > f_prev {
                y = w.clone();
                t = 1.0;
                continue;
            }
            y = &next + (&next - &w) * ((t - 1.0) / t_next);
            w = next;
            t = t_next;
            f_prev = f;
        }
        w
    }
}
