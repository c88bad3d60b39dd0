//! Univariate denoising score matching as a lasso over hinge features.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::baseline::loss_dsm;
use crate::data::{make_dataset_1d, Activation, Dataset1D};
use crate::error::{Error, Result};
use crate::linalg::{center_columns, center_vector, pinv, sign0};
use crate::network::{ParamsJson, TwoLayerParams};
use crate::prox::{kkt_from_gradient, solve_lasso, LassoSolution, SolveStatus};
use crate::sm1d::{abs_block, relu_blocks};

/// `min_y 0.5 ||A y + target||^2 + beta ||y||_1` with centered columns and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DSMProgram1D {
    pub a: DMatrix<f64>,
    pub target: DVector<f64>,
    pub activation: Activation,
    pub beta: f64,
    pub raw_labels: Vec<f64>,
    pub epsilon: f64,
    pub data: Dataset1D,
}

/// ChaCha stream used for perturbation noise, kept apart from data draws on stream 0.
pub const NOISE_STREAM: u64 = 1;

/// Gaussian perturbation `x + eps * delta` with denoising labels `-delta / eps`.
pub fn perturb(points: &[f64], epsilon: f64, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::BadEpsilon(epsilon));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(NOISE_STREAM);
    let delta: Vec<f64> = points.iter().map(|_| StandardNormal.sample(&mut rng)).collect();
    let noisy = points.iter().zip(&delta).map(|(x, d)| x + epsilon * d).collect();
    let labels = delta.iter().map(|d| -d / epsilon).collect();
    Ok((noisy, labels))
}

/// Builds a dataset from noisy points and reorders the labels to match the
/// sorted point order.
pub fn paired_dataset(points: &[f64], labels: &[f64]) -> Result<(Dataset1D, Vec<f64>)> {
    if points.len() != labels.len() {
        return Err(Error::LengthMismatch(format!(
            "{} points vs {} labels",
            points.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&i, &j| points[i].total_cmp(&points[j]));
    let data = make_dataset_1d(points)?;
    let sorted_labels = idx.iter().map(|&i| labels[i]).collect();
    Ok((data, sorted_labels))
}

/// Uncentered hinge features: `[A1, A2]` for ReLU, `A3 = |x_i - x_j|` for abs.
pub fn dsm_raw_design(data: &Dataset1D, activation: Activation) -> DMatrix<f64> {
    let x = data.points();
    let n = x.len();
    match activation {
        Activation::Relu => {
            let (a1, a2) = relu_blocks(x);
            let mut out = DMatrix::zeros(n, 2 * n);
            out.columns_mut(0, n).copy_from(&a1);
            out.columns_mut(n, n).copy_from(&a2);
            out
        }
        Activation::Abs => abs_block(x),
    }
}

/// `labels` must be aligned with `data.points()` (see [`paired_dataset`]).
/// `beta = 0` is accepted and solved as minimum-norm least squares.
pub fn build_dsm_program(
    data: &Dataset1D,
    labels: &[f64],
    epsilon: f64,
    activation: Activation,
    beta: f64,
) -> Result<DSMProgram1D> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::BadEpsilon(epsilon));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::BadBeta(beta));
    }
    if labels.len() != data.n() {
        return Err(Error::LengthMismatch(format!(
            "{} labels for {} points",
            labels.len(),
            data.n()
        )));
    }
    if labels.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let a = center_columns(&dsm_raw_design(data, activation));
    let target = center_vector(&DVector::from_column_slice(labels));
    Ok(DSMProgram1D {
        a,
        target,
        activation,
        beta,
        raw_labels: labels.to_vec(),
        epsilon,
        data: data.clone(),
    })
}

impl DSMProgram1D {
    pub fn width(&self) -> usize {
        self.a.ncols()
    }

    pub fn objective(&self, y: &DVector<f64>) -> f64 {
        0.5 * (&self.a * y + &self.target).norm_squared() + self.beta * y.lp_norm(1)
    }

    pub fn kkt_residual(&self, y: &DVector<f64>) -> f64 {
        let g = self.a.tr_mul(&(&self.a * y + &self.target));
        kkt_from_gradient(&g, y, self.beta)
    }

    /// Smallest beta for which `y = 0` is optimal.
    pub fn zero_threshold(&self) -> f64 {
        self.a.tr_mul(&self.target).amax()
    }

    pub fn solve(&self, tol: f64, max_iters: usize) -> Result<LassoSolution> {
        if self.beta > 0.0 {
            return solve_lasso(&self.a, &self.target, self.beta, tol, max_iters);
        }
        let y = -(pinv(&self.a) * &self.target);
        Ok(LassoSolution {
            objective: self.objective(&y),
            kkt_residual: self.kkt_residual(&y),
            y_star: y.iter().cloned().collect(),
            iterations: 0,
            status: SolveStatus::Converged,
            objective_trace: Vec::new(),
        })
    }

    fn check_len(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.width() {
            return Err(Error::DimensionMismatch(format!(
                "y has {} entries, program has {} columns",
                y.len(),
                self.width()
            )));
        }
        Ok(())
    }

    /// Output bias `mean(A_raw y + l)`.
    pub fn output_bias(&self, y: &[f64]) -> Result<f64> {
        self.check_len(y)?;
        let raw = dsm_raw_design(&self.data, self.activation);
        let fit = raw * DVector::from_column_slice(y);
        let n = self.data.n() as f64;
        Ok((fit.sum() + self.raw_labels.iter().sum::<f64>()) / n)
    }
}

pub fn reconstruct_dsm_network(y_star: &[f64], prog: &DSMProgram1D) -> Result<TwoLayerParams> {
    let b0 = prog.output_bias(y_star)?;
    let x = prog.data.points();
    let n = x.len();
    let k = prog.width();
    let mut p = TwoLayerParams::zeros(1, k, prog.activation);
    for (j, &y) in y_star.iter().enumerate() {
        let s = y.abs().sqrt();
        let xj = x[j % n];
        let (w, b) = if j < n { (s, -s * xj) } else { (-s, s * xj) };
        p.w1[(j, 0)] = w;
        p.b1[j] = b;
        p.w2[(0, j)] = -sign0(y) * s;
    }
    p.b2[0] = b0;
    Ok(p)
}

/// Evaluates `-sum_j y_j phi_j(x) + b0` directly from the hinge features.
pub fn predict_dsm_score(y_star: &[f64], prog: &DSMProgram1D, x_test: &[f64]) -> Result<Vec<f64>> {
    let b0 = prog.output_bias(y_star)?;
    let x = prog.data.points();
    let n = x.len();
    Ok(x_test
        .iter()
        .map(|&t| {
            let mut s = b0;
            for (j, &y) in y_star.iter().enumerate() {
                if y == 0.0 {
                    continue;
                }
                let xj = x[j % n];
                let phi = match prog.activation {
                    Activation::Abs => (t - xj).abs(),
                    Activation::Relu if j < n => (t - xj).max(0.0),
                    Activation::Relu => (xj - t).max(0.0),
                };
                s -= y * phi;
            }
            s
        })
        .collect())
}

/// DSM training loss of a univariate network on the program's points and labels.
pub fn dsm_network_objective(params: &TwoLayerParams, prog: &DSMProgram1D) -> Result<f64> {
    loss_dsm(params, prog.data.points(), &prog.raw_labels, prog.beta)
}

#[derive(Debug, Clone, Serialize)]
pub struct Dsm1dFit {
    pub activation: Activation,
    pub beta: f64,
    pub epsilon: f64,
    pub y_star: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub output_bias: f64,
    pub zero_threshold: f64,
    pub params: ParamsJson,
    #[serde(skip)]
    pub network: TwoLayerParams,
}

pub fn fit_dsm_1d(prog: &DSMProgram1D, tol: f64, max_iters: usize) -> Result<Dsm1dFit> {
    let sol = prog.solve(tol, max_iters)?;
    let network = reconstruct_dsm_network(&sol.y_star, prog)?;
    Ok(Dsm1dFit {
        activation: prog.activation,
        beta: prog.beta,
        epsilon: prog.epsilon,
        output_bias: network.b2[0],
        zero_threshold: prog.zero_threshold(),
        y_star: sol.y_star,
        objective: sol.objective,
        kkt_residual: sol.kkt_residual,
        iterations: sol.iterations,
        status: sol.status,
        params: network.to_json(),
        network,
    })
}
