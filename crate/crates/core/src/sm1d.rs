//! Univariate score matching: convex programs for the four architecture
//! variants, beta thresholds, reconstruction and closed-form scores.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Activation, ArchitectureConfig, Dataset1D};
use crate::error::{Error, Result};
use crate::linalg::{center_columns, sign0};
use crate::network::{ParamsJson, TwoLayerParams};
use crate::prox::{solve_l1_quadratic, L1QuadraticProblem, LassoSolution, SolveStatus};

pub use crate::network::evaluate_network;

/// Bias shift separating the {>=} and {>} ReLU columns in reconstruction.
pub const RELU_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SmVariant {
    ReluNoSkip,
    AbsNoSkip,
    ReluSkip,
    AbsSkip,
}

impl SmVariant {
    pub fn from_config(cfg: &ArchitectureConfig) -> Self {
        match (cfg.activation, cfg.skip) {
            (Activation::Relu, false) => SmVariant::ReluNoSkip,
            (Activation::Abs, false) => SmVariant::AbsNoSkip,
            (Activation::Relu, true) => SmVariant::ReluSkip,
            (Activation::Abs, true) => SmVariant::AbsSkip,
        }
    }

    /// Number of program variables for n data points.
    pub fn width(self, n: usize) -> usize {
        match self {
            SmVariant::ReluNoSkip => 4 * n,
            _ => 2 * n,
        }
    }

    /// Smallest beta for which the program is bounded below.
    pub fn min_beta(self) -> f64 {
        match self {
            SmVariant::AbsSkip => 2.0,
            _ => 1.0,
        }
    }

    pub fn is_skip(self) -> bool {
        matches!(self, SmVariant::ReluSkip | SmVariant::AbsSkip)
    }

    pub fn activation(self) -> Activation {
        match self {
            SmVariant::ReluNoSkip | SmVariant::ReluSkip => Activation::Relu,
            _ => Activation::Abs,
        }
    }
}

/// `0.5 ||A y||^2 + b_lin^T y + l1_weight ||y||_1 + c_const`.
#[derive(Debug, Clone, PartialEq)]
pub struct SMProgram1D {
    pub a: DMatrix<f64>,
    pub b_lin: DVector<f64>,
    pub c_const: f64,
    pub variant: SmVariant,
    pub beta: f64,
    /// beta, or 2 beta for ReLU with skip.
    pub l1_weight: f64,
    pub data: Dataset1D,
}

impl SMProgram1D {
    pub fn problem(&self) -> L1QuadraticProblem {
        L1QuadraticProblem {
            a: self.a.clone(),
            b_lin: self.b_lin.clone(),
            beta: self.l1_weight,
        }
    }

    /// Full objective including the constant of the skip variants.
    pub fn objective(&self, y: &DVector<f64>) -> f64 {
        self.problem().objective(y) + self.c_const
    }

    pub fn solve(&self, tol: f64, max_iters: usize) -> Result<LassoSolution> {
        let mut sol = solve_l1_quadratic(&self.problem(), tol, max_iters)?;
        sol.objective += self.c_const;
        Ok(sol)
    }

    pub fn b_inf(&self) -> f64 {
        self.b_lin.amax()
    }
}

/// Raw ReLU blocks: `A1[i][j] = (x_i - x_j)_+`, `A2[i][j] = (x_j - x_i)_+`.
pub fn relu_blocks(x: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = x.len();
    let a1 = DMatrix::from_fn(n, n, |i, j| (x[i] - x[j]).max(0.0));
    let a2 = DMatrix::from_fn(n, n, |i, j| (x[j] - x[i]).max(0.0));
    (a1, a2)
}

/// Raw abs block `|x_i - x_j|`.
pub fn abs_block(x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| (x[i] - x[j]).abs())
}

fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks[0].nrows();
    let k: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, k);
    let mut off = 0;
    for b in blocks {
        out.view_mut((0, off), (n, b.ncols())).copy_from(*b);
        off += b.ncols();
    }
    out
}

/// Uncentered design matrix whose columns are the neuron outputs on the data.
pub fn raw_design(data: &Dataset1D, variant: SmVariant) -> DMatrix<f64> {
    let x = data.points();
    match variant {
        SmVariant::ReluNoSkip => {
            let (a1, a2) = relu_blocks(x);
            hstack(&[&a1, &a1, &a2, &a2])
        }
        _ => {
            let a = abs_block(x);
            hstack(&[&a, &a])
        }
    }
}

fn relu_linear_term(x: &[f64]) -> DVector<f64> {
    let n = x.len();
    let mut b = DVector::zeros(4 * n);
    for j in 0..n {
        let ge = x.iter().filter(|&&xi| xi >= x[j]).count() as f64;
        let gt = x.iter().filter(|&&xi| xi > x[j]).count() as f64;
        let le = x.iter().filter(|&&xi| x[j] >= xi).count() as f64;
        let lt = x.iter().filter(|&&xi| x[j] > xi).count() as f64;
        b[j] = ge;
        b[n + j] = gt;
        b[2 * n + j] = -le;
        b[3 * n + j] = -lt;
    }
    b
}

fn abs_linear_term(x: &[f64]) -> DVector<f64> {
    let n = x.len();
    let mut b = DVector::zeros(2 * n);
    for j in 0..n {
        b[j] = x.iter().map(|&xi| sign0(xi - x[j])).sum();
        b[n + j] = -x.iter().map(|&xi| sign0(x[j] - xi)).sum::<f64>();
    }
    b
}

pub fn build_sm_program(data: &Dataset1D, cfg: &ArchitectureConfig) -> Result<SMProgram1D> {
    let variant = SmVariant::from_config(cfg);
    let beta = cfg.beta;
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::BadBeta(beta));
    }
    if beta < variant.min_beta() {
        return Err(Error::BetaTooSmall {
            beta,
            min: variant.min_beta(),
        });
    }
    let x = data.points();
    let n = data.n() as f64;
    let abar = center_columns(&raw_design(data, variant));
    let (a, b_lin, c_const) = match variant {
        SmVariant::ReluNoSkip => (abar, relu_linear_term(x), 0.0),
        SmVariant::AbsNoSkip => (abar, abs_linear_term(x), 0.0),
        SmVariant::ReluSkip | SmVariant::AbsSkip => {
            let xbar = DVector::from_iterator(x.len(), x.iter().map(|v| v - data.mu()));
            let xx = xbar.norm_squared();
            let xta = abar.tr_mul(&xbar);
            // B abar with B = I - xbar xbar^T / ||xbar||^2 (a projector).
            let a = &abar - &xbar * xta.transpose() / xx;
            let b = xta * (-n / xx) + abs_linear_term(x);
            (a, b, -n * n / (2.0 * xx))
        }
    };
    let l1_weight = if variant == SmVariant::ReluSkip {
        2.0 * beta
    } else {
        beta
    };
    Ok(SMProgram1D {
        a,
        b_lin,
        c_const,
        variant,
        beta,
        l1_weight,
        data: data.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaThresholds {
    pub b_inf: f64,
    pub beta_low: f64,
}

/// Indices of the two active columns in the two-spike solution.
fn spike_indices(variant: SmVariant, n: usize) -> (usize, usize) {
    match variant {
        SmVariant::ReluNoSkip => (0, 3 * n - 1),
        _ => (0, 2 * n - 1),
    }
}

pub fn compute_beta_thresholds(
    data: &Dataset1D,
    cfg: &ArchitectureConfig,
) -> Result<BetaThresholds> {
    let variant = SmVariant::from_config(cfg);
    if variant.is_skip() {
        return Err(Error::NotApplicable);
    }
    let probe = ArchitectureConfig { beta: variant.min_beta(), ..*cfg };
    let prog = build_sm_program(data, &probe)?;
    let n = data.n();
    let nf = n as f64;
    let nv = nf * data.v();
    let (ja, jb) = spike_indices(variant, n);
    let xbar = DVector::from_iterator(n, data.points().iter().map(|v| v - data.mu()));
    let p = prog.a.tr_mul(&xbar) / nv;
    // The two-spike point gives A y = ((beta - n)/(n v)) xbar, so column j
    // needs |p_j (beta - n) + b_j| <= beta; each side is linear in beta.
    let mut lo = 0.0f64;
    let scale = nf.max(1.0);
    for j in 0..prog.a.ncols() {
        if j == ja || j == jb {
            continue;
        }
        let (pj, bj) = (p[j], prog.b_lin[j]);
        let rhs = pj * nf - bj;
        // (p - 1) beta <= p n - b
        if (pj - 1.0).abs() < 1e-12 {
            if rhs < -1e-9 * scale {
                lo = f64::INFINITY;
            }
        } else if pj < 1.0 {
            lo = lo.max(rhs / (pj - 1.0));
        }
        // (1 + p) beta >= p n - b
        if (pj + 1.0).abs() < 1e-12 {
            if rhs > 1e-9 * scale {
                lo = f64::INFINITY;
            }
        } else if pj > -1.0 {
            lo = lo.max(rhs / (1.0 + pj));
        }
    }
    Ok(BetaThresholds {
        b_inf: prog.b_inf(),
        beta_low: lo,
    })
}

/// Zero-solution threshold for the skip variants: y* = 0 iff beta exceeds it.
pub fn skip_zero_threshold(data: &Dataset1D, cfg: &ArchitectureConfig) -> Result<f64> {
    let variant = SmVariant::from_config(cfg);
    if !variant.is_skip() {
        return Err(Error::NotApplicable);
    }
    let prog = build_sm_program(data, &ArchitectureConfig { beta: variant.min_beta(), ..*cfg })?;
    let b = prog.b_inf();
    Ok(if variant == SmVariant::ReluSkip { b / 2.0 } else { b })
}

pub fn reconstruct_network(
    y_star: &[f64],
    data: &Dataset1D,
    cfg: &ArchitectureConfig,
) -> Result<TwoLayerParams> {
    let variant = SmVariant::from_config(cfg);
    let n = data.n();
    let k = variant.width(n);
    if y_star.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "y has {} entries, variant {:?} needs {k}",
            y_star.len(),
            variant
        )));
    }
    let x = data.points();
    let mut p = TwoLayerParams::zeros(1, k, variant.activation());
    let yv = DVector::from_column_slice(y_star);
    let raw = raw_design(data, variant);
    let ay = &raw * &yv;
    let nf = n as f64;

    let mut set = |j: usize, w: f64, b: f64, alpha: f64| {
        p.w1[(j, 0)] = w;
        p.b1[j] = b;
        p.w2[(0, j)] = alpha;
    };

    match variant {
        SmVariant::ReluNoSkip => {
            for j in 0..k {
                let y = y_star[j];
                let s = y.abs().sqrt();
                let a = sign0(y) * s;
                let xj = x[j % n];
                match j / n {
                    0 => set(j, s, -s * xj, a),
                    1 => set(j, s, -s * (xj + RELU_EPS), a),
                    2 => set(j, -s, s * xj, a),
                    _ => set(j, -s, s * (xj - RELU_EPS), a),
                }
            }
            p.b2[0] = -ay.sum() / nf;
        }
        SmVariant::AbsNoSkip | SmVariant::AbsSkip | SmVariant::ReluSkip => {
            let factor = if variant == SmVariant::ReluSkip { 2.0 } else { 1.0 };
            for j in 0..k {
                let y = y_star[j];
                let s = (factor * y.abs()).sqrt();
                let a = sign0(y) * s;
                let xj = x[j % n];
                if j < n {
                    set(j, s, -s * xj, a);
                } else {
                    set(j, -s, s * xj, a);
                }
            }
            if variant == SmVariant::AbsNoSkip {
                p.b2[0] = -ay.sum() / nf;
            } else {
                let xbar = DVector::from_iterator(n, x.iter().map(|v| v - data.mu()));
                let abar_y = center_columns(&raw) * &yv;
                let v_abs = -(xbar.dot(&abar_y) + nf) / xbar.norm_squared();
                let xs: f64 = x.iter().sum();
                let b0_abs = -(ay.sum() + v_abs * xs) / nf;
                if variant == SmVariant::AbsSkip {
                    p.v[(0, 0)] = v_abs;
                    p.b2[0] = b0_abs;
                } else {
                    // (z)_+ = (|z| + z) / 2: fold the linear half into V and b2.
                    let mut lin_w = 0.0;
                    let mut lin_b = 0.0;
                    for j in 0..k {
                        lin_w += p.w1[(j, 0)] * p.w2[(0, j)];
                        lin_b += p.b1[j] * p.w2[(0, j)];
                    }
                    p.v[(0, 0)] = v_abs - 0.5 * lin_w;
                    p.b2[0] = b0_abs - 0.5 * lin_b;
                }
            }
        }
    }
    Ok(p)
}

/// Piecewise-linear univariate score: segment k applies `slopes[k] x + intercepts[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinearScore {
    pub breakpoints: Vec<f64>,
    pub slopes: Vec<f64>,
    pub intercepts: Vec<f64>,
    pub t_param: f64,
}

impl PiecewiseLinearScore {
    pub fn zero() -> Self {
        PiecewiseLinearScore {
            breakpoints: vec![],
            slopes: vec![0.0],
            intercepts: vec![0.0],
            t_param: 0.0,
        }
    }

    pub fn linear(slope: f64, intercept: f64) -> Self {
        PiecewiseLinearScore {
            breakpoints: vec![],
            slopes: vec![slope],
            intercepts: vec![intercept],
            t_param: 0.0,
        }
    }

    fn segment(&self, x: f64) -> usize {
        self.breakpoints.partition_point(|&b| b <= x)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = self.segment(x);
        self.slopes[k] * x + self.intercepts[k]
    }

    /// Largest left/right mismatch over breakpoints.
    pub fn continuity_gap(&self) -> f64 {
        self.breakpoints
            .iter()
            .enumerate()
            .map(|(k, &b)| {
                let l = self.slopes[k] * b + self.intercepts[k];
                let r = self.slopes[k + 1] * b + self.intercepts[k + 1];
                (l - r).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Largest |t| admitted by the two-spike family.
pub fn t_bound(data: &Dataset1D, beta: f64) -> f64 {
    let n = data.n() as f64;
    (n - beta) / (2.0 * n * data.v())
}

pub fn closed_form_score(
    data: &Dataset1D,
    cfg: &ArchitectureConfig,
    t: f64,
) -> Result<PiecewiseLinearScore> {
    let variant = SmVariant::from_config(cfg);
    let beta = cfg.beta;
    let (mu, v) = (data.mu(), data.v());
    if variant.is_skip() {
        let thr = skip_zero_threshold(data, cfg)?;
        if !(beta > thr) {
            return Err(Error::BetaOutOfRegime {
                beta,
                lo: thr,
                hi: f64::INFINITY,
            });
        }
        if t != 0.0 {
            return Err(Error::TOutOfRange { t, bound: 0.0 });
        }
        return Ok(PiecewiseLinearScore::linear(-1.0 / v, mu / v));
    }
    let th = compute_beta_thresholds(data, cfg)?;
    if beta > th.b_inf {
        if t != 0.0 {
            return Err(Error::TOutOfRange { t, bound: 0.0 });
        }
        return Ok(PiecewiseLinearScore::zero());
    }
    if !(beta > th.beta_low) {
        return Err(Error::BetaOutOfRegime {
            beta,
            lo: th.beta_low,
            hi: th.b_inf,
        });
    }
    let bound = t_bound(data, beta);
    if t.abs() > bound * (1.0 + 1e-12) {
        return Err(Error::TOutOfRange { t, bound });
    }
    let n = data.n() as f64;
    let s_int = (beta - n) / (n * v);
    let half = s_int / 2.0;
    let (s_left, s_right) = match variant {
        SmVariant::ReluNoSkip => (half - t, half + t),
        _ => (-2.0 * t, 2.0 * t),
    };
    let (x1, xn) = (data.min(), data.max());
    let c_int = -s_int * mu;
    let v1 = s_int * x1 + c_int;
    let vn = s_int * xn + c_int;
    Ok(PiecewiseLinearScore {
        breakpoints: vec![x1, xn],
        slopes: vec![s_left, s_int, s_right],
        intercepts: vec![v1 - s_left * x1, c_int, vn - s_right * xn],
        t_param: t,
    })
}

/// Recovers the exterior-slope parameter t from a fitted score, returning
/// `(t, residual)` where the residual is the left/right disagreement.
pub fn exterior_t(
    data: &Dataset1D,
    cfg: &ArchitectureConfig,
    score: impl Fn(f64) -> f64,
) -> (f64, f64) {
    let (x1, xn) = (data.min(), data.max());
    let s_left = score(x1 - 1.0) - score(x1 - 2.0);
    let s_right = score(xn + 2.0) - score(xn + 1.0);
    let (tl, tr) = match SmVariant::from_config(cfg) {
        SmVariant::ReluNoSkip => {
            let half = t_bound(data, cfg.beta);
            // slopes are -half - t (left) and -half + t (right)
            (-half - s_left, s_right + half)
        }
        _ => (-s_left / 2.0, s_right / 2.0),
    };
    (0.5 * (tl + tr), (tl - tr).abs())
}

/// Solved program, reconstruction and diagnostics for one configuration.
#[derive(Debug, Clone, Serialize)]
pub struct Sm1dFit {
    pub variant: SmVariant,
    pub beta: f64,
    pub y_star: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub params: ParamsJson,
    pub thresholds: Option<BetaThresholds>,
    pub skip_threshold: Option<f64>,
    #[serde(skip)]
    pub network: TwoLayerParams,
}

pub fn fit_sm_1d(
    data: &Dataset1D,
    cfg: &ArchitectureConfig,
    tol: f64,
    max_iters: usize,
) -> Result<Sm1dFit> {
    let prog = build_sm_program(data, cfg)?;
    let sol = prog.solve(tol, max_iters)?;
    let network = reconstruct_network(&sol.y_star, data, cfg)?;
    let (thresholds, skip_threshold) = if prog.variant.is_skip() {
        (None, Some(skip_zero_threshold(data, cfg)?))
    } else {
        (Some(compute_beta_thresholds(data, cfg)?), None)
    };
    Ok(Sm1dFit {
        variant: prog.variant,
        beta: cfg.beta,
        y_star: sol.y_star,
        objective: sol.objective,
        kkt_residual: sol.kkt_residual,
        iterations: sol.iterations,
        status: sol.status,
        params: network.to_json(),
        thresholds,
        skip_threshold,
        network,
    })
}
