//! First-order solvers for L1-regularized quadratics, lasso and group lasso,
//! plus minimum-norm least squares.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gram_lmax, pinv, sign0, soft};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITERS: usize = 200_000;

const POWER_ITERS: usize = 50;
const POWER_TOL: f64 = 1e-10;
const CHECK_EVERY: usize = 10;
const POLISH_EVERY: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIters,
    Unbounded,
}

/// `0.5 ||A y||^2 + b_lin^T y + beta ||y||_1`.
#[derive(Debug, Clone, PartialEq)]
pub struct L1QuadraticProblem {
    pub a: DMatrix<f64>,
    pub b_lin: DVector<f64>,
    pub beta: f64,
}

impl L1QuadraticProblem {
    pub fn new(a: DMatrix<f64>, b_lin: DVector<f64>, beta: f64) -> Result<Self> {
        if a.ncols() != b_lin.len() {
            return Err(Error::DimensionMismatch(format!(
                "A has {} columns, b_lin has {} entries",
                a.ncols(),
                b_lin.len()
            )));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::BadBeta(beta));
        }
        Ok(L1QuadraticProblem { a, b_lin, beta })
    }

    pub fn objective(&self, y: &DVector<f64>) -> f64 {
        0.5 * (&self.a * y).norm_squared() + self.b_lin.dot(y) + self.beta * y.lp_norm(1)
    }

    /// Gradient of the smooth part, `A^T A y + b_lin`.
    pub fn smooth_gradient(&self, y: &DVector<f64>) -> DVector<f64> {
        self.a.tr_mul(&(&self.a * y)) + &self.b_lin
    }

    pub fn kkt_residual(&self, y: &DVector<f64>) -> f64 {
        kkt_from_gradient(&self.smooth_gradient(y), y, self.beta)
    }
}

/// Maximum violation of `0 in g + beta * d||y||_1`.
pub fn kkt_from_gradient(g: &DVector<f64>, y: &DVector<f64>, beta: f64) -> f64 {
    g.iter()
        .zip(y.iter())
        .map(|(&gj, &yj)| {
            if yj == 0.0 {
                (gj.abs() - beta).max(0.0)
            } else {
                (gj + beta * sign0(yj)).abs()
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LassoSolution {
    pub y_star: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Objective at the accepted iterate after each iteration.
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
}

impl LassoSolution {
    pub fn y(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.y_star)
    }
}

pub fn solve_l1_quadratic(
    prob: &L1QuadraticProblem,
    tol: f64,
    max_iters: usize,
) -> Result<LassoSolution> {
    check_tol(tol)?;
    if prob.a.ncols() != prob.b_lin.len() {
        return Err(Error::DimensionMismatch(format!(
            "A has {} columns, b_lin has {} entries",
            prob.a.ncols(),
            prob.b_lin.len()
        )));
    }
    Ok(fista_l1(&prob.a, &prob.b_lin, prob.beta, 0.0, tol, max_iters))
}

/// Minimizes `0.5 ||A y + target||^2 + beta ||y||_1`.
pub fn solve_lasso(
    a: &DMatrix<f64>,
    target: &DVector<f64>,
    beta: f64,
    tol: f64,
    max_iters: usize,
) -> Result<LassoSolution> {
    check_tol(tol)?;
    if a.nrows() != target.len() {
        return Err(Error::DimensionMismatch(format!(
            "A has {} rows, target has {} entries",
            a.nrows(),
            target.len()
        )));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::BadBeta(beta));
    }
    let b_lin = a.tr_mul(target);
    let offset = 0.5 * target.norm_squared();
    Ok(fista_l1(a, &b_lin, beta, offset, tol, max_iters))
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("tol must be positive, got {tol}")))
    }
}

struct Smooth<'a> {
    a: &'a DMatrix<f64>,
    b: &'a DVector<f64>,
    beta: f64,
    offset: f64,
}

impl Smooth<'_> {
    fn total(&self, y: &DVector<f64>, ay: &DVector<f64>) -> f64 {
        0.5 * ay.norm_squared() + self.b.dot(y) + self.beta * y.lp_norm(1) + self.offset
    }
}

fn fista_l1(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    beta: f64,
    offset: f64,
    tol: f64,
    max_iters: usize,
) -> LassoSolution {
    let (n, k) = a.shape();
    let sm = Smooth { a, b, beta, offset };
    let unbounded_level = -1.0 / tol;

    // A column that is exactly zero with |b_j| > beta is a descent ray.
    for j in 0..k {
        if a.column(j).iter().all(|&v| v == 0.0) && b[j].abs() > beta {
            return LassoSolution {
                y_star: vec![0.0; k],
                objective: f64::NEG_INFINITY,
                kkt_residual: f64::INFINITY,
                iterations: 0,
                status: SolveStatus::Unbounded,
                objective_trace: vec![offset],
            };
        }
    }

    let lip0 = gram_lmax(a, POWER_ITERS, POWER_TOL);
    let mut lip = if lip0 > 0.0 { lip0 } else { 1.0 };

    let mut y = DVector::zeros(k);
    let mut ay = DVector::zeros(n);
    let mut z = y.clone();
    let mut az = ay.clone();
    let mut t = 1.0f64;
    let mut fresh = true;
    let mut f_y = sm.total(&y, &ay);
    let mut trace = vec![f_y];
    let mut polished: HashSet<Vec<i8>> = HashSet::new();
    let mut last_sig: Option<Vec<i8>> = None;

    let finish = |y: DVector<f64>, ay: &DVector<f64>, f: f64, it: usize, st: SolveStatus, tr| {
        let g = a.tr_mul(ay) + b;
        let kkt = kkt_from_gradient(&g, &y, beta);
        LassoSolution {
            y_star: y.iter().cloned().collect(),
            objective: f,
            kkt_residual: kkt,
            iterations: it,
            status: st,
            objective_trace: tr,
        }
    };

    if k == 0 {
        return finish(y, &ay, f_y, 0, SolveStatus::Converged, trace);
    }

    for it in 1..=max_iters {
        let g = a.tr_mul(&az) + b;
        let (p, ap) = loop {
            let step = 1.0 / lip;
            let p = DVector::from_fn(k, |j, _| soft(z[j] - step * g[j], beta * step));
            let ap = a * &p;
            // The smooth part is quadratic, so the descent-lemma check reduces
            // to ||A d||^2 <= lip ||d||^2 exactly.
            let curv = (&ap - &az).norm_squared();
            if curv <= lip * (&p - &z).norm_squared() * (1.0 + 1e-10) || lip > 1e300 {
                break (p, ap);
            }
            lip *= 2.0;
        };
        let f_p = sm.total(&p, &ap);
        // A plain proximal step from y (fresh) descends in exact arithmetic;
        // accept it even when rounding hides the decrease.
        if f_p <= f_y || fresh {
            fresh = false;
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let coef = (t - 1.0) / t_next;
            let y_prev = std::mem::replace(&mut y, p);
            let ay_prev = std::mem::replace(&mut ay, ap);
            f_y = f_p;
            z = &y + (&y - &y_prev) * coef;
            az = &ay + (&ay - &ay_prev) * coef;
            t = t_next;
        } else {
            // Momentum overshoot: restart from the current iterate.
            t = 1.0;
            fresh = true;
            z = y.clone();
            az = ay.clone();
        }
        trace.push(f_y);

        if f_y < unbounded_level {
            return finish(y, &ay, f_y, it, SolveStatus::Unbounded, trace);
        }

        if it % POLISH_EVERY == 0 {
            let sig: Vec<i8> = y
                .iter()
                .map(|&v| if v > 0.0 { 1 } else if v < 0.0 { -1 } else { 0 })
                .collect();
            let stable = last_sig.as_ref() == Some(&sig);
            if stable && !polished.contains(&sig) {
                polished.insert(sig.clone());
                if let Some((yc, ayc, fc)) = polish(&sm, &sig, f_y) {
                    y = yc;
                    ay = ayc;
                    f_y = fc;
                    z = y.clone();
                    az = ay.clone();
                    t = 1.0;
                    fresh = true;
                    *trace.last_mut().unwrap() = f_y;
                }
            }
            last_sig = Some(sig);
        }

        if it % CHECK_EVERY == 0 {
            let gy = a.tr_mul(&ay) + b;
            if kkt_from_gradient(&gy, &y, beta) <= tol {
                return finish(y, &ay, f_y, it, SolveStatus::Converged, trace);
            }
        }
    }
    let gy = a.tr_mul(&ay) + b;
    let status = if kkt_from_gradient(&gy, &y, beta) <= tol {
        SolveStatus::Converged
    } else {
        SolveStatus::MaxIters
    };
    finish(y, &ay, f_y, max_iters, status, trace)
}

/// Solves the smooth problem restricted to a fixed support and sign pattern
/// (minimum-norm solution). Returns the candidate only if it keeps the signs
/// and does not increase the objective.
fn polish(
    sm: &Smooth<'_>,
    sig: &[i8],
    f_y: f64,
) -> Option<(DVector<f64>, DVector<f64>, f64)> {
    let support: Vec<usize> = (0..sig.len()).filter(|&j| sig[j] != 0).collect();
    if support.is_empty() || support.len() > 800 {
        return None;
    }
    let n = sm.a.nrows();
    let s = support.len();
    let a_s = DMatrix::from_fn(n, s, |i, c| sm.a[(i, support[c])]);
    let c = DVector::from_fn(s, |c, _| sm.b[support[c]] + sm.beta * sig[support[c]] as f64);
    let gram = a_s.tr_mul(&a_s);
    let y_s = -(pinv(&gram) * &c);
    let resid = (&gram * &y_s + &c).norm();
    if !(resid <= 1e-9 * (1.0 + c.norm())) {
        return None;
    }
    if support
        .iter()
        .enumerate()
        .any(|(q, &j)| y_s[q] * sig[j] as f64 <= 0.0)
    {
        return None;
    }
    let mut y = DVector::zeros(sig.len());
    for (q, &j) in support.iter().enumerate() {
        y[j] = y_s[q];
    }
    let ay = sm.a * &y;
    let f = sm.total(&y, &ay);
    if f <= f_y + 1e-12 * f_y.abs().max(1.0) {
        Some((y, ay, f.min(f_y)))
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupLassoSolution {
    /// c x d coefficient matrix; row j is the group Z_j.
    #[serde(skip)]
    pub z: DMatrix<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}

/// Objective `||K Z - L||_F^2 + lambda sum_j ||Z_j||_2`.
pub fn group_lasso_objective(k: &DMatrix<f64>, l: &DMatrix<f64>, lambda: f64, z: &DMatrix<f64>) -> f64 {
    (k * z - l).norm_squared() + lambda * z.row_iter().map(|r| r.norm()).sum::<f64>()
}

pub fn group_lasso_kkt(k: &DMatrix<f64>, l: &DMatrix<f64>, lambda: f64, z: &DMatrix<f64>) -> f64 {
    let g = k.tr_mul(&(k * z - l)) * 2.0;
    block_kkt(&g, z, lambda)
}

fn block_kkt(g: &DMatrix<f64>, z: &DMatrix<f64>, lambda: f64) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..z.nrows() {
        let zn = z.row(j).norm();
        let v = if zn == 0.0 {
            (g.row(j).norm() - lambda).max(0.0)
        } else {
            (g.row(j) + z.row(j) * (lambda / zn)).norm()
        };
        worst = worst.max(v);
    }
    worst
}

pub fn solve_group_lasso(
    k: &DMatrix<f64>,
    l: &DMatrix<f64>,
    lambda: f64,
    tol: f64,
    max_iters: usize,
) -> Result<GroupLassoSolution> {
    check_tol(tol)?;
    if k.nrows() != l.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "K has {} rows, L has {}",
            k.nrows(),
            l.nrows()
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {lambda}")));
    }
    let (c, d) = (k.ncols(), l.ncols());
    let lip0 = 2.0 * gram_lmax(k, POWER_ITERS, POWER_TOL);
    let mut lip = if lip0 > 0.0 { lip0 } else { 1.0 };
    let ktl = k.tr_mul(l);
    let l_sq = l.norm_squared();

    let penalty = |z: &DMatrix<f64>| lambda * z.row_iter().map(|r| r.norm()).sum::<f64>();
    let mut z = DMatrix::zeros(c, d);
    let mut kz = DMatrix::zeros(k.nrows(), d);
    let mut x = z.clone();
    let mut kx = kz.clone();
    let mut t = 1.0f64;
    let mut fresh = true;
    let mut f_z = l_sq;
    let grad_at = |kx: &DMatrix<f64>| (k.tr_mul(kx) - &ktl) * 2.0;

    let done = |z: DMatrix<f64>, kz: &DMatrix<f64>, f: f64, it: usize, st| {
        let kkt = block_kkt(&grad_at(kz), &z, lambda);
        GroupLassoSolution {
            z,
            objective: f,
            kkt_residual: kkt,
            iterations: it,
            status: st,
        }
    };
    if c == 0 || d == 0 {
        return Ok(done(z, &kz, f_z, 0, SolveStatus::Converged));
    }
    if block_kkt(&grad_at(&kz), &z, lambda) <= tol {
        return Ok(done(z, &kz, f_z, 0, SolveStatus::Converged));
    }

    for it in 1..=max_iters {
        let g = grad_at(&kx);
        let (p, kp) = loop {
            let step = 1.0 / lip;
            let mut p = &x - &g * step;
            for j in 0..c {
                let nrm = p.row(j).norm();
                let scale = if nrm > lambda * step { 1.0 - lambda * step / nrm } else { 0.0 };
                p.row_mut(j).scale_mut(scale);
            }
            let kp = k * &p;
            let curv = 2.0 * (&kp - &kx).norm_squared();
            if curv <= lip * (&p - &x).norm_squared() * (1.0 + 1e-10) || lip > 1e300 {
                break (p, kp);
            }
            lip *= 2.0;
        };
        let f_p = (&kp - l).norm_squared() + penalty(&p);
        if f_p <= f_z || fresh {
            fresh = false;
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let coef = (t - 1.0) / t_next;
            let z_prev = std::mem::replace(&mut z, p);
            let kz_prev = std::mem::replace(&mut kz, kp);
            f_z = f_p;
            x = &z + (&z - &z_prev) * coef;
            kx = &kz + (&kz - &kz_prev) * coef;
            t = t_next;
        } else {
            t = 1.0;
            fresh = true;
            x = z.clone();
            kx = kz.clone();
        }
        if it % CHECK_EVERY == 0 && block_kkt(&grad_at(&kz), &z, lambda) <= tol {
            return Ok(done(z, &kz, f_z, it, SolveStatus::Converged));
        }
    }
    let st = if block_kkt(&grad_at(&kz), &z, lambda) <= tol {
        SolveStatus::Converged
    } else {
        SolveStatus::MaxIters
    };
    Ok(done(z, &kz, f_z, max_iters, st))
}

/// Minimum-Frobenius-norm minimizer of `||A X - B||_F`, i.e. `A^+ B`.
pub fn least_squares_min_norm(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "A has {} rows, B has {}",
            a.nrows(),
            b.nrows()
        )));
    }
    Ok(pinv(a) * b)
}
