//! Multivariate score matching over hyperplane-arrangement patterns.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Activation, DatasetND};
use crate::error::{Error, Result};
use crate::linalg::row_space_basis;
use crate::network::TwoLayerParams;
use crate::prox::least_squares_min_norm;

/// Tolerance on the normalized range residual before the objective is
/// declared unbounded.
pub const RANGE_TOL: f64 = 1e-8;
const DYKSTRA_SWEEPS: usize = 10_000;

/// One arrangement pattern: `mask[k] = (x_k . generator >= 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationPattern {
    pub mask: Vec<bool>,
    pub generator: Vec<f64>,
}

impl ActivationPattern {
    /// Builds the pattern induced by `u` (normalized before use).
    pub fn from_generator(x: &DMatrix<f64>, u: &[f64]) -> Self {
        let nrm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        let g: Vec<f64> = u.iter().map(|v| v / nrm).collect();
        ActivationPattern {
            mask: mask_of(x, &g),
            generator: g,
        }
    }

    /// Diagonal of D: 1/0 for ReLU, +1/-1 for abs.
    pub fn diag(&self, act: Activation) -> Vec<f64> {
        self.mask
            .iter()
            .map(|&b| match (act, b) {
                (_, true) => 1.0,
                (Activation::Relu, false) => 0.0,
                (Activation::Abs, false) => -1.0,
            })
            .collect()
    }

    pub fn trace(&self, act: Activation) -> f64 {
        self.diag(act).iter().sum()
    }

    pub fn bitstring(&self) -> String {
        self.mask.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    /// Whether the stored generator reproduces the mask.
    pub fn witness_ok(&self, x: &DMatrix<f64>) -> bool {
        mask_of(x, &self.generator) == self.mask
    }
}

fn dot_row(x: &DMatrix<f64>, k: usize, u: &[f64]) -> f64 {
    (0..x.ncols()).map(|l| x[(k, l)] * u[l]).sum()
}

fn mask_of(x: &DMatrix<f64>, u: &[f64]) -> Vec<bool> {
    (0..x.nrows()).map(|k| dot_row(x, k, u) >= 0.0).collect()
}

/// Smallest normalized distance of any nonzero row to its boundary.
fn margin(x: &DMatrix<f64>, u: &[f64]) -> f64 {
    let mut m = f64::INFINITY;
    for k in 0..x.nrows() {
        let nk = x.row(k).norm();
        if nk > 0.0 {
            m = m.min(dot_row(x, k, u).abs() / nk);
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnumerationMethod {
    Exhaustive,
    Sampled { count: usize, seed: u64 },
}

/// `2 r (e (n - 1) / r)^r`.
pub fn pattern_count_bound(n: usize, r: usize) -> f64 {
    if r == 0 {
        return 1.0;
    }
    let r = r as f64;
    2.0 * r * (std::f64::consts::E * (n as f64 - 1.0) / r).powf(r)
}

/// Enumerates distinct patterns, sorted lexicographically by mask. The
/// activation only selects how masks are later read as diagonals.
pub fn enumerate_patterns(
    data: &DatasetND,
    _activation: Activation,
    method: EnumerationMethod,
) -> Result<Vec<ActivationPattern>> {
    let x = data.x();
    let d = data.d();
    let candidates = match method {
        EnumerationMethod::Exhaustive => {
            if d > 3 {
                return Err(Error::DimensionTooLarge(d));
            }
            exhaustive_candidates(x)
        }
        EnumerationMethod::Sampled { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count)
                .filter_map(|_| {
                    let u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let nrm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                    (nrm > 0.0).then_some(u)
                })
                .collect()
        }
    };
    let mut best: BTreeMap<Vec<bool>, (f64, Vec<f64>)> = BTreeMap::new();
    for u in candidates {
        let p = ActivationPattern::from_generator(x, &u);
        if p.generator.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let mg = margin(x, &p.generator);
        match best.get(&p.mask) {
            Some((m0, _)) if *m0 >= mg => {}
            _ => {
                best.insert(p.mask, (mg, p.generator));
            }
        }
    }
    Ok(best
        .into_iter()
        .map(|(mask, (_, generator))| ActivationPattern { mask, generator })
        .collect())
}

fn exhaustive_candidates(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let d = x.ncols();
    let basis = row_space_basis(x);
    let r = basis.ncols();
    if r == 0 {
        let mut e = vec![0.0; d];
        e[0] = 1.0;
        return vec![e];
    }
    let y = x * &basis;
    let reduced: Vec<Vec<f64>> = match r {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => sweep_2d(&rows(&y)),
        _ => vertex_sweep_3d(&rows(&y)),
    };
    reduced
        .into_iter()
        .map(|ur| {
            let u = &basis * DVector::from_vec(ur);
            u.iter().cloned().collect()
        })
        .collect()
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

/// Boundary angles and the midpoints between consecutive ones.
fn sweep_angles(pts: &[[f64; 2]]) -> Vec<f64> {
    use std::f64::consts::{FRAC_PI_2, TAU};
    let mut ang: Vec<f64> = Vec::new();
    for p in pts {
        if p[0] == 0.0 && p[1] == 0.0 {
            continue;
        }
        let phi = p[1].atan2(p[0]);
        for a in [phi + FRAC_PI_2, phi - FRAC_PI_2] {
            ang.push(a.rem_euclid(TAU));
        }
    }
    if ang.is_empty() {
        return vec![0.0];
    }
    ang.sort_by(f64::total_cmp);
    ang.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let m = ang.len();
    let mut out = ang.clone();
    for i in 0..m {
        let next = if i + 1 < m { ang[i + 1] } else { ang[0] + TAU };
        out.push(0.5 * (ang[i] + next));
    }
    out
}

fn sweep_2d(pts: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let p2: Vec<[f64; 2]> = pts.iter().map(|p| [p[0], p[1]]).collect();
    sweep_angles(&p2)
        .into_iter()
        .map(|t| vec![t.cos(), t.sin()])
        .collect()
}

/// Every cell of a rank-3 central arrangement has a vertex on the sphere;
/// sweeping small circles around each vertex reaches all cells and faces.
fn vertex_sweep_3d(pts: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let p: Vec<Vector3<f64>> = pts.iter().map(|r| Vector3::new(r[0], r[1], r[2])).collect();
    let n = p.len();
    let mut out = Vec::new();
    for k in 0..n {
        for l in (k + 1)..n {
            let c = p[k].cross(&p[l]);
            let scale = p[k].norm() * p[l].norm();
            if scale == 0.0 || c.norm() <= 1e-12 * scale {
                continue;
            }
            for sgn in [1.0, -1.0] {
                let v = c.normalize() * sgn;
                let mut through = Vec::new();
                let mut delta = f64::INFINITY;
                for q in &p {
                    let nq = q.norm();
                    if nq == 0.0 {
                        continue;
                    }
                    let t = q.dot(&v).abs() / nq;
                    if t <= 1e-12 {
                        through.push(*q);
                    } else {
                        delta = delta.min(t);
                    }
                }
                let delta = if delta.is_finite() { 0.5 * delta } else { 0.5 };
                let e1 = if v.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
                let e1 = (e1 - v * v.dot(&e1)).normalize();
                let e2 = v.cross(&e1);
                let proj: Vec<[f64; 2]> = through.iter().map(|q| [q.dot(&e1), q.dot(&e2)]).collect();
                out.push(vec![v.x, v.y, v.z]);
                for th in sweep_angles(&proj) {
                    let u = v + (e1 * th.cos() + e2 * th.sin()) * delta;
                    out.push(vec![u.x, u.y, u.z]);
                }
            }
        }
    }
    out
}

/// Stacked design `[D_1 X, ..., D_P X]` (n x Pd) and `Vt = [tr(D_i) I]` (Pd x d).
pub fn stacked_design(
    data: &DatasetND,
    patterns: &[ActivationPattern],
    act: Activation,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, d) = (data.n(), data.d());
    let x = data.x();
    let p = patterns.len();
    let mut xt = DMatrix::zeros(n, p * d);
    let mut vt = DMatrix::zeros(p * d, d);
    for (i, pat) in patterns.iter().enumerate() {
        let dg = pat.diag(act);
        for k in 0..n {
            for l in 0..d {
                xt[(k, i * d + l)] = dg[k] * x[(k, l)];
            }
        }
        let tr = pat.trace(act);
        for l in 0..d {
            vt[(i * d + l, l)] = tr;
        }
    }
    (xt, vt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RangeMode {
    /// Fail with `UnboundedObjective` unless `Vt` lies in range(Xt^T Xt).
    Strict,
    /// Minimize over range(Xt^T Xt) and report the residual.
    Restricted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiSMSolution {
    /// One d x d block per pattern.
    pub w_blocks: Vec<DMatrix<f64>>,
    pub objective: f64,
    pub patterns: Vec<ActivationPattern>,
    pub activation: Activation,
    /// `||Xt^T Xt W + Vt|| / max(1, ||Vt||)`; zero when the optimum is finite.
    pub range_residual: f64,
}

/// Stacks blocks into the Pd x d matrix W.
pub fn stack_blocks(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let d = blocks.first().map_or(0, |b| b.ncols());
    let mut w = DMatrix::zeros(blocks.len() * d, d);
    for (i, b) in blocks.iter().enumerate() {
        w.view_mut((i * d, 0), (d, d)).copy_from(b);
    }
    w
}

pub fn split_blocks(w: &DMatrix<f64>, d: usize) -> Vec<DMatrix<f64>> {
    (0..w.nrows() / d.max(1))
        .map(|i| w.view((i * d, 0), (d, d)).into_owned())
        .collect()
}

/// `0.5 ||sum_i D_i X W_i||_F^2 + sum_i tr(D_i) tr(W_i)`.
pub fn sm_objective_nd(
    data: &DatasetND,
    patterns: &[ActivationPattern],
    act: Activation,
    blocks: &[DMatrix<f64>],
) -> f64 {
    let (xt, _) = stacked_design(data, patterns, act);
    let w = stack_blocks(blocks);
    let fit = 0.5 * (&xt * &w).norm_squared();
    let lin: f64 = patterns
        .iter()
        .zip(blocks)
        .map(|(p, b)| p.trace(act) * b.trace())
        .sum();
    fit + lin
}

pub fn solve_sm_multivariate(
    data: &DatasetND,
    patterns: &[ActivationPattern],
    activation: Activation,
    mode: RangeMode,
) -> Result<MultiSMSolution> {
    let d = data.d();
    check_patterns(data, patterns)?;
    if patterns.is_empty() {
        return Ok(MultiSMSolution {
            w_blocks: vec![],
            objective: 0.0,
            patterns: vec![],
            activation,
            range_residual: 0.0,
        });
    }
    let (xt, vt) = stacked_design(data, patterns, activation);
    let g = xt.tr_mul(&xt);
    let w = -least_squares_min_norm(&g, &vt)?;
    let range_residual = (&g * &w + &vt).norm() / vt.norm().max(1.0);
    if mode == RangeMode::Strict && range_residual > RANGE_TOL {
        return Err(Error::UnboundedObjective(range_residual));
    }
    let blocks = split_blocks(&w, d);
    let objective = sm_objective_nd(data, patterns, activation, &blocks);
    Ok(MultiSMSolution {
        w_blocks: blocks,
        objective,
        patterns: patterns.to_vec(),
        activation,
        range_residual,
    })
}

pub(crate) fn check_patterns(data: &DatasetND, patterns: &[ActivationPattern]) -> Result<()> {
    for p in patterns {
        if p.mask.len() != data.n() || p.generator.len() != data.d() {
            return Err(Error::DimensionMismatch(format!(
                "pattern with mask {} / generator {} for n={}, d={}",
                p.mask.len(),
                p.generator.len(),
                data.n(),
                data.d()
            )));
        }
    }
    Ok(())
}

/// Cone membership violation `max_k max(0, -s_k x_k . w)` with s_k = +-1
/// from the mask.
pub fn cone_violation(x: &DMatrix<f64>, pattern: &ActivationPattern, w: &[f64]) -> f64 {
    (0..x.nrows())
        .map(|k| {
            let s = if pattern.mask[k] { 1.0 } else { -1.0 };
            (-s * dot_row(x, k, w)).max(0.0)
        })
        .fold(0.0, f64::max)
}

/// Whether `w` induces exactly the pattern's mask.
fn induces(x: &DMatrix<f64>, pattern: &ActivationPattern, w: &[f64]) -> bool {
    mask_of(x, w) == pattern.mask
}

/// Writes `u = u_pos - u_neg` with both parts inducing the pattern.
pub fn cone_split(
    u: &[f64],
    pattern: &ActivationPattern,
    data: &DatasetND,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let x = data.x();
    let d = data.d();
    if u.len() != d || pattern.mask.len() != data.n() {
        return Err(Error::DimensionMismatch("cone_split operands".into()));
    }
    let zero = vec![0.0; d];
    if induces(x, pattern, u) {
        return Ok((u.to_vec(), zero));
    }
    let neg: Vec<f64> = u.iter().map(|v| -v).collect();
    if induces(x, pattern, &neg) {
        return Ok((zero, neg));
    }
    if let Some(pair) = ray_split(x, pattern, u) {
        return Ok(pair);
    }
    dykstra_split(x, pattern, u)
}

fn ray_split(x: &DMatrix<f64>, pattern: &ActivationPattern, u: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let g = &pattern.generator;
    let unorm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut c = 0.0f64;
    for k in 0..x.nrows() {
        if x.row(k).norm() == 0.0 {
            continue;
        }
        let s = if pattern.mask[k] { 1.0 } else { -1.0 };
        let mk = s * dot_row(x, k, g);
        let uk = s * dot_row(x, k, u);
        if mk > 0.0 {
            c = c.max(2.0 * (-uk).max(0.0) / mk);
        } else if uk < 0.0 || !pattern.mask[k] {
            return None;
        }
    }
    if c == 0.0 {
        c = unorm.max(1e-300);
    }
    let neg: Vec<f64> = g.iter().map(|v| c * v).collect();
    let pos: Vec<f64> = u.iter().zip(&neg).map(|(a, b)| a + b).collect();
    (induces(x, pattern, &pos) && induces(x, pattern, &neg)).then_some((pos, neg))
}

/// Alternating projections onto `s_k x_k . w >= max(0, s_k x_k . u) + tau_k`,
/// with a small margin tau_k so the result induces the pattern strictly.
fn dykstra_split(
    x: &DMatrix<f64>,
    pattern: &ActivationPattern,
    u: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, d) = (x.nrows(), x.ncols());
    let unorm = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let mut a = Vec::new();
    let mut h = Vec::new();
    for k in 0..n {
        let nk = x.row(k).norm();
        if nk == 0.0 {
            continue;
        }
        let s = if pattern.mask[k] { 1.0 } else { -1.0 };
        let ak: Vec<f64> = (0..d).map(|l| s * x[(k, l)]).collect();
        let uk: f64 = ak.iter().zip(u).map(|(p, q)| p * q).sum();
        let tau = 1e-6 * nk * unorm;
        a.push(ak);
        h.push(uk.max(0.0) + tau);
    }
    let mut w = u.to_vec();
    let mut incr = vec![vec![0.0; d]; a.len()];
    let mut worst = f64::INFINITY;
    for _ in 0..DYKSTRA_SWEEPS {
        for (k, ak) in a.iter().enumerate() {
            let y: Vec<f64> = w.iter().zip(&incr[k]).map(|(p, q)| p + q).collect();
            let dotv: f64 = ak.iter().zip(&y).map(|(p, q)| p * q).sum();
            let nn: f64 = ak.iter().map(|v| v * v).sum();
            let step = ((h[k] - dotv) / nn).max(0.0);
            for l in 0..d {
                let next = y[l] + step * ak[l];
                incr[k][l] = y[l] - next;
                w[l] = next;
            }
        }
        worst = a
            .iter()
            .zip(&h)
            .map(|(ak, hk)| (hk - ak.iter().zip(&w).map(|(p, q)| p * q).sum::<f64>()).max(0.0))
            .fold(0.0, f64::max);
        if worst <= 1e-12 * unorm {
            break;
        }
    }
    let neg: Vec<f64> = w.iter().zip(u).map(|(p, q)| p - q).collect();
    if induces(x, pattern, &w) && induces(x, pattern, &neg) {
        Ok((w, neg))
    } else {
        Err(Error::SplitInfeasible(worst))
    }
}

/// Builds a network whose SM objective equals the convex solution's, using
/// an SVD of each block and a cone split of each left factor.
pub fn reconstruct_network_nd(sol: &MultiSMSolution, data: &DatasetND) -> Result<TwoLayerParams> {
    let d = data.d();
    let mut firsts: Vec<Vec<f64>> = Vec::new();
    let mut seconds: Vec<Vec<f64>> = Vec::new();
    for (w, pat) in sol.w_blocks.iter().zip(&sol.patterns) {
        if w.shape() != (d, d) {
            return Err(Error::DimensionMismatch("W block shape".into()));
        }
        let f = crate::linalg::svd(w);
        let (uu, vv_all) = (&f.u, &f.v);
        for (k, &s) in f.s.iter().enumerate().take(f.rank()) {
            let r = s.sqrt();
            let ut: Vec<f64> = uu.column(k).iter().map(|v| v * r).collect();
            let vv: Vec<f64> = vv_all.column(k).iter().map(|v| v * r).collect();
            let (up, un) = cone_split(&ut, pat, data)?;
            firsts.push(up);
            seconds.push(vv.clone());
            firsts.push(un);
            seconds.push(vv.iter().map(|v| -v).collect());
        }
    }
    let m = firsts.len();
    let mut p = TwoLayerParams::zeros(d, m, sol.activation);
    for j in 0..m {
        for l in 0..d {
            p.w1[(j, l)] = firsts[j][l];
            p.w2[(l, j)] = seconds[j][l];
        }
    }
    Ok(p)
}

/// SM objective of a network on the data, without weight decay:
/// `sum_i 0.5 ||s(x_i)||^2 + tr(J s(x_i))`.
pub fn network_sm_objective(params: &TwoLayerParams, data: &DatasetND) -> Result<f64> {
    params.validate()?;
    if params.dim() != data.d() {
        return Err(Error::DimensionMismatch("network and data dimension".into()));
    }
    let mut total = 0.0;
    for i in 0..data.n() {
        let x = data.row(i);
        let s = params.forward(&x);
        total += 0.5 * s.iter().map(|v| v * v).sum::<f64>() + params.jacobian_trace(&x);
    }
    Ok(total)
}

/// JSON form: masks as bitstrings and row-major blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiSMJson {
    pub activation: Activation,
    pub masks: Vec<String>,
    pub generators: Vec<Vec<f64>>,
    pub w_blocks: Vec<Vec<Vec<f64>>>,
    pub objective: f64,
    pub range_residual: f64,
}

impl MultiSMSolution {
    pub fn to_json(&self) -> MultiSMJson {
        MultiSMJson {
            activation: self.activation,
            masks: self.patterns.iter().map(|p| p.bitstring()).collect(),
            generators: self.patterns.iter().map(|p| p.generator.clone()).collect(),
            w_blocks: self
                .w_blocks
                .iter()
                .map(|b| b.row_iter().map(|r| r.iter().cloned().collect()).collect())
                .collect(),
            objective: self.objective,
            range_residual: self.range_residual,
        }
    }
}
