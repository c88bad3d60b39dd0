//! Multivariate denoising score matching: least squares over arrangement
//! patterns, and the gated-wedge group-lasso program.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Activation, DatasetND};
use crate::error::{Error, Result};
use crate::prox::{
    group_lasso_kkt, group_lasso_objective, least_squares_min_norm, solve_group_lasso, SolveStatus,
};
use crate::smnd::{check_patterns, split_blocks, stacked_design, ActivationPattern, MultiSMSolution};

/// Relative size below which a generator wedge counts as degenerate.
const DEGENERATE_RTOL: f64 = 1e-12;

/// Minimum-norm solution of `min 0.5 ||sum_i D_i X W_i - L||_F^2`.
#[derive(Debug, Clone)]
pub struct DsmNdSolution {
    pub w_blocks: Vec<DMatrix<f64>>,
    pub objective: f64,
    pub patterns: Vec<ActivationPattern>,
    pub activation: Activation,
    /// `||Xt^T (Xt W - L)||_F`.
    pub normal_residual: f64,
}

impl DsmNdSolution {
    /// Training predictions `sum_i D_i X W_i`.
    pub fn fitted(&self, data: &DatasetND) -> DMatrix<f64> {
        let (xt, _) = stacked_design(data, &self.patterns, self.activation);
        if self.w_blocks.is_empty() {
            return DMatrix::zeros(data.n(), data.d());
        }
        xt * crate::smnd::stack_blocks(&self.w_blocks)
    }

    /// Same blocks in the score-matching container, for network reconstruction.
    pub fn as_multi(&self) -> MultiSMSolution {
        MultiSMSolution {
            w_blocks: self.w_blocks.clone(),
            objective: self.objective,
            patterns: self.patterns.clone(),
            activation: self.activation,
            range_residual: 0.0,
        }
    }
}

pub fn solve_dsm_multivariate(
    data: &DatasetND,
    labels: &DMatrix<f64>,
    patterns: &[ActivationPattern],
    activation: Activation,
) -> Result<DsmNdSolution> {
    let (n, d) = (data.n(), data.d());
    if labels.shape() != (n, d) {
        return Err(Error::DimensionMismatch(format!(
            "labels are {}x{}, data is {n}x{d}",
            labels.nrows(),
            labels.ncols()
        )));
    }
    check_patterns(data, patterns)?;
    if patterns.is_empty() {
        return Ok(DsmNdSolution {
            w_blocks: vec![],
            objective: 0.5 * labels.norm_squared(),
            patterns: vec![],
            activation,
            normal_residual: 0.0,
        });
    }
    let (xt, _) = stacked_design(data, patterns, activation);
    let w = least_squares_min_norm(&xt, labels)?;
    let r = &xt * &w - labels;
    Ok(DsmNdSolution {
        w_blocks: split_blocks(&w, d),
        objective: 0.5 * r.norm_squared(),
        patterns: patterns.to_vec(),
        activation,
        normal_residual: xt.tr_mul(&r).norm(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PNorm {
    #[serde(rename = "1")]
    L1,
    #[serde(rename = "2")]
    L2,
}

impl PNorm {
    fn norm(self, v: &[f64]) -> f64 {
        match self {
            PNorm::L1 => v.iter().map(|a| a.abs()).sum(),
            PNorm::L2 => v.iter().map(|a| a * a).sum::<f64>().sqrt(),
        }
    }
}

/// Gated-wedge features `K_ij = (x_i ^ x_j1 ^ ... ^ x_j(d-1))_+ / ||x_j1 ^ ... ||_p`.
///
/// The wedge with a fixed generator set is linear in the first slot,
/// `x ^ G = x . c(G)` with `c(G)` the generalized cross product, so each
/// column is stored as the normalized normal `c(G) / ||c(G)||_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct WedgeFeatureMap {
    pub k: DMatrix<f64>,
    pub column_index: Vec<Vec<usize>>,
    /// One row per column of `k`.
    pub normals: DMatrix<f64>,
    pub p_norm: PNorm,
    pub dropped: Vec<Vec<usize>>,
}

impl WedgeFeatureMap {
    pub fn columns(&self) -> usize {
        self.k.ncols()
    }

    /// Feature row for an arbitrary point.
    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        self.normals
            .row_iter()
            .map(|nrm| nrm.iter().zip(x).map(|(a, b)| a * b).sum::<f64>().max(0.0))
            .collect()
    }
}

/// `c` with `det[x; g_1; ...; g_(d-1)] = x . c` for every `x`.
pub fn generalized_cross(gens: &[Vec<f64>], d: usize) -> Vec<f64> {
    (0..d)
        .map(|col| {
            let minor = DMatrix::from_fn(d - 1, d - 1, |r, c| {
                let cc = if c < col { c } else { c + 1 };
                gens[r][cc]
            });
            let sign = if col % 2 == 0 { 1.0 } else { -1.0 };
            sign * minor.determinant()
        })
        .collect()
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in (i + 1)..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

pub fn build_wedge_features(data: &DatasetND, p_norm: PNorm) -> Result<WedgeFeatureMap> {
    let (n, d) = (data.n(), data.d());
    if d < 2 {
        return Err(Error::DimensionTooSmall(d));
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|i| data.row(i)).collect();
    let combos = combinations(n, d - 1);
    let normals: Vec<Option<Vec<f64>>> = combos
        .par_iter()
        .map(|idx| {
            let gens: Vec<Vec<f64>> = idx.iter().map(|&j| rows[j].clone()).collect();
            let c = generalized_cross(&gens, d);
            let scale: f64 = gens.iter().map(|g| PNorm::L2.norm(g)).product();
            let nrm = p_norm.norm(&c);
            if nrm > DEGENERATE_RTOL * scale && nrm > 0.0 {
                Some(c.iter().map(|v| v / nrm).collect())
            } else {
                None
            }
        })
        .collect();
    let mut column_index = Vec::new();
    let mut dropped = Vec::new();
    let mut kept = Vec::new();
    for (idx, nrm) in combos.into_iter().zip(normals) {
        match nrm {
            Some(v) => {
                column_index.push(idx);
                kept.push(v);
            }
            None => dropped.push(idx),
        }
    }
    let c = kept.len();
    let normals = DMatrix::from_fn(c, d, |j, l| kept[j][l]);
    let mut k = DMatrix::zeros(n, c);
    for j in 0..c {
        for i in 0..n {
            if column_index[j].contains(&i) {
                continue;
            }
            let s: f64 = (0..d).map(|l| rows[i][l] * normals[(j, l)]).sum();
            k[(i, j)] = s.max(0.0);
        }
    }
    Ok(WedgeFeatureMap {
        k,
        column_index,
        normals,
        p_norm,
        dropped,
    })
}

/// `0.01 * max_j ||K_j^T L||_2`.
pub fn default_wedge_lambda(features: &WedgeFeatureMap, labels: &DMatrix<f64>) -> f64 {
    0.01 * max_group_correlation(features, labels)
}

pub fn max_group_correlation(features: &WedgeFeatureMap, labels: &DMatrix<f64>) -> f64 {
    features
        .k
        .tr_mul(labels)
        .row_iter()
        .map(|r| r.norm())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize)]
pub struct WedgeFit {
    /// c x d_out coefficients, one row per wedge column.
    #[serde(skip)]
    pub z: DMatrix<f64>,
    pub lambda: f64,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub active_columns: usize,
    pub p_norm: PNorm,
    pub approximation: String,
}

/// Solves `min_Z ||K Z - L||_F^2 + lambda sum_j ||Z_j||_2`; `lambda = 0`
/// returns the minimum-norm least-squares solution.
pub fn fit_wedge_dsm(
    features: &WedgeFeatureMap,
    labels: &DMatrix<f64>,
    lambda: f64,
    tol: f64,
    max_iters: usize,
) -> Result<WedgeFit> {
    let k = &features.k;
    if labels.nrows() != k.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "labels have {} rows, K has {}",
            labels.nrows(),
            k.nrows()
        )));
    }
    let (z, iterations, status) = if lambda == 0.0 {
        (least_squares_min_norm(k, labels)?, 0, SolveStatus::Converged)
    } else {
        let sol = solve_group_lasso(k, labels, lambda, tol, max_iters)?;
        (sol.z, sol.iterations, sol.status)
    };
    let active_columns = z.row_iter().filter(|r| r.norm() > 0.0).count();
    let approximation = match features.p_norm {
        PNorm::L1 => "exact".to_string(),
        PNorm::L2 => "1/(1-eps) upper bound, eps = chamber diameter bound (not verified)".to_string(),
    };
    Ok(WedgeFit {
        objective: group_lasso_objective(k, labels, lambda, &z),
        kkt_residual: group_lasso_kkt(k, labels, lambda, &z),
        z,
        lambda,
        iterations,
        status,
        active_columns,
        p_norm: features.p_norm,
        approximation,
    })
}

/// `f(x) = sum_j Z_j (x ^ G_j)_+ / ||G_j||_p` for each row of `x_test`.
pub fn predict_wedge_score(
    z: &DMatrix<f64>,
    features: &WedgeFeatureMap,
    x_test: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if z.nrows() != features.columns() {
        return Err(Error::DimensionMismatch(format!(
            "Z has {} rows, feature map has {} columns",
            z.nrows(),
            features.columns()
        )));
    }
    if x_test.ncols() != features.normals.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "test points have {} columns, features expect {}",
            x_test.ncols(),
            features.normals.ncols()
        )));
    }
    let gated = (x_test * features.normals.transpose()).map(|v| v.max(0.0));
    Ok(gated * z)
}

/// A fitted wedge predictor usable as a pointwise score. With `lifted`,
/// inputs are augmented with a trailing 1 before the wedge features.
#[derive(Debug, Clone)]
pub struct WedgeScore {
    pub z: DMatrix<f64>,
    pub features: WedgeFeatureMap,
    pub lifted: bool,
}

impl WedgeScore {
    pub fn input_dim(&self) -> usize {
        self.features.normals.ncols() - usize::from(self.lifted)
    }

    pub fn output_dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let nr = &self.features.normals;
        let d = nr.ncols();
        for j in 0..nr.nrows() {
            let mut s: f64 = (0..x.len()).map(|l| nr[(j, l)] * x[l]).sum();
            if self.lifted {
                s += nr[(j, d - 1)];
            }
            if s > 0.0 {
                for (c, o) in out.iter_mut().enumerate() {
                    *o += self.z[(j, c)] * s;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WedgeHeader {
    pub p_norm: PNorm,
    pub column_index: Vec<Vec<usize>>,
    pub dropped: Vec<Vec<usize>>,
}

/// K and Z as CSV text, each preceded by a `# {json}` header line.
pub fn wedge_csv(features: &WedgeFeatureMap, z: &DMatrix<f64>) -> Result<(String, String)> {
    let header = WedgeHeader {
        p_norm: features.p_norm,
        column_index: features.column_index.clone(),
        dropped: features.dropped.clone(),
    };
    let line = format!("# {}\n", serde_json::to_string(&header)?);
    let table = |m: &DMatrix<f64>, names: Vec<String>| -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&names)?;
        for r in m.row_iter() {
            w.write_record(r.iter().map(|v| format!("{v:e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))?)
    };
    let k_names = (0..features.columns()).map(|j| format!("k{j}")).collect();
    let z_names = (0..z.ncols()).map(|j| format!("z{j}")).collect();
    Ok((
        line.clone() + &table(&features.k, k_names)?,
        line + &table(z, z_names)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(rows: &[[f64; 2]]) -> DatasetND {
        DatasetND::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn hand_evaluated_entry() {
        let d = data(&[[1.0, 0.0], [0.0, 2.0]]);
        let f = build_wedge_features(&d, PNorm::L2).unwrap();
        assert_eq!(f.column_index, vec![vec![0], vec![1]]);
        assert!((f.k[(0, 1)] - 1.0).abs() < 1e-15);
        assert_eq!(f.k[(0, 0)], 0.0);
        assert_eq!(f.k[(1, 1)], 0.0);
        // det[(0,2);(1,0)] = -2
        assert_eq!(f.k[(1, 0)], 0.0);
    }

    #[test]
    fn generator_scaling_leaves_column_unchanged() {
        let a = data(&[[0.3, -1.0], [1.2, 0.4], [-0.5, 0.8]]);
        let b = data(&[[0.3, -1.0], [3.6, 1.2], [-0.5, 0.8]]);
        for p in [PNorm::L1, PNorm::L2] {
            let fa = build_wedge_features(&a, p).unwrap();
            let fb = build_wedge_features(&b, p).unwrap();
            for i in [0, 2] {
                assert!((fa.k[(i, 1)] - fb.k[(i, 1)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_generator_dropped() {
        let d = data(&[[0.0, 0.0], [1.0, 1.0], [2.0, -1.0]]);
        let f = build_wedge_features(&d, PNorm::L2).unwrap();
        assert_eq!(f.dropped, vec![vec![0]]);
        assert_eq!(f.columns(), 2);
    }

    #[test]
    fn combinations_count() {
        assert_eq!(combinations(5, 2).len(), 10);
        assert_eq!(combinations(4, 1), vec![vec![0], vec![1], vec![2], vec![3]]);
        assert_eq!(combinations(3, 3), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn cross_product_in_three_dimensions() {
        let c = generalized_cross(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]], 3);
        assert_eq!(c, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn identity_pattern_fits_labels() {
        let d = data(&[[1.0, 0.0], [0.0, 1.0]]);
        let all = ActivationPattern {
            mask: vec![true, true],
            generator: vec![1.0, 1.0],
        };
        let l = DMatrix::from_row_slice(2, 2, &[0.5, -2.0, 3.0, 1.0]);
        let sol = solve_dsm_multivariate(&d, &l, &[all], Activation::Relu).unwrap();
        assert!((&sol.w_blocks[0] - &l).amax() < 1e-14);
        assert!(sol.objective < 1e-28);
    }

    #[test]
    fn zero_labels_give_zero() {
        let d = data(&[[1.0, 0.5], [-0.3, 1.0], [0.2, -0.7]]);
        let l = DMatrix::zeros(3, 2);
        let f = build_wedge_features(&d, PNorm::L2).unwrap();
        let fit = fit_wedge_dsm(&f, &l, 0.1, 1e-10, 10_000).unwrap();
        assert_eq!(fit.z.amax(), 0.0);
        let pats = crate::smnd::enumerate_patterns(&d, Activation::Relu, crate::smnd::EnumerationMethod::Exhaustive)
            .unwrap();
        let sol = solve_dsm_multivariate(&d, &l, &pats, Activation::Relu).unwrap();
        assert!(sol.w_blocks.iter().all(|w| w.amax() == 0.0));
    }

    #[test]
    fn csv_has_json_header() {
        let d = data(&[[1.0, 0.5], [-0.3, 1.0], [0.2, -0.7]]);
        let f = build_wedge_features(&d, PNorm::L1).unwrap();
        let z = DMatrix::from_element(f.columns(), 2, 0.25);
        let (k_csv, z_csv) = wedge_csv(&f, &z).unwrap();
        let first = k_csv.lines().next().unwrap();
        let h: WedgeHeader = serde_json::from_str(first.trim_start_matches("# ")).unwrap();
        assert_eq!(h.column_index.len(), 3);
        assert_eq!(z_csv.lines().count(), 2 + 3);
    }
}
