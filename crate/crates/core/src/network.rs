//! Two-layer network `W2 act(W1 x + b1) + V x + b2`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Activation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerParams {
    /// First layer, m x d.
    pub w1: DMatrix<f64>,
    /// First-layer bias, length m.
    pub b1: DVector<f64>,
    /// Second layer, d x m.
    pub w2: DMatrix<f64>,
    /// Output bias, length d.
    pub b2: DVector<f64>,
    /// Skip connection, d x d.
    pub v: DMatrix<f64>,
    pub activation: Activation,
}

impl TwoLayerParams {
    pub fn zeros(d: usize, m: usize, activation: Activation) -> Self {
        TwoLayerParams {
            w1: DMatrix::zeros(m, d),
            b1: DVector::zeros(m),
            w2: DMatrix::zeros(d, m),
            b2: DVector::zeros(d),
            v: DMatrix::zeros(d, d),
            activation,
        }
    }

    pub fn width(&self) -> usize {
        self.w1.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (m, d) = self.w1.shape();
        let ok = self.b1.len() == m
            && self.w2.shape() == (d, m)
            && self.b2.len() == d
            && self.v.shape() == (d, d);
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "inconsistent parameter shapes: w1 {:?}, b1 {}, w2 {:?}, b2 {}, v {:?}",
                self.w1.shape(),
                self.b1.len(),
                self.w2.shape(),
                self.b2.len(),
                self.v.shape()
            )))
        }
    }

    /// Forward pass for a single input; `out` has length d.
    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        let (m, d) = self.w1.shape();
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.b2[k] + (0..d).map(|l| self.v[(k, l)] * x[l]).sum::<f64>();
        }
        for j in 0..m {
            let z = self.b1[j] + (0..d).map(|l| self.w1[(j, l)] * x[l]).sum::<f64>();
            let a = self.activation.apply(z);
            if a != 0.0 {
                for (k, o) in out.iter_mut().enumerate() {
                    *o += self.w2[(k, j)] * a;
                }
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.forward_into(x, &mut out);
        out
    }

    /// Trace of the input Jacobian at `x`, with 1{z >= 0} / sign(0) = +1.
    pub fn jacobian_trace(&self, x: &[f64]) -> f64 {
        let (m, d) = self.w1.shape();
        let mut tr = self.v.trace();
        for j in 0..m {
            let z = self.b1[j] + (0..d).map(|l| self.w1[(j, l)] * x[l]).sum::<f64>();
            let g = self.activation.deriv(z);
            if g != 0.0 {
                tr += g * (0..d).map(|l| self.w2[(l, j)] * self.w1[(j, l)]).sum::<f64>();
            }
        }
        tr
    }

    /// Drops neurons whose output weights are all zero. The function is
    /// unchanged on finite inputs.
    pub fn pruned(&self) -> Self {
        let keep: Vec<usize> = (0..self.width()).filter(|&j| self.w2.column(j).iter().any(|&a| a != 0.0)).collect();
        TwoLayerParams {
            w1: self.w1.select_rows(&keep),
            b1: self.b1.select_rows(&keep),
            w2: self.w2.select_columns(&keep),
            b2: self.b2.clone(),
            v: self.v.clone(),
            activation: self.activation,
        }
    }

    /// Sum of squared first- and second-layer weights (the weight-decay term).
    pub fn weight_norm_sq(&self) -> f64 {
        self.w1.norm_squared() + self.w2.norm_squared()
    }

    pub fn to_json(&self) -> ParamsJson {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            m.row_iter().map(|r| r.iter().cloned().collect()).collect()
        };
        ParamsJson {
            activation: self.activation,
            w1: rows(&self.w1),
            b1: self.b1.iter().cloned().collect(),
            w2: rows(&self.w2),
            b2: self.b2.iter().cloned().collect(),
            v: rows(&self.v),
        }
    }

    pub fn from_json(p: &ParamsJson) -> Result<Self> {
        let mat = |rows: &Vec<Vec<f64>>, c: usize| -> Result<DMatrix<f64>> {
            if rows.iter().any(|r| r.len() != c) {
                return Err(Error::DimensionMismatch("ragged matrix".into()));
            }
            Ok(DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j]))
        };
        let d = p.b2.len();
        let m = p.b1.len();
        let out = TwoLayerParams {
            w1: mat(&p.w1, d)?,
            b1: DVector::from_vec(p.b1.clone()),
            w2: mat(&p.w2, m)?,
            b2: DVector::from_vec(p.b2.clone()),
            v: mat(&p.v, d)?,
            activation: p.activation,
        };
        out.validate()?;
        Ok(out)
    }
}

/// Row-major JSON form of [`TwoLayerParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsJson {
    pub activation: Activation,
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
    pub v: Vec<Vec<f64>>,
}

/// Evaluates a univariate network at each test point.
pub fn evaluate_network(params: &TwoLayerParams, x_test: &[f64]) -> Result<Vec<f64>> {
    params.validate()?;
    if params.dim() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "univariate evaluation on a d={} network",
            params.dim()
        )));
    }
    Ok(x_test.iter().map(|&x| params.forward(&[x])[0]).collect())
}

/// Evaluates a network on each row of `x` (t x d).
pub fn evaluate_network_nd(params: &TwoLayerParams, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    params.validate()?;
    let d = params.dim();
    if x.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "inputs have {} columns, network has d={d}",
            x.ncols()
        )));
    }
    let mut out = DMatrix::zeros(x.nrows(), d);
    let mut buf = vec![0.0; d];
    let mut row = vec![0.0; d];
    for i in 0..x.nrows() {
        for l in 0..d {
            row[l] = x[(i, l)];
        }
        params.forward_into(&row, &mut buf);
        for l in 0..d {
            out[(i, l)] = buf[l];
        }
    }
    Ok(out)
}
