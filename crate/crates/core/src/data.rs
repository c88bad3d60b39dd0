//! Datasets, architecture configuration and noise schedules.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::numerical_rank;

/// Points closer than this are treated as duplicates.
pub const DUPLICATE_TOL: f64 = 1e-12;

/// Sorted, distinct univariate samples with cached mean and biased variance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset1D {
    points: Vec<f64>,
    mu: f64,
    v: f64,
}

impl Dataset1D {
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Variance with divisor n.
    pub fn v(&self) -> f64 {
        self.v
    }

    pub fn min(&self) -> f64 {
        self.points[0]
    }

    pub fn max(&self) -> f64 {
        self.points[self.points.len() - 1]
    }
}

pub fn make_dataset_1d(raw: &[f64]) -> Result<Dataset1D> {
    if raw.len() < 2 {
        return Err(Error::TooFewPoints(raw.len()));
    }
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let mut points = raw.to_vec();
    points.sort_by(f64::total_cmp);
    for w in points.windows(2) {
        if w[1] - w[0] <= DUPLICATE_TOL {
            return Err(Error::DuplicatePoints(w[0]));
        }
    }
    let n = points.len() as f64;
    let mu = points.iter().sum::<f64>() / n;
    let v = points.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
    Ok(Dataset1D { points, mu, v })
}

/// Multivariate samples stored as an n x d matrix, with numerical rank.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetND {
    x: DMatrix<f64>,
    rank: usize,
}

impl DatasetND {
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().cloned().collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::EmptyData);
        }
        let d = rows[0].len();
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch(format!(
                "row of length {} in data with d={d}",
                bad.len()
            )));
        }
        make_dataset_nd(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
    }
}

pub fn make_dataset_nd(x: DMatrix<f64>) -> Result<DatasetND> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::EmptyData);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let rank = numerical_rank(&x);
    Ok(DatasetND { x, rank })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Abs,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Abs => z.abs(),
        }
    }

    /// Derivative with the conventions 1{z >= 0} and sign(0) = +1.
    pub fn deriv(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Abs => crate::linalg::sign0(z),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub activation: Activation,
    pub skip: bool,
    pub beta: f64,
    #[serde(default)]
    pub m_hint: usize,
}

impl ArchitectureConfig {
    pub fn new(activation: Activation, skip: bool, beta: f64) -> Self {
        ArchitectureConfig {
            activation,
            skip,
            beta,
            m_hint: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    sigmas: Vec<f64>,
    steps_per_level: Vec<usize>,
}

impl NoiseSchedule {
    pub fn new(sigmas: Vec<f64>, steps_per_level: Vec<usize>) -> Result<Self> {
        if sigmas.is_empty() {
            return Err(Error::InvalidConfig("empty noise schedule".into()));
        }
        if sigmas.len() != steps_per_level.len() {
            return Err(Error::LengthMismatch(format!(
                "{} sigmas vs {} step counts",
                sigmas.len(),
                steps_per_level.len()
            )));
        }
        if sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidConfig("sigmas must be positive".into()));
        }
        if sigmas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidConfig(
                "sigmas must be strictly decreasing".into(),
            ));
        }
        Ok(NoiseSchedule {
            sigmas,
            steps_per_level,
        })
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn steps_per_level(&self) -> &[usize] {
        &self.steps_per_level
    }

    pub fn levels(&self) -> usize {
        self.sigmas.len()
    }
}

/// Reads a headerless CSV with one sample per row.
pub fn read_rows_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::Io(format!("{}: bad number {f:?}: {e}", path.display())))
            })
            .collect::<Result<Vec<f64>>>()?;
        if !row.is_empty() {
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn load_dataset_1d(path: &Path) -> Result<Dataset1D> {
    let rows = read_rows_csv(path)?;
    if let Some(r) = rows.iter().find(|r| r.len() != 1) {
        return Err(Error::DimensionMismatch(format!(
            "expected one column, found {}",
            r.len()
        )));
    }
    make_dataset_1d(&rows.iter().map(|r| r[0]).collect::<Vec<_>>())
}

pub fn load_dataset_nd(path: &Path) -> Result<DatasetND> {
    DatasetND::from_rows(&read_rows_csv(path)?)
}
