//! Run configurations: defaults, then the JSON file, then `--set` overrides.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use scorekit::baseline::Objective;
use scorekit::experiments::{gaussian_data, mixture_data, SpiralConfig};
use scorekit::prox::{DEFAULT_MAX_ITERS, DEFAULT_TOL};
use scorekit::samplers::{InitDist, Record, DEFAULT_ETA_SCALE};
use scorekit::{data::load_dataset_1d, make_dataset_1d, Activation, Dataset1D};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Headerless CSV, one value per line.
    File { path: PathBuf },
    /// Standard normal draws from the run seed.
    Gaussian { n: usize },
    /// Unit-variance components around each center.
    Mixture { centers: Vec<f64>, per_component: usize },
}

impl DataSource {
    pub fn load(&self, seed: u64) -> Result<Dataset1D, CliError> {
        Ok(match self {
            DataSource::File { path } => load_dataset_1d(path)?,
            DataSource::Gaussian { n } => make_dataset_1d(&gaussian_data(*n, seed))?,
            DataSource::Mixture { centers, per_component } => {
                make_dataset_1d(&mixture_data(centers, *per_component, seed))?
            }
        })
    }
}

/// Evaluation grid over the data range, widened by `pad` times the range on each side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Grid {
    pub points: usize,
    pub pad: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Grid { points: 201, pad: 0.25 }
    }
}

impl Grid {
    pub fn xs(&self, data: &Dataset1D) -> Result<Vec<f64>, CliError> {
        if self.points < 2 || !(self.pad >= 0.0) {
            return Err(CliError::Config("grid needs points >= 2 and pad >= 0".into()));
        }
        let span = data.max() - data.min();
        let (lo, hi) = (data.min() - self.pad * span, data.max() + self.pad * span);
        let k = (self.points - 1) as f64;
        Ok((0..self.points).map(|i| lo + (hi - lo) * i as f64 / k).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitSmConfig {
    pub data: DataSource,
    pub activation: Activation,
    pub skip: bool,
    /// Explicit weight decay; when null, `||b||_inf + beta_offset`.
    pub beta: Option<f64>,
    pub beta_offset: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub grid: Grid,
    pub write_program: bool,
    pub seed: u64,
}

impl Default for FitSmConfig {
    fn default() -> Self {
        FitSmConfig {
            data: DataSource::Gaussian { n: 500 },
            activation: Activation::Relu,
            skip: false,
            beta: None,
            beta_offset: -1.0,
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
            grid: Grid::default(),
            write_program: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitDsmConfig {
    pub data: DataSource,
    pub epsilon: f64,
    pub activation: Activation,
    /// Explicit weight decay; when null, `beta_factor` times the zero threshold.
    pub beta: Option<f64>,
    pub beta_factor: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub grid: Grid,
    pub seed: u64,
}

impl Default for FitDsmConfig {
    fn default() -> Self {
        FitDsmConfig {
            data: DataSource::Gaussian { n: 200 },
            epsilon: 0.1,
            activation: Activation::Relu,
            beta: None,
            beta_factor: 0.1,
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
            grid: Grid::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Zero { dim: usize },
    /// Univariate `slope * x + intercept`.
    Linear {
        slope: f64,
        #[serde(default)]
        intercept: f64,
    },
    /// Network parameters JSON, as written by fit-sm or fit-dsm.
    Params { path: PathBuf },
    /// Fit the score-matching program first, then sample its network.
    Sm(FitSmConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HistogramSpec {
    pub bins: usize,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        HistogramSpec { bins: 100, lo: None, hi: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    pub model: ModelSpec,
    /// Step size; when null, `eta_scale * n v / (n - beta)` for a fitted ReLU model.
    pub eta: Option<f64>,
    pub eta_scale: f64,
    pub steps: usize,
    pub chains: usize,
    pub init: InitDist,
    pub record: Record,
    pub histogram: HistogramSpec,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            model: ModelSpec::Sm(FitSmConfig::default()),
            eta: None,
            eta_scale: DEFAULT_ETA_SCALE,
            steps: 500,
            chains: 100_000,
            init: InitDist::Uniform { lo: -10.0, hi: 10.0 },
            record: Record::Final,
            histogram: HistogramSpec::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub data: DataSource,
    pub objective: Objective,
    pub activation: Activation,
    pub skip: bool,
    /// Explicit weight decay; when null, SM uses `||b||_inf + beta_offset`
    /// and DSM uses `beta_factor` times the zero threshold.
    pub beta: Option<f64>,
    pub beta_offset: f64,
    pub beta_factor: f64,
    pub epsilon: f64,
    pub learning_rates: Vec<f64>,
    pub runs: usize,
    pub epochs: usize,
    /// Hidden width; 0 selects 4n.
    pub m: usize,
    /// Also solve the convex program for reference.
    pub convex: bool,
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            data: DataSource::Gaussian { n: 500 },
            objective: Objective::Sm,
            activation: Activation::Relu,
            skip: false,
            beta: None,
            beta_offset: -1.0,
            beta_factor: 0.1,
            epsilon: 1.0,
            learning_rates: vec![1.0, 1e-2, 1e-6],
            runs: 10,
            epochs: 500,
            m: 0,
            convex: true,
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct SpiralRunConfig {
    #[serde(flatten)]
    pub spiral: SpiralConfig,
    /// Write each level's wedge feature matrix and coefficients.
    pub write_features: bool,
}

/// Objects carrying a `kind` tag are replaced when the tag changes and
/// merged field by field otherwise.
fn merge(dst: &mut Value, src: &Value) {
    match (dst, src) {
        (Value::Object(d), Value::Object(s)) if d.get("kind") == s.get("kind") || s.get("kind").is_none() => {
            for (k, v) in s {
                match d.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        d.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (d, s) => *d = s.clone(),
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::Config(format!("bad key {key:?}")));
        }
        if !cur.is_object() {
            *cur = Value::Object(Map::new());
        }
        let obj = cur.as_object_mut().expect("object");
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert(Value::Object(Map::new()));
    }
    Ok(())
}

/// Parses `key=value`; the value is read as JSON, falling back to a string.
pub fn parse_set(s: &str) -> Result<(String, Value), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got {s:?}"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

fn unknown_keys(user: &Value, resolved: &Value, prefix: &str, out: &mut Vec<String>) {
    if let (Value::Object(u), Value::Object(r)) = (user, resolved) {
        for (k, v) in u {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match r.get(k) {
                Some(rv) => unknown_keys(v, rv, &path, out),
                None => out.push(path),
            }
        }
    }
}

/// Resolves a configuration and returns it with its JSON echo.
pub fn resolve<T>(file: Option<&Path>, sets: &[(String, Value)]) -> Result<(T, Value), CliError>
where
    T: Serialize + DeserializeOwned + Default,
{
    let mut user = Value::Object(Map::new());
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let parsed: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if !parsed.is_object() {
            return Err(CliError::Config(format!("{}: expected a JSON object", path.display())));
        }
        merge(&mut user, &parsed);
    }
    for (k, v) in sets {
        set_path(&mut user, k, v.clone())?;
    }
    let mut merged = serde_json::to_value(T::default()).expect("default config serializes");
    merge(&mut merged, &user);
    let cfg: T = serde_json::from_value(merged).map_err(|e| CliError::Config(e.to_string()))?;
    let echo = serde_json::to_value(&cfg).expect("config serializes");
    let mut unknown = Vec::new();
    unknown_keys(&user, &echo, "", &mut unknown);
    if !unknown.is_empty() {
        return Err(CliError::Config(format!("unknown keys: {}", unknown.join(", "))));
    }
    Ok((cfg, echo))
}
