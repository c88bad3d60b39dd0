//! Output directory with CSV/JSON writers and the run manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use scorekit::baseline::{ADAM_BETA1, ADAM_BETA2, ADAM_EPS, FD_STEP, UNDERTRAINED_GAP};
use scorekit::prox::{DEFAULT_MAX_ITERS, DEFAULT_TOL};
use scorekit::samplers::DEFAULT_ETA_SCALE;
use scorekit::sm1d::RELU_EPS;

use crate::error::CliError;

pub struct OutDir {
    dir: PathBuf,
    files: Vec<String>,
}

/// Cell of a CSV row.
pub enum Cell {
    F(f64),
    U(usize),
    Empty,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::F(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::U(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::F)
    }
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn csv<I>(&mut self, name: &str, header: &[&str], rows: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = Vec<Cell>>,
    {
        let mut s = header.join(",");
        s.push('\n');
        for row in rows {
            for (i, c) in row.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                match c {
                    Cell::F(v) => write!(s, "{v}").unwrap(),
                    Cell::U(v) => write!(s, "{v}").unwrap(),
                    Cell::Empty => {}
                }
            }
            s.push('\n');
        }
        self.write(name, &s)
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        s.push('\n');
        self.write(name, &s)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn mark_written(&mut self, name: &str) {
        self.files.push(name.to_string());
    }

    /// Writes `manifest.json`: command, version, resolved configuration,
    /// values derived during the run, module defaults and the file list.
    pub fn manifest(&mut self, command: &str, config: &Value, derived: &Value) -> Result<(), CliError> {
        let mut files = self.files.clone();
        files.push("manifest.json".into());
        let m = json!({
            "tool": "scorekit",
            "version": scorekit::VERSION,
            "command": command,
            "config": config,
            "derived": derived,
            "defaults": module_defaults(),
            "files": files,
        });
        self.json("manifest.json", &m)
    }
}

pub fn module_defaults() -> Value {
    json!({
        "solver": {
            "tol": DEFAULT_TOL,
            "max_iters": DEFAULT_MAX_ITERS,
            "method": "monotone FISTA with restart and active-set polish",
        },
        "relu_bias_shift": RELU_EPS,
        "adam": {
            "beta1": ADAM_BETA1,
            "beta2": ADAM_BETA2,
            "eps": ADAM_EPS,
            "init": "w, b, alpha ~ N(0, 1/m); b0 = v = 0",
            "width": "m = 4n when m = 0",
            "batch": "full batch, one step per epoch",
        },
        "grad_check_step": FD_STEP,
        "undertrained_gap": UNDERTRAINED_GAP,
        "eta_scale": DEFAULT_ETA_SCALE,
        "eta_rule": "eta = eta_scale * n v / (n - beta)",
        "annealed_eta_rule": "eta_k = eta_scale * sigma_k^2",
        "dsm_labels": "-delta / epsilon",
        "wedge_lambda_rule": "lambda = lambda_factor * max_j ||K_j^T L||_2 (library default factor 0.01)",
        "wedge_tol_rule": "tol = rel_tol * max_j ||K_j^T L||_2",
        "rng": "ChaCha8, stream = chain index",
    })
}
