//! Langevin Monte Carlo, annealed Langevin and the univariate target density
//! induced by the ReLU score.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset1D, NoiseSchedule};
use crate::dsmnd::WedgeScore;
use crate::error::{Error, Result};
use crate::network::TwoLayerParams;
use crate::sm1d::{t_bound, PiecewiseLinearScore};

/// Default multiplier in `eta = eta_scale * n v / (n - beta)`.
pub const DEFAULT_ETA_SCALE: f64 = 1e-3;

pub trait ScoreModel: Sync {
    fn dim(&self) -> usize;
    fn score_into(&self, x: &[f64], out: &mut [f64]);
}

impl ScoreModel for TwoLayerParams {
    fn dim(&self) -> usize {
        TwoLayerParams::dim(self)
    }

    fn score_into(&self, x: &[f64], out: &mut [f64]) {
        self.forward_into(x, out);
    }
}

impl ScoreModel for PiecewiseLinearScore {
    fn dim(&self) -> usize {
        1
    }

    fn score_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.eval(x[0]);
    }
}

impl ScoreModel for WedgeScore {
    fn dim(&self) -> usize {
        self.input_dim()
    }

    fn score_into(&self, x: &[f64], out: &mut [f64]) {
        self.eval_into(x, out);
    }
}

/// Wraps a closure `f(x, out)` as a score.
pub struct FnScore<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> ScoreModel for FnScore<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score_into(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitDist {
    /// Independent coordinates, uniform on `[lo, hi)`.
    Uniform { lo: f64, hi: f64 },
    Gaussian { mean: f64, sd: f64 },
    /// Chain `c` starts at `points[c % len]`.
    FromPoints { points: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Record {
    Full,
    Final,
    /// Every k-th step, plus the last one.
    Every(usize),
}

impl Record {
    fn keeps(self, step: usize, last: usize) -> bool {
        match self {
            Record::Full => true,
            Record::Final => step == last,
            Record::Every(k) => step == last || (k > 0 && step % k == 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub eta: f64,
    pub steps: usize,
    pub num_chains: usize,
    pub init: InitDist,
    pub seed: u64,
    pub record: Record,
}

impl ChainConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!("eta must be > 0, got {}", self.eta)));
        }
        if self.steps == 0 || self.num_chains == 0 {
            return Err(Error::InvalidConfig("steps and num_chains must be >= 1".into()));
        }
        match &self.init {
            InitDist::Uniform { lo, hi } if !(lo < hi && lo.is_finite() && hi.is_finite()) => {
                Err(Error::InvalidConfig(format!("uniform init needs lo < hi, got [{lo}, {hi}]")))
            }
            InitDist::Gaussian { mean, sd } if !(*sd > 0.0 && sd.is_finite() && mean.is_finite()) => {
                Err(Error::InvalidConfig(format!("gaussian init needs sd > 0, got {sd}")))
            }
            InitDist::FromPoints { points } if points.is_empty() || points.iter().any(|p| p.len() != dim) => {
                Err(Error::DimensionMismatch(format!("init points must be non-empty with dimension {dim}")))
            }
            _ => Ok(()),
        }
    }
}

/// Recorded states, chain-major: `states[(c * recorded + r) * dim + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub num_chains: usize,
    pub dim: usize,
    /// Global step numbers (1-based) of the recorded states.
    pub steps: Vec<usize>,
    pub states: Vec<f64>,
    /// Last state of each chain, `chain * dim + k`.
    pub final_states: Vec<f64>,
    /// Starting state of each chain, same layout.
    pub initial_states: Vec<f64>,
}

impl Trace {
    pub fn state(&self, chain: usize, rec: usize) -> &[f64] {
        let off = (chain * self.steps.len() + rec) * self.dim;
        &self.states[off..off + self.dim]
    }

    pub fn final_state(&self, chain: usize) -> &[f64] {
        &self.final_states[chain * self.dim..(chain + 1) * self.dim]
    }

    /// Final values of coordinate `k` across chains.
    pub fn final_coordinate(&self, k: usize) -> Vec<f64> {
        self.final_states.iter().skip(k).step_by(self.dim).cloned().collect()
    }
}

pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

fn init_state(init: &InitDist, dim: usize, chain: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match init {
        InitDist::Uniform { lo, hi } => (0..dim).map(|_| rng.random_range(*lo..*hi)).collect(),
        InitDist::Gaussian { mean, sd } => (0..dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            })
            .collect(),
        InitDist::FromPoints { points } => points[chain % points.len()].clone(),
    }
}

struct Phase<'a> {
    score: &'a dyn ScoreModel,
    eta: f64,
    steps: usize,
}

struct ChainRun {
    init: Vec<f64>,
    recorded: Vec<f64>,
    /// State at the end of each phase.
    ends: Vec<Vec<f64>>,
}

fn run_chain(chain: usize, phases: &[Phase<'_>], dim: usize, cfg: &ChainConfig, total: usize) -> Result<ChainRun> {
    let mut rng = chain_rng(cfg.seed, chain);
    let mut x = init_state(&cfg.init, dim, chain, &mut rng);
    let init = x.clone();
    let mut s = vec![0.0; dim];
    let mut rec = Vec::new();
    let mut ends = Vec::with_capacity(phases.len());
    let mut step = 0;
    for ph in phases {
        let noise = (2.0 * ph.eta).sqrt();
        for _ in 0..ph.steps {
            step += 1;
            ph.score.score_into(&x, &mut s);
            for k in 0..dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                x[k] += ph.eta * s[k] + noise * z;
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState { chain, step });
            }
            if cfg.record.keeps(step, total) {
                rec.extend_from_slice(&x);
            }
        }
        ends.push(x.clone());
    }
    Ok(ChainRun {
        init,
        recorded: rec,
        ends,
    })
}

fn recorded_steps(record: Record, total: usize) -> Vec<usize> {
    (1..=total).filter(|&s| record.keeps(s, total)).collect()
}

fn run_phases(phases: &[Phase<'_>], dim: usize, cfg: &ChainConfig) -> Result<(Trace, Vec<Vec<f64>>)> {
    cfg.validate(dim)?;
    let total: usize = phases.iter().map(|p| p.steps).sum();
    let per_chain: Vec<ChainRun> = (0..cfg.num_chains)
        .into_par_iter()
        .map(|c| run_chain(c, phases, dim, cfg, total))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<_>>()?;
    let mut states = Vec::new();
    let mut initial_states = Vec::with_capacity(cfg.num_chains * dim);
    let mut snapshots = vec![Vec::with_capacity(cfg.num_chains * dim); phases.len()];
    for run in &per_chain {
        states.extend_from_slice(&run.recorded);
        initial_states.extend_from_slice(&run.init);
        for (lvl, e) in run.ends.iter().enumerate() {
            snapshots[lvl].extend_from_slice(e);
        }
    }
    let final_states = snapshots.last().cloned().unwrap_or_default();
    Ok((
        Trace {
            num_chains: cfg.num_chains,
            dim,
            steps: recorded_steps(cfg.record, total),
            states,
            final_states,
            initial_states,
        },
        snapshots,
    ))
}

/// `x <- x + eta s(x) + sqrt(2 eta) z` for `cfg.steps` steps per chain.
pub fn run_lmc(score: &dyn ScoreModel, cfg: &ChainConfig) -> Result<Trace> {
    let phases = [Phase {
        score,
        eta: cfg.eta,
        steps: cfg.steps,
    }];
    Ok(run_phases(&phases, score.dim(), cfg)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepRule {
    /// `cfg.eta` at every level.
    Constant,
    /// `scale * sigma_k^2` at level k.
    SigmaSquared { scale: f64 },
}

#[derive(Debug, Clone)]
pub struct AnnealedTrace {
    pub trace: Trace,
    /// Chain states after each level, `chain * dim + k`.
    pub snapshots: Vec<Vec<f64>>,
    pub etas: Vec<f64>,
}

/// Sequential LMC phases, one per noise level, each continuing from the
/// previous state. `cfg.steps` is ignored in favour of the schedule.
pub fn run_annealed(
    scores: &[&dyn ScoreModel],
    schedule: &NoiseSchedule,
    rule: StepRule,
    cfg: &ChainConfig,
) -> Result<AnnealedTrace> {
    if scores.len() != schedule.levels() {
        return Err(Error::LengthMismatch(format!(
            "{} score models for {} noise levels",
            scores.len(),
            schedule.levels()
        )));
    }
    let dim = scores[0].dim();
    if scores.iter().any(|s| s.dim() != dim) {
        return Err(Error::DimensionMismatch("score models differ in dimension".into()));
    }
    let etas: Vec<f64> = schedule
        .sigmas()
        .iter()
        .map(|s| match rule {
            StepRule::Constant => cfg.eta,
            StepRule::SigmaSquared { scale } => scale * s * s,
        })
        .collect();
    if etas.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::InvalidConfig("step sizes must be positive".into()));
    }
    let phases: Vec<Phase<'_>> = scores
        .iter()
        .zip(&etas)
        .zip(schedule.steps_per_level())
        .map(|((s, &eta), &steps)| Phase { score: *s, eta, steps })
        .collect();
    let total: usize = schedule.steps_per_level().iter().sum();
    let cfg = ChainConfig {
        steps: total.max(1),
        ..cfg.clone()
    };
    let (trace, snapshots) = run_phases(&phases, dim, &cfg)?;
    Ok(AnnealedTrace {
        trace,
        snapshots,
        etas,
    })
}

/// Density proportional to the exponential of the integrated ReLU score
/// (no skip connection, two-spike regime).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetDensity1D {
    pub n: f64,
    pub mu: f64,
    pub v: f64,
    pub x1: f64,
    pub xn: f64,
    pub beta: f64,
    pub t: f64,
}

impl TargetDensity1D {
    /// Requires `beta_low < beta < n` (pass the lower threshold) and `|t|` within bound.
    pub fn new(data: &Dataset1D, beta: f64, t: f64, beta_low: f64) -> Result<Self> {
        let n = data.n() as f64;
        if !(beta > beta_low && beta < n) {
            return Err(Error::BetaOutOfRegime {
                beta,
                lo: beta_low,
                hi: n,
            });
        }
        let bound = t_bound(data, beta);
        if !(t.abs() <= bound) {
            return Err(Error::TOutOfRange { t, bound });
        }
        Ok(TargetDensity1D {
            n,
            mu: data.mu(),
            v: data.v(),
            x1: data.min(),
            xn: data.max(),
            beta,
            t,
        })
    }

    /// Mean and variance of the Gaussian matching the interior piece.
    pub fn interior_gaussian(&self) -> (f64, f64) {
        (self.mu, self.n * self.v / (self.n - self.beta))
    }

    pub fn log_density(&self, x: f64) -> f64 {
        let (n, v, b, mu, t) = (self.n, self.v, self.beta, self.mu, self.t);
        let nv = n * v;
        if x < self.x1 {
            let x1 = self.x1;
            ((b - n) / (4.0 * nv) - t / 2.0) * x * x
                + ((b - n) / (2.0 * nv) + t) * x1 * x
                + (mu * (n - b) / nv) * x
                + ((n - b) / (4.0 * nv) - t / 2.0) * x1 * x1
        } else if x > self.xn {
            let xn = self.xn;
            ((b - n) / (4.0 * nv) + t / 2.0) * x * x - ((n - b) / (2.0 * nv) + t) * xn * x
                + (mu * (n - b) / nv) * x
                + (t / 2.0 + (n - b) / (4.0 * nv)) * xn * xn
        } else {
            (b - n) / (2.0 * nv) * x * x - mu * (b - n) / nv * x
        }
    }
}

pub fn target_density_unnormalized(x: f64, target: &TargetDensity1D) -> f64 {
    target.log_density(x).exp()
}

/// `eta_scale * n v / (n - beta)`.
pub fn default_step_size(target: &TargetDensity1D, eta_scale: f64) -> f64 {
    eta_scale * target.interior_gaussian().1
}

/// Equal-width histogram on `[lo, hi)`; values outside are ignored.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<(f64, usize)> {
    let w = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        if v >= lo && v < hi {
            let b = (((v - lo) / w) as usize).min(bins - 1);
            counts[b] += 1;
        }
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, c)| (lo + b as f64 * w, c))
        .collect()
}

pub fn write_trace_csv<W: Write>(out: W, trace: &Trace) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["chain".to_string(), "step".to_string()];
    header.extend((0..trace.dim).map(|k| format!("x{k}")));
    w.write_record(&header)?;
    for c in 0..trace.num_chains {
        for (r, step) in trace.steps.iter().enumerate() {
            let mut row = vec![c.to_string(), step.to_string()];
            row.extend(trace.state(c, r).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_histogram_csv(path: &Path, hist: &[(f64, usize)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin_left", "count"])?;
    for (left, count) in hist {
        w.write_record([left.to_string(), count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
