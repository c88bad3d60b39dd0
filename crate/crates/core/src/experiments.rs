//! Data generators and end-to-end experiment pipelines shared by the CLI and
//! the acceptance suite.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetND, NoiseSchedule};
use crate::dsmnd::{build_wedge_features, fit_wedge_dsm, max_group_correlation, PNorm, WedgeScore};
use crate::error::{Error, Result};
use crate::prox::SolveStatus;
use crate::samplers::{run_annealed, ChainConfig, InitDist, Record, ScoreModel, StepRule};

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// `n` standard-normal draws.
pub fn gaussian_data(n: usize, seed: u64) -> Vec<f64> {
    normals(&mut ChaCha8Rng::seed_from_u64(seed), n)
}

/// `per_component` unit-variance draws around each center.
pub fn mixture_data(centers: &[f64], per_component: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    centers
        .iter()
        .flat_map(|&c| normals(&mut rng, per_component).into_iter().map(move |z| c + z))
        .collect()
}

/// Archimedean spiral `r = 0.1 theta`, theta evenly spaced on [0.5 pi, 3.5 pi].
pub fn spiral_points(n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|i| {
            let th = 0.5 * PI + 3.0 * PI * i as f64 / (n.max(2) - 1) as f64;
            let r = 0.1 * th;
            [r * th.cos(), r * th.sin()]
        })
        .collect()
}

/// Mean over `samples` of the distance to the nearest `reference` point.
pub fn mean_nn_distance(samples: &[[f64; 2]], reference: &[[f64; 2]]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let total: f64 = samples
        .par_iter()
        .map(|s| {
            reference
                .iter()
                .map(|r| ((s[0] - r[0]).powi(2) + (s[1] - r[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / samples.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpiralConfig {
    pub n_points: usize,
    pub sigmas: Vec<f64>,
    pub steps: Vec<usize>,
    pub n_samples: usize,
    /// Wedge lambda as a fraction of `max_j ||K_j^T L||`.
    pub lambda_factor: f64,
    /// Level step size `eta_scale * sigma^2`.
    pub eta_scale: f64,
    pub init_lo: f64,
    pub init_hi: f64,
    /// Group-lasso KKT tolerance relative to `max_j ||K_j^T L||`.
    pub rel_tol: f64,
    pub max_iters: usize,
    pub p_norm: PNorm,
    pub seed: u64,
}

impl Default for SpiralConfig {
    fn default() -> Self {
        SpiralConfig {
            n_points: 100,
            sigmas: vec![0.5, 0.1, 0.05, 0.03, 0.01],
            steps: vec![5, 5, 5, 5, 15],
            n_samples: 500,
            lambda_factor: 0.003,
            eta_scale: 0.5,
            init_lo: -2.0,
            init_hi: 2.0,
            rel_tol: 1e-6,
            max_iters: 5_000,
            p_norm: PNorm::L2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelFit {
    pub sigma: f64,
    pub lambda: f64,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub active_columns: usize,
    pub columns: usize,
    /// `||K Z - L||_F^2 / ||L||_F^2` on the level's training pairs.
    pub relative_residual: f64,
}

#[derive(Debug, Clone)]
pub struct SpiralResult {
    pub clean: Vec<[f64; 2]>,
    /// Noisy training points per level.
    pub noisy: Vec<Vec<[f64; 2]>>,
    pub fits: Vec<LevelFit>,
    pub scores: Vec<WedgeScore>,
    /// Sample positions after each level.
    pub snapshots: Vec<Vec<[f64; 2]>>,
    /// Mean nearest-neighbour distance to the clean spiral after each level.
    pub nn_distances: Vec<f64>,
    pub initial_nn_distance: f64,
    pub etas: Vec<f64>,
}

fn fit_level(clean: &[[f64; 2]], sigma: f64, level: usize, cfg: &SpiralConfig) -> Result<(Vec<[f64; 2]>, LevelFit, WedgeScore)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1000 + level as u64);
    let n = clean.len();
    let delta = normals(&mut rng, 2 * n);
    let noisy: Vec<[f64; 2]> = clean
        .iter()
        .enumerate()
        .map(|(i, p)| [p[0] + sigma * delta[2 * i], p[1] + sigma * delta[2 * i + 1]])
        .collect();
    let lifted: Vec<Vec<f64>> = noisy.iter().map(|p| vec![p[0], p[1], 1.0]).collect();
    let data = DatasetND::from_rows(&lifted)?;
    let labels = DMatrix::from_fn(n, 2, |i, k| -delta[2 * i + k] / sigma);
    let features = build_wedge_features(&data, cfg.p_norm)?;
    let corr = max_group_correlation(&features, &labels);
    let lambda = cfg.lambda_factor * corr;
    let fit = fit_wedge_dsm(&features, &labels, lambda, cfg.rel_tol * corr.max(1e-300), cfg.max_iters)?;
    let resid = (&features.k * &fit.z - &labels).norm_squared() / labels.norm_squared();
    let level_fit = LevelFit {
        sigma,
        lambda,
        objective: fit.objective,
        kkt_residual: fit.kkt_residual,
        iterations: fit.iterations,
        status: fit.status,
        active_columns: fit.active_columns,
        columns: features.columns(),
        relative_residual: resid,
    };
    Ok((
        noisy,
        level_fit,
        WedgeScore {
            z: fit.z,
            features,
            lifted: true,
        },
    ))
}

/// Spiral data, one wedge DSM fit per noise level, then annealed Langevin
/// sampling through the levels.
pub fn run_spiral(cfg: &SpiralConfig) -> Result<SpiralResult> {
    if cfg.sigmas.len() != cfg.steps.len() {
        return Err(Error::LengthMismatch(format!(
            "{} sigmas vs {} step counts",
            cfg.sigmas.len(),
            cfg.steps.len()
        )));
    }
    if cfg.n_points < 3 || cfg.n_samples == 0 {
        return Err(Error::InvalidConfig("need n_points >= 3 and n_samples >= 1".into()));
    }
    let schedule = NoiseSchedule::new(cfg.sigmas.clone(), cfg.steps.clone())?;
    let clean = spiral_points(cfg.n_points);
    let per_level: Vec<(Vec<[f64; 2]>, LevelFit, WedgeScore)> = cfg
        .sigmas
        .par_iter()
        .enumerate()
        .map(|(lvl, &s)| fit_level(&clean, s, lvl, cfg))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<_>>()?;
    let mut noisy = Vec::new();
    let mut fits = Vec::new();
    let mut scores = Vec::new();
    for (p, f, s) in per_level {
        noisy.push(p);
        fits.push(f);
        scores.push(s);
    }
    let refs: Vec<&dyn ScoreModel> = scores.iter().map(|s| s as &dyn ScoreModel).collect();
    let chain = ChainConfig {
        eta: cfg.eta_scale,
        steps: 1,
        num_chains: cfg.n_samples,
        init: InitDist::Uniform {
            lo: cfg.init_lo,
            hi: cfg.init_hi,
        },
        seed: cfg.seed,
        record: Record::Final,
    };
    let ann = run_annealed(&refs, &schedule, StepRule::SigmaSquared { scale: cfg.eta_scale }, &chain)?;
    let snapshots: Vec<Vec<[f64; 2]>> = ann
        .snapshots
        .iter()
        .map(|s| s.chunks(2).map(|c| [c[0], c[1]]).collect())
        .collect();
    let nn_distances = snapshots.iter().map(|s| mean_nn_distance(s, &clean)).collect();
    let init: Vec<[f64; 2]> = ann.trace.initial_states.chunks(2).map(|c| [c[0], c[1]]).collect();
    let initial_nn_distance = mean_nn_distance(&init, &clean);
    Ok(SpiralResult {
        clean,
        noisy,
        fits,
        scores,
        snapshots,
        nn_distances,
        initial_nn_distance,
        etas: ann.etas,
    })
}
