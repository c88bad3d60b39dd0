use std::fs::File;
use std::io::BufWriter;

use rayon::prelude::*;
use serde_json::{json, Value};

use scorekit::baseline::{adam_train, classify_sweep, LrOutcome, Objective, TrainConfig};
use scorekit::dsm1d::{build_dsm_program, fit_dsm_1d, paired_dataset, perturb, DSMProgram1D};
use scorekit::dsmnd::wedge_csv;
use scorekit::experiments::run_spiral;
use scorekit::network::ParamsJson;
use scorekit::prox::SolveStatus;
use scorekit::samplers::{
    default_step_size, histogram, run_lmc, write_histogram_csv, write_trace_csv, ChainConfig, FnScore, ScoreModel,
    TargetDensity1D,
};
use scorekit::sm1d::{build_sm_program, closed_form_score, exterior_t, fit_sm_1d, Sm1dFit, SmVariant};
use scorekit::{evaluate_network, Activation, ArchitectureConfig, Dataset1D, TwoLayerParams};

use crate::config::{BaselineConfig, FitDsmConfig, FitSmConfig, ModelSpec, SampleConfig, SpiralRunConfig};
use crate::error::CliError;
use crate::output::{Cell, OutDir};

pub struct Done {
    /// Values chosen during the run (resolved beta, step size, ...).
    pub derived: Value,
    pub not_converged: Option<String>,
}

fn check_status(what: &str, status: SolveStatus, iterations: usize, kkt: f64) -> Result<Option<String>, CliError> {
    match status {
        SolveStatus::Converged => Ok(None),
        SolveStatus::MaxIters => Ok(Some(format!(
            "{what}: stopped after {iterations} iterations with KKT residual {kkt:e}"
        ))),
        SolveStatus::Unbounded => Err(CliError::Unbounded(format!("{what}: objective is unbounded below"))),
    }
}

/// `||b||_inf` of the score-matching program; it does not depend on beta.
fn sm_b_inf(data: &Dataset1D, activation: Activation, skip: bool) -> Result<f64, CliError> {
    let mut probe = ArchitectureConfig::new(activation, skip, 0.0);
    probe.beta = SmVariant::from_config(&probe).min_beta();
    Ok(build_sm_program(data, &probe)?.b_inf())
}

fn sm_beta(data: &Dataset1D, activation: Activation, skip: bool, beta: Option<f64>, offset: f64) -> Result<(f64, f64), CliError> {
    let b_inf = sm_b_inf(data, activation, skip)?;
    Ok((beta.unwrap_or(b_inf + offset), b_inf))
}

struct SmRun {
    data: Dataset1D,
    arch: ArchitectureConfig,
    fit: Sm1dFit,
    b_inf: f64,
    /// Exterior-slope parameter and its residual, when the closed form applies.
    t: Option<(f64, f64)>,
}

fn run_sm(cfg: &FitSmConfig) -> Result<SmRun, CliError> {
    let data = cfg.data.load(cfg.seed)?;
    let (beta, b_inf) = sm_beta(&data, cfg.activation, cfg.skip, cfg.beta, cfg.beta_offset)?;
    let arch = ArchitectureConfig::new(cfg.activation, cfg.skip, beta);
    let fit = fit_sm_1d(&data, &arch, cfg.tol, cfg.max_iters)?;
    let net = &fit.network;
    let t = exterior_t(&data, &arch, |x| net.forward(&[x])[0]);
    let t = closed_form_score(&data, &arch, t.0).ok().map(|_| t);
    Ok(SmRun { data, arch, fit, b_inf, t })
}

fn write_y(out: &mut OutDir, y: &[f64]) -> Result<(), CliError> {
    out.csv("y_star.csv", &["index", "y"], y.iter().enumerate().map(|(i, &v)| vec![Cell::U(i), Cell::F(v)]))
}

fn write_points(out: &mut OutDir, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<(), CliError> {
    out.csv(name, header, rows.iter().map(|r| r.iter().map(|&v| Cell::F(v)).collect()))
}

pub fn fit_sm(cfg: &FitSmConfig, out: &mut OutDir) -> Result<Done, CliError> {
    let run = run_sm(cfg)?;
    let fit = &run.fit;
    let not_converged = check_status("score-matching program", fit.status, fit.iterations, fit.kkt_residual)?;
    let xs = cfg.grid.xs(&run.data)?;
    let net = evaluate_network(&fit.network, &xs)?;
    let closed = match run.t {
        Some((t, _)) => Some(closed_form_score(&run.data, &run.arch, t)?),
        None => None,
    };
    write_points(out, "data.csv", &["x"], &run.data.points().iter().map(|&x| vec![x]).collect::<Vec<_>>())?;
    write_y(out, &fit.y_star)?;
    out.csv(
        "score_grid.csv",
        &["x", "score", "closed_form"],
        xs.iter()
            .zip(&net)
            .map(|(&x, &s)| vec![Cell::F(x), Cell::F(s), closed.as_ref().map(|c| c.eval(x)).into()]),
    )?;
    out.json("params.json", &fit.params)?;
    let mut report = serde_json::to_value(fit).expect("fit serializes");
    report["b_inf"] = json!(run.b_inf);
    report["t"] = json!(run.t.map(|t| t.0));
    report["t_residual"] = json!(run.t.map(|t| t.1));
    out.json("fit.json", &report)?;
    if cfg.write_program {
        let prog = build_sm_program(&run.data, &run.arch)?;
        let rows: Vec<Vec<f64>> = prog.a.row_iter().map(|r| r.iter().cloned().collect()).collect();
        let header: Vec<String> = (0..prog.a.ncols()).map(|j| format!("a{j}")).collect();
        let header: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
        write_points(out, "program_a.csv", &header, &rows)?;
        write_points(out, "program_b.csv", &["b"], &prog.b_lin.iter().map(|&b| vec![b]).collect::<Vec<_>>())?;
    }
    Ok(Done {
        derived: json!({ "beta": run.arch.beta, "b_inf": run.b_inf, "n": run.data.n() }),
        not_converged,
    })
}

fn dsm_program(
    points: &[f64],
    cfg_eps: f64,
    activation: Activation,
    beta: Option<f64>,
    factor: f64,
    seed: u64,
) -> Result<(DSMProgram1D, f64), CliError> {
    let (noisy, labels) = perturb(points, cfg_eps, seed)?;
    let (data, labels) = paired_dataset(&noisy, &labels)?;
    let mut prog = build_dsm_program(&data, &labels, cfg_eps, activation, 0.0)?;
    let zero = prog.zero_threshold();
    let beta = beta.unwrap_or(factor * zero);
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(scorekit::Error::BadBeta(beta).into());
    }
    prog.beta = beta;
    Ok((prog, zero))
}

pub fn fit_dsm(cfg: &FitDsmConfig, out: &mut OutDir) -> Result<Done, CliError> {
    let clean = cfg.data.load(cfg.seed)?;
    let (prog, zero) = dsm_program(clean.points(), cfg.epsilon, cfg.activation, cfg.beta, cfg.beta_factor, cfg.seed)?;
    let fit = fit_dsm_1d(&prog, cfg.tol, cfg.max_iters)?;
    let not_converged = check_status("denoising program", fit.status, fit.iterations, fit.kkt_residual)?;
    let xs = cfg.grid.xs(&prog.data)?;
    let score = evaluate_network(&fit.network, &xs)?;
    let pairs: Vec<Vec<f64>> = prog.data.points().iter().zip(&prog.raw_labels).map(|(&x, &l)| vec![x, l]).collect();
    write_points(out, "noisy.csv", &["x", "label"], &pairs)?;
    write_y(out, &fit.y_star)?;
    out.csv(
        "score_grid.csv",
        &["x", "score"],
        xs.iter().zip(&score).map(|(&x, &s)| vec![Cell::F(x), Cell::F(s)]),
    )?;
    out.json("params.json", &fit.params)?;
    out.json("fit.json", &fit)?;
    Ok(Done {
        derived: json!({ "beta": prog.beta, "zero_threshold": zero, "n": prog.data.n() }),
        not_converged,
    })
}

struct Model {
    score: Box<dyn ScoreModel>,
    default_eta: Option<f64>,
    info: Value,
}

fn build_model(spec: &ModelSpec, eta_scale: f64) -> Result<(Model, Option<String>), CliError> {
    Ok(match spec {
        ModelSpec::Zero { dim } => {
            if *dim == 0 {
                return Err(CliError::Config("zero model needs dim >= 1".into()));
            }
            let score = FnScore { dim: *dim, f: |_: &[f64], o: &mut [f64]| o.fill(0.0) };
            (Model { score: Box::new(score), default_eta: None, info: json!({}) }, None)
        }
        ModelSpec::Linear { slope, intercept } => {
            let (a, c) = (*slope, *intercept);
            let score = FnScore { dim: 1, f: move |x: &[f64], o: &mut [f64]| o[0] = a * x[0] + c };
            (Model { score: Box::new(score), default_eta: None, info: json!({}) }, None)
        }
        ModelSpec::Params { path } => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let pj: ParamsJson = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let net = TwoLayerParams::from_json(&pj)?.pruned();
            (Model { score: Box::new(net), default_eta: None, info: json!({}) }, None)
        }
        ModelSpec::Sm(c) => {
            let run = run_sm(c)?;
            let nc = check_status("score-matching program", run.fit.status, run.fit.iterations, run.fit.kkt_residual)?;
            let mut info = json!({ "beta": run.arch.beta, "b_inf": run.b_inf, "n": run.data.n() });
            let mut default_eta = None;
            if let (Some((t, _)), Some(th)) = (run.t, run.fit.thresholds) {
                if let Ok(target) = TargetDensity1D::new(&run.data, run.arch.beta, t, th.beta_low) {
                    let (m, v) = target.interior_gaussian();
                    default_eta = Some(default_step_size(&target, eta_scale));
                    info["t"] = json!(t);
                    info["beta_low"] = json!(th.beta_low);
                    info["target_interior_mean"] = json!(m);
                    info["target_interior_variance"] = json!(v);
                }
            }
            (Model { score: Box::new(run.fit.network.pruned()), default_eta, info }, nc)
        }
    })
}

fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n)
}

pub fn sample(cfg: &SampleConfig, out: &mut OutDir) -> Result<Done, CliError> {
    let (model, not_converged) = build_model(&cfg.model, cfg.eta_scale)?;
    let eta = match cfg.eta.or(model.default_eta) {
        Some(e) => e,
        None => return Err(CliError::Config("eta is required unless the model is a fitted ReLU network in the two-spike regime".into())),
    };
    let chain = ChainConfig {
        eta,
        steps: cfg.steps,
        num_chains: cfg.chains,
        init: cfg.init.clone(),
        seed: cfg.seed,
        record: cfg.record,
    };
    let trace = run_lmc(model.score.as_ref(), &chain)?;
    let path = out.path("trace.csv");
    let f = File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    write_trace_csv(BufWriter::new(f), &trace)?;
    out.mark_written("trace.csv");
    let mut stats = Vec::new();
    for k in 0..trace.dim {
        let (m, v) = moments(&trace.final_coordinate(k));
        stats.push(json!({ "coordinate": k, "mean": m, "variance": v }));
    }
    if trace.dim == 1 {
        let xs = trace.final_coordinate(0);
        let finite: Vec<f64> = xs.iter().cloned().filter(|x| x.is_finite()).collect();
        let lo = cfg.histogram.lo.unwrap_or_else(|| finite.iter().cloned().fold(f64::INFINITY, f64::min));
        let hi = cfg.histogram.hi.unwrap_or_else(|| finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        let (lo, hi) = if hi > lo { (lo, hi + 1e-9 * (hi - lo)) } else { (lo - 0.5, lo + 0.5) };
        if cfg.histogram.bins == 0 {
            return Err(CliError::Config("histogram.bins must be >= 1".into()));
        }
        write_histogram_csv(&out.path("histogram.csv"), &histogram(&xs, lo, hi, cfg.histogram.bins))?;
        out.mark_written("histogram.csv");
    }
    let summary = json!({ "eta": eta, "chains": cfg.chains, "steps": cfg.steps, "final": stats, "model": model.info });
    out.json("summary.json", &summary)?;
    Ok(Done {
        derived: json!({ "eta": eta, "model": model.info }),
        not_converged,
    })
}

pub fn baseline(cfg: &BaselineConfig, out: &mut OutDir) -> Result<Done, CliError> {
    if cfg.learning_rates.is_empty() || cfg.runs == 0 {
        return Err(CliError::Config("need at least one learning rate and one run".into()));
    }
    let data = cfg.data.load(cfg.seed)?;
    let (points, labels, beta, convex) = match cfg.objective {
        Objective::Sm => {
            let (beta, _) = sm_beta(&data, cfg.activation, cfg.skip, cfg.beta, cfg.beta_offset)?;
            let convex = if cfg.convex {
                let arch = ArchitectureConfig::new(cfg.activation, cfg.skip, beta);
                let fit = fit_sm_1d(&data, &arch, cfg.tol, cfg.max_iters)?;
                Some((fit.objective, check_status("score-matching program", fit.status, fit.iterations, fit.kkt_residual)?))
            } else {
                None
            };
            (data.points().to_vec(), None, beta, convex)
        }
        Objective::Dsm => {
            if cfg.skip {
                return Err(CliError::Config("the denoising baseline has no skip-connection variant".into()));
            }
            let (prog, _) = dsm_program(data.points(), cfg.epsilon, cfg.activation, cfg.beta, cfg.beta_factor, cfg.seed)?;
            let convex = if cfg.convex {
                let fit = fit_dsm_1d(&prog, cfg.tol, cfg.max_iters)?;
                Some((fit.objective, check_status("denoising program", fit.status, fit.iterations, fit.kkt_residual)?))
            } else {
                None
            };
            (prog.data.points().to_vec(), Some(prog.raw_labels.clone()), prog.beta, convex)
        }
    };
    let arch = ArchitectureConfig::new(cfg.activation, cfg.skip, beta);
    let jobs: Vec<(usize, usize)> = (0..cfg.learning_rates.len()).flat_map(|i| (0..cfg.runs).map(move |r| (i, r))).collect();
    let results = jobs
        .par_iter()
        .map(|&(i, r)| {
            let tc = TrainConfig {
                learning_rate: cfg.learning_rates[i],
                epochs: cfg.epochs,
                m: cfg.m,
                seed: cfg.seed.wrapping_add(r as u64),
                objective: cfg.objective,
                architecture: arch,
            };
            adam_train(&tc, &points, labels.as_deref())
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<scorekit::Result<Vec<_>>>()?;
    let mut curves = Vec::new();
    let mut runs = Vec::new();
    for (&(i, r), res) in jobs.iter().zip(&results) {
        let lr = cfg.learning_rates[i];
        for (e, &l) in res.loss_curve.iter().enumerate() {
            curves.push(vec![Cell::F(lr), Cell::U(r), Cell::U(e), Cell::F(l)]);
        }
        runs.push(vec![Cell::F(lr), Cell::U(r), Cell::F(res.final_loss), Cell::U(res.diverged as usize)]);
    }
    out.csv("loss_curves.csv", &["lr", "run", "epoch", "loss"], curves)?;
    out.csv("runs.csv", &["lr", "run", "final_loss", "diverged"], runs)?;
    // One representative loss per rate: non-finite if any run diverged,
    // otherwise the mean final loss.
    let reps: Vec<f64> = cfg
        .learning_rates
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let finals: Vec<&_> = jobs.iter().zip(&results).filter(|((j, _), _)| *j == i).map(|(_, r)| r).collect();
            if finals.iter().any(|r| r.diverged || !r.final_loss.is_finite()) {
                f64::NAN
            } else {
                finals.iter().map(|r| r.final_loss).sum::<f64>() / finals.len() as f64
            }
        })
        .collect();
    let outcomes = classify_sweep(&reps);
    let best_adam = results.iter().map(|r| r.final_loss).filter(|l| l.is_finite()).fold(f64::INFINITY, f64::min);
    let sweep: Vec<Value> = cfg
        .learning_rates
        .iter()
        .enumerate()
        .map(|(i, &lr)| {
            let finals: Vec<f64> = jobs.iter().zip(&results).filter(|((j, _), _)| *j == i).map(|(_, r)| r.final_loss).collect();
            let best = finals.iter().cloned().filter(|l| l.is_finite()).fold(f64::INFINITY, f64::min);
            json!({
                "lr": lr,
                "mean_final_loss": if reps[i].is_finite() { json!(reps[i]) } else { Value::Null },
                "best_final_loss": if best.is_finite() { json!(best) } else { Value::Null },
                "diverged_runs": finals.iter().filter(|l| !l.is_finite()).count(),
                "outcome": outcomes[i],
            })
        })
        .collect();
    let convex_obj = convex.as_ref().map(|c| c.0);
    let report = json!({
        "beta": beta,
        "convex_objective": convex_obj,
        "best_adam_loss": if best_adam.is_finite() { json!(best_adam) } else { Value::Null },
        "convex_gap": convex_obj.map(|c| best_adam - c),
        "sweep": sweep,
    });
    out.json("sweep.json", &report)?;
    let any_diverged = outcomes.contains(&LrOutcome::Diverged);
    Ok(Done {
        derived: json!({ "beta": beta, "n": points.len(), "any_diverged": any_diverged }),
        not_converged: convex.and_then(|c| c.1),
    })
}

pub fn spiral(cfg: &SpiralRunConfig, out: &mut OutDir) -> Result<Done, CliError> {
    let res = run_spiral(&cfg.spiral)?;
    let xy = |p: &[[f64; 2]]| -> Vec<Vec<f64>> { p.iter().map(|q| vec![q[0], q[1]]).collect() };
    write_points(out, "clean.csv", &["x", "y"], &xy(&res.clean))?;
    for (k, noisy) in res.noisy.iter().enumerate() {
        write_points(out, &format!("noisy_level{}.csv", k + 1), &["x", "y"], &xy(noisy))?;
    }
    for (k, snap) in res.snapshots.iter().enumerate() {
        write_points(out, &format!("snapshot_level{}.csv", k + 1), &["x", "y"], &xy(snap))?;
    }
    let mut nn_rows = vec![vec![Cell::U(0), Cell::Empty, Cell::U(0), Cell::Empty, Cell::F(res.initial_nn_distance)]];
    for (k, &d) in res.nn_distances.iter().enumerate() {
        nn_rows.push(vec![
            Cell::U(k + 1),
            Cell::F(cfg.spiral.sigmas[k]),
            Cell::U(cfg.spiral.steps[k]),
            Cell::F(res.etas[k]),
            Cell::F(d),
        ]);
    }
    out.csv("nn_distance.csv", &["level", "sigma", "steps", "eta", "nn_distance"], nn_rows)?;
    let n_grid = 41;
    for (k, score) in res.scores.iter().enumerate() {
        let mut rows = Vec::with_capacity(n_grid * n_grid);
        let mut s = [0.0; 2];
        for i in 0..n_grid {
            for j in 0..n_grid {
                let p = [-1.5 + 3.0 * j as f64 / (n_grid - 1) as f64, -1.5 + 3.0 * i as f64 / (n_grid - 1) as f64];
                score.score_into(&p, &mut s);
                rows.push(vec![p[0], p[1], s[0], s[1]]);
            }
        }
        write_points(out, &format!("score_field_level{}.csv", k + 1), &["x", "y", "sx", "sy"], &rows)?;
        if cfg.write_features {
            let (kc, zc) = wedge_csv(&score.features, &score.z)?;
            out.write(&format!("features_level{}_k.csv", k + 1), &kc)?;
            out.write(&format!("features_level{}_z.csv", k + 1), &zc)?;
        }
    }
    let report = json!({
        "initial_nn_distance": res.initial_nn_distance,
        "nn_distances": res.nn_distances,
        "etas": res.etas,
        "levels": res.fits,
    });
    out.json("levels.json", &report)?;
    Ok(Done {
        derived: json!({
            "etas": res.etas,
            "lambdas": res.fits.iter().map(|f| f.lambda).collect::<Vec<_>>(),
            "level_status": res.fits.iter().map(|f| f.status).collect::<Vec<_>>(),
        }),
        not_converged: None,
    })
}
