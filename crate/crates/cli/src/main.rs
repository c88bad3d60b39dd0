//! scorekit: fit convex score models, sample them, and compare with Adam.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use commands::Done;
use config::{parse_set, BaselineConfig, FitDsmConfig, FitSmConfig, SampleConfig, SpiralRunConfig};
use error::CliError;
use output::OutDir;

const AFTER_HELP: &str = "\
Configuration is layered: built-in defaults, then --config FILE (a JSON object),
then --set KEY=VALUE overrides (dotted keys, JSON values), then dedicated flags.
Every run writes manifest.json with the resolved configuration, derived values,
module defaults and the list of written files.

Environment: SCOREKIT_THREADS caps the worker threads.
Exit codes: 0 success, 1 I/O, 2 domain precondition or bad configuration,
3 solver non-convergence (outputs are still written). Errors go to stderr as JSON.";

#[derive(Parser)]
#[command(name = "scorekit", version, about = "Convex score matching for two-layer networks", after_help = AFTER_HELP)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override a configuration key, e.g. --set grid.points=401.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_set)]
    sets: Vec<(String, Value)>,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the univariate score-matching program and reconstruct the network.
    #[command(after_help = "\
Files:
  data.csv         x                      (sorted training points)
  y_star.csv       index,y                (program solution)
  score_grid.csv   x,score,closed_form    (closed_form empty outside the two-spike regime)
  params.json      reconstructed network
  fit.json         objective, KKT residual, status, thresholds, t
  program_a.csv    a0..a{p-1}             (with write_program)
  program_b.csv    b                      (with write_program)")]
    FitSm(FitSmArgs),
    /// Perturb data, solve the univariate denoising program and reconstruct the network.
    #[command(after_help = "\
Files:
  noisy.csv        x,label                (sorted noisy points, label = -delta/epsilon)
  y_star.csv       index,y
  score_grid.csv   x,score
  params.json      reconstructed network
  fit.json         objective, KKT residual, status, zero threshold")]
    FitDsm(FitDsmArgs),
    /// Langevin sampling with a score model.
    #[command(after_help = "\
Files:
  trace.csv        chain,step,x0..x{d-1}  (recorded states; step 0 is the initial state)
  histogram.csv    bin_left,count         (univariate models, final states)
  summary.json     step size and per-coordinate mean/variance of final states")]
    Sample(SampleArgs),
    /// Adam training of the non-convex network over a learning-rate sweep.
    #[command(after_help = "\
Files:
  loss_curves.csv  lr,run,epoch,loss      (epoch 0 is the initial loss)
  runs.csv         lr,run,final_loss,diverged
  sweep.json       per-rate outcome (diverged/converged/undertrained) and convex gap

A rate is diverged if any run reached a non-finite loss; otherwise its mean final
loss is compared with the best rate and flagged undertrained at >= 10% above it.")]
    Baseline(BaselineArgs),
    /// Spiral data, wedge denoising fits per noise level and annealed sampling.
    #[command(after_help = "\
Files:
  clean.csv                 x,y
  noisy_level{k}.csv        x,y
  snapshot_level{k}.csv     x,y           (samples after level k)
  score_field_level{k}.csv  x,y,sx,sy     (41x41 grid on [-1.5,1.5]^2)
  nn_distance.csv           level,sigma,steps,eta,nn_distance (level 0 = initial samples)
  levels.json               per-level lambda, objective, KKT residual, status
  features_level{k}_k.csv / _z.csv        (with write_features)")]
    Spiral,
}

#[derive(Args)]
struct FitSmArgs {
    /// Data CSV (one value per line); replaces the data source.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    beta: Option<f64>,
    /// relu or abs.
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    skip: bool,
}

#[derive(Args)]
struct FitDsmArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    activation: Option<String>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// sm or dsm.
    #[arg(long)]
    objective: Option<String>,
    /// Learning rate; repeat for a sweep.
    #[arg(long = "lr")]
    lrs: Vec<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
}

fn push<T: Serialize>(sets: &mut Vec<(String, Value)>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        sets.push((key.to_string(), json!(v)));
    }
}

fn push_data(sets: &mut Vec<(String, Value)>, path: &Option<PathBuf>) {
    if let Some(p) = path {
        sets.push(("data".into(), json!({ "kind": "file", "path": p })));
    }
}

fn exec<T>(g: &Global, name: &str, extra: Vec<(String, Value)>, run: fn(&T, &mut OutDir) -> Result<Done, CliError>) -> Result<u8, CliError>
where
    T: Serialize + DeserializeOwned + Default,
{
    let mut sets = g.sets.clone();
    if let Some(s) = g.seed {
        sets.push(("seed".into(), json!(s)));
    }
    sets.extend(extra);
    let (cfg, echo) = config::resolve::<T>(g.config.as_deref(), &sets)?;
    if g.print_config {
        println!("{}", serde_json::to_string_pretty(&echo).expect("json"));
        return Ok(0);
    }
    let mut out = OutDir::create(&g.out)?;
    let done = run(&cfg, &mut out)?;
    out.manifest(name, &echo, &done.derived)?;
    if let Some(msg) = done.not_converged {
        let e = CliError::NotConverged(msg);
        eprintln!("{}", e.to_json());
        return Ok(e.exit_code() as u8);
    }
    Ok(0)
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("SCOREKIT_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Config(format!("SCOREKIT_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<u8, CliError> {
    init_threads()?;
    let g = &cli.global;
    match cli.command {
        Command::FitSm(a) => {
            let mut s = Vec::new();
            push_data(&mut s, &a.data);
            push(&mut s, "beta", a.beta);
            push(&mut s, "activation", a.activation);
            if a.skip {
                push(&mut s, "skip", Some(true));
            }
            exec::<FitSmConfig>(g, "fit-sm", s, commands::fit_sm)
        }
        Command::FitDsm(a) => {
            let mut s = Vec::new();
            push_data(&mut s, &a.data);
            push(&mut s, "beta", a.beta);
            push(&mut s, "epsilon", a.epsilon);
            push(&mut s, "activation", a.activation);
            exec::<FitDsmConfig>(g, "fit-dsm", s, commands::fit_dsm)
        }
        Command::Sample(a) => {
            let mut s = Vec::new();
            push(&mut s, "eta", a.eta);
            push(&mut s, "steps", a.steps);
            push(&mut s, "chains", a.chains);
            exec::<SampleConfig>(g, "sample", s, commands::sample)
        }
        Command::Baseline(a) => {
            let mut s = Vec::new();
            push_data(&mut s, &a.data);
            push(&mut s, "objective", a.objective);
            if !a.lrs.is_empty() {
                push(&mut s, "learning_rates", Some(a.lrs));
            }
            push(&mut s, "epochs", a.epochs);
            push(&mut s, "runs", a.runs);
            exec::<BaselineConfig>(g, "baseline", s, commands::baseline)
        }
        Command::Spiral => exec::<SpiralRunConfig>(g, "spiral", Vec::new(), commands::spiral),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
