//! Non-convex baseline: SM/DSM losses of a univariate two-layer network,
//! analytic gradients, and full-batch Adam.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Activation, ArchitectureConfig};
use crate::error::{Error, Result};
use crate::network::TwoLayerParams;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Sm,
    Dsm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Hidden width; 0 selects 4n.
    pub m: usize,
    pub seed: u64,
    pub objective: Objective,
    pub architecture: ArchitectureConfig,
}

/// Univariate network in flat form: `sum_j alpha_j act(w_j x + b_j) + v x + b0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Net1D {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub alpha: Vec<f64>,
    pub b0: f64,
    pub v: f64,
    pub activation: Activation,
}

impl Net1D {
    pub fn from_params(p: &TwoLayerParams) -> Result<Self> {
        p.validate()?;
        if p.dim() != 1 {
            return Err(Error::DimensionMismatch(format!(
                "univariate loss on a d={} network",
                p.dim()
            )));
        }
        Ok(Net1D {
            w: p.w1.column(0).iter().cloned().collect(),
            b: p.b1.iter().cloned().collect(),
            alpha: p.w2.row(0).iter().cloned().collect(),
            b0: p.b2[0],
            v: p.v[(0, 0)],
            activation: p.activation,
        })
    }

    pub fn to_params(&self) -> TwoLayerParams {
        let m = self.w.len();
        let mut p = TwoLayerParams::zeros(1, m, self.activation);
        for j in 0..m {
            p.w1[(j, 0)] = self.w[j];
            p.b1[j] = self.b[j];
            p.w2[(0, j)] = self.alpha[j];
        }
        p.b2[0] = self.b0;
        p.v[(0, 0)] = self.v;
        p
    }

    pub fn width(&self) -> usize {
        self.w.len()
    }

    /// Flat layout `[w, b, alpha, b0, v]`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.width() + 2);
        out.extend_from_slice(&self.w);
        out.extend_from_slice(&self.b);
        out.extend_from_slice(&self.alpha);
        out.push(self.b0);
        out.push(self.v);
        out
    }

    pub fn unflatten(&mut self, flat: &[f64]) {
        let m = self.width();
        self.w.copy_from_slice(&flat[..m]);
        self.b.copy_from_slice(&flat[m..2 * m]);
        self.alpha.copy_from_slice(&flat[2 * m..3 * m]);
        self.b0 = flat[3 * m];
        self.v = flat[3 * m + 1];
    }

    /// Loss and gradient in the flat layout. For SM the activation
    /// derivative inside the trace term is held constant.
    pub fn loss_grad(
        &self,
        x: &[f64],
        labels: Option<&[f64]>,
        beta: f64,
        objective: Objective,
        grad: Option<&mut [f64]>,
    ) -> f64 {
        let m = self.width();
        let act = self.activation;
        let mut loss = 0.0;
        let mut gw = vec![0.0; m];
        let mut gb = vec![0.0; m];
        let mut ga = vec![0.0; m];
        let mut gb0 = 0.0;
        let mut gv = 0.0;
        let want = grad.is_some();
        let mut acts = vec![0.0; m];
        let mut ders = vec![0.0; m];
        for (i, &xi) in x.iter().enumerate() {
            let mut s = self.v * xi + self.b0;
            let mut tr = 0.0;
            for j in 0..m {
                let z = self.w[j] * xi + self.b[j];
                let a = act.apply(z);
                let g = act.deriv(z);
                acts[j] = a;
                ders[j] = g;
                s += self.alpha[j] * a;
                if objective == Objective::Sm {
                    tr += self.w[j] * self.alpha[j] * g;
                }
            }
            let r = match objective {
                Objective::Sm => {
                    loss += tr + self.v + 0.5 * s * s;
                    s
                }
                Objective::Dsm => {
                    let r = s - labels.map_or(0.0, |l| l[i]);
                    loss += 0.5 * r * r;
                    r
                }
            };
            if want {
                for j in 0..m {
                    let g = ders[j];
                    ga[j] += r * acts[j];
                    let ag = self.alpha[j] * g;
                    gw[j] += r * ag * xi;
                    gb[j] += r * ag;
                    if objective == Objective::Sm {
                        ga[j] += self.w[j] * g;
                        gw[j] += ag;
                    }
                }
                gb0 += r;
                gv += r * xi;
                if objective == Objective::Sm {
                    gv += 1.0;
                }
            }
        }
        let reg: f64 = self.w.iter().chain(&self.alpha).map(|v| v * v).sum();
        loss += 0.5 * beta * reg;
        if let Some(out) = grad {
            for j in 0..m {
                out[j] = gw[j] + beta * self.w[j];
                out[m + j] = gb[j];
                out[2 * m + j] = ga[j] + beta * self.alpha[j];
            }
            out[3 * m] = gb0;
            out[3 * m + 1] = gv;
        }
        loss
    }
}

/// Empirical SM loss: trace term + half squared score + weight decay.
pub fn loss_sm(params: &TwoLayerParams, points: &[f64], beta: f64) -> Result<f64> {
    let net = Net1D::from_params(params)?;
    Ok(net.loss_grad(points, None, beta, Objective::Sm, None))
}

/// Empirical DSM loss `0.5 sum (s(x_i) - l_i)^2` + weight decay.
pub fn loss_dsm(params: &TwoLayerParams, points: &[f64], labels: &[f64], beta: f64) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} points vs {} labels",
            points.len(),
            labels.len()
        )));
    }
    let net = Net1D::from_params(params)?;
    Ok(net.loss_grad(points, Some(labels), beta, Objective::Dsm, None))
}

/// Max relative error between analytic and central-difference gradients,
/// with relative error `|a - f| / max(|a|, |f|, 1)`.
pub fn grad_check(
    params: &TwoLayerParams,
    points: &[f64],
    labels: Option<&[f64]>,
    objective: Objective,
    beta: f64,
) -> Result<f64> {
    if objective == Objective::Dsm && labels.map(|l| l.len()) != Some(points.len()) {
        return Err(Error::DimensionMismatch("DSM needs one label per point".into()));
    }
    let mut net = Net1D::from_params(params)?;
    let theta = net.flatten();
    let mut g = vec![0.0; theta.len()];
    net.loss_grad(points, labels, beta, objective, Some(&mut g));
    let mut worst = 0.0f64;
    let mut probe = theta.clone();
    for k in 0..theta.len() {
        probe[k] = theta[k] + FD_STEP;
        net.unflatten(&probe);
        let fp = net.loss_grad(points, labels, beta, objective, None);
        probe[k] = theta[k] - FD_STEP;
        net.unflatten(&probe);
        let fm = net.loss_grad(points, labels, beta, objective, None);
        probe[k] = theta[k];
        let fd = (fp - fm) / (2.0 * FD_STEP);
        let rel = (g[k] - fd).abs() / g[k].abs().max(fd.abs()).max(1.0);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub params: TwoLayerParams,
    /// Loss before the first update and after each update.
    pub loss_curve: Vec<f64>,
    pub final_loss: f64,
    /// Set when a non-finite loss or parameter appeared; training stops there.
    pub diverged: bool,
}

/// Random initial network: w, b, alpha ~ N(0, 1/m), b0 = v = 0.
pub fn init_net(m: usize, activation: Activation, seed: u64) -> Net1D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nrm = Normal::new(0.0, 1.0 / (m as f64).sqrt()).expect("valid sd");
    let mut draw = |_| nrm.sample(&mut rng);
    Net1D {
        w: (0..m).map(&mut draw).collect(),
        b: (0..m).map(&mut draw).collect(),
        alpha: (0..m).map(&mut draw).collect(),
        b0: 0.0,
        v: 0.0,
        activation,
    }
}

pub fn adam_train(cfg: &TrainConfig, points: &[f64], labels: Option<&[f64]>) -> Result<TrainResult> {
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::InvalidConfig("learning_rate must be positive".into()));
    }
    if cfg.epochs == 0 {
        return Err(Error::InvalidConfig("epochs must be >= 1".into()));
    }
    if points.is_empty() {
        return Err(Error::EmptyData);
    }
    if cfg.objective == Objective::Dsm && labels.map(|l| l.len()) != Some(points.len()) {
        return Err(Error::DimensionMismatch("DSM needs one label per point".into()));
    }
    let m = if cfg.m == 0 { 4 * points.len() } else { cfg.m };
    let arch = cfg.architecture;
    let mut net = init_net(m, arch.activation, cfg.seed);
    let mut theta = net.flatten();
    let p = theta.len();
    let skip_idx = 3 * m + 1;
    let mut g = vec![0.0; p];
    let mut m1 = vec![0.0; p];
    let mut m2 = vec![0.0; p];
    let mut curve = Vec::with_capacity(cfg.epochs + 1);
    let lr = cfg.learning_rate;
    let mut diverged = false;
    for epoch in 1..=cfg.epochs {
        let loss = net.loss_grad(points, labels, arch.beta, cfg.objective, Some(&mut g));
        curve.push(loss);
        if !loss.is_finite() {
            diverged = true;
            break;
        }
        if !arch.skip {
            g[skip_idx] = 0.0;
        }
        let bc1 = 1.0 - ADAM_BETA1.powi(epoch as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(epoch as i32);
        for k in 0..p {
            m1[k] = ADAM_BETA1 * m1[k] + (1.0 - ADAM_BETA1) * g[k];
            m2[k] = ADAM_BETA2 * m2[k] + (1.0 - ADAM_BETA2) * g[k] * g[k];
            let mh = m1[k] / bc1;
            let vh = m2[k] / bc2;
            theta[k] -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
        net.unflatten(&theta);
    }
    if !diverged {
        let loss = net.loss_grad(points, labels, arch.beta, cfg.objective, None);
        curve.push(loss);
        diverged = !loss.is_finite() || theta.iter().any(|v| !v.is_finite());
    }
    let final_loss = *curve.last().expect("non-empty curve");
    Ok(TrainResult {
        params: net.to_params(),
        loss_curve: curve,
        final_loss,
        diverged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrOutcome {
    Diverged,
    Converged,
    Undertrained,
}

/// Relative gap above the best finite loss at which a run counts as undertrained.
pub const UNDERTRAINED_GAP: f64 = 0.10;

/// Labels each final loss of a learning-rate sweep. Non-finite losses are
/// diverged; the rest are compared with the best finite loss `f*` and are
/// undertrained when `f - f* >= 0.1 |f*|`.
pub fn classify_sweep(final_losses: &[f64]) -> Vec<LrOutcome> {
    let best = final_losses
        .iter()
        .cloned()
        .filter(|f| f.is_finite())
        .fold(f64::INFINITY, f64::min);
    final_losses
        .iter()
        .map(|&f| {
            if !f.is_finite() {
                LrOutcome::Diverged
            } else if f - best >= UNDERTRAINED_GAP * best.abs() && f > best {
                LrOutcome::Undertrained
            } else {
                LrOutcome::Converged
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_neuron() -> TwoLayerParams {
        let mut p = TwoLayerParams::zeros(1, 1, Activation::Relu);
        p.w1[(0, 0)] = 1.0;
        p.w2[(0, 0)] = 1.0;
        p
    }

    #[test]
    fn hand_evaluated_sm_loss() {
        let beta = 0.7;
        let l = loss_sm(&one_neuron(), &[1.0], beta).unwrap();
        assert!((l - (1.5 + beta)).abs() < 1e-15);
        let z = TwoLayerParams::zeros(1, 3, Activation::Relu);
        assert_eq!(loss_sm(&z, &[0.3, 1.0], 2.0).unwrap(), 0.0);
    }

    #[test]
    fn dsm_losses() {
        let z = TwoLayerParams::zeros(1, 2, Activation::Abs);
        assert_eq!(loss_dsm(&z, &[0.1, 0.2], &[0.0, 0.0], 1.0).unwrap(), 0.0);
        let labels = [1.0, -2.0, 4.0];
        let mean = 1.0;
        let mut c = TwoLayerParams::zeros(1, 2, Activation::Relu);
        c.b2[0] = mean;
        let l = loss_dsm(&c, &[0.0, 1.0, 2.0], &labels, 3.0).unwrap();
        let expect: f64 = labels.iter().map(|v| 0.5 * (v - mean) * (v - mean)).sum();
        assert!((l - expect).abs() < 1e-14);
    }

    #[test]
    fn regularizer_gradient_vanishes_at_zero() {
        let z = TwoLayerParams::zeros(1, 4, Activation::Relu);
        let net = Net1D::from_params(&z).unwrap();
        let mut g = vec![1.0; 14];
        net.loss_grad(&[0.5, -0.5], Some(&[0.0, 0.0]), 3.0, Objective::Dsm, Some(&mut g));
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adam_is_deterministic() {
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            epochs: 30,
            m: 8,
            seed: 5,
            objective: Objective::Dsm,
            architecture: ArchitectureConfig::new(Activation::Relu, false, 0.1),
        };
        let x = [0.0, 0.5, 1.3, -0.7];
        let l = [1.0, -0.5, 0.2, 0.8];
        let a = adam_train(&cfg, &x, Some(&l)).unwrap();
        let b = adam_train(&cfg, &x, Some(&l)).unwrap();
        assert_eq!(a.loss_curve, b.loss_curve);
        assert_eq!(a.loss_curve.len(), 31);
        assert!(a.final_loss < a.loss_curve[0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn dsm_gradient_matches_fd(seed in any::<u64>()) {
            let net = init_net(6, Activation::Relu, seed);
            let mut p = net.to_params();
            p.b2[0] = 0.3;
            p.v[(0, 0)] = -0.2;
            let x = [0.1, 0.9, -1.2, 2.0, -0.4];
            let l = [1.0, -2.0, 0.3, 0.5, -1.0];
            let e = grad_check(&p, &x, Some(&l), Objective::Dsm, 0.4).unwrap();
            prop_assert!(e <= 1e-5, "{}", e);
        }
    }

    #[test]
    fn sweep_classification() {
        let out = classify_sweep(&[f64::NAN, -10.0, -8.5, -9.5, f64::INFINITY]);
        use LrOutcome::*;
        assert_eq!(out, vec![Diverged, Converged, Undertrained, Converged, Diverged]);
        assert_eq!(classify_sweep(&[2.0, 2.2, 2.19]), vec![Converged, Undertrained, Converged]);
    }
}
