use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flows::FlowSystem;
use crate::ode::{FastStepper, IntegratorConfig};
use crate::stats;
use crate::trajectory::{TimeFrame, TrajectoryGrid};

/// `W_n(t) = n^{-1/2} int_0^{nt} f0(y(tau)) dtau` on a uniform grid of `[0, T]`.
#[derive(Clone, Debug)]
pub struct WipPath {
    pub n: f64,
    pub horizon: f64,
    pub path: TrajectoryGrid,
}

/// Integrates `f0` along the fast trajectory from `eta`. The integral is
/// carried through the RK4 stages at full resolution, so `W_n` with
/// `n = eps^-2` reproduces the slow component of the skew product with
/// `f = 0, xi = 0` up to roundoff.
pub fn wip_path(system: &FlowSystem, n: f64, horizon: f64, eta: &[f64], cfg: &IntegratorConfig) -> Result<WipPath> {
    if !(n > 0.0 && horizon > 0.0) {
        return Err(Error::Input(format!("need n > 0 and T > 0, got n = {n}, T = {horizon}")));
    }
    let (steps, h) = cfg.plan(n * horizon)?;
    let stride = cfg.record_stride;
    let scale = n.sqrt().recip();
    let mut stepper = FastStepper::with_integral(system, eta, h, &*system.f0)?;
    let mut path = TrajectoryGrid::with_capacity(0.0, stride as f64 * h / n, system.d, TimeFrame::Slow, steps / stride + 1);
    let mut w = vec![0.0; system.d];
    path.push(&w)?;
    for i in 1..=steps {
        stepper.advance()?;
        if i % stride == 0 {
            for (a, b) in w.iter_mut().zip(stepper.integral()) {
                *a = scale * b;
            }
            path.push(&w)?;
        }
    }
    Ok(WipPath { n, horizon, path })
}

/// `W_n(t)` at a few times for many initial conditions.
#[derive(Clone, Debug)]
pub struct WipEnsemble {
    pub n: f64,
    pub times: Vec<f64>,
    /// `values[member][time_index]` is the vector `W_n(times[time_index])`.
    pub values: Vec<Vec<Vec<f64>>>,
}

impl WipEnsemble {
    pub fn time_index(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() < 1e-12)
    }

    /// Coordinate `j` of `W_n(times[ti])` across members.
    pub fn column(&self, ti: usize, j: usize) -> Vec<f64> {
        self.values.iter().map(|m| m[ti][j]).collect()
    }

    pub fn at(&self, ti: usize) -> Vec<Vec<f64>> {
        self.values.iter().map(|m| m[ti].clone()).collect()
    }

    pub fn dim(&self) -> usize {
        self.values[0][0].len()
    }
}

/// Runs one fast trajectory per `eta` up to `n max(times)` and records
/// `W_n` at each requested time. Members are computed in parallel and
/// stored in input order.
pub fn wip_ensemble(system: &FlowSystem, n: f64, times: &[f64], etas: &[Vec<f64>], cfg: &IntegratorConfig) -> Result<WipEnsemble> {
    if times.is_empty() || times.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::Input("evaluation times must be positive".into()));
    }
    let t_max = times.iter().cloned().fold(0.0, f64::max);
    let (steps, h) = IntegratorConfig { record_stride: 1, ..*cfg }.plan(n * t_max)?;
    let marks: Vec<usize> = times.iter().map(|&t| ((n * t / h).round() as usize).min(steps)).collect();
    let scale = n.sqrt().recip();
    let values = etas
        .par_iter()
        .map(|eta| {
            let mut stepper = FastStepper::with_integral(system, eta, h, &*system.f0)?;
            let mut out = vec![Vec::new(); times.len()];
            for i in 1..=steps {
                stepper.advance()?;
                for (slot, &m) in out.iter_mut().zip(&marks) {
                    if m == i {
                        *slot = stepper.integral().iter().map(|v| scale * v).collect();
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WipEnsemble {
        n,
        times: times.to_vec(),
        values,
    })
}

/// Ensemble diagnostics for Brownian behaviour of `W_n`.
#[derive(Clone, Debug)]
pub struct BrownianDiagnostics {
    /// Mean of `W_n(1)` per coordinate and its standard error.
    pub mean: Vec<f64>,
    pub mean_se: Vec<f64>,
    /// `Var W_n(1/2) / Var W_n(1)`; 1/2 for Brownian motion.
    pub var_ratio_half: Vec<f64>,
    /// Correlation of `W_n(1) - W_n(1/2)` with `W_n(1/2)`; 0 for Brownian motion.
    pub increment_corr: Vec<f64>,
    pub increment_corr_se: f64,
    /// `Var W_n(2) / (2 Var W_n(1))` when `t = 2` was recorded; 1 when
    /// `Sigma` does not depend on the horizon.
    pub var_ratio_two: Option<Vec<f64>>,
}

pub fn brownian_diagnostics(ens: &WipEnsemble) -> Result<BrownianDiagnostics> {
    let (i_half, i_one) = match (ens.time_index(0.5), ens.time_index(1.0)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Input("ensemble must record t = 1/2 and t = 1".into())),
    };
    let m = ens.values.len();
    if m < 4 {
        return Err(Error::Input("need at least 4 ensemble members".into()));
    }
    let d = ens.dim();
    let mut out = BrownianDiagnostics {
        mean: vec![],
        mean_se: vec![],
        var_ratio_half: vec![],
        increment_corr: vec![],
        increment_corr_se: 1.0 / ((m - 1) as f64).sqrt(),
        var_ratio_two: ens.time_index(2.0).map(|_| vec![]),
    };
    for j in 0..d {
        let w1 = ens.column(i_one, j);
        let wh = ens.column(i_half, j);
        out.mean.push(stats::mean(&w1));
        out.mean_se.push(stats::std_err(&w1));
        let v1 = stats::variance(&w1);
        out.var_ratio_half.push(stats::variance(&wh) / v1);
        let incr: Vec<f64> = w1.iter().zip(&wh).map(|(a, b)| a - b).collect();
        out.increment_corr.push(stats::correlation(&incr, &wh));
        if let (Some(i_two), Some(r)) = (ens.time_index(2.0), out.var_ratio_two.as_mut()) {
            r.push(stats::variance(&ens.column(i_two, j)) / (2.0 * v1));
        }
    }
    Ok(out)
}
