use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flows::FlowSystem;
use crate::measure::{sample_mu, MuSampler};
use crate::ode::{FastStepper, IntegratorConfig};
use crate::rng::derive_seed;
use crate::stats::{self, RunningMean};

/// Empirical tail `b_hat(a, T)`: the fraction of `mu`-started windows of
/// length `T` whose time average of `f(x, .)` is more than `a` away (in the
/// max-norm) from `F_hat(x)`.
#[derive(Clone, Debug)]
pub struct LdpEstimate {
    pub x: Vec<f64>,
    pub a_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    /// `b_hat[ti][ai]`.
    pub b_hat: Vec<Vec<f64>>,
    pub n_windows: usize,
    /// Window deviations per `T`, kept for reuse.
    pub deviations: Vec<WindowDeviations>,
}

#[derive(Clone, Debug)]
pub struct WindowDeviations {
    pub t: f64,
    pub values: Vec<f64>,
}

impl WindowDeviations {
    pub fn exceedance(&self, a: f64) -> f64 {
        self.values.iter().filter(|&&v| v > a).count() as f64 / self.values.len() as f64
    }
}

impl LdpEstimate {
    pub fn binomial_se(&self, ti: usize, ai: usize) -> f64 {
        stats::binomial_se(self.b_hat[ti][ai], self.n_windows)
    }

    /// `b_hat` nonincreasing in `a` at every `T` (as `a` increases along the grid).
    pub fn monotone_in_a(&self) -> bool {
        let mut order: Vec<usize> = (0..self.a_grid.len()).collect();
        order.sort_by(|&i, &j| self.a_grid[i].total_cmp(&self.a_grid[j]));
        self.b_hat
            .iter()
            .all(|row| order.windows(2).all(|w| row[w[1]] <= row[w[0]]))
    }

    /// `b_hat(a, .)` nonincreasing along increasing `T` up to `n_se`
    /// combined binomial standard errors.
    pub fn decays_in_t(&self, ai: usize, n_se: f64) -> bool {
        let mut order: Vec<usize> = (0..self.t_grid.len()).collect();
        order.sort_by(|&i, &j| self.t_grid[i].total_cmp(&self.t_grid[j]));
        order.windows(2).all(|w| {
            let (p, q) = (w[0], w[1]);
            let se = (self.binomial_se(p, ai).powi(2) + self.binomial_se(q, ai).powi(2)).sqrt();
            self.b_hat[q][ai] <= self.b_hat[p][ai] + n_se * se
        })
    }

    /// All entries with `a > threshold` are zero.
    pub fn zero_above(&self, threshold: f64) -> bool {
        self.b_hat.iter().all(|row| {
            row.iter()
                .zip(&self.a_grid)
                .all(|(b, &a)| a <= threshold || *b == 0.0)
        })
    }
}

/// Time averages of `f(x, .)` over consecutive windows `[kT, (k+1)T]`,
/// `k < count`, along the fast trajectory from `eta` (trapezoid rule).
fn window_means(system: &FlowSystem, x: &[f64], eta: &[f64], t: f64, count: usize, cfg: &IntegratorConfig) -> Result<Vec<Vec<f64>>> {
    let (n, h) = IntegratorConfig { record_stride: 1, ..*cfg }.plan(t)?;
    let d = system.d;
    let mut stepper = FastStepper::new(system, eta, h)?;
    let mut prev = vec![0.0; d];
    let mut cur = vec![0.0; d];
    let mut seg = vec![0.0; d];
    system.f.eval(x, stepper.y(), &mut prev);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut mean = RunningMean::new(d);
        for _ in 0..n {
            stepper.advance()?;
            system.f.eval(x, stepper.y(), &mut cur);
            for j in 0..d {
                seg[j] = 0.5 * (prev[j] + cur[j]);
            }
            mean.push(&seg);
            std::mem::swap(&mut prev, &mut cur);
        }
        out.push(mean.mean().to_vec());
    }
    Ok(out)
}

fn deviation(avg: &[f64], f_hat: &[f64]) -> f64 {
    avg.iter().zip(f_hat).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
}

/// Window starts for each `T` come from a `mu`-sampling chain whose spacing
/// exceeds the window length, so windows do not overlap.
#[allow(clippy::too_many_arguments)]
pub fn estimate_ldp(
    system: &FlowSystem,
    x: &[f64],
    f_hat: &[f64],
    a_grid: &[f64],
    t_grid: &[f64],
    n_windows: usize,
    sampler: &MuSampler,
    cfg: &IntegratorConfig,
) -> Result<LdpEstimate> {
    system.check_slow_state(x)?;
    if f_hat.len() != system.d {
        return Err(Error::Dimension {
            context: "F_hat",
            expected: system.d,
            got: f_hat.len(),
        });
    }
    if n_windows < 100 {
        return Err(Error::Input(format!("need at least 100 windows, got {n_windows}")));
    }
    if a_grid.is_empty() || t_grid.is_empty() || a_grid.iter().any(|a| !(*a > 0.0)) || t_grid.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::Input("a and T grids must be nonempty and positive".into()));
    }
    let mut deviations = Vec::with_capacity(t_grid.len());
    for (ti, &t) in t_grid.iter().enumerate() {
        let chain = sampler
            .with_seed(derive_seed(sampler.seed, "ldp/window-starts", ti as u64))
            .with_spacing(t + sampler.spacing);
        let starts = sample_mu(system, &chain, n_windows, cfg)?;
        let values = starts
            .states
            .par_iter()
            .map(|eta| window_means(system, x, eta, t, 1, cfg).map(|w| deviation(&w[0], f_hat)))
            .collect::<Result<Vec<_>>>()?;
        deviations.push(WindowDeviations { t, values });
    }
    let b_hat = deviations
        .iter()
        .map(|dev| a_grid.iter().map(|&a| dev.exceedance(a)).collect())
        .collect();
    Ok(LdpEstimate {
        x: x.to_vec(),
        a_grid: a_grid.to_vec(),
        t_grid: t_grid.to_vec(),
        b_hat,
        n_windows,
        deviations,
    })
}

/// Runs [`estimate_ldp`] at several `x` and returns the estimates with the
/// largest spread of `b_hat` across them at any `(a, T)`.
#[allow(clippy::too_many_arguments)]
pub fn ldp_x_uniformity(
    system: &FlowSystem,
    xs: &[Vec<f64>],
    f_hats: &[Vec<f64>],
    a_grid: &[f64],
    t_grid: &[f64],
    n_windows: usize,
    sampler: &MuSampler,
    cfg: &IntegratorConfig,
) -> Result<(Vec<LdpEstimate>, f64)> {
    let ests = xs
        .iter()
        .zip(f_hats)
        .map(|(x, fh)| estimate_ldp(system, x, fh, a_grid, t_grid, n_windows, sampler, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut spread = 0.0_f64;
    for ti in 0..t_grid.len() {
        for ai in 0..a_grid.len() {
            let vals: Vec<f64> = ests.iter().map(|e| e.b_hat[ti][ai]).collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            spread = spread.max(hi - lo);
        }
    }
    Ok((ests, spread))
}

/// Empirical check of `E|window average - F(x)| <= a + 2 |f|_inf b(a, T)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LdpBoundCheck {
    pub a: f64,
    pub t: f64,
    pub b_hat: f64,
    /// Mean deviation over windows `[0, T]`.
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub slack: f64,
    /// Window index used for the shift-invariance comparison.
    pub shift: usize,
    /// Mean deviation over windows `[shift T, (shift+1) T]`.
    pub lhs_shifted: f64,
    pub lhs_shifted_se: f64,
}

impl LdpBoundCheck {
    pub fn slack_ok(&self, n_se: f64) -> bool {
        self.slack >= -n_se * self.lhs_se
    }

    pub fn shift_z(&self) -> f64 {
        let s = (self.lhs_se.powi(2) + self.lhs_shifted_se.powi(2)).sqrt();
        let diff = (self.lhs - self.lhs_shifted).abs();
        if s == 0.0 {
            if diff == 0.0 { 0.0 } else { f64::INFINITY }
        } else {
            diff / s
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn check_ldp_bound(
    system: &FlowSystem,
    x: &[f64],
    f_hat: &[f64],
    a: f64,
    t: f64,
    b_hat: f64,
    ensemble: usize,
    shift: usize,
    sampler: &MuSampler,
    cfg: &IntegratorConfig,
) -> Result<LdpBoundCheck> {
    system.check_slow_state(x)?;
    if ensemble < 2 {
        return Err(Error::Input("need at least 2 windows".into()));
    }
    if !(0.0..=1.0).contains(&b_hat) {
        return Err(Error::Input(format!("b_hat must lie in [0, 1], got {b_hat}")));
    }
    let chain = sampler
        .with_seed(derive_seed(sampler.seed, "ldp-bound/window-starts", shift as u64))
        .with_spacing((shift + 1) as f64 * t + sampler.spacing);
    let starts = sample_mu(system, &chain, ensemble, cfg)?;
    let pairs = starts
        .states
        .par_iter()
        .map(|eta| {
            let w = window_means(system, x, eta, t, shift + 1, cfg)?;
            Ok((deviation(&w[0], f_hat), deviation(&w[shift], f_hat)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (first, shifted): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let lhs = stats::mean(&first);
    let rhs = a + 2.0 * system.bounds.f_sup * b_hat;
    Ok(LdpBoundCheck {
        a,
        t,
        b_hat,
        lhs,
        lhs_se: stats::std_err(&first),
        rhs,
        slack: rhs - lhs,
        shift,
        lhs_shifted: stats::mean(&shifted),
        lhs_shifted_se: stats::std_err(&shifted),
    })
}
