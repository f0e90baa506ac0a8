//! Numerical stand-in for the invariant measure `mu` on the attractor:
//! burn-in sampling, ergodic time averages, and the averaged drift `F`.
//!
//! Time averages along one trajectory are used in place of `mu`-integrals,
//! which presumes the measure is ergodic.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flows::{FlowSystem, FnObservable, Observable};
use crate::ode::{FastStepper, IntegratorConfig};
use crate::rng::rng_from_seed;
use crate::stats::{self, RunningMean};
use crate::trajectory::{self, TimeFrame, TrajectoryGrid};

#[derive(Clone, Debug, PartialEq)]
pub struct MuSampler {
    /// Fast time discarded before the first sample.
    pub burn_in: f64,
    /// Fast time between retained samples.
    pub spacing: f64,
    /// Initial points are drawn uniformly from a ball of this radius around
    /// `(1, ..., 1)`.
    pub seed_radius: f64,
    pub seed: u64,
}

impl Default for MuSampler {
    fn default() -> Self {
        MuSampler {
            burn_in: 100.0,
            spacing: 5.0,
            seed_radius: 0.1,
            seed: 0,
        }
    }
}

impl MuSampler {
    pub fn validate(&self) -> Result<()> {
        if !(self.burn_in > 0.0 && self.spacing > 0.0 && self.seed_radius >= 0.0) {
            return Err(Error::Config(format!(
                "sampler needs burn_in > 0, spacing > 0, seed_radius >= 0: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        MuSampler { seed, ..self.clone() }
    }

    pub fn with_spacing(&self, spacing: f64) -> Self {
        MuSampler {
            spacing,
            ..self.clone()
        }
    }

    /// Off-attractor starting point for the chain.
    pub fn initial_point(&self, ell: usize) -> Vec<f64> {
        let mut rng = rng_from_seed(self.seed);
        loop {
            let u: Vec<f64> = (0..ell).map(|_| rng.random_range(-1.0..1.0)).collect();
            if u.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
                return u.iter().map(|v| 1.0 + self.seed_radius * v).collect();
            }
        }
    }
}

/// States approximating draws from `mu`.
#[derive(Clone, Debug, PartialEq)]
pub struct MuSamples {
    pub states: Vec<Vec<f64>>,
    pub spacing: f64,
    /// Set when the spacing is shorter than the flow's decorrelation time.
    pub correlated: bool,
}

impl MuSamples {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Writes a "MUS1" block (see [`crate::trajectory`]).
    pub fn write_binary<W: std::io::Write>(&self, out: W) -> Result<()> {
        let grid = TrajectoryGrid::from_rows(0.0, self.spacing, TimeFrame::Fast, &self.states)?;
        trajectory::write_block(out, trajectory::MU_SAMPLES_MAGIC, &grid)
    }

    pub fn read_binary<R: std::io::Read>(input: R) -> Result<Self> {
        let (magic, grid) = trajectory::read_block(input)?;
        if magic != trajectory::MU_SAMPLES_MAGIC {
            return Err(Error::Format("expected a MUS1 block".into()));
        }
        Ok(MuSamples {
            spacing: grid.dt,
            correlated: false,
            states: grid.states().map(<[f64]>::to_vec).collect(),
        })
    }
}

/// Runs the fast flow from the sampler's seed point, discards the burn-in
/// and returns `count` states spaced `sampler.spacing` apart.
pub fn sample_mu(system: &FlowSystem, sampler: &MuSampler, count: usize, cfg: &IntegratorConfig) -> Result<MuSamples> {
    sampler.validate()?;
    cfg.validate()?;
    if count == 0 {
        return Err(Error::Input("sample count must be at least 1".into()));
    }
    let h = cfg.h_tau;
    let burn = (sampler.burn_in / h).ceil() as usize;
    let gap = ((sampler.spacing / h).round() as usize).max(1);
    let eta0 = sampler.initial_point(system.ell);
    let mut stepper = FastStepper::new(system, &eta0, h)?;
    stepper.advance_n(burn)?;
    let mut states = Vec::with_capacity(count);
    states.push(stepper.y().to_vec());
    while states.len() < count {
        stepper.advance_n(gap)?;
        states.push(stepper.y().to_vec());
    }
    let spacing = gap as f64 * h;
    Ok(MuSamples {
        states,
        spacing,
        correlated: spacing < system.g.decorrelation_time(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErgodicAverage {
    pub value: Vec<f64>,
    pub t_used: f64,
    /// Batch-means standard error per component.
    pub std_err: Vec<f64>,
}

pub const DEFAULT_BATCHES: usize = 20;

/// `(1/T) int_0^T obs(y(tau)) dtau` by the trapezoid rule on the RK4 grid,
/// with a non-overlapping batch-means standard error.
pub fn ergodic_average(
    system: &FlowSystem,
    obs: &dyn Observable,
    horizon: f64,
    eta: &[f64],
    cfg: &IntegratorConfig,
    batches: usize,
) -> Result<ErgodicAverage> {
    let (n, h) = cfg.plan(horizon)?;
    if batches < 2 {
        return Err(Error::Input("need at least 2 batches".into()));
    }
    if n < 10 * batches {
        return Err(Error::Input(format!(
            "averaging window of {n} steps is too short for {batches} batches (need 10 steps each)"
        )));
    }
    let k = obs.dim_out();
    let mut stepper = FastStepper::new(system, eta, h)?;
    let mut prev = vec![0.0; k];
    let mut cur = vec![0.0; k];
    let mut seg = vec![0.0; k];
    obs.eval(stepper.y(), &mut prev);
    let mut total = RunningMean::new(k);
    let mut batch_means = Vec::with_capacity(batches);
    let mut batch = RunningMean::new(k);
    let mut batch_idx = 0;
    for i in 0..n {
        stepper.advance()?;
        obs.eval(stepper.y(), &mut cur);
        for j in 0..k {
            seg[j] = 0.5 * (prev[j] + cur[j]);
        }
        total.push(&seg);
        let b = i * batches / n;
        if b != batch_idx {
            batch_means.push(batch.mean().to_vec());
            batch = RunningMean::new(k);
            batch_idx = b;
        }
        batch.push(&seg);
        std::mem::swap(&mut prev, &mut cur);
    }
    batch_means.push(batch.mean().to_vec());
    let std_err = (0..k)
        .map(|j| {
            let col: Vec<f64> = batch_means.iter().map(|m| m[j]).collect();
            stats::std_err(&col)
        })
        .collect();
    Ok(ErgodicAverage {
        value: total.mean().to_vec(),
        t_used: n as f64 * h,
        std_err,
    })
}

/// Time average of `f(x, .)` with `x` frozen: the averaged drift `F(x)`.
pub fn estimate_f(system: &FlowSystem, x: &[f64], horizon: f64, eta: &[f64], cfg: &IntegratorConfig) -> Result<ErgodicAverage> {
    system.check_slow_state(x)?;
    let f = &*system.f;
    let obs = FnObservable::new(system.d, move |y: &[f64], out: &mut [f64]| f.eval(x, y, out));
    ergodic_average(system, &obs, horizon, eta, cfg, DEFAULT_BATCHES)
}

/// Plain Monte-Carlo average of `obs` over `mu`-samples with standard error
/// `sd / sqrt(N)`.
pub fn sample_average(obs: &dyn Observable, samples: &[Vec<f64>]) -> ErgodicAverage {
    let k = obs.dim_out();
    let mut buf = vec![0.0; k];
    let values: Vec<Vec<f64>> = samples
        .iter()
        .map(|y| {
            obs.eval(y, &mut buf);
            buf.clone()
        })
        .collect();
    let (value, std_err) = (0..k)
        .map(|j| {
            let col: Vec<f64> = values.iter().map(|v| v[j]).collect();
            (stats::mean(&col), stats::std_err(&col))
        })
        .unzip();
    ErgodicAverage {
        value,
        t_used: 0.0,
        std_err,
    }
}

/// Replaces `f0` by `f0 - m`, where `m` is its time average over a
/// calibration run of length `horizon` started from `eta`.
pub fn center_f0(system: &FlowSystem, horizon: f64, eta: &[f64], cfg: &IntegratorConfig) -> Result<(FlowSystem, ErgodicAverage)> {
    let avg = ergodic_average(system, &*system.f0, horizon, eta, cfg, DEFAULT_BATCHES)?;
    let centered = crate::flows::Centered {
        inner: system.f0.clone(),
        mean: avg.value.clone(),
    };
    Ok((system.with_f0(std::sync::Arc::new(centered))?, avg))
}

/// Mean of an observable over `samples` and over the same samples flowed
/// forward by `shift`; under an invariant measure the two agree.
#[derive(Clone, Debug, PartialEq)]
pub struct StationarityCheck {
    pub before: ErgodicAverage,
    pub after: ErgodicAverage,
    /// `|before - after| / sqrt(se_before^2 + se_after^2)` per component.
    pub z: Vec<f64>,
}

impl StationarityCheck {
    pub fn passes(&self, n_se: f64) -> bool {
        self.z.iter().all(|z| *z <= n_se)
    }
}

pub fn stationarity_check(
    system: &FlowSystem,
    samples: &[Vec<f64>],
    obs: &dyn Observable,
    shift: f64,
    cfg: &IntegratorConfig,
) -> Result<StationarityCheck> {
    let (n, h) = cfg.plan(shift)?;
    let advanced: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|y| {
            let mut s = FastStepper::new(system, y, h)?;
            s.advance_n(n)?;
            Ok(s.y().to_vec())
        })
        .collect::<Result<_>>()?;
    let before = sample_average(obs, samples);
    let after = sample_average(obs, &advanced);
    let z = before
        .value
        .iter()
        .zip(&after.value)
        .zip(before.std_err.iter().zip(&after.std_err))
        .map(|((a, b), (sa, sb))| {
            let s = (sa * sa + sb * sb).sqrt();
            if s == 0.0 {
                if a == b { 0.0 } else { f64::INFINITY }
            } else {
                (a - b).abs() / s
            }
        })
        .collect();
    Ok(StationarityCheck { before, after, z })
}
