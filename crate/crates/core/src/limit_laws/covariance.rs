use nalgebra::DMatrix;
use rayon::prelude::*;

use super::wip::{wip_ensemble, WipEnsemble};
use crate::error::{Error, Result};
use crate::flows::FlowSystem;
use crate::measure::{sample_mu, MuSampler};
use crate::ode::{FastStepper, IntegratorConfig};
use crate::stats;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SigmaMethod {
    Ensemble,
    GreenKubo,
}

impl SigmaMethod {
    pub fn name(self) -> &'static str {
        match self {
            SigmaMethod::Ensemble => "ensemble",
            SigmaMethod::GreenKubo => "green_kubo",
        }
    }
}

/// An estimate of the WIP covariance `Sigma`.
#[derive(Clone, Debug)]
pub struct CovarianceEstimate {
    pub sigma: DMatrix<f64>,
    pub method: SigmaMethod,
    /// Ensemble size, or number of autocovariance samples for Green-Kubo.
    pub n_samples: usize,
    /// Per-entry standard error (jackknife for the ensemble, block
    /// replication for Green-Kubo; NaN when the run is too short to block).
    pub std_err: DMatrix<f64>,
    /// Total magnitude of negative eigenvalues removed by the PSD projection.
    pub clipped_mass: f64,
}

impl CovarianceEstimate {
    pub fn is_symmetric(&self) -> bool {
        self.sigma == self.sigma.transpose()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.sigma.clone().symmetric_eigen().eigenvalues.min()
    }

    /// `||self - reference||_F / ||reference||_F`.
    pub fn relative_frobenius(&self, reference: &CovarianceEstimate) -> f64 {
        let denom = reference.sigma.norm();
        let num = (&self.sigma - &reference.sigma).norm();
        if denom == 0.0 {
            if num == 0.0 { 0.0 } else { f64::INFINITY }
        } else {
            num / denom
        }
    }
}

/// Symmetrizes and clips negative eigenvalues; returns the clipped mass.
pub(crate) fn project_psd(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let clipped: f64 = eig.eigenvalues.iter().filter(|l| **l < 0.0).map(|l| -l).sum();
    if clipped == 0.0 {
        return (sym, 0.0);
    }
    let lam = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors;
    let r = v * DMatrix::from_diagonal(&lam) * v.transpose();
    ((&r + r.transpose()) * 0.5, clipped)
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let d = rows.len();
    DMatrix::from_fn(d, d, |i, j| rows[i][j])
}

/// `Sigma` read off as `Cov W_n(1)` over `m` initial conditions drawn from
/// `mu`. The ensemble also records `W_n` at `t = 1/2` and `t = 2` for the
/// Brownian-behaviour checks, and is returned alongside.
pub fn estimate_sigma_ensemble(
    system: &FlowSystem,
    n: f64,
    m: usize,
    sampler: &MuSampler,
    cfg: &IntegratorConfig,
) -> Result<(CovarianceEstimate, WipEnsemble)> {
    if m < 30 {
        return Err(Error::Input(format!("ensemble size must be at least 30, got {m}")));
    }
    let etas = sample_mu(system, sampler, m, cfg)?;
    let ens = wip_ensemble(system, n, &[0.5, 1.0, 2.0], &etas.states, cfg)?;
    let est = covariance_from_ensemble(&ens, 1.0)?;
    Ok((est, ens))
}

/// `Cov W_n(t) / t` from a recorded ensemble.
pub fn covariance_from_ensemble(ens: &WipEnsemble, t: f64) -> Result<CovarianceEstimate> {
    let ti = ens
        .time_index(t)
        .ok_or_else(|| Error::Input(format!("time {t} not recorded in ensemble")))?;
    let (cov, se) = stats::covariance_with_jackknife(&ens.at(ti));
    let (sigma, clipped) = project_psd(&(to_matrix(&cov) / t));
    Ok(CovarianceEstimate {
        sigma,
        method: SigmaMethod::Ensemble,
        n_samples: ens.values.len(),
        std_err: to_matrix(&se) / t,
        clipped_mass: clipped,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GreenKuboConfig {
    /// Truncation of the correlation integral.
    pub t_corr: f64,
    /// Length of the trajectory.
    pub t_run: f64,
    /// Sampling interval of the `f0` series.
    pub sample_interval: f64,
    /// Number of sub-blocks used for the standard error.
    pub blocks: usize,
}

impl Default for GreenKuboConfig {
    fn default() -> Self {
        GreenKuboConfig {
            t_corr: 10.0,
            t_run: 100_000.0,
            sample_interval: 0.05,
            blocks: 10,
        }
    }
}

/// `Sigma = int_0^{t_corr} (C(s) + C(s)^T) ds`, with `C` the empirical
/// stationary autocovariance of `f0` along one trajectory from `eta`.
pub fn estimate_sigma_green_kubo(
    system: &FlowSystem,
    gk: &GreenKuboConfig,
    eta: &[f64],
    cfg: &IntegratorConfig,
) -> Result<CovarianceEstimate> {
    if !(gk.t_corr > 0.0 && gk.t_corr < gk.t_run / 10.0) {
        return Err(Error::Input(format!(
            "correlation truncation {} must be positive and below t_run / 10 = {}",
            gk.t_corr,
            gk.t_run / 10.0
        )));
    }
    cfg.validate()?;
    let h = cfg.h_tau;
    let stride = ((gk.sample_interval / h).round() as usize).max(1);
    let ds = stride as f64 * h;
    let samples = (gk.t_run / ds).floor() as usize;
    let lags = (gk.t_corr / ds).round() as usize;
    let d = system.d;

    // column-major f0 series
    let mut series = vec![Vec::with_capacity(samples + 1); d];
    let mut stepper = FastStepper::new(system, eta, h)?;
    let mut buf = vec![0.0; d];
    for k in 0..=samples {
        if k > 0 {
            stepper.advance_n(stride)?;
        }
        system.f0.eval(stepper.y(), &mut buf);
        for (col, v) in series.iter_mut().zip(&buf) {
            col.push(*v);
        }
    }

    let (sigma, clipped) = project_psd(&green_kubo_integral(&series, ds, lags));

    let block_len = series[0].len() / gk.blocks.max(1);
    let std_err = if gk.blocks >= 2 && block_len as f64 * ds > 10.0 * gk.t_corr {
        let reps: Vec<DMatrix<f64>> = (0..gk.blocks)
            .map(|b| {
                let part: Vec<Vec<f64>> = series.iter().map(|c| c[b * block_len..(b + 1) * block_len].to_vec()).collect();
                green_kubo_integral(&part, ds, lags)
            })
            .collect();
        DMatrix::from_fn(d, d, |i, j| {
            let col: Vec<f64> = reps.iter().map(|r| r[(i, j)]).collect();
            stats::std_err(&col)
        })
    } else {
        DMatrix::from_element(d, d, f64::NAN)
    };

    Ok(CovarianceEstimate {
        sigma,
        method: SigmaMethod::GreenKubo,
        n_samples: series[0].len(),
        std_err,
        clipped_mass: clipped,
    })
}

/// Trapezoid integral over lags `0..=lags` of `C_ij(k) + C_ji(k)`.
fn green_kubo_integral(series: &[Vec<f64>], ds: f64, lags: usize) -> DMatrix<f64> {
    let d = series.len();
    let len = series[0].len();
    let centered: Vec<Vec<f64>> = series
        .iter()
        .map(|c| {
            let m = stats::mean(c);
            c.iter().map(|v| v - m).collect()
        })
        .collect();
    let lags = lags.min(len - 1);
    let per_lag: Vec<DMatrix<f64>> = (0..=lags)
        .into_par_iter()
        .map(|k| {
            let count = (len - k) as f64;
            DMatrix::from_fn(d, d, |i, j| {
                let (a, b) = (&centered[i][..len - k], &centered[j][k..]);
                a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>() / count
            })
        })
        .collect();
    let mut out = DMatrix::zeros(d, d);
    for (k, c) in per_lag.iter().enumerate() {
        let w = if k == 0 || k == lags { 0.5 } else { 1.0 };
        for i in 0..d {
            for j in 0..d {
                out[(i, j)] += w * ds * (c[(i, j)] + c[(j, i)]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::*;
    use crate::rng::rng_from_seed;
    use rand_distr::{Distribution, StandardNormal};
    use std::sync::Arc;

    #[test]
    fn psd_projection_clips_and_records() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let (p, clipped) = project_psd(&m);
        assert!((clipped - 1.0).abs() < 1e-12);
        assert_eq!(p, p.transpose());
        assert!(p.clone().symmetric_eigen().eigenvalues.min() >= -1e-12);
        let (q, c0) = project_psd(&DMatrix::identity(2, 2));
        assert_eq!(c0, 0.0);
        assert_eq!(q, DMatrix::identity(2, 2));
    }

    #[test]
    fn green_kubo_of_ar1_matches_closed_form() {
        // AR(1) x_{k+1} = phi x_k + e_k: sum over all lags of the
        // autocovariance is 1 / (1 - phi)^2 for unit innovations.
        let phi: f64 = 0.6;
        let mut rng = rng_from_seed(21);
        let mut x = 0.0;
        let series: Vec<f64> = (0..400_000)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                x = phi * x + e;
                x
            })
            .collect();
        // trapezoid with ds = 1 over lags: 2 * sum_{k>=0} C(k) - C(0)
        let gamma0 = 1.0 / (1.0 - phi * phi);
        let full = 2.0 * gamma0 / (1.0 - phi) - gamma0;
        let got = green_kubo_integral(&[series], 1.0, 60)[(0, 0)];
        assert!((got - full).abs() / full < 0.03, "{got} vs {full}");
    }

    #[test]
    fn zero_f0_gives_zero_sigma() {
        let sys = FlowSystem::lorenz_benchmark(2, 1.0, LorenzParams::default(), BenchmarkParams::default())
            .unwrap()
            .with_f0(Arc::new(ZeroObservable { dim: 2 }))
            .unwrap();
        let cfg = IntegratorConfig::default();
        let gk = GreenKuboConfig {
            t_corr: 2.0,
            t_run: 100.0,
            ..Default::default()
        };
        let est = estimate_sigma_green_kubo(&sys, &gk, &[1.0, 1.0, 20.0], &cfg).unwrap();
        assert_eq!(est.sigma, DMatrix::zeros(2, 2));
        let sampler = MuSampler {
            burn_in: 10.0,
            spacing: 1.0,
            ..Default::default()
        };
        let (ens, _) = estimate_sigma_ensemble(&sys, 5.0, 30, &sampler, &cfg).unwrap();
        assert_eq!(ens.sigma, DMatrix::zeros(2, 2));
    }

    #[test]
    fn rejects_bad_sizes() {
        let sys = FlowSystem::lorenz_benchmark(1, 1.0, LorenzParams::default(), BenchmarkParams::default()).unwrap();
        let cfg = IntegratorConfig::default();
        let gk = GreenKuboConfig {
            t_corr: 20.0,
            t_run: 100.0,
            ..Default::default()
        };
        assert!(estimate_sigma_green_kubo(&sys, &gk, &[1.0, 1.0, 20.0], &cfg).is_err());
        assert!(estimate_sigma_ensemble(&sys, 10.0, 29, &MuSampler::default(), &cfg).is_err());
    }
}
