//! Estimators for the two limit laws the diffusion limit rests on:
//! the weak invariance principle for `f0` (paths `W_n`, covariance `Sigma`)
//! and the large-deviation tail `b(a, T)` of finite-time averages of `f`.

mod covariance;
mod ldp;
mod wip;

pub use covariance::{
    covariance_from_ensemble,
    estimate_sigma_ensemble, estimate_sigma_green_kubo, CovarianceEstimate, GreenKuboConfig, SigmaMethod,
};
pub use ldp::{check_ldp_bound, estimate_ldp, ldp_x_uniformity, LdpEstimate, LdpBoundCheck, WindowDeviations};
pub use wip::{brownian_diagnostics, wip_ensemble, wip_path, BrownianDiagnostics, WipEnsemble, WipPath};
