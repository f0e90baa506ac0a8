//! Numerical laboratory for diffusion limits of slow-fast skew-product flows.
//!
//! The fast variable `y` follows an autonomous chaotic flow (Lorenz by
//! default) and drives the slow variable `x` through
//!
//! ```text
//! dx/dt = eps^-1 f0(y) + f(x, y),    dy/dt = eps^-2 g(y)
//! ```
//!
//! As `eps -> 0`, `x` converges weakly to the solution of
//! `dX = F(X) dt + sqrt(Sigma) dW`. The modules below simulate both sides,
//! estimate `Sigma`, `F` and the large-deviation tail `b(a, T)`, and run the
//! convergence diagnostics.

pub mod convergence;
pub mod error;
pub mod flows;
pub mod limit_laws;
pub mod measure;
pub mod ode;
pub mod rng;
pub mod sde;
pub mod stats;
pub mod trajectory;

pub use error::{Error, Result};
pub use flows::FlowSystem;
pub use trajectory::{TimeFrame, TrajectoryGrid};

/// Max-norm of a vector. Every bound in the crate (`|f|_inf`, sup-norms of
/// paths, Lipschitz constants) is taken with respect to this norm.
#[inline]
pub fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, &a| m.max(a.abs()))
}

/// Returns an error if any entry is NaN or infinite.
pub fn ensure_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|a| a.is_finite()) {
        Ok(())
    } else {
        Err(Error::Input(format!("{what} has non-finite entries")))
    }
}
