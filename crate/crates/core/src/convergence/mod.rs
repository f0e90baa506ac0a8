//! Diagnostics for the diffusion limit: ensembles of the skew product along
//! a ladder of `eps`, their distance to the limiting SDE, and the block
//! decomposition of the averaging error `Z`.

mod decompose;
mod distance;
mod ladder;

pub use decompose::{analytic_bounds, decompose_z, g_oracle_residual, ZDecomposition};
pub use distance::{energy_distance, ks_noise_floor, ks_two_sample, two_sample_distance, TwoSampleDistance};
pub use ladder::{
    run_ladder, LadderCheck, LadderConfig, LadderReport, LevelStats, ReferenceStats, BOUND_TOL, KS_FINAL_MAX, ORACLE_TOL,
    TELESCOPING_TOL,
};
