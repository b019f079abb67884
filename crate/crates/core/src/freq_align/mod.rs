//! Alignment of donor outcomes to the baseline frequency.
//!
//! High-frequency donors are collapsed with dictionary MIDAS weights;
//! low-frequency donors are reconstructed from a distributed-lag model in
//! their covariates, fitted either on point samples (OLS) or on cycle
//! aggregates (alternating least squares).

mod basis;
mod lowfreq;
mod midas;

pub use basis::{basis_eval, LagPolyBasis};
pub(crate) use lowfreq::reconstruct_from_covariates;
pub use lowfreq::{
    fit_low_freq, fit_low_freq_aggregate, fit_low_freq_aggregate_with, fit_low_freq_point_sample,
    reconstruct_baseline, AlsOptions, ReconDiagnostics, ReconstructionModel,
};
pub use midas::{align_high_freq, build_midas_weights, zeta_for_weights, MidasWeights};
