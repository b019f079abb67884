//! Mixed-frequency synthetic control.
//!
//! Donor units may be observed at the treated unit's (baseline) frequency,
//! at a lower frequency, or at a higher frequency. Low-frequency donors are
//! reconstructed at the baseline frequency through a distributed-lag model,
//! high-frequency donors are aggregated with dictionary MIDAS weights, and the
//! unit weights and MIDAS coefficients are estimated jointly as one convex
//! quadratic program. Block-subsampling bootstrap intervals for the average
//! treatment effect and a Monte Carlo lab complete the toolkit.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix the common `f64` instantiation.

pub mod error;
pub mod estimator;
pub mod freq_align;
pub mod inference;
pub mod linalg;
pub mod optim;
pub mod panel;
mod scalar;
pub mod simlab;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use estimator::{counterfactual, effects, fit, placebo_in_time, EstimationConfig, Variant};
pub use inference::{block_bootstrap_ci, sigma_v_hat, BlockRule, BootstrapConfig};
pub use panel::{load_panel, validate_panel, write_panel, FrequencyClass, LowFreqMode};

pub type Matrix = linalg::Matrix<f64>;
pub type UnitSeries = panel::UnitSeries<f64>;
pub type MixedPanel = panel::MixedPanel<f64>;
pub type MidasWeights = freq_align::MidasWeights<f64>;
pub type ReconstructionModel = freq_align::ReconstructionModel<f64>;
pub type AlignedDesign = optim::AlignedDesign<f64>;
pub type SimplexQP = optim::SimplexQP<f64>;
pub type JointSolution = optim::JointSolution<f64>;
pub type FitResult = estimator::FitResult<f64>;
pub type EffectSeries = estimator::EffectSeries<f64>;
pub type CiResult = inference::CiResult<f64>;

/// Single-precision instantiations.
pub mod f32 {
    pub type Matrix = crate::linalg::Matrix<f32>;
    pub type UnitSeries = crate::panel::UnitSeries<f32>;
    pub type MixedPanel = crate::panel::MixedPanel<f32>;
    pub type FitResult = crate::estimator::FitResult<f32>;
    pub type EffectSeries = crate::estimator::EffectSeries<f32>;
    pub type CiResult = crate::inference::CiResult<f32>;
}
