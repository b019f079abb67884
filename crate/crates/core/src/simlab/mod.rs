//! Monte Carlo laboratory: the mixed-frequency data-generating process, the
//! risk-ratio experiment and the interval-coverage experiment.

mod dgp;
mod experiments;

pub use dgp::{gen_panel, oracle_midas_shapes, Dgp, DgpConfig, OracleShape, OracleTruth};
pub use experiments::{
    coverage_experiment, derive_seed, risk_ratio_experiment, Cell, CoverageConfig, ExperimentKind,
    ExperimentResult, RiskConfig,
};
