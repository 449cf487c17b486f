//! Residual-based step-down multiple testing for multivariate normal means
//! under a known covariance matrix.
//!
//! The library covers:
//!
//! * conditional residual statistics and the precision-downdate machinery
//!   behind them ([`model`]);
//! * the maximum-residual-down procedure and its generalization through
//!   locally adaptive strictly increasing score transforms ([`stepdown`],
//!   [`transform`]);
//! * classical p-value baselines for comparison ([`procedure`]);
//! * Monte Carlo threshold calibration to a target family-wise error rate
//!   ([`calibrate`]);
//! * vector-risk estimation and empirical dominance screening ([`risk`]);
//! * numerical verification of the acceptance-region geometry that makes
//!   these procedures admissible ([`verify`]).
//!
//! Conventions: coordinates are 0-based in the API, stage numbers are
//! 1-based, and every Monte Carlo routine derives per-replicate RNG streams
//! from `(seed, replicate index)` so results do not depend on thread counts.

pub mod calibrate;
pub mod error;
pub mod model;
pub mod procedure;
pub mod risk;
pub mod sim;
pub mod stepdown;
pub mod transform;
pub mod verify;

pub use error::{Error, Result};
pub use model::{
    build_model, conditional_residual, conditional_variance, residuals_via_precision, ActiveState,
    CovarianceModel, EliminationHistory, ShiftDirection,
};
pub use procedure::{apply_baseline, marginal_p_values, run_baseline, BaselineKind, Procedure};
pub use stepdown::{
    run_mrd, run_stepdown, select_index, StageAction, StageRecord, StepDownConfig,
    ThresholdProfile, ThresholdScale, TieRule, Trajectory,
};
pub use transform::{Transform, TransformSpec};
