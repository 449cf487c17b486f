//! Monte Carlo threshold calibration under the global null.
//!
//! With `theta = 0`, a run rejects anything iff its stage-1 score exceeds
//! `C_1`, so the family-wise error rate pins down the first cutoff alone:
//! `C_1` is the empirical `(1 - alpha)` quantile of the stage-1 score
//! maximum. Later cutoffs come from a profile rule; the default keeps the
//! profile constant.

use rayon::prelude::*;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{ActiveState, CovarianceModel};
use crate::sim::{derive_seed, replicate_rng, sample_gaussian};
use crate::stepdown::{run_stepdown, StepDownConfig, ThresholdProfile, ThresholdScale};
use crate::transform::TransformSpec;

/// Minimum replicate counts.
pub const MIN_CALIBRATION_REPS: usize = 10_000;
pub const MIN_FWER_REPS: usize = 1_000;

/// How cutoffs for stages `t >= 2` follow from the calibrated `C_1`.
#[derive(Debug, Clone, PartialEq)]
pub enum ProfileRule {
    /// `C_t = C_1` for every stage.
    Constant,
    /// A user-given positive non-increasing shape, scaled so the first entry
    /// equals the calibrated `C_1`.
    ScaledShape(Vec<f64>),
}

/// Outcome of a calibration run.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub thresholds: ThresholdProfile,
    /// Re-estimated on a fresh replicate stream.
    pub achieved_fwer: f64,
    pub mc_stderr: f64,
    pub reps: usize,
    pub seed: u64,
}

/// Stage-1 score maximum for one draw.
fn stage_one_max(
    state: &ActiveState,
    transform: &TransformSpec,
    x: &DVector<f64>,
) -> Result<f64> {
    let residuals = state.residuals(x)?;
    let mut best = f64::NEG_INFINITY;
    for (j, u) in residuals {
        let s = transform.score(1, j, &[], u.abs());
        if s > best {
            best = s;
        }
    }
    Ok(best)
}

/// Calibrates `C_1` to a target family-wise error rate `alpha` under the
/// global null and re-estimates the achieved rate on a fresh stream.
///
/// The quantile convention is the order statistic at `ceil((1 - alpha) * reps)`.
pub fn calibrate_first_threshold(
    model: &CovarianceModel,
    transform: &TransformSpec,
    alpha: f64,
    reps: usize,
    seed: u64,
    rule: &ProfileRule,
) -> Result<CalibrationResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::BadAlpha(alpha));
    }
    if reps < MIN_CALIBRATION_REPS {
        return Err(Error::TooFewReps {
            needed: MIN_CALIBRATION_REPS,
            got: reps,
        });
    }
    if transform.n() != model.n() {
        return Err(Error::BadDimension {
            expected: model.n(),
            got: transform.n(),
        });
    }

    let state = ActiveState::full(model)?;
    let zero = DVector::zeros(model.n());

    let mut maxima: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, i as u64);
            let x = sample_gaussian(model, &zero, &mut rng)?;
            stage_one_max(&state, transform, &x)
        })
        .collect::<Result<Vec<f64>>>()?;
    maxima.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let rank = ((1.0 - alpha) * reps as f64).ceil() as usize;
    let c1 = maxima[rank.clamp(1, reps) - 1];

    let n = model.n();
    let values = match rule {
        ProfileRule::Constant => vec![c1; n],
        ProfileRule::ScaledShape(shape) => {
            if shape.len() != n {
                return Err(Error::BadDimension {
                    expected: n,
                    got: shape.len(),
                });
            }
            if !shape.iter().all(|s| s.is_finite() && *s > 0.0) {
                return Err(Error::BadThresholds(
                    "profile shape must be positive and finite".into(),
                ));
            }
            for i in 1..n {
                if shape[i] > shape[i - 1] {
                    return Err(Error::NotNonIncreasing { position: i });
                }
            }
            if c1.is_nan() || c1 <= 0.0 {
                return Err(Error::BadThresholds(format!(
                    "scaled shapes need a positive calibrated C1, got {c1}"
                )));
            }
            shape.iter().map(|s| s * c1 / shape[0]).collect()
        }
    };
    let scale = if transform.is_identity() && values[n - 1] > 0.0 {
        ThresholdScale::Raw
    } else {
        ThresholdScale::Score
    };
    let thresholds = ThresholdProfile::new(values, scale)?;

    // Fresh stream for the achieved-rate estimate.
    let fresh = derive_seed(seed, 1);
    let hits: usize = (0..reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(fresh, i as u64);
            let x = sample_gaussian(model, &zero, &mut rng)?;
            Ok(usize::from(stage_one_max(&state, transform, &x)? > c1))
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum();
    let achieved = hits as f64 / reps as f64;
    let stderr = (achieved * (1.0 - achieved) / reps as f64).sqrt();

    Ok(CalibrationResult {
        thresholds,
        achieved_fwer: achieved,
        mc_stderr: stderr,
        reps,
        seed,
    })
}

/// Fraction of replicates in which any true null (`theta_j = 0`) is
/// rejected, with its binomial standard error.
pub fn estimate_fwer(
    config: &StepDownConfig,
    theta: &DVector<f64>,
    reps: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if reps < MIN_FWER_REPS {
        return Err(Error::TooFewReps {
            needed: MIN_FWER_REPS,
            got: reps,
        });
    }
    if theta.len() != config.n() {
        return Err(Error::BadDimension {
            expected: config.n(),
            got: theta.len(),
        });
    }
    let nulls: Vec<usize> = (0..config.n()).filter(|&j| theta[j] == 0.0).collect();

    let hits: usize = (0..reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, i as u64);
            let x = sample_gaussian(&config.model, theta, &mut rng)?;
            let traj = run_stepdown(config, &x)?;
            Ok(usize::from(nulls.iter().any(|&j| traj.decision[j])))
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum();
    let rate = hits as f64 / reps as f64;
    let stderr = (rate * (1.0 - rate) / reps as f64).sqrt();
    Ok((rate, stderr))
}
