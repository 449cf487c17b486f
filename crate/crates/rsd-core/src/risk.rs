//! Per-coordinate 0-1 risk estimation and empirical dominance screening.
//!
//! The loss of a decision vector `phi` at `theta` is componentwise: a type I
//! error (`phi_j = 1` on a true null) or a type II error (`phi_j = 0` off the
//! null). Risks are Monte Carlo means over `X ~ N(theta, Sigma)` with
//! per-replicate streams shared across procedures, so dominance margins on a
//! common grid are paired rather than independent. The dominance verdict is
//! an empirical screen with a 2-stderr buffer, never a proof.

use rayon::prelude::*;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::CovarianceModel;
use crate::procedure::Procedure;
use crate::sim::{replicate_rng, sample_gaussian};

/// Componentwise 0-1 testing loss of `decision` at `theta`.
pub fn loss(decision: &[bool], theta: &DVector<f64>) -> Result<Vec<u8>> {
    if decision.len() != theta.len() {
        return Err(Error::BadDimension {
            expected: theta.len(),
            got: decision.len(),
        });
    }
    Ok(decision
        .iter()
        .zip(theta.iter())
        .map(|(&phi, &t)| {
            if t == 0.0 {
                u8::from(phi)
            } else {
                u8::from(!phi)
            }
        })
        .collect())
}

/// Monte Carlo estimate of the vector risk of one procedure at one `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskEstimate {
    pub theta: Vec<f64>,
    pub risk: Vec<f64>,
    pub stderr: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
}

/// Estimates the per-coordinate risk of `procedure` at `theta` by averaging
/// losses over `reps` replicates drawn from `(seed, replicate)` streams.
pub fn estimate_risk(
    procedure: &Procedure,
    model: &CovarianceModel,
    theta: &DVector<f64>,
    reps: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    if reps < crate::calibrate::MIN_FWER_REPS {
        return Err(Error::TooFewReps {
            needed: crate::calibrate::MIN_FWER_REPS,
            got: reps,
        });
    }
    let n = model.n();
    if theta.len() != n {
        return Err(Error::BadDimension {
            expected: n,
            got: theta.len(),
        });
    }

    let totals: Vec<u64> = (0..reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, i as u64);
            let x = sample_gaussian(model, theta, &mut rng)?;
            let phi = procedure.decide(&x)?;
            loss(&phi, theta)
        })
        .try_fold(
            || vec![0u64; n],
            |mut acc, l| {
                let l = l?;
                for (a, v) in acc.iter_mut().zip(l) {
                    *a += u64::from(v);
                }
                Ok(acc)
            },
        )
        .try_reduce(
            || vec![0u64; n],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                Ok(a)
            },
        )?;

    let risk: Vec<f64> = totals.iter().map(|&t| t as f64 / reps as f64).collect();
    let stderr: Vec<f64> = risk
        .iter()
        .map(|&r| (r * (1.0 - r) / reps as f64).sqrt())
        .collect();
    Ok(RiskEstimate {
        theta: theta.iter().copied().collect(),
        risk,
        stderr,
        reps,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DominanceVerdict {
    ADominates,
    BDominates,
    Incomparable,
    StatisticalTie,
}

/// Margin data for one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct DominanceMargin {
    pub theta: Vec<f64>,
    /// `risk_A - risk_B` per coordinate.
    pub margins: Vec<f64>,
    /// `sqrt(se_A^2 + se_B^2)` per coordinate.
    pub pooled_stderr: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominanceReport {
    pub verdict: DominanceVerdict,
    pub margins: Vec<DominanceMargin>,
}

/// Compares two risk surfaces over the same grid. `A` dominates when its
/// risk is never significantly worse and significantly better somewhere,
/// at the 2-pooled-stderr level; symmetric for `B`.
pub fn compare_dominance(a: &[RiskEstimate], b: &[RiskEstimate]) -> Result<DominanceReport> {
    if a.len() != b.len() {
        return Err(Error::GridMismatch(format!(
            "grid sizes differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::GridMismatch("empty grid".into()));
    }

    let mut margins = Vec::with_capacity(a.len());
    let mut a_sig_better = false;
    let mut b_sig_better = false;
    let mut a_never_worse = true;
    let mut b_never_worse = true;

    for (ra, rb) in a.iter().zip(b.iter()) {
        if ra.theta != rb.theta {
            return Err(Error::GridMismatch(format!(
                "theta mismatch: {:?} vs {:?}",
                ra.theta, rb.theta
            )));
        }
        if ra.risk.len() != rb.risk.len() {
            return Err(Error::GridMismatch("coordinate count mismatch".into()));
        }
        let mut m = Vec::with_capacity(ra.risk.len());
        let mut se = Vec::with_capacity(ra.risk.len());
        for j in 0..ra.risk.len() {
            let margin = ra.risk[j] - rb.risk[j];
            let pooled = (ra.stderr[j].powi(2) + rb.stderr[j].powi(2)).sqrt();
            if margin > 2.0 * pooled {
                a_never_worse = false;
                b_sig_better = true;
            }
            if margin < -2.0 * pooled {
                b_never_worse = false;
                a_sig_better = true;
            }
            m.push(margin);
            se.push(pooled);
        }
        margins.push(DominanceMargin {
            theta: ra.theta.clone(),
            margins: m,
            pooled_stderr: se,
        });
    }

    let verdict = if a_never_worse && a_sig_better {
        DominanceVerdict::ADominates
    } else if b_never_worse && b_sig_better {
        DominanceVerdict::BDominates
    } else if !a_sig_better && !b_sig_better {
        DominanceVerdict::StatisticalTie
    } else {
        DominanceVerdict::Incomparable
    };
    Ok(DominanceReport { verdict, margins })
}

/// Demo grid for small problems: all combinations of `theta_j` in `{0, 1, 3}`.
pub fn default_theta_grid(n: usize) -> Result<Vec<DVector<f64>>> {
    if n == 0 || n > 4 {
        return Err(Error::GridMismatch(format!(
            "default grid only covers 1 <= n <= 4, got {n}"
        )));
    }
    let levels = [0.0, 1.0, 3.0];
    let total = levels.len().pow(n as u32);
    let mut grid = Vec::with_capacity(total);
    for idx in 0..total {
        let mut rem = idx;
        let mut theta = DVector::zeros(n);
        for j in 0..n {
            theta[j] = levels[rem % levels.len()];
            rem /= levels.len();
        }
        grid.push(theta);
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;
    use crate::stepdown::{StepDownConfig, ThresholdProfile};
    use crate::transform::TransformSpec;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    #[test]
    fn loss_worked_examples() {
        let theta = DVector::from_vec(vec![0.0, 2.0]);
        assert_eq!(loss(&[true, false], &theta).unwrap(), vec![1, 1]);
        let zero = DVector::zeros(3);
        assert_eq!(loss(&[false, false, false], &zero).unwrap(), vec![0, 0, 0]);
        let theta = DVector::from_vec(vec![3.0, 0.0]);
        assert_eq!(loss(&[true, true], &theta).unwrap(), vec![0, 1]);
        assert!(loss(&[true], &theta).is_err());
    }

    #[test]
    fn always_accept_risk_is_alternative_indicator() {
        let model = build_model(DMatrix::identity(3, 3)).unwrap();
        let theta = DVector::from_vec(vec![0.0, 1.0, 3.0]);
        let est =
            estimate_risk(&Procedure::AlwaysAccept, &model, &theta, 1_000, 4).unwrap();
        assert_eq!(est.risk, vec![0.0, 1.0, 1.0]);
        assert_eq!(est.stderr, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn univariate_null_risk_near_alpha() {
        let model = Arc::new(build_model(DMatrix::identity(1, 1)).unwrap());
        let config = StepDownConfig::new(
            model.clone(),
            TransformSpec::identity(1),
            ThresholdProfile::raw(vec![1.96]).unwrap(),
        )
        .unwrap();
        let est = estimate_risk(
            &Procedure::StepDown(config),
            &model,
            &DVector::zeros(1),
            20_000,
            12,
        )
        .unwrap();
        assert!((est.risk[0] - 0.05).abs() < 0.008, "risk = {}", est.risk[0]);
    }

    #[test]
    fn distant_alternative_has_tiny_risk() {
        let model = Arc::new(build_model(DMatrix::identity(1, 1)).unwrap());
        let config = StepDownConfig::new(
            model.clone(),
            TransformSpec::identity(1),
            ThresholdProfile::raw(vec![1.96]).unwrap(),
        )
        .unwrap();
        let est = estimate_risk(
            &Procedure::StepDown(config),
            &model,
            &DVector::from_vec(vec![10.0]),
            5_000,
            13,
        )
        .unwrap();
        assert!(est.risk[0] <= 0.001);
    }

    #[test]
    fn identical_estimates_tie() {
        let model = build_model(DMatrix::identity(1, 1)).unwrap();
        let theta = DVector::zeros(1);
        let a = estimate_risk(&Procedure::AlwaysAccept, &model, &theta, 1_000, 7).unwrap();
        let b = a.clone();
        let rep = compare_dominance(&[a], &[b]).unwrap();
        assert_eq!(rep.verdict, DominanceVerdict::StatisticalTie);
    }

    #[test]
    fn accept_dominates_reject_under_global_null() {
        let model = build_model(DMatrix::identity(1, 1)).unwrap();
        let theta = DVector::zeros(1);
        let a = estimate_risk(&Procedure::AlwaysAccept, &model, &theta, 1_000, 7).unwrap();
        let b = estimate_risk(&Procedure::AlwaysReject, &model, &theta, 1_000, 7).unwrap();
        let rep = compare_dominance(&[a], &[b]).unwrap();
        assert_eq!(rep.verdict, DominanceVerdict::ADominates);
        assert_eq!(rep.margins[0].margins, vec![-1.0]);
    }

    #[test]
    fn grid_mismatch_detected() {
        let model = build_model(DMatrix::identity(1, 1)).unwrap();
        let a = estimate_risk(
            &Procedure::AlwaysAccept,
            &model,
            &DVector::zeros(1),
            1_000,
            7,
        )
        .unwrap();
        let b = estimate_risk(
            &Procedure::AlwaysAccept,
            &model,
            &DVector::from_vec(vec![1.0]),
            1_000,
            7,
        )
        .unwrap();
        assert!(matches!(
            compare_dominance(std::slice::from_ref(&a), &[b]).unwrap_err(),
            Error::GridMismatch(_)
        ));
        assert!(compare_dominance(&[a], &[]).is_err());
    }

    #[test]
    fn default_grid_shape() {
        let g = default_theta_grid(2).unwrap();
        assert_eq!(g.len(), 9);
        assert!(default_theta_grid(5).is_err());
    }

    #[test]
    fn shared_seed_pairs_draws() {
        // Same (seed, replicate) stream for both procedures: under theta = 0
        // the always-reject loss is exactly 1 - always-accept loss per draw,
        // so margins are exactly -1 even at modest reps.
        let model = build_model(DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0])).unwrap();
        let theta = DVector::zeros(2);
        let a = estimate_risk(&Procedure::AlwaysAccept, &model, &theta, 1_000, 3).unwrap();
        let b = estimate_risk(&Procedure::AlwaysReject, &model, &theta, 1_000, 3).unwrap();
        for j in 0..2 {
            assert_eq!(a.risk[j] + b.risk[j], 1.0);
        }
    }
}
