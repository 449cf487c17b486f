//! Monotone residual-based step-down procedures.
//!
//! At stage `t` the engine scores every active coordinate by
//! `S_tj = h_tj(|U_tj|)`, picks the argmax (lowest label on ties), rejects
//! the winner when its score strictly exceeds `C_t`, and otherwise stops and
//! accepts all remaining hypotheses. [`run_mrd`] is a separate direct
//! implementation of the identity-transform special case: it recomputes the
//! residuals from scratch at each stage and never touches the transform
//! layer or the precision downdates, so it doubles as a cross-check oracle
//! for the engine.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{conditional_residual, ActiveState, CovarianceModel, EliminationHistory};
use crate::transform::TransformSpec;

/// Scale a threshold profile lives on. Raw-scale profiles compare against
/// plain `|U|` and must stay positive; score-scale profiles compare against
/// transformed scores and may be negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdScale {
    Raw,
    Score,
}

/// Non-increasing stagewise cutoffs `C_1 >= ... >= C_n`.
///
/// Entries may be `+inf` (a stage that never rejects, the always-accept
/// degenerate profile); `NaN` and `-inf` are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdProfile {
    values: Vec<f64>,
    scale: ThresholdScale,
}

impl ThresholdProfile {
    pub fn new(values: Vec<f64>, scale: ThresholdScale) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::BadThresholds("profile is empty".into()));
        }
        for (i, v) in values.iter().enumerate() {
            if v.is_nan() || *v == f64::NEG_INFINITY {
                return Err(Error::BadThresholds(format!(
                    "entry {} is {v}; must be a number or +inf",
                    i + 1
                )));
            }
        }
        for i in 1..values.len() {
            if values[i] > values[i - 1] {
                return Err(Error::NotNonIncreasing { position: i });
            }
        }
        if scale == ThresholdScale::Raw && values[values.len() - 1] <= 0.0 {
            return Err(Error::BadThresholds(
                "raw-scale profiles must be positive".into(),
            ));
        }
        Ok(Self { values, scale })
    }

    pub fn raw(values: Vec<f64>) -> Result<Self> {
        Self::new(values, ThresholdScale::Raw)
    }

    pub fn score(values: Vec<f64>) -> Result<Self> {
        Self::new(values, ThresholdScale::Score)
    }

    /// Constant profile `C_t = c` (the always-accept case is `c = +inf`).
    pub fn constant(n: usize, c: f64, scale: ThresholdScale) -> Result<Self> {
        Self::new(vec![c; n], scale)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scale(&self) -> ThresholdScale {
        self.scale
    }

    /// Cutoff at 1-based stage `t`.
    pub fn at_stage(&self, t: usize) -> f64 {
        self.values[t - 1]
    }
}

/// Deterministic tie handling for the stagewise argmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieRule {
    /// Exact ties go to the smallest coordinate label.
    #[default]
    LowestIndex,
}

/// Immutable configuration of one step-down procedure.
#[derive(Debug, Clone)]
pub struct StepDownConfig {
    pub model: Arc<CovarianceModel>,
    pub transform: TransformSpec,
    pub thresholds: ThresholdProfile,
    pub tie_rule: TieRule,
}

impl StepDownConfig {
    pub fn new(
        model: Arc<CovarianceModel>,
        transform: TransformSpec,
        thresholds: ThresholdProfile,
    ) -> Result<Self> {
        let n = model.n();
        if transform.n() != n {
            return Err(Error::BadDimension {
                expected: n,
                got: transform.n(),
            });
        }
        if thresholds.len() != n {
            return Err(Error::BadDimension {
                expected: n,
                got: thresholds.len(),
            });
        }
        Ok(Self {
            model,
            transform,
            thresholds,
            tie_rule: TieRule::LowestIndex,
        })
    }

    pub fn n(&self) -> usize {
        self.model.n()
    }
}

/// What a stage did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageAction {
    Reject,
    Stop,
}

/// One stage of a trajectory: the chosen coordinate, its signed residual,
/// its score, the cutoff and the action taken.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    /// 1-based stage number.
    pub stage: usize,
    /// 0-based chosen coordinate.
    pub coordinate: usize,
    pub residual: f64,
    pub score: f64,
    pub threshold: f64,
    pub action: StageAction,
}

/// Full record of a step-down run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<StageRecord>,
    /// Coordinates in rejection order.
    pub rejected: Vec<usize>,
    /// `decision[j]` is true iff `H_0j` was rejected.
    pub decision: Vec<bool>,
}

impl Trajectory {
    /// Stage of the terminal stop record, if the run stopped before
    /// exhausting all hypotheses.
    pub fn stop_stage(&self) -> Option<usize> {
        self.records
            .last()
            .filter(|r| r.action == StageAction::Stop)
            .map(|r| r.stage)
    }

    /// Stage at which `j` was rejected, if it was.
    pub fn rejection_stage(&self, j: usize) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.action == StageAction::Reject && r.coordinate == j)
            .map(|r| r.stage)
    }

    /// Chosen coordinate at 1-based stage `t`.
    pub fn chosen_at(&self, t: usize) -> Option<usize> {
        self.records.get(t - 1).map(|r| r.coordinate)
    }
}

/// Argmax over `(coordinate, score)` pairs; exact ties go to the smallest
/// coordinate label.
pub fn select_index(scores: &[(usize, f64)], _tie_rule: TieRule) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::EmptyActiveSet);
    }
    let mut best: Option<(usize, f64)> = None;
    for &(j, s) in scores {
        if s.is_nan() {
            return Err(Error::NonFiniteScore { index: j });
        }
        best = match best {
            None => Some((j, s)),
            Some((bj, bs)) => {
                if s > bs || (s == bs && j < bj) {
                    Some((j, s))
                } else {
                    Some((bj, bs))
                }
            }
        };
    }
    Ok(best.expect("nonempty").0)
}

/// Runs the generalized monotone residual-based step-down procedure.
///
/// Residuals come from the precision fast path; rejection uses the strict
/// inequality `S > C_t` (equality stops).
pub fn run_stepdown(config: &StepDownConfig, x: &DVector<f64>) -> Result<Trajectory> {
    let n = config.n();
    if x.len() != n {
        return Err(Error::BadDimension {
            expected: n,
            got: x.len(),
        });
    }
    for i in 0..n {
        if !x[i].is_finite() {
            return Err(Error::NonFiniteEntry { i, j: 0 });
        }
    }

    let mut state = ActiveState::full(&config.model)?;
    let mut records = Vec::with_capacity(n);
    let mut rejected = Vec::new();
    let mut decision = vec![false; n];

    for t in 1..=n {
        let residuals = state.residuals(x)?;
        let history = state.history().as_slice();
        let scores: Vec<(usize, f64)> = residuals
            .iter()
            .map(|&(j, u)| (j, config.transform.score(t, j, history, u.abs())))
            .collect();
        let j_t = select_index(&scores, config.tie_rule)?;
        let residual = residuals
            .iter()
            .find(|&&(j, _)| j == j_t)
            .expect("selected coordinate is active")
            .1;
        let score = scores
            .iter()
            .find(|&&(j, _)| j == j_t)
            .expect("selected coordinate is scored")
            .1;
        let threshold = config.thresholds.at_stage(t);

        if score > threshold {
            records.push(StageRecord {
                stage: t,
                coordinate: j_t,
                residual,
                score,
                threshold,
                action: StageAction::Reject,
            });
            rejected.push(j_t);
            decision[j_t] = true;
            if t < n {
                state = state.downdate(j_t)?;
                // Debug builds revalidate the downdated precision every stage.
                debug_assert!(
                    state.validate_against(&config.model) < 1e-6,
                    "downdated precision drifted from the active submatrix inverse"
                );
            }
        } else {
            records.push(StageRecord {
                stage: t,
                coordinate: j_t,
                residual,
                score,
                threshold,
                action: StageAction::Stop,
            });
            break;
        }
    }

    Ok(Trajectory {
        records,
        rejected,
        decision,
    })
}

/// Direct maximum-residual-down run: fresh conditional residuals each stage,
/// plain `|U|` comparisons, no transform layer. Requires a raw-scale
/// profile. Kept independent of [`run_stepdown`] on purpose.
pub fn run_mrd(
    model: &CovarianceModel,
    x: &DVector<f64>,
    thresholds: &ThresholdProfile,
) -> Result<Trajectory> {
    let n = model.n();
    if thresholds.scale() != ThresholdScale::Raw {
        return Err(Error::BadThresholds(
            "direct MRD runs need a raw-scale profile".into(),
        ));
    }
    if thresholds.len() != n {
        return Err(Error::BadDimension {
            expected: n,
            got: thresholds.len(),
        });
    }
    if x.len() != n {
        return Err(Error::BadDimension {
            expected: n,
            got: x.len(),
        });
    }

    let mut eliminated: Vec<usize> = Vec::new();
    let mut records = Vec::with_capacity(n);
    let mut rejected = Vec::new();
    let mut decision = vec![false; n];

    for t in 1..=n {
        let history = EliminationHistory::new(eliminated.clone(), n)?;
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if history.contains(j) {
                continue;
            }
            let u = conditional_residual(model, x, &history, j)?;
            let better = match best {
                None => true,
                Some((_, bu)) => u.abs() > bu.abs(),
            };
            if better {
                best = Some((j, u));
            }
        }
        let (j_t, u) = best.ok_or(Error::EmptyActiveSet)?;
        let threshold = thresholds.at_stage(t);

        if u.abs() > threshold {
            records.push(StageRecord {
                stage: t,
                coordinate: j_t,
                residual: u,
                score: u.abs(),
                threshold,
                action: StageAction::Reject,
            });
            rejected.push(j_t);
            decision[j_t] = true;
            if t == n {
                break;
            }
            eliminated.push(j_t);
        } else {
            records.push(StageRecord {
                stage: t,
                coordinate: j_t,
                residual: u,
                score: u.abs(),
                threshold,
                action: StageAction::Stop,
            });
            break;
        }
    }

    Ok(Trajectory {
        records,
        rejected,
        decision,
    })
}
