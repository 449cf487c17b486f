//! Classical p-value baselines and a uniform procedure handle.
//!
//! Baselines work on exact two-sided Gaussian p-values from the marginal
//! standardization `p_j = 2 (1 - Phi(|x_j| / sqrt(sigma_jj)))`, with no
//! dependence adjustment.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::model::CovarianceModel;
use crate::stepdown::{run_stepdown, StepDownConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Bonferroni,
    Holm,
    Bh,
}

impl BaselineKind {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::Bonferroni => "bonferroni",
            BaselineKind::Holm => "holm",
            BaselineKind::Bh => "bh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bonferroni" => Some(BaselineKind::Bonferroni),
            "holm" => Some(BaselineKind::Holm),
            "bh" => Some(BaselineKind::Bh),
            _ => None,
        }
    }
}

/// Two-sided p-values from the marginal standardization.
pub fn marginal_p_values(model: &CovarianceModel, x: &DVector<f64>) -> Result<Vec<f64>> {
    if x.len() != model.n() {
        return Err(Error::BadDimension {
            expected: model.n(),
            got: x.len(),
        });
    }
    Ok((0..model.n())
        .map(|j| {
            let z = x[j].abs() / model.scales()[j].sqrt();
            erfc(z / std::f64::consts::SQRT_2)
        })
        .collect())
}

/// Applies the named classical rule to precomputed p-values.
pub fn apply_baseline(kind: BaselineKind, p: &[f64], alpha: f64) -> Result<Vec<bool>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::BadAlpha(alpha));
    }
    let n = p.len();
    let mut reject = vec![false; n];
    match kind {
        BaselineKind::Bonferroni => {
            let cut = alpha / n as f64;
            for j in 0..n {
                reject[j] = p[j] < cut;
            }
        }
        BaselineKind::Holm => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| p[a].partial_cmp(&p[b]).expect("finite p-values"));
            for (i, &j) in order.iter().enumerate() {
                if p[j] < alpha / (n - i) as f64 {
                    reject[j] = true;
                } else {
                    break;
                }
            }
        }
        BaselineKind::Bh => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| p[a].partial_cmp(&p[b]).expect("finite p-values"));
            let mut k_max = None;
            for (i, &j) in order.iter().enumerate() {
                if p[j] <= (i + 1) as f64 * alpha / n as f64 {
                    k_max = Some(i);
                }
            }
            if let Some(k) = k_max {
                for &j in &order[..=k] {
                    reject[j] = true;
                }
            }
        }
    }
    Ok(reject)
}

/// Runs a baseline end to end on an observation.
pub fn run_baseline(
    kind: BaselineKind,
    model: &CovarianceModel,
    x: &DVector<f64>,
    alpha: f64,
) -> Result<Vec<bool>> {
    let p = marginal_p_values(model, x)?;
    apply_baseline(kind, &p, alpha)
}

/// A decision procedure on observations: the step-down engine, a p-value
/// baseline, or one of the degenerate constant rules.
#[derive(Debug, Clone)]
pub enum Procedure {
    StepDown(StepDownConfig),
    Baseline {
        model: Arc<CovarianceModel>,
        kind: BaselineKind,
        alpha: f64,
    },
    AlwaysAccept,
    AlwaysReject,
}

impl Procedure {
    pub fn decide(&self, x: &DVector<f64>) -> Result<Vec<bool>> {
        match self {
            Procedure::StepDown(config) => Ok(run_stepdown(config, x)?.decision),
            Procedure::Baseline { model, kind, alpha } => run_baseline(*kind, model, x, *alpha),
            Procedure::AlwaysAccept => Ok(vec![false; x.len()]),
            Procedure::AlwaysReject => Ok(vec![true; x.len()]),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Procedure::StepDown(_) => "stepdown".into(),
            Procedure::Baseline { kind, .. } => kind.name().into(),
            Procedure::AlwaysAccept => "always_accept".into(),
            Procedure::AlwaysReject => "always_reject".into(),
        }
    }
}
