//! Strictly increasing score transforms.
//!
//! A step-down procedure ranks active coordinates by `S = h(|U|)` where `h`
//! is strictly increasing on `[0, inf)` and may vary with the stage, the
//! coordinate and the elimination history. Monotonicity of every named
//! instance is verified numerically at construction on a 1001-point grid
//! over `[0, 50]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid used for the numerical monotonicity check.
const MONO_GRID_POINTS: usize = 1001;
const MONO_GRID_MAX: f64 = 50.0;

/// One strictly increasing map applied to an absolute residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum Transform {
    /// `h(u) = u`; the maximum-residual-down special case.
    Identity,
    /// `h(u) = u^p`, `p > 0`.
    Power { exponent: f64 },
    /// `h(u) = a u + b`, `a > 0`.
    Affine { slope: f64, intercept: f64 },
    /// `h(u) = log(1 + c u)`, `c > 0`.
    LogShift { scale: f64 },
    /// Log Bayes factor of a `N(0, tau^2)` mean against a point null on a
    /// unit-variance residual:
    /// `h(u) = (tau^2 / (2 (1 + tau^2))) u^2 - log(1 + tau^2) / 2`.
    BayesFactor { tau: f64 },
    /// Piecewise-linear interpolant through strictly increasing knots
    /// `(u_i, v_i)` starting at `u_0 = 0`, extrapolated with the final slope.
    Table { knots: Vec<(f64, f64)> },
}

impl Transform {
    pub fn apply(&self, u: f64) -> f64 {
        match self {
            Transform::Identity => u,
            Transform::Power { exponent } => u.powf(*exponent),
            Transform::Affine { slope, intercept } => slope * u + intercept,
            Transform::LogShift { scale } => (1.0 + scale * u).ln(),
            Transform::BayesFactor { tau } => {
                let t2 = tau * tau;
                t2 / (2.0 * (1.0 + t2)) * u * u - 0.5 * (1.0 + t2).ln()
            }
            Transform::Table { knots } => {
                let last = knots.len() - 1;
                let seg = knots
                    .windows(2)
                    .position(|w| u <= w[1].0)
                    .unwrap_or(last - 1);
                let (u0, v0) = knots[seg];
                let (u1, v1) = knots[seg + 1];
                v0 + (u - u0) * (v1 - v0) / (u1 - u0)
            }
        }
    }

    /// Parameter ranges plus the strict grid check.
    pub fn validate(&self) -> Result<()> {
        match self {
            Transform::Identity => {}
            Transform::Power { exponent } => {
                if !exponent.is_finite() || *exponent <= 0.0 {
                    return Err(Error::BadParameter(format!(
                        "power exponent must be > 0, got {exponent}"
                    )));
                }
            }
            Transform::Affine { slope, intercept } => {
                if !slope.is_finite() || *slope <= 0.0 || !intercept.is_finite() {
                    return Err(Error::BadParameter(format!(
                        "affine needs slope > 0 and finite intercept, got ({slope}, {intercept})"
                    )));
                }
            }
            Transform::LogShift { scale } => {
                if !scale.is_finite() || *scale <= 0.0 {
                    return Err(Error::BadParameter(format!(
                        "logshift scale must be > 0, got {scale}"
                    )));
                }
            }
            Transform::BayesFactor { tau } => {
                if !tau.is_finite() || *tau <= 0.0 {
                    return Err(Error::BadParameter(format!(
                        "bayes factor tau must be > 0, got {tau}"
                    )));
                }
            }
            Transform::Table { knots } => {
                if knots.len() < 2 {
                    return Err(Error::BadParameter(
                        "table needs at least two knots".into(),
                    ));
                }
                if knots[0].0 != 0.0 {
                    return Err(Error::BadParameter(
                        "table knots must start at u = 0".into(),
                    ));
                }
                for w in knots.windows(2) {
                    let ok = w[0].0.is_finite()
                        && w[1].0.is_finite()
                        && w[0].1.is_finite()
                        && w[1].1.is_finite()
                        && w[1].0 > w[0].0
                        && w[1].1 > w[0].1;
                    if !ok {
                        return Err(Error::BadParameter(format!(
                            "table knots must be strictly increasing, got {:?} then {:?}",
                            w[0], w[1]
                        )));
                    }
                }
            }
        }
        self.grid_check()
    }

    fn grid_check(&self) -> Result<()> {
        let step = MONO_GRID_MAX / (MONO_GRID_POINTS - 1) as f64;
        let mut prev = self.apply(0.0);
        if !prev.is_finite() {
            return Err(Error::NotIncreasing { at: 0.0 });
        }
        for i in 1..MONO_GRID_POINTS {
            let u = i as f64 * step;
            let v = self.apply(u);
            if !v.is_finite() || v <= prev {
                return Err(Error::NotIncreasing { at: u });
            }
            prev = v;
        }
        Ok(())
    }
}

/// Locally adaptive family of transforms keyed by stage, coordinate and
/// history. Resolution order: exact (stage, coordinate) cell, then
/// coordinate, then stage, then the base instance. An optional history gain
/// rescales the residual by `1 + gain * w(history)` before the transform,
/// with `w` the normalized sum of eliminated labels; this keeps every
/// effective map strictly increasing while letting scores depend on the
/// elimination path itself.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformSpec {
    n: usize,
    base: Transform,
    stage_overrides: BTreeMap<usize, Transform>,
    coordinate_overrides: BTreeMap<usize, Transform>,
    cell_overrides: BTreeMap<(usize, usize), Transform>,
    history_gain: Option<f64>,
}

impl TransformSpec {
    pub fn uniform(n: usize, base: Transform) -> Result<Self> {
        base.validate()?;
        Ok(Self {
            n,
            base,
            stage_overrides: BTreeMap::new(),
            coordinate_overrides: BTreeMap::new(),
            cell_overrides: BTreeMap::new(),
            history_gain: None,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::uniform(n, Transform::Identity).expect("identity always validates")
    }

    /// Overrides the transform for one stage (1-based).
    pub fn with_stage_override(mut self, stage: usize, t: Transform) -> Result<Self> {
        if stage == 0 || stage > self.n {
            return Err(Error::BadParameter(format!(
                "stage override {stage} outside 1..={}",
                self.n
            )));
        }
        t.validate()?;
        self.stage_overrides.insert(stage, t);
        Ok(self)
    }

    /// Overrides the transform for one coordinate (0-based).
    pub fn with_coordinate_override(mut self, coordinate: usize, t: Transform) -> Result<Self> {
        if coordinate >= self.n {
            return Err(Error::BadIndex {
                index: coordinate,
                n: self.n,
            });
        }
        t.validate()?;
        self.coordinate_overrides.insert(coordinate, t);
        Ok(self)
    }

    /// Overrides the transform for one (stage, coordinate) cell.
    pub fn with_cell_override(
        mut self,
        stage: usize,
        coordinate: usize,
        t: Transform,
    ) -> Result<Self> {
        if stage == 0 || stage > self.n {
            return Err(Error::BadParameter(format!(
                "stage override {stage} outside 1..={}",
                self.n
            )));
        }
        if coordinate >= self.n {
            return Err(Error::BadIndex {
                index: coordinate,
                n: self.n,
            });
        }
        t.validate()?;
        self.cell_overrides.insert((stage, coordinate), t);
        Ok(self)
    }

    /// Enables history-dependent scoring with the given gain (`>= 0`).
    pub fn with_history_gain(mut self, gain: f64) -> Result<Self> {
        if !gain.is_finite() || gain < 0.0 {
            return Err(Error::BadParameter(format!(
                "history gain must be finite and >= 0, got {gain}"
            )));
        }
        self.history_gain = Some(gain);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// True only for the plain identity family (no overrides, no history
    /// gain): the raw-scale maximum-residual-down case.
    pub fn is_identity(&self) -> bool {
        self.base == Transform::Identity
            && self.stage_overrides.is_empty()
            && self.coordinate_overrides.is_empty()
            && self.cell_overrides.is_empty()
            && self.history_gain.is_none()
    }

    /// The instance in force at `(stage, coordinate)`.
    pub fn instance(&self, stage: usize, coordinate: usize) -> &Transform {
        self.cell_overrides
            .get(&(stage, coordinate))
            .or_else(|| self.coordinate_overrides.get(&coordinate))
            .or_else(|| self.stage_overrides.get(&stage))
            .unwrap_or(&self.base)
    }

    /// Score `S = h_{t,j}^{(history)}(|u|)`.
    pub fn score(&self, stage: usize, coordinate: usize, history: &[usize], u_abs: f64) -> f64 {
        let u_eff = match self.history_gain {
            Some(g) => {
                let w: f64 = history.iter().map(|&i| (i + 1) as f64).sum::<f64>() / self.n as f64;
                (1.0 + g * w) * u_abs
            }
            None => u_abs,
        };
        self.instance(stage, coordinate).apply(u_eff)
    }
}
