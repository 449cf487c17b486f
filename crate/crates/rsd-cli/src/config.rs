//! Run configuration files.
//!
//! JSON schema (stages and coordinates are 1-based in the file):
//!
//! ```json
//! {
//!   "sigma": [[1.0, 0.5], [0.5, 1.0]],
//!   "transform": {
//!     "kind": "power", "params": {"exponent": 2.0},
//!     "per_stage": {"2": {"kind": "identity"}},
//!     "per_coordinate": {"1": {"kind": "affine", "params": {"slope": 3.0, "intercept": 0.0}}},
//!     "history_gain": 0.25
//!   },
//!   "thresholds": [1.5, 1.0],
//!   "tie_rule": "lowest-index",
//!   "seed": 42
//! }
//! ```
//!
//! `thresholds` may instead be `{"calibrate": {"alpha": 0.05, "reps": 100000}}`,
//! optionally with a `"shape"` array for a scaled non-increasing profile.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Deserialize;

use rsd_core::calibrate::{calibrate_first_threshold, ProfileRule};
use rsd_core::model::CovarianceModel;
use rsd_core::stepdown::{StepDownConfig, ThresholdProfile, ThresholdScale};
use rsd_core::transform::{Transform, TransformSpec};

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformConfig {
    #[serde(flatten)]
    base: Transform,
    #[serde(default)]
    per_stage: BTreeMap<String, Transform>,
    #[serde(default)]
    per_coordinate: BTreeMap<String, Transform>,
    #[serde(default)]
    history_gain: Option<f64>,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            base: Transform::Identity,
            per_stage: BTreeMap::new(),
            per_coordinate: BTreeMap::new(),
            history_gain: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum ThresholdsConfig {
    Explicit(Vec<f64>),
    Calibrate { calibrate: CalibrateParams },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateParams {
    pub alpha: f64,
    pub reps: usize,
    #[serde(default)]
    pub shape: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub sigma: Vec<Vec<f64>>,
    #[serde(default)]
    pub transform: TransformConfig,
    pub thresholds: ThresholdsConfig,
    #[serde(default)]
    pub thresholds_scale: Option<String>,
    #[serde(default)]
    pub tie_rule: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

/// A parsed and validated configuration, thresholds resolved.
pub struct LoadedConfig {
    pub model: Arc<CovarianceModel>,
    pub config: StepDownConfig,
    pub seed: u64,
    /// Present when thresholds were produced by calibration.
    pub calibration: Option<rsd_core::calibrate::CalibrationResult>,
}

fn parse_key(key: &str, what: &str) -> Result<usize, CliError> {
    key.trim()
        .parse::<usize>()
        .map_err(|_| CliError::validation(format!("bad {what} key {key:?} in transform overrides")))
}

pub fn build_transform_spec(n: usize, tc: &TransformConfig) -> Result<TransformSpec, CliError> {
    let mut spec =
        TransformSpec::uniform(n, tc.base.clone()).map_err(CliError::from_core)?;
    for (key, t) in &tc.per_stage {
        let stage = parse_key(key, "stage")?;
        spec = spec
            .with_stage_override(stage, t.clone())
            .map_err(CliError::from_core)?;
    }
    for (key, t) in &tc.per_coordinate {
        let coord = parse_key(key, "coordinate")?;
        if coord == 0 {
            return Err(CliError::validation(
                "coordinate keys are 1-based; 0 is not a coordinate",
            ));
        }
        spec = spec
            .with_coordinate_override(coord - 1, t.clone())
            .map_err(CliError::from_core)?;
    }
    if let Some(g) = tc.history_gain {
        spec = spec.with_history_gain(g).map_err(CliError::from_core)?;
    }
    Ok(spec)
}

pub fn load_config(path: &std::path::Path) -> Result<LoadedConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", path.display())))?;
    let file: RunConfigFile = serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))?;

    if let Some(rule) = &file.tie_rule {
        if rule != "lowest-index" {
            return Err(CliError::validation(format!(
                "tie_rule must be \"lowest-index\", got {rule:?}"
            )));
        }
    }

    let n = file.sigma.len();
    if n == 0 || file.sigma.iter().any(|row| row.len() != n) {
        return Err(CliError::validation("sigma must be a nonempty square matrix"));
    }
    let flat: Vec<f64> = file.sigma.iter().flatten().copied().collect();
    let sigma = nalgebra::DMatrix::from_row_slice(n, n, &flat);
    let model = Arc::new(rsd_core::build_model(sigma).map_err(CliError::from_core)?);
    if model.near_singular() {
        eprintln!(
            "warning: covariance is near singular (pivot ratio {:.3e}); results may be unstable",
            model.pivot_ratio()
        );
    }

    let transform = build_transform_spec(n, &file.transform)?;

    let mut calibration = None;
    let thresholds = match &file.thresholds {
        ThresholdsConfig::Explicit(values) => {
            let scale = match file.thresholds_scale.as_deref() {
                Some("raw") => ThresholdScale::Raw,
                Some("score") => ThresholdScale::Score,
                Some(other) => {
                    return Err(CliError::validation(format!(
                        "thresholds_scale must be \"raw\" or \"score\", got {other:?}"
                    )))
                }
                None => {
                    if transform.is_identity() && values.iter().all(|&v| v > 0.0) {
                        ThresholdScale::Raw
                    } else {
                        ThresholdScale::Score
                    }
                }
            };
            ThresholdProfile::new(values.clone(), scale).map_err(CliError::from_core)?
        }
        ThresholdsConfig::Calibrate { calibrate } => {
            let rule = match &calibrate.shape {
                Some(shape) => ProfileRule::ScaledShape(shape.clone()),
                None => ProfileRule::Constant,
            };
            let res = calibrate_first_threshold(
                &model,
                &transform,
                calibrate.alpha,
                calibrate.reps,
                file.seed,
                &rule,
            )
            .map_err(CliError::from_core)?;
            let profile = res.thresholds.clone();
            calibration = Some(res);
            profile
        }
    };

    let config = StepDownConfig::new(model.clone(), transform, thresholds)
        .map_err(CliError::from_core)?;
    Ok(LoadedConfig {
        model,
        config,
        seed: file.seed,
        calibration,
    })
}

/// Parses numeric CSV content: comma-separated rows, blank lines and lines
/// starting with `#` skipped. Returns `(line_number, values)` pairs.
pub fn parse_csv_rows(text: &str, what: &str) -> Result<Vec<(usize, Vec<f64>)>, CliError> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut values = Vec::new();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                CliError::validation(format!(
                    "{what} line {}: cannot parse {field:?} as a number",
                    lineno + 1
                ))
            })?;
            values.push(v);
        }
        rows.push((lineno + 1, values));
    }
    Ok(rows)
}
