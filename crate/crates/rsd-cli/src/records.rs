//! Line-delimited output records.
//!
//! Every emitted line is one JSON object with a `type` field. Floats are
//! rounded to 9 significant digits before serialization so identical inputs
//! produce byte-identical files.

use std::io::Write;

use serde::Serialize;

use rsd_core::risk::{DominanceReport, RiskEstimate};
use rsd_core::stepdown::{StageAction, Trajectory};
use rsd_core::verify::{GeometrySuiteReport, IntervalReport, LineScanProfile, ShiftSuiteReport};

/// Rounds to 9 significant digits; the serializer then prints the shortest
/// representation of the rounded value.
pub fn sig9(v: f64) -> f64 {
    if v.is_finite() {
        format!("{v:.8e}").parse().unwrap_or(v)
    } else {
        v
    }
}

fn sig9_vec(vs: &[f64]) -> Vec<f64> {
    vs.iter().map(|&v| sig9(v)).collect()
}

pub fn write_record<W: Write, T: Serialize>(out: &mut W, record: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, record)?;
    writeln!(out)
}

#[derive(Serialize)]
pub struct DecisionRecord {
    #[serde(rename = "type")]
    pub kind: &'static str,
    pub row: usize,
    pub decision: Vec<u8>,
    pub rejected: Vec<usize>,
}

impl DecisionRecord {
    pub fn from_trajectory(row: usize, traj: &Trajectory) -> Self {
        let mut rejected: Vec<usize> = traj.rejected.iter().map(|&j| j + 1).collect();
        rejected.sort_unstable();
        Self {
            kind: "decision",
            row,
            decision: traj.decision.iter().map(|&d| u8::from(d)).collect(),
            rejected,
        }
    }
}

#[derive(Serialize)]
pub struct StageRecordOut {
    #[serde(rename = "type")]
    pub kind: &'static str,
    pub row: usize,
    pub stage: usize,
    pub coordinate: usize,
    pub residual: f64,
    pub score: f64,
    pub threshold: f64,
    pub action: &'static str,
}

impl StageRecordOut {
    pub fn from_trajectory(row: usize, traj: &Trajectory) -> Vec<Self> {
        traj.records
            .iter()
            .map(|r| Self {
                kind: "stage",
                row,
                stage: r.stage,
                coordinate: r.coordinate + 1,
                residual: sig9(r.residual),
                score: sig9(r.score),
                threshold: sig9(r.threshold),
                action: match r.action {
                    StageAction::Reject => "reject",
                    StageAction::Stop => "stop",
                },
            })
            .collect()
    }
}

#[derive(Serialize)]
pub struct CalibrationRecord {
    #[serde(rename = "type")]
    pub kind: &'static str,
    pub thresholds: Vec<f64>,
    pub scale: &'static str,
    pub achieved_fwer: f64,
    pub mc_stderr: f64,
    pub reps: usize,
    pub seed: u64,
}

impl CalibrationRecord {
    pub fn new(res: &rsd_core::calibrate::CalibrationResult) -> Self {
        Self {
            kind: "calibration",
            thresholds: sig9_vec(res.thresholds.values()),
            scale: match res.thresholds.scale() {
                rsd_core::stepdown::ThresholdScale::Raw => "raw",
                rsd_core::stepdown::ThresholdScale::Score => "score",
            },
            achieved_fwer: sig9(res.achieved_fwer),
            mc_stderr: sig9(res.mc_stderr),
            reps: res.reps,
            seed: res.seed,
        }
    }
}

#[derive(Serialize)]
pub struct RiskRecord {
    #[serde(rename = "type")]
    pub kind: &'static str,
    pub procedure: String,
    pub theta: Vec<f64>,
    pub risk: Vec<f64>,
    pub stderr: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
}

impl RiskRecord {
    pub fn new(procedure: &str, est: &RiskEstimate) -> Self {
        Self {
            kind: "risk",
            procedure: procedure.to_string(),
            theta: sig9_vec(&est.theta),
            risk: sig9_vec(&est.risk),
            stderr: sig9_vec(&est.stderr),
            reps: est.reps,
            seed: est.seed,
        }
    }
}

#[derive(Serialize)]
pub struct MarginOut {
    pub theta: Vec<f64>,
    pub margins: Vec<f64>,
    pub pooled_stderr: Vec<f64>,
}

#[derive(Serialize)]
pub struct DominanceRecord {
    #[serde(rename = "type")]
    pub kind: &'static str,
    pub a: String,
    pub b: String,
    pub verdict: &'static str,
    pub margins: Vec<MarginOut>,
}

impl DominanceRecord {
    pub fn new(a: &str, b: &str, report: &DominanceReport) -> Self {
        use rsd_core::risk::DominanceVerdict::*;
        Self {
            kind: "dominance",
            a: a.to_string(),
            b: b.to_string(),
            verdict: match report.verdict {
                ADominates => "a_dominates",
                BDominates => "b_dominates",
                Incomparable => "incomparable",
                StatisticalTie => "statistical_tie",
            },
            margins: report
                .margins
                .iter()
                .map(|m| MarginOut {
                    theta: sig9_vec(&m.theta),
                    margins: sig9_vec(&m.margins),
                    pooled_stderr: sig9_vec(&m.pooled_stderr),
                })
                .collect(),
        }
    }
}

#[derive(Serialize)]
pub struct ScanPointRecord {
    #[serde(rename = "type")]
    pub kind: &'static str,
    pub r: f64,
    pub decision: u8,
    pub stage: usize,
}

impl ScanPointRecord {
    pub fn from_profile(profile: &LineScanProfile) -> Vec<Self> {
        profile
            .grid
            .iter()
            .zip(&profile.decisions)
            .zip(&profile.stop_stages)
            .map(|((&r, &d), &stage)| Self {
                kind: "scanpoint",
                r: sig9(r),
                decision: u8::from(d),
                stage,
            })
            .collect()
    }
}

#[derive(Serialize)]
pub struct IntervalReportRecord {
    #[serde(rename = "type")]
    pub kind: &'static str,
    pub coordinate: usize,
    pub pass: bool,
    pub violations: Vec<usize>,
}

impl IntervalReportRecord {
    pub fn new(coordinate_1based: usize, report: &IntervalReport) -> Self {
        Self {
            kind: "interval_report",
            coordinate: coordinate_1based,
            pass: report.pass,
            violations: report.violation_positions.clone(),
        }
    }
}

#[derive(Serialize)]
pub struct SuiteSummaryRecord {
    #[serde(rename = "type")]
    pub kind: &'static str,
    pub suite: &'static str,
    pub instances: usize,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checks: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_on_coordinate_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_off_coordinate_drift: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scans: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scan_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interval_violations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_consistency_max_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs_checked: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_order_failures: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prefix_match_failures: Option<usize>,
    pub failures: Vec<String>,
}

impl SuiteSummaryRecord {
    pub fn shift(report: &ShiftSuiteReport) -> Self {
        Self {
            kind: "suite_summary",
            suite: "shift",
            instances: report.instances,
            pass: report.pass(),
            checks: Some(report.checks),
            max_on_coordinate_error: Some(sig9(report.max_on_coordinate_error)),
            max_off_coordinate_drift: Some(sig9(report.max_off_coordinate_drift)),
            scans: None,
            scan_points: None,
            interval_violations: None,
            y_consistency_max_error: None,
            pairs_checked: None,
            stop_order_failures: None,
            prefix_match_failures: None,
            failures: report.failures.clone(),
        }
    }

    pub fn geometry(suite: &'static str, report: &GeometrySuiteReport, pass: bool) -> Self {
        Self {
            kind: "suite_summary",
            suite,
            instances: report.instances,
            pass,
            checks: None,
            max_on_coordinate_error: None,
            max_off_coordinate_drift: None,
            scans: Some(report.scans),
            scan_points: Some(report.scan_points),
            interval_violations: Some(report.interval_violations),
            y_consistency_max_error: Some(sig9(report.y_consistency_max_error)),
            pairs_checked: Some(report.pairs_checked),
            stop_order_failures: Some(report.stop_order_failures),
            prefix_match_failures: Some(report.prefix_match_failures),
            failures: report.failures.clone(),
        }
    }
}
