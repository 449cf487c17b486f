//! Numerical verification of the structural geometry behind the step-down
//! procedures.
//!
//! Along the shift direction `g_k` (column `k` of `Sigma`), the residual of
//! coordinate `k` moves affinely with slope `sqrt(v_k)` while every other
//! active residual stays put. Consequences checked here, on grids:
//!
//! * the accept set of `phi_k` along `x + r g_k` is an interval;
//! * an accept point and a reject point on the same line reject `k` no later
//!   than the accept point stopped (`t0 <= t`), with matching elimination
//!   prefixes up to stage `t0 - 1`;
//! * `y = inv(Sigma) x` moves only in coordinate `k` along the line.
//!
//! Grid scans substitute for the continuum: 2001 points over `[-20, 20]` by
//! default, with a 10x refinement pass around every detected decision
//! boundary so aliased violations inside a coarse cell are not missed.
//! Failures are data, not errors: suites aggregate them into reports.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{
    conditional_residual, conditional_variance, CovarianceModel, EliminationHistory,
};
use crate::stepdown::{run_stepdown, StepDownConfig, ThresholdProfile, Trajectory};
use crate::transform::{Transform, TransformSpec};

/// Error budget for the shift-property and y-consistency checks.
pub const SHIFT_TOL: f64 = 1e-8;
pub const Y_CONSISTENCY_TOL: f64 = 1e-8;

/// Default scan geometry.
pub const DEFAULT_GRID_POINTS: usize = 2001;
pub const DEFAULT_GRID_SPAN: (f64, f64) = (-20.0, 20.0);
pub const DEFAULT_REFINE_FACTOR: usize = 10;

/// Decisions of one coordinate's induced test along `x + r g_k`.
#[derive(Debug, Clone)]
pub struct LineScanProfile {
    pub coordinate: usize,
    pub base: DVector<f64>,
    pub grid: Vec<f64>,
    /// `phi_k` at each grid point.
    pub decisions: Vec<bool>,
    /// Stage at which `k` was rejected, or the stop stage when accepted.
    pub stop_stages: Vec<usize>,
    pub trajectories: Option<Vec<Trajectory>>,
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::BadGrid("grid is empty".into()));
    }
    if !grid.iter().all(|r| r.is_finite()) {
        return Err(Error::BadGrid("grid contains non-finite values".into()));
    }
    for w in grid.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::BadGrid(format!(
                "grid not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

fn eval_scan_point(
    config: &StepDownConfig,
    x: &DVector<f64>,
    g: &DVector<f64>,
    k: usize,
    r: f64,
) -> Result<(bool, usize, Trajectory)> {
    let point = x + g * r;
    let traj = run_stepdown(config, &point)?;
    let rejected = traj.decision[k];
    let stage = if rejected {
        traj.rejection_stage(k).expect("rejected coordinate has a reject record")
    } else {
        traj.stop_stage().expect("accepted coordinate implies a stop record")
    };
    Ok((rejected, stage, traj))
}

/// Runs the procedure at every `x + r g_k` and records the decision for
/// coordinate `k` plus stage information.
pub fn scan_line(
    config: &StepDownConfig,
    x: &DVector<f64>,
    k: usize,
    grid: &[f64],
    keep_trajectories: bool,
) -> Result<LineScanProfile> {
    let n = config.n();
    if k >= n {
        return Err(Error::BadIndex { index: k, n });
    }
    if x.len() != n {
        return Err(Error::BadDimension {
            expected: n,
            got: x.len(),
        });
    }
    validate_grid(grid)?;
    let g = config.model.shift_direction(k)?.g;

    let mut decisions = Vec::with_capacity(grid.len());
    let mut stop_stages = Vec::with_capacity(grid.len());
    let mut trajectories = keep_trajectories.then(|| Vec::with_capacity(grid.len()));
    for &r in grid {
        let (rejected, stage, traj) = eval_scan_point(config, x, &g, k, r)?;
        decisions.push(rejected);
        stop_stages.push(stage);
        if let Some(ts) = trajectories.as_mut() {
            ts.push(traj);
        }
    }
    Ok(LineScanProfile {
        coordinate: k,
        base: x.clone(),
        grid: grid.to_vec(),
        decisions,
        stop_stages,
        trajectories,
    })
}

/// Decision-only scan of an arbitrary rule along the same line; used for
/// baseline demonstrations. Stage information is not available.
pub fn scan_line_with<F>(
    model: &CovarianceModel,
    x: &DVector<f64>,
    k: usize,
    grid: &[f64],
    mut decide: F,
) -> Result<LineScanProfile>
where
    F: FnMut(&DVector<f64>) -> Result<Vec<bool>>,
{
    if k >= model.n() {
        return Err(Error::BadIndex {
            index: k,
            n: model.n(),
        });
    }
    validate_grid(grid)?;
    let g = model.shift_direction(k)?.g;
    let mut decisions = Vec::with_capacity(grid.len());
    for &r in grid {
        let point = x + &g * r;
        decisions.push(decide(&point)?[k]);
    }
    Ok(LineScanProfile {
        coordinate: k,
        base: x.clone(),
        grid: grid.to_vec(),
        decisions,
        stop_stages: vec![0; grid.len()],
        trajectories: None,
    })
}

/// Interval check outcome: reject points sandwiched between accepts.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalReport {
    pub pass: bool,
    pub violation_positions: Vec<usize>,
}

/// Passes iff the accept set is one contiguous run of grid indices
/// (possibly empty or full).
pub fn check_interval(profile: &LineScanProfile) -> IntervalReport {
    let first = profile.decisions.iter().position(|&d| !d);
    let last = profile.decisions.iter().rposition(|&d| !d);
    let mut violations = Vec::new();
    if let (Some(lo), Some(hi)) = (first, last) {
        for i in lo..=hi {
            if profile.decisions[i] {
                violations.push(i);
            }
        }
    }
    IntervalReport {
        pass: violations.is_empty(),
        violation_positions: violations,
    }
}

/// Re-scans at `factor`-times density inside every cell where the decision
/// flips, merging the new points into the profile.
pub fn refine_boundaries(
    config: &StepDownConfig,
    profile: &LineScanProfile,
    factor: usize,
) -> Result<LineScanProfile> {
    if factor < 2 {
        return Ok(profile.clone());
    }
    let k = profile.coordinate;
    let g = config.model.shift_direction(k)?.g;
    let keep = profile.trajectories.is_some();

    let mut grid = Vec::with_capacity(profile.grid.len());
    let mut decisions = Vec::with_capacity(profile.decisions.len());
    let mut stop_stages = Vec::with_capacity(profile.stop_stages.len());
    let mut trajectories = keep.then(Vec::new);

    for i in 0..profile.grid.len() {
        grid.push(profile.grid[i]);
        decisions.push(profile.decisions[i]);
        stop_stages.push(profile.stop_stages[i]);
        if let (Some(ts), Some(orig)) = (trajectories.as_mut(), profile.trajectories.as_ref()) {
            ts.push(orig[i].clone());
        }
        let flip = i + 1 < profile.grid.len() && profile.decisions[i] != profile.decisions[i + 1];
        if flip {
            let step = (profile.grid[i + 1] - profile.grid[i]) / factor as f64;
            for s in 1..factor {
                let r = profile.grid[i] + s as f64 * step;
                let (rejected, stage, traj) = eval_scan_point(config, &profile.base, &g, k, r)?;
                grid.push(r);
                decisions.push(rejected);
                stop_stages.push(stage);
                if let Some(ts) = trajectories.as_mut() {
                    ts.push(traj);
                }
            }
        }
    }
    Ok(LineScanProfile {
        coordinate: k,
        base: profile.base.clone(),
        grid,
        decisions,
        stop_stages,
        trajectories,
    })
}

/// Maximum deviations from the affine shift law over the given `r` values:
/// the on-coordinate error `|U_k(x + r g) - U_k(x) - r sqrt(v_k)|` and the
/// worst drift of any other active residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftCheck {
    pub on_coordinate_error: f64,
    pub off_coordinate_drift: f64,
}

pub fn check_shift_invariance(
    model: &CovarianceModel,
    x: &DVector<f64>,
    history: &EliminationHistory,
    k: usize,
    r_samples: &[f64],
) -> Result<ShiftCheck> {
    if history.contains(k) {
        return Err(Error::IndexInHistory { index: k });
    }
    let g = model.shift_direction(k)?.g;
    let slope = conditional_variance(model, history, k)?.sqrt();
    let u0_k = conditional_residual(model, x, history, k)?;
    let others: Vec<usize> = (0..model.n())
        .filter(|&j| j != k && !history.contains(j))
        .collect();
    let u0_others: Vec<f64> = others
        .iter()
        .map(|&j| conditional_residual(model, x, history, j))
        .collect::<Result<_>>()?;

    let mut on_err = 0.0_f64;
    let mut off_err = 0.0_f64;
    for &r in r_samples {
        let point = x + &g * r;
        let u_k = conditional_residual(model, &point, history, k)?;
        on_err = on_err.max((u_k - (u0_k + r * slope)).abs());
        for (idx, &j) in others.iter().enumerate() {
            let u_j = conditional_residual(model, &point, history, j)?;
            off_err = off_err.max((u_j - u0_others[idx]).abs());
        }
    }
    Ok(ShiftCheck {
        on_coordinate_error: on_err,
        off_coordinate_drift: off_err,
    })
}

/// Stage bookkeeping for one accept/reject pair on a scan line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathReport {
    /// Stop stage `t` at the accept point.
    pub stop_stage: usize,
    /// Stage `t0` rejecting the scanned coordinate at the reject point.
    pub rejection_stage: usize,
    /// `t0 <= t`.
    pub stop_ok: bool,
    /// Chosen indices agree at both points for stages `1 .. t0 - 1`.
    pub prefix_match: bool,
}

pub fn check_rejection_path(
    config: &StepDownConfig,
    x_accept: &DVector<f64>,
    x_reject: &DVector<f64>,
    k: usize,
) -> Result<PathReport> {
    if k >= config.n() {
        return Err(Error::BadIndex {
            index: k,
            n: config.n(),
        });
    }
    let traj_accept = run_stepdown(config, x_accept)?;
    let traj_reject = run_stepdown(config, x_reject)?;
    if traj_accept.decision[k] {
        return Err(Error::NotAnAcceptRejectPair(format!(
            "coordinate {} is rejected at the accept point",
            k + 1
        )));
    }
    if !traj_reject.decision[k] {
        return Err(Error::NotAnAcceptRejectPair(format!(
            "coordinate {} is accepted at the reject point",
            k + 1
        )));
    }
    let stop_stage = traj_accept
        .stop_stage()
        .expect("accepting trajectory stops");
    let rejection_stage = traj_reject
        .rejection_stage(k)
        .expect("rejecting trajectory rejects k");
    let upto = rejection_stage.min(stop_stage);
    let prefix_match = (1..upto).all(|l| traj_accept.chosen_at(l) == traj_reject.chosen_at(l));
    Ok(PathReport {
        stop_stage,
        rejection_stage,
        stop_ok: rejection_stage <= stop_stage,
        prefix_match,
    })
}

/// Accept/reject `r` pairs harvested from the boundaries of a profile:
/// (last accept, first reject after) and (first accept, last reject before).
pub fn harvest_pairs(profile: &LineScanProfile) -> Vec<(f64, f64)> {
    let first = profile.decisions.iter().position(|&d| !d);
    let last = profile.decisions.iter().rposition(|&d| !d);
    let mut pairs = Vec::new();
    if let (Some(lo), Some(hi)) = (first, last) {
        if lo > 0 {
            pairs.push((profile.grid[lo], profile.grid[lo - 1]));
        }
        if hi + 1 < profile.grid.len() {
            pairs.push((profile.grid[hi], profile.grid[hi + 1]));
        }
    }
    pairs
}

/// Evenly spaced strictly increasing grid.
pub fn linspace(min: f64, max: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::BadGrid(format!(
            "need at least 2 grid points, got {points}"
        )));
    }
    if !min.is_finite() || !max.is_finite() || max <= min {
        return Err(Error::BadGrid(format!("bad span {min}..{max}")));
    }
    let step = (max - min) / (points - 1) as f64;
    Ok((0..points).map(|i| min + i as f64 * step).collect())
}

// ---------------------------------------------------------------------------
// Random instance generation
// ---------------------------------------------------------------------------

/// Random well-conditioned correlation matrix: `A A' + 0.1 I` with standard
/// normal entries, standardized to unit diagonal.
pub fn random_correlation(n: usize, rng: &mut impl Rng) -> Result<CovarianceModel> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut s = &a * a.transpose();
    for i in 0..n {
        s[(i, i)] += 0.1;
    }
    let s = (&s + s.transpose()) * 0.5;
    let d: Vec<f64> = (0..n).map(|i| s[(i, i)].sqrt()).collect();
    let corr = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { s[(i, j)] / (d[i] * d[j]) });
    CovarianceModel::new(corr)
}

/// Random covariance with heterogeneous scales: a random correlation
/// conjugated by a random positive diagonal.
pub fn random_covariance(n: usize, rng: &mut impl Rng) -> Result<CovarianceModel> {
    let corr = random_correlation(n, rng)?;
    let d: Vec<f64> = (0..n).map(|_| rng.random_range(0.25..4.0)).collect();
    let sigma = DMatrix::from_fn(n, n, |i, j| corr.sigma()[(i, j)] * (d[i] * d[j]).sqrt());
    CovarianceModel::new(sigma)
}

/// One random transform instance from the registry.
pub fn random_transform(rng: &mut impl Rng) -> Transform {
    match rng.random_range(0..6u32) {
        0 => Transform::Identity,
        1 => Transform::Power {
            exponent: rng.random_range(0.5..3.0),
        },
        2 => Transform::Affine {
            slope: rng.random_range(0.5..3.0),
            intercept: rng.random_range(-1.0..1.0),
        },
        3 => Transform::LogShift {
            scale: rng.random_range(0.3..3.0),
        },
        4 => Transform::BayesFactor {
            tau: rng.random_range(0.5..3.0),
        },
        _ => {
            let u1 = rng.random_range(0.5..2.0);
            let u2 = u1 + rng.random_range(0.5..2.0);
            let v0 = rng.random_range(-1.0..0.0);
            let v1 = v0 + rng.random_range(0.2..1.5);
            let v2 = v1 + rng.random_range(0.2..1.5);
            Transform::Table {
                knots: vec![(0.0, v0), (u1, v1), (u2, v2)],
            }
        }
    }
}

/// Random transform family: uniform, stagewise, per-coordinate heterogeneous,
/// mixed with cell overrides, or history-adaptive.
pub fn random_transform_spec(n: usize, rng: &mut impl Rng) -> Result<TransformSpec> {
    let shape = rng.random_range(0..5u32);
    match shape {
        0 => TransformSpec::uniform(n, random_transform(rng)),
        1 => {
            let mut spec = TransformSpec::uniform(n, random_transform(rng))?;
            for t in 1..=n {
                if rng.random_bool(0.5) {
                    spec = spec.with_stage_override(t, random_transform(rng))?;
                }
            }
            Ok(spec)
        }
        2 => {
            // Per-coordinate heterogeneous: every coordinate gets its own map.
            let mut spec = TransformSpec::uniform(n, random_transform(rng))?;
            for j in 0..n {
                spec = spec.with_coordinate_override(j, random_transform(rng))?;
            }
            Ok(spec)
        }
        3 => {
            let mut spec = TransformSpec::uniform(n, random_transform(rng))?;
            for _ in 0..n {
                let t = rng.random_range(1..=n);
                let j = rng.random_range(0..n);
                spec = spec.with_cell_override(t, j, random_transform(rng))?;
            }
            Ok(spec)
        }
        _ => TransformSpec::uniform(n, random_transform(rng))?
            .with_history_gain(rng.random_range(0.0..1.0)),
    }
}

/// Random non-increasing score-scale profile anchored to the spread of the
/// stage-1 scores at the base point, so scans cross decision boundaries.
pub fn random_thresholds(
    model: &CovarianceModel,
    spec: &TransformSpec,
    x: &DVector<f64>,
    rng: &mut impl Rng,
) -> Result<ThresholdProfile> {
    let n = model.n();
    let state = crate::model::ActiveState::full(model)?;
    let scores: Vec<f64> = state
        .residuals(x)?
        .into_iter()
        .map(|(j, u)| spec.score(1, j, &[], u.abs()))
        .collect();
    let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let spread = (hi - lo).max(0.5);
    let c1 = lo + rng.random_range(0.2..0.9) * spread;
    let mut values = Vec::with_capacity(n);
    let mut c = c1;
    for _ in 0..n {
        values.push(c);
        c -= rng.random_range(0.0..0.2) * spread;
    }
    ThresholdProfile::score(values)
}

/// Random observation with spread-out components.
pub fn random_observation(n: usize, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| 2.0 * rng.sample::<f64, _>(StandardNormal))
}

// ---------------------------------------------------------------------------
// Suites
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub instances: usize,
    pub seed: u64,
    pub n_min: usize,
    pub n_max: usize,
    pub grid_points: usize,
    pub grid_span: (f64, f64),
    pub refine_factor: usize,
    /// `r` draws per shift check.
    pub r_samples: usize,
}

impl SuiteOptions {
    pub fn new(instances: usize, seed: u64) -> Self {
        Self {
            instances,
            seed,
            n_min: 2,
            n_max: 8,
            grid_points: DEFAULT_GRID_POINTS,
            grid_span: DEFAULT_GRID_SPAN,
            refine_factor: DEFAULT_REFINE_FACTOR,
            r_samples: 5,
        }
    }
}

fn instance_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(crate::sim::derive_seed(seed, index as u64))
}

/// Shift-property suite over random `(Sigma, x, history, k, r)` draws.
#[derive(Debug, Clone, Default)]
pub struct ShiftSuiteReport {
    pub instances: usize,
    pub checks: usize,
    pub max_on_coordinate_error: f64,
    pub max_off_coordinate_drift: f64,
    pub failures: Vec<String>,
}

impl ShiftSuiteReport {
    pub fn pass(&self) -> bool {
        self.failures.is_empty()
            && self.max_on_coordinate_error <= SHIFT_TOL
            && self.max_off_coordinate_drift <= SHIFT_TOL
    }
}

pub fn run_shift_suite(opts: &SuiteOptions) -> Result<ShiftSuiteReport> {
    let outcomes: Vec<Result<(usize, ShiftCheck, Option<String>)>> = (0..opts.instances)
        .into_par_iter()
        .map(|idx| {
            let mut rng = instance_rng(opts.seed, idx);
            let n = rng.random_range(opts.n_min..=opts.n_max.max(opts.n_min));
            let model = random_covariance(n, &mut rng)?;
            let x = random_observation(n, &mut rng);
            let k = rng.random_range(0..n);
            let mut others: Vec<usize> = (0..n).filter(|&j| j != k).collect();
            // Random history: a random-length prefix of a shuffled other-set.
            for i in (1..others.len()).rev() {
                let j = rng.random_range(0..=i);
                others.swap(i, j);
            }
            let hist_len = rng.random_range(0..n.min(others.len() + 1));
            let history = EliminationHistory::new(others[..hist_len].to_vec(), n)?;
            let rs: Vec<f64> = (0..opts.r_samples)
                .map(|_| rng.random_range(-10.0..10.0))
                .collect();
            let check = check_shift_invariance(&model, &x, &history, k, &rs)?;
            let failure = (check.on_coordinate_error > SHIFT_TOL
                || check.off_coordinate_drift > SHIFT_TOL)
                .then(|| {
                    format!(
                        "instance {idx}: n={n} k={} history={:?} on={:.3e} off={:.3e}",
                        k + 1,
                        history.as_slice(),
                        check.on_coordinate_error,
                        check.off_coordinate_drift
                    )
                });
            Ok((opts.r_samples, check, failure))
        })
        .collect();

    let mut report = ShiftSuiteReport {
        instances: opts.instances,
        ..Default::default()
    };
    for outcome in outcomes {
        let (checks, check, failure) = outcome?;
        report.checks += checks;
        report.max_on_coordinate_error = report
            .max_on_coordinate_error
            .max(check.on_coordinate_error);
        report.max_off_coordinate_drift = report
            .max_off_coordinate_drift
            .max(check.off_coordinate_drift);
        if let Some(f) = failure {
            report.failures.push(f);
        }
    }
    Ok(report)
}

/// Interval-geometry suite: scans every coordinate of random configs,
/// refines boundaries, checks interval structure, y-consistency and the
/// stopping/prefix laws on harvested pairs.
#[derive(Debug, Clone, Default)]
pub struct GeometrySuiteReport {
    pub instances: usize,
    pub scans: usize,
    pub scan_points: usize,
    pub interval_violations: usize,
    pub y_consistency_max_error: f64,
    pub pairs_checked: usize,
    pub stop_order_failures: usize,
    pub prefix_match_failures: usize,
    pub failures: Vec<String>,
}

impl GeometrySuiteReport {
    pub fn interval_pass(&self) -> bool {
        self.interval_violations == 0 && self.y_consistency_max_error <= Y_CONSISTENCY_TOL
    }

    pub fn path_pass(&self) -> bool {
        self.stop_order_failures == 0 && self.prefix_match_failures == 0
    }

    pub fn pass(&self) -> bool {
        self.interval_pass() && self.path_pass() && self.failures.is_empty()
    }
}

pub fn run_geometry_suite(opts: &SuiteOptions) -> Result<GeometrySuiteReport> {
    let grid = linspace(opts.grid_span.0, opts.grid_span.1, opts.grid_points)?;

    let outcomes: Vec<Result<GeometrySuiteReport>> = (0..opts.instances)
        .into_par_iter()
        .map(|idx| {
            let mut rng = instance_rng(opts.seed, idx);
            let n = rng.random_range(opts.n_min..=opts.n_max.max(opts.n_min));
            let model = std::sync::Arc::new(random_correlation(n, &mut rng)?);
            let x = random_observation(n, &mut rng);
            let spec = random_transform_spec(n, &mut rng)?;
            let thresholds = random_thresholds(&model, &spec, &x, &mut rng)?;
            let config = StepDownConfig::new(model.clone(), spec, thresholds)?;

            let mut local = GeometrySuiteReport::default();
            let y_base = model.y_coordinates(&x)?;
            for k in 0..n {
                let profile = scan_line(&config, &x, k, &grid, false)?;
                let refined = refine_boundaries(&config, &profile, opts.refine_factor)?;
                local.scans += 1;
                local.scan_points += refined.grid.len();

                let interval = check_interval(&refined);
                if !interval.pass {
                    local.interval_violations += interval.violation_positions.len();
                    local.failures.push(format!(
                        "instance {idx}: n={n} k={} interval violations at grid indices {:?}",
                        k + 1,
                        interval.violation_positions
                    ));
                }

                // y moves only in coordinate k along the line.
                let g = model.shift_direction(k)?.g;
                for &r in &refined.grid {
                    let y = model.y_coordinates(&(&x + &g * r))?;
                    for j in 0..n {
                        let want = if j == k { y_base[j] + r } else { y_base[j] };
                        let err = (y[j] - want).abs();
                        if err > local.y_consistency_max_error {
                            local.y_consistency_max_error = err;
                        }
                    }
                }

                for (r_accept, r_reject) in harvest_pairs(&refined) {
                    let x_accept = &x + &g * r_accept;
                    let x_reject = &x + &g * r_reject;
                    let path = check_rejection_path(&config, &x_accept, &x_reject, k)?;
                    local.pairs_checked += 1;
                    if !path.stop_ok {
                        local.stop_order_failures += 1;
                        local.failures.push(format!(
                            "instance {idx}: k={} r=({r_accept}, {r_reject}) t0={} > t={}",
                            k + 1,
                            path.rejection_stage,
                            path.stop_stage
                        ));
                    }
                    if !path.prefix_match {
                        local.prefix_match_failures += 1;
                        local.failures.push(format!(
                            "instance {idx}: k={} r=({r_accept}, {r_reject}) prefix mismatch",
                            k + 1
                        ));
                    }
                }
            }
            Ok(local)
        })
        .collect();

    let mut report = GeometrySuiteReport {
        instances: opts.instances,
        ..Default::default()
    };
    for outcome in outcomes {
        let local = outcome?;
        report.scans += local.scans;
        report.scan_points += local.scan_points;
        report.interval_violations += local.interval_violations;
        report.y_consistency_max_error = report
            .y_consistency_max_error
            .max(local.y_consistency_max_error);
        report.pairs_checked += local.pairs_checked;
        report.stop_order_failures += local.stop_order_failures;
        report.prefix_match_failures += local.prefix_match_failures;
        report.failures.extend(local.failures);
    }
    Ok(report)
}
