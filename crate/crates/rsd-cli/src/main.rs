//! `rsd`: residual-based step-down multiple testing from the command line.
//!
//! Subcommands: `run` (apply a configured procedure to data rows),
//! `calibrate` (Monte Carlo thresholds for a target FWER), `risk`
//! (vector-risk sweeps with baseline comparisons), `scan` (acceptance-region
//! line scans) and `verify` (structural property suites).
//!
//! Exit codes: 0 success, 1 usage, 2 validation, 3 property violation.
//! `RSD_THREADS` caps the worker pool.

mod config;
mod records;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use nalgebra::DVector;

use rsd_core::calibrate::{calibrate_first_threshold, ProfileRule};
use rsd_core::procedure::{BaselineKind, Procedure};
use rsd_core::risk::{compare_dominance, default_theta_grid, estimate_risk};
use rsd_core::sim::derive_seed;
use rsd_core::stepdown::run_stepdown;
use rsd_core::verify::{
    check_interval, linspace, refine_boundaries, run_geometry_suite, run_shift_suite, scan_line,
    scan_line_with, SuiteOptions,
};

use config::{load_config, parse_csv_rows};
use records::*;

/// Errors carrying their exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Validation(String),
    Violation(String),
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    fn from_core(err: rsd_core::Error) -> Self {
        CliError::Validation(err.to_string())
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Violation(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Validation(m) | CliError::Violation(m) => m,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Validation(err.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "rsd",
    version,
    about = "Residual-based step-down multiple testing for Gaussian means under known covariance"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured procedure on each observation row of a data file.
    Run {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Calibrate the first threshold to a target family-wise error rate.
    Calibrate {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        reps: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Estimate vector risks over a theta grid and compare procedures.
    Risk {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        #[arg(long, value_name = "PATH")]
        theta_grid: Option<PathBuf>,
        #[arg(long)]
        reps: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated list from {bonferroni, holm, bh}.
        #[arg(long, default_value = "")]
        baselines: String,
        /// Level for the p-value baselines.
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Scan one coordinate's decision along x + r g_k and check the
    /// interval property.
    Scan {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Base observation, comma-separated.
        #[arg(long, value_name = "X_CSV", allow_hyphen_values = true)]
        base: String,
        /// 1-based coordinate to scan.
        #[arg(long)]
        coordinate: usize,
        /// MIN:MAX:POINTS
        #[arg(long, value_name = "SPEC", allow_hyphen_values = true)]
        grid: String,
        /// "stepdown" (primary channel) or a baseline name (demo channel).
        #[arg(long, default_value = "stepdown")]
        procedure: String,
        /// Level for baseline procedures.
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Run structural property suites on random instances.
    Verify {
        /// One of {shift, interval, path, all}.
        #[arg(long)]
        suite: String,
        #[arg(long)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    if let Err(e) = configure_threads() {
        eprintln!("error: {}", e.message());
        return ExitCode::from(e.code());
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(raw) = std::env::var("RSD_THREADS") {
        let threads: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|&t| t >= 1)
            .ok_or_else(|| {
                CliError::validation(format!("RSD_THREADS must be a positive integer, got {raw:?}"))
            })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::validation(format!("cannot build thread pool: {e}")))?;
    }
    Ok(())
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { config, data, out } => cmd_run(&config, &data, &out),
        Command::Calibrate {
            config,
            alpha,
            reps,
            seed,
            out,
        } => cmd_calibrate(&config, alpha, reps, seed, &out),
        Command::Risk {
            config,
            theta_grid,
            reps,
            seed,
            baselines,
            alpha,
            out,
        } => cmd_risk(&config, theta_grid.as_deref(), reps, seed, &baselines, alpha, &out),
        Command::Scan {
            config,
            base,
            coordinate,
            grid,
            procedure,
            alpha,
            out,
        } => cmd_scan(&config, &base, coordinate, &grid, &procedure, alpha, &out),
        Command::Verify {
            suite,
            instances,
            seed,
            out,
        } => cmd_verify(&suite, instances, seed, &out),
    }
}

fn open_out(path: &std::path::Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::validation(format!("cannot create {}: {e}", path.display())))
}

fn parse_vector(text: &str, n: usize, what: &str) -> Result<DVector<f64>, CliError> {
    let values: Vec<f64> = text
        .split(',')
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|_| CliError::validation(format!("{what}: cannot parse {f:?} as a number")))
        })
        .collect::<Result<_, _>>()?;
    if values.len() != n {
        return Err(CliError::validation(format!(
            "{what}: expected {n} values, got {}",
            values.len()
        )));
    }
    Ok(DVector::from_vec(values))
}

fn cmd_run(
    config_path: &std::path::Path,
    data_path: &std::path::Path,
    out_path: &std::path::Path,
) -> Result<(), CliError> {
    let loaded = load_config(config_path)?;
    let n = loaded.config.n();
    let text = std::fs::read_to_string(data_path)
        .map_err(|e| CliError::validation(format!("cannot read data {}: {e}", data_path.display())))?;
    let rows = parse_csv_rows(&text, "data")?;

    let mut out = open_out(out_path)?;
    if let Some(calibration) = &loaded.calibration {
        write_record(&mut out, &CalibrationRecord::new(calibration))?;
    }
    let mut emitted = 0usize;
    for (row_index, (lineno, values)) in rows.iter().enumerate() {
        if values.len() != n {
            return Err(CliError::validation(format!(
                "data line {lineno}: expected {n} values, got {}",
                values.len()
            )));
        }
        let x = DVector::from_vec(values.clone());
        let traj = run_stepdown(&loaded.config, &x).map_err(CliError::from_core)?;
        write_record(&mut out, &DecisionRecord::from_trajectory(row_index + 1, &traj))?;
        for rec in StageRecordOut::from_trajectory(row_index + 1, &traj) {
            write_record(&mut out, &rec)?;
        }
        emitted += 1;
    }
    out.flush()?;
    println!("processed {emitted} rows -> {}", out_path.display());
    Ok(())
}

fn cmd_calibrate(
    config_path: &std::path::Path,
    alpha: f64,
    reps: usize,
    seed: Option<u64>,
    out_path: &std::path::Path,
) -> Result<(), CliError> {
    let loaded = load_config(config_path)?;
    let seed = seed.unwrap_or(loaded.seed);
    let result = calibrate_first_threshold(
        &loaded.model,
        &loaded.config.transform,
        alpha,
        reps,
        seed,
        &ProfileRule::Constant,
    )
    .map_err(CliError::from_core)?;

    let mut out = open_out(out_path)?;
    write_record(&mut out, &CalibrationRecord::new(&result))?;
    out.flush()?;
    println!(
        "C1 = {:.6}, achieved FWER = {:.4} +/- {:.4} -> {}",
        result.thresholds.values()[0],
        result.achieved_fwer,
        result.mc_stderr,
        out_path.display()
    );
    Ok(())
}

fn parse_baselines(list: &str) -> Result<Vec<BaselineKind>, CliError> {
    let mut kinds = Vec::new();
    for name in list.split(',').filter(|s| !s.trim().is_empty()) {
        let kind = BaselineKind::parse(name)
            .ok_or_else(|| CliError::validation(format!("unknown baseline {name:?}")))?;
        kinds.push(kind);
    }
    Ok(kinds)
}

fn cmd_risk(
    config_path: &std::path::Path,
    grid_path: Option<&std::path::Path>,
    reps: usize,
    seed: Option<u64>,
    baselines: &str,
    alpha: f64,
    out_path: &std::path::Path,
) -> Result<(), CliError> {
    let loaded = load_config(config_path)?;
    let n = loaded.config.n();
    let seed = seed.unwrap_or(loaded.seed);

    let grid: Vec<DVector<f64>> = match grid_path {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::validation(format!("cannot read theta grid {}: {e}", path.display()))
            })?;
            let rows = parse_csv_rows(&text, "theta grid")?;
            if rows.is_empty() {
                return Err(CliError::validation("theta grid file contains no rows"));
            }
            rows.into_iter()
                .map(|(lineno, values)| {
                    if values.len() != n {
                        Err(CliError::validation(format!(
                            "theta grid line {lineno}: expected {n} values, got {}",
                            values.len()
                        )))
                    } else {
                        Ok(DVector::from_vec(values))
                    }
                })
                .collect::<Result<_, _>>()?
        }
        None => default_theta_grid(n).map_err(CliError::from_core)?,
    };

    let mut procedures: Vec<Procedure> = vec![Procedure::StepDown(loaded.config.clone())];
    for kind in parse_baselines(baselines)? {
        procedures.push(Procedure::Baseline {
            model: Arc::clone(&loaded.model),
            kind,
            alpha,
        });
    }

    let mut out = open_out(out_path)?;
    let mut estimates: Vec<Vec<rsd_core::risk::RiskEstimate>> =
        vec![Vec::with_capacity(grid.len()); procedures.len()];
    for (gi, theta) in grid.iter().enumerate() {
        let point_seed = derive_seed(seed, gi as u64);
        for (pi, procedure) in procedures.iter().enumerate() {
            let est = estimate_risk(procedure, &loaded.model, theta, reps, point_seed)
                .map_err(CliError::from_core)?;
            write_record(&mut out, &RiskRecord::new(&procedure.label(), &est))?;
            estimates[pi].push(est);
        }
    }

    let mut improved = false;
    for pi in 1..procedures.len() {
        let report = compare_dominance(&estimates[0], &estimates[pi]).map_err(CliError::from_core)?;
        improved |= report.verdict == rsd_core::risk::DominanceVerdict::BDominates;
        write_record(
            &mut out,
            &DominanceRecord::new(&procedures[0].label(), &procedures[pi].label(), &report),
        )?;
    }
    out.flush()?;
    println!(
        "{} grid points x {} procedures -> {}",
        grid.len(),
        procedures.len(),
        out_path.display()
    );
    if procedures.len() > 1 {
        // The screen cannot prove anything; it can only fail to find a
        // dominating competitor.
        if improved {
            println!("a baseline empirically dominated the step-down procedure on this grid");
        } else {
            println!("no empirical improvement found over the step-down procedure on this grid");
        }
    }
    Ok(())
}

fn parse_grid_spec(spec: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::validation(format!(
            "grid spec must be MIN:MAX:POINTS, got {spec:?}"
        )));
    }
    let min: f64 = parts[0]
        .trim()
        .parse()
        .map_err(|_| CliError::validation(format!("bad grid MIN {:?}", parts[0])))?;
    let max: f64 = parts[1]
        .trim()
        .parse()
        .map_err(|_| CliError::validation(format!("bad grid MAX {:?}", parts[1])))?;
    let points: usize = parts[2]
        .trim()
        .parse()
        .map_err(|_| CliError::validation(format!("bad grid POINTS {:?}", parts[2])))?;
    linspace(min, max, points).map_err(CliError::from_core)
}

fn cmd_scan(
    config_path: &std::path::Path,
    base: &str,
    coordinate: usize,
    grid_spec: &str,
    procedure: &str,
    alpha: f64,
    out_path: &std::path::Path,
) -> Result<(), CliError> {
    let loaded = load_config(config_path)?;
    let n = loaded.config.n();
    let x = parse_vector(base, n, "base point")?;
    if coordinate == 0 || coordinate > n {
        return Err(CliError::validation(format!(
            "coordinate must be in 1..={n}, got {coordinate}"
        )));
    }
    let k = coordinate - 1;
    let grid = parse_grid_spec(grid_spec)?;

    let (profile, primary) = match procedure {
        "stepdown" => {
            let raw = scan_line(&loaded.config, &x, k, &grid, false).map_err(CliError::from_core)?;
            let refined =
                refine_boundaries(&loaded.config, &raw, 10).map_err(CliError::from_core)?;
            (refined, true)
        }
        name => {
            let kind = BaselineKind::parse(name).ok_or_else(|| {
                CliError::validation(format!(
                    "procedure must be \"stepdown\" or a baseline name, got {name:?}"
                ))
            })?;
            let model = Arc::clone(&loaded.model);
            let profile = scan_line_with(&loaded.model, &x, k, &grid, |p| {
                rsd_core::run_baseline(kind, &model, p, alpha)
            })
            .map_err(CliError::from_core)?;
            (profile, false)
        }
    };

    let report = check_interval(&profile);
    let mut out = open_out(out_path)?;
    for rec in ScanPointRecord::from_profile(&profile) {
        write_record(&mut out, &rec)?;
    }
    write_record(&mut out, &IntervalReportRecord::new(coordinate, &report))?;
    out.flush()?;

    println!(
        "{} scan points, interval {} -> {}",
        profile.grid.len(),
        if report.pass { "PASS" } else { "VIOLATED" },
        out_path.display()
    );
    if primary && !report.pass {
        return Err(CliError::Violation(format!(
            "interval property violated at grid indices {:?}",
            report.violation_positions
        )));
    }
    Ok(())
}

fn cmd_verify(
    suite: &str,
    instances: usize,
    seed: u64,
    out_path: &std::path::Path,
) -> Result<(), CliError> {
    if instances == 0 {
        return Err(CliError::usage("--instances must be at least 1"));
    }
    let known = ["shift", "interval", "path", "all"];
    if !known.contains(&suite) {
        return Err(CliError::usage(format!(
            "--suite must be one of {known:?}, got {suite:?}"
        )));
    }

    let mut out = open_out(out_path)?;
    let mut all_pass = true;

    if suite == "shift" || suite == "all" {
        let mut opts = SuiteOptions::new(instances, seed);
        opts.n_max = 10;
        let report = run_shift_suite(&opts).map_err(CliError::from_core)?;
        write_record(&mut out, &SuiteSummaryRecord::shift(&report))?;
        println!(
            "suite shift: {} (max on-coordinate {:.3e}, max off-coordinate {:.3e})",
            if report.pass() { "PASS" } else { "FAIL" },
            report.max_on_coordinate_error,
            report.max_off_coordinate_drift
        );
        all_pass &= report.pass();
    }

    if suite == "interval" || suite == "path" || suite == "all" {
        let opts = SuiteOptions::new(instances, seed);
        let report = run_geometry_suite(&opts).map_err(CliError::from_core)?;
        if suite == "interval" || suite == "all" {
            write_record(
                &mut out,
                &SuiteSummaryRecord::geometry("interval", &report, report.interval_pass()),
            )?;
            println!(
                "suite interval: {} ({} scans, {} violations)",
                if report.interval_pass() { "PASS" } else { "FAIL" },
                report.scans,
                report.interval_violations
            );
            all_pass &= report.interval_pass();
        }
        if suite == "path" || suite == "all" {
            write_record(
                &mut out,
                &SuiteSummaryRecord::geometry("path", &report, report.path_pass()),
            )?;
            println!(
                "suite path: {} ({} pairs, {} stop-order failures, {} prefix failures)",
                if report.path_pass() { "PASS" } else { "FAIL" },
                report.pairs_checked,
                report.stop_order_failures,
                report.prefix_match_failures
            );
            all_pass &= report.path_pass();
        }
    }

    out.flush()?;
    if all_pass {
        Ok(())
    } else {
        Err(CliError::Violation(
            "one or more property suites reported violations".into(),
        ))
    }
}
