//! The four subcommand bodies. Flag parsing lives in `main`; everything
//! here takes already-validated arguments.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use mecmig::hotspot::solve_p4;
use mecmig::integer_recovery::recover_integer;
use mecmig::oracles::exhaustive_p1;
use mecmig::relaxed_solver::solve_p1_relaxed;
use mecmig::scenario::generate;
use mecmig::SolveReport;

use crate::config::{load_config, FileConfig};
use crate::run::{
    run_trial, run_trial_rb, Accumulator, CsvRow, TrialResult, ALL_SCHEMES, CSV_HEADER,
};
use crate::{Axis, CliError};

fn write_csv<const W: usize>(
    header: [&str; W],
    records: &[[String; W]],
    out: Option<&Path>,
) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(header)
        .and_then(|()| records.iter().try_for_each(|r| writer.write_record(r)))
        .map_err(|e| CliError::Usage(format!("csv error: {e}")))?;
    let bytes = writer
        .into_inner()
        .map_err(|e| CliError::Usage(format!("csv error: {e}")))?;
    match out {
        Some(path) => fs::write(path, bytes)
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display()))),
        None => io::stdout()
            .write_all(&bytes)
            .map_err(|e| CliError::Usage(format!("cannot write csv to stdout: {e}"))),
    }
}

fn check_convergence(report: &SolveReport, allow: bool, context: &str) -> Result<(), CliError> {
    if report.converged || allow {
        return Ok(());
    }
    Err(CliError::NonConvergence(format!(
        "{context}: residual {:.3e}, duality gap {:.3e}, load mismatch {:.3e}; \
         rerun with --allow-nonconverged to keep going",
        report.residual, report.duality_gap, report.constraint_violation
    )))
}

pub struct SolveOpts {
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub lambda: Option<f64>,
    pub out: Option<PathBuf>,
    pub allow_nonconverged: bool,
    pub oracle: bool,
}

pub fn cmd_solve(opts: &SolveOpts) -> Result<(), CliError> {
    let mut config = load_config(opts.config.as_deref())?;
    if let Some(lambda) = opts.lambda {
        config.scenario.cost_weight = lambda;
    }
    let trial = run_trial(&config, opts.seed)?;
    let report = &trial.report;

    println!(
        "instance: {} users, {} sites, seed {}",
        config.scenario.n_users, config.scenario.n_sites, opts.seed
    );
    println!("utility: {:.6}", report.utility);
    println!("  sum rate:       {:.6}", report.sum_rate);
    println!(
        "  migration cost: {:.6} (weight {}, contributes {:.6})",
        report.total_cost,
        config.scenario.cost_weight,
        config.scenario.cost_weight * report.total_cost
    );
    println!(
        "upper bound: {:.6} (gap {:.3e})",
        report.upper_bound, report.gap_to_upper_bound
    );
    println!(
        "iterations: {} outer, {} inner",
        report.outer_iterations, report.inner_iterations
    );
    println!(
        "residual {:.3e}, duality gap {:.3e}, load mismatch {:.3e}",
        report.residual, report.duality_gap, report.constraint_violation
    );
    println!(
        "migrated: {} of {} users ({:.1}%)",
        report.migrated_users, config.scenario.n_users, report.migrated_pct
    );
    println!("converged: {}", report.converged);

    if opts.oracle {
        let scenario = generate(&config.scenario, opts.seed)?;
        let (_, best) = exhaustive_p1(&scenario.instance)?;
        println!(
            "exhaustive: {:.6} (gap vs exhaustive {:.3e})",
            best.utility,
            SolveReport::relative_gap(best.utility, report.utility)
        );
    }

    if opts.out.is_some() {
        let axis_value = config.scenario.n_users as f64;
        let rows: Vec<[String; 8]> = trial
            .outcomes
            .iter()
            .map(|(scheme, outcome)| {
                let mut acc = Accumulator::default();
                acc.push(outcome);
                acc.row(axis_value, *scheme).record()
            })
            .collect();
        write_csv(CSV_HEADER, &rows, opts.out.as_deref())?;
    }

    check_convergence(report, opts.allow_nonconverged, "solve")
}

pub struct SweepOpts {
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub lambda: Option<f64>,
    pub axis: Axis,
    pub values: Vec<f64>,
    pub trials: Option<usize>,
    pub out: Option<PathBuf>,
    pub allow_nonconverged: bool,
}

fn apply_axis(config: &FileConfig, axis: Axis, value: f64) -> Result<FileConfig, CliError> {
    let mut point = config.clone();
    match axis {
        Axis::Users | Axis::UsersRb => {
            let rounded = value.round();
            if !value.is_finite() || (value - rounded).abs() > 1e-9 || rounded < 1.0 {
                return Err(CliError::Usage(format!(
                    "axis value {value} is not a positive whole user count"
                )));
            }
            point.scenario.n_users = rounded as usize;
        }
        Axis::Degradation => point.scenario.degradation = value,
        Axis::Vmax => point.scenario.v_max_m_s = value,
        Axis::Lambda => point.scenario.cost_weight = value,
    }
    Ok(point)
}

/// Runs `trials` seeded trials at one axis point and folds the outcomes, in
/// trial order, into one accumulator per scheme.
fn sweep_point(
    config: &FileConfig,
    axis: Axis,
    seed: u64,
    trials: usize,
    allow_nonconverged: bool,
    value: f64,
) -> Result<Vec<CsvRow>, CliError> {
    let point = apply_axis(config, axis, value)?;
    let results: Vec<mecmig::Result<TrialResult>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let trial_seed = seed + t as u64;
            if axis == Axis::UsersRb {
                run_trial_rb(&point, trial_seed)
            } else {
                run_trial(&point, trial_seed)
            }
        })
        .collect();

    let mut accs: [Accumulator; 4] = Default::default();
    for (t, result) in results.into_iter().enumerate() {
        let trial = result?;
        check_convergence(
            &trial.report,
            allow_nonconverged,
            &format!("axis value {value}, trial {t}"),
        )?;
        for (scheme, outcome) in &trial.outcomes {
            accs[ALL_SCHEMES.iter().position(|s| s == scheme).expect("known scheme")]
                .push(outcome);
        }
    }
    Ok(ALL_SCHEMES.iter().zip(accs).map(|(scheme, acc)| acc.row(value, *scheme)).collect())
}

pub fn cmd_sweep(opts: &SweepOpts) -> Result<(), CliError> {
    if opts.values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one --values entry".into()));
    }
    let mut config = load_config(opts.config.as_deref())?;
    if let Some(lambda) = opts.lambda {
        config.scenario.cost_weight = lambda;
    }
    let trials = opts.trials.unwrap_or(config.scenario.trials).max(1);

    let mut rows = Vec::with_capacity(opts.values.len() * ALL_SCHEMES.len());
    for &value in &opts.values {
        rows.extend(sweep_point(
            &config,
            opts.axis,
            opts.seed,
            trials,
            opts.allow_nonconverged,
            value,
        )?);
    }
    rows.sort_by(|a, b| {
        a.axis_value
            .total_cmp(&b.axis_value)
            .then_with(|| a.scheme.cmp(&b.scheme))
    });
    let records: Vec<[String; 8]> = rows.iter().map(CsvRow::record).collect();
    write_csv(CSV_HEADER, &records, opts.out.as_deref())
}

pub struct HotspotOpts {
    pub config: Option<PathBuf>,
    pub lambda: Option<f64>,
    pub k_min: u32,
    pub k_max: Option<u32>,
    pub out: Option<PathBuf>,
}

pub const HOTSPOT_HEADER: [&str; 6] =
    ["k", "utility", "regime", "k_star", "loads", "one_sided_peaks"];

pub fn cmd_hotspot(opts: &HotspotOpts) -> Result<(), CliError> {
    let mut config = load_config(opts.config.as_deref())?;
    if let Some(lambda) = opts.lambda {
        config.hotspot.cost_weight = lambda;
    }
    if opts.k_min == 0 {
        return Err(CliError::Usage("--k-min must be at least 1".into()));
    }
    let probe = config.hotspot.instance(opts.k_min)?;
    // Default range: from k_min up to twice the utility peak, which spans
    // every regime the solver distinguishes.
    let k_max = opts.k_max.unwrap_or((2.0 * probe.k_star()).ceil() as u32);
    if k_max < opts.k_min {
        return Err(CliError::Usage(format!(
            "empty population range {}..={k_max}",
            opts.k_min
        )));
    }
    let peaks: Vec<String> = (0..probe.n_sites())
        .map(|n| probe.one_sided_load(n).to_string())
        .collect();
    let peaks = peaks.join("|");

    let mut records = Vec::with_capacity((k_max - opts.k_min + 1) as usize);
    for k in opts.k_min..=k_max {
        let instance = config.hotspot.instance(k)?;
        let solve = solve_p4(&instance)?;
        let loads: Vec<String> = solve.loads.iter().map(u32::to_string).collect();
        records.push([
            k.to_string(),
            solve.objective.to_string(),
            solve.regime.to_string(),
            solve.k_star.to_string(),
            loads.join("|"),
            peaks.clone(),
        ]);
    }
    write_csv(HOTSPOT_HEADER, &records, opts.out.as_deref())
}

pub struct OracleOpts {
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub lambda: Option<f64>,
    pub trials: Option<usize>,
    pub out: Option<PathBuf>,
}

pub const ORACLE_HEADER: [&str; 5] =
    ["trial", "proposed", "exhaustive", "rel_gap", "upper_bound"];

pub fn cmd_oracle(opts: &OracleOpts) -> Result<(), CliError> {
    let mut config = load_config(opts.config.as_deref())?;
    if let Some(lambda) = opts.lambda {
        config.scenario.cost_weight = lambda;
    }
    let trials = opts.trials.unwrap_or(config.scenario.trials).max(1);

    let results: Vec<mecmig::Result<(SolveReport, f64)>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let scenario = generate(&config.scenario, opts.seed + t as u64)?;
            let fractional = solve_p1_relaxed(&scenario.instance, &config.solver)?;
            let (_, report) = recover_integer(&scenario.instance, &fractional)?;
            let (_, best) = exhaustive_p1(&scenario.instance)?;
            Ok((report, best.utility))
        })
        .collect();

    let mut records = Vec::with_capacity(trials);
    let mut exact = 0usize;
    let mut worst_gap = 0.0f64;
    let mut bound_held = true;
    for (t, result) in results.into_iter().enumerate() {
        let (report, oracle) = result?;
        let gap = SolveReport::relative_gap(oracle, report.utility);
        if gap <= 1e-6 {
            exact += 1;
        }
        worst_gap = worst_gap.max(gap);
        bound_held &= oracle <= report.upper_bound * (1.0 + 1e-9) + 1e-12;
        records.push([
            t.to_string(),
            report.utility.to_string(),
            oracle.to_string(),
            gap.to_string(),
            report.upper_bound.to_string(),
        ]);
    }

    println!(
        "{trials} trials: {exact} within 1e-6 of exhaustive, worst gap {worst_gap:.3e}, \
         bound held: {bound_held}"
    );
    if opts.out.is_some() {
        write_csv(ORACLE_HEADER, &records, opts.out.as_deref())?;
    }
    if bound_held {
        Ok(())
    } else {
        Err(CliError::NonConvergence(
            "relaxation bound fell below the exhaustive optimum".into(),
        ))
    }
}
