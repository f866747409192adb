//! One Monte-Carlo trial and the bookkeeping around many of them.
//!
//! Every trial generates a fresh slot from its own seed, runs the proposed
//! pipeline plus the reference policies on it, and reduces each to the same
//! small outcome record. Aggregation over trials is a plain sum in trial
//! order, so results do not depend on how the work was scheduled.

use mecmig::bandwidth::{self, BandwidthInstance};
use mecmig::integer_recovery::recover_integer;
use mecmig::model::{Assignment, Instance, ObjectiveBreakdown};
use mecmig::oracles::{baseline_no_migration, baseline_radio_oriented};
use mecmig::relaxed_solver::solve_p1_relaxed;
use mecmig::scenario::generate;
use mecmig::{Result, SolveReport};

use ndarray::Array2;

use crate::config::FileConfig;

/// The policies a sweep reports side by side. The variant order is the CSV
/// row order within one axis value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Scheme {
    NoMigration,
    Proposed,
    RadioOriented,
    UpperBound,
}

pub const ALL_SCHEMES: [Scheme; 4] =
    [Scheme::NoMigration, Scheme::Proposed, Scheme::RadioOriented, Scheme::UpperBound];

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::NoMigration => "no_migration",
            Scheme::Proposed => "proposed",
            Scheme::RadioOriented => "radio_oriented",
            Scheme::UpperBound => "upper_bound",
        }
    }
}

/// What one policy achieved on one trial.
#[derive(Debug, Clone, Copy)]
pub struct Outcome {
    pub utility: f64,
    pub sum_rate: f64,
    pub total_cost: f64,
    pub migrated_pct: f64,
    pub gap_to_ub: f64,
}

impl Outcome {
    fn from_breakdown(
        breakdown: &ObjectiveBreakdown,
        assignment: &Assignment,
        initial: &[usize],
        upper_bound: f64,
    ) -> Self {
        let migrated = assignment.migrated_from(initial);
        Self {
            utility: breakdown.utility,
            sum_rate: breakdown.sum_rate,
            total_cost: breakdown.total_cost,
            migrated_pct: 100.0 * migrated as f64 / assignment.n_users() as f64,
            gap_to_ub: SolveReport::relative_gap(upper_bound, breakdown.utility),
        }
    }
}

/// One trial's outcomes for every scheme, plus the full pipeline report for
/// callers that print it.
pub struct TrialResult {
    pub report: SolveReport,
    pub outcomes: [(Scheme, Outcome); 4],
}

fn pack(report: &SolveReport, baselines: [(Scheme, Outcome); 2]) -> [(Scheme, Outcome); 4] {
    let proposed = Outcome {
        utility: report.utility,
        sum_rate: report.sum_rate,
        total_cost: report.total_cost,
        migrated_pct: report.migrated_pct,
        gap_to_ub: report.gap_to_upper_bound,
    };
    // The bound is a value, not a placement; it borrows the proposed run's
    // decomposition so its row stays plottable alongside the others.
    let bound = Outcome { utility: report.upper_bound, gap_to_ub: 0.0, ..proposed };
    [
        baselines[0],
        (Scheme::Proposed, proposed),
        baselines[1],
        (Scheme::UpperBound, bound),
    ]
}

/// Full-band trial: shared-spectrum rates, relax, round, and score the
/// reference policies on the same instance.
pub fn run_trial(config: &FileConfig, seed: u64) -> Result<TrialResult> {
    let scenario = generate(&config.scenario, seed)?;
    let instance = &scenario.instance;
    let fractional = solve_p1_relaxed(instance, &config.solver)?;
    let (_assignment, report) = recover_integer(instance, &fractional)?;

    let baselines = [
        score_baseline(instance, baseline_no_migration(instance)?, report.upper_bound),
        score_baseline(instance, baseline_radio_oriented(instance)?, report.upper_bound),
    ];
    let outcomes = pack(&report, [
        (Scheme::NoMigration, baselines[0]),
        (Scheme::RadioOriented, baselines[1]),
    ]);
    Ok(TrialResult { report, outcomes })
}

fn score_baseline(
    instance: &Instance,
    (assignment, breakdown): (Assignment, ObjectiveBreakdown),
    upper_bound: f64,
) -> Outcome {
    Outcome::from_breakdown(&breakdown, &assignment, instance.initial_site(), upper_bound)
}

/// Per-site spectrum trial: the proposed pipeline optimizes the block split
/// jointly with the placement. The reference policies cannot reason about
/// splits, so they place against rates at an even per-user share and then
/// get scored under the best split for the placement they chose.
pub fn run_trial_rb(config: &FileConfig, seed: u64) -> Result<TrialResult> {
    let scenario = generate(&config.scenario, seed)?;
    let bw = BandwidthInstance::from_scenario(&scenario)?;
    let (fractional, _) = bandwidth::solve_bw_relaxed(&bw, &config.solver)?;
    let (_assignment, _allocation, report) = bandwidth::recover_bw_integer(&bw, &fractional)?;

    let k_users = bw.n_users();
    let even_share = Array2::from_shape_fn((k_users, bw.n_sites()), |(_, n)| {
        bw.rb_budget()[n] / k_users as f64
    });
    let placing = bw.with_rates(&even_share)?;
    let baselines = [
        score_baseline_rb(&bw, baseline_no_migration(&placing)?.0, report.upper_bound)?,
        score_baseline_rb(&bw, baseline_radio_oriented(&placing)?.0, report.upper_bound)?,
    ];
    let outcomes = pack(&report, [
        (Scheme::NoMigration, baselines[0]),
        (Scheme::RadioOriented, baselines[1]),
    ]);
    Ok(TrialResult { report, outcomes })
}

fn score_baseline_rb(
    bw: &BandwidthInstance,
    assignment: Assignment,
    upper_bound: f64,
) -> Result<Outcome> {
    let (breakdown, _) = bandwidth::evaluate_assignment(bw, &assignment)?;
    Ok(Outcome::from_breakdown(
        &breakdown,
        &assignment,
        bw.base().initial_site(),
        upper_bound,
    ))
}

/// Streaming mean/variance accumulator over trial outcomes.
#[derive(Debug, Clone, Copy, Default)]
pub struct Accumulator {
    n: usize,
    utility_sum: f64,
    utility_sumsq: f64,
    sum_rate_sum: f64,
    cost_sum: f64,
    migrated_sum: f64,
    gap_sum: f64,
}

impl Accumulator {
    pub fn push(&mut self, outcome: &Outcome) {
        self.n += 1;
        self.utility_sum += outcome.utility;
        self.utility_sumsq += outcome.utility * outcome.utility;
        self.sum_rate_sum += outcome.sum_rate;
        self.cost_sum += outcome.total_cost;
        self.migrated_sum += outcome.migrated_pct;
        self.gap_sum += outcome.gap_to_ub;
    }

    pub fn mean_utility(&self) -> f64 {
        self.utility_sum / self.n as f64
    }

    /// Standard error of the mean utility, zero for a single trial.
    pub fn stderr(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let var = ((self.utility_sumsq - self.utility_sum * self.utility_sum / n) / (n - 1.0))
            .max(0.0);
        (var / n).sqrt()
    }

    pub fn row(&self, axis_value: f64, scheme: Scheme) -> CsvRow {
        let n = self.n as f64;
        CsvRow {
            axis_value,
            scheme,
            mean_utility: self.mean_utility(),
            stderr: self.stderr(),
            mean_sum_rate: self.sum_rate_sum / n,
            mean_cost: self.cost_sum / n,
            mean_migrated_pct: self.migrated_sum / n,
            mean_gap_to_ub: self.gap_sum / n,
        }
    }
}

/// One emitted sweep row. Column set and order are part of the tool's
/// contract; downstream plots select from exactly these.
#[derive(Debug, Clone)]
pub struct CsvRow {
    pub axis_value: f64,
    pub scheme: Scheme,
    pub mean_utility: f64,
    pub stderr: f64,
    pub mean_sum_rate: f64,
    pub mean_cost: f64,
    pub mean_migrated_pct: f64,
    pub mean_gap_to_ub: f64,
}

pub const CSV_HEADER: [&str; 8] = [
    "axis_value",
    "scheme",
    "mean_utility",
    "stderr",
    "mean_sum_rate",
    "mean_cost",
    "mean_migrated_pct",
    "mean_gap_to_ub",
];

impl CsvRow {
    pub fn record(&self) -> [String; 8] {
        [
            self.axis_value.to_string(),
            self.scheme.name().to_string(),
            self.mean_utility.to_string(),
            self.stderr.to_string(),
            self.mean_sum_rate.to_string(),
            self.mean_cost.to_string(),
            self.mean_migrated_pct.to_string(),
            self.mean_gap_to_ub.to_string(),
        ]
    }
}
